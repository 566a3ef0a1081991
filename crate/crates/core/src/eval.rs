//! Exact expected gains of FPL and IFPL, Monte Carlo replays, and machine
//! checks of the performance bounds.
//!
//! Expectations are exact: at every step the probability of following
//! Expert 1 comes from the closed-form comparison probability, so the expected
//! one-step gain is `s1 * p + s2 * (1 - p)` with no sampling involved.
//!
//! Zero-sum games are evaluated in place. The adaptive and infeasible rates
//! scale a zero-sum state by the leader of its lifted game (see
//! [`CumulativeState::rate_scale`]), so the probabilities coincide with the ones
//! the lifted game produces and `l~_{1:t} = l_{1:t} + V_t` holds exactly.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_open_unit, Error, Result};
use crate::gains::{CumulativeState, GainSequence, GameMode};
use crate::perturbation::ExpSampler;
use crate::policy::{Policy, RateKind, RateSchedule};

/// Relative tolerance for inequalities evaluated in exact (floating) arithmetic.
pub const EXACT_TOLERANCE: f64 = 1e-9;

/// Expected outcome of one step under some policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedStep {
    pub t: usize,
    pub prob1: f64,
    pub gain: f64,
    pub cumulative: f64,
}

/// Exact expected gains of `policy` on `gains`. Oracle policies receive each
/// step's gains as their explicit extra input.
pub fn expected_gains(policy: &Policy, gains: &GainSequence) -> Result<Vec<ExpectedStep>> {
    let mut out = Vec::with_capacity(gains.len());
    let mut cumulative = 0.0;
    for (i, &[s1, s2]) in gains.steps().iter().enumerate() {
        let oracle = policy.needs_oracle().then_some((s1, s2));
        let prob1 = policy.decide_prob(&gains.state(i), oracle)?;
        let gain = s1 * prob1 + s2 * (1.0 - prob1);
        cumulative += gain;
        out.push(ExpectedStep {
            t: i + 1,
            prob1,
            gain,
            cumulative,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub l: f64,
    pub r: f64,
    #[serde(rename = "cuml")]
    pub cum_l: f64,
    #[serde(rename = "cumr")]
    pub cum_r: f64,
    pub prob1_fpl: f64,
    pub prob1_ifpl: f64,
}

/// Per-step exact expected gains `l_t` (FPL) and `r_t` (IFPL).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalTrace {
    pub mode: GameMode,
    pub mu: f64,
    pub fpl_rate: RateKind,
    pub steps: Vec<TraceStep>,
}

impl EvalTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_l(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cum_l)
    }

    pub fn total_r(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cum_r)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "l", "r", "cuml", "cumr", "prob1_fpl", "prob1_ifpl"])?;
        for s in &self.steps {
            w.write_record([
                s.t.to_string(),
                s.l.to_string(),
                s.r.to_string(),
                s.cum_l.to_string(),
                s.cum_r.to_string(),
                s.prob1_fpl.to_string(),
                s.prob1_ifpl.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace CSV. The file carries no metadata, so the caller states
    /// the game mode, `mu` and FPL rate it was produced with.
    pub fn read_csv<R: Read>(
        input: R,
        mode: GameMode,
        mu: f64,
        fpl_rate: RateKind,
    ) -> Result<EvalTrace> {
        ensure_open_unit("mu", mu)?;
        let mut steps = Vec::new();
        let (mut cl, mut cr) = (0.0, 0.0);
        for (i, row) in csv::Reader::from_reader(input).deserialize::<TraceStep>().enumerate() {
            let row = row?;
            cl += row.l;
            cr += row.r;
            let consistent = |have: f64, want: f64| (have - want).abs() <= 1e-9 * want.abs().max(1.0);
            if row.t != i + 1 || !consistent(row.cum_l, cl) || !consistent(row.cum_r, cr) {
                return Err(Error::Parse {
                    input: format!("trace row {}", i + 1),
                    reason: "step index or cumulative columns are inconsistent".into(),
                });
            }
            steps.push(row);
        }
        Ok(EvalTrace {
            mode,
            mu,
            fpl_rate,
            steps,
        })
    }
}

/// FPL with the adaptive-max rate against IFPL with the infeasible rate.
pub fn exact_trace(gains: &GainSequence, mu: f64) -> Result<EvalTrace> {
    exact_trace_with(gains, RateSchedule::adaptive_max(mu)?)
}

/// Like [`exact_trace`] with an explicit FPL schedule; IFPL always uses the
/// infeasible rate with the same `mu`.
pub fn exact_trace_with(gains: &GainSequence, fpl_schedule: RateSchedule) -> Result<EvalTrace> {
    let fpl = Policy::fpl_with(fpl_schedule)?;
    let ifpl = Policy::ifpl(fpl_schedule.mu())?;
    let fpl_steps = expected_gains(&fpl, gains)?;
    let ifpl_steps = expected_gains(&ifpl, gains)?;
    let steps = fpl_steps
        .iter()
        .zip(&ifpl_steps)
        .map(|(f, i)| TraceStep {
            t: f.t,
            l: f.gain,
            r: i.gain,
            cum_l: f.cumulative,
            cum_r: i.cumulative,
            prob1_fpl: f.prob1,
            prob1_ifpl: i.prob1,
        })
        .collect();
    Ok(EvalTrace {
        mode: gains.mode(),
        mu: fpl_schedule.mu(),
        fpl_rate: fpl_schedule.kind(),
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub replicas: usize,
}

impl McEstimate {
    /// `|mean - value|` in standard errors; infinite when the estimate has no
    /// spread but misses `value`.
    pub fn z_score(&self, value: f64) -> f64 {
        let diff = (self.mean - value).abs();
        if diff <= EXACT_TOLERANCE * value.abs().max(1.0) {
            0.0
        } else {
            diff / self.std_err
        }
    }
}

/// Mean realized cumulative gain over independent replays of sampled choices.
/// Replica `k` draws from stream `k` of `seed`; results are merged in replica
/// order so the estimate does not depend on thread scheduling.
pub fn monte_carlo_trace(
    gains: &GainSequence,
    policy: &Policy,
    replicas: usize,
    seed: u64,
) -> Result<McEstimate> {
    if replicas == 0 {
        return Err(Error::InvalidParameter {
            name: "replicas",
            value: 0.0,
            expected: "[1, inf)",
        });
    }
    let totals = (0..replicas)
        .into_par_iter()
        .map(|k| {
            let mut sampler = ExpSampler::new(seed, k as u64);
            let mut total = 0.0;
            for (i, &[s1, s2]) in gains.steps().iter().enumerate() {
                let oracle = policy.needs_oracle().then_some((s1, s2));
                let choice = policy.sample_choice(&gains.state(i), oracle, &mut sampler)?;
                total += choice.pick([s1, s2]);
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = totals.len() as f64;
    let mean = totals.iter().sum::<f64>() / n;
    let var = if replicas > 1 {
        totals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        std_err: (var / n).sqrt(),
        replicas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundName {
    Thm2General,
    Thm2Lowdev,
    Thm3Step,
    Thm3StepLowdev,
    Cor1,
    Thm4,
    Cor2,
    Thm6General,
    Thm6Lowdev,
    Remark,
    Triv1,
}

impl BoundName {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundName::Thm2General => "thm2-general",
            BoundName::Thm2Lowdev => "thm2-lowdev",
            BoundName::Thm3Step => "thm3-step",
            BoundName::Thm3StepLowdev => "thm3-step-lowdev",
            BoundName::Cor1 => "cor1",
            BoundName::Thm4 => "thm4",
            BoundName::Cor2 => "cor2",
            BoundName::Thm6General => "thm6-general",
            BoundName::Thm6Lowdev => "thm6-lowdev",
            BoundName::Remark => "remark",
            BoundName::Triv1 => "triv1",
        }
    }
}

/// Outcome of one inequality `lhs >= rhs` checked over a set of steps.
///
/// `at`, `lhs` and `rhs` describe the step with the least relative slack.
/// Inequalities claimed only for sufficiently large horizons are checked over
/// the final quartile; `transition` is the first checked step from which the
/// inequality holds through the end of the trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub name: BoundName,
    #[serde(rename = "T_or_t")]
    pub at: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
    pub applicable: bool,
    pub tolerance: f64,
    pub checked: usize,
    pub violations: usize,
    pub transition: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl BoundCheck {
    fn not_applicable(name: BoundName, note: String) -> Self {
        BoundCheck {
            name,
            at: 0,
            lhs: 0.0,
            rhs: 0.0,
            ok: true,
            applicable: false,
            tolerance: EXACT_TOLERANCE,
            checked: 0,
            violations: 0,
            transition: None,
            note: Some(note),
        }
    }

    /// Checks `lhs(t) >= rhs(t)` at each `t` in `at`.
    fn over<I, F>(name: BoundName, at: I, f: F) -> Self
    where
        I: IntoIterator<Item = usize>,
        F: Fn(usize) -> (f64, f64),
    {
        let tol = EXACT_TOLERANCE;
        let mut worst: Option<(f64, usize, f64, f64)> = None;
        let mut checked = 0;
        let mut violations = 0;
        let mut transition = None;
        for t in at {
            let (lhs, rhs) = f(t);
            let scale = rhs.abs().max(1.0);
            let ok = lhs >= rhs - tol * scale;
            let slack = (lhs - rhs) / scale;
            checked += 1;
            if ok {
                transition.get_or_insert(t);
            } else {
                violations += 1;
                transition = None;
            }
            if worst.is_none_or(|(w, ..)| slack < w) {
                worst = Some((slack, t, lhs, rhs));
            }
        }
        let (_, at, lhs, rhs) = worst.unwrap_or((0.0, 0, 0.0, 0.0));
        BoundCheck {
            name,
            at,
            lhs,
            rhs,
            ok: violations == 0,
            applicable: true,
            tolerance: tol,
            checked,
            violations,
            transition,
            note: None,
        }
    }
}

/// True when every applicable check passed.
pub fn all_pass(checks: &[BoundCheck]) -> bool {
    checks.iter().all(|c| c.ok || !c.applicable)
}

/// First step of the final quartile of a horizon `n` (at least one step).
pub fn final_quartile_start(n: usize) -> usize {
    if n == 0 { 1 } else { n + 1 - (n / 4).max(1) }
}

/// Evaluates every bound that applies to `trace` on `gains`.
///
/// Nonnegative games get the one-hot battery directly. Zero-sum games get it on
/// the lifted game (`l~_t = l_t + |s1_t|`, leader `|s1_{1:t}| + V_t`) plus the
/// zero-sum bounds on the original gains. Deviation-conditional bounds need
/// `delta`; when the deviation hypothesis fails over the checked window they
/// are reported as not applicable.
pub fn check_bounds(
    trace: &EvalTrace,
    gains: &GainSequence,
    delta: Option<f64>,
) -> Result<Vec<BoundCheck>> {
    if trace.len() != gains.len() || trace.mode != gains.mode() {
        return Err(Error::Unsupported(format!(
            "trace ({} steps, {}) does not belong to game ({} steps, {})",
            trace.len(),
            trace.mode,
            gains.len(),
            gains.mode()
        )));
    }
    if let Some(d) = delta {
        ensure_open_unit("delta", d)?;
    }

    let n = gains.len();
    let mu = trace.mu;
    let zero_sum = gains.mode() == GameMode::ZeroSum;
    let lifted = if zero_sum {
        Some(gains.zero_sum_lift()?)
    } else {
        None
    };
    let view = lifted.as_ref().unwrap_or(gains);
    let state = |t: usize| gains.state(t);
    let shift = |t: usize| if zero_sum { gains.steps()[t - 1][0].abs() } else { 0.0 };
    let volume = |t: usize| if zero_sum { state(t).volume } else { 0.0 };
    let l = |t: usize| trace.steps[t - 1].l + shift(t);
    let r = |t: usize| trace.steps[t - 1].r + shift(t);
    let cum_l = |t: usize| trace.steps[t - 1].cum_l + volume(t);
    let cum_r = |t: usize| trace.steps[t - 1].cum_r + volume(t);
    let leader = |t: usize| view.state(t).v;
    let decay = (-2.0 / mu).exp();
    let ifpl = RateSchedule::infeasible(mu)?;

    let all = || 1..=n;
    let window_start = final_quartile_start(n);
    let window = || window_start..=n;
    let window_max = |ratios: &[Option<f64>]| {
        ratios
            .iter()
            .skip(window_start - 1)
            .flatten()
            .fold(0.0_f64, |m, &x| m.max(x))
    };

    let mut out = Vec::new();
    let remark_trace = trace.fpl_rate == RateKind::ZeroSumRemark;
    let fpl_checks = [
        BoundName::Thm3Step,
        BoundName::Cor1,
        BoundName::Thm2General,
    ];
    if remark_trace {
        for name in fpl_checks {
            out.push(BoundCheck::not_applicable(
                name,
                "trace uses the zero-sum-remark rate".into(),
            ));
        }
    } else {
        out.push(BoundCheck::over(BoundName::Thm3Step, all(), |t| {
            (l(t), decay * r(t))
        }));
        out.push(BoundCheck::over(BoundName::Cor1, all(), |t| {
            (cum_l(t), decay * cum_r(t))
        }));
        out.push(BoundCheck::over(BoundName::Thm2General, all(), |t| {
            (cum_l(t), decay * (1.0 - mu) * leader(t))
        }));
    }
    out.push(BoundCheck::over(BoundName::Thm4, all(), |t| {
        (cum_r(t), leader(t) - ifpl.perturbation_scale(&state(t)))
    }));
    out.push(BoundCheck::over(BoundName::Cor2, all(), |t| {
        (cum_r(t), (1.0 - mu) * leader(t))
    }));
    let uniform = expected_gains(&Policy::Uniform, view)?;
    out.push(BoundCheck::over(BoundName::Triv1, all(), |t| {
        (uniform[t - 1].cumulative, 0.5 * leader(t))
    }));

    let lowdev = [BoundName::Thm3StepLowdev, BoundName::Thm2Lowdev];
    match delta {
        None => {
            for name in lowdev {
                out.push(BoundCheck::not_applicable(name, "no delta supplied".into()));
            }
        }
        Some(_) if remark_trace => {
            for name in lowdev {
                out.push(BoundCheck::not_applicable(
                    name,
                    "trace uses the zero-sum-remark rate".into(),
                ));
            }
        }
        Some(delta) => {
            let dev = window_max(&view.deviation_ratios());
            let limit = 0.5 * mu * delta;
            if n == 0 || dev > limit {
                for name in lowdev {
                    out.push(BoundCheck::not_applicable(
                        name,
                        format!("deviation {dev} over steps {window_start}..={n} exceeds {limit}"),
                    ));
                }
            } else {
                out.push(BoundCheck::over(BoundName::Thm3StepLowdev, window(), |t| {
                    (l(t), (1.0 - delta) * r(t))
                }));
                out.push(BoundCheck::over(BoundName::Thm2Lowdev, window(), |t| {
                    (cum_l(t), (1.0 - delta) * (1.0 - mu) * leader(t))
                }));
            }
        }
    }

    if zero_sum {
        let abs1 = |t: usize| state(t).cum1.abs();
        let zero_dev = window_max(&gains.deviation_ratios());
        let cz = decay * (1.0 - mu);
        if remark_trace {
            out.push(BoundCheck::not_applicable(
                BoundName::Thm6General,
                "trace uses the zero-sum-remark rate".into(),
            ));
        } else {
            out.push(BoundCheck::over(BoundName::Thm6General, all(), |t| {
                let cum = trace.steps[t - 1].cum_l;
                (cum, cz * abs1(t) - state(t).volume * (1.0 - cz))
            }));
        }
        match delta {
            Some(_) if remark_trace => out.push(BoundCheck::not_applicable(
                BoundName::Thm6Lowdev,
                "trace uses the zero-sum-remark rate".into(),
            )),
            Some(delta) if n > 0 && zero_dev <= 0.5 * mu * delta => {
                out.push(BoundCheck::over(BoundName::Thm6Lowdev, window(), |t| {
                    let cum = trace.steps[t - 1].cum_l;
                    (
                        cum,
                        (1.0 - delta) * (1.0 - mu) * abs1(t) - (delta + mu) * state(t).volume,
                    )
                }))
            }
            Some(delta) => out.push(BoundCheck::not_applicable(
                BoundName::Thm6Lowdev,
                format!(
                    "deviation {zero_dev} over steps {window_start}..={n} exceeds {}",
                    0.5 * mu * delta
                ),
            )),
            None => out.push(BoundCheck::not_applicable(
                BoundName::Thm6Lowdev,
                "no delta supplied".into(),
            )),
        }

        if remark_trace {
            let peak_dev = (window_start..=n)
                .filter_map(|t| {
                    let peak = state(t).peak_abs1;
                    (peak > 0.0).then(|| gains.steps()[t - 1][0].abs() / peak)
                })
                .fold(0.0_f64, f64::max);
            out.push(remark_check(trace, gains, delta, window_start, peak_dev));
        }
    }
    Ok(out)
}

/// The remark rate scales by `max_j |s1_{1:j}|`, so its deviation hypothesis is
/// measured as `|s1_t| / max_{j<=t} |s1_{1:j}|`.
fn remark_check(
    trace: &EvalTrace,
    gains: &GainSequence,
    delta: Option<f64>,
    window_start: usize,
    dev: f64,
) -> BoundCheck {
    let Some(delta) = delta else {
        return BoundCheck::not_applicable(BoundName::Remark, "no delta supplied".into());
    };
    let mu = trace.mu;
    let n = gains.len();
    let limit = 0.25 * mu * delta;
    if n == 0 || dev > limit {
        return BoundCheck::not_applicable(
            BoundName::Remark,
            format!("deviation {dev} over steps {window_start}..={n} exceeds {limit}"),
        );
    }
    // Record steps: |s1_{1:T}| attains the running maximum.
    let records: Vec<usize> = (window_start..=n)
        .filter(|&t| {
            let st: CumulativeState = gains.state(t);
            st.cum1.abs() > 0.0 && st.cum1.abs() >= st.peak_abs1
        })
        .collect();
    if records.is_empty() {
        return BoundCheck::not_applicable(
            BoundName::Remark,
            format!("|s1_(1:T)| sets no new maximum in steps {window_start}..={n}"),
        );
    }
    BoundCheck::over(BoundName::Remark, records, |t| {
        (
            trace.steps[t - 1].cum_l,
            (1.0 - delta) * (1.0 - mu) * gains.state(t).cum1.abs(),
        )
    })
}
