//! Game generators that realize the lower-bound constructions against a given
//! policy. Policies are only queried through `decide_prob`; every expectation
//! is exact, so a report is a pure function of the policy and parameters.

use serde::Serialize;

use crate::error::{ensure_open_unit, Error, Result};
use crate::gains::{CumulativeState, GainSequence, GameMode, GAIN_CAP};
use crate::policy::Policy;

/// Relative slack allowed when an exact-arithmetic checkpoint is compared.
pub const CHECKPOINT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

impl Relation {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        let tol = CHECKPOINT_TOLERANCE * lhs.abs().max(rhs.abs());
        match self {
            Relation::Le => lhs <= rhs + tol,
            Relation::Ge => lhs >= rhs - tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Checkpoint {
    pub t: usize,
    pub name: &'static str,
    pub relation: Relation,
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

impl Checkpoint {
    fn new(t: usize, name: &'static str, relation: Relation, lhs: f64, rhs: f64) -> Self {
        Checkpoint {
            t,
            name,
            relation,
            lhs,
            rhs,
            ok: relation.holds(lhs, rhs),
        }
    }
}

/// A step where no admissible gain reached the target probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchFailure {
    pub t: usize,
    pub target: f64,
    /// Probability at the largest value tried.
    pub best_prob: f64,
    pub largest_tested: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SearchOutcome {
    Found(f64),
    Failed(SearchFailure),
}

impl SearchOutcome {
    pub fn found(self) -> Option<f64> {
        match self {
            SearchOutcome::Found(x) => Some(x),
            SearchOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryReport {
    pub name: &'static str,
    pub gains: GainSequence,
    pub checkpoints: Vec<Checkpoint>,
    pub search_failures: Vec<SearchFailure>,
    /// Generation stopped because a cumulative gain would exceed the cap.
    pub truncated: bool,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    name: &'a str,
    mode: GameMode,
    gains: &'a [[f64; 2]],
    checkpoints: &'a [Checkpoint],
    search_failures: &'a [SearchFailure],
    truncated: bool,
    burn_in: Option<usize>,
}

impl AdversaryReport {
    fn new(name: &'static str, mode: GameMode) -> Self {
        AdversaryReport {
            name,
            gains: GainSequence::new(mode),
            checkpoints: Vec::new(),
            search_failures: Vec::new(),
            truncated: false,
        }
    }

    pub fn all_satisfied(&self) -> bool {
        self.checkpoints.iter().all(|c| c.ok)
    }

    /// Earliest step from which every checkpoint holds.
    pub fn burn_in(&self) -> Option<usize> {
        let mut start = Some(self.checkpoints.first().map_or(0, |c| c.t));
        for c in &self.checkpoints {
            if !c.ok {
                start = None;
            } else if start.is_none() {
                start = Some(c.t);
            }
        }
        start
    }

    /// Eventual claims: the burn-in ends no later than the start of the
    /// final quartile of the generated horizon.
    pub fn holds_eventually(&self) -> bool {
        match (self.burn_in(), self.checkpoints.last()) {
            (_, None) => true,
            (Some(b), Some(last)) => b <= crate::eval::final_quartile_start(last.t),
            (None, Some(_)) => false,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ReportJson {
            name: self.name,
            mode: self.gains.mode(),
            gains: self.gains.steps(),
            checkpoints: &self.checkpoints,
            search_failures: &self.search_failures,
            truncated: self.truncated,
            burn_in: self.burn_in(),
        })?)
    }

    /// Appends a step, tracking the policy's exact expected gain. Returns
    /// `false` (and marks the report truncated) on overflow.
    fn play(&mut self, policy: &Policy, expected: &mut f64, s1: f64, s2: f64) -> Result<bool> {
        let p = policy.decide_prob(&self.gains.last_state(), None)?;
        match self.gains.push(s1, s2) {
            Ok(_) => {
                *expected += s1 * p + s2 * (1.0 - p);
                Ok(true)
            }
            Err(Error::Overflow { .. }) => {
                self.truncated = true;
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }
}

fn causal(policy: &Policy) -> Result<()> {
    if policy.needs_oracle() {
        Err(Error::Unsupported(format!(
            "adversaries query causal policies only, got `{policy}`"
        )))
    } else {
        Ok(())
    }
}

/// Smallest `x >= lo` (to relative precision 1e-9) with `prob(x) >= target`,
/// by doubling then bisection. `prob` must be nondecreasing in `x`.
fn search<F>(prob: F, target: f64, lo: f64, cap: f64, t: usize) -> Result<SearchOutcome>
where
    F: Fn(f64) -> Result<f64>,
{
    let fail = |best_prob: f64, largest_tested: f64| {
        SearchOutcome::Failed(SearchFailure {
            t,
            target,
            best_prob,
            largest_tested,
        })
    };
    let p_lo = prob(lo)?;
    if p_lo >= target {
        return Ok(SearchOutcome::Found(lo));
    }
    if lo >= cap {
        return Ok(fail(p_lo, lo));
    }
    let mut lo = lo;
    let mut step = lo.abs().max(1.0);
    let mut hi;
    loop {
        hi = (lo + step).min(cap);
        let p = prob(hi)?;
        if p >= target {
            break;
        }
        if hi >= cap {
            return Ok(fail(p, hi));
        }
        lo = hi;
        step *= 2.0;
    }
    while hi - lo > 1e-9 * hi.abs().max(1.0) {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if prob(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(SearchOutcome::Found(hi))
}

/// Smallest `s1 >= max(floor1, s2)` with `P{I=1} >= target_prob` at
/// cumulative gains `(s1, s2)`, or a failure if nothing up to `cap` qualifies.
pub fn lemma1_search(
    policy: &Policy,
    target_prob: f64,
    floor1: f64,
    s2: f64,
    cap: f64,
) -> Result<SearchOutcome> {
    causal(policy)?;
    ensure_open_unit("target_prob", target_prob)?;
    if !(cap > floor1) || !cap.is_finite() || !floor1.is_finite() || !s2.is_finite() {
        return Err(Error::InvalidParameter {
            name: "cap",
            value: cap,
            expected: "finite values with cap > floor1",
        });
    }
    let origin = CumulativeState::initial(GameMode::General);
    search(
        |s1| policy.decide_prob(&origin.advanced(s1, s2), None),
        target_prob,
        floor1.max(s2),
        cap,
        0,
    )
}

/// Unbounded one-step gains on which the policy earns at most `delta_prime`
/// of the leader: odd steps push Expert 1 until `P{I=1} >= odd_target`
/// (default `1 - delta`), even steps pay `M_t = E(s_{1:t-1}) / (delta' - delta)`
/// to Expert 2.
pub fn thm1_adversary(
    policy: &Policy,
    delta: f64,
    delta_prime: f64,
    horizon: usize,
) -> Result<AdversaryReport> {
    thm1_adversary_with_target(policy, delta, delta_prime, horizon, None)
}

pub fn thm1_adversary_with_target(
    policy: &Policy,
    delta: f64,
    delta_prime: f64,
    horizon: usize,
    odd_target: Option<f64>,
) -> Result<AdversaryReport> {
    causal(policy)?;
    ensure_open_unit("delta", delta)?;
    ensure_open_unit("delta_prime", delta_prime)?;
    if delta >= delta_prime {
        return Err(Error::InvalidParameter {
            name: "delta_prime",
            value: delta_prime,
            expected: "(delta, 1)",
        });
    }
    let target = ensure_open_unit("odd_target", odd_target.unwrap_or(1.0 - delta))?;
    let mut report = AdversaryReport::new("thm1", GameMode::OneHot);
    let mut expected = 0.0;
    for t in 1..=horizon {
        let prev = report.gains.last_state();
        if t % 2 == 1 {
            let lo = (prev.cum2 - prev.cum1).max(0.0);
            let outcome = search(
                |x| policy.decide_prob(&prev.advanced(x, 0.0), None),
                target,
                lo,
                GAIN_CAP,
                t,
            )?;
            match outcome {
                SearchOutcome::Found(x) => {
                    if !report.play(policy, &mut expected, x, 0.0)? {
                        break;
                    }
                }
                SearchOutcome::Failed(f) => {
                    report.search_failures.push(f);
                    break;
                }
            }
        } else {
            let m = bootstrap(expected / (delta_prime - delta));
            if !report.play(policy, &mut expected, 0.0, m)? {
                break;
            }
            let st = report.gains.last_state();
            report.checkpoints.push(Checkpoint::new(
                t,
                "spike-share",
                Relation::Le,
                expected,
                delta_prime * st.cum2,
            ));
            report.checkpoints.push(Checkpoint::new(
                t,
                "leader-share",
                Relation::Le,
                expected,
                delta_prime * st.v,
            ));
        }
    }
    Ok(report)
}

fn bootstrap(m: f64) -> f64 {
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Upper,
    Lower,
}

/// Diagonal construction with spikes `M_t = E(s_{1:t-1}) / delta`. `Upper`
/// pays the spike to the expert the policy disfavors, `Lower` to the one it
/// favors.
pub fn prop1_adversary(
    policy: &Policy,
    delta: f64,
    direction: Direction,
    horizon: usize,
) -> Result<AdversaryReport> {
    causal(policy)?;
    ensure_open_unit("delta", delta)?;
    let name = match direction {
        Direction::Upper => "prop1-upper",
        Direction::Lower => "prop1-lower",
    };
    let mut report = AdversaryReport::new(name, GameMode::OneHot);
    let mut expected = 0.0;
    for t in 1..=horizon {
        let p = policy.decide_prob(&report.gains.last_state(), None)?;
        let m = bootstrap(expected / delta);
        let to_first = match direction {
            Direction::Upper => p <= 0.5,
            Direction::Lower => p > 0.5,
        };
        let (s1, s2) = if to_first { (m, 0.0) } else { (0.0, m) };
        if !report.play(policy, &mut expected, s1, s2)? {
            break;
        }
        let lead = report.gains.last_state().v;
        report.checkpoints.push(match direction {
            Direction::Upper => {
                Checkpoint::new(t, "upper-half", Relation::Le, expected, 0.5 * (1.0 + delta) * lead)
            }
            Direction::Lower => {
                Checkpoint::new(t, "lower-half", Relation::Ge, expected, 0.5 * (1.0 - delta) * lead)
            }
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum Sign {
    #[serde(rename = "<=0")]
    NonPositive,
    #[serde(rename = ">=0")]
    NonNegative,
}

/// Unit zero-sum steps that keep the expected cumulative gain on one side of
/// zero: the favored expert gains 1 for `NonNegative` and loses 1 for
/// `NonPositive`.
pub fn prop2_adversary(policy: &Policy, sign: Sign, horizon: usize) -> Result<AdversaryReport> {
    causal(policy)?;
    let mut report = AdversaryReport::new("prop2", GameMode::ZeroSum);
    let mut expected = 0.0;
    for t in 1..=horizon {
        let p = policy.decide_prob(&report.gains.last_state(), None)?;
        let favored_first = p > 0.5;
        let s1 = match (sign, favored_first) {
            (Sign::NonNegative, true) | (Sign::NonPositive, false) => 1.0,
            _ => -1.0,
        };
        if !report.play(policy, &mut expected, s1, -s1)? {
            break;
        }
        report.checkpoints.push(match sign {
            Sign::NonNegative => Checkpoint::new(t, "sign-nonneg", Relation::Ge, expected, 0.0),
            Sign::NonPositive => Checkpoint::new(t, "sign-nonpos", Relation::Le, expected, 0.0),
        });
    }
    Ok(report)
}

/// Zero-sum construction: odd steps move along the diagonal `(s, -s)` until
/// `P{I=1} >= 1 - delta`, even steps pay `(-M_t, M_t)` with
/// `M_t = max{|E| / (2(delta - delta')), L_t, V_{t-1} / delta}`.
pub fn thm5_adversary<L>(
    policy: &Policy,
    delta: f64,
    delta_prime: f64,
    volume_floor: L,
    horizon: usize,
) -> Result<AdversaryReport>
where
    L: Fn(usize) -> f64,
{
    causal(policy)?;
    ensure_open_unit("delta", delta)?;
    ensure_open_unit("delta_prime", delta_prime)?;
    if delta_prime >= delta {
        return Err(Error::InvalidParameter {
            name: "delta_prime",
            value: delta_prime,
            expected: "(0, delta)",
        });
    }
    let mut report = AdversaryReport::new("thm5", GameMode::ZeroSum);
    let mut expected = 0.0;
    for t in 1..=horizon {
        let prev = report.gains.last_state();
        if t % 2 == 1 {
            let lo = prev.cum1.abs() - prev.cum1;
            let outcome = search(
                |x| policy.decide_prob(&prev.advanced(x, -x), None),
                1.0 - delta,
                lo,
                GAIN_CAP,
                t,
            )?;
            match outcome {
                SearchOutcome::Found(x) => {
                    if !report.play(policy, &mut expected, x, -x)? {
                        break;
                    }
                }
                SearchOutcome::Failed(f) => {
                    report.search_failures.push(f);
                    break;
                }
            }
        } else {
            let floor = volume_floor(t);
            if !(floor > 0.0 && floor.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "volume_floor",
                    value: floor,
                    expected: "(0, inf)",
                });
            }
            let m = (expected.abs() / (2.0 * (delta - delta_prime)))
                .max(floor)
                .max(prev.volume / delta);
            if !report.play(policy, &mut expected, -m, m)? {
                break;
            }
            let st = report.gains.last_state();
            report.checkpoints.push(Checkpoint::new(
                t,
                "zero-sum-ceiling",
                Relation::Le,
                expected,
                2.0 * delta_prime * st.cum1.abs() - (1.0 - 2.0 * delta_prime) * st.volume,
            ));
            report.checkpoints.push(Checkpoint::new(
                t,
                "volume-floor",
                Relation::Ge,
                st.volume,
                floor,
            ));
        }
    }
    Ok(report)
}

/// The six-step loss stream on which follow-the-leader always picks the
/// wrong expert after the first step.
pub fn kv_ftl_example() -> GainSequence {
    GainSequence::from_steps(
        GameMode::OneHot,
        [
            (0.0, 0.5),
            (1.0, 0.0),
            (0.0, 1.0),
            (1.0, 0.0),
            (0.0, 1.0),
            (1.0, 0.0),
        ],
    )
    .expect("static one-hot stream")
}

/// Plays `policy` on [`kv_ftl_example`] read as losses: the policy sees
/// negated cumulative losses, so a leader follower picks the smaller loss.
/// Checkpoints confirm it pays the larger loss at each step 2..6.
pub fn kv_report(policy: &Policy) -> Result<AdversaryReport> {
    causal(policy)?;
    let losses = kv_ftl_example();
    let mut report = AdversaryReport::new("kv-ftl", GameMode::OneHot);
    report.gains = losses.clone();
    let mut late = 0.0;
    let mut worst = 0.0;
    for (i, &[a, b]) in losses.steps().iter().enumerate() {
        let st = losses.state(i);
        let view = CumulativeState {
            mode: GameMode::General,
            cum1: -st.cum1,
            cum2: -st.cum2,
            v: (-st.cum1).max(-st.cum2),
            ..st
        };
        let p = policy.decide_prob(&view, None)?;
        let loss = a * p + b * (1.0 - p);
        let t = i + 1;
        if t >= 2 {
            late += loss;
            worst += a.max(b);
            report
                .checkpoints
                .push(Checkpoint::new(t, "kv-wrong", Relation::Ge, loss, a.max(b)));
        }
    }
    report
        .checkpoints
        .push(Checkpoint::new(losses.len(), "kv-total", Relation::Ge, late, worst));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::expected_gains;

    fn replay_matches(policy: &Policy, report: &AdversaryReport) {
        let steps = expected_gains(policy, &report.gains).unwrap();
        for c in report.checkpoints.iter().filter(|c| c.name != "volume-floor") {
            let e = steps[c.t - 1].cumulative;
            assert!(
                (e - c.lhs).abs() <= 1e-9 * e.abs().max(1e-300),
                "{}: {e} vs {}",
                c.name,
                c.lhs
            );
        }
    }

    #[test]
    fn kv_stream() {
        let g = kv_ftl_example();
        assert_eq!(g.steps()[0], [0.0, 0.5]);
        let st = g.last_state();
        assert_eq!((st.cum1, st.cum2), (3.0, 2.5));
    }

    #[test]
    fn kv_ftl_always_wrong() {
        let r = kv_report(&Policy::Ftl).unwrap();
        assert!(r.all_satisfied());
        let total = r.checkpoints.last().unwrap();
        assert_eq!((total.lhs, total.rhs), (5.0, 5.0));
        let u = kv_report(&Policy::Uniform).unwrap();
        assert!(!u.all_satisfied());
    }

    #[test]
    fn lemma1_threshold() {
        let p = Policy::threshold(0.05).unwrap();
        let s = lemma1_search(&p, 0.95, 0.0, 10.0, 1e6).unwrap().found().unwrap();
        assert!(s > 10.0 && s - 10.0 < 1e-7, "{s}");
    }

    #[test]
    fn lemma1_fpl_ceiling() {
        let p = Policy::fpl(0.618).unwrap();
        let ceiling = 1.0 - 0.5 * (-1.0 / 0.618_f64).exp();
        assert!((ceiling - 0.9009).abs() < 1e-4);
        for cap in [1e3, 1e12, GAIN_CAP] {
            match lemma1_search(&p, 0.95, 0.0, 0.0, cap).unwrap() {
                SearchOutcome::Failed(f) => assert!(f.best_prob <= ceiling + 1e-12),
                other => panic!("{other:?}"),
            }
        }
        let s = lemma1_search(&p, 0.85, 0.0, 0.0, 1e6).unwrap().found().unwrap();
        let prob = p
            .decide_prob(&CumulativeState::initial(GameMode::General).advanced(s, 0.0), None)
            .unwrap();
        assert!(prob >= 0.85);
    }

    #[test]
    fn lemma1_rejects_bad_input() {
        let p = Policy::Uniform;
        assert!(lemma1_search(&p, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(lemma1_search(&p, 0.5, 2.0, 0.0, 1.0).is_err());
        assert!(lemma1_search(&Policy::ifpl(0.5).unwrap(), 0.5, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn thm1_against_threshold() {
        let p = Policy::threshold(0.05).unwrap();
        let r = thm1_adversary(&p, 0.05, 0.1, 20).unwrap();
        assert_eq!(r.gains.len(), 20);
        assert_eq!(r.checkpoints.len(), 20);
        assert!(r.search_failures.is_empty());
        assert!(r.all_satisfied(), "{:#?}", r.checkpoints);
        replay_matches(&p, &r);
    }

    #[test]
    fn thm1_against_fpl_fails_search() {
        let r = thm1_adversary(&Policy::fpl(0.618).unwrap(), 0.05, 0.1, 20).unwrap();
        assert_eq!(r.search_failures.len(), 1);
        assert_eq!(r.search_failures[0].t, 1);
        assert!(r.gains.is_empty());
    }

    #[test]
    fn thm1_empty_horizon() {
        let r = thm1_adversary(&Policy::Uniform, 0.05, 0.1, 0).unwrap();
        assert!(r.gains.is_empty() && r.checkpoints.is_empty());
        assert!(thm1_adversary(&Policy::Uniform, 0.2, 0.1, 4).is_err());
    }

    #[test]
    fn prop1_uniform_both_directions() {
        for dir in [Direction::Upper, Direction::Lower] {
            let r = prop1_adversary(&Policy::Uniform, 0.2, dir, 30).unwrap();
            assert!(r.all_satisfied());
            assert_eq!(r.gains.steps()[0], if dir == Direction::Upper { [1.0, 0.0] } else { [0.0, 1.0] });
            let st = r.gains.last_state();
            let last = r.checkpoints.last().unwrap();
            assert!((last.lhs - 0.5 * (st.cum1 + st.cum2)).abs() <= 1e-9 * last.lhs);
        }
    }

    #[test]
    fn prop1_fpl_upper() {
        let p = Policy::fpl(0.618).unwrap();
        let r = prop1_adversary(&p, 0.2, Direction::Upper, 30).unwrap();
        assert!(r.holds_eventually(), "{:#?}", r.checkpoints);
        replay_matches(&p, &r);
    }

    #[test]
    fn prop2_cases() {
        let u = prop2_adversary(&Policy::Uniform, Sign::NonNegative, 10).unwrap();
        assert!(u.checkpoints.iter().all(|c| c.lhs == 0.0 && c.ok));
        let f = prop2_adversary(&Policy::Ftl, Sign::NonPositive, 50).unwrap();
        assert!(f.all_satisfied());
        replay_matches(&Policy::Ftl, &f);
        let one = prop2_adversary(&Policy::fpl(0.5).unwrap(), Sign::NonNegative, 1).unwrap();
        assert_eq!(one.checkpoints.len(), 1);
        assert!(one.checkpoints[0].lhs.abs() <= 1.0);
    }

    #[test]
    fn thm5_against_threshold() {
        let p = Policy::threshold(0.05).unwrap();
        let r = thm5_adversary(&p, 0.1, 0.05, |t| t as f64, 16).unwrap();
        assert_eq!(r.gains.len(), 16);
        assert!(r.search_failures.is_empty());
        assert!(r.all_satisfied(), "{:#?}", r.checkpoints);
        replay_matches(&p, &r);
        for &[a, b] in r.gains.steps() {
            assert_eq!(a, -b);
        }
    }

    #[test]
    fn thm5_empty_and_domain() {
        let p = Policy::Uniform;
        assert!(thm5_adversary(&p, 0.1, 0.05, |t| t as f64, 0).unwrap().gains.is_empty());
        assert!(thm5_adversary(&p, 0.05, 0.1, |t| t as f64, 4).is_err());
    }

    #[test]
    fn report_json_shape() {
        let r = prop2_adversary(&Policy::Ftl, Sign::NonPositive, 3).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["gains"][0], serde_json::json!([1.0, -1.0]));
        assert_eq!(v["checkpoints"][0]["relation"], "<=");
        assert!(v["search_failures"].as_array().unwrap().is_empty());
    }

    #[test]
    fn growth_cap_truncates() {
        let r = prop1_adversary(&Policy::Uniform, 0.01, Direction::Upper, 400).unwrap();
        assert!(r.truncated);
        assert!(r.gains.len() < 400);
    }
}
