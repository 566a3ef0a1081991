//! Master policies: map the game state to the probability of following Expert 1.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_open_unit, Error, Result};
use crate::gains::CumulativeState;
use crate::perturbation::{laplace_tail, ExpSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateKind {
    /// `1 / (mu * max(cum1, cum2, 1))` over the steps before `t`.
    AdaptiveMax,
    /// `1 / (mu * v_t)` over the steps up to and including `t`.
    Infeasible,
    /// `1 / (mu * max(max_{j<t} |cum1_j|, 1))`, for zero-sum games.
    ZeroSumRemark,
}

impl RateKind {
    fn as_str(self) -> &'static str {
        match self {
            RateKind::AdaptiveMax => "adaptive-max",
            RateKind::Infeasible => "infeasible",
            RateKind::ZeroSumRemark => "zero-sum-remark",
        }
    }
}

impl FromStr for RateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive-max" => Ok(RateKind::AdaptiveMax),
            "infeasible" => Ok(RateKind::Infeasible),
            "zero-sum-remark" => Ok(RateKind::ZeroSumRemark),
            _ => Err(Error::Parse {
                input: s.to_string(),
                reason: "expected adaptive-max, infeasible or zero-sum-remark".into(),
            }),
        }
    }
}

/// A learning-rate rule. Exposed as the perturbation scale `1/epsilon`, which
/// stays finite (zero) where the infeasible rate is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateSchedule {
    kind: RateKind,
    mu: f64,
}

impl RateSchedule {
    pub fn new(kind: RateKind, mu: f64) -> Result<Self> {
        ensure_open_unit("mu", mu)?;
        Ok(RateSchedule { kind, mu })
    }

    pub fn adaptive_max(mu: f64) -> Result<Self> {
        Self::new(RateKind::AdaptiveMax, mu)
    }

    pub fn infeasible(mu: f64) -> Result<Self> {
        Self::new(RateKind::Infeasible, mu)
    }

    pub fn zero_sum_remark(mu: f64) -> Result<Self> {
        Self::new(RateKind::ZeroSumRemark, mu)
    }

    pub fn kind(&self) -> RateKind {
        self.kind
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `1 / epsilon` for a decision made from `state`. Causal schedules read the
    /// state before the step; the infeasible one reads the state after it.
    pub fn perturbation_scale(&self, state: &CumulativeState) -> f64 {
        match self.kind {
            RateKind::AdaptiveMax => self.mu * state.rate_scale().max(1.0),
            RateKind::Infeasible => self.mu * state.rate_scale(),
            RateKind::ZeroSumRemark => self.mu * state.peak_abs1.max(1.0),
        }
    }

    pub fn learning_rate(&self, state: &CumulativeState) -> f64 {
        1.0 / self.perturbation_scale(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expert {
    First,
    Second,
}

impl Expert {
    pub fn index(self) -> usize {
        match self {
            Expert::First => 1,
            Expert::Second => 2,
        }
    }

    /// This expert's entry of a `(s1, s2)` pair.
    pub fn pick(self, gains: [f64; 2]) -> f64 {
        gains[self.index() - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Policy {
    /// Deterministic leader; ties go to Expert 2.
    Ftl,
    Uniform,
    Fpl { schedule: RateSchedule },
    /// Reads the current step's gains through an explicit oracle argument.
    Ifpl { schedule: RateSchedule },
    /// Synthetic policy that follows the leader with probability `1 - delta`.
    Threshold { delta: f64 },
}

impl Policy {
    pub fn fpl(mu: f64) -> Result<Self> {
        Self::fpl_with(RateSchedule::adaptive_max(mu)?)
    }

    pub fn fpl_with(schedule: RateSchedule) -> Result<Self> {
        if schedule.kind == RateKind::Infeasible {
            return Err(Error::Unsupported(
                "fpl cannot use the infeasible rate; use ifpl".into(),
            ));
        }
        Ok(Policy::Fpl { schedule })
    }

    pub fn ifpl(mu: f64) -> Result<Self> {
        Ok(Policy::Ifpl {
            schedule: RateSchedule::infeasible(mu)?,
        })
    }

    pub fn threshold(delta: f64) -> Result<Self> {
        Ok(Policy::Threshold {
            delta: ensure_open_unit("delta", delta)?,
        })
    }

    /// Whether decisions need the current step's gains.
    pub fn needs_oracle(&self) -> bool {
        matches!(self, Policy::Ifpl { .. })
    }

    pub fn schedule(&self) -> Option<RateSchedule> {
        match *self {
            Policy::Fpl { schedule } | Policy::Ifpl { schedule } => Some(schedule),
            _ => None,
        }
    }

    /// The state the decision reads: post-step for the oracle policy.
    fn decision_state(
        &self,
        state: &CumulativeState,
        step_gains: Option<(f64, f64)>,
    ) -> Result<CumulativeState> {
        match (self.needs_oracle(), step_gains) {
            (true, Some((s1, s2))) => Ok(state.advanced(s1, s2)),
            (true, None) => Err(Error::OracleRequired(self.to_string())),
            (false, None) => Ok(*state),
            (false, Some(_)) => Err(Error::OracleUnexpected(self.to_string())),
        }
    }

    /// Probability of following Expert 1 at the step after `state`.
    pub fn decide_prob(
        &self,
        state: &CumulativeState,
        step_gains: Option<(f64, f64)>,
    ) -> Result<f64> {
        let st = self.decision_state(state, step_gains)?;
        Ok(match *self {
            Policy::Ftl => {
                if st.cum1 > st.cum2 {
                    1.0
                } else {
                    0.0
                }
            }
            Policy::Uniform => 0.5,
            Policy::Threshold { delta } => {
                if st.cum1 > st.cum2 {
                    1.0 - delta
                } else if st.cum1 < st.cum2 {
                    delta
                } else {
                    0.5
                }
            }
            Policy::Fpl { schedule } | Policy::Ifpl { schedule } => {
                let scale = schedule.perturbation_scale(&st);
                let gap = st.cum2 - st.cum1;
                if scale > 0.0 {
                    laplace_tail(gap / scale)
                } else if gap < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }

    /// The perturbed-leader choice for given perturbations `xi = (xi1, xi2)`:
    /// Expert 1 iff `cum1 + xi1/eps > cum2 + xi2/eps`.
    pub fn perturbed_choice(
        &self,
        state: &CumulativeState,
        step_gains: Option<(f64, f64)>,
        xi: [f64; 2],
    ) -> Result<Expert> {
        let schedule = self.schedule().ok_or_else(|| {
            Error::Unsupported(format!("`{self}` is not a perturbed-leader policy"))
        })?;
        let st = self.decision_state(state, step_gains)?;
        let scale = schedule.perturbation_scale(&st);
        Ok(if st.cum1 + xi[0] * scale > st.cum2 + xi[1] * scale {
            Expert::First
        } else {
            Expert::Second
        })
    }

    /// Draws one decision. Perturbed-leader policies consume two Exp(1) draws,
    /// the rest one uniform draw.
    pub fn sample_choice(
        &self,
        state: &CumulativeState,
        step_gains: Option<(f64, f64)>,
        sampler: &mut ExpSampler,
    ) -> Result<Expert> {
        if self.schedule().is_some() {
            let xi = [sampler.sample_exp(), sampler.sample_exp()];
            return self.perturbed_choice(state, step_gains, xi);
        }
        let p = self.decide_prob(state, step_gains)?;
        Ok(if sampler.sample_uniform() <= p {
            Expert::First
        } else {
            Expert::Second
        })
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Ftl => f.write_str("ftl"),
            Policy::Uniform => f.write_str("uniform"),
            Policy::Fpl { schedule } => match schedule.kind {
                RateKind::AdaptiveMax => write!(f, "fpl mu={}", schedule.mu),
                kind => write!(f, "fpl mu={} rate={}", schedule.mu, kind.as_str()),
            },
            Policy::Ifpl { schedule } => write!(f, "ifpl mu={}", schedule.mu),
            Policy::Threshold { delta } => write!(f, "threshold delta={delta}"),
        }
    }
}

/// Parses descriptors such as `fpl mu=0.618`, `fpl mu=0.5 rate=zero-sum-remark`,
/// `ifpl mu=0.5`, `threshold delta=0.05`, `ftl` and `uniform`.
impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_err = |reason: String| Error::Parse {
            input: s.to_string(),
            reason,
        };
        let mut words = s.split_whitespace();
        let kind = words.next().ok_or_else(|| parse_err("empty policy".into()))?;

        let mut mu = None;
        let mut delta = None;
        let mut rate = None;
        for word in words {
            let (key, value) = word
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, found `{word}`")))?;
            let number = || {
                value
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("{key}: {e}")))
            };
            match key {
                "mu" => mu = Some(number()?),
                "delta" => delta = Some(number()?),
                "rate" => rate = Some(value.parse::<RateKind>()?),
                _ => return Err(parse_err(format!("unknown key `{key}`"))),
            }
        }

        let allow = |mu_ok: bool, delta_ok: bool, rate_ok: bool| {
            let stray = [
                ("mu", mu.is_some() && !mu_ok),
                ("delta", delta.is_some() && !delta_ok),
                ("rate", rate.is_some() && !rate_ok),
            ];
            match stray.iter().find(|(_, bad)| *bad) {
                Some((key, _)) => Err(parse_err(format!("`{kind}` takes no `{key}`"))),
                None => Ok(()),
            }
        };
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| parse_err(format!("`{kind}` needs `{key}=`")))
        };

        match kind {
            "ftl" => {
                allow(false, false, false)?;
                Ok(Policy::Ftl)
            }
            "uniform" => {
                allow(false, false, false)?;
                Ok(Policy::Uniform)
            }
            "fpl" => {
                allow(true, false, true)?;
                let kind = rate.unwrap_or(RateKind::AdaptiveMax);
                Policy::fpl_with(RateSchedule::new(kind, need(mu, "mu")?)?)
            }
            "ifpl" => {
                allow(true, false, true)?;
                if rate.is_some_and(|r| r != RateKind::Infeasible) {
                    return Err(parse_err("ifpl only supports rate=infeasible".into()));
                }
                Policy::ifpl(need(mu, "mu")?)
            }
            "threshold" => {
                allow(false, true, false)?;
                Policy::threshold(need(delta, "delta")?)
            }
            other => Err(parse_err(format!("unknown policy `{other}`"))),
        }
    }
}
