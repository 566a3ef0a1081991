//! Two-expert prediction with unbounded one-step gains.
//!
//! Follow-the-perturbed-leader with an adaptive learning rate, its infeasible
//! oracle counterpart, adversarial game generators that attack any policy, an
//! exact-expectation engine that machine-checks the performance bounds, and a
//! fractional-Brownian-motion trading game built on the zero-sum reduction.
//!
//! ```
//! use ufpl::eval::{all_pass, check_bounds, exact_trace};
//! use ufpl::{GainSequence, GameMode};
//!
//! let g = GainSequence::from_steps(GameMode::OneHot, [(3.0, 0.0), (0.0, 10.0), (7.0, 0.0)])?;
//! let trace = exact_trace(&g, 0.618)?;
//! assert!(all_pass(&check_bounds(&trace, &g, Some(0.1))?));
//! # Ok::<(), ufpl::Error>(())
//! ```

pub mod adversary;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod finance;
pub mod gains;
pub mod perturbation;
pub mod policy;

pub use error::{Error, Result};
pub use gains::{CumulativeState, DeviationStats, GainSequence, GameMode};
pub use perturbation::{comparison_probability, ExpSampler};
pub use policy::{Expert, Policy, RateKind, RateSchedule};
