//! Two-expert gain sequences and their running statistics.
//!
//! A [`GainSequence`] stores the per-step gains `(s1, s2)` exactly as they were
//! played and keeps one [`CumulativeState`] per step. Cumulatives start at zero;
//! the unit offset that keeps learning rates finite lives in the rate schedules,
//! not here.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Traces stop before any cumulative statistic grows past this magnitude.
pub const GAIN_CAP: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GameMode {
    /// Nonnegative gains, at most one expert gains per step.
    OneHot,
    /// `s1 = -s2` at every step.
    ZeroSum,
    /// Nonnegative gains with no further restriction.
    General,
}

impl GameMode {
    pub fn is_nonnegative(self) -> bool {
        !matches!(self, GameMode::ZeroSum)
    }

    /// The most specific mode every step satisfies. An all-zero game is one-hot.
    pub fn infer(steps: &[[f64; 2]]) -> Option<GameMode> {
        [GameMode::OneHot, GameMode::ZeroSum, GameMode::General]
            .into_iter()
            .find(|mode| steps.iter().all(|&[a, b]| mode.check(a, b).is_ok()))
    }

    fn check(self, s1: f64, s2: f64) -> std::result::Result<(), String> {
        if !s1.is_finite() || !s2.is_finite() {
            return Err(format!("gains ({s1}, {s2}) are not finite"));
        }
        match self {
            GameMode::OneHot => {
                if s1 < 0.0 || s2 < 0.0 {
                    Err(format!("gains ({s1}, {s2}) must be nonnegative"))
                } else if s1 != 0.0 && s2 != 0.0 {
                    Err(format!("gains ({s1}, {s2}) reward both experts"))
                } else {
                    Ok(())
                }
            }
            GameMode::ZeroSum => {
                if s1 == -s2 {
                    Ok(())
                } else {
                    Err(format!("gains ({s1}, {s2}) do not sum to zero"))
                }
            }
            GameMode::General => {
                if s1 < 0.0 || s2 < 0.0 {
                    Err(format!("gains ({s1}, {s2}) must be nonnegative"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

impl fmt::Display for GameMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GameMode::OneHot => "nonnegative-one-hot",
            GameMode::ZeroSum => "zero-sum",
            GameMode::General => "general-nonnegative",
        })
    }
}

/// Running totals after `t` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CumulativeState {
    pub t: usize,
    pub mode: GameMode,
    pub cum1: f64,
    pub cum2: f64,
    /// `max(cum1, cum2)`.
    pub v: f64,
    /// Sum of `|s1|` over the played steps.
    pub volume: f64,
    /// `max_{j <= t} |cum1_j|`.
    pub peak_abs1: f64,
}

impl CumulativeState {
    pub fn initial(mode: GameMode) -> Self {
        CumulativeState {
            t: 0,
            mode,
            cum1: 0.0,
            cum2: 0.0,
            v: 0.0,
            volume: 0.0,
            peak_abs1: 0.0,
        }
    }

    /// The state one step later. No mode validation; adversaries use this to
    /// probe hypothetical continuations.
    pub fn advanced(&self, s1: f64, s2: f64) -> Self {
        let cum1 = self.cum1 + s1;
        let cum2 = self.cum2 + s2;
        CumulativeState {
            t: self.t + 1,
            mode: self.mode,
            cum1,
            cum2,
            v: cum1.max(cum2),
            volume: self.volume + s1.abs(),
            peak_abs1: self.peak_abs1.max(cum1.abs()),
        }
    }

    /// Running maximum of the game the learning rates are scaled by. For zero-sum
    /// games this is the leader's cumulative in the lifted nonnegative game,
    /// `max(cum1, cum2) + volume`.
    pub fn rate_scale(&self) -> f64 {
        match self.mode {
            GameMode::ZeroSum => self.v + self.volume,
            _ => self.v,
        }
    }

    fn magnitude(&self) -> f64 {
        self.cum1.abs().max(self.cum2.abs()).max(self.volume)
    }
}

/// Per-step deviation `s_t / v_t` (or `|s1_t| / V_t` for zero-sum games),
/// summarized over a finite horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationStats {
    pub finite_dev: f64,
    pub window: Option<usize>,
    pub tail_dev: Option<f64>,
    /// Steps (1-based) whose denominator was zero.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSequence {
    mode: GameMode,
    steps: Vec<[f64; 2]>,
    states: Vec<CumulativeState>,
}

impl GainSequence {
    pub fn new(mode: GameMode) -> Self {
        GainSequence {
            mode,
            steps: Vec::new(),
            states: Vec::new(),
        }
    }

    pub fn from_steps<I>(mode: GameMode, steps: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut seq = GainSequence::new(mode);
        for (s1, s2) in steps {
            seq.push(s1, s2)?;
        }
        Ok(seq)
    }

    /// Appends one step and returns the updated running state.
    pub fn push(&mut self, s1: f64, s2: f64) -> Result<CumulativeState> {
        let step = self.steps.len() + 1;
        self.mode
            .check(s1, s2)
            .map_err(|detail| Error::ModeViolation {
                step,
                mode: self.mode,
                detail,
            })?;
        let next = self.last_state().advanced(s1, s2);
        if !(next.magnitude() <= GAIN_CAP) {
            return Err(Error::Overflow {
                step,
                cap: GAIN_CAP,
            });
        }
        self.steps.push([s1, s2]);
        self.states.push(next);
        Ok(next)
    }

    pub fn mode(&self) -> GameMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[[f64; 2]] {
        &self.steps
    }

    /// States after steps `1..=T`.
    pub fn states(&self) -> &[CumulativeState] {
        &self.states
    }

    /// State after `t` steps; `t = 0` is the empty game.
    pub fn state(&self, t: usize) -> CumulativeState {
        match t {
            0 => CumulativeState::initial(self.mode),
            _ => self.states[t - 1],
        }
    }

    pub fn last_state(&self) -> CumulativeState {
        self.state(self.len())
    }

    /// Maps a zero-sum game to the one-hot game with gains `s_i + |s1|`.
    pub fn zero_sum_lift(&self) -> Result<GainSequence> {
        if self.mode != GameMode::ZeroSum {
            return Err(Error::Unsupported(format!(
                "zero-sum lift needs a zero-sum game, got {}",
                self.mode
            )));
        }
        // s_i + |s1| is exactly 0 for the losing expert and exactly 2|s1| for the other.
        GainSequence::from_steps(
            GameMode::OneHot,
            self.steps.iter().map(|&[s1, s2]| {
                let a = s1.abs();
                (s1 + a, s2 + a)
            }),
        )
    }

    /// One-step magnitude relative to the running maximum (or the volume, for
    /// zero-sum games). `None` where the denominator is zero.
    pub fn deviation_ratios(&self) -> Vec<Option<f64>> {
        self.steps
            .iter()
            .zip(&self.states)
            .map(|(&[s1, s2], st)| {
                let (num, den) = match self.mode {
                    GameMode::ZeroSum => (s1.abs(), st.volume),
                    _ => (s1.max(s2), st.v),
                };
                (den > 0.0).then(|| num / den)
            })
            .collect()
    }

    pub fn deviation(&self, window: Option<usize>) -> DeviationStats {
        let ratios = self.deviation_ratios();
        let skipped = ratios
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .map(|(i, _)| i + 1)
            .collect();
        let max_of = |rs: &[Option<f64>]| rs.iter().flatten().fold(0.0_f64, |m, &r| m.max(r));
        let tail_dev = window.map(|w| max_of(&ratios[ratios.len().saturating_sub(w)..]));
        DeviationStats {
            finite_dev: max_of(&ratios),
            window,
            tail_dev,
            skipped,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "s1", "s2", "cum1", "cum2", "v", "volume"])?;
        for (&[s1, s2], st) in self.steps.iter().zip(&self.states) {
            w.write_record([
                st.t.to_string(),
                s1.to_string(),
                s2.to_string(),
                st.cum1.to_string(),
                st.cum2.to_string(),
                st.v.to_string(),
                st.volume.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace written by [`write_csv`](Self::write_csv). Only the `s1`
    /// and `s2` columns are authoritative; the cumulative columns, when present,
    /// must agree with the re-summed gains. With `mode = None` the mode is inferred.
    pub fn read_csv<R: Read>(input: R, mode: Option<GameMode>) -> Result<GainSequence> {
        #[derive(Deserialize)]
        struct Row {
            t: usize,
            s1: f64,
            s2: f64,
            cum1: Option<f64>,
            cum2: Option<f64>,
        }

        let mut steps = Vec::new();
        let mut stored = Vec::new();
        for (i, row) in csv::Reader::from_reader(input).deserialize::<Row>().enumerate() {
            let row = row?;
            if row.t != i + 1 {
                return Err(Error::Parse {
                    input: format!("row {}", i + 1),
                    reason: format!("expected t = {}, found {}", i + 1, row.t),
                });
            }
            steps.push([
                ensure_finite("s1", row.s1)?,
                ensure_finite("s2", row.s2)?,
            ]);
            stored.push((row.cum1, row.cum2));
        }
        let mode = match mode {
            Some(m) => m,
            None => GameMode::infer(&steps).ok_or_else(|| Error::Parse {
                input: "gain trace".into(),
                reason: "steps mix negative gains with a nonzero sum".into(),
            })?,
        };
        let seq = GainSequence::from_steps(mode, steps.iter().map(|&[a, b]| (a, b)))?;
        for (st, (c1, c2)) in seq.states.iter().zip(stored) {
            for (have, want) in [(c1, st.cum1), (c2, st.cum2)] {
                if let Some(have) = have {
                    if (have - want).abs() > 1e-9 * want.abs().max(1.0) {
                        return Err(Error::Parse {
                            input: format!("row {}", st.t),
                            reason: format!("stored cumulative {have} disagrees with re-summed {want}"),
                        });
                    }
                }
            }
        }
        Ok(seq)
    }
}
