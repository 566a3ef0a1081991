//! Batch experiments: a TOML config names a game source, a policy and the
//! checks to run; every instance gets its own output directory.
//!
//! All randomness derives from the top-level `seed` through named streams, so
//! rerunning a config reproduces its outputs byte for byte.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    kv_report, prop1_adversary, prop2_adversary, thm1_adversary_with_target, thm5_adversary,
    AdversaryReport, Direction, Sign,
};
use crate::error::{ensure_open_unit, Error, Result};
use crate::eval::{all_pass, check_bounds, exact_trace_with, expected_gains, monte_carlo_trace, BoundCheck, EvalTrace};
use crate::finance::{derandomized_trade, expert_gains, generate_path, PricePath, TradingRecord};
use crate::gains::{GainSequence, GameMode};
use crate::policy::{Policy, RateKind, RateSchedule};

/// Overrides the directory that relative `output` paths are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "UFPL_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryName {
    KvFtl,
    Thm1,
    Prop1,
    Prop2,
    Thm5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FuzzFamily {
    /// One-hot gains in `[0, 1e6]` with log-uniform magnitudes.
    OneHot,
    /// One-hot gains in `[0, 1]`.
    Bounded,
    /// Zero-sum gains with a per-game drift and scale.
    ZeroSum,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GameSource {
    File {
        path: PathBuf,
        #[serde(default)]
        mode: Option<GameMode>,
    },
    Adversary {
        name: AdversaryName,
        #[serde(default)]
        horizon: usize,
        #[serde(default)]
        delta: Option<f64>,
        #[serde(default)]
        delta_prime: Option<f64>,
        #[serde(default)]
        odd_target: Option<f64>,
        #[serde(default)]
        direction: Option<Direction>,
        #[serde(default)]
        sign: Option<Sign>,
        /// `L_t = volume_floor * t`.
        #[serde(default)]
        volume_floor: Option<f64>,
    },
    Fbm {
        hurst: f64,
        steps: usize,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "hundred")]
        s0: f64,
        #[serde(default = "one")]
        c: f64,
        #[serde(default = "one_count")]
        seeds: usize,
        #[serde(default)]
        rate: Option<RateKind>,
    },
    Fuzz {
        family: FuzzFamily,
        count: usize,
        #[serde(default)]
        seed: Option<u64>,
        /// Fixed horizon; otherwise drawn from `1..=max_steps`.
        #[serde(default)]
        steps: Option<usize>,
        #[serde(default = "default_max_steps")]
        max_steps: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn hundred() -> f64 {
    100.0
}

fn one_count() -> usize {
    1
}

fn default_max_steps() -> usize {
    500
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mu: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Monte Carlo replays of the policy per instance; 0 disables them.
    #[serde(default)]
    pub replicas: usize,
    pub output: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Policy descriptor such as `"fpl mu=0.618"`; defaults to FPL with `mu`.
    #[serde(default)]
    pub policy: Option<String>,
    pub game: GameSource,
}

fn field_error(field: &str, err: impl std::fmt::Display) -> String {
    format!("{field}: {err}")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            reason: e.to_string().trim_end().to_string(),
        })?;
        config.validate().map_err(|reason| Error::Config {
            path: path.to_path_buf(),
            reason,
        })?;
        Ok(config)
    }

    /// Checks every numeric parameter against its domain; the error names the
    /// offending field.
    pub fn validate(&self) -> std::result::Result<(), String> {
        ensure_open_unit("mu", self.mu).map_err(|e| field_error("mu", e))?;
        if let Some(d) = self.delta {
            ensure_open_unit("delta", d).map_err(|e| field_error("delta", e))?;
        }
        self.policy().map_err(|e| field_error("policy", e))?;
        let open = |field: &str, name: &'static str, v: Option<f64>| match v {
            Some(v) => ensure_open_unit(name, v).map(|_| ()).map_err(|e| field_error(field, e)),
            None => Ok(()),
        };
        match &self.game {
            GameSource::File { .. } => {}
            GameSource::Adversary {
                name,
                delta,
                delta_prime,
                odd_target,
                direction,
                sign,
                volume_floor,
                ..
            } => {
                open("game.delta", "delta", *delta)?;
                open("game.delta_prime", "delta_prime", *delta_prime)?;
                open("game.odd_target", "odd_target", *odd_target)?;
                if let Some(f) = volume_floor {
                    if !(*f > 0.0 && f.is_finite()) {
                        return Err(format!("game.volume_floor: must be positive, got {f}"));
                    }
                }
                let needs = |ok: bool, what: &str| {
                    if ok {
                        Ok(())
                    } else {
                        Err(format!("game: adversary {name:?} requires {what}"))
                    }
                };
                match name {
                    AdversaryName::KvFtl => {}
                    AdversaryName::Thm1 => {
                        needs(delta.is_some() && delta_prime.is_some(), "delta and delta_prime")?;
                        if delta >= delta_prime {
                            return Err("game.delta_prime: must exceed game.delta".into());
                        }
                    }
                    AdversaryName::Thm5 => {
                        needs(delta.is_some() && delta_prime.is_some(), "delta and delta_prime")?;
                        if delta_prime >= delta {
                            return Err("game.delta_prime: must be below game.delta".into());
                        }
                    }
                    AdversaryName::Prop1 => needs(delta.is_some() && direction.is_some(), "delta and direction")?,
                    AdversaryName::Prop2 => needs(sign.is_some(), "sign")?,
                }
            }
            GameSource::Fbm {
                hurst,
                steps,
                sigma,
                s0,
                c,
                seeds,
                ..
            } => {
                ensure_open_unit("hurst", *hurst).map_err(|e| field_error("game.hurst", e))?;
                if *steps < 2 || *steps > crate::finance::MAX_PATH_STEPS {
                    return Err(format!("game.steps: must lie in [2, 4096], got {steps}"));
                }
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(format!("game.sigma: must be positive, got {sigma}"));
                }
                if !s0.is_finite() {
                    return Err(format!("game.s0: must be finite, got {s0}"));
                }
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(format!("game.c: must be positive, got {c}"));
                }
                if *seeds == 0 {
                    return Err("game.seeds: must be at least 1".into());
                }
            }
            GameSource::Fuzz {
                count,
                steps,
                max_steps,
                ..
            } => {
                if *count == 0 {
                    return Err("game.count: must be at least 1".into());
                }
                if *max_steps == 0 || *steps == Some(0) {
                    return Err("game.steps: horizons must be at least 1".into());
                }
            }
        }
        Ok(())
    }

    /// The FPL schedule the bound checks evaluate.
    pub fn schedule(&self) -> Result<RateSchedule> {
        let kind = match self.game {
            GameSource::Fbm { rate: Some(rate), .. } => rate,
            _ => RateKind::AdaptiveMax,
        };
        if kind == RateKind::Infeasible {
            return Err(Error::Unsupported("FPL cannot use the infeasible rate".into()));
        }
        RateSchedule::new(kind, self.mu)
    }

    /// The policy replayed, traded or attacked.
    pub fn policy(&self) -> Result<Policy> {
        match &self.policy {
            Some(desc) => desc.parse(),
            None => Policy::fpl_with(self.schedule()?),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => Path::new(&root).join(&self.output),
            _ => self.output.clone(),
        }
    }

    fn writes(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the `index`-th member of the stream `name` under `root`.
pub fn stream_seed(root: u64, name: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(root ^ splitmix64(h ^ splitmix64(index)))
}

/// A random game from `family`. The horizon is `steps` when given, otherwise
/// uniform on `1..=max_steps`.
pub fn fuzz_game(family: FuzzFamily, seed: u64, steps: Option<usize>, max_steps: usize) -> Result<GainSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = steps.unwrap_or_else(|| rng.random_range(1..=max_steps.max(1)));
    match family {
        FuzzFamily::OneHot | FuzzFamily::Bounded => {
            let mut g = GainSequence::new(GameMode::OneHot);
            for _ in 0..n {
                let mag = match family {
                    FuzzFamily::OneHot if rng.random::<f64>() < 0.1 => 0.0,
                    FuzzFamily::OneHot => 10f64.powf(rng.random_range(-3.0..6.0)),
                    _ => rng.random::<f64>(),
                };
                if rng.random::<bool>() {
                    g.push(mag, 0.0)?;
                } else {
                    g.push(0.0, mag)?;
                }
            }
            Ok(g)
        }
        FuzzFamily::ZeroSum => {
            let drift = rng.random_range(-0.3..0.3);
            let scale = 10f64.powf(rng.random_range(-2.0..3.0));
            let mut g = GainSequence::new(GameMode::ZeroSum);
            for _ in 0..n {
                let s = scale * (drift + rng.random_range(-1.0..1.0));
                g.push(s, -s)?;
            }
            Ok(g)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversarySummary {
    pub name: &'static str,
    pub satisfied: bool,
    pub holds_eventually: bool,
    pub burn_in: Option<usize>,
    pub search_failures: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub replicas: usize,
    pub mean: f64,
    pub std_err: f64,
    pub exact: f64,
    pub within_4_sigma: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceSummary {
    pub name: String,
    pub mode: GameMode,
    pub steps: usize,
    pub pass: bool,
    pub failed: Vec<&'static str>,
    pub total_l: f64,
    pub total_r: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversary: Option<AdversarySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trading_total: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub pass: bool,
    pub policy: String,
    pub mu: f64,
    pub delta: Option<f64>,
    pub instances: Vec<InstanceSummary>,
}

struct Instance {
    name: String,
    gains: GainSequence,
    adversary: Option<AdversaryReport>,
    path: Option<PricePath>,
    trading: Option<TradingRecord>,
}

struct Evaluated {
    instance: Instance,
    trace: EvalTrace,
    checks: Vec<BoundCheck>,
    summary: InstanceSummary,
}

fn build_instances(config: &ExperimentConfig, policy: &Policy) -> Result<Vec<Instance>> {
    let plain = |name: String, gains: GainSequence| Instance {
        name,
        gains,
        adversary: None,
        path: None,
        trading: None,
    };
    match &config.game {
        GameSource::File { path, mode } => {
            let file = fs::File::open(path).map_err(|e| Error::Config {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            Ok(vec![plain("game".into(), GainSequence::read_csv(file, *mode)?)])
        }
        GameSource::Adversary {
            name,
            horizon,
            delta,
            delta_prime,
            odd_target,
            direction,
            sign,
            volume_floor,
        } => {
            let d = delta.unwrap_or(0.1);
            let report = match name {
                AdversaryName::KvFtl => kv_report(policy)?,
                AdversaryName::Thm1 => {
                    thm1_adversary_with_target(policy, d, delta_prime.unwrap_or(0.2), *horizon, *odd_target)?
                }
                AdversaryName::Prop1 => {
                    prop1_adversary(policy, d, direction.unwrap_or(Direction::Upper), *horizon)?
                }
                AdversaryName::Prop2 => {
                    prop2_adversary(policy, sign.unwrap_or(Sign::NonNegative), *horizon)?
                }
                AdversaryName::Thm5 => {
                    let scale = volume_floor.unwrap_or(1.0);
                    thm5_adversary(policy, d, delta_prime.unwrap_or(0.05), |t| scale * t as f64, *horizon)?
                }
            };
            Ok(vec![Instance {
                name: "game".into(),
                gains: report.gains.clone(),
                adversary: Some(report),
                path: None,
                trading: None,
            }])
        }
        GameSource::Fbm {
            hurst,
            steps,
            sigma,
            s0,
            c,
            seeds,
            ..
        } => (0..*seeds)
            .into_par_iter()
            .map(|k| {
                let path = generate_path(*steps, *hurst, *sigma, *s0, stream_seed(config.seed, "fbm", k as u64))?;
                let gains = expert_gains(&path, *c)?;
                let trading = derandomized_trade(policy, &path, *c)?;
                Ok(Instance {
                    name: format!("path-{k:04}"),
                    gains,
                    adversary: None,
                    path: Some(path),
                    trading: Some(trading),
                })
            })
            .collect(),
        GameSource::Fuzz {
            family,
            count,
            seed,
            steps,
            max_steps,
        } => {
            let root = seed.unwrap_or(config.seed);
            (0..*count)
                .into_par_iter()
                .map(|k| {
                    let g = fuzz_game(*family, stream_seed(root, "fuzz", k as u64), *steps, *max_steps)?;
                    Ok(plain(format!("game-{k:04}"), g))
                })
                .collect()
        }
    }
}

fn evaluate(config: &ExperimentConfig, policy: &Policy, instance: Instance, index: usize) -> Result<Evaluated> {
    let schedule = config.schedule()?;
    let trace = exact_trace_with(&instance.gains, schedule)?;
    let checks = check_bounds(&trace, &instance.gains, config.delta)?;
    let monte_carlo = if config.replicas > 0 {
        let est = monte_carlo_trace(
            &instance.gains,
            policy,
            config.replicas,
            stream_seed(config.seed, "monte-carlo", index as u64),
        )?;
        let exact = expected_gains(policy, &instance.gains)?.last().map_or(0.0, |s| s.cumulative);
        Some(MonteCarloSummary {
            replicas: est.replicas,
            mean: est.mean,
            std_err: est.std_err,
            exact,
            within_4_sigma: est.z_score(exact) <= 4.0,
        })
    } else {
        None
    };
    let summary = InstanceSummary {
        name: instance.name.clone(),
        mode: instance.gains.mode(),
        steps: instance.gains.len(),
        pass: all_pass(&checks),
        failed: checks
            .iter()
            .filter(|c| c.applicable && !c.ok)
            .map(|c| c.name.as_str())
            .collect(),
        total_l: trace.total_l(),
        total_r: trace.total_r(),
        adversary: instance.adversary.as_ref().map(|r| AdversarySummary {
            name: r.name,
            satisfied: r.all_satisfied(),
            holds_eventually: r.holds_eventually(),
            burn_in: r.burn_in(),
            search_failures: r.search_failures.len(),
            truncated: r.truncated,
        }),
        monte_carlo,
        trading_total: instance.trading.as_ref().map(TradingRecord::total),
    };
    Ok(Evaluated {
        instance,
        trace,
        checks,
        summary,
    })
}

/// Rows of `plot.csv`: cumulative gains of both engines, the leader and the
/// right-hand sides of the main bounds. Zero-sum games use `|s1_{1:t}|` as
/// leader and the zero-sum forms of the bounds.
pub fn write_plot_csv<W: std::io::Write>(
    out: W,
    trace: &EvalTrace,
    gains: &GainSequence,
    delta: Option<f64>,
) -> Result<()> {
    let mu = trace.mu;
    let decay = (-2.0 / mu).exp();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "cum_l", "cum_r", "leader", "general_rhs", "ifpl_rhs", "lowdev_rhs"])?;
    for s in &trace.steps {
        let st = gains.state(s.t);
        let (leader, general, ifpl, lowdev) = if gains.mode() == GameMode::ZeroSum {
            let a = st.cum1.abs();
            let v = st.volume;
            let cz = decay * (1.0 - mu);
            (
                a,
                cz * a - v * (1.0 - cz),
                (1.0 - mu) * (a + v) - v,
                delta.map(|d| (1.0 - d) * (1.0 - mu) * a - (d + mu) * v),
            )
        } else {
            (
                st.v,
                decay * (1.0 - mu) * st.v,
                (1.0 - mu) * st.v,
                delta.map(|d| (1.0 - d) * (1.0 - mu) * st.v),
            )
        };
        w.write_record([
            s.t.to_string(),
            s.cum_l.to_string(),
            s.cum_r.to_string(),
            leader.to_string(),
            general.to_string(),
            ifpl.to_string(),
            lowdev.map_or_else(String::new, |x| x.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_instance(config: &ExperimentConfig, dir: &Path, e: &Evaluated) -> Result<()> {
    fs::create_dir_all(dir)?;
    if config.writes(Format::Csv) {
        e.instance.gains.write_csv(create(&dir.join("gains.csv"))?)?;
        e.trace.write_csv(create(&dir.join("trace.csv"))?)?;
        write_plot_csv(create(&dir.join("plot.csv"))?, &e.trace, &e.instance.gains, config.delta)?;
        if let Some(path) = &e.instance.path {
            path.write_csv(create(&dir.join("path.csv"))?)?;
        }
        if let Some(trading) = &e.instance.trading {
            trading.write_csv(create(&dir.join("trading.csv"))?)?;
        }
    }
    if config.writes(Format::Json) {
        write_json(&dir.join("bounds.json"), &e.checks)?;
        if let Some(report) = &e.instance.adversary {
            let mut text = report.to_json()?;
            text.push('\n');
            fs::write(dir.join("adversary.json"), text)?;
        }
    }
    Ok(())
}

/// Builds, evaluates and writes every instance. The summary's `pass` is the
/// conjunction of all applicable bound checks.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    let policy = config.policy()?;
    let out = config.output_dir();
    let instances = build_instances(config, &policy)?;
    let evaluated: Vec<Evaluated> = instances
        .into_par_iter()
        .enumerate()
        .map(|(i, inst)| evaluate(config, &policy, inst, i))
        .collect::<Result<_>>()?;
    fs::create_dir_all(&out)?;
    evaluated
        .par_iter()
        .map(|e| write_instance(config, &out.join(&e.instance.name), e))
        .collect::<Result<Vec<()>>>()?;
    let instances: Vec<InstanceSummary> = evaluated.into_iter().map(|e| e.summary).collect();
    let summary = RunSummary {
        pass: instances.iter().all(|i| i.pass),
        policy: policy.to_string(),
        mu: config.mu,
        delta: config.delta,
        instances,
    };
    if config.writes(Format::Json) {
        write_json(&out.join("summary.json"), &summary)?;
    }
    Ok(summary)
}
