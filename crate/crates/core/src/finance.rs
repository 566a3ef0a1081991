//! Fractional Brownian price paths, the two Hurst-hypothesis experts and the
//! derandomized mixture trader.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_open_unit, Error, Result};
use crate::gains::{GainSequence, GameMode};
use crate::policy::Policy;

/// Longest path `generate_path` accepts; the covariance factor is `O(T^2)`.
pub const MAX_PATH_STEPS: usize = 4096;

/// Autocovariance of unit-variance fractional Gaussian noise at lag `k`.
pub fn fgn_covariance(k: usize, hurst: f64) -> Result<f64> {
    ensure_open_unit("hurst", hurst)?;
    let k = k as f64;
    let h2 = 2.0 * hurst;
    Ok(0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2)))
}

/// Lower Cholesky factor, packed by rows.
fn cholesky<F: Fn(usize, usize) -> f64>(n: usize, entry: F) -> Result<Vec<f64>> {
    let row = |i: usize| i * (i + 1) / 2;
    let mut l = vec![0.0; n * (n + 1) / 2];
    for i in 0..n {
        for j in 0..=i {
            let (ri, rj) = (row(i), row(j));
            let dot: f64 = l[ri..ri + j].iter().zip(&l[rj..rj + j]).map(|(a, b)| a * b).sum();
            let s = entry(i, j) - dot;
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                }
                l[ri + i] = s.sqrt();
            } else {
                l[ri + j] = s / l[rj + j];
            }
        }
    }
    Ok(l)
}

/// Exact fGn sampler for a fixed length and Hurst exponent.
#[derive(Debug)]
pub struct FgnGenerator {
    n: usize,
    hurst: f64,
    factor: Vec<f64>,
}

impl FgnGenerator {
    pub fn new(n: usize, hurst: f64) -> Result<Self> {
        ensure_open_unit("hurst", hurst)?;
        let gamma = (0..n).map(|k| fgn_covariance(k, hurst)).collect::<Result<Vec<_>>>()?;
        let factor = cholesky(n, |i, j| gamma[i - j])?;
        Ok(FgnGenerator { n, hurst, factor })
    }

    /// Shared generator for `(n, hurst)`, factored once per process.
    pub fn cached(n: usize, hurst: f64) -> Result<Arc<FgnGenerator>> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, u64), Arc<FgnGenerator>>>> = OnceLock::new();
        let key = (n, hurst.to_bits());
        let cache = CACHE.get_or_init(Default::default);
        if let Some(g) = cache.lock().expect("cache lock").get(&key) {
            return Ok(g.clone());
        }
        let g = Arc::new(FgnGenerator::new(n, hurst)?);
        cache.lock().expect("cache lock").insert(key, g.clone());
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
        (0..self.n)
            .map(|i| {
                let r = i * (i + 1) / 2;
                self.factor[r..=r + i].iter().zip(&z).map(|(a, b)| a * b).sum()
            })
            .collect()
    }
}

/// Prices `S_0 .. S_T`. Metadata is absent for paths read from a file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PricePath {
    pub prices: Vec<f64>,
    pub hurst: Option<f64>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
}

impl PricePath {
    pub fn from_prices(prices: Vec<f64>) -> Result<Self> {
        if prices.len() < 2 {
            return Err(Error::Unsupported("a price path needs at least two prices".into()));
        }
        for &p in &prices {
            ensure_finite("price", p)?;
        }
        Ok(PricePath {
            prices,
            hurst: None,
            sigma: None,
            seed: None,
        })
    }

    /// Number of increments `T`.
    pub fn steps(&self) -> usize {
        self.prices.len() - 1
    }

    /// `dS_t = S_{t+1} - S_t` for `t = 0 .. T-1`.
    pub fn increments(&self) -> Vec<f64> {
        self.prices.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "price"])?;
        for (t, p) in self.prices.iter().enumerate() {
            w.write_record([t.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            t: usize,
            price: f64,
        }
        let mut prices = Vec::new();
        for (i, row) in csv::Reader::from_reader(input).deserialize::<Row>().enumerate() {
            let row = row?;
            if row.t != i {
                return Err(Error::Parse {
                    input: format!("path row {}", i + 1),
                    reason: format!("expected t = {i}, got {}", row.t),
                });
            }
            prices.push(row.price);
        }
        PricePath::from_prices(prices)
    }
}

/// `S_{t+1} = S_t + sigma X_t` with `X` fractional Gaussian noise.
pub fn generate_path(steps: usize, hurst: f64, sigma: f64, s0: f64, seed: u64) -> Result<PricePath> {
    if steps == 0 || steps > MAX_PATH_STEPS {
        return Err(Error::InvalidParameter {
            name: "steps",
            value: steps as f64,
            expected: "[1, 4096]",
        });
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "sigma",
            value: sigma,
            expected: "(0, inf)",
        });
    }
    ensure_finite("s0", s0)?;
    let noise = FgnGenerator::cached(steps, hurst)?.sample(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut prices = Vec::with_capacity(steps + 1);
    prices.push(s0);
    let mut s = s0;
    for x in noise {
        s += sigma * x;
        prices.push(s);
    }
    Ok(PricePath {
        prices,
        hurst: Some(hurst),
        sigma: Some(sigma),
        seed: Some(seed),
    })
}

/// Expert 1's holding at step `t`: `2c(S_t - S_0)` shares. Expert 2 holds the
/// opposite position.
pub fn expert_holding(path: &PricePath, c: f64, t: usize) -> f64 {
    2.0 * c * (path.prices[t] - path.prices[0])
}

/// Zero-sum game `s1_t = 2c(S_t - S_0) dS_t`, `s2_t = -s1_t`, `t = 1 .. T-1`.
pub fn expert_gains(path: &PricePath, c: f64) -> Result<GainSequence> {
    ensure_positive("c", c)?;
    let ds = path.increments();
    GainSequence::from_steps(
        GameMode::ZeroSum,
        (1..path.steps()).map(|t| {
            let s1 = expert_holding(path, c, t) * ds[t];
            (s1, -s1)
        }),
    )
}

fn ensure_positive(name: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidParameter {
            name,
            value: v,
            expected: "(0, inf)",
        })
    }
}

/// Both sides of `(S_T - S_0)^2 = sum_{t=0}^{T-1} [2(S_t - S_0) dS_t + dS_t^2]`.
pub fn displacement_identity(path: &PricePath) -> (f64, f64) {
    let s0 = path.prices[0];
    let lhs = (path.prices[path.steps()] - s0).powi(2);
    let rhs = path
        .increments()
        .iter()
        .enumerate()
        .map(|(t, d)| 2.0 * (path.prices[t] - s0) * d + d * d)
        .sum();
    (lhs, rhs)
}

/// Expert 1's total gain by direct summation and by the closed form
/// `c((S_T - S_0)^2 - sum_{t=0}^{T-1} dS_t^2)`.
pub fn expert_total_identity(path: &PricePath, c: f64) -> Result<(f64, f64)> {
    let direct = expert_gains(path, c)?.last_state().cum1;
    let s0 = path.prices[0];
    let squares: f64 = path.increments().iter().map(|d| d * d).sum();
    let closed = c * ((path.prices[path.steps()] - s0).powi(2) - squares);
    Ok((direct, closed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeStep {
    pub t: usize,
    pub shares: f64,
    pub income: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradingRecord {
    pub steps: Vec<TradeStep>,
}

impl TradingRecord {
    pub fn total(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cumulative)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "shares", "income", "cumulative"])?;
        for s in &self.steps {
            w.write_record([
                s.t.to_string(),
                s.shares.to_string(),
                s.income.to_string(),
                s.cumulative.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Holds the probability-weighted mix of both experts' positions,
/// `C_t = p_t C1_t + (1 - p_t) C2_t = (2 p_t - 1) C1_t`, so the realized
/// income is the randomized trader's expected income.
pub fn derandomized_trade(policy: &Policy, path: &PricePath, c: f64) -> Result<TradingRecord> {
    let gains = expert_gains(path, c)?;
    let ds = path.increments();
    let mut cumulative = 0.0;
    let mut steps = Vec::with_capacity(gains.len());
    for (i, &[s1, s2]) in gains.steps().iter().enumerate() {
        let t = i + 1;
        let oracle = policy.needs_oracle().then_some((s1, s2));
        let p = policy.decide_prob(&gains.state(i), oracle)?;
        let shares = (2.0 * p - 1.0) * expert_holding(path, c, t);
        let income = shares * ds[t];
        cumulative += income;
        steps.push(TradeStep {
            t,
            shares,
            income,
            cumulative,
        });
    }
    Ok(TradingRecord { steps })
}

/// Lag-`k` autocorrelation pooled over several zero-mean series.
pub fn pooled_autocorrelation(series: &[Vec<f64>], lag: usize) -> f64 {
    let (mut cross, mut pairs, mut square, mut count) = (0.0, 0usize, 0.0, 0usize);
    for xs in series {
        square += xs.iter().map(|x| x * x).sum::<f64>();
        count += xs.len();
        if xs.len() > lag {
            cross += xs.iter().zip(&xs[lag..]).map(|(a, b)| a * b).sum::<f64>();
            pairs += xs.len() - lag;
        }
    }
    (cross / pairs as f64) / (square / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::exact_trace_with;
    use crate::policy::RateSchedule;

    #[test]
    fn covariance_values() {
        for h in [0.1, 0.5, 0.9] {
            assert!((fgn_covariance(0, h).unwrap() - 1.0).abs() < 1e-15);
        }
        for k in 1..10 {
            assert!(fgn_covariance(k, 0.5).unwrap().abs() < 1e-12);
        }
        let g1 = fgn_covariance(1, 0.75).unwrap();
        assert!((g1 - 0.414_213_6).abs() < 1e-7, "{g1}");
        assert!(fgn_covariance(1, 1.0).is_err());
    }

    #[test]
    fn cholesky_reports_pivot() {
        // [[1, 2], [2, 1]] is indefinite; the second pivot is 1 - 4.
        match cholesky(2, |i, j| if i == j { 1.0 } else { 2.0 }) {
            Err(Error::NotPositiveDefinite { pivot, value }) => {
                assert_eq!(pivot, 1);
                assert!((value + 3.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let l = cholesky(2, |i, j| if i == j { 4.0 } else { 2.0 }).unwrap();
        assert_eq!(l, vec![2.0, 1.0, 3.0_f64.sqrt()]);
    }

    #[test]
    fn paths_are_deterministic() {
        let a = generate_path(256, 0.75, 1.0, 100.0, 9).unwrap();
        let b = generate_path(256, 0.75, 1.0, 100.0, 9).unwrap();
        let c = generate_path(256, 0.75, 1.0, 100.0, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.prices, c.prices);
        assert_eq!(a.prices.len(), 257);
        assert_eq!(a.prices[0], 100.0);
        assert!(generate_path(0, 0.5, 1.0, 0.0, 1).is_err());
        assert!(generate_path(4097, 0.5, 1.0, 0.0, 1).is_err());
        assert!(generate_path(8, 0.5, 0.0, 0.0, 1).is_err());
    }

    #[test]
    fn brownian_increments_uncorrelated() {
        let p = generate_path(4096, 0.5, 1.0, 0.0, 3).unwrap();
        let rho = pooled_autocorrelation(&[p.increments()], 1);
        assert!(rho.abs() < 0.05, "{rho}");
    }

    #[test]
    fn two_step_gains() {
        let p = PricePath::from_prices(vec![10.0, 12.0, 13.0]).unwrap();
        let g = expert_gains(&p, 1.0).unwrap();
        assert_eq!(g.steps(), &[[4.0, -4.0]]);
        let flat = PricePath::from_prices(vec![5.0; 6]).unwrap();
        assert!(expert_gains(&flat, 1.0).unwrap().steps().iter().all(|s| s[0] == 0.0));
        assert!(expert_gains(&p, 0.0).is_err());
    }

    #[test]
    fn identities_on_generated_paths() {
        for seed in 0..5 {
            let p = generate_path(512, 0.75, 0.5, 20.0, seed).unwrap();
            let (lhs, rhs) = displacement_identity(&p);
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
            let (direct, closed) = expert_total_identity(&p, 0.7).unwrap();
            assert!((direct - closed).abs() <= 1e-9 * closed.abs().max(1.0));
        }
    }

    #[test]
    fn uniform_trader_holds_nothing() {
        let p = generate_path(64, 0.75, 1.0, 0.0, 1).unwrap();
        let r = derandomized_trade(&Policy::Uniform, &p, 1.0).unwrap();
        assert!(r.steps.iter().all(|s| s.shares == 0.0 && s.income == 0.0));
    }

    #[test]
    fn derandomized_income_is_expected_gain() {
        let schedule = RateSchedule::zero_sum_remark(0.5).unwrap();
        let policy = Policy::fpl_with(schedule).unwrap();
        let p = generate_path(300, 0.75, 1.0, 50.0, 4).unwrap();
        let r = derandomized_trade(&policy, &p, 1.0).unwrap();
        let tr = exact_trace_with(&expert_gains(&p, 1.0).unwrap(), schedule).unwrap();
        for (a, b) in r.steps.iter().zip(&tr.steps) {
            assert!((a.income - b.l).abs() <= 1e-9 * b.l.abs().max(1.0));
            assert!((a.cumulative - b.cum_l).abs() <= 1e-9 * b.cum_l.abs().max(1.0));
        }
    }

    #[test]
    fn path_csv_round_trip() {
        let p = generate_path(16, 0.3, 1.0, 1.0, 2).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = PricePath::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.prices, p.prices);
    }
}
