//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use ufpl::adversary::{prop1_adversary, prop2_adversary, thm1_adversary, thm5_adversary, Direction, Sign};
use ufpl::eval::{check_bounds, exact_trace, exact_trace_with, monte_carlo_trace, BoundCheck, BoundName};
use ufpl::experiment::{fuzz_game, run_experiment, stream_seed, ExperimentConfig, FuzzFamily};
use ufpl::finance::{
    derandomized_trade, displacement_identity, expert_gains, expert_total_identity, fgn_covariance, generate_path,
    pooled_autocorrelation,
};
use ufpl::{comparison_probability, ExpSampler, GainSequence, Policy, RateSchedule};

type Outcome = Result<String, String>;

const MUS: [f64; 4] = [0.1, 0.382, 0.618, 0.9];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn find(checks: &[BoundCheck], name: BoundName) -> &BoundCheck {
    checks.iter().find(|c| c.name == name).expect("check present")
}

fn one_hot_corpus() -> Vec<GainSequence> {
    (0..1000u64)
        .into_par_iter()
        .map(|k| fuzz_game(FuzzFamily::OneHot, stream_seed(2024, "fuzz", k), None, 500).unwrap())
        .collect()
}

fn fbm_games() -> Vec<(f64, u64)> {
    [0.25, 0.5, 0.75]
        .iter()
        .flat_map(|&h| (0..20u64).map(move |s| (h, s)))
        .collect()
}

fn closed_form() -> Outcome {
    let start = Instant::now();
    let n = 10_000_000u64;
    let offsets = [-3.0, -1.0, 0.0, 0.5, 2.0];
    let chunks = 16u64;
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut s = ExpSampler::new(77, c);
            let mut hits = [0u64; 5];
            for _ in 0..n / chunks {
                let d = s.sample_exp() - s.sample_exp();
                for (h, &a) in hits.iter_mut().zip(&offsets) {
                    *h += u64::from(d > a);
                }
            }
            hits
        })
        .reduce(|| [0; 5], |a, b| std::array::from_fn(|i| a[i] + b[i]));
    let mut worst: f64 = 0.0;
    for (&a, &hits) in offsets.iter().zip(&counts) {
        let freq = hits as f64 / n as f64;
        let p = comparison_probability(a).map_err(|e| e.to_string())?;
        worst = worst.max((freq - p).abs());
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-3, || format!("max deviation {worst:.2e}"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("max |MC - closed form| = {worst:.1e} over 1e7 draws in {elapsed:.1?}"))
}

fn per_step_bound(corpus: &[GainSequence]) -> Outcome {
    let start = Instant::now();
    let failures: usize = corpus
        .par_iter()
        .map(|g| {
            MUS.iter()
                .filter(|&&mu| {
                    let tr = exact_trace(g, mu).unwrap();
                    let c = check_bounds(&tr, g, None).unwrap();
                    !find(&c, BoundName::Thm3Step).ok
                })
                .count()
        })
        .sum();
    let elapsed = start.elapsed();
    ensure(failures == 0, || format!("{failures} game/mu pairs violate l_t >= e^(-2/mu) r_t"))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    let steps: usize = corpus.iter().map(GainSequence::len).sum();
    Ok(format!("{} games ({steps} steps) x 4 mu, no violations, {elapsed:.1?}", corpus.len()))
}

fn ifpl_bounds(corpus: &[GainSequence]) -> Outcome {
    let bad: Vec<String> = corpus
        .par_iter()
        .enumerate()
        .flat_map_iter(|(k, g)| {
            MUS.iter().filter_map(move |&mu| {
                let tr = exact_trace(g, mu).unwrap();
                let c = check_bounds(&tr, g, None).unwrap();
                let thm4 = find(&c, BoundName::Thm4);
                let cor2 = find(&c, BoundName::Cor2);
                (!thm4.ok || !cor2.ok).then(|| format!("game {k} mu {mu}"))
            })
        })
        .collect();
    ensure(bad.is_empty(), || format!("violations: {}", bad.join("; ")))?;
    Ok(format!("r >= max - 1/eps_T and r >= (1-mu) max on {} games x 4 mu", corpus.len()))
}

fn constants_and_lowdev() -> Outcome {
    let mu: f64 = 0.618;
    let delta = 0.1;
    let general = (-2.0 / mu).exp() * (1.0 - mu);
    ensure((general - 0.015).abs() <= 0.0005, || format!("general coefficient {general}"))?;
    let lowdev = (1.0 - mu) * (1.0 - delta);
    ensure((lowdev - 0.382 * (1.0 - delta)).abs() < 1e-12, || format!("low-deviation coefficient {lowdev}"))?;
    let g = fuzz_game(FuzzFamily::Bounded, stream_seed(5, "bounded", 0), Some(10_000), 10_000)
        .map_err(|e| e.to_string())?;
    let tr = exact_trace(&g, mu).map_err(|e| e.to_string())?;
    let checks = check_bounds(&tr, &g, Some(delta)).map_err(|e| e.to_string())?;
    let c = find(&checks, BoundName::Thm2Lowdev);
    ensure(c.applicable, || format!("deviation hypothesis fails: {:?}", c.note))?;
    ensure(c.ok && c.checked == 2500, || format!("{c:?}"))?;
    Ok(format!(
        "coefficients {general:.5} and {lowdev:.4}; lowdev bound holds at all 2500 final-quartile T (tightest slack at T={})",
        c.at
    ))
}

fn theorem1_adversary() -> Outcome {
    let threshold = Policy::threshold(0.05).unwrap();
    let r = thm1_adversary(&threshold, 0.05, 0.1, 20).map_err(|e| e.to_string())?;
    ensure(r.gains.len() == 20 && r.search_failures.is_empty(), || "construction did not complete".into())?;
    let even: Vec<_> = r.checkpoints.iter().filter(|c| c.name == "leader-share").collect();
    ensure(even.len() == 10, || format!("{} even checkpoints", even.len()))?;
    ensure(r.all_satisfied(), || format!("{:?}", r.checkpoints.iter().find(|c| !c.ok)))?;
    let mu: f64 = 0.618;
    let fpl = thm1_adversary(&Policy::fpl(mu).unwrap(), 0.05, 0.1, 20).map_err(|e| e.to_string())?;
    let ceiling = 1.0 - 0.5 * (-1.0 / mu).exp();
    let f = fpl.search_failures.first().ok_or("FPL search did not fail")?;
    ensure(f.best_prob <= ceiling + 1e-12, || format!("probability {} above ceiling {ceiling}", f.best_prob))?;
    Ok(format!(
        "threshold: 10/10 even steps within 0.1 max; fpl: search fails at t={} (best {:.4} <= ceiling {ceiling:.4})",
        f.t, f.best_prob
    ))
}

fn propositions() -> Outcome {
    let policies = [Policy::Uniform, Policy::fpl(0.618).unwrap(), Policy::fpl(0.2).unwrap()];
    let mut runs = 0;
    for p in &policies {
        for dir in [Direction::Upper, Direction::Lower] {
            for delta in [0.05, 0.2, 0.5] {
                let r = prop1_adversary(p, delta, dir, 30).map_err(|e| e.to_string())?;
                ensure(r.holds_eventually(), || format!("{p} {dir:?} delta {delta}: burn-in {:?}", r.burn_in()))?;
                runs += 1;
            }
        }
        for sign in [Sign::NonNegative, Sign::NonPositive] {
            let r = prop2_adversary(p, sign, 50).map_err(|e| e.to_string())?;
            ensure(r.all_satisfied(), || format!("{p} {sign:?}"))?;
            runs += 1;
        }
    }
    Ok(format!("{runs} constructions against uniform and fpl satisfied"))
}

fn theorem5_adversary() -> Outcome {
    let p = Policy::threshold(0.05).unwrap();
    let r = thm5_adversary(&p, 0.1, 0.05, |t| t as f64, 16).map_err(|e| e.to_string())?;
    ensure(r.gains.len() == 16 && r.search_failures.is_empty(), || "construction did not complete".into())?;
    let perf = r.checkpoints.iter().filter(|c| c.name == "zero-sum-ceiling" && c.ok).count();
    let floor = r.checkpoints.iter().filter(|c| c.name == "volume-floor" && c.ok).count();
    ensure(perf == 8 && floor == 8, || format!("{perf}/8 and {floor}/8 checkpoints hold"))?;
    Ok("8/8 even steps satisfy the upper bound and V_t >= t".into())
}

fn fbm_bounds() -> Outcome {
    let results: Vec<(bool, usize, usize)> = fbm_games()
        .par_iter()
        .map(|&(h, s)| {
            let path = generate_path(1024, h, 1.0, 100.0, s).unwrap();
            let g = expert_gains(&path, 1.0).unwrap();
            let tr = exact_trace(&g, 0.618).unwrap();
            let checks = check_bounds(&tr, &g, Some(0.1)).unwrap();
            let general = find(&checks, BoundName::Thm6General);
            let low = find(&checks, BoundName::Thm6Lowdev);
            let all = checks.iter().all(|c| c.ok || !c.applicable);
            (all && general.applicable && general.checked == g.len(), usize::from(low.applicable), usize::from(low.applicable && low.ok))
        })
        .collect();
    let bad = results.iter().filter(|r| !r.0).count();
    let applicable: usize = results.iter().map(|r| r.1).sum();
    let passed: usize = results.iter().map(|r| r.2).sum();
    ensure(bad == 0 && applicable == passed, || format!("{bad} games with violations; lowdev {passed}/{applicable}"))?;
    Ok(format!("60 games: every check passes at every T; low-deviation form applicable and passing on {applicable}"))
}

fn identity_and_autocorrelation() -> Outcome {
    let mut worst: f64 = 0.0;
    for &(h, s) in &fbm_games() {
        let path = generate_path(1024, h, 1.0, 100.0, s).unwrap();
        let (lhs, rhs) = displacement_identity(&path);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        let (direct, closed) = expert_total_identity(&path, 1.0).unwrap();
        worst = worst.max((direct - closed).abs() / closed.abs().max(1.0));
    }
    ensure(worst <= 1e-9, || format!("identity error {worst:.2e}"))?;
    let series: Vec<Vec<f64>> = (0..20)
        .map(|s| generate_path(1024, 0.75, 1.0, 0.0, 1000 + s).unwrap().increments())
        .collect();
    let rho = pooled_autocorrelation(&series, 1);
    let gamma = fgn_covariance(1, 0.75).unwrap();
    ensure((rho - gamma).abs() <= 0.05, || format!("lag-1 autocorrelation {rho} vs {gamma}"))?;
    Ok(format!("identity error {worst:.1e}; lag-1 autocorrelation {rho:.4} vs {gamma:.4}"))
}

fn derandomization() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let h = [0.3, 0.5, 0.7, 0.8][k as usize % 4];
        let path = generate_path(300 + 17 * k as usize, h, 0.5 + k as f64 / 10.0, 50.0, stream_seed(9, "derand", k)).unwrap();
        let schedule = if k % 2 == 0 {
            RateSchedule::zero_sum_remark(0.618).unwrap()
        } else {
            RateSchedule::adaptive_max(0.382).unwrap()
        };
        let policy = Policy::fpl_with(schedule).unwrap();
        let trade = derandomized_trade(&policy, &path, 1.0).unwrap();
        let tr = exact_trace_with(&expert_gains(&path, 1.0).unwrap(), schedule).unwrap();
        ensure(trade.steps.len() == tr.steps.len(), || "length mismatch".into())?;
        for (a, b) in trade.steps.iter().zip(&tr.steps) {
            worst = worst.max((a.income - b.l).abs() / b.l.abs().max(1.0));
        }
    }
    ensure(worst <= 1e-9, || format!("per-step error {worst:.2e}"))?;
    Ok(format!("20 games, max per-step relative gap {worst:.1e}"))
}

fn engine_consistency() -> Outcome {
    let policy = Policy::fpl(0.618).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..10u64 {
        let g = fuzz_game(FuzzFamily::OneHot, stream_seed(11, "mc-game", k), None, 500).unwrap();
        let exact = exact_trace(&g, 0.618).unwrap().total_l();
        let est = monte_carlo_trace(&g, &policy, 100_000, stream_seed(11, "mc", k)).unwrap();
        let z = est.z_score(exact);
        ensure(z <= 4.0, || format!("game {k}: mean {} vs exact {exact}, z = {z:.2}", est.mean))?;
        worst = worst.max(z);
    }
    Ok(format!("10 games x 1e5 replicas, max |z| = {worst:.2}"))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let configs = [
        "seed = 42\nmu = 0.618\ndelta = 0.1\nreplicas = 200\n[game]\nsource = \"fuzz\"\nfamily = \"one-hot\"\ncount = 8\n",
        "seed = 42\nmu = 0.5\ndelta = 0.1\n[game]\nsource = \"fbm\"\nhurst = 0.75\nsteps = 256\nseeds = 3\nrate = \"zero-sum-remark\"\n",
        "seed = 42\nmu = 0.618\npolicy = \"threshold delta=0.05\"\n[game]\nsource = \"adversary\"\nname = \"thm5\"\ndelta = 0.1\ndelta_prime = 0.05\nhorizon = 16\n",
    ];
    let mut files = 0;
    for (i, body) in configs.iter().enumerate() {
        let mut runs = Vec::new();
        for run in ["a", "b"] {
            let out = tmp.path().join(format!("{i}-{run}"));
            let text = format!("output = {:?}\n{body}", out);
            let config = ExperimentConfig::parse(&text, Path::new("repro.toml")).map_err(|e| e.to_string())?;
            run_experiment(&config).map_err(|e| e.to_string())?;
            runs.push(snapshot(&out));
        }
        ensure(!runs[0].is_empty() && runs[0] == runs[1], || format!("config {i} outputs differ"))?;
        files += runs[0].len();
    }
    Ok(format!("3 configs run twice, {files} files byte-identical"))
}

fn main() -> ExitCode {
    let corpus = one_hot_corpus();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("closed-form comparison probability", Box::new(closed_form)),
        ("per-step FPL/IFPL ratio on fuzzed games", Box::new(|| per_step_bound(&corpus))),
        ("IFPL lower bounds on fuzzed games", Box::new(|| ifpl_bounds(&corpus))),
        ("FPL constants and low-deviation bound", Box::new(constants_and_lowdev)),
        ("unbounded-gain adversary", Box::new(theorem1_adversary)),
        ("diagonal and sign adversaries", Box::new(propositions)),
        ("zero-sum adversary", Box::new(theorem5_adversary)),
        ("zero-sum bounds on fBm games", Box::new(fbm_bounds)),
        ("displacement identity and fGn autocorrelation", Box::new(identity_and_autocorrelation)),
        ("derandomized trading equals expected gain", Box::new(derandomization)),
        ("exact engine vs Monte Carlo", Box::new(engine_consistency)),
        ("byte-identical reruns", Box::new(reproducibility)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
