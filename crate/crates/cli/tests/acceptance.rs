//! End-to-end acceptance checks, one line per criterion.
//!
//! Run all: `cargo test --release --test acceptance`.
//! Run some: `cargo test --release --test acceptance -- 5 6 11`.
//! `ACCEPTANCE_FULL=1` runs the full convergence profile instead of the reduced one.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use heavytail::benchmarks::{sample_copula_uniforms, CopulaFamily, CopulaSpec};
use heavytail::latent::normal_cdf;
use heavytail::linalg::{min_eigenvalue, repair_psd};
use heavytail::marginal_fit::{fit_marginal, MarginalFitConfig};
use heavytail::model::sample_multivariate;
use heavytail::model::{
    sample_univariate, sample_univariate_exp, ExpVariantOptions, ExpVariantParams,
};
use heavytail::moments::{moment_closed_form, tail_ratio_probe, TailSide};
use heavytail::tail_metrics::{base_config, tail_proxy};
use heavytail::{MarginalParams, ModelSpec, PairJointParams, SeedSpec};
use heavytail_cli::commands::{
    convergence_experiment, discrepancy_tables, fit_pipeline, taildep_sweep, ConvergenceRow,
};
use heavytail_cli::config::{ConvergenceSection, FitSection, RunConfig, TaildepSection};
use nalgebra::DMatrix;
use tempfile::TempDir;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

const fn minutes(m: u64) -> Option<Duration> {
    Some(Duration::from_secs(60 * m))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn uniform_in(s: &mut heavytail::latent::LatentStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * s.uniform()
}

fn moment_correctness() -> Outcome {
    let mut pick = SeedSpec::new(1, 0).stream();
    let draws = 10_000_000;
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for set in 0..50u64 {
        let p = MarginalParams {
            mu: uniform_in(&mut pick, -5.0, 5.0),
            u: uniform_in(&mut pick, 0.0, 0.8),
            v: uniform_in(&mut pick, 0.0, 0.8),
            sigma: uniform_in(&mut pick, 0.1, 3.0),
        };
        let y = sample_univariate(&p, draws, SeedSpec::new(2, set)).map_err(|e| e.to_string())?;
        for i in 1..=4 {
            let (mut sum, mut sq) = (0.0, 0.0);
            for &x in &y {
                let t = x.powi(i as i32);
                sum += t;
                sq += t * t;
            }
            let n = draws as f64;
            let mean = sum / n;
            let se = ((sq / n - mean * mean).max(0.0) / n).sqrt();
            let exact = moment_closed_form(&p, i).map_err(|e| e.to_string())?;
            let z = (mean - exact).abs() / se;
            if z > worst {
                worst = z;
                worst_at = format!("set {set}, moment {i}");
            }
        }
    }
    check(
        worst <= 5.0,
        format!("max |MC - exact| = {worst:.2} SE ({worst_at}), 200 comparisons"),
    )
}

fn tail_ratio() -> Outcome {
    let t: Vec<f64> = [2.0, 2.5, 3.0].iter().map(|x: &f64| x.exp()).collect();
    let right = MarginalParams {
        mu: 0.0,
        u: 1.0,
        v: 0.5,
        sigma: 1.0,
    };
    let up = tail_ratio_probe(&right, &t, 10_000_000, SeedSpec::new(3, 0), TailSide::Upper)
        .map_err(|e| e.to_string())?;
    let down = tail_ratio_probe(
        &right.mirrored(),
        &t,
        10_000_000,
        SeedSpec::new(3, 0),
        TailSide::Lower,
    )
    .map_err(|e| e.to_string())?;
    let r_up: Vec<f64> = up.iter().map(|r| r.ratio).collect();
    let r_down: Vec<f64> = down.iter().map(|r| r.ratio).collect();
    let in_band = r_up.iter().all(|r| (0.8..=1.3).contains(r));
    let trending = r_up
        .windows(2)
        .all(|w| (w[1] - 1.0).abs() < (w[0] - 1.0).abs());
    let mirrored = r_up.iter().zip(&r_down).all(|(a, b)| (a - b).abs() < 0.05);
    check(
        in_band && trending && mirrored,
        format!("right ratios {r_up:.3?}, left ratios {r_down:.3?}, band [0.8, 1.3] held: {in_band}, toward 1: {trending}"),
    )
}

fn survival_slope() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for rate in [1.5, 2.5] {
        let p = ExpVariantParams {
            mu: 0.0,
            rate_upper: rate,
            rate_lower: rate,
            sigma: 1.0,
        };
        let mut y = sample_univariate_exp(
            &p,
            10_000_000,
            SeedSpec::new(4, 0),
            ExpVariantOptions::default(),
        )
        .map_err(|e| e.to_string())?
        .values;
        y.sort_unstable_by(f64::total_cmp);
        let n = y.len() as f64;
        let (lo, hi) = ((1.0f64 - 0.999).ln(), (1.0f64 - 0.99995).ln());
        let pts: Vec<(f64, f64)> = (0..=20)
            .map(|k| {
                let log_sf = lo + (hi - lo) * k as f64 / 20.0;
                let q = 1.0 - log_sf.exp();
                let idx = ((q * n).ceil() as usize).min(y.len()) - 1;
                (y[idx].ln(), log_sf)
            })
            .collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        ok &= (slope + rate).abs() <= 0.1 * rate;
        details.push(format!("rate {rate}: slope {slope:.3}"));
    }
    check(ok, details.join(", "))
}

fn convergence_shape() -> Outcome {
    let full = std::env::var_os("ACCEPTANCE_FULL").is_some();
    let c = ConvergenceSection {
        log2_steps: if full {
            (0..=7).collect()
        } else {
            (0..=4).collect()
        },
        trials: if full { 20 } else { 10 },
        ..ConvergenceSection::default()
    };
    let rows = convergence_experiment(&c, &FitSection::default(), 77).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut details = vec![if full {
        "full profile".to_string()
    } else {
        "reduced profile".to_string()
    }];
    for panel in ["marginal", "all"] {
        let errs: Vec<f64> = rows
            .iter()
            .filter(|r: &&ConvergenceRow| r.panel == panel)
            .map(|r| r.mean_l2_error)
            .collect();
        let inversions = errs.windows(2).filter(|w| w[1] > w[0]).count();
        let halved = !full || errs[errs.len() - 1] <= errs[0] / 2.0;
        ok &= inversions <= 1 && halved;
        details.push(format!("{panel} {errs:.4?} inversions {inversions}"));
    }
    check(ok, details.join("; "))
}

fn sweep(
    parameter: &str,
    draws: usize,
    tau: Vec<f64>,
) -> Result<Vec<heavytail_cli::commands::TaildepPoint>, String> {
    let t = TaildepSection {
        parameter: parameter.into(),
        draws,
        tau_grid: tau,
        ..TaildepSection::default()
    };
    taildep_sweep(&t, 55).map_err(|e| e.to_string())
}

fn spread(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
}

fn increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

fn correlation_sweep() -> Outcome {
    let grid = vec![0.01];
    let rho3: Vec<f64> = sweep("rho3", 1_000_000, grid.clone())?
        .iter()
        .map(|p| p.correlation)
        .collect();
    let u1: Vec<f64> = sweep("u1", 1_000_000, grid)?
        .iter()
        .map(|p| p.correlation)
        .collect();
    check(
        increasing(&rho3) && spread(&rho3) > 0.3 && spread(&u1) < 0.05,
        format!(
            "corr over rho3 {rho3:.3?} (spread {:.3}), over u1 {u1:.3?} (spread {:.3})",
            spread(&rho3),
            spread(&u1)
        ),
    )
}

fn lower_tail_sweep() -> Outcome {
    let lam = |name: &str| -> Result<Vec<f64>, String> {
        Ok(sweep(name, 10_000_000, vec![0.01])?
            .iter()
            .map(|p| p.lower.lambda[0])
            .collect())
    };
    let (v1, rho2, u1) = (lam("v1")?, lam("rho2")?, lam("u1")?);
    check(
        increasing(&v1) && increasing(&rho2) && spread(&u1) < 0.05,
        format!("lower lambda(0.01) over v1 {v1:.3?}, over rho2 {rho2:.3?}, over u1 {u1:.3?} (spread {:.3})", spread(&u1)),
    )
}

fn degenerate_normal() -> Outcome {
    let p = MarginalParams {
        mu: 0.7,
        u: 0.0,
        v: 0.0,
        sigma: 1.3,
    };
    let mut y = sample_univariate(&p, 1_000_000, SeedSpec::new(7, 0)).map_err(|e| e.to_string())?;
    y.sort_unstable_by(f64::total_cmp);
    let n = y.len() as f64;
    let d = y
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = normal_cdf((x - p.mu) / p.sigma);
            (f - k as f64 / n).max((k + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let critical = 1.6276 / n.sqrt();
    check(
        d < critical,
        format!("KS D = {d:.2e}, critical value at 0.01 = {critical:.2e}"),
    )
}

fn recovery() -> Outcome {
    let truth = MarginalParams {
        mu: 1.0,
        u: 0.6,
        v: 0.3,
        sigma: 0.8,
    };
    let cfg = MarginalFitConfig::default();
    let mut marginal = 0.0;
    for s in 0..20u64 {
        let y = sample_univariate(&truth, 1_000_000, SeedSpec::new(800, s))
            .map_err(|e| e.to_string())?;
        let r = fit_marginal(&y, &cfg, SeedSpec::new(801, s)).map_err(|e| e.to_string())?;
        marginal += dist(&r.params.as_array(), &truth.as_array()) / 20.0;
    }
    let m = MarginalParams {
        mu: 0.0,
        u: 0.8,
        v: 0.8,
        sigma: 0.5,
    };
    let rho = PairJointParams {
        upper: 0.8,
        lower: 0.3,
        body: 0.5,
    };
    let spec = ModelSpec::bivariate(m, m, rho);
    let mut pair = 0.0;
    for s in 0..20u64 {
        let data = sample_multivariate(&spec, 1_280_000, SeedSpec::new(802, s))
            .map_err(|e| e.to_string())?;
        let f = fit_pipeline(&data, &FitSection::default(), 803 + s).map_err(|e| e.to_string())?;
        let est = f.assembly.as_ref().ok_or("no joint stage")?.pairs[0]
            .result
            .params;
        pair += dist(&est.as_array(), &rho.as_array()) / 20.0;
    }
    check(
        marginal <= 0.1 && pair <= 0.15,
        format!("mean L2 marginal {marginal:.4} (<= 0.1), pair {pair:.4} (<= 0.15), 20 seeds each"),
    )
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn discrepancy_ranking() -> Outcome {
    let m = MarginalParams {
        mu: 0.0,
        u: 0.8,
        v: 0.8,
        sigma: 0.5,
    };
    let spec = ModelSpec::bivariate(
        m,
        m,
        PairJointParams {
            upper: 0.8,
            lower: 0.8,
            body: 0.3,
        },
    );
    let mut cfg = RunConfig::default();
    cfg.discrepancy.families = vec![CopulaFamily::Normal];
    let mut wins = 0;
    let mut pairs = Vec::new();
    for s in 0..10u64 {
        let data = sample_multivariate(&spec, 1_000_000, SeedSpec::new(900, s))
            .map_err(|e| e.to_string())?;
        let (_, tables) = discrepancy_tables(&cfg, &data, 901 + s).map_err(|e| e.to_string())?;
        let reports = &tables[0].reports;
        let (normal, ours) = (reports[0].d, reports[1].d);
        if ours < normal {
            wins += 1;
        }
        pairs.push(format!("{ours:.1e}/{normal:.1e}"));
    }
    check(
        wins >= 8,
        format!(
            "ours below normal copula in {wins}/10 seeds (D ours/normal: {})",
            pairs.join(" ")
        ),
    )
}

fn copula_oracles() -> Outcome {
    let theta = 2.0f64;
    let (cx, cy) = sample_copula_uniforms(
        &CopulaSpec::Clayton { theta },
        10_000_000,
        SeedSpec::new(10, 0),
    )
    .map_err(|e| e.to_string())?;
    let clayton = tail_proxy(&cx, &cy, &[0.01], TailSide::Lower)
        .map_err(|e| e.to_string())?
        .lambda[0];
    let (gx, gy) = sample_copula_uniforms(
        &CopulaSpec::Gumbel { theta },
        10_000_000,
        SeedSpec::new(10, 1),
    )
    .map_err(|e| e.to_string())?;
    let gumbel = tail_proxy(&gx, &gy, &[0.01], TailSide::Upper)
        .map_err(|e| e.to_string())?
        .lambda[0];
    let (lc, lg) = (2f64.powf(-1.0 / theta), 2.0 - 2f64.powf(1.0 / theta));
    check(
        (clayton - lc).abs() <= 0.05 && (gumbel - lg).abs() <= 0.05,
        format!("Clayton lower {clayton:.4} vs {lc:.4}, Gumbel upper {gumbel:.4} vs {lg:.4}"),
    )
}

fn psd_repair() -> Outcome {
    let mut s = SeedSpec::new(11, 0).stream();
    let (mut worst_eig, mut worst_diag, mut worst_idem) = (f64::MAX, 0.0f64, 0.0f64);
    let mut made = 0;
    while made < 100 {
        let n = 3 + (s.uniform() * 6.0) as usize;
        let mut a = DMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..i {
                let x = uniform_in(&mut s, -1.0, 1.0);
                a[(i, j)] = x;
                a[(j, i)] = x;
            }
        }
        if min_eigenvalue(&a) >= 0.0 {
            continue;
        }
        made += 1;
        let r = repair_psd(&a, 1e-6);
        worst_eig = worst_eig.min(min_eigenvalue(&r));
        worst_diag = worst_diag.max((0..n).map(|i| (r[(i, i)] - 1.0).abs()).fold(0.0, f64::max));
        worst_idem = worst_idem.max((repair_psd(&r, 1e-6) - &r).amax());
    }
    check(
        worst_eig >= 1e-6 && worst_diag <= 1e-12 && worst_idem <= 1e-12,
        format!("min eigenvalue {worst_eig:.3e}, max |diag - 1| {worst_diag:.1e}, max idempotence gap {worst_idem:.1e}"),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_heavytail"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    match o.status.code() {
        Some(0) | Some(3) => Ok(()),
        c => Err(format!(
            "{args:?} exited {c:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        )),
    }
}

fn determinism() -> Outcome {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let base = serde_json::to_string(&base_config()).map_err(|e| e.to_string())?;
    let cfg = format!(
        r#"{{"seed": 12,
  "sample": {{"draws": 50000, "model": {base}}},
  "fit": {{"joint": {{"sim_draws": 100000}}}},
  "convergence": {{"base_size": 2000, "log2_steps": [0, 1], "trials": 2}},
  "taildep": {{"parameter": "rho2", "draws": 100000}},
  "discrepancy": {{"sim_draws": 100000}}}}"#
    );
    let cfg_path = root.join("cfg.json");
    fs::write(&cfg_path, cfg).map_err(|e| e.to_string())?;
    let c = cfg_path.to_str().unwrap();
    let data = root.join("data");
    run_cli(&["sample", "--config", c, "--out", data.to_str().unwrap()])?;
    let csv = data.join("samples.csv");
    let mut checked = Vec::new();
    for cmd in ["sample", "fit", "convergence", "taildep", "discrepancy"] {
        let mut runs = Vec::new();
        for (rep, threads) in [(0, "1"), (1, "2")] {
            let out = root.join(format!("{cmd}-{rep}"));
            let mut args = vec![
                cmd,
                "--config",
                c,
                "--out",
                out.to_str().unwrap(),
                "--threads",
                threads,
            ];
            if matches!(cmd, "fit" | "discrepancy") {
                args.extend(["--data", csv.to_str().unwrap()]);
            }
            run_cli(&args)?;
            runs.push(snapshot(&out));
        }
        if runs[0] != runs[1] {
            return Err(format!("{cmd}: outputs differ between reruns"));
        }
        checked.push(format!("{cmd} ({} files)", runs[0].len()));
    }
    Ok(format!(
        "byte-identical reruns (1 and 2 threads): {}",
        checked.join(", ")
    ))
}

const CRITERIA: [Criterion; 12] = [
    Criterion {
        id: 1,
        name: "moment correctness",
        budget: minutes(5),
        run: moment_correctness,
    },
    Criterion {
        id: 2,
        name: "log-normal tail ratio",
        budget: minutes(2),
        run: tail_ratio,
    },
    Criterion {
        id: 3,
        name: "exponential-variant survival slope",
        budget: minutes(2),
        run: survival_slope,
    },
    Criterion {
        id: 4,
        name: "convergence shape",
        budget: None,
        run: convergence_shape,
    },
    Criterion {
        id: 5,
        name: "correlation sweep",
        budget: minutes(1),
        run: correlation_sweep,
    },
    Criterion {
        id: 6,
        name: "lower tail dependence sweep",
        budget: minutes(10),
        run: lower_tail_sweep,
    },
    Criterion {
        id: 7,
        name: "degenerate normal KS",
        budget: None,
        run: degenerate_normal,
    },
    Criterion {
        id: 8,
        name: "self-recovery",
        budget: None,
        run: recovery,
    },
    Criterion {
        id: 9,
        name: "discrepancy ranking",
        budget: minutes(30),
        run: discrepancy_ranking,
    },
    Criterion {
        id: 10,
        name: "copula tail oracles",
        budget: None,
        run: copula_oracles,
    },
    Criterion {
        id: 11,
        name: "PSD repair",
        budget: None,
        run: psd_repair,
    },
    Criterion {
        id: 12,
        name: "CLI determinism",
        budget: None,
        run: determinism,
    },
];

fn main() {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    for c in CRITERIA
        .iter()
        .filter(|c| wanted.is_empty() || wanted.contains(&c.id))
    {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let took = start.elapsed();
        if let (Ok(d), Some(b)) = (&outcome, c.budget) {
            if took > b {
                outcome = Err(format!("{d}; over the {} s budget", b.as_secs()));
            }
        }
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "criterion {:>2} {tag} [{:>6.1} s] {}: {detail}",
            c.id,
            took.as_secs_f64(),
            c.name
        );
        if outcome.is_err() {
            failed.push(c.id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
