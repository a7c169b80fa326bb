//! Rank-based tail diagnostics: tail-dependence proxy curves, joint τ-quantiles
//! and the discrepancy between a model and data.
//!
//! Everything here works on ranks, with ties broken by original index, so any
//! strictly increasing transform of a coordinate leaves the results unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::latent::SeedSpec;
use crate::model::{sample_multivariate, MarginalParams, ModelSpec, PairJointParams};
pub use crate::moments::TailSide;

/// The ten levels of the discrepancy: 0.01..0.05 (lower) and 0.95..0.99 (upper).
pub const DISCREPANCY_TAUS: [f64; 10] =
    [0.01, 0.02, 0.03, 0.04, 0.05, 0.95, 0.96, 0.97, 0.98, 0.99];

/// Values each swept parameter takes in a sensitivity run.
pub const SWEEP_VALUES: [f64; 3] = [0.3, 0.6, 0.9];

/// 25 log-spaced points in `[0.001, 0.1]`.
pub fn default_tau_grid() -> Vec<f64> {
    (0..25)
        .map(|k| 10f64.powf(-3.0 + 2.0 * k as f64 / 24.0))
        .collect()
}

/// Total order on floats in which `-0.0 == 0.0`.
pub(crate) fn cmp_values(a: f64, b: f64) -> std::cmp::Ordering {
    if a == b {
        std::cmp::Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// 1-based ranks; ties keep their original order.
pub fn ranks(x: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_unstable_by(|&a, &b| cmp_values(x[a], x[b]).then(a.cmp(&b)));
    let mut r = vec![0; x.len()];
    for (pos, &k) in idx.iter().enumerate() {
        r[k] = pos + 1;
    }
    r
}

pub fn sample_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut c, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        c += da * db;
        vx += da * da;
        vy += db * db;
    }
    if vx > 0.0 && vy > 0.0 {
        Ok(c / (vx * vy).sqrt())
    } else {
        Err(Error::InvalidData(
            "correlation of a constant series".into(),
        ))
    }
}

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < min_len {
        return Err(Error::InsufficientSample(format!(
            "need at least {min_len} observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData(
            "sample contains non-finite values".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub side: TailSide,
    pub tau: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Empirical `λ̂(τ)`: the share of the `⌈τK⌉` most extreme observations of `x` on
/// `side` whose partner is also among the `⌈τK⌉` most extreme of `y`.
pub fn tail_proxy(x: &[f64], y: &[f64], tau_grid: &[f64], side: TailSide) -> Result<TailCurve> {
    check_pair(x, y, 1)?;
    if tau_grid.is_empty() {
        return Err(invalid("tau grid is empty"));
    }
    if tau_grid.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || tau_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(invalid(
            "tau grid must be strictly increasing inside (0, 1)",
        ));
    }
    let k = x.len();
    if tau_grid[0] * (k as f64) < 50.0 {
        return Err(Error::InsufficientSample(format!(
            "tau = {} leaves fewer than 50 tail observations out of {k}",
            tau_grid[0]
        )));
    }
    let w = extremal_levels(x, y, side);
    let mut sorted = w;
    sorted.sort_unstable();
    let lambda = tau_grid
        .iter()
        .map(|&t| {
            let m = tail_count(t, k);
            let joint = sorted.partition_point(|&v| v <= m);
            joint as f64 / m as f64
        })
        .collect();
    Ok(TailCurve {
        side,
        tau: tau_grid.to_vec(),
        lambda,
    })
}

/// `⌈τK⌉`, guarded against `τK` landing a rounding error above an integer.
fn tail_count(tau: f64, k: usize) -> usize {
    let raw = tau * k as f64;
    let m = (raw - raw.abs() * 1e-12).ceil();
    (m.max(1.0) as usize).min(k)
}

/// Per row, the larger of the two tail ranks counted from `side`.
fn extremal_levels(x: &[f64], y: &[f64], side: TailSide) -> Vec<usize> {
    let k = x.len();
    let (rx, ry) = (ranks(x), ranks(y));
    rx.iter()
        .zip(&ry)
        .map(|(&a, &b)| match side {
            TailSide::Lower => a.max(b),
            TailSide::Upper => (k + 1 - a).max(k + 1 - b),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileSource {
    Empirical,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointQuantileResult {
    pub tau: f64,
    pub tau_star: f64,
    pub side: TailSide,
    pub source: QuantileSource,
}

/// Joint τ-quantile solver on one pair, with ranks computed once.
///
/// Lower side: the smallest level `τ* = m/K` at which
/// `#{k : rank(xₖ) ≤ m and rank(yₖ) ≤ m} ≥ τK`. Upper side mirrors it on
/// descending ranks, `τ* = 1 − m/K` with joint count `≥ (1 − τ)K`.
#[derive(Debug, Clone)]
pub struct JointQuantileSolver {
    k: usize,
    lower: Vec<usize>,
    upper: Vec<usize>,
}

impl JointQuantileSolver {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        check_pair(x, y, 1)?;
        let mut lower = extremal_levels(x, y, TailSide::Lower);
        let mut upper = extremal_levels(x, y, TailSide::Upper);
        lower.sort_unstable();
        upper.sort_unstable();
        Ok(Self {
            k: x.len(),
            lower,
            upper,
        })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn solve(&self, tau: f64, side: TailSide) -> Result<f64> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(invalid(format!("tau must lie in [0, 1], got {tau}")));
        }
        let (mass, levels) = match side {
            TailSide::Lower => (tau, &self.lower),
            TailSide::Upper => (1.0 - tau, &self.upper),
        };
        if mass == 0.0 {
            return Ok(match side {
                TailSide::Lower => 0.0,
                TailSide::Upper => 1.0,
            });
        }
        if mass * (self.k as f64) < 20.0 {
            return Err(Error::InsufficientSample(format!(
                "joint quantile at tau = {tau} needs at least 20 tail observations, sample has {}",
                self.k
            )));
        }
        let need = tail_count(mass, self.k);
        let m = *levels
            .get(need - 1)
            .ok_or_else(|| invalid("joint tail mass unattainable"))?;
        let level = m as f64 / self.k as f64;
        Ok(match side {
            TailSide::Lower => level,
            TailSide::Upper => 1.0 - level,
        })
    }
}

pub fn joint_quantile_empirical(
    x: &[f64],
    y: &[f64],
    tau: f64,
    side: TailSide,
) -> Result<JointQuantileResult> {
    let tau_star = JointQuantileSolver::new(x, y)?.solve(tau, side)?;
    Ok(JointQuantileResult {
        tau,
        tau_star,
        side,
        source: QuantileSource::Empirical,
    })
}

fn simulate_pair(m: &ModelSpec, sim_draws: usize, seed: SeedSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if m.dim() != 2 {
        return Err(invalid(format!(
            "expected a two-dimensional model, got {}",
            m.dim()
        )));
    }
    let s = sample_multivariate(m, sim_draws, seed)?;
    let mut c = s.into_columns();
    let y = c.pop().unwrap();
    Ok((c.pop().unwrap(), y))
}

pub fn joint_quantile_model(
    m: &ModelSpec,
    tau: f64,
    side: TailSide,
    sim_draws: usize,
    seed: SeedSpec,
) -> Result<JointQuantileResult> {
    let (x, y) = simulate_pair(m, sim_draws, seed)?;
    let tau_star = JointQuantileSolver::new(&x, &y)?.solve(tau, side)?;
    Ok(JointQuantileResult {
        tau,
        tau_star,
        side,
        source: QuantileSource::Model,
    })
}

/// Lower side for `τ < 0.5`, upper otherwise.
pub fn side_for(tau: f64) -> TailSide {
    if tau < 0.5 {
        TailSide::Lower
    } else {
        TailSide::Upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRow {
    pub tau: f64,
    pub side: TailSide,
    pub tau_star_model: f64,
    pub tau_star_data: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub label: String,
    pub rows: Vec<DiscrepancyRow>,
    pub d: f64,
}

/// `D = Σ (τ*_model − τ*_data)²` with both sides read from samples.
pub fn discrepancy_from_samples(
    label: &str,
    data: (&[f64], &[f64]),
    model: (&[f64], &[f64]),
    taus: &[f64],
) -> Result<DiscrepancyReport> {
    let ds = JointQuantileSolver::new(data.0, data.1)?;
    let ms = JointQuantileSolver::new(model.0, model.1)?;
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let side = side_for(tau);
        rows.push(DiscrepancyRow {
            tau,
            side,
            tau_star_model: ms.solve(tau, side)?,
            tau_star_data: ds.solve(tau, side)?,
        });
    }
    let d = rows
        .iter()
        .map(|r| (r.tau_star_model - r.tau_star_data).powi(2))
        .sum();
    Ok(DiscrepancyReport {
        label: label.to_string(),
        rows,
        d,
    })
}

/// Discrepancy of a fitted two-dimensional model against data.
pub fn discrepancy(
    label: &str,
    x: &[f64],
    y: &[f64],
    fitted: &ModelSpec,
    taus: &[f64],
    sim_draws: usize,
    seed: SeedSpec,
) -> Result<DiscrepancyReport> {
    let (sx, sy) = simulate_pair(fitted, sim_draws, seed)?;
    discrepancy_from_samples(label, (x, y), (&sx, &sy), taus)
}

/// Reference configuration for sensitivity sweeps: both dimensions
/// `μ=0, u=v=0.8, σ=2`, and `ρ¹=ρ²=ρ³=0.5`.
pub fn base_config() -> ModelSpec {
    let m = MarginalParams {
        mu: 0.0,
        u: 0.8,
        v: 0.8,
        sigma: 2.0,
    };
    ModelSpec::bivariate(
        m,
        m,
        PairJointParams {
            upper: 0.5,
            lower: 0.5,
            body: 0.5,
        },
    )
}

/// Names accepted by [`with_parameter`].
pub const SWEEP_PARAMETERS: [&str; 11] = [
    "mu1", "u1", "v1", "sigma1", "mu2", "u2", "v2", "sigma2", "rho1", "rho2", "rho3",
];

/// Copy of a bivariate spec with one named parameter replaced.
pub fn with_parameter(spec: &ModelSpec, name: &str, value: f64) -> Result<ModelSpec> {
    if spec.dim() != 2 {
        return Err(invalid("parameter sweeps need a two-dimensional model"));
    }
    let mut a = spec.marginals[0];
    let mut b = spec.marginals[1];
    let mut p = spec.pair_params(0, 1);
    match name {
        "mu1" => a.mu = value,
        "u1" => a.u = value,
        "v1" => a.v = value,
        "sigma1" => a.sigma = value,
        "mu2" => b.mu = value,
        "u2" => b.u = value,
        "v2" => b.v = value,
        "sigma2" => b.sigma = value,
        "rho1" => p.upper = value,
        "rho2" => p.lower = value,
        "rho3" => p.body = value,
        _ => {
            return Err(invalid(format!(
                "unknown parameter '{name}', expected one of {}",
                SWEEP_PARAMETERS.join(", ")
            )))
        }
    }
    let out = ModelSpec::bivariate(a, b, p);
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::draw_iid;
    use crate::LatentKind;

    fn normals(k: usize, seed: u64) -> Vec<f64> {
        draw_iid(LatentKind::StandardNormal, k, SeedSpec::from_seed(seed)).unwrap()
    }

    /// Independent route: bisection over the level on raw joint counts.
    fn bisect_lower(x: &[f64], y: &[f64], tau: f64) -> f64 {
        let k = x.len();
        let (rx, ry) = (ranks(x), ranks(y));
        let joint = |m: usize| {
            rx.iter()
                .zip(&ry)
                .filter(|(&a, &b)| a <= m && b <= m)
                .count()
        };
        let need = (tau * k as f64).ceil() as usize;
        let (mut lo, mut hi) = (0usize, k);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if joint(mid) >= need {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi as f64 / k as f64
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = default_tau_grid();
        assert_eq!(g.len(), 25);
        assert!((g[0] - 0.001).abs() < 1e-15 && (g[24] - 0.1).abs() < 1e-15);
        let r = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-12));
    }

    #[test]
    fn ranks_break_ties_by_index() {
        assert_eq!(ranks(&[2.0, 1.0, 2.0, 0.5]), vec![3, 2, 4, 1]);
        assert_eq!(ranks(&[0.0, -0.0]), vec![1, 2]);
    }

    #[test]
    fn comonotone_proxy_is_one() {
        let x = normals(100_000, 1);
        let grid = default_tau_grid();
        for side in [TailSide::Lower, TailSide::Upper] {
            let c = tail_proxy(&x, &x, &grid, side).unwrap();
            assert!(c.lambda.iter().all(|&l| l == 1.0));
        }
    }

    #[test]
    fn independent_proxy_is_tau() {
        let (x, y) = (normals(10_000_000, 2), normals(10_000_000, 3));
        let grid: Vec<f64> = (1..=10).map(|k| 0.01 * k as f64).collect();
        for side in [TailSide::Lower, TailSide::Upper] {
            let c = tail_proxy(&x, &y, &grid, side).unwrap();
            for (t, l) in c.tau.iter().zip(&c.lambda) {
                assert!((l - t).abs() <= 0.005, "{side:?} {t} {l}");
            }
        }
    }

    #[test]
    fn proxy_is_symmetric_bounded_and_guards_the_grid() {
        let x = normals(20_000, 4);
        let y: Vec<f64> = x
            .iter()
            .zip(normals(20_000, 5))
            .map(|(a, b)| 0.6 * a + 0.8 * b)
            .collect();
        let grid = [0.005, 0.01, 0.05];
        let a = tail_proxy(&x, &y, &grid, TailSide::Lower).unwrap();
        let b = tail_proxy(&y, &x, &grid, TailSide::Lower).unwrap();
        assert_eq!(a, b);
        assert!(a.lambda.iter().all(|l| (0.0..=1.0).contains(l)));
        assert!(matches!(
            tail_proxy(&x, &y, &[0.001], TailSide::Lower),
            Err(Error::InsufficientSample(_))
        ));
        assert!(tail_proxy(&x, &y, &[0.05, 0.01], TailSide::Lower).is_err());
    }

    #[test]
    fn joint_quantile_examples() {
        let x = normals(100_000, 6);
        let r = joint_quantile_empirical(&x, &x, 0.03, TailSide::Lower).unwrap();
        assert!((r.tau_star - 0.03).abs() <= 1e-5);
        let r = joint_quantile_empirical(&x, &x, 0.97, TailSide::Upper).unwrap();
        assert!((r.tau_star - 0.97).abs() <= 1e-5);
        assert_eq!(
            joint_quantile_empirical(&x, &x, 1.0, TailSide::Lower)
                .unwrap()
                .tau_star,
            1.0
        );

        let (a, b) = (normals(1_000_000, 7), normals(1_000_000, 8));
        let r = joint_quantile_empirical(&a, &b, 0.01, TailSide::Lower).unwrap();
        assert!((r.tau_star - 0.1).abs() <= 0.01, "{r:?}");
        let r = joint_quantile_empirical(&a, &b, 0.99, TailSide::Upper).unwrap();
        assert!((r.tau_star - 0.9).abs() <= 0.01, "{r:?}");
        assert!(joint_quantile_empirical(&a[..100], &b[..100], 0.01, TailSide::Lower).is_err());
    }

    #[test]
    fn order_statistic_matches_bisection() {
        let x = normals(50_000, 9);
        let y: Vec<f64> = x
            .iter()
            .zip(normals(50_000, 10))
            .map(|(a, b)| 0.3 * a + b)
            .collect();
        let s = JointQuantileSolver::new(&x, &y).unwrap();
        for tau in [0.001, 0.01, 0.02, 0.05, 0.2, 0.7] {
            assert_eq!(
                s.solve(tau, TailSide::Lower).unwrap(),
                bisect_lower(&x, &y, tau)
            );
            let nx: Vec<f64> = x.iter().map(|v| -v).collect();
            let ny: Vec<f64> = y.iter().map(|v| -v).collect();
            let upper = s.solve(1.0 - tau, TailSide::Upper).unwrap();
            let mirrored = bisect_lower(&nx, &ny, tau);
            assert!(
                (upper - (1.0 - mirrored)).abs() < 1e-12,
                "{upper} {mirrored}"
            );
        }
    }

    #[test]
    fn joint_quantile_is_monotone_bounded_and_rank_invariant() {
        let x = normals(200_000, 11);
        let y: Vec<f64> = x
            .iter()
            .zip(normals(200_000, 12))
            .map(|(a, b)| 0.5 * a + b)
            .collect();
        let s = JointQuantileSolver::new(&x, &y).unwrap();
        let taus: Vec<f64> = (1..=99).map(|k| k as f64 / 100.0).collect();
        let lower: Vec<f64> = taus
            .iter()
            .map(|&t| s.solve(t, TailSide::Lower).unwrap())
            .collect();
        let upper: Vec<f64> = taus
            .iter()
            .map(|&t| s.solve(t, TailSide::Upper).unwrap())
            .collect();
        assert!(lower.windows(2).all(|w| w[0] <= w[1]));
        assert!(upper.windows(2).all(|w| w[0] <= w[1]));
        for ((t, l), u) in taus.iter().zip(&lower).zip(&upper) {
            assert!(*l >= *t && *l <= 1.0);
            assert!(*u <= *t && *u >= 0.0);
        }
        let ex: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let cy: Vec<f64> = y.iter().map(|v| v * v * v + 2.0).collect();
        let t = JointQuantileSolver::new(&ex, &cy).unwrap();
        for &tau in &DISCREPANCY_TAUS {
            let side = side_for(tau);
            assert_eq!(s.solve(tau, side).unwrap(), t.solve(tau, side).unwrap());
        }
    }

    #[test]
    fn model_joint_quantile_limits() {
        let m = MarginalParams::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let spec = ModelSpec::independent(vec![m, m]);
        let r = joint_quantile_model(
            &spec,
            0.01,
            TailSide::Lower,
            10_000_000,
            SeedSpec::from_seed(13),
        )
        .unwrap();
        assert!((r.tau_star - 0.1).abs() <= 0.01, "{r:?}");

        let h = MarginalParams::new(0.0, 0.5, 0.5, 1.0).unwrap();
        let near = ModelSpec::bivariate(h, h, PairJointParams::new(0.999, 0.999, 0.999).unwrap());
        let a = joint_quantile_model(
            &near,
            0.03,
            TailSide::Lower,
            200_000,
            SeedSpec::from_seed(14),
        )
        .unwrap();
        assert!((a.tau_star - 0.03).abs() <= 0.02, "{a:?}");
        let b = joint_quantile_model(
            &near,
            0.03,
            TailSide::Lower,
            200_000,
            SeedSpec::from_seed(14),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn discrepancy_self_and_model() {
        let x = normals(100_000, 15);
        let y: Vec<f64> = x
            .iter()
            .zip(normals(100_000, 16))
            .map(|(a, b)| a + b)
            .collect();
        let r = discrepancy_from_samples("self", (&x, &y), (&x, &y), &DISCREPANCY_TAUS).unwrap();
        assert_eq!(r.d, 0.0);
        assert_eq!(r.rows.len(), 10);

        let spec = {
            let m = MarginalParams::new(0.0, 0.8, 0.8, 0.5).unwrap();
            ModelSpec::bivariate(m, m, PairJointParams::new(0.8, 0.8, 0.3).unwrap())
        };
        let s = sample_multivariate(&spec, 1_000_000, SeedSpec::from_seed(17)).unwrap();
        let r = discrepancy(
            "self-spec",
            s.column(0),
            s.column(1),
            &spec,
            &DISCREPANCY_TAUS,
            1_000_000,
            SeedSpec::from_seed(18),
        )
        .unwrap();
        assert!(r.d <= 1e-3, "{r:?}");
        assert!(r.d >= 0.0);
    }

    #[test]
    fn sweep_parameters() {
        let b = base_config();
        b.validate().unwrap();
        let s = with_parameter(&b, "v1", 0.3).unwrap();
        assert_eq!(s.marginals[0].v, 0.3);
        assert_eq!(s.marginals[1], b.marginals[1]);
        assert_eq!(
            with_parameter(&b, "rho3", 0.9)
                .unwrap()
                .sigma_body
                .get(0, 1),
            0.9
        );
        assert!(with_parameter(&b, "nu", 0.3).is_err());
        assert!(with_parameter(&b, "rho1", 1.5).is_err());
    }

    #[test]
    fn correlation_basics() {
        let x = normals(1000, 19);
        assert!((sample_correlation(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(sample_correlation(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
