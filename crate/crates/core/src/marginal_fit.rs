//! Per-dimension estimation of `(μ, u, v, σ)` by matching the four closed-form
//! raw moments to sample moments.
//!
//! The moment system is solved by alternating two block problems: `(μ, σ)` against
//! the first two moments with `(u, v)` frozen, then `(u, v)` against the third and
//! fourth with `(μ, σ)` frozen. The whole alternation runs twice: once on the
//! mean-centered data, and once more after also subtracting the first pass's
//! location estimate. The reported location is shifted back to the data's frame.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::latent::SeedSpec;
use crate::model::MarginalParams;
use crate::moments::{closed_form_moments, MomentVector};
use crate::optim::{nelder_mead, SimplexOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarginalFitConfig {
    pub max_outer_iters: usize,
    /// Per-block improvement threshold for the outer loop.
    pub block_tol: f64,
    pub u_max: f64,
    pub v_max: f64,
    pub sigma_max: f64,
    pub restarts: usize,
    /// Divide the third/fourth moment residuals by `max(1, |m_i|)`.
    pub scale_high_moments: bool,
}

impl Default for MarginalFitConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 200,
            block_tol: 1e-10,
            u_max: 3.0,
            v_max: 3.0,
            sigma_max: 1e6,
            restarts: 0,
            scale_high_moments: false,
        }
    }
}

impl MarginalFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 {
            return Err(invalid("max_outer_iters must be positive"));
        }
        if !(self.block_tol > 0.0) {
            return Err(invalid("block_tol must be positive"));
        }
        if !(self.u_max > 0.0 && self.u_max <= 3.0 && self.v_max > 0.0 && self.v_max <= 3.0) {
            return Err(invalid("u_max and v_max must lie in (0, 3]"));
        }
        if !(self.sigma_max > 0.0) {
            return Err(invalid("sigma_max must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    LocationScale,
    Tails,
}

/// One block minimization: its objective before and after the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockStep {
    pub stage: u8,
    pub block: Block,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFitResult {
    pub params: MarginalParams,
    /// `E[Yⁱ] − mᵢ` at the returned parameters, on the original data.
    pub residuals: MomentVector,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip)]
    pub trace: Vec<BlockStep>,
}

/// Plain averages `(1/K)·Σ yᵏ`, no bias correction.
pub fn sample_moments(y: &[f64]) -> Result<MomentVector> {
    if y.is_empty() {
        return Err(Error::InvalidData(
            "cannot take moments of an empty sample".into(),
        ));
    }
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidData(
            "sample contains non-finite values".into(),
        ));
    }
    let mut s = [0.0; 4];
    for &x in y {
        let x2 = x * x;
        s[0] += x;
        s[1] += x2;
        s[2] += x2 * x;
        s[3] += x2 * x2;
    }
    let n = y.len() as f64;
    Ok(MomentVector(s.map(|v| v / n)))
}

struct Problem<'a> {
    target: MomentVector,
    cfg: &'a MarginalFitConfig,
}

impl Problem<'_> {
    fn weights(&self) -> [f64; 2] {
        if self.cfg.scale_high_moments {
            [
                1.0 / self.target.get(3).abs().max(1.0),
                1.0 / self.target.get(4).abs().max(1.0),
            ]
        } else {
            [1.0, 1.0]
        }
    }

    fn location_scale_objective(&self, p: &MarginalParams) -> f64 {
        let m = closed_form_moments(p);
        (m.get(1) - self.target.get(1)).powi(2) + (m.get(2) - self.target.get(2)).powi(2)
    }

    fn tails_objective(&self, p: &MarginalParams) -> f64 {
        let m = closed_form_moments(p);
        let w = self.weights();
        (w[0] * (m.get(3) - self.target.get(3))).powi(2)
            + (w[1] * (m.get(4) - self.target.get(4))).powi(2)
    }

    fn relative_residuals_ok(&self, p: &MarginalParams) -> bool {
        let m = closed_form_moments(p);
        (1..=4).all(|i| {
            let r = (m.get(i) - self.target.get(i)).abs() / self.target.get(i).abs().max(1.0);
            r <= 10.0 * self.cfg.block_tol
        })
    }

    fn clamp_sq(x: f64, max: f64) -> f64 {
        (x * x).min(max)
    }

    fn solve_location_scale(&self, p: &MarginalParams) -> MarginalParams {
        let base = *p;
        let opts = simplex_opts();
        let m = nelder_mead(
            |x| {
                let q = MarginalParams {
                    mu: x[0],
                    sigma: Self::clamp_sq(x[1], self.cfg.sigma_max),
                    ..base
                };
                self.location_scale_objective(&q)
            },
            &[base.mu, base.sigma.sqrt()],
            opts,
        );
        MarginalParams {
            mu: m.x[0],
            sigma: Self::clamp_sq(m.x[1], self.cfg.sigma_max),
            ..base
        }
    }

    fn solve_tails(&self, p: &MarginalParams) -> MarginalParams {
        let base = *p;
        let m = nelder_mead(
            |x| {
                let q = MarginalParams {
                    u: Self::clamp_sq(x[0], self.cfg.u_max),
                    v: Self::clamp_sq(x[1], self.cfg.v_max),
                    ..base
                };
                self.tails_objective(&q)
            },
            &[base.u.sqrt(), base.v.sqrt()],
            simplex_opts(),
        );
        MarginalParams {
            u: Self::clamp_sq(m.x[0], self.cfg.u_max),
            v: Self::clamp_sq(m.x[1], self.cfg.v_max),
            ..base
        }
    }

    /// Alternate the two blocks from `start`.
    fn alternate(
        &self,
        start: MarginalParams,
        stage: u8,
        trace: &mut Vec<BlockStep>,
    ) -> (MarginalParams, usize) {
        let mut p = start;
        let mut stalled = 0;
        let mut iters = 0;
        while iters < self.cfg.max_outer_iters {
            iters += 1;
            let before_a = self.location_scale_objective(&p);
            let q = self.solve_location_scale(&p);
            let after_a = self.location_scale_objective(&q);
            trace.push(BlockStep {
                stage,
                block: Block::LocationScale,
                before: before_a,
                after: after_a,
            });
            p = q;

            let before_b = self.tails_objective(&p);
            let q = self.solve_tails(&p);
            let after_b = self.tails_objective(&q);
            trace.push(BlockStep {
                stage,
                block: Block::Tails,
                before: before_b,
                after: after_b,
            });
            p = q;

            if self.relative_residuals_ok(&p) {
                break;
            }
            // Improvements are measured on the residual-norm scale.
            let gain_a = before_a.sqrt() - after_a.sqrt();
            let gain_b = before_b.sqrt() - after_b.sqrt();
            let improved = gain_a >= self.cfg.block_tol || gain_b >= self.cfg.block_tol;
            if improved {
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= 3 {
                    break;
                }
            }
        }
        (p, iters)
    }

    fn total(&self, p: &MarginalParams) -> f64 {
        self.location_scale_objective(p) + self.tails_objective(p)
    }
}

fn simplex_opts() -> SimplexOptions {
    SimplexOptions {
        initial_step: 0.05,
        max_evals: 4000,
        f_tol: 1e-26,
        x_tol: 1e-13,
    }
}

fn standard_deviation(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    (y.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Run one stage (alternation plus restarts) on `y`.
fn fit_stage(
    y: &[f64],
    cfg: &MarginalFitConfig,
    seed: SeedSpec,
    stage: u8,
    trace: &mut Vec<BlockStep>,
) -> Result<(MarginalParams, usize)> {
    let problem = Problem {
        target: sample_moments(y)?,
        cfg,
    };
    let sd = standard_deviation(y).min(cfg.sigma_max);
    let base = MarginalParams {
        mu: 0.0,
        u: 0.3f64.min(cfg.u_max),
        v: 0.3f64.min(cfg.v_max),
        sigma: sd,
    };
    let (mut best, mut iters) = problem.alternate(base, stage, trace);
    let mut best_value = problem.total(&best);
    let mut stream = seed.child(stage as u64).stream();
    for _ in 0..cfg.restarts {
        let start = MarginalParams {
            u: stream.uniform().min(cfg.u_max),
            v: stream.uniform().min(cfg.v_max),
            ..base
        };
        let mut scratch = Vec::new();
        let (p, k) = problem.alternate(start, stage, &mut scratch);
        iters += k;
        let value = problem.total(&p);
        if value < best_value {
            best = p;
            best_value = value;
            trace.retain(|s| s.stage != stage);
            trace.extend(scratch);
        }
    }
    Ok((best, iters))
}

pub fn fit_marginal(
    y: &[f64],
    cfg: &MarginalFitConfig,
    seed: SeedSpec,
) -> Result<MarginalFitResult> {
    cfg.validate()?;
    if y.len() < 100 {
        return Err(Error::InsufficientSample(format!(
            "marginal fit needs at least 100 observations, got {}",
            y.len()
        )));
    }
    let original = sample_moments(y)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let centered: Vec<f64> = y.iter().map(|x| x - mean).collect();
    let mut trace = Vec::new();

    let (first, it1) = fit_stage(&centered, cfg, seed, 1, &mut trace)?;
    let shifted: Vec<f64> = centered.iter().map(|x| x - first.mu).collect();
    let (second, it2) = fit_stage(&shifted, cfg, seed, 2, &mut trace)?;

    let params = MarginalParams {
        mu: second.mu + first.mu + mean,
        ..second
    };
    let fitted = closed_form_moments(&params);
    let residuals = MomentVector(std::array::from_fn(|i| fitted.0[i] - original.0[i]));
    let check = Problem {
        target: sample_moments(&shifted)?,
        cfg,
    };
    let converged = check.relative_residuals_ok(&second);
    Ok(MarginalFitResult {
        params,
        residuals,
        converged,
        iterations: it1 + it2,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_univariate;

    #[test]
    fn sample_moment_arithmetic() {
        let m = sample_moments(&[1.0, 2.0, 3.0]).unwrap();
        assert!((m.get(2) - 14.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.get(1), 2.0);
        let c = sample_moments(&[1.5; 7]).unwrap();
        for i in 1..=4 {
            assert!((c.get(i) - 1.5f64.powi(i as i32)).abs() < 1e-12);
        }
        assert!(sample_moments(&[]).is_err());
        assert!(sample_moments(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn normal_sample_moments_within_five_se() {
        let p = MarginalParams::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let y = sample_univariate(&p, 10_000_000, SeedSpec::from_seed(21)).unwrap();
        let m = sample_moments(&y).unwrap();
        // Standard errors from Var(Zⁱ) = E[Z²ⁱ] − E[Zⁱ]²: 1, 2, 15, 96.
        let n = y.len() as f64;
        for (i, (exact, var)) in [(0.0, 1.0), (1.0, 2.0), (0.0, 15.0), (3.0, 96.0)]
            .iter()
            .enumerate()
        {
            assert!(
                (m.0[i] - exact).abs() < 5.0 * (var / n).sqrt(),
                "order {}",
                i + 1
            );
        }
    }

    #[test]
    fn rejects_short_or_bad_input() {
        let cfg = MarginalFitConfig::default();
        assert!(matches!(
            fit_marginal(&[0.0; 50], &cfg, SeedSpec::from_seed(0)),
            Err(Error::InsufficientSample(_))
        ));
        let mut y = vec![0.5; 200];
        y[10] = f64::INFINITY;
        assert!(fit_marginal(&y, &cfg, SeedSpec::from_seed(0)).is_err());
        let bad = MarginalFitConfig { u_max: 4.0, ..cfg };
        assert!(fit_marginal(&[0.0; 200], &bad, SeedSpec::from_seed(0)).is_err());
    }

    #[test]
    fn exact_moments_are_recovered() {
        // Feed the solver a target taken from the closed form itself.
        let truth = MarginalParams::new(0.0, 0.6, 0.3, 0.8).unwrap();
        let cfg = MarginalFitConfig::default();
        let problem = Problem {
            target: closed_form_moments(&truth),
            cfg: &cfg,
        };
        let mut trace = Vec::new();
        let start = MarginalParams {
            mu: 0.0,
            u: 0.3,
            v: 0.3,
            sigma: 1.0,
        };
        let (p, iters) = problem.alternate(start, 1, &mut trace);
        assert!(problem.relative_residuals_ok(&p), "{p:?} after {iters}");
        let err = p
            .as_array()
            .iter()
            .zip(truth.as_array())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-4, "{p:?}");
        assert!(trace.iter().all(|s| s.after <= s.before));
    }

    #[test]
    fn degenerate_normal_recovery() {
        let p = MarginalParams::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let y = sample_univariate(&p, 1_000_000, SeedSpec::from_seed(22)).unwrap();
        let r = fit_marginal(&y, &MarginalFitConfig::default(), SeedSpec::from_seed(1)).unwrap();
        let q = r.params;
        // Third and fourth cumulants scale like u⁴ and u⁶ near zero.
        assert!(q.u <= 0.3 && q.v <= 0.3, "{q:?}");
        assert!((q.sigma - 1.0).abs() <= 0.02, "{q:?}");
        assert!(q.mu.abs() <= 0.01, "{q:?}");
    }

    #[test]
    fn location_equivariance_and_mirror_symmetry() {
        let p = MarginalParams::new(0.4, 0.5, 0.25, 0.9).unwrap();
        let y = sample_univariate(&p, 200_000, SeedSpec::from_seed(23)).unwrap();
        let cfg = MarginalFitConfig::default();
        let a = fit_marginal(&y, &cfg, SeedSpec::from_seed(2)).unwrap();
        let shifted: Vec<f64> = y.iter().map(|x| x + 7.0).collect();
        let b = fit_marginal(&shifted, &cfg, SeedSpec::from_seed(2)).unwrap();
        assert!((a.params.u - b.params.u).abs() < 1e-6);
        assert!((a.params.v - b.params.v).abs() < 1e-6);
        assert!((a.params.sigma - b.params.sigma).abs() < 1e-6);
        assert!((b.params.mu - a.params.mu - 7.0).abs() < 1e-6);

        let neg: Vec<f64> = y.iter().map(|x| -x).collect();
        let c = fit_marginal(&neg, &cfg, SeedSpec::from_seed(2)).unwrap();
        assert!(
            (c.params.u - a.params.v).abs() < 1e-3,
            "{:?} vs {:?}",
            c.params,
            a.params
        );
        assert!((c.params.v - a.params.u).abs() < 1e-3);
        assert!((c.params.mu + a.params.mu).abs() < 1e-3);
        assert!((c.params.sigma - a.params.sigma).abs() < 1e-3);
    }

    #[test]
    fn block_objectives_never_increase() {
        let p = MarginalParams::new(1.0, 0.6, 0.3, 0.8).unwrap();
        let y = sample_univariate(&p, 100_000, SeedSpec::from_seed(24)).unwrap();
        let cfg = MarginalFitConfig {
            restarts: 2,
            ..Default::default()
        };
        let r = fit_marginal(&y, &cfg, SeedSpec::from_seed(3)).unwrap();
        assert!(!r.trace.is_empty());
        for s in &r.trace {
            assert!(s.after <= s.before, "{s:?}");
        }
        assert!(r.residuals.0.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn converged_implies_small_residuals() {
        let p = MarginalParams::new(1.0, 0.6, 0.3, 0.8).unwrap();
        let y = sample_univariate(&p, 100_000, SeedSpec::from_seed(25)).unwrap();
        let r = fit_marginal(&y, &MarginalFitConfig::default(), SeedSpec::from_seed(4)).unwrap();
        if r.converged {
            let m = sample_moments(&y).unwrap();
            for i in 1..=4 {
                assert!(
                    r.residuals.get(i).abs() / m.get(i).abs().max(1.0) < 1e-6,
                    "{:?}",
                    r.residuals
                );
            }
        }
    }
}
