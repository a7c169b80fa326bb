//! Bivariate copula baselines on empirical marginals: normal, Student t,
//! Clayton and Gumbel. Fitting inverts Kendall's τ; the t copula's degrees of
//! freedom come from a profile pseudo-likelihood.

use rand_distr::{ChiSquared, Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::latent::{normal_cdf, NormalPairBase, SeedSpec};
use crate::model::ModelSpec;
use crate::optim::golden_section;
use crate::tail_metrics::{cmp_values, discrepancy, discrepancy_from_samples, DiscrepancyReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopulaFamily {
    Normal,
    StudentT,
    Clayton,
    Gumbel,
}

impl CopulaFamily {
    pub const ALL: [CopulaFamily; 4] = [Self::Normal, Self::StudentT, Self::Clayton, Self::Gumbel];

    pub fn name(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::StudentT => "student_t",
            Self::Clayton => "clayton",
            Self::Gumbel => "gumbel",
        }
    }
}

impl std::str::FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| invalid(format!("unknown copula family '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CopulaSpec {
    Normal { rho: f64 },
    StudentT { rho: f64, nu: f64 },
    Clayton { theta: f64 },
    Gumbel { theta: f64 },
}

impl CopulaSpec {
    pub fn family(&self) -> CopulaFamily {
        match self {
            Self::Normal { .. } => CopulaFamily::Normal,
            Self::StudentT { .. } => CopulaFamily::StudentT,
            Self::Clayton { .. } => CopulaFamily::Clayton,
            Self::Gumbel { .. } => CopulaFamily::Gumbel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Normal { rho } => rho > -1.0 && rho < 1.0,
            Self::StudentT { rho, nu } => rho > -1.0 && rho < 1.0 && nu > 2.0 && nu.is_finite(),
            Self::Clayton { theta } => theta > 0.0 && theta.is_finite(),
            Self::Gumbel { theta } => theta >= 1.0 && theta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("copula parameters out of range: {self:?}")))
        }
    }
}

/// Sorted sample with type-1 quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMarginal {
    sorted: Vec<f64>,
}

impl EmpiricalMarginal {
    pub fn new(x: &[f64]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidData(
                "empirical marginal of an empty sample".into(),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(
                "sample contains non-finite values".into(),
            ));
        }
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// `#{xₖ ≤ x} / K`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.len() as f64
    }

    /// Smallest sample value whose cdf reaches `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let k = self.len();
        let mut i = ((p * k as f64).ceil() as usize).clamp(1, k);
        while i > 1 && (i - 1) as f64 / k as f64 >= p {
            i -= 1;
        }
        self.sorted[i - 1]
    }
}

/// Kendall's τ-b in `O(K log K)` (Knight's algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientSample(
            "Kendall's tau needs at least 2 observations".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData(
            "sample contains non-finite values".into(),
        ));
    }
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| {
        cmp_values(x[a], x[b])
            .then(cmp_values(y[a], y[b]))
            .then(a.cmp(&b))
    });

    let tied_runs = |eq: &dyn Fn(usize, usize) -> bool, order: &[usize]| -> u64 {
        let mut total = 0u64;
        let mut run = 1u64;
        for w in order.windows(2) {
            if eq(w[0], w[1]) {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
            }
        }
        total + run * (run - 1) / 2
    };
    let x_ties = tied_runs(&|a, b| x[a] == x[b], &idx);
    let xy_ties = tied_runs(&|a, b| x[a] == x[b] && y[a] == y[b], &idx);

    let mut ys: Vec<f64> = idx.iter().map(|&k| y[k]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    let mut run = 1u64;
    let mut y_ties = 0u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            y_ties += run * (run - 1) / 2;
            run = 1;
        }
    }
    y_ties += run * (run - 1) / 2;

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let num = n0 as f64 - x_ties as f64 - y_ties as f64 + xy_ties as f64 - 2.0 * swaps as f64;
    let den = ((n0 - x_ties) as f64 * (n0 - y_ties) as f64).sqrt();
    if den == 0.0 {
        return Err(Error::InvalidData(
            "Kendall's tau of a constant series".into(),
        ));
    }
    Ok(num / den)
}

/// Bottom-up merge sort; returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            let (mut i, mut j, mut k) = (start, mid, start);
            while i < mid && j < end {
                if v[j] < v[i] {
                    buf[k] = v[j];
                    swaps += (mid - i) as u64;
                    j += 1;
                } else {
                    buf[k] = v[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + (end - j)].copy_from_slice(&v[j..end]);
            start = end;
        }
        v.copy_from_slice(buf);
        width *= 2;
    }
    swaps
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CopulaFitOptions {
    pub rho_max: f64,
    pub clayton_theta_min: f64,
    pub clayton_theta_max: f64,
    pub gumbel_theta_max: f64,
    pub nu_min: f64,
    pub nu_max: f64,
    /// At most this many rank pairs enter the t likelihood.
    pub t_subsample: usize,
}

impl Default for CopulaFitOptions {
    fn default() -> Self {
        Self {
            rho_max: 0.999,
            clayton_theta_min: 1e-6,
            clayton_theta_max: 100.0,
            gumbel_theta_max: 50.0,
            nu_min: 2.1,
            nu_max: 50.0,
            t_subsample: 20_000,
        }
    }
}

pub fn fit_copula(
    x: &[f64],
    y: &[f64],
    family: CopulaFamily,
    opts: &CopulaFitOptions,
) -> Result<CopulaSpec> {
    if x.len() < 100 {
        return Err(Error::InsufficientSample(format!(
            "copula fits need at least 100 observations, got {}",
            x.len()
        )));
    }
    let tau = kendall_tau(x, y)?;
    let rho = (std::f64::consts::FRAC_PI_2 * tau)
        .sin()
        .clamp(-opts.rho_max, opts.rho_max);
    let spec = match family {
        CopulaFamily::Normal => CopulaSpec::Normal { rho },
        CopulaFamily::StudentT => CopulaSpec::StudentT {
            rho,
            nu: fit_t_dof(x, y, rho, opts)?,
        },
        CopulaFamily::Clayton => {
            if tau <= 0.0 {
                log::warn!(
                    "Kendall's tau {tau} <= 0, Clayton fit set to the independence boundary"
                );
            }
            let theta = if tau < 1.0 {
                2.0 * tau / (1.0 - tau)
            } else {
                f64::INFINITY
            };
            CopulaSpec::Clayton {
                theta: theta.clamp(opts.clayton_theta_min, opts.clayton_theta_max),
            }
        }
        CopulaFamily::Gumbel => {
            if tau <= 0.0 {
                log::warn!("Kendall's tau {tau} <= 0, Gumbel fit set to the independence boundary");
            }
            let theta = if tau < 1.0 {
                1.0 / (1.0 - tau)
            } else {
                f64::INFINITY
            };
            CopulaSpec::Gumbel {
                theta: theta.clamp(1.0, opts.gumbel_theta_max),
            }
        }
    };
    spec.validate()?;
    Ok(spec)
}

fn t_copula_log_density(a: f64, b: f64, rho: f64, nu: f64) -> f64 {
    let one = 1.0 - rho * rho;
    let q = (a * a + b * b - 2.0 * rho * a * b) / (nu * one);
    ln_gamma(0.5 * (nu + 2.0)) + ln_gamma(0.5 * nu)
        - 2.0 * ln_gamma(0.5 * (nu + 1.0))
        - 0.5 * one.ln()
        - 0.5 * (nu + 2.0) * q.ln_1p()
        + 0.5 * (nu + 1.0) * ((a * a / nu).ln_1p() + (b * b / nu).ln_1p())
}

/// Degrees of freedom maximizing the pseudo-likelihood of rank pairs at fixed `rho`.
fn fit_t_dof(x: &[f64], y: &[f64], rho: f64, opts: &CopulaFitOptions) -> Result<f64> {
    let n = x.len();
    let (rx, ry) = (crate::tail_metrics::ranks(x), crate::tail_metrics::ranks(y));
    let stride = n.div_ceil(opts.t_subsample.max(1));
    let pts: Vec<(f64, f64)> = (0..n)
        .step_by(stride)
        .map(|k| {
            (
                rx[k] as f64 / (n as f64 + 1.0),
                ry[k] as f64 / (n as f64 + 1.0),
            )
        })
        .collect();
    let neg_ll = |log_nu: f64| {
        let nu = log_nu.exp();
        let t = StudentsT::new(0.0, 1.0, nu).expect("valid t");
        -pts.iter()
            .map(|&(p, q)| t_copula_log_density(t.inverse_cdf(p), t.inverse_cdf(q), rho, nu))
            .sum::<f64>()
    };
    let (best, _) = golden_section(neg_ll, opts.nu_min.ln(), opts.nu_max.ln(), 16, 1e-4);
    Ok(best.exp().clamp(opts.nu_min, opts.nu_max))
}

/// Uniform pairs from a copula.
pub fn sample_copula_uniforms(
    spec: &CopulaSpec,
    count: usize,
    seed: SeedSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    if count == 0 {
        return Err(invalid("count must be at least 1"));
    }
    match *spec {
        CopulaSpec::Normal { rho } => {
            let base = NormalPairBase::draw(count, seed);
            let b = base.correlated(rho);
            Ok((
                base.first.iter().map(|&z| normal_cdf(z)).collect(),
                b.iter().map(|&z| normal_cdf(z)).collect(),
            ))
        }
        CopulaSpec::StudentT { rho, nu } => {
            let base = NormalPairBase::draw(count, seed);
            let b = base.correlated(rho);
            let mut stream = seed.child(1).stream();
            let chi = ChiSquared::new(nu).map_err(|e| invalid(e.to_string()))?;
            let t = StudentsT::new(0.0, 1.0, nu).map_err(|e| invalid(e.to_string()))?;
            let (mut u, mut v) = (Vec::with_capacity(count), Vec::with_capacity(count));
            for (za, zb) in base.first.iter().zip(&b) {
                let s = (chi.sample(stream.rng_mut()) / nu).sqrt();
                u.push(t.cdf(za / s));
                v.push(t.cdf(zb / s));
            }
            Ok((u, v))
        }
        CopulaSpec::Clayton { theta } => {
            let mut stream = seed.stream();
            let frailty = Gamma::new(1.0 / theta, 1.0).map_err(|e| invalid(e.to_string()))?;
            let (mut u, mut v) = (Vec::with_capacity(count), Vec::with_capacity(count));
            for _ in 0..count {
                let w = frailty.sample(stream.rng_mut());
                let (e1, e2) = (stream.exponential(1.0), stream.exponential(1.0));
                u.push(((e1 / w).ln_1p() * (-1.0 / theta)).exp());
                v.push(((e2 / w).ln_1p() * (-1.0 / theta)).exp());
            }
            Ok((u, v))
        }
        CopulaSpec::Gumbel { theta } => {
            let alpha = 1.0 / theta;
            let mut stream = seed.stream();
            let (mut u, mut v) = (Vec::with_capacity(count), Vec::with_capacity(count));
            for _ in 0..count {
                let s = positive_stable(alpha, stream.uniform(), stream.exponential(1.0));
                let (e1, e2) = (stream.exponential(1.0), stream.exponential(1.0));
                u.push((-(e1 / s).powf(alpha)).exp());
                v.push((-(e2 / s).powf(alpha)).exp());
            }
            Ok((u, v))
        }
    }
}

/// Positive stable variable with Laplace transform `exp(−s^α)` (Kanter's representation).
fn positive_stable(alpha: f64, uniform: f64, exp1: f64) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let th = std::f64::consts::PI * uniform;
    let a = (alpha * th).sin() / th.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * th).sin() / exp1).powf((1.0 - alpha) / alpha);
    a * b
}

/// Copula sample mapped through empirical marginals.
pub fn sample_copula(
    spec: &CopulaSpec,
    marg_x: &EmpiricalMarginal,
    marg_y: &EmpiricalMarginal,
    count: usize,
    seed: SeedSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (u, v) = sample_copula_uniforms(spec, count, seed)?;
    Ok((
        u.iter().map(|&p| marg_x.quantile(p)).collect(),
        v.iter().map(|&p| marg_y.quantile(p)).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub taus: Vec<f64>,
    pub sim_draws: usize,
    pub seed: SeedSpec,
    pub fit: CopulaFitOptions,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            taus: crate::tail_metrics::DISCREPANCY_TAUS.to_vec(),
            sim_draws: 1_000_000,
            seed: SeedSpec::from_seed(0),
            fit: CopulaFitOptions::default(),
        }
    }
}

/// Label used for the heavy-tail model's row.
pub const OUR_MODEL: &str = "our_model";

/// One discrepancy per requested family, then one for the fitted heavy-tail model.
pub fn benchmark_discrepancy(
    x: &[f64],
    y: &[f64],
    families: &[CopulaFamily],
    ours: &ModelSpec,
    cfg: &BenchmarkConfig,
) -> Result<Vec<DiscrepancyReport>> {
    let (mx, my) = (EmpiricalMarginal::new(x)?, EmpiricalMarginal::new(y)?);
    let mut out = Vec::with_capacity(families.len() + 1);
    for (k, &family) in families.iter().enumerate() {
        let spec = fit_copula(x, y, family, &cfg.fit)?;
        let (sx, sy) = sample_copula(&spec, &mx, &my, cfg.sim_draws, cfg.seed.child(k as u64))?;
        out.push(discrepancy_from_samples(
            family.name(),
            (x, y),
            (&sx, &sy),
            &cfg.taus,
        )?);
    }
    out.push(discrepancy(
        OUR_MODEL,
        x,
        y,
        ours,
        &cfg.taus,
        cfg.sim_draws,
        cfg.seed.child(families.len() as u64),
    )?);
    Ok(out)
}
