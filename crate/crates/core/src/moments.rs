//! Closed-form raw moments of one dimension and the tail asymptotes of its
//! log-normal and power-law variants.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::latent::{normal_pdf, SeedSpec};
use crate::model::{sample_univariate, MarginalParams};

/// Raw moments `E[Y], E[Y²], E[Y³], E[Y⁴]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentVector(pub [f64; 4]);

impl MomentVector {
    /// `i` in `1..=4`.
    pub fn get(&self, i: usize) -> f64 {
        self.0[i - 1]
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }
}

const BINOMIAL: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

/// Raw moments (orders 0..=4) of `X + W` for independent `X`, `W`.
#[inline]
fn convolve(x: &[f64; 5], w: &[f64; 5]) -> [f64; 5] {
    let mut out = [0.0; 5];
    for (n, o) in out.iter_mut().enumerate() {
        *o = (0..=n).map(|k| BINOMIAL[n][k] * x[k] * w[n - k]).sum();
    }
    out
}

/// `E[exp(k·w·Z)] = exp(k²w²/2)` for `k = 0..=4`.
#[inline]
fn lognormal_moments(w: f64, sign: f64) -> [f64; 5] {
    let h = 0.5 * w * w;
    let mut out = [1.0; 5];
    for (k, o) in out.iter_mut().enumerate().skip(1) {
        let kf = k as f64;
        *o = sign.powi(k as i32) * (kf * kf * h).exp();
    }
    out
}

/// All four raw moments at once.
pub fn closed_form_moments(p: &MarginalParams) -> MomentVector {
    let upper = lognormal_moments(p.u, 1.0);
    let lower = lognormal_moments(p.v, -1.0);
    let s2 = p.sigma * p.sigma;
    let gauss = [1.0, 0.0, s2, 0.0, 3.0 * s2 * s2];
    let mu = p.mu;
    let shift = [1.0, mu, mu * mu, mu * mu * mu, mu * mu * mu * mu];
    let full = convolve(&convolve(&convolve(&upper, &lower), &gauss), &shift);
    MomentVector([full[1], full[2], full[3], full[4]])
}

/// `E[Y^i]` for `i` in `1..=4`.
pub fn moment_closed_form(p: &MarginalParams, i: usize) -> Result<f64> {
    if !(1..=4).contains(&i) {
        return Err(invalid(format!("moment order must be in 1..=4, got {i}")));
    }
    p.validate()?;
    Ok(closed_form_moments(p).get(i))
}

/// `P(exp(w·Z) > t) ~ w / (√(2π)·ln t) · exp(−(ln t)² / (2w²))` as `t → ∞`.
pub fn asymptote_lognormal_tail(t: f64, w: f64) -> Result<f64> {
    if !(t > 1.0) {
        return Err(invalid(format!("tail asymptote needs t > 1, got {t}")));
    }
    if !(w > 0.0) {
        return Err(invalid(format!("tail weight must be positive, got {w}")));
    }
    let lt = t.ln();
    Ok(w / ((2.0 * std::f64::consts::PI).sqrt() * lt) * (-(lt * lt) / (2.0 * w * w)).exp())
}

/// The standard log-normal survival asymptote `f(ln s)/ln s` evaluated at
/// `s = t^{1/w}`, i.e. the same tail reached through the standard normal density.
pub fn lognormal_tail_via_density(t: f64, w: f64) -> f64 {
    let x = t.ln() / w;
    normal_pdf(x) / x
}

/// Mills-ratio check quantity `Φ̄(x)·x/φ(x)`; tends to 1 from below.
pub fn normal_tail_ratio(x: f64) -> f64 {
    crate::latent::normal_sf(x) * x / normal_pdf(x)
}

/// `t^{−λ}`.
pub fn asymptote_power_tail(t: f64, rate: f64) -> Result<f64> {
    if !(t > 0.0) || !(rate > 0.0) {
        return Err(invalid(format!(
            "power tail needs t > 0 and rate > 0, got t={t}, rate={rate}"
        )));
    }
    Ok(t.powf(-rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRatioRow {
    pub t: f64,
    pub p_hat: f64,
    pub asymptote: f64,
    pub ratio: f64,
    pub exceedances: u64,
    /// Too few exceedances, or Wilson 95% half-width above 20% of the estimate.
    pub flagged: bool,
}

const WILSON_Z: f64 = 1.959_963_984_540_054;
const MIN_EXCEEDANCES: u64 = 100;

/// Half-width of the Wilson score interval at 95%.
pub fn wilson_half_width(successes: u64, n: u64) -> f64 {
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    WILSON_Z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()
}

/// Monte Carlo survival of `Y` next to the log-normal tail asymptote.
///
/// `Upper` compares `P(Y > t)` with the asymptote at weight `u`; `Lower` compares
/// `P(Y < −t)` with the asymptote at weight `v`.
pub fn tail_ratio_probe(
    p: &MarginalParams,
    t_grid: &[f64],
    count: usize,
    seed: SeedSpec,
    side: TailSide,
) -> Result<Vec<TailRatioRow>> {
    p.validate()?;
    let w = match side {
        TailSide::Upper => p.u,
        TailSide::Lower => p.v,
    };
    if w <= 0.0 {
        return Err(invalid(
            "tail weight is zero on the probed side, there is no log-normal tail",
        ));
    }
    if t_grid.is_empty() || t_grid.iter().any(|&t| !(t > 1.0)) {
        return Err(invalid("t grid must be nonempty with every t > 1"));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("t grid must be strictly increasing"));
    }
    let y = sample_univariate(p, count, seed)?;
    let mut counts = vec![0u64; t_grid.len()];
    for &yk in &y {
        let x = match side {
            TailSide::Upper => yk,
            TailSide::Lower => -yk,
        };
        for (c, &t) in counts.iter_mut().zip(t_grid) {
            if x > t {
                *c += 1;
            } else {
                break;
            }
        }
    }
    t_grid
        .iter()
        .zip(&counts)
        .map(|(&t, &c)| {
            let p_hat = c as f64 / count as f64;
            let asymptote = asymptote_lognormal_tail(t, w)?;
            let flagged = c < MIN_EXCEEDANCES || wilson_half_width(c, count as u64) > 0.2 * p_hat;
            Ok(TailRatioRow {
                t,
                p_hat,
                asymptote,
                ratio: p_hat / asymptote,
                exceedances: c,
                flagged,
            })
        })
        .collect()
}
