//! Seedable latent-variate generation.
//!
//! Every random quantity in the crate flows from a [`SeedSpec`]. A spec maps to a
//! ChaCha8 keystream (`seed` keys the cipher, `stream_id` selects the 64-bit stream
//! nonce), so distinct workers get independent, replayable sequences without
//! coordination. Normal variates are produced by inverse-CDF transform of one
//! uniform each, which keeps the mapping from uniforms to variates fixed when model
//! parameters change (common random numbers).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{invalid, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub seed: u64,
    #[serde(default)]
    pub stream_id: u64,
}

impl SeedSpec {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    /// Same master seed, different stream.
    pub fn with_stream(self, stream_id: u64) -> Self {
        Self { stream_id, ..self }
    }

    /// Derive a spec for a sub-task. The child's key mixes both fields of the
    /// parent, so children of different parents never share a keystream.
    pub fn child(self, index: u64) -> Self {
        let key =
            splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0x5851_f42d_4c95_7f2d)));
        Self {
            seed: key,
            stream_id: index,
        }
    }

    pub fn stream(self) -> LatentStream {
        LatentStream::new(self)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentKind {
    StandardNormal,
    Exponential { rate: f64 },
    StudentT { dof: f64 },
}

impl LatentKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LatentKind::StandardNormal => Ok(()),
            LatentKind::Exponential { rate } if !(rate > 0.0 && rate.is_finite()) => Err(invalid(
                format!("exponential rate must be positive, got {rate}"),
            )),
            LatentKind::StudentT { dof } if !(dof > 0.0 && dof.is_finite()) => Err(invalid(
                format!("student-t degrees of freedom must be positive, got {dof}"),
            )),
            _ => Ok(()),
        }
    }
}

/// A single-owner generator. Clone it to fork an identical copy.
#[derive(Debug, Clone)]
pub struct LatentStream {
    rng: ChaCha8Rng,
}

impl LatentStream {
    pub fn new(spec: SeedSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(spec.stream_id);
        Self { rng }
    }

    /// Uniform on the open interval (0, 1), on the grid (k + 1/2)·2⁻⁵³.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        normal_quantile(self.uniform())
    }

    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -self.uniform().ln() / rate
    }

    pub fn student_t(&mut self, dof: f64) -> f64 {
        let z = self.standard_normal();
        let chi2 = ChiSquared::new(dof)
            .expect("validated dof")
            .sample(&mut self.rng);
        z / (chi2 / dof).sqrt()
    }

    pub fn draw(&mut self, kind: LatentKind) -> f64 {
        match kind {
            LatentKind::StandardNormal => self.standard_normal(),
            LatentKind::Exponential { rate } => self.exponential(rate),
            LatentKind::StudentT { dof } => self.student_t(dof),
        }
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for z in out {
            *z = self.standard_normal();
        }
    }

    pub fn standard_normals(&mut self, count: usize) -> Vec<f64> {
        let mut v = vec![0.0; count];
        self.fill_standard_normal(&mut v);
        v
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Standard normal quantile, accurate in both tails.
#[inline]
pub fn normal_quantile(p: f64) -> f64 {
    if p < 0.5 {
        -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
    } else {
        std::f64::consts::SQRT_2 * erfc_inv(2.0 * (1.0 - p))
    }
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail Φ̄(x) = 1 − Φ(x), computed without cancellation.
#[inline]
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn draw_iid(kind: LatentKind, count: usize, seed: SeedSpec) -> Result<Vec<f64>> {
    kind.validate()?;
    if count == 0 {
        return Err(invalid("count must be at least 1"));
    }
    let mut stream = seed.stream();
    Ok((0..count).map(|_| stream.draw(kind)).collect())
}

/// Independent standard-normal base draws `(Z'_i, Z'_j)` for correlated pairs.
///
/// The base is drawn once; [`NormalPairBase::correlated`] maps it to a pair with any
/// correlation `ρ` via `Z_i = Z'_i`, `Z_j = ρ Z'_i + √(1−ρ²) Z'_j`, so changing `ρ`
/// never changes the underlying randomness.
#[derive(Debug, Clone)]
pub struct NormalPairBase {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl NormalPairBase {
    pub fn draw(count: usize, seed: SeedSpec) -> Self {
        let mut stream = seed.stream();
        let first = stream.standard_normals(count);
        let second = stream.standard_normals(count);
        Self { first, second }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// The correlated partner of `first` at correlation `rho`.
    pub fn correlated(&self, rho: f64) -> Vec<f64> {
        let s = (1.0 - rho * rho).max(0.0).sqrt();
        self.first
            .iter()
            .zip(&self.second)
            .map(|(a, b)| rho * a + s * b)
            .collect()
    }
}

pub fn draw_correlated_pair(
    rho: f64,
    count: usize,
    seed: SeedSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_correlation(rho)?;
    if count == 0 {
        return Err(invalid("count must be at least 1"));
    }
    let base = NormalPairBase::draw(count, seed);
    let partner = base.correlated(rho);
    Ok((base.first, partner))
}

pub(crate) fn check_correlation(rho: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(invalid(format!(
            "correlation must lie in [-1, 1], got {rho}"
        )));
    }
    Ok(())
}
