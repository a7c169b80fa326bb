//! Parameter types and exact samplers for the latent heavy-tail model.
//!
//! One dimension is `Y = μ + exp(u·Z₁) − exp(v·Z₂) + σ·Z₃`. In the multivariate
//! model the three latent blocks `Z₁, Z₂, Z₃` are mutually independent Gaussian
//! vectors with correlation matrices `Σ₁` (upper tails), `Σ₂` (lower tails) and
//! `Σ₃` (body).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::latent::{LatentStream, SeedSpec};
use crate::linalg::{symmetric_sqrt, CorrelationMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalParams {
    pub mu: f64,
    /// Right-tail weight.
    pub u: f64,
    /// Left-tail weight.
    pub v: f64,
    pub sigma: f64,
}

impl MarginalParams {
    pub fn new(mu: f64, u: f64, v: f64, sigma: f64) -> Result<Self> {
        let p = Self { mu, u, v, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mu, self.u, self.v, self.sigma];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(invalid(format!(
                "marginal parameters must be finite: {self:?}"
            )));
        }
        if self.u < 0.0 || self.v < 0.0 || self.sigma < 0.0 {
            return Err(invalid(format!(
                "u, v and sigma must be nonnegative: {self:?}"
            )));
        }
        Ok(())
    }

    /// Parameters of `−Y`: tails swap and the location flips.
    pub fn mirrored(&self) -> Self {
        Self {
            mu: -self.mu,
            u: self.v,
            v: self.u,
            sigma: self.sigma,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.mu, self.u, self.v, self.sigma]
    }

    /// One draw from latent normals, or `None` when an exponential overflows.
    #[inline]
    pub fn transform(&self, z1: f64, z2: f64, z3: f64) -> Option<f64> {
        let y = self.mu + ((self.u * z1).exp() - (self.v * z2).exp() + self.sigma * z3);
        y.is_finite().then_some(y)
    }
}

/// Latent correlations `(ρ¹, ρ², ρ³)` for one pair of dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairJointParams {
    /// ρ¹, correlation of the upper-tail latents.
    pub upper: f64,
    /// ρ², correlation of the lower-tail latents.
    pub lower: f64,
    /// ρ³, correlation of the Gaussian body.
    pub body: f64,
}

impl PairJointParams {
    pub fn new(upper: f64, lower: f64, body: f64) -> Result<Self> {
        let p = Self { upper, lower, body };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("upper", self.upper),
            ("lower", self.lower),
            ("body", self.body),
        ] {
            if !(r > -1.0 && r < 1.0) {
                return Err(invalid(format!(
                    "{name} correlation must lie strictly inside (-1, 1), got {r}"
                )));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.upper, self.lower, self.body]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub marginals: Vec<MarginalParams>,
    /// Σ₁: correlation of the upper-tail latents.
    pub sigma_upper: CorrelationMatrix,
    /// Σ₂: correlation of the lower-tail latents.
    pub sigma_lower: CorrelationMatrix,
    /// Σ₃: correlation of the Gaussian body.
    pub sigma_body: CorrelationMatrix,
}

impl ModelSpec {
    /// Independent dimensions (all Σᵢ = I).
    pub fn independent(marginals: Vec<MarginalParams>) -> Self {
        let n = marginals.len();
        Self {
            marginals,
            sigma_upper: CorrelationMatrix::identity(n),
            sigma_lower: CorrelationMatrix::identity(n),
            sigma_body: CorrelationMatrix::identity(n),
        }
    }

    pub fn bivariate(
        first: MarginalParams,
        second: MarginalParams,
        joint: PairJointParams,
    ) -> Self {
        Self {
            marginals: vec![first, second],
            sigma_upper: CorrelationMatrix::pair(joint.upper),
            sigma_lower: CorrelationMatrix::pair(joint.lower),
            sigma_body: CorrelationMatrix::pair(joint.body),
        }
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    /// `4n + 3n(n−1)/2`.
    pub fn parameter_count(&self) -> usize {
        let n = self.dim();
        4 * n + 3 * n * (n - 1) / 2
    }

    pub fn matrices(&self) -> [(&'static str, &CorrelationMatrix); 3] {
        [
            ("Sigma1", &self.sigma_upper),
            ("Sigma2", &self.sigma_lower),
            ("Sigma3", &self.sigma_body),
        ]
    }

    pub fn pair_params(&self, i: usize, j: usize) -> PairJointParams {
        PairJointParams {
            upper: self.sigma_upper.get(i, j),
            lower: self.sigma_lower.get(i, j),
            body: self.sigma_body.get(i, j),
        }
    }

    pub fn restrict_to_pair(&self, i: usize, j: usize) -> ModelSpec {
        ModelSpec::bivariate(self.marginals[i], self.marginals[j], self.pair_params(i, j))
    }

    pub fn validate(&self) -> Result<()> {
        if self.marginals.is_empty() {
            return Err(invalid("model must have at least one dimension"));
        }
        for m in &self.marginals {
            m.validate()?;
        }
        for (name, s) in self.matrices() {
            if s.dim() != self.dim() {
                return Err(invalid(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    s.dim(),
                    s.dim(),
                    n = self.dim()
                )));
            }
            s.check_structure(name)?;
            s.check_psd(name)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpVariantParams {
    pub mu: f64,
    pub rate_upper: f64,
    pub rate_lower: f64,
    pub sigma: f64,
}

impl ExpVariantParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_upper > 0.0 && self.rate_lower > 0.0) {
            return Err(invalid("exponential rates must be positive"));
        }
        if !(self.sigma >= 0.0) || !self.mu.is_finite() || !self.sigma.is_finite() {
            return Err(invalid("sigma must be finite and nonnegative, mu finite"));
        }
        Ok(())
    }
}

/// K×n observations stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    labels: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl SampleMatrix {
    pub fn new(labels: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != columns.len() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: columns.len(),
            });
        }
        let rows = columns.first().map_or(0, Vec::len);
        if columns.is_empty() || rows == 0 {
            return Err(Error::InvalidData(
                "sample matrix needs at least one row and one column".into(),
            ));
        }
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::LengthMismatch {
                    left: rows,
                    right: c.len(),
                });
            }
            if let Some(k) = c.iter().position(|x| !x.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "non-finite value at row {} column {} ({})",
                    k + 1,
                    j + 1,
                    labels[j]
                )));
            }
        }
        Ok(Self { labels, columns })
    }

    pub fn with_default_labels(columns: Vec<Vec<f64>>) -> Result<Self> {
        let labels = (1..=columns.len()).map(|j| format!("Y{j}")).collect();
        Self::new(labels, columns)
    }

    pub fn nrows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn into_columns(self) -> Vec<Vec<f64>> {
        self.columns
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[k]).collect()
    }
}

pub fn sample_univariate(p: &MarginalParams, count: usize, seed: SeedSpec) -> Result<Vec<f64>> {
    p.validate()?;
    if count == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let mut stream = seed.stream();
    let mut out = Vec::with_capacity(count);
    let mut redraws = 0usize;
    while out.len() < count {
        let (z1, z2, z3) = (
            stream.standard_normal(),
            stream.standard_normal(),
            stream.standard_normal(),
        );
        match p.transform(z1, z2, z3) {
            Some(y) => out.push(y),
            None => redraws += 1,
        }
    }
    if redraws > 0 {
        log::warn!("sample_univariate: redrew {redraws} overflowing draws");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpVariantSample {
    pub values: Vec<f64>,
    /// Set when a tail rate is ≤ 1, so `E[Y]` does not exist.
    pub mean_undefined: bool,
    pub overflow_redraws: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExpVariantOptions {
    /// Diagnostics: drive both exponential latents from the same uniform.
    pub tie_latents: bool,
}

pub fn sample_univariate_exp(
    p: &ExpVariantParams,
    count: usize,
    seed: SeedSpec,
    opts: ExpVariantOptions,
) -> Result<ExpVariantSample> {
    p.validate()?;
    if count == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let mut stream = seed.stream();
    let mut values = Vec::with_capacity(count);
    let mut overflow_redraws = 0;
    while values.len() < count {
        let u1 = stream.uniform();
        let u2 = if opts.tie_latents {
            u1
        } else {
            stream.uniform()
        };
        let z3 = stream.standard_normal();
        let z1 = -u1.ln() / p.rate_upper;
        let z2 = -u2.ln() / p.rate_lower;
        let y = p.mu + (z1.exp() - z2.exp() + p.sigma * z3);
        if y.is_finite() {
            values.push(y);
        } else {
            overflow_redraws += 1;
        }
    }
    Ok(ExpVariantSample {
        values,
        mean_undefined: p.rate_upper <= 1.0 || p.rate_lower <= 1.0,
        overflow_redraws,
    })
}

/// Correlated latent draws for one block: `root · z` with `z` iid standard normal.
struct LatentBlock {
    n: usize,
    root: Vec<f64>,
    scratch: Vec<f64>,
}

impl LatentBlock {
    fn new(m: &CorrelationMatrix) -> Self {
        let n = m.dim();
        Self {
            n,
            root: symmetric_sqrt(&m.0),
            scratch: vec![0.0; n],
        }
    }

    fn draw_into(&mut self, stream: &mut LatentStream, out: &mut [f64]) {
        stream.fill_standard_normal(&mut self.scratch);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.root[i * self.n..(i + 1) * self.n];
            *o = row.iter().zip(&self.scratch).map(|(a, b)| a * b).sum();
        }
    }
}

pub fn sample_multivariate(m: &ModelSpec, count: usize, seed: SeedSpec) -> Result<SampleMatrix> {
    m.validate()?;
    if count == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let n = m.dim();
    let mut blocks = [
        LatentBlock::new(&m.sigma_upper),
        LatentBlock::new(&m.sigma_lower),
        LatentBlock::new(&m.sigma_body),
    ];
    let mut stream = seed.stream();
    let mut columns = vec![Vec::with_capacity(count); n];
    let (mut z1, mut z2, mut z3) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut row = vec![0.0; n];
    let mut redraws = 0usize;
    let mut filled = 0;
    while filled < count {
        blocks[0].draw_into(&mut stream, &mut z1);
        blocks[1].draw_into(&mut stream, &mut z2);
        blocks[2].draw_into(&mut stream, &mut z3);
        let ok =
            m.marginals
                .iter()
                .enumerate()
                .all(|(j, p)| match p.transform(z1[j], z2[j], z3[j]) {
                    Some(y) => {
                        row[j] = y;
                        true
                    }
                    None => false,
                });
        if !ok {
            redraws += 1;
            continue;
        }
        for (c, y) in columns.iter_mut().zip(&row) {
            c.push(*y);
        }
        filled += 1;
    }
    if redraws > 0 {
        log::warn!("sample_multivariate: redrew {redraws} overflowing rows");
    }
    SampleMatrix::with_default_labels(columns)
}
