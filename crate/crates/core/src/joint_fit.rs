//! Pairwise simulated-method-of-moments estimation of the latent correlations
//! `(ρ¹, ρ², ρ³)` with the marginals held fixed.
//!
//! The body correlation ρ³ is matched to the product moment `E[YᵢYⱼ]`. The tail
//! correlations are matched to four corner moments built from
//! `f(x) = ln(max(x − c, 1))` and `g(x) = ln(max(−x − c, 1))`. Model-side
//! expectations come from one fixed set of base normals per pair, so the
//! objective is a smooth deterministic function of the candidate.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::latent::SeedSpec;
use crate::linalg::{min_eigenvalue, repair_psd, CorrelationMatrix};
use crate::model::{MarginalParams, PairJointParams, SampleMatrix};
use crate::optim::{golden_section, nelder_mead, SimplexOptions};

/// Estimates are kept inside `(−RHO_BOUND, RHO_BOUND)`.
pub const RHO_BOUND: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    /// `f`, the upper corner transform.
    F,
    /// `g`, the lower corner transform.
    G,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerTransforms {
    pub c: f64,
}

impl CornerTransforms {
    pub fn new(c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(invalid(format!(
                "corner threshold must be finite and >= 0, got {c}"
            )));
        }
        Ok(Self { c })
    }

    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        (x - self.c).max(1.0).ln()
    }

    #[inline]
    pub fn g(&self, x: f64) -> f64 {
        (-x - self.c).max(1.0).ln()
    }

    #[inline]
    pub fn apply(&self, h: Corner, x: f64) -> f64 {
        match h {
            Corner::F => self.f(x),
            Corner::G => self.g(x),
        }
    }
}

/// The four corner pairs in a fixed order: `(f,f)`, `(g,g)`, `(f,g)`, `(g,f)`.
pub const CORNERS: [(Corner, Corner); 4] = [
    (Corner::F, Corner::F),
    (Corner::G, Corner::G),
    (Corner::F, Corner::G),
    (Corner::G, Corner::F),
];

/// `(1/K)·Σ h₁(xₖ)·h₂(yₖ)`.
pub fn corner_moment(
    x: &[f64],
    y: &[f64],
    h1: Corner,
    h2: Corner,
    t: &CornerTransforms,
) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::InvalidData(
            "corner moment of an empty sample".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData(
            "sample contains non-finite values".into(),
        ));
    }
    let s: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| t.apply(h1, a) * t.apply(h2, b))
        .sum();
    Ok(s / x.len() as f64)
}

/// How the corner threshold `c` is chosen for a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CRule {
    Fixed(f64),
    /// Place the activation point (`|x| = c + 1`) at the larger of the two
    /// series' `q` and `1 − q` quantile magnitudes.
    Quantile(f64),
}

impl Default for CRule {
    fn default() -> Self {
        CRule::Quantile(0.95)
    }
}

impl CRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CRule::Fixed(c) => CornerTransforms::new(c).map(|_| ()),
            CRule::Quantile(q) if q > 0.5 && q < 1.0 => Ok(()),
            CRule::Quantile(q) => Err(invalid(format!(
                "quantile rule needs q in (0.5, 1), got {q}"
            ))),
        }
    }

    pub fn transforms(&self, x: &[f64], y: &[f64]) -> Result<CornerTransforms> {
        match *self {
            CRule::Fixed(c) => CornerTransforms::new(c),
            CRule::Quantile(q) => {
                let mut level = 0.0f64;
                for s in [x, y] {
                    let mut sorted = s.to_vec();
                    sorted.sort_by(f64::total_cmp);
                    level = level
                        .max(empirical_quantile(&sorted, q).abs())
                        .max(empirical_quantile(&sorted, 1.0 - q).abs());
                }
                CornerTransforms::new((level - 1.0).max(0.0))
            }
        }
    }
}

/// Linear-interpolation quantile of sorted data.
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointFitConfig {
    pub sim_draws: usize,
    pub c_rule: CRule,
    pub max_alternations: usize,
    pub rho_tol: f64,
    pub seed: SeedSpec,
    /// Eigenvalue floor for assembled matrices.
    pub psd_floor: f64,
}

impl Default for JointFitConfig {
    fn default() -> Self {
        Self {
            sim_draws: 1_000_000,
            c_rule: CRule::default(),
            max_alternations: 50,
            rho_tol: 1e-4,
            seed: SeedSpec::from_seed(0),
            psd_floor: 1e-6,
        }
    }
}

impl JointFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sim_draws < 100_000 {
            return Err(invalid(format!(
                "sim_draws must be at least 100000, got {}",
                self.sim_draws
            )));
        }
        self.c_rule.validate()?;
        if self.max_alternations == 0 {
            return Err(invalid("max_alternations must be positive"));
        }
        if !(self.rho_tol > 0.0) {
            return Err(invalid("rho_tol must be positive"));
        }
        if !(self.psd_floor > 0.0 && self.psd_floor < 1.0) {
            return Err(invalid("psd_floor must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointFitResult {
    pub params: PairJointParams,
    pub objective_body: f64,
    pub objective_tails: f64,
    pub converged: bool,
    pub alternations: usize,
    pub c: f64,
}

/// Data-side moments of a pair: `E[xy]` and the four corner moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMoments {
    pub body: f64,
    pub corners: [f64; 4],
}

impl PairMoments {
    pub fn from_data(x: &[f64], y: &[f64], t: &CornerTransforms) -> Result<Self> {
        check_pair(x, y)?;
        let n = x.len() as f64;
        let body = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
        let mut corners = [0.0; 4];
        for (c, &(h1, h2)) in corners.iter_mut().zip(&CORNERS) {
            *c = corner_moment(x, y, h1, h2, t)?;
        }
        Ok(Self { body, corners })
    }

    fn tails_residual(&self, model: &[f64; 4]) -> f64 {
        model
            .iter()
            .zip(&self.corners)
            .map(|(m, d)| (m - d).powi(2))
            .sum()
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientSample(
            "a pair needs at least 2 observations".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData(
            "sample contains non-finite values".into(),
        ));
    }
    Ok(())
}

/// Model-side simulator for one pair on fixed base normals.
///
/// `Yᵢ` uses the first normal of each latent pair and does not depend on the
/// candidate, so it is computed once. Rows where neither `f(Yᵢ)` nor `g(Yᵢ)` is
/// positive contribute nothing to any corner moment and are skipped there.
pub struct PairSimulator {
    mi: MarginalParams,
    mj: MarginalParams,
    t: CornerTransforms,
    base: [Vec<f64>; 6],
    yi: Vec<f64>,
    fi: Vec<f64>,
    gi: Vec<f64>,
    active: Vec<usize>,
    yi_a3: f64,
    yi_b3: f64,
}

impl PairSimulator {
    pub fn new(
        mi: MarginalParams,
        mj: MarginalParams,
        t: CornerTransforms,
        draws: usize,
        seed: SeedSpec,
    ) -> Result<Self> {
        mi.validate()?;
        mj.validate()?;
        if draws == 0 {
            return Err(invalid("simulation needs at least one draw"));
        }
        let mut stream = seed.stream();
        let base: [Vec<f64>; 6] = std::array::from_fn(|_| stream.standard_normals(draws));
        let yi: Vec<f64> = (0..draws)
            .map(|k| {
                mi.mu + (mi.u * base[0][k]).exp() - (mi.v * base[2][k]).exp()
                    + mi.sigma * base[4][k]
            })
            .collect();
        if yi.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidData(
                "simulated values overflow for these marginal parameters".into(),
            ));
        }
        let fi: Vec<f64> = yi.iter().map(|&y| t.f(y)).collect();
        let gi: Vec<f64> = yi.iter().map(|&y| t.g(y)).collect();
        let active = (0..draws).filter(|&k| fi[k] > 0.0 || gi[k] > 0.0).collect();
        let n = draws as f64;
        let yi_a3 = yi.iter().zip(&base[4]).map(|(y, a)| y * a).sum::<f64>() / n;
        let yi_b3 = yi.iter().zip(&base[5]).map(|(y, b)| y * b).sum::<f64>() / n;
        Ok(Self {
            mi,
            mj,
            t,
            base,
            yi,
            fi,
            gi,
            active,
            yi_a3,
            yi_b3,
        })
    }

    pub fn draws(&self) -> usize {
        self.yi.len()
    }

    pub fn transforms(&self) -> CornerTransforms {
        self.t
    }

    #[inline]
    fn yj(&self, k: usize, r: &[(f64, f64); 3]) -> f64 {
        let b = &self.base;
        let z1 = r[0].0 * b[0][k] + r[0].1 * b[1][k];
        let z2 = r[1].0 * b[2][k] + r[1].1 * b[3][k];
        let z3 = r[2].0 * b[4][k] + r[2].1 * b[5][k];
        self.mj.mu + (self.mj.u * z1).exp() - (self.mj.v * z2).exp() + self.mj.sigma * z3
    }

    /// `E[Yᵢ·(Yⱼ − σⱼZ₃ⱼ)]`, the part of the product moment that depends on ρ¹ and ρ².
    fn body_tail_part(&self, upper: f64, lower: f64) -> f64 {
        let r = coefficients(upper, lower, 0.0);
        let r = [r[0], r[1], (0.0, 0.0)];
        let s: f64 = (0..self.draws()).map(|k| self.yi[k] * self.yj(k, &r)).sum();
        s / self.draws() as f64
    }

    fn body_from_part(&self, part: f64, body: f64) -> f64 {
        let (a, b) = coefficient(body);
        part + self.mj.sigma * (a * self.yi_a3 + b * self.yi_b3)
    }

    /// Model-side `E[YᵢYⱼ]`.
    pub fn body_moment(&self, p: &PairJointParams) -> f64 {
        self.body_from_part(self.body_tail_part(p.upper, p.lower), p.body)
    }

    /// Model-side corner moments in [`CORNERS`] order.
    pub fn corner_moments(&self, p: &PairJointParams) -> [f64; 4] {
        let r = coefficients(p.upper, p.lower, p.body);
        let mut s = [0.0; 4];
        for &k in &self.active {
            let y = self.yj(k, &r);
            let (fj, gj) = (self.t.f(y), self.t.g(y));
            s[0] += self.fi[k] * fj;
            s[1] += self.gi[k] * gj;
            s[2] += self.fi[k] * gj;
            s[3] += self.gi[k] * fj;
        }
        s.map(|v| v / self.draws() as f64)
    }

    /// Simulated second coordinate of the pair under `p`.
    pub fn partner(&self, p: &PairJointParams) -> Vec<f64> {
        let r = coefficients(p.upper, p.lower, p.body);
        (0..self.draws()).map(|k| self.yj(k, &r)).collect()
    }

    pub fn first(&self) -> &[f64] {
        &self.yi
    }

    pub fn marginals(&self) -> (MarginalParams, MarginalParams) {
        (self.mi, self.mj)
    }
}

#[inline]
fn coefficient(rho: f64) -> (f64, f64) {
    (rho, (1.0 - rho * rho).max(0.0).sqrt())
}

fn coefficients(upper: f64, lower: f64, body: f64) -> [(f64, f64); 3] {
    [coefficient(upper), coefficient(lower), coefficient(body)]
}

/// Body and tail objectives of `candidate` against `data`.
pub fn smm_objective(
    candidate: &PairJointParams,
    data: &PairMoments,
    sim: &PairSimulator,
) -> Result<(f64, f64)> {
    candidate.validate()?;
    let body = (sim.body_moment(candidate) - data.body).powi(2);
    let tails = data.tails_residual(&sim.corner_moments(candidate));
    Ok((body, tails))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
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
        c / (vx * vy).sqrt()
    } else {
        0.0
    }
}

fn to_free(rho: f64) -> f64 {
    (rho / RHO_BOUND).clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh()
}

fn from_free(x: f64) -> f64 {
    RHO_BOUND * x.tanh()
}

/// Whether `(a, ma)` should come after `(b, mb)` in the canonical pair order.
fn should_swap(a: &[f64], ma: &MarginalParams, b: &[f64], mb: &MarginalParams) -> bool {
    let key = ma
        .as_array()
        .iter()
        .zip(mb.as_array().iter())
        .map(|(x, y)| x.total_cmp(y))
        .chain(a.iter().zip(b).map(|(x, y)| x.total_cmp(y)))
        .find(|o| o.is_ne());
    key == Some(std::cmp::Ordering::Greater)
}

/// Fit `(ρ¹, ρ², ρ³)` for one pair with both marginals frozen.
///
/// The result does not depend on which series is passed first.
pub fn fit_pair(
    data_i: &[f64],
    data_j: &[f64],
    marg_i: &MarginalParams,
    marg_j: &MarginalParams,
    cfg: &JointFitConfig,
) -> Result<JointFitResult> {
    cfg.validate()?;
    check_pair(data_i, data_j)?;
    if should_swap(data_i, marg_i, data_j, marg_j) {
        return fit_pair(data_j, data_i, marg_j, marg_i, cfg);
    }
    let t = cfg.c_rule.transforms(data_i, data_j)?;
    let data = PairMoments::from_data(data_i, data_j, &t)?;
    let sim = PairSimulator::new(*marg_i, *marg_j, t, cfg.sim_draws, cfg.seed)?;

    let r0 = pearson(data_i, data_j).clamp(-0.99, 0.99);
    let mut p = PairJointParams {
        upper: r0.clamp(0.0, 0.9),
        lower: r0.clamp(0.0, 0.9),
        body: r0,
    };
    let mut converged = false;
    let mut alternations = 0;
    let tail_opts = SimplexOptions {
        initial_step: 0.2,
        max_evals: 400,
        f_tol: 0.0,
        x_tol: 1e-6,
    };
    while alternations < cfg.max_alternations {
        alternations += 1;
        let prev = p;

        let part = sim.body_tail_part(p.upper, p.lower);
        let body_obj = |r: f64| (sim.body_from_part(part, r) - data.body).powi(2);
        let (r3, v3) = golden_section(body_obj, -RHO_BOUND, RHO_BOUND, 80, 1e-9);
        if v3 <= body_obj(p.body) {
            p.body = r3;
        }

        let body = p.body;
        let tails_obj = |x: &[f64]| {
            let q = PairJointParams {
                upper: from_free(x[0]),
                lower: from_free(x[1]),
                body,
            };
            data.tails_residual(&sim.corner_moments(&q))
        };
        let m = nelder_mead(tails_obj, &[to_free(p.upper), to_free(p.lower)], tail_opts);
        p.upper = from_free(m.x[0]);
        p.lower = from_free(m.x[1]);

        let change = prev
            .as_array()
            .iter()
            .zip(p.as_array().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if change < cfg.rho_tol {
            converged = true;
            break;
        }
    }
    let (objective_body, objective_tails) = smm_objective(&p, &data, &sim)?;
    Ok(JointFitResult {
        params: p,
        objective_body,
        objective_tails,
        converged,
        alternations,
        c: t.c,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFit {
    pub i: usize,
    pub j: usize,
    pub result: JointFitResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepairReport {
    pub name: &'static str,
    pub repaired: bool,
    pub min_eig_before: f64,
    pub min_eig_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationAssembly {
    pub sigma_upper: CorrelationMatrix,
    pub sigma_lower: CorrelationMatrix,
    pub sigma_body: CorrelationMatrix,
    pub reports: [RepairReport; 3],
    pub pairs: Vec<PairFit>,
}

impl CorrelationAssembly {
    pub fn matrices(&self) -> [(&'static str, &CorrelationMatrix); 3] {
        [
            ("Sigma1", &self.sigma_upper),
            ("Sigma2", &self.sigma_lower),
            ("Sigma3", &self.sigma_body),
        ]
    }
}

/// Build the three matrices from pairwise estimates and repair each one.
pub fn assemble(n: usize, pairs: Vec<PairFit>, floor: f64) -> Result<CorrelationAssembly> {
    if !(floor > 0.0 && floor < 1.0) {
        return Err(invalid("psd floor must lie in (0, 1)"));
    }
    let mut raw = [
        DMatrix::identity(n, n),
        DMatrix::identity(n, n),
        DMatrix::identity(n, n),
    ];
    for pf in &pairs {
        if pf.i >= n || pf.j >= n || pf.i == pf.j {
            return Err(invalid(format!(
                "bad pair index ({}, {}) for dimension {n}",
                pf.i, pf.j
            )));
        }
        for (m, r) in raw.iter_mut().zip(pf.result.params.as_array()) {
            m[(pf.i, pf.j)] = r;
            m[(pf.j, pf.i)] = r;
        }
    }
    let names = ["Sigma1", "Sigma2", "Sigma3"];
    let mut reports = [RepairReport {
        name: "",
        repaired: false,
        min_eig_before: 0.0,
        min_eig_after: 0.0,
    }; 3];
    let mut out: Vec<CorrelationMatrix> = Vec::with_capacity(3);
    for (k, m) in raw.iter().enumerate() {
        let before = min_eigenvalue(m);
        let repaired = before < floor;
        let fixed = if repaired {
            repair_psd(m, floor)
        } else {
            m.clone()
        };
        reports[k] = RepairReport {
            name: names[k],
            repaired,
            min_eig_before: before,
            min_eig_after: min_eigenvalue(&fixed),
        };
        out.push(CorrelationMatrix(fixed));
    }
    let mut it = out.into_iter();
    Ok(CorrelationAssembly {
        sigma_upper: it.next().unwrap(),
        sigma_lower: it.next().unwrap(),
        sigma_body: it.next().unwrap(),
        reports,
        pairs,
    })
}

/// Fit every pair of columns and assemble repaired correlation matrices.
///
/// Pair `k` in row-major order `(0,1), (0,2), …` simulates on stream `k`, so the
/// result does not depend on scheduling.
pub fn fit_all_pairs(
    data: &SampleMatrix,
    marginals: &[MarginalParams],
    cfg: &JointFitConfig,
) -> Result<CorrelationAssembly> {
    cfg.validate()?;
    let n = data.ncols();
    if marginals.len() != n {
        return Err(Error::LengthMismatch {
            left: marginals.len(),
            right: n,
        });
    }
    let index: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let fits: Vec<Result<PairFit>> = index
        .par_iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let pair_cfg = JointFitConfig {
                seed: cfg.seed.with_stream(k as u64),
                ..*cfg
            };
            let result = fit_pair(
                data.column(i),
                data.column(j),
                &marginals[i],
                &marginals[j],
                &pair_cfg,
            )?;
            Ok(PairFit { i, j, result })
        })
        .collect();
    let pairs = fits.into_iter().collect::<Result<Vec<_>>>()?;
    for pf in pairs.iter().filter(|p| !p.result.converged) {
        log::warn!(
            "pair ({}, {}) did not converge after {} alternations",
            pf.i,
            pf.j,
            pf.result.alternations
        );
    }
    assemble(n, pairs, cfg.psd_floor)
}
