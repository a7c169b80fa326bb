use std::path::Path;

use heavytail::benchmarks::{CopulaFamily, CopulaFitOptions};
use heavytail::joint_fit::{CRule, JointFitConfig};
use heavytail::marginal_fit::MarginalFitConfig;
use heavytail::tail_metrics::{base_config, default_tau_grid, DISCREPANCY_TAUS, SWEEP_VALUES};
use heavytail::{MarginalParams, ModelSpec, PairJointParams, SeedSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Effective settings for one run. Every section has defaults; the resolved
/// value is echoed to `config.json` in the output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub sample: SampleSection,
    pub fit: FitSection,
    pub convergence: ConvergenceSection,
    pub taildep: TaildepSection,
    pub discrepancy: DiscrepancySection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn master_seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| {
            CliError::Usage("a seed is required: set \"seed\" in the config or pass --seed".into())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub draws: usize,
    pub model: Option<ModelSpec>,
    pub labels: Option<Vec<String>>,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            draws: 1000,
            model: None,
            labels: None,
        }
    }
}

/// Joint-fit settings; the seed comes from the run's master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointSection {
    pub sim_draws: usize,
    pub c_rule: CRule,
    pub max_alternations: usize,
    pub rho_tol: f64,
    pub psd_floor: f64,
}

impl Default for JointSection {
    fn default() -> Self {
        let d = JointFitConfig::default();
        Self {
            sim_draws: d.sim_draws,
            c_rule: d.c_rule,
            max_alternations: d.max_alternations,
            rho_tol: d.rho_tol,
            psd_floor: d.psd_floor,
        }
    }
}

impl JointSection {
    pub fn with_seed(&self, seed: SeedSpec) -> JointFitConfig {
        JointFitConfig {
            sim_draws: self.sim_draws,
            c_rule: self.c_rule,
            max_alternations: self.max_alternations,
            rho_tol: self.rho_tol,
            seed,
            psd_floor: self.psd_floor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub marginal: MarginalFitConfig,
    pub joint: JointSection,
}

impl FitSection {
    pub fn validate(&self) -> Result<(), CliError> {
        self.marginal
            .validate()
            .map_err(|e| CliError::Usage(format!("fit.marginal: {e}")))?;
        self.joint
            .with_seed(SeedSpec::from_seed(0))
            .validate()
            .map_err(|e| CliError::Usage(format!("fit.joint: {e}")))
    }
}

/// Parameters the recovery experiment samples from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Fixed(ModelSpec),
    /// A fresh bivariate spec per trial, drawn uniformly from the given ranges.
    Random(RandomTruth),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomTruth {
    pub mu: [f64; 2],
    pub u: [f64; 2],
    pub v: [f64; 2],
    pub sigma: [f64; 2],
    pub rho: [f64; 2],
}

impl Default for RandomTruth {
    fn default() -> Self {
        Self {
            mu: [-1.0, 1.0],
            u: [0.2, 0.8],
            v: [0.2, 0.8],
            sigma: [0.5, 1.5],
            rho: [0.0, 0.8],
        }
    }
}

/// Both dimensions `(μ=1, u=0.6, v=0.6, σ=0.5)`, `(ρ¹, ρ², ρ³) = (0.8, 0.3, 0.5)`.
pub fn default_truth() -> ModelSpec {
    let m = MarginalParams {
        mu: 1.0,
        u: 0.6,
        v: 0.6,
        sigma: 0.5,
    };
    ModelSpec::bivariate(
        m,
        m,
        PairJointParams {
            upper: 0.8,
            lower: 0.3,
            body: 0.5,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    pub base_size: usize,
    /// Sample sizes are `base_size · 2^k` for each listed `k`.
    pub log2_steps: Vec<u32>,
    pub trials: usize,
    pub truth: Truth,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self {
            base_size: 10_000,
            log2_steps: (0..=7).collect(),
            trials: 20,
            truth: Truth::Fixed(default_truth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaildepSection {
    pub parameter: String,
    pub values: Vec<f64>,
    pub draws: usize,
    pub tau_grid: Vec<f64>,
    pub base: ModelSpec,
}

impl Default for TaildepSection {
    fn default() -> Self {
        Self {
            parameter: "v1".into(),
            values: SWEEP_VALUES.to_vec(),
            draws: 1_000_000,
            tau_grid: default_tau_grid(),
            base: base_config(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscrepancySection {
    pub families: Vec<CopulaFamily>,
    pub taus: Vec<f64>,
    pub sim_draws: usize,
    pub copula_fit: CopulaFitOptions,
}

impl Default for DiscrepancySection {
    fn default() -> Self {
        Self {
            families: CopulaFamily::ALL.to_vec(),
            taus: DISCREPANCY_TAUS.to_vec(),
            sim_draws: 1_000_000,
            copula_fit: CopulaFitOptions::default(),
        }
    }
}
