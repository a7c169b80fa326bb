use std::path::Path;

use heavytail::benchmarks::{benchmark_discrepancy, BenchmarkConfig};
use heavytail::joint_fit::{fit_all_pairs, fit_pair, CorrelationAssembly};
use heavytail::marginal_fit::{fit_marginal, MarginalFitResult};
use heavytail::model::sample_multivariate;
use heavytail::tail_metrics::{
    sample_correlation, tail_proxy, with_parameter, DiscrepancyReport, TailCurve, TailSide,
    SWEEP_PARAMETERS,
};
use heavytail::{MarginalParams, ModelSpec, PairJointParams, SampleMatrix, SeedSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    ConvergenceSection, FitSection, RandomTruth, RunConfig, TaildepSection, Truth,
};
use crate::error::CliError;
use crate::io::{fmt_f64, matrix_table, read_sample, sample_table, OutDir, Table};

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
}

const FIT_MARGINAL: u64 = 1;
const FIT_JOINT: u64 = 2;
const CONV_TRUTH: u64 = 3;
const CONV_DATA: u64 = 4;
const CONV_MARGINAL: u64 = 5;
const CONV_JOINT: u64 = 6;
const BENCH: u64 = 7;

fn stage(seed: u64, id: u64) -> SeedSpec {
    SeedSpec::from_seed(seed).child(id)
}

fn require_data(data: Option<&Path>) -> Result<&Path, CliError> {
    data.ok_or_else(|| CliError::Usage("this command needs --data PATH".into()))
}

pub fn cmd_sample(cfg: &RunConfig, out: &OutDir) -> Result<Status, CliError> {
    let seed = cfg.master_seed()?;
    let s = &cfg.sample;
    let model = s
        .model
        .as_ref()
        .ok_or_else(|| CliError::Usage("sample.model is required".into()))?;
    if s.draws == 0 {
        return Err(CliError::Usage("sample.draws must be positive".into()));
    }
    let mut sample = sample_multivariate(model, s.draws, SeedSpec::from_seed(seed))?;
    if let Some(labels) = &s.labels {
        if labels.len() != model.dim() {
            return Err(CliError::Usage(format!(
                "sample.labels has {} entries, model has {} dimensions",
                labels.len(),
                model.dim()
            )));
        }
        sample = SampleMatrix::new(labels.clone(), sample.into_columns())?;
    }
    out.write_table("samples.csv", &sample_table(&sample))?;
    Ok(Status::Ok)
}

#[derive(Debug, Clone, Serialize)]
pub struct FitOutput {
    pub labels: Vec<String>,
    pub marginals: Vec<MarginalFitResult>,
    pub assembly: Option<CorrelationAssembly>,
    pub model: ModelSpec,
}

impl FitOutput {
    pub fn converged(&self) -> bool {
        self.marginals.iter().all(|m| m.converged)
            && self
                .assembly
                .as_ref()
                .is_none_or(|a| a.pairs.iter().all(|p| p.result.converged))
    }
}

/// Marginal fits per column, then all pairwise joint fits.
pub fn fit_pipeline(
    data: &SampleMatrix,
    fit: &FitSection,
    seed: u64,
) -> Result<FitOutput, CliError> {
    fit.validate()?;
    let marginals = (0..data.ncols())
        .into_par_iter()
        .map(|j| {
            fit_marginal(
                data.column(j),
                &fit.marginal,
                stage(seed, FIT_MARGINAL).child(j as u64),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let params: Vec<MarginalParams> = marginals.iter().map(|m| m.params).collect();
    let (assembly, model) = if data.ncols() >= 2 {
        let a = fit_all_pairs(data, &params, &fit.joint.with_seed(stage(seed, FIT_JOINT)))?;
        let model = ModelSpec {
            marginals: params,
            sigma_upper: a.sigma_upper.clone(),
            sigma_lower: a.sigma_lower.clone(),
            sigma_body: a.sigma_body.clone(),
        };
        (Some(a), model)
    } else {
        (None, ModelSpec::independent(params))
    };
    Ok(FitOutput {
        labels: data.labels().to_vec(),
        marginals,
        assembly,
        model,
    })
}

fn write_fit(out: &OutDir, f: &FitOutput) -> Result<(), CliError> {
    let mut t = Table::new([
        "label",
        "mu",
        "u",
        "v",
        "sigma",
        "converged",
        "iterations",
        "residual_1",
        "residual_2",
        "residual_3",
        "residual_4",
    ]);
    for (label, m) in f.labels.iter().zip(&f.marginals) {
        let p = m.params;
        let mut row = vec![
            label.clone(),
            fmt_f64(p.mu),
            fmt_f64(p.u),
            fmt_f64(p.v),
            fmt_f64(p.sigma),
        ];
        row.push(m.converged.to_string());
        row.push(m.iterations.to_string());
        row.extend(m.residuals.as_array().iter().map(|&r| fmt_f64(r)));
        t.push(row);
    }
    out.write_table("marginals.csv", &t)?;

    if let Some(a) = &f.assembly {
        let mut pairs = Table::new([
            "first",
            "second",
            "upper",
            "lower",
            "body",
            "objective_body",
            "objective_tails",
            "converged",
            "alternations",
            "c",
        ]);
        for p in &a.pairs {
            let r = &p.result;
            pairs.push(vec![
                f.labels[p.i].clone(),
                f.labels[p.j].clone(),
                fmt_f64(r.params.upper),
                fmt_f64(r.params.lower),
                fmt_f64(r.params.body),
                fmt_f64(r.objective_body),
                fmt_f64(r.objective_tails),
                r.converged.to_string(),
                r.alternations.to_string(),
                fmt_f64(r.c),
            ]);
        }
        out.write_table("pairs.csv", &pairs)?;
        for (name, m) in a.matrices() {
            out.write_table(&format!("{name}.csv"), &matrix_table(&f.labels, m))?;
        }
        let mut rep = Table::new(["matrix", "repaired", "min_eig_before", "min_eig_after"]);
        for r in &a.reports {
            rep.push(vec![
                r.name.to_string(),
                r.repaired.to_string(),
                fmt_f64(r.min_eig_before),
                fmt_f64(r.min_eig_after),
            ]);
        }
        out.write_table("repair.csv", &rep)?;
    }
    out.write_json("model.json", &f.model)
}

pub fn cmd_fit(cfg: &RunConfig, data: Option<&Path>, out: &OutDir) -> Result<Status, CliError> {
    let seed = cfg.master_seed()?;
    cfg.fit.validate()?;
    let sample = read_sample(require_data(data)?)?;
    let f = fit_pipeline(&sample, &cfg.fit, seed)?;
    write_fit(out, &f)?;
    Ok(if f.converged() {
        Status::Ok
    } else {
        Status::NotConverged
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub panel: &'static str,
    pub k: u32,
    pub n: usize,
    pub mean_l2_error: f64,
    pub not_converged: usize,
}

fn draw_truth(r: &RandomTruth, seed: SeedSpec) -> Result<ModelSpec, CliError> {
    let mut s = seed.stream();
    let mut pick = |range: [f64; 2]| range[0] + (range[1] - range[0]) * s.uniform();
    let mut marg = || MarginalParams {
        mu: pick(r.mu),
        u: pick(r.u),
        v: pick(r.v),
        sigma: pick(r.sigma),
    };
    let (a, b) = (marg(), marg());
    let p = PairJointParams {
        upper: pick(r.rho),
        lower: pick(r.rho),
        body: pick(r.rho),
    };
    let m = ModelSpec::bivariate(a, b, p);
    m.validate()
        .map_err(|e| CliError::Usage(format!("convergence.truth: {e}")))?;
    Ok(m)
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

struct Trial {
    marginal_error: f64,
    all_error: f64,
    converged: bool,
}

fn run_trial(
    truth: &ModelSpec,
    n: usize,
    index: u64,
    fit: &FitSection,
    seed: u64,
) -> Result<Trial, CliError> {
    let data = sample_multivariate(truth, n, stage(seed, CONV_DATA).child(index))?;
    let mut est = Vec::with_capacity(11);
    let mut real = Vec::with_capacity(11);
    let mut converged = true;
    let mut params = Vec::with_capacity(2);
    for j in 0..2 {
        let r = fit_marginal(
            data.column(j),
            &fit.marginal,
            stage(seed, CONV_MARGINAL).child(index).child(j as u64),
        )?;
        converged &= r.converged;
        est.extend(r.params.as_array());
        real.extend(truth.marginals[j].as_array());
        params.push(r.params);
    }
    let marginal_error = l2(&est, &real);
    let jcfg = fit.joint.with_seed(stage(seed, CONV_JOINT).child(index));
    let j = fit_pair(
        data.column(0),
        data.column(1),
        &params[0],
        &params[1],
        &jcfg,
    )?;
    converged &= j.converged;
    est.extend(j.params.as_array());
    real.extend(truth.pair_params(0, 1).as_array());
    Ok(Trial {
        marginal_error,
        all_error: l2(&est, &real),
        converged,
    })
}

/// Average L2 recovery error per sample size, for marginal parameters only and
/// for all eleven parameters of a bivariate model.
///
/// Trial `t` uses the same data stream and fit seeds at every size, so the
/// smaller samples are prefixes of the larger ones.
pub fn convergence_experiment(
    c: &ConvergenceSection,
    fit: &FitSection,
    seed: u64,
) -> Result<Vec<ConvergenceRow>, CliError> {
    fit.validate()?;
    if c.trials == 0 || c.base_size < 100 || c.log2_steps.is_empty() {
        return Err(CliError::Usage(
            "convergence needs trials >= 1, base_size >= 100 and at least one step".into(),
        ));
    }
    if c.log2_steps.iter().any(|&k| k > 20) {
        return Err(CliError::Usage(
            "convergence.log2_steps entries must be <= 20".into(),
        ));
    }
    let truths = (0..c.trials)
        .map(|t| match &c.truth {
            Truth::Fixed(m) => {
                if m.dim() != 2 {
                    return Err(CliError::Usage(
                        "convergence.truth must be two-dimensional".into(),
                    ));
                }
                m.validate()
                    .map_err(|e| CliError::Usage(format!("convergence.truth: {e}")))?;
                Ok(m.clone())
            }
            Truth::Random(r) => draw_truth(r, stage(seed, CONV_TRUTH).child(t as u64)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..c.log2_steps.len())
        .flat_map(|s| (0..c.trials).map(move |t| (s, t)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(s, t)| {
            let n = c.base_size << c.log2_steps[s];
            run_trial(&truths[t], n, t as u64, fit, seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (panel, pick) in [("marginal", 0usize), ("all", 1usize)] {
        for (s, &k) in c.log2_steps.iter().enumerate() {
            let chunk = &trials[s * c.trials..(s + 1) * c.trials];
            let err: f64 = chunk
                .iter()
                .map(|t| {
                    if pick == 0 {
                        t.marginal_error
                    } else {
                        t.all_error
                    }
                })
                .sum::<f64>()
                / c.trials as f64;
            rows.push(ConvergenceRow {
                panel,
                k,
                n: c.base_size << k,
                mean_l2_error: err,
                not_converged: chunk.iter().filter(|t| !t.converged).count(),
            });
        }
    }
    Ok(rows)
}

pub fn cmd_convergence(cfg: &RunConfig, out: &OutDir) -> Result<Status, CliError> {
    let seed = cfg.master_seed()?;
    let rows = convergence_experiment(&cfg.convergence, &cfg.fit, seed)?;
    let mut t = Table::new([
        "panel",
        "log2_n_over_base",
        "n",
        "mean_l2_error",
        "not_converged",
    ]);
    for r in &rows {
        t.push(vec![
            r.panel.to_string(),
            r.k.to_string(),
            r.n.to_string(),
            fmt_f64(r.mean_l2_error),
            r.not_converged.to_string(),
        ]);
    }
    out.write_table("convergence.csv", &t)?;
    Ok(Status::Ok)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaildepPoint {
    pub value: f64,
    pub correlation: f64,
    pub lower: TailCurve,
    pub upper: TailCurve,
}

/// Sweep one named parameter of the base model. Every value reuses the same
/// latent draws.
pub fn taildep_sweep(t: &TaildepSection, seed: u64) -> Result<Vec<TaildepPoint>, CliError> {
    if !SWEEP_PARAMETERS.contains(&t.parameter.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown taildep.parameter '{}', expected one of {}",
            t.parameter,
            SWEEP_PARAMETERS.join(", ")
        )));
    }
    if t.values.is_empty() {
        return Err(CliError::Usage("taildep.values is empty".into()));
    }
    t.base.validate()?;
    t.values
        .iter()
        .map(|&value| {
            let spec = with_parameter(&t.base, &t.parameter, value)?;
            let s = sample_multivariate(&spec, t.draws, SeedSpec::from_seed(seed))?;
            let (x, y) = (s.column(0), s.column(1));
            Ok(TaildepPoint {
                value,
                correlation: sample_correlation(x, y)?,
                lower: tail_proxy(x, y, &t.tau_grid, TailSide::Lower)?,
                upper: tail_proxy(x, y, &t.tau_grid, TailSide::Upper)?,
            })
        })
        .collect()
}

pub fn cmd_taildep(cfg: &RunConfig, out: &OutDir) -> Result<Status, CliError> {
    let seed = cfg.master_seed()?;
    let t = &cfg.taildep;
    let points = taildep_sweep(t, seed)?;
    let mut corr = Table::new(["parameter", "value", "correlation"]);
    let mut lower = Table::new(["parameter", "value", "tau", "lambda"]);
    let mut upper = lower.clone();
    for p in &points {
        corr.push(vec![
            t.parameter.clone(),
            fmt_f64(p.value),
            fmt_f64(p.correlation),
        ]);
        for (table, curve) in [(&mut lower, &p.lower), (&mut upper, &p.upper)] {
            for (tau, l) in curve.tau.iter().zip(&curve.lambda) {
                table.push(vec![
                    t.parameter.clone(),
                    fmt_f64(p.value),
                    fmt_f64(*tau),
                    fmt_f64(*l),
                ]);
            }
        }
    }
    out.write_table("taildep_correlation.csv", &corr)?;
    out.write_table("taildep_lower.csv", &lower)?;
    out.write_table("taildep_upper.csv", &upper)?;
    Ok(Status::Ok)
}

#[derive(Debug, Clone, Serialize)]
pub struct PairDiscrepancy {
    pub first: usize,
    pub second: usize,
    pub reports: Vec<DiscrepancyReport>,
}

/// Fit the model, then score it and each copula family on every pair.
pub fn discrepancy_tables(
    cfg: &RunConfig,
    data: &SampleMatrix,
    seed: u64,
) -> Result<(FitOutput, Vec<PairDiscrepancy>), CliError> {
    if data.ncols() < 2 {
        return Err(CliError::Data(
            "discrepancy needs at least two columns".into(),
        ));
    }
    let d = &cfg.discrepancy;
    if d.taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(CliError::Usage(
            "discrepancy.taus must lie in (0, 1)".into(),
        ));
    }
    let fit = fit_pipeline(data, &cfg.fit, seed)?;
    let n = data.ncols();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let out = pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let bc = BenchmarkConfig {
                taus: d.taus.clone(),
                sim_draws: d.sim_draws,
                seed: stage(seed, BENCH).child(k as u64),
                fit: d.copula_fit,
            };
            let ours = fit.model.restrict_to_pair(i, j);
            let reports =
                benchmark_discrepancy(data.column(i), data.column(j), &d.families, &ours, &bc)?;
            Ok(PairDiscrepancy {
                first: i,
                second: j,
                reports,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok((fit, out))
}

pub fn cmd_discrepancy(
    cfg: &RunConfig,
    data: Option<&Path>,
    out: &OutDir,
) -> Result<Status, CliError> {
    let seed = cfg.master_seed()?;
    cfg.fit.validate()?;
    let sample = read_sample(require_data(data)?)?;
    let (fit, pairs) = discrepancy_tables(cfg, &sample, seed)?;
    let labels = sample.labels();
    let pair_name = |p: &PairDiscrepancy| format!("{}-{}", labels[p.first], labels[p.second]);

    let mut table =
        Table::new(std::iter::once("model".to_string()).chain(pairs.iter().map(pair_name)));
    let models: Vec<String> = pairs[0].reports.iter().map(|r| r.label.clone()).collect();
    for (m, model) in models.iter().enumerate() {
        table.push(
            std::iter::once(model.clone())
                .chain(pairs.iter().map(|p| fmt_f64(p.reports[m].d)))
                .collect(),
        );
    }
    let mut detail = Table::new([
        "pair",
        "model",
        "tau",
        "side",
        "tau_star_model",
        "tau_star_data",
    ]);
    for p in &pairs {
        for r in &p.reports {
            for row in &r.rows {
                let side = match row.side {
                    TailSide::Lower => "lower",
                    TailSide::Upper => "upper",
                };
                detail.push(vec![
                    pair_name(p),
                    r.label.clone(),
                    fmt_f64(row.tau),
                    side.to_string(),
                    fmt_f64(row.tau_star_model),
                    fmt_f64(row.tau_star_data),
                ]);
            }
        }
    }
    write_fit(out, &fit)?;
    out.write_table("discrepancy.csv", &table)?;
    out.write_table("discrepancy_detail.csv", &detail)?;
    Ok(if fit.converged() {
        Status::Ok
    } else {
        Status::NotConverged
    })
}
