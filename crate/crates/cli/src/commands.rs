//! The five subcommands. Each reads a validated [`RunConfig`], writes its
//! files into the output directory and returns a short text summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use bolm_core::estimator::{fit, Coefficient, FitOptions, FitResult};
use bolm_core::inference::{
    gray_weighted_test, lrp_null_models, lrp_null_scenario, ppom_chi2_test, simulate_lrp_null, LrpResult,
};
use bolm_core::link::{empirical_log_gor, log_gor_surface};
use bolm_core::penalty::{Arc2Terms, Penalty, SurfaceLambda};
use bolm_core::simulation::{run_loss_benchmark, GeneratingModel};
use bolm_core::{BolmError, ModelSpec, PenaltyConfig};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Experiment, ModelConfig, ProfileConfig, RunConfig, TestMethod};
use crate::error::{CliError, CliResult};
use crate::ingest::{self, DataSummary, Loaded};

fn load_data(cfg: &RunConfig) -> CliResult<Loaded> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a data section".into()))?;
    ingest::load(data, &cfg.resolve(&data.path))
}

fn build_spec(model: Option<&ModelConfig>, loaded: &Loaded) -> CliResult<ModelSpec> {
    let model = model.ok_or_else(|| CliError::Config("this command needs a model section".into()))?;
    model.build(loaded.dataset.pair(), &loaded.covariate_names)
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Grid of values with two decimals, `inf`/`-inf` for empty quadrants.
pub fn format_grid(g: &DMatrix<f64>) -> String {
    let mut s = String::from("r\\c");
    for c in 1..=g.ncols() {
        let _ = write!(s, "\t{c}");
    }
    s.push('\n');
    for r in 0..g.nrows() {
        let _ = write!(s, "{}", r + 1);
        for c in 0..g.ncols() {
            let _ = write!(s, "\t{:.2}", g[(r, c)]);
        }
        s.push('\n');
    }
    s
}

pub fn empirical(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    let loaded = load_data(cfg)?;
    let pair = loaded.dataset.pair();
    let g = empirical_log_gor(pair, &loaded.dataset.pooled_counts());
    let mut csv = String::from("r,c,log_gor\n");
    for r in 0..g.nrows() {
        for c in 0..g.ncols() {
            let _ = writeln!(csv, "{},{},{}", r + 1, c + 1, g[(r, c)]);
        }
    }
    write_file(&out.join("empirical_log_gor.csv"), &csv)?;
    Ok(format_grid(&g))
}

#[derive(Debug, Clone, Serialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_score: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub data: DataSummary,
    pub penalty: PenaltyConfig,
    pub parameters: usize,
    pub coefficients: Vec<Coefficient>,
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub penalty_value: f64,
    pub aic: f64,
    pub deviance_g2: f64,
    pub edf: f64,
    pub nominal_params: usize,
    /// Free cell probabilities across groups minus nominal parameters.
    pub residual_df: i64,
    pub convergence: Convergence,
}

impl FitReport {
    pub fn new(data: DataSummary, penalty: PenaltyConfig, f: &FitResult) -> Self {
        let cells = f.spec.pair().cells() as i64;
        let groups = data.groups as i64;
        Self {
            data,
            penalty,
            parameters: f.spec.n_params(),
            coefficients: f.coefficients(),
            loglik: f.loglik,
            penalized_loglik: f.penalized_loglik,
            penalty_value: f.penalty_value,
            aic: f.aic,
            deviance_g2: f.deviance_g2,
            edf: f.edf,
            nominal_params: f.nominal_params,
            residual_df: cells * groups - groups - f.nominal_params as i64,
            convergence: Convergence {
                converged: f.converged,
                iterations: f.iterations,
                max_abs_score: f.max_abs_score,
                failure: f.failure.clone(),
            },
        }
    }
}

fn fitted_surface_csv(f: &FitResult) -> CliResult<String> {
    let mut csv = String::from("r,c,log_gor,group\n");
    for (k, pi) in f.fitted_probs.iter().enumerate() {
        let g = log_gor_surface(pi)?;
        for r in 0..g.nrows() {
            for c in 0..g.ncols() {
                let _ = writeln!(csv, "{},{},{},{}", r + 1, c + 1, g[(r, c)], k + 1);
            }
        }
    }
    Ok(csv)
}

pub fn fit_command(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    let loaded = load_data(cfg)?;
    let spec = build_spec(cfg.model.as_ref(), &loaded)?;
    let penalty = cfg.penalty.clone().unwrap_or(PenaltyConfig::None);
    let f = fit(&loaded.dataset, &spec, &penalty, &cfg.fit)?;
    let report = FitReport::new(loaded.summary, penalty, &f);
    write_json(&out.join("fit_report.json"), &report)?;
    write_file(&out.join("log_gor.csv"), &fitted_surface_csv(&f)?)?;
    if !f.converged {
        return Err(CliError::NotConverged(f.failure.unwrap_or_default()));
    }
    Ok(format!(
        "loglik {:.4}  AIC {:.2}  G2 {:.2}  edf {:.3}  residual df {}\n",
        report.loglik, report.aic, report.deviance_g2, report.edf, report.residual_df
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub order: usize,
    pub lambda: f64,
    pub aic: f64,
    pub edf: f64,
    pub status: String,
}

fn failure_status(e: &BolmError) -> &'static str {
    match e {
        BolmError::SingularMatrix { .. } => "singular",
        BolmError::IncompatibleEta { .. } => "incompatible",
        _ => "error",
    }
}

fn profile_penalty(base: &Option<PenaltyConfig>, p: &ProfileConfig, order: usize, lambda: f64) -> PenaltyConfig {
    let arc2 = PenaltyConfig::Arc2(Arc2Terms {
        association: p
            .association_terms
            .iter()
            .map(|t| (t.clone(), SurfaceLambda::symmetric(lambda, order)))
            .collect(),
        ..Default::default()
    });
    match base {
        Some(b) => PenaltyConfig::Composite {
            parts: vec![b.clone(), arc2],
        },
        None => arc2,
    }
}

/// One warm-started path per order, ascending in `lambda`.
pub fn run_profile(
    loaded: &Loaded,
    spec: &ModelSpec,
    base: &Option<PenaltyConfig>,
    p: &ProfileConfig,
    log_base: f64,
    options: &FitOptions,
) -> CliResult<Vec<ProfilePoint>> {
    for &s in &p.orders {
        Penalty::build(&profile_penalty(base, p, s, 1.0), spec).map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut lambdas: Vec<f64> = p.log_lambdas.iter().map(|v| log_base.powf(*v)).collect();
    if p.include_zero {
        lambdas.push(0.0);
    }
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let paths: Vec<Vec<ProfilePoint>> = p
        .orders
        .par_iter()
        .map(|&s| {
            let mut start = None;
            lambdas
                .iter()
                .map(|&lambda| {
                    let opts = FitOptions {
                        start: start.clone(),
                        ..options.clone()
                    };
                    let point = |aic, edf, status: String| ProfilePoint {
                        order: s,
                        lambda,
                        aic,
                        edf,
                        status,
                    };
                    match fit(&loaded.dataset, spec, &profile_penalty(base, p, s, lambda), &opts) {
                        Ok(f) if f.converged => {
                            start = Some(f.beta_hat.clone());
                            point(f.aic, f.edf, "converged".into())
                        }
                        Ok(f) => point(f.aic, f.edf, "not_converged".into()),
                        Err(e) => point(f64::NAN, f64::NAN, failure_status(&e).into()),
                    }
                })
                .collect()
        })
        .collect();
    Ok(paths.concat())
}

pub fn profile_csv(points: &[ProfilePoint]) -> String {
    let mut csv = String::from("s,log10_lambda,aic,edf,lambda,status\n");
    for q in points {
        let _ = writeln!(csv, "{},{},{},{},{},{}", q.order, q.lambda.log10(), q.aic, q.edf, q.lambda, q.status);
    }
    csv
}

pub fn profile(cfg: &RunConfig, out: &Path, log_base: Option<f64>) -> CliResult<String> {
    let p = cfg
        .profile
        .as_ref()
        .ok_or_else(|| CliError::Config("profile needs a profile section".into()))?;
    let base = log_base.unwrap_or(p.log_base);
    if !(base.is_finite() && base > 1.0) {
        return Err(CliError::Config(format!("log base must exceed 1, got {base}")));
    }
    let loaded = load_data(cfg)?;
    let spec = build_spec(cfg.model.as_ref(), &loaded)?;
    let points = run_profile(&loaded, &spec, &cfg.penalty, p, base, &cfg.fit)?;
    write_file(&out.join("profile.csv"), &profile_csv(&points))?;
    let best = points
        .iter()
        .filter(|q| q.status == "converged")
        .min_by(|a, b| a.aic.total_cmp(&b.aic));
    let failed = points.iter().filter(|q| q.status != "converged").count();
    Ok(match best {
        Some(b) => format!(
            "{} grid points, {failed} failed; minimum AIC {:.2} at s = {}, lambda = {:e}\n",
            points.len(),
            b.aic,
            b.order,
            b.lambda
        ),
        None => format!("{} grid points, none converged\n", points.len()),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub parameters: usize,
    pub nominal_params: usize,
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub aic: f64,
    pub deviance_g2: f64,
    pub converged: bool,
}

impl From<&FitResult> for ModelSummary {
    fn from(f: &FitResult) -> Self {
        Self {
            parameters: f.spec.n_params(),
            nominal_params: f.nominal_params,
            loglik: f.loglik,
            penalized_loglik: f.penalized_loglik,
            aic: f.aic,
            deviance_g2: f.deviance_g2,
            converged: f.converged,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LrtestReport {
    pub data: DataSummary,
    pub full: ModelSummary,
    pub reduced: ModelSummary,
    pub test: LrpResult,
}

pub fn lrtest(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    let t = cfg
        .lrtest
        .as_ref()
        .ok_or_else(|| CliError::Config("lrtest needs an lrtest section".into()))?;
    let loaded = load_data(cfg)?;
    let full_spec = build_spec(Some(&t.full.model), &loaded)?;
    let reduced_spec = build_spec(Some(&t.reduced.model), &loaded)?;
    bolm_core::inference::check_nested(&full_spec, &reduced_spec)?;
    let ds = &loaded.dataset;
    let full = fit(ds, &full_spec, &t.full.penalty, &cfg.fit)?;
    let reduced = fit(ds, &reduced_spec, &t.reduced.penalty, &cfg.fit)?;
    let test = match t.method {
        TestMethod::Chi2 => ppom_chi2_test(&full, &reduced, ds, t.lambda_threshold)?,
        TestMethod::Gray => gray_weighted_test(&full, &reduced, ds, t.draws, cfg.seed)?,
    };
    let report = LrtestReport {
        data: loaded.summary,
        full: (&full).into(),
        reduced: (&reduced).into(),
        test,
    };
    write_json(&out.join("lrtest.json"), &report)?;
    if !(full.converged && reduced.converged) {
        return Err(CliError::NotConverged("full or reduced model".into()));
    }
    let mut s = format!(
        "LR_P {:.4} on {} df, chi-square p = {:.4}",
        report.test.statistic, report.test.df, report.test.p_value_chi2
    );
    if let (Some(p), Some(se)) = (report.test.p_value_mc, report.test.mc_std_error) {
        let _ = write!(s, ", weighted p = {p:.4} (se {se:.4})");
    }
    s.push('\n');
    for w in &report.test.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    Ok(s)
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("simulate needs a simulate section".into()))?;
    match &sim.experiment {
        Experiment::LossBenchmark { replicates, n, lambdas } => {
            let rows = run_loss_benchmark(cfg.seed, *replicates, *n, lambdas)?;
            let mut csv = String::from("model,lambda,msel,mrsel,mel,aic,fss\n");
            for r in &rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    r.model,
                    opt_f64(r.lambda),
                    r.msel,
                    r.mrsel,
                    r.mel,
                    r.aic,
                    r.fss
                );
            }
            write_file(&out.join("loss_benchmark_summary.csv"), &csv)?;
            Ok(csv)
        }
        Experiment::LrpNull { replicates, n, lambdas } => {
            let truth = GeneratingModel::lrp_null_design(*n);
            let (full, reduced) = lrp_null_models(&truth)?;
            let scenarios: Vec<_> = lambdas.iter().map(|&l| lrp_null_scenario(l)).collect();
            let samples = simulate_lrp_null(&truth, &full, &reduced, &scenarios, *replicates, cfg.seed, &cfg.fit)?;
            let mut summary = String::from("lambda,df,replicates,failures,rejection_rate,ks_distance\n");
            for s in &samples {
                let mut csv = String::from("replicate,lambda,statistic,converged\n");
                for (r, v) in s.statistics.iter().enumerate() {
                    let _ = writeln!(csv, "{},{},{},{}", r, s.lambda, opt_f64(*v), v.is_some());
                }
                write_file(&out.join(format!("lrp_null_lambda_{}.csv", s.lambda)), &csv)?;
                let _ = writeln!(
                    summary,
                    "{},{},{},{},{},{}",
                    s.lambda, s.df, replicates, s.failures, s.rejection_rate, s.ks_distance
                );
            }
            write_file(&out.join("lrp_null_summary.csv"), &summary)?;
            Ok(summary)
        }
    }
}

/// Resolves the output directory: `--out` wins over the config.
pub fn output_dir(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir())
}
