//! Penalized likelihood-ratio tests.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{BolmError, Result};
use crate::estimator::{fit_with_penalty, penalized_fisher, FitOptions, FitResult};
use crate::linalg::SpdFactor;
use crate::model::{Dataset, Equation, EquationTerms, ModelSpec, ParamVector, Term, INTERCEPT};
use crate::penalty::{Lambdas, Penalty, PenaltyConfig};
use crate::link::flatten_table;
use crate::simulation::{replicate_rng, sample_dataset, GeneratingModel};

/// Default number of Monte Carlo draws for weighted chi-square tails.
pub const DEFAULT_DRAWS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrpMethod {
    Chi2Approx,
    GrayWeighted,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrpResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value_chi2: f64,
    pub p_value_mc: Option<f64>,
    pub mc_std_error: Option<f64>,
    pub method: LrpMethod,
    /// Weights of the weighted chi-square null, when used.
    pub weights: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Checks that `reduced` is obtained from `full` by dropping terms or by
/// making category-dependent terms category-independent.
pub fn check_nested(full: &ModelSpec, reduced: &ModelSpec) -> Result<()> {
    if full.pair() != reduced.pair() {
        return Err(BolmError::NotNested("response dimensions differ".into()));
    }
    if full.covariate_names() != reduced.covariate_names() {
        return Err(BolmError::NotNested("covariate lists differ".into()));
    }
    let fl = full.layout();
    for b in reduced.layout().blocks() {
        match fl.block(b.equation, b.term) {
            Some(fb) if fb.len == b.len || b.len == 1 => {}
            _ => {
                return Err(BolmError::NotNested(format!(
                    "{:?} term {:?} of the reduced model is not in the full model",
                    b.equation, b.term
                )))
            }
        }
    }
    Ok(())
}

/// Reduced-model coefficients in full-model coordinates: shared blocks are
/// copied, category-independent values are repeated across categories and
/// dropped terms are zero. Also returns the indices of the dropped terms.
pub fn embed_reduced(full: &ModelSpec, reduced: &ModelSpec, beta: &ParamVector) -> Result<(ParamVector, Vec<usize>)> {
    check_nested(full, reduced)?;
    let rl = reduced.layout();
    let mut out = DVector::zeros(full.n_params());
    let mut dropped = Vec::new();
    for fb in full.layout().blocks() {
        match rl.block(fb.equation, fb.term) {
            Some(rb) => {
                for t in 0..fb.len {
                    out[fb.offset + t] = beta[rb.offset + if rb.len == 1 { 0 } else { t }];
                }
            }
            None => dropped.extend(fb.range()),
        }
    }
    Ok((out, dropped))
}

/// `LR_P = -2 {l_P(reduced) - l_P(full)}`, cross-checked against
/// `2 sum y log(pi_full / pi_reduced) + tau(reduced) - tau(full)`.
pub fn lrp_statistic(full: &FitResult, reduced: &FitResult, dataset: &Dataset) -> Result<f64> {
    check_nested(&full.spec, &reduced.spec)?;
    let k = dataset.groups().len();
    if full.fitted_probs.len() != k || reduced.fitted_probs.len() != k {
        return Err(BolmError::InvalidInput("fits do not belong to this dataset".into()));
    }
    let direct = -2.0 * (reduced.penalized_loglik - full.penalized_loglik);
    let mut ratio = 0.0;
    for ((g, pf), pr) in dataset.groups().iter().zip(&full.fitted_probs).zip(&reduced.fitted_probs) {
        for ((&y, a), b) in g.counts.iter().zip(flatten_table(pf).iter()).zip(flatten_table(pr).iter()) {
            if y > 0 {
                ratio += y as f64 * (a / b).ln();
            }
        }
    }
    let expanded = 2.0 * ratio + reduced.penalty_value - full.penalty_value;
    let scale = 1.0 + full.loglik.abs() + full.penalty_value.abs() + reduced.penalty_value.abs();
    if (direct - expanded).abs() > 1e-8 * scale {
        return Err(BolmError::InvalidInput(format!(
            "fits do not belong to this dataset (LR_P {direct} vs {expanded})"
        )));
    }
    Ok(direct)
}

fn chi2_sf(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return if stat > 1e-8 { 0.0 } else { 1.0 };
    }
    if stat <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("positive df").sf(stat)
}

/// Blocks of the full model that the reduced model constrains to be
/// constant across categories, or drops.
fn constrained_blocks(full: &ModelSpec, reduced: &ModelSpec) -> Vec<(Equation, Term)> {
    let rl = reduced.layout();
    full.layout()
        .blocks()
        .iter()
        .filter(|fb| fb.category_dependent && rl.block(fb.equation, fb.term).is_none_or(|rb| rb.len < fb.len))
        .map(|fb| (fb.equation, fb.term))
        .collect()
}

/// Chi-square approximation for category-independence hypotheses. The
/// degrees of freedom are the difference in nominal parameter counts.
/// Smoothing values above `lambda_threshold` on constrained blocks of the
/// full model are flagged, as they invalidate the approximation.
pub fn ppom_chi2_test(full: &FitResult, reduced: &FitResult, dataset: &Dataset, lambda_threshold: f64) -> Result<LrpResult> {
    let statistic = lrp_statistic(full, reduced, dataset)?;
    let df = full.nominal_params.saturating_sub(reduced.nominal_params);
    let mut warnings = Vec::new();
    let names = full.spec.covariate_names();
    for (eq, term) in constrained_blocks(&full.spec, &reduced.spec) {
        let lambda = full.penalty.lambda_on(eq, term);
        if lambda > lambda_threshold {
            let name = match term {
                Term::Intercept => INTERCEPT.to_string(),
                Term::Covariate(j) => names[j].clone(),
            };
            warnings.push(format!(
                "smoothing value {lambda} on constrained term {eq:?}:{name} exceeds {lambda_threshold}; the chi-square reference is unreliable"
            ));
        }
    }
    for (fit, which) in [(full, "full"), (reduced, "reduced")] {
        if !fit.converged {
            warnings.push(format!("{which} model did not converge"));
        }
    }
    Ok(LrpResult {
        statistic,
        df,
        p_value_chi2: chi2_sf(statistic, df),
        p_value_mc: None,
        mc_std_error: None,
        method: LrpMethod::Chi2Approx,
        weights: None,
        warnings,
    })
}

/// Eigenvalues of `F_dd|g (F_dd|g + P_dd)^-1`, where `F_dd|g` is the Schur
/// complement of the `gamma` block in the unpenalized Fisher matrix and
/// `P` is the full-size penalty matrix.
pub fn gray_null_weights(fisher: &DMatrix<f64>, delta: &[usize], penalty: &DMatrix<f64>) -> Result<Vec<f64>> {
    let p = fisher.nrows();
    if delta.is_empty() || delta.iter().any(|&j| j >= p) {
        return Err(BolmError::InvalidInput("delta must be a non-empty set of parameter indices".into()));
    }
    let gamma: Vec<usize> = (0..p).filter(|j| !delta.contains(j)).collect();
    let sub = |m: &DMatrix<f64>, r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| m[(r[i], c[j])]);
    let mut a = sub(fisher, delta, delta);
    if !gamma.is_empty() {
        let fgg = SpdFactor::new(&sub(fisher, &gamma, &gamma), "F_gamma_gamma")?;
        let fgd = sub(fisher, &gamma, delta);
        a -= fgd.transpose() * fgg.solve_matrix(&fgd);
    }
    let a = (&a + a.transpose()) * 0.5;
    let total = &a + sub(penalty, delta, delta);
    let chol = nalgebra::Cholesky::new(total.clone()).ok_or_else(|| BolmError::SingularMatrix {
        context: "F_dd|g + P_dd",
        direction: vec![f64::NAN; delta.len()],
    })?;
    // A (A + P)^-1 is similar to L^-1 A L^-T
    let l = chol.l();
    let left = l.solve_lower_triangular(&a).expect("non-singular factor");
    let sym = l.solve_lower_triangular(&left.transpose()).expect("non-singular factor");
    let sym = (&sym + sym.transpose()) * 0.5;
    let mut alpha: Vec<f64> = sym.symmetric_eigenvalues().iter().map(|&v| v.max(0.0)).collect();
    alpha.sort_by(|x, y| y.total_cmp(x));
    Ok(alpha)
}

/// Monte Carlo estimate of `P(sum alpha_j Z_j^2 > statistic)` and its
/// standard error.
pub fn weighted_chisq_pvalue(statistic: f64, weights: &[f64], draws: usize, seed: u64) -> Result<(f64, f64)> {
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(BolmError::InvalidInput("weights must be non-negative".into()));
    }
    if draws == 0 {
        return Err(BolmError::InvalidInput("draws must be positive".into()));
    }
    const CHUNK: usize = 8192;
    let chunks = draws.div_ceil(CHUNK);
    let exceed: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = replicate_rng(seed, c as u64);
            let len = CHUNK.min(draws - c * CHUNK);
            (0..len)
                .filter(|_| {
                    let s: f64 = weights
                        .iter()
                        .map(|w| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            w * z * z
                        })
                        .sum();
                    s > statistic
                })
                .count()
        })
        .sum();
    let p = exceed as f64 / draws as f64;
    Ok((p, (p * (1.0 - p) / draws as f64).sqrt()))
}

/// Test of `H0: delta = 0` for terms dropped from the full model, with the
/// weighted chi-square null. The unpenalized Fisher matrix is evaluated at
/// the reduced fit.
pub fn gray_weighted_test(full: &FitResult, reduced: &FitResult, dataset: &Dataset, draws: usize, seed: u64) -> Result<LrpResult> {
    let statistic = lrp_statistic(full, reduced, dataset)?;
    let (beta0, delta) = embed_reduced(&full.spec, &reduced.spec, &reduced.beta_hat)?;
    if delta.is_empty() {
        return Err(BolmError::NotNested("the reduced model drops no terms".into()));
    }
    if !constrained_blocks(&full.spec, &reduced.spec)
        .iter()
        .all(|&(eq, term)| reduced.spec.layout().block(eq, term).is_none())
    {
        return Err(BolmError::NotNested(
            "weighted chi-square reference needs a hypothesis of null effects only".into(),
        ));
    }
    let p = full.spec.n_params();
    let fisher = penalized_fisher(&beta0, dataset, &full.spec, &DMatrix::zeros(p, p))?;
    let weights = gray_null_weights(&fisher, &delta, &full.penalty_matrix)?;
    let (pv, se) = weighted_chisq_pvalue(statistic, &weights, draws, seed)?;
    Ok(LrpResult {
        statistic,
        df: delta.len(),
        p_value_chi2: chi2_sf(statistic, delta.len()),
        p_value_mc: Some(pv),
        mc_std_error: Some(se),
        method: LrpMethod::GrayWeighted,
        weights: Some(weights),
        warnings: Vec::new(),
    })
}

/// Sum of squared first differences of a block, flattened row-major.
fn arc1_block_sum(spec: &ModelSpec, eq: Equation, term: Term, beta: &ParamVector) -> f64 {
    spec.layout()
        .block(eq, term)
        .filter(|b| b.category_dependent)
        .map(|b| {
            let v = beta.rows(b.offset, b.len);
            v.as_slice().windows(2).map(|w| (w[1] - w[0]).powi(2)).sum()
        })
        .unwrap_or(0.0)
}

fn lambda_for(lambdas: &Lambdas, spec: &ModelSpec, eq: Equation, term: Term) -> f64 {
    let name = match term {
        Term::Intercept => INTERCEPT,
        Term::Covariate(j) => spec.covariate_names()[j].as_str(),
    };
    lambdas.for_equation(eq).get(name).copied().unwrap_or(0.0)
}

/// `tau(reduced) - tau(full)` for ARC1 penalties, split into the terms
/// shared by both models and the terms constrained by the reduced model.
pub fn arc1_penalty_difference(
    full: &ModelSpec,
    beta_full: &ParamVector,
    lambdas_full: &Lambdas,
    reduced: &ModelSpec,
    beta_reduced: &ParamVector,
    lambdas_reduced: &Lambdas,
) -> Result<f64> {
    check_nested(full, reduced)?;
    let mut shared = 0.0;
    let mut constrained = 0.0;
    for eq in Equation::ALL {
        let terms = std::iter::once(Term::Intercept).chain((0..full.n_covariates()).map(Term::Covariate));
        for term in terms {
            let full_dep = full.layout().block(eq, term).is_some_and(|b| b.category_dependent);
            let red_dep = reduced.layout().block(eq, term).is_some_and(|b| b.category_dependent);
            let f = lambda_for(lambdas_full, full, eq, term) * arc1_block_sum(full, eq, term, beta_full);
            if red_dep {
                let r = lambda_for(lambdas_reduced, reduced, eq, term) * arc1_block_sum(reduced, eq, term, beta_reduced);
                shared += r - f;
            } else if full_dep {
                constrained += f;
            }
        }
    }
    Ok(shared - constrained)
}

/// A pair of penalties for the full and reduced fits, labelled by a
/// smoothing value.
#[derive(Debug, Clone, PartialEq)]
pub struct NullScenario {
    pub lambda: f64,
    pub full_penalty: PenaltyConfig,
    pub reduced_penalty: PenaltyConfig,
}

/// Simulated LR_P values for one scenario. `statistics[r]` is `None` when
/// either fit of replicate `r` failed.
#[derive(Debug, Clone, PartialEq)]
pub struct LrpNullSample {
    pub lambda: f64,
    pub df: usize,
    pub statistics: Vec<Option<f64>>,
    pub failures: usize,
    /// Share of successful replicates above the 95% chi-square quantile.
    pub rejection_rate: f64,
    /// Kolmogorov-Smirnov distance to chi-square with `df` degrees of freedom.
    pub ks_distance: f64,
}

impl LrpNullSample {
    pub fn values(&self) -> Vec<f64> {
        self.statistics.iter().flatten().copied().collect()
    }
}

/// Kolmogorov-Smirnov distance between a sample and chi-square(`df`).
pub fn ks_distance_chi2(sample: &[f64], df: usize) -> f64 {
    if sample.is_empty() {
        return f64::NAN;
    }
    let dist = ChiSquared::new(df as f64).expect("positive df");
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = if x <= 0.0 { 0.0 } else { dist.cdf(x) };
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Draws `replicates` samples from `truth` (replicate `r` uses RNG stream
/// `r`) and computes LR_P of `full` against `reduced` under every scenario,
/// on the same samples.
pub fn simulate_lrp_null(
    truth: &GeneratingModel,
    full: &ModelSpec,
    reduced: &ModelSpec,
    scenarios: &[NullScenario],
    replicates: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<Vec<LrpNullSample>> {
    check_nested(full, reduced)?;
    let built = scenarios
        .iter()
        .map(|s| Ok((Penalty::build(&s.full_penalty, full)?, Penalty::build(&s.reduced_penalty, reduced)?)))
        .collect::<Result<Vec<_>>>()?;
    let per_rep: Vec<Vec<Option<(f64, usize)>>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let sample = sample_dataset(truth, &mut replicate_rng(seed, r))?;
            let ds = &sample.dataset;
            built
                .iter()
                .map(|(pf, pr)| {
                    let ff = fit_with_penalty(ds, full, pf, options);
                    let fr = fit_with_penalty(ds, reduced, pr, options);
                    match (ff, fr) {
                        (Ok(a), Ok(b)) if a.converged && b.converged => {
                            let df = a.nominal_params.saturating_sub(b.nominal_params);
                            Ok(Some((lrp_statistic(&a, &b, ds)?, df)))
                        }
                        (Err(e @ BolmError::InvalidInput(_)), _) | (_, Err(e @ BolmError::InvalidInput(_))) => Err(e),
                        _ => Ok(None),
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let structural_df = full.n_params() - reduced.n_params();
    Ok(scenarios
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let stats: Vec<Option<f64>> = per_rep.iter().map(|r| r[k].map(|v| v.0)).collect();
            let df = per_rep.iter().find_map(|r| r[k].map(|v| v.1)).unwrap_or(structural_df);
            let ok: Vec<f64> = stats.iter().flatten().copied().collect();
            let crit = ChiSquared::new(df.max(1) as f64).expect("positive df").inverse_cdf(0.95);
            let rejection_rate = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().filter(|&&v| v > crit).count() as f64 / ok.len() as f64
            };
            LrpNullSample {
                lambda: s.lambda,
                df,
                failures: replicates - ok.len(),
                rejection_rate,
                ks_distance: ks_distance_chi2(&ok, df.max(1)),
                statistics: stats,
            }
        })
        .collect())
}

/// Full and reduced models of the association-effect hypothesis for
/// [`GeneratingModel::lrp_null_design`]: the reduced model keeps one
/// association coefficient for `x1`.
pub fn lrp_null_models(truth: &GeneratingModel) -> Result<(ModelSpec, ModelSpec)> {
    let full = truth.spec().clone();
    let assoc = EquationTerms {
        included: vec![0],
        category_dependent: vec![],
    };
    let reduced = ModelSpec::new(
        full.pair(),
        full.covariate_names().to_vec(),
        [full.terms(Equation::Margin1).clone(), full.terms(Equation::Margin2).clone(), assoc],
        false,
    )?;
    Ok((full, reduced))
}

/// ARC1 with the same smoothing value on the association intercepts of
/// both models.
pub fn lrp_null_scenario(lambda: f64) -> NullScenario {
    let p = PenaltyConfig::Arc1(Lambdas::association_intercepts(lambda));
    NullScenario {
        lambda,
        full_penalty: p.clone(),
        reduced_penalty: p,
    }
}
