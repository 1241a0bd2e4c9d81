//! Penalized maximum likelihood by Fisher scoring with step halving.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{BolmError, Result};
use crate::link::{eta_to_pi, flatten_table, ContrastSystem};
use crate::linalg::SpdFactor;
use crate::model::{build_design_matrix, Dataset, Equation, ModelSpec, ParamVector, Term};
use crate::penalty::{rows_gradient, rows_to_matrix, rows_value, OrderingContext, Penalty, PenaltyConfig, PenaltyRow};

/// Groups are evaluated in parallel above this count.
const PAR_GROUPS: usize = 64;

/// Smoothing values at or above this are treated as infinite when counting
/// nominal parameters.
pub const STIFF_LAMBDA: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Tolerance on `max |s_P|`.
    pub grad_tol: f64,
    pub step_length: f64,
    pub step_halvings: usize,
    #[serde(skip)]
    pub start: Option<ParamVector>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-7,
            step_length: 1.0,
            step_halvings: 30,
            start: None,
        }
    }
}

impl FitOptions {
    /// Checks the tolerances and step settings; the start vector is
    /// checked against the model when fitting.
    pub fn check_settings(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(BolmError::InvalidInput(format!("grad_tol must be positive, got {}", self.grad_tol)));
        }
        if !(self.step_length > 0.0 && self.step_length <= 1.0) {
            return Err(BolmError::InvalidInput(format!(
                "step_length must lie in (0, 1], got {}",
                self.step_length
            )));
        }
        Ok(())
    }

    fn validate(&self, p: usize) -> Result<()> {
        self.check_settings()?;
        if let Some(s) = &self.start {
            if s.len() != p {
                return Err(BolmError::DimensionMismatch {
                    context: "start vector",
                    expected: p,
                    actual: s.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: ParamVector,
    /// `F_P(beta)^-1`; NaN when the penalized Fisher matrix is singular.
    pub cov: DMatrix<f64>,
    /// Multinomial kernel `sum y' log pi`.
    pub loglik: f64,
    /// `beta' P beta`.
    pub penalty_value: f64,
    /// `loglik - penalty_value / 2`.
    pub penalized_loglik: f64,
    pub edf: f64,
    pub aic: f64,
    pub deviance_g2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub fisher_scoring_failed: bool,
    /// Reason for a failed fit.
    pub failure: Option<String>,
    pub max_abs_score: f64,
    /// Fitted `d1 x d2` tables, one per group.
    pub fitted_probs: Vec<DMatrix<f64>>,
    /// Parameters left free when every smoothing value of at least
    /// [`STIFF_LAMBDA`] is taken to infinity.
    pub nominal_params: usize,
    /// Unpenalized Fisher information at `beta_hat`.
    pub fisher: DMatrix<f64>,
    /// Penalty matrix at `beta_hat`, ordering rows included.
    pub penalty_matrix: DMatrix<f64>,
    pub spec: ModelSpec,
    pub penalty: Penalty,
}

/// One row of a coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    /// Two-sided normal p-value.
    pub p_value: f64,
}

impl FitResult {
    /// Estimates with standard errors from the diagonal of `F_P^-1`.
    pub fn coefficients(&self) -> Vec<Coefficient> {
        let normal = Normal::standard();
        let labels = self.spec.layout().labels(self.spec.covariate_names());
        labels
            .into_iter()
            .enumerate()
            .map(|(j, name)| {
                let estimate = self.beta_hat[j];
                let se = self.cov[(j, j)].max(0.0).sqrt();
                let z = estimate / se;
                let p_value = 2.0 * normal.sf(z.abs());
                Coefficient { name, estimate, se, z, p_value }
            })
            .collect()
    }
}

/// Precomputed per-problem quantities.
pub(crate) struct Problem<'a> {
    pub spec: &'a ModelSpec,
    pub dataset: &'a Dataset,
    pub designs: Vec<DMatrix<f64>>,
    pub contrast: ContrastSystem,
}

/// Likelihood pieces at one coefficient vector.
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub score: DVector<f64>,
    /// `sum_i |score terms|`, for rounding-noise estimates.
    pub score_abs: DVector<f64>,
    pub fisher: DMatrix<f64>,
    pub probs: Vec<DMatrix<f64>>,
}

struct GroupTerms {
    loglik: f64,
    score: DVector<f64>,
    score_abs: DVector<f64>,
    fisher: DMatrix<f64>,
    pi: DMatrix<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(spec: &'a ModelSpec, dataset: &'a Dataset) -> Result<Self> {
        if spec.pair() != dataset.pair() {
            return Err(BolmError::InvalidInput(format!(
                "model is {}x{} but data are {}x{}",
                spec.pair().d1(),
                spec.pair().d2(),
                dataset.pair().d1(),
                dataset.pair().d2()
            )));
        }
        let designs = dataset
            .groups()
            .iter()
            .map(|g| build_design_matrix(spec, &g.covariates))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            dataset,
            designs,
            contrast: ContrastSystem::new(spec.pair()),
        })
    }

    pub fn ordering_context(&self) -> OrderingContext {
        let sizes: Vec<u64> = self.dataset.groups().iter().map(|g| g.total()).collect();
        OrderingContext::new(self.spec, &self.designs, &sizes)
    }

    fn group_terms(&self, i: usize, beta: &DVector<f64>, with_fisher: bool) -> Result<GroupTerms> {
        let x = &self.designs[i];
        let group = &self.dataset.groups()[i];
        let eta = x * beta;
        let pi = eta_to_pi(self.spec.pair(), &eta)?;
        let pf = flatten_table(&pi);
        let y: Vec<f64> = group.counts.iter().map(|&c| c as f64).collect();
        let loglik: f64 = y.iter().zip(pf.iter()).filter(|(&y, _)| y > 0.0).map(|(y, p)| y * p.ln()).sum();
        let jac = self.contrast.d_pi_d_eta(&pf)?;
        let a = jac * x;
        let ratio = DVector::from_fn(pf.len(), |k, _| y[k] / pf[k]);
        let score = a.tr_mul(&ratio);
        let score_abs = a.abs().tr_mul(&ratio);
        let fisher = if with_fisher {
            let mut wa = a.clone();
            let n_i = group.total() as f64;
            for (k, mut row) in wa.row_iter_mut().enumerate() {
                row *= n_i / pf[k];
            }
            a.tr_mul(&wa)
        } else {
            DMatrix::zeros(0, 0)
        };
        Ok(GroupTerms {
            loglik,
            score,
            score_abs,
            fisher,
            pi,
        })
    }

    /// Log-likelihood kernel alone, for trial points.
    pub fn loglik(&self, beta: &DVector<f64>) -> Result<f64> {
        let one = |i: usize| -> Result<f64> {
            let pi = eta_to_pi(self.spec.pair(), &(&self.designs[i] * beta))?;
            let counts = &self.dataset.groups()[i].counts;
            Ok(flatten_table(&pi)
                .iter()
                .zip(counts)
                .filter(|(_, &y)| y > 0)
                .map(|(p, &y)| y as f64 * p.ln())
                .sum())
        };
        let k = self.designs.len();
        let parts: Vec<Result<f64>> = if k > PAR_GROUPS {
            (0..k).into_par_iter().map(one).collect()
        } else {
            (0..k).map(one).collect()
        };
        parts.into_iter().sum()
    }

    /// Sums group contributions in group order, independently of the
    /// number of threads.
    pub fn evaluate(&self, beta: &DVector<f64>, with_fisher: bool) -> Result<Evaluation> {
        let k = self.designs.len();
        let terms: Vec<Result<GroupTerms>> = if k > PAR_GROUPS {
            (0..k).into_par_iter().map(|i| self.group_terms(i, beta, with_fisher)).collect()
        } else {
            (0..k).map(|i| self.group_terms(i, beta, with_fisher)).collect()
        };
        let p = beta.len();
        let mut out = Evaluation {
            loglik: 0.0,
            score: DVector::zeros(p),
            score_abs: DVector::zeros(p),
            fisher: if with_fisher { DMatrix::zeros(p, p) } else { DMatrix::zeros(0, 0) },
            probs: Vec::with_capacity(k),
        };
        for t in terms {
            let t = t?;
            out.loglik += t.loglik;
            out.score += t.score;
            out.score_abs += t.score_abs;
            if with_fisher {
                out.fisher += t.fisher;
            }
            out.probs.push(t.pi);
        }
        Ok(out)
    }
}

/// `s_P(beta) = sum_i (dpi_i/deta_i X_i)' diag(pi_i)^-1 y_i - P beta`.
pub fn penalized_score(beta: &ParamVector, dataset: &Dataset, spec: &ModelSpec, p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let prob = Problem::new(spec, dataset)?;
    Ok(prob.evaluate(beta, false)?.score - p * beta)
}

/// `F_P(beta) = sum_i n_i A_i' diag(pi_i)^-1 A_i + P` with
/// `A_i = dpi_i/deta_i X_i`.
pub fn penalized_fisher(beta: &ParamVector, dataset: &Dataset, spec: &ModelSpec, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let prob = Problem::new(spec, dataset)?;
    Ok(prob.evaluate(beta, true)?.fisher + p)
}

/// Marginal intercepts at the logits of the pooled cumulative proportions,
/// everything else zero. Margins with an empty category get 0.5 added to
/// every category count first.
pub fn default_start(dataset: &Dataset, spec: &ModelSpec) -> ParamVector {
    let pair = spec.pair();
    let pooled = dataset.pooled_counts();
    let mut beta = DVector::zeros(spec.n_params());
    let layout = spec.layout();
    for (eq, d) in [(Equation::Margin1, pair.d1()), (Equation::Margin2, pair.d2())] {
        let mut margin: Vec<f64> = (0..d)
            .map(|k| {
                (0..pooled.len())
                    .filter(|&cell| if eq == Equation::Margin1 { cell / pair.d2() == k } else { cell % pair.d2() == k })
                    .map(|cell| pooled[cell] as f64)
                    .sum()
            })
            .collect();
        if margin.contains(&0.0) {
            margin.iter_mut().for_each(|m| *m += 0.5);
        }
        let total: f64 = margin.iter().sum();
        let block = layout.block(eq, Term::Intercept).expect("marginal intercepts always present");
        let mut cum = 0.0;
        for (t, m) in margin.iter().take(d - 1).enumerate() {
            cum += m;
            let mu = cum / total;
            beta[block.offset + t] = (mu / (1.0 - mu)).ln();
        }
    }
    beta
}

/// `2 sum y log(y / (n_i pi))` with `0 log 0 = 0`.
pub fn deviance_g2(fitted_probs: &[DMatrix<f64>], dataset: &Dataset) -> f64 {
    let mut g2 = 0.0;
    for (g, pi) in dataset.groups().iter().zip(fitted_probs) {
        let n_i = g.total() as f64;
        for (&y, p) in g.counts.iter().zip(flatten_table(pi).iter()) {
            if y > 0 {
                let y = y as f64;
                g2 += y * (y / (n_i * p)).ln();
            }
        }
    }
    2.0 * g2
}

/// `edf = tr((F + P)^-1 F)` and `AIC = -2 (loglik - edf)`.
pub fn hat_trace_and_aic(fisher: &DMatrix<f64>, penalty: &DMatrix<f64>, loglik: f64) -> Result<(f64, f64)> {
    let factor = SpdFactor::new(&(fisher + penalty), "hat trace")?;
    let edf = factor.solve_matrix(fisher).trace();
    Ok((edf, -2.0 * (loglik - edf)))
}

/// Fits with a penalty built from its configuration.
pub fn fit(dataset: &Dataset, spec: &ModelSpec, config: &PenaltyConfig, options: &FitOptions) -> Result<FitResult> {
    let penalty = Penalty::build(config, spec)?;
    fit_with_penalty(dataset, spec, &penalty, options)
}

struct Iterate {
    beta: DVector<f64>,
    eval: Evaluation,
    rows: Vec<PenaltyRow>,
    lp: f64,
}

pub fn fit_with_penalty(dataset: &Dataset, spec: &ModelSpec, penalty: &Penalty, options: &FitOptions) -> Result<FitResult> {
    let p = spec.n_params();
    if penalty.dim() != p {
        return Err(BolmError::DimensionMismatch {
            context: "penalty dimension",
            expected: p,
            actual: penalty.dim(),
        });
    }
    options.validate(p)?;
    let prob = Problem::new(spec, dataset)?;
    let ordering = prob.ordering_context();
    let at = |beta: DVector<f64>| -> Result<Iterate> {
        let eval = prob.evaluate(&beta, true)?;
        let rows = penalty.active_rows(&beta, &ordering);
        let lp = eval.loglik - 0.5 * rows_value(&rows, &beta);
        Ok(Iterate { beta, eval, rows, lp })
    };
    let start = options.start.clone().unwrap_or_else(|| default_start(dataset, spec));
    let mut cur = at(start)?;
    let mut iterations = 0;
    let mut converged = false;
    let mut failure = None;
    let mut max_abs_score;
    loop {
        let grad = &cur.eval.score - rows_gradient(p, &cur.rows, &cur.beta);
        max_abs_score = grad.amax();
        if score_converged(&grad, &cur, options.grad_tol) {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            failure = Some(format!("no convergence in {} iterations", options.max_iter));
            break;
        }
        let fp = &cur.eval.fisher + rows_to_matrix(p, &cur.rows);
        let factor = match SpdFactor::new(&fp, "penalized Fisher matrix") {
            Ok(f) => f,
            Err(e) if iterations == 0 => return Err(e),
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let direction = factor.solve(&grad);
        let ascent_slack = 1e-10 * (1.0 + cur.lp.abs());
        let mut step = options.step_length;
        let mut accepted = None;
        for _ in 0..=options.step_halvings {
            let trial = &cur.beta + &direction * step;
            if let Ok(l) = prob.loglik(&trial) {
                let rows = penalty.active_rows(&trial, &ordering);
                if l - 0.5 * rows_value(&rows, &trial) >= cur.lp - ascent_slack {
                    accepted = Some(at(trial)?);
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some(next) => cur = next,
            None => {
                failure = Some(format!(
                    "no compatible ascent step after {} halvings",
                    options.step_halvings
                ));
                break;
            }
        }
    }
    finish(&prob, penalty, cur, iterations, converged, failure, max_abs_score)
}

/// Gradient test with an allowance for rounding in the score and penalty
/// sums, which matters once smoothing values reach 1e8 and beyond.
fn score_converged(grad: &DVector<f64>, it: &Iterate, tol: f64) -> bool {
    let p = grad.len();
    let mut noise = it.eval.score_abs.clone();
    for r in &it.rows {
        let v = (r.lambda * r.apply(&it.beta)).abs()
            + r.lambda * r.coeffs.iter().map(|&(j, w)| (w * it.beta[j]).abs()).sum::<f64>();
        for &(i, w) in &r.coeffs {
            noise[i] += w.abs() * v;
        }
    }
    (0..p).all(|j| grad[j].abs() < tol + 128.0 * f64::EPSILON * noise[j])
}

fn finish(
    prob: &Problem,
    penalty: &Penalty,
    cur: Iterate,
    iterations: usize,
    converged: bool,
    failure: Option<String>,
    max_abs_score: f64,
) -> Result<FitResult> {
    let p = cur.beta.len();
    let pmat = rows_to_matrix(p, &cur.rows);
    let penalty_value = rows_value(&cur.rows, &cur.beta);
    let (cov, edf, aic) = match SpdFactor::new(&(&cur.eval.fisher + &pmat), "penalized Fisher matrix") {
        Ok(f) => {
            let edf = f.solve_matrix(&cur.eval.fisher).trace();
            (f.inverse(), edf, -2.0 * (cur.eval.loglik - edf))
        }
        Err(_) => (DMatrix::from_element(p, p, f64::NAN), f64::NAN, f64::NAN),
    };
    let deviance = deviance_g2(&cur.eval.probs, prob.dataset);
    Ok(FitResult {
        nominal_params: p - penalty.stiff_rank(STIFF_LAMBDA),
        beta_hat: cur.beta,
        cov,
        loglik: cur.eval.loglik,
        penalty_value,
        penalized_loglik: cur.lp,
        edf,
        aic,
        deviance_g2: deviance,
        iterations,
        converged,
        fisher_scoring_failed: !converged,
        failure,
        max_abs_score,
        fitted_probs: cur.eval.probs,
        fisher: cur.eval.fisher,
        penalty_matrix: pmat,
        spec: prob.spec.clone(),
        penalty: penalty.clone(),
    })
}
