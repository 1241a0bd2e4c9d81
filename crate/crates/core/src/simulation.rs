//! Data generation from a known model and the UPOM vs NUNPOM benchmark.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BolmError, Result};
use crate::estimator::{fit_with_penalty, FitOptions, FitResult};
use crate::link::{eta_to_pi, flatten_table};
use crate::model::{build_design_matrix, Dataset, Group, ModelSpec, OrdinalPair, ParamVector, INTERCEPT};
use crate::penalty::{Lambdas, Penalty, PenaltyConfig};

/// Law of the covariates; each covariate is drawn independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateLaw {
    Bernoulli { p: f64 },
    Uniform { a: f64, b: f64 },
    /// Observations cycle through these rows.
    Fixed { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone)]
pub struct GeneratingModel {
    spec: ModelSpec,
    beta: ParamVector,
    law: CovariateLaw,
    n: usize,
    redraw_infeasible: bool,
}

/// Redraws allowed per observation before giving up.
const MAX_REDRAWS: usize = 10_000;

/// One simulated sample with the true probabilities of its groups.
#[derive(Debug, Clone)]
pub struct Sample {
    pub dataset: Dataset,
    pub true_probs: Vec<DMatrix<f64>>,
}

impl GeneratingModel {
    /// Checks that every covariate value the law can produce gives a valid
    /// probability table (on a grid for continuous laws).
    pub fn new(spec: ModelSpec, beta: ParamVector, law: CovariateLaw, n: usize) -> Result<Self> {
        Self::build(spec, beta, law, n, false)
    }

    /// Like [`GeneratingModel::new`], but covariate draws without a valid
    /// probability table are redrawn, so the law is truncated to the
    /// feasible set. Part of the grid must be feasible.
    pub fn with_redraws(spec: ModelSpec, beta: ParamVector, law: CovariateLaw, n: usize) -> Result<Self> {
        Self::build(spec, beta, law, n, true)
    }

    fn build(spec: ModelSpec, beta: ParamVector, law: CovariateLaw, n: usize, redraw_infeasible: bool) -> Result<Self> {
        if beta.len() != spec.n_params() {
            return Err(BolmError::DimensionMismatch {
                context: "true coefficients",
                expected: spec.n_params(),
                actual: beta.len(),
            });
        }
        if n == 0 {
            return Err(BolmError::InvalidInput("sample size must be positive".into()));
        }
        let q = spec.n_covariates();
        let sweep: Vec<Vec<f64>> = match &law {
            CovariateLaw::Bernoulli { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(BolmError::InvalidInput(format!("Bernoulli probability {p} outside [0, 1]")));
                }
                grid(&[0.0, 1.0], q)
            }
            CovariateLaw::Uniform { a, b } => {
                if !(a < b) || !a.is_finite() || !b.is_finite() {
                    return Err(BolmError::InvalidInput(format!("invalid uniform range ({a}, {b})")));
                }
                let per_dim = if q == 0 { 1 } else { (100_000f64.powf(1.0 / q as f64) as usize).clamp(2, 201) };
                let pts: Vec<f64> = (0..per_dim).map(|k| a + (b - a) * k as f64 / (per_dim - 1) as f64).collect();
                grid(&pts, q)
            }
            CovariateLaw::Fixed { rows } => {
                if rows.is_empty() || rows.iter().any(|r| r.len() != q) {
                    return Err(BolmError::InvalidInput(format!("fixed design rows must each have {q} values")));
                }
                rows.clone()
            }
        };
        let gm = Self {
            spec,
            beta,
            law,
            n,
            redraw_infeasible,
        };
        let mut feasible = 0;
        for x in &sweep {
            match gm.probs_at(x) {
                Ok(_) => feasible += 1,
                Err(e) if !redraw_infeasible => return Err(e),
                Err(_) => {}
            }
        }
        if feasible == 0 {
            return Err(BolmError::InvalidInput("no covariate value gives a valid probability table".into()));
        }
        Ok(gm)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn beta(&self) -> &ParamVector {
        &self.beta
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn probs_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let design = build_design_matrix(&self.spec, x)?;
        eta_to_pi(self.spec.pair(), &(design * &self.beta))
    }

    fn draw_covariates(&self, i: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let q = self.spec.n_covariates();
        match &self.law {
            CovariateLaw::Bernoulli { p } => (0..q).map(|_| if rng.random_bool(*p) { 1.0 } else { 0.0 }).collect(),
            CovariateLaw::Uniform { a, b } => (0..q).map(|_| rng.random_range(*a..*b)).collect(),
            CovariateLaw::Fixed { rows } => rows[i % rows.len()].clone(),
        }
    }

    fn draw_feasible(&self, i: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let mut tries = 0;
        loop {
            let x = self.draw_covariates(i, rng);
            match self.probs_at(&x) {
                Ok(pi) => return Ok((x, pi)),
                Err(e) if !self.redraw_infeasible || tries >= MAX_REDRAWS => return Err(e),
                Err(_) => tries += 1,
            }
        }
    }

    /// Generating model of the penalized likelihood-ratio simulation:
    /// 3x3 responses, one Bernoulli(0.5) covariate with category-dependent
    /// marginal effects and a constant association effect of -0.5.
    pub fn lrp_null_design(n: usize) -> Self {
        let spec = ModelSpec::nunpom(OrdinalPair::new(3, 3).expect("3x3"), vec!["x1".into()]).expect("valid spec");
        let beta = DVector::from_vec(vec![
            -0.5, 0.5, -0.3, 0.3, // margin 1
            -0.1, 0.6, -0.2, 0.4, // margin 2
            1.5, 2.0, 2.5, 3.0, -0.5, -0.5, -0.5, -0.5,
        ]);
        Self::new(spec, beta, CovariateLaw::Bernoulli { p: 0.5 }, n).expect("feasible design")
    }

    /// Generating model of the loss benchmark: 3x3 responses and one
    /// U(-1, 1) covariate with category-dependent effects everywhere.
    /// Below about -0.69 these coefficients give no valid table, so such
    /// draws are redrawn.
    pub fn loss_benchmark_design(n: usize) -> Self {
        let spec = ModelSpec::nunpom(OrdinalPair::new(3, 3).expect("3x3"), vec!["x".into()]).expect("valid spec");
        let beta = DVector::from_vec(vec![
            -0.6, 0.6, 0.3, -0.3, // margin 1
            -0.6, 0.6, -0.6, 0.6, // margin 2
            2.6, 2.4, 2.0, 1.7, -0.4, 0.2, -0.5, 0.5,
        ]);
        Self::with_redraws(spec, beta, CovariateLaw::Uniform { a: -1.0, b: 1.0 }, n).expect("feasible design")
    }
}

fn grid(points: &[f64], q: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..q {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                points.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// RNG of replicate `stream` under `seed`.
pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Multinomial counts by sequential binomial conditioning.
pub fn multinomial<R: Rng>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (k, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k + 1 == probs.len() {
            out[k] = left;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
        out[k] = draw;
        left -= draw;
        mass -= p;
    }
    out
}

/// Draws `n` observations, each a single multinomial trial at its own
/// covariate values, grouped by covariate profile.
pub fn sample_dataset(gm: &GeneratingModel, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let pair = gm.spec.pair();
    let mut groups = Vec::with_capacity(gm.n);
    for i in 0..gm.n {
        let (x, pi) = gm.draw_feasible(i, rng)?;
        let counts = multinomial(rng, 1, flatten_table(&pi).as_slice());
        groups.push(Group { covariates: x, counts });
    }
    let dataset = Dataset::new(pair, gm.spec.n_covariates(), groups)?;
    let true_probs = dataset
        .groups()
        .iter()
        .map(|g| gm.probs_at(&g.covariates))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample { dataset, true_probs })
}

fn check_pairs(pi: &[DMatrix<f64>], hat: &[DMatrix<f64>], weights: &[f64]) -> Result<()> {
    if pi.len() != hat.len() || pi.len() != weights.len() {
        return Err(BolmError::DimensionMismatch {
            context: "loss inputs",
            expected: pi.len(),
            actual: hat.len(),
        });
    }
    for (a, b) in pi.iter().zip(hat) {
        if a.shape() != b.shape() {
            return Err(BolmError::InvalidInput("probability tables differ in shape".into()));
        }
    }
    Ok(())
}

fn weighted_loss(
    pi: &[DMatrix<f64>],
    hat: &[DMatrix<f64>],
    weights: &[f64],
    cell: impl Fn(f64, f64) -> Result<f64>,
) -> Result<f64> {
    check_pairs(pi, hat, weights)?;
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for ((a, b), w) in pi.iter().zip(hat).zip(weights) {
        for (&p, &q) in a.iter().zip(b.iter()) {
            acc += w * cell(p, q)?;
        }
    }
    Ok(acc / total)
}

fn msel_cell(p: f64, q: f64) -> Result<f64> {
    Ok((p - q) * (p - q))
}

fn mrsel_cell(p: f64, q: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(BolmError::InvalidInput(format!("relative loss needs positive true probabilities, got {p}")));
    }
    Ok((p - q) * (p - q) / p)
}

fn mel_cell(p: f64, q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(BolmError::InvalidInput(format!("entropy loss needs positive fitted probabilities, got {q}")));
    }
    Ok(if p > 0.0 { p * (p / q).ln() } else { 0.0 })
}

/// Mean squared error loss over observations.
pub fn loss_msel(pi_true: &[DMatrix<f64>], pi_hat: &[DMatrix<f64>]) -> Result<f64> {
    weighted_loss(pi_true, pi_hat, &vec![1.0; pi_true.len()], msel_cell)
}

/// Mean relative squared error loss.
pub fn loss_mrsel(pi_true: &[DMatrix<f64>], pi_hat: &[DMatrix<f64>]) -> Result<f64> {
    weighted_loss(pi_true, pi_hat, &vec![1.0; pi_true.len()], mrsel_cell)
}

/// Mean Kullback-Leibler loss.
pub fn loss_mel(pi_true: &[DMatrix<f64>], pi_hat: &[DMatrix<f64>]) -> Result<f64> {
    weighted_loss(pi_true, pi_hat, &vec![1.0; pi_true.len()], mel_cell)
}

/// The three losses of a fit, with groups weighted by their size.
pub fn sample_losses(sample: &Sample, fit: &FitResult) -> Result<[f64; 3]> {
    let w: Vec<f64> = sample.dataset.groups().iter().map(|g| g.total() as f64).collect();
    Ok([
        weighted_loss(&sample.true_probs, &fit.fitted_probs, &w, msel_cell)?,
        weighted_loss(&sample.true_probs, &fit.fitted_probs, &w, mrsel_cell)?,
        weighted_loss(&sample.true_probs, &fit.fitted_probs, &w, mel_cell)?,
    ])
}

/// One row of the benchmark summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model: String,
    pub lambda: Option<f64>,
    pub msel: f64,
    pub mrsel: f64,
    pub mel: f64,
    pub aic: f64,
    /// Replicates contributing to the row.
    pub fss: usize,
}

/// Penalty of the NUNPOM benchmark fits: ARC1 on the covariate blocks of
/// every equation and on the association intercepts, plus the ordering
/// penalty, all with the same smoothing value.
pub fn benchmark_penalty(covariate: &str, lambda: f64) -> PenaltyConfig {
    let entry = |names: &[&str]| names.iter().map(|n| (n.to_string(), lambda)).collect();
    PenaltyConfig::Composite {
        parts: vec![
            PenaltyConfig::Arc1(Lambdas {
                margin1: entry(&[covariate]),
                margin2: entry(&[covariate]),
                association: entry(&[INTERCEPT, covariate]),
            }),
            PenaltyConfig::Ordering {
                lambda1: lambda,
                lambda2: lambda,
            },
        ],
    }
}

struct ReplicateOutcome {
    upom: Option<([f64; 3], f64)>,
    nunpom: Vec<Option<([f64; 3], f64)>>,
}

fn run_replicate(
    gm: &GeneratingModel,
    upom: &ModelSpec,
    penalties: &[(f64, Penalty)],
    options: &FitOptions,
    seed: u64,
    r: u64,
) -> Result<ReplicateOutcome> {
    let mut rng = replicate_rng(seed, r);
    let sample = sample_dataset(gm, &mut rng)?;
    let summarize = |fit: Result<FitResult>| -> Result<Option<([f64; 3], f64)>> {
        match fit {
            Ok(f) if f.converged => Ok(Some((sample_losses(&sample, &f)?, f.aic))),
            Ok(_) | Err(BolmError::SingularMatrix { .. }) | Err(BolmError::IncompatibleEta { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let upom_fit = summarize(fit_with_penalty(&sample.dataset, upom, &Penalty::none(upom.n_params()), options))?;
    let mut nunpom = Vec::with_capacity(penalties.len());
    let mut escalating = true;
    for (lambda, pen) in penalties {
        let mut res = summarize(fit_with_penalty(&sample.dataset, gm.spec(), pen, options))?;
        if res.is_none() && escalating && *lambda == 0.0 {
            let retry = FitOptions {
                step_length: 0.5,
                ..options.clone()
            };
            res = summarize(fit_with_penalty(&sample.dataset, gm.spec(), pen, &retry))?;
        }
        if escalating && res.is_some() {
            escalating = false;
        }
        nunpom.push(if escalating { None } else { res });
    }
    Ok(ReplicateOutcome { upom: upom_fit, nunpom })
}

fn summary_row(model: &str, lambda: Option<f64>, items: &[([f64; 3], f64)]) -> BenchmarkRow {
    let k = items.len() as f64;
    let mean = |f: &dyn Fn(&([f64; 3], f64)) -> f64| if items.is_empty() { f64::NAN } else { items.iter().map(f).sum::<f64>() / k };
    BenchmarkRow {
        model: model.into(),
        lambda,
        msel: mean(&|x| x.0[0]),
        mrsel: mean(&|x| x.0[1]),
        mel: mean(&|x| x.0[2]),
        aic: mean(&|x| x.1),
        fss: items.len(),
    }
}

/// UPOM versus penalized NUNPOM on `replicates` samples from
/// [`GeneratingModel::loss_benchmark_design`].
///
/// For every replicate the NUNPOM smoothing value climbs the ladder until
/// a fit converges; that replicate then contributes to the row of every
/// ladder value from there on whose fit converges. At `lambda = 0` one
/// retry with half the step length is made before giving up.
pub fn run_loss_benchmark(seed: u64, replicates: usize, n: usize, ladder: &[f64]) -> Result<Vec<BenchmarkRow>> {
    let gm = GeneratingModel::loss_benchmark_design(n);
    let upom = ModelSpec::upom(gm.spec().pair(), gm.spec().covariate_names().to_vec())?;
    let penalties = ladder
        .iter()
        .map(|&l| Ok((l, Penalty::build(&benchmark_penalty("x", l), gm.spec())?)))
        .collect::<Result<Vec<_>>>()?;
    let options = FitOptions::default();
    let outcomes = (0..replicates as u64)
        .into_par_iter()
        .map(|r| run_replicate(&gm, &upom, &penalties, &options, seed, r))
        .collect::<Result<Vec<_>>>()?;
    let upom_items: Vec<_> = outcomes.iter().filter_map(|o| o.upom).collect();
    let mut rows = vec![summary_row("UPOM", None, &upom_items)];
    for (k, &lambda) in ladder.iter().enumerate() {
        let items: Vec<_> = outcomes.iter().filter_map(|o| o.nunpom[k]).collect();
        rows.push(summary_row("NUNPOM", Some(lambda), &items));
    }
    Ok(rows)
}
