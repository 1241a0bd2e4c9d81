//! Quadratic penalties `tau(beta) = beta' P beta` on category-specific
//! coefficient blocks.
//!
//! Every static family is stored as weighted difference rows, so that
//! `P = E' Lambda E` and `tau = sum_i lambda_i (e_i' beta)^2`. Only blocks of
//! intercepts and category-dependent covariates can be penalized; the
//! single association intercept of a uniform-association model and all
//! category-independent coefficients are never touched.
//!
//! The ordering penalty is different: it depends on `beta` through an
//! indicator of violated marginal orderings, and is rebuilt for every
//! coefficient vector it is evaluated at.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BolmError, Result};
use crate::model::{build_design_matrix, Dataset, Equation, ModelSpec, OrdinalPair, Term, INTERCEPT};

/// Smoothing values keyed by term name (`"intercept"` or a covariate) for
/// each equation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lambdas {
    #[serde(default)]
    pub margin1: BTreeMap<String, f64>,
    #[serde(default)]
    pub margin2: BTreeMap<String, f64>,
    #[serde(default)]
    pub association: BTreeMap<String, f64>,
}

impl Lambdas {
    pub fn for_equation(&self, eq: Equation) -> &BTreeMap<String, f64> {
        match eq {
            Equation::Margin1 => &self.margin1,
            Equation::Margin2 => &self.margin2,
            Equation::Association => &self.association,
        }
    }

    /// The same value on the association intercepts only.
    pub fn association_intercepts(lambda: f64) -> Self {
        Self {
            association: BTreeMap::from([(INTERCEPT.to_string(), lambda)]),
            ..Default::default()
        }
    }
}

/// Smoothing value and difference order of a marginal block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderedLambda {
    pub lambda: f64,
    pub order: usize,
}

/// Smoothing values and difference orders of an association block along
/// rows (`r`) and along columns (`c`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceLambda {
    pub lambda_row: f64,
    pub order_row: usize,
    pub lambda_col: f64,
    pub order_col: usize,
}

impl SurfaceLambda {
    pub fn symmetric(lambda: f64, order: usize) -> Self {
        Self {
            lambda_row: lambda,
            order_row: order,
            lambda_col: lambda,
            order_col: order,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arc2Terms {
    #[serde(default)]
    pub margin1: BTreeMap<String, OrderedLambda>,
    #[serde(default)]
    pub margin2: BTreeMap<String, OrderedLambda>,
    #[serde(default)]
    pub association: BTreeMap<String, SurfaceLambda>,
}

/// Declarative penalty description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PenaltyConfig {
    None,
    /// Squared coefficients.
    Ridge(Lambdas),
    /// Squared first differences of adjacent category effects. Association
    /// blocks are differenced along their row-major flattening.
    Arc1(Lambdas),
    /// Squared higher-order differences; association blocks are differenced
    /// along `r` and along `c` separately.
    Arc2(Arc2Terms),
    /// Squared decreasing steps of the marginal predictors of every
    /// observation, active only where the ordering is violated.
    Ordering { lambda1: f64, lambda2: f64 },
    /// Sum of the parts' penalty matrices.
    Composite { parts: Vec<PenaltyConfig> },
}

/// One weighted difference row `lambda * (coeffs . beta)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyRow {
    pub lambda: f64,
    pub coeffs: Vec<(usize, f64)>,
    pub equation: Equation,
    pub term: Term,
}

impl PenaltyRow {
    #[inline]
    pub fn apply(&self, beta: &DVector<f64>) -> f64 {
        self.coeffs.iter().map(|&(i, w)| w * beta[i]).sum()
    }
}

/// A built penalty: static rows plus an optional ordering component.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    dim: usize,
    rows: Vec<PenaltyRow>,
    ordering: Option<(f64, f64)>,
}

/// Coefficients of the `order`-th forward difference at position 0:
/// `sum_i (-1)^(order - i) C(order, i) x_i`.
fn difference_weights(order: usize) -> Vec<f64> {
    let mut w = vec![1.0];
    for _ in 0..order {
        let mut next = vec![0.0; w.len() + 1];
        for (i, &v) in w.iter().enumerate() {
            next[i] -= v;
            next[i + 1] += v;
        }
        w = next;
    }
    w
}

/// Difference rows of `order` along `positions` (parameter indices).
fn difference_rows(order: usize, positions: &[usize]) -> Vec<Vec<(usize, f64)>> {
    let w = difference_weights(order);
    if positions.len() <= order {
        return Vec::new();
    }
    (0..positions.len() - order)
        .map(|t| w.iter().enumerate().map(|(i, &wi)| (positions[t + i], wi)).collect())
        .collect()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(BolmError::Penalty(format!("smoothing value must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

fn check_order(order: usize, len: usize, what: &str) -> Result<()> {
    if order == 0 || order >= len {
        return Err(BolmError::Penalty(format!(
            "difference order {order} invalid for {what} of length {len} (need 1 <= s < {len})"
        )));
    }
    Ok(())
}

/// Resolves a term name to its parameter block, or `None` when the block is
/// not penalizable (category-independent, excluded, or uniform association).
fn penalizable_block(spec: &ModelSpec, eq: Equation, name: &str) -> Result<Option<(Term, std::ops::Range<usize>)>> {
    let term = if name == INTERCEPT {
        Term::Intercept
    } else {
        match spec.covariate_index(name) {
            Some(j) => Term::Covariate(j),
            None => return Err(BolmError::Penalty(format!("unknown term '{name}'"))),
        }
    };
    let layout = spec.layout();
    Ok(layout
        .block(eq, term)
        .filter(|b| b.category_dependent)
        .map(|b| (term, b.range())))
}

impl Penalty {
    /// The zero penalty.
    pub fn none(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            ordering: None,
        }
    }

    pub fn build(config: &PenaltyConfig, spec: &ModelSpec) -> Result<Self> {
        let mut out = Self::none(spec.n_params());
        out.add(config, spec)?;
        Ok(out)
    }

    fn add(&mut self, config: &PenaltyConfig, spec: &ModelSpec) -> Result<()> {
        let pair = spec.pair();
        match config {
            PenaltyConfig::None => {}
            PenaltyConfig::Ridge(lambdas) | PenaltyConfig::Arc1(lambdas) => {
                let ridge = matches!(config, PenaltyConfig::Ridge(_));
                for eq in Equation::ALL {
                    for (name, &lambda) in lambdas.for_equation(eq) {
                        check_lambda(lambda)?;
                        let Some((term, range)) = penalizable_block(spec, eq, name)? else {
                            continue;
                        };
                        let positions: Vec<usize> = range.collect();
                        let rows = if ridge {
                            positions.iter().map(|&i| vec![(i, 1.0)]).collect()
                        } else {
                            difference_rows(1, &positions)
                        };
                        self.push_rows(lambda, rows, eq, term);
                    }
                }
            }
            PenaltyConfig::Arc2(terms) => {
                for (eq, map) in [(Equation::Margin1, &terms.margin1), (Equation::Margin2, &terms.margin2)] {
                    for (name, ol) in map {
                        check_lambda(ol.lambda)?;
                        check_order(ol.order, pair.equation_len(eq), "a marginal block")?;
                        let Some((term, range)) = penalizable_block(spec, eq, name)? else {
                            continue;
                        };
                        let positions: Vec<usize> = range.collect();
                        self.push_rows(ol.lambda, difference_rows(ol.order, &positions), eq, term);
                    }
                }
                for (name, sl) in &terms.association {
                    check_lambda(sl.lambda_row)?;
                    check_lambda(sl.lambda_col)?;
                    check_order(sl.order_row, pair.m1(), "association rows")?;
                    check_order(sl.order_col, pair.m2(), "association columns")?;
                    let Some((term, range)) = penalizable_block(spec, Equation::Association, name)? else {
                        continue;
                    };
                    let base = range.start;
                    let mut rows = Vec::new();
                    for c in 1..=pair.m2() {
                        let pos: Vec<usize> = (1..=pair.m1()).map(|r| base + pair.assoc_offset(r, c)).collect();
                        rows.extend(difference_rows(sl.order_row, &pos));
                    }
                    self.push_rows(sl.lambda_row, rows, Equation::Association, term);
                    let mut rows = Vec::new();
                    for r in 1..=pair.m1() {
                        let pos: Vec<usize> = (1..=pair.m2()).map(|c| base + pair.assoc_offset(r, c)).collect();
                        rows.extend(difference_rows(sl.order_col, &pos));
                    }
                    self.push_rows(sl.lambda_col, rows, Equation::Association, term);
                }
            }
            PenaltyConfig::Ordering { lambda1, lambda2 } => {
                check_lambda(*lambda1)?;
                check_lambda(*lambda2)?;
                let (a, b) = self.ordering.unwrap_or((0.0, 0.0));
                self.ordering = Some((a + lambda1, b + lambda2));
            }
            PenaltyConfig::Composite { parts } => {
                for part in parts {
                    self.add(part, spec)?;
                }
            }
        }
        Ok(())
    }

    fn push_rows(&mut self, lambda: f64, rows: Vec<Vec<(usize, f64)>>, equation: Equation, term: Term) {
        if lambda == 0.0 {
            return;
        }
        self.rows.extend(rows.into_iter().map(|coeffs| PenaltyRow {
            lambda,
            coeffs,
            equation,
            term,
        }));
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[PenaltyRow] {
        &self.rows
    }

    /// Ordering smoothing values `(lambda1, lambda2)`, if any.
    pub fn ordering(&self) -> Option<(f64, f64)> {
        self.ordering
    }

    /// Largest smoothing value acting on a block.
    pub fn lambda_on(&self, eq: Equation, term: Term) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.equation == eq && r.term == term)
            .map(|r| r.lambda)
            .fold(0.0, f64::max)
    }

    /// `P` of the static rows (the ordering part excluded).
    pub fn static_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(self.dim, &self.rows)
    }

    /// Rank of the difference rows whose smoothing value is at least
    /// `threshold`: the number of linear constraints the penalty imposes in
    /// the limit of infinite smoothing.
    pub fn stiff_rank(&self, threshold: f64) -> usize {
        let stiff: Vec<&PenaltyRow> = self.rows.iter().filter(|r| r.lambda >= threshold).collect();
        if stiff.is_empty() {
            return 0;
        }
        let mut e = DMatrix::<f64>::zeros(stiff.len(), self.dim);
        for (i, row) in stiff.iter().enumerate() {
            for &(j, w) in &row.coeffs {
                e[(i, j)] += w;
            }
        }
        let gram = e.transpose() * e;
        let eig = gram.symmetric_eigenvalues();
        let top = eig.amax();
        eig.iter().filter(|&&v| v > 1e-9 * top.max(1.0)).count()
    }

    /// Static rows plus the ordering rows active at `beta`.
    pub fn active_rows(&self, beta: &DVector<f64>, ctx: &OrderingContext) -> Vec<PenaltyRow> {
        let mut rows = self.rows.clone();
        if let Some((l1, l2)) = self.ordering {
            rows.extend(ctx.violated_rows(beta, l1, l2));
        }
        rows
    }
}

/// `P = sum lambda e e'`.
pub fn rows_to_matrix(dim: usize, rows: &[PenaltyRow]) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(dim, dim);
    for row in rows {
        for &(i, wi) in &row.coeffs {
            for &(j, wj) in &row.coeffs {
                p[(i, j)] += row.lambda * wi * wj;
            }
        }
    }
    p
}

/// `tau = sum lambda (e' beta)^2`.
pub fn rows_value(rows: &[PenaltyRow], beta: &DVector<f64>) -> f64 {
    rows.iter()
        .map(|r| {
            let v = r.apply(beta);
            r.lambda * v * v
        })
        .sum()
}

/// `P beta = E' (Lambda (E beta))`.
pub fn rows_gradient(dim: usize, rows: &[PenaltyRow], beta: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(dim);
    for r in rows {
        let v = r.lambda * r.apply(beta);
        for &(i, w) in &r.coeffs {
            g[i] += w * v;
        }
    }
    g
}

/// Per-observation marginal predictor differences needed by the ordering
/// penalty: for each group, equation and cut `r >= 2`, the row
/// `x_{i,r} - x_{i,r-1}` of the design matrix and the group size.
#[derive(Debug, Clone)]
pub struct OrderingContext {
    rows: Vec<(Equation, f64, Vec<(usize, f64)>)>,
}

impl OrderingContext {
    pub fn new(spec: &ModelSpec, designs: &[DMatrix<f64>], group_sizes: &[u64]) -> Self {
        let pair = spec.pair();
        let mut rows = Vec::new();
        for (x, &n_i) in designs.iter().zip(group_sizes) {
            for eq in [Equation::Margin1, Equation::Margin2] {
                let off = pair.eta_offset(eq);
                for r in 1..pair.equation_len(eq) {
                    let diff = x.row(off + r) - x.row(off + r - 1);
                    let coeffs: Vec<(usize, f64)> = diff
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v != 0.0)
                        .map(|(j, &v)| (j, v))
                        .collect();
                    rows.push((eq, n_i as f64, coeffs));
                }
            }
        }
        Self { rows }
    }

    pub fn from_dataset(spec: &ModelSpec, dataset: &Dataset) -> Result<Self> {
        let designs = dataset
            .groups()
            .iter()
            .map(|g| build_design_matrix(spec, &g.covariates))
            .collect::<Result<Vec<_>>>()?;
        let sizes: Vec<u64> = dataset.groups().iter().map(|g| g.total()).collect();
        Ok(Self::new(spec, &designs, &sizes))
    }

    /// Rows whose predictor step is not strictly increasing at `beta`,
    /// weighted by `lambda_k * n_i`.
    pub fn violated_rows(&self, beta: &DVector<f64>, lambda1: f64, lambda2: f64) -> Vec<PenaltyRow> {
        self.rows
            .iter()
            .filter_map(|(eq, n_i, coeffs)| {
                let lambda = if *eq == Equation::Margin1 { lambda1 } else { lambda2 };
                if lambda == 0.0 {
                    return None;
                }
                let step: f64 = coeffs.iter().map(|&(j, w)| w * beta[j]).sum();
                (step <= 0.0).then(|| PenaltyRow {
                    lambda: lambda * n_i,
                    coeffs: coeffs.clone(),
                    equation: *eq,
                    term: Term::Intercept,
                })
            })
            .collect()
    }

    /// Number of violated marginal orderings at `beta`.
    pub fn violations(&self, beta: &DVector<f64>) -> usize {
        self.violated_rows(beta, 1.0, 1.0).len()
    }
}

/// Penalty matrix of a static configuration. Ordering components depend on
/// `beta` and the data; use [`build_ordering_penalty`] for those.
pub fn build_penalty_matrix(config: &PenaltyConfig, spec: &ModelSpec) -> Result<DMatrix<f64>> {
    let pen = Penalty::build(config, spec)?;
    if pen.ordering.is_some() {
        return Err(BolmError::Penalty(
            "the ordering penalty depends on beta and the data; build it with build_ordering_penalty".into(),
        ));
    }
    Ok(pen.static_matrix())
}

/// Ordering penalty matrix `P(beta)` with the violation indicator evaluated
/// at `beta`.
pub fn build_ordering_penalty(
    spec: &ModelSpec,
    dataset: &Dataset,
    beta: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
) -> Result<DMatrix<f64>> {
    check_lambda(lambda1)?;
    check_lambda(lambda2)?;
    let ctx = OrderingContext::from_dataset(spec, dataset)?;
    Ok(rows_to_matrix(spec.n_params(), &ctx.violated_rows(beta, lambda1, lambda2)))
}

/// Limiting association surface of an ARC2 penalty as its smoothing values
/// grow without bound. `None` in a direction means that direction is not
/// penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LimitStructure {
    pub row_order: Option<usize>,
    pub col_order: Option<usize>,
}

pub fn arc2_limit_structure(s3: usize, s4: usize) -> LimitStructure {
    LimitStructure {
        row_order: Some(s3),
        col_order: Some(s4),
    }
}

impl LimitStructure {
    /// Monomials `r^a c^b` spanning the null space of the penalty over an
    /// `m1 x m2` block, evaluated at integer scores in row-major order.
    pub fn basis(&self, pair: OrdinalPair) -> DMatrix<f64> {
        let na = self.row_order.unwrap_or(pair.m1()).min(pair.m1());
        let nb = self.col_order.unwrap_or(pair.m2()).min(pair.m2());
        let mut basis = DMatrix::zeros(pair.m3(), na * nb);
        for r in 1..=pair.m1() {
            for c in 1..=pair.m2() {
                for a in 0..na {
                    for b in 0..nb {
                        basis[(pair.assoc_offset(r, c), a * nb + b)] = (r as f64).powi(a as i32) * (c as f64).powi(b as i32);
                    }
                }
            }
        }
        basis
    }

    pub fn dimension(&self, pair: OrdinalPair) -> usize {
        self.basis(pair).ncols()
    }

    /// Monomial exponents `(a, b)` of the basis columns.
    pub fn exponents(&self, pair: OrdinalPair) -> Vec<(usize, usize)> {
        let na = self.row_order.unwrap_or(pair.m1()).min(pair.m1());
        let nb = self.col_order.unwrap_or(pair.m2()).min(pair.m2());
        (0..na).flat_map(|a| (0..nb).map(move |b| (a, b))).collect()
    }

    pub fn describe(&self) -> String {
        match (self.row_order, self.col_order) {
            (Some(1), Some(1)) => "uniform association (constant surface)".into(),
            (Some(1), None) => "column effects".into(),
            (None, Some(1)) => "row effects".into(),
            (None, None) => "unrestricted association".into(),
            (Some(1), Some(s)) => format!("column polynomial of degree {}", s - 1),
            (Some(s), Some(1)) => format!("row polynomial of degree {}", s - 1),
            (Some(s3), Some(s4)) => format!(
                "polynomial surface: degree {} in r times degree {} in c (total degree {})",
                s3 - 1,
                s4 - 1,
                s3 + s4 - 2
            ),
            (Some(s), None) => format!("row polynomial of degree {} with free column effects", s - 1),
            (None, Some(s)) => format!("column polynomial of degree {} with free row effects", s - 1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EquationTerms, Group};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(d1: usize, d2: usize) -> OrdinalPair {
        OrdinalPair::new(d1, d2).unwrap()
    }

    fn x_spec(d1: usize, d2: usize) -> ModelSpec {
        ModelSpec::nunpom(pair(d1, d2), vec!["x".into(), "z".into()]).unwrap()
    }

    fn lam(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
        entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    /// Repeated differencing of a sequence, independent of the binomial rows.
    fn diff_n(seq: &[f64], order: usize) -> Vec<f64> {
        let mut v = seq.to_vec();
        for _ in 0..order {
            v = v.windows(2).map(|w| w[1] - w[0]).collect();
        }
        v
    }

    fn block(spec: &ModelSpec, eq: Equation, term: Term, beta: &DVector<f64>) -> Vec<f64> {
        let b = spec.layout().block(eq, term).unwrap().clone();
        beta.rows(b.offset, b.len).iter().copied().collect()
    }

    #[test]
    fn arc1_three_parameter_block() {
        let spec = ModelSpec::intercept_only(pair(4, 2));
        let cfg = PenaltyConfig::Arc1(Lambdas {
            margin1: lam(&[("intercept", 1.0)]),
            ..Default::default()
        });
        let p = build_penalty_matrix(&cfg, &spec).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(p.view((0, 0), (3, 3)).into_owned(), expected);
        assert!(p.columns(3, p.ncols() - 3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ridge_is_scaled_identity_on_block() {
        let spec = ModelSpec::intercept_only(pair(3, 3));
        let cfg = PenaltyConfig::Ridge(Lambdas::association_intercepts(2.0));
        let p = build_penalty_matrix(&cfg, &spec).unwrap();
        let mut expected = DMatrix::zeros(8, 8);
        for i in 4..8 {
            expected[(i, i)] = 2.0;
        }
        assert_eq!(p, expected);
    }

    #[test]
    fn arc1_vanishes_on_constant_blocks() {
        let spec = x_spec(4, 3);
        let cfg = PenaltyConfig::Arc1(Lambdas {
            margin1: lam(&[("intercept", 3.0), ("x", 1.0), ("z", 2.0)]),
            margin2: lam(&[("x", 5.0)]),
            association: lam(&[("intercept", 7.0), ("z", 0.5)]),
        });
        let pen = Penalty::build(&cfg, &spec).unwrap();
        let mut beta = DVector::zeros(spec.n_params());
        for (k, b) in spec.layout().blocks().iter().enumerate() {
            for i in b.range() {
                beta[i] = k as f64 - 2.5;
            }
        }
        assert_abs_diff_eq!(rows_value(pen.rows(), &beta), 0.0, epsilon = 1e-20);
    }

    #[test]
    fn category_independent_terms_get_no_rows() {
        let spec = ModelSpec::upom(pair(3, 3), vec!["x".into()]).unwrap();
        let cfg = PenaltyConfig::Ridge(Lambdas {
            margin1: lam(&[("x", 4.0)]),
            association: lam(&[("intercept", 4.0)]),
            ..Default::default()
        });
        let pen = Penalty::build(&cfg, &spec).unwrap();
        assert!(pen.rows().is_empty());
        let bad = PenaltyConfig::Ridge(Lambdas {
            margin1: lam(&[("nope", 1.0)]),
            ..Default::default()
        });
        assert!(Penalty::build(&bad, &spec).is_err());
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let spec = ModelSpec::intercept_only(pair(4, 4));
        let neg = PenaltyConfig::Arc1(Lambdas::association_intercepts(-1.0));
        assert!(Penalty::build(&neg, &spec).is_err());
        let mut terms = Arc2Terms::default();
        terms.association.insert(INTERCEPT.into(), SurfaceLambda::symmetric(1.0, 3));
        assert!(Penalty::build(&PenaltyConfig::Arc2(terms.clone()), &spec).is_err());
        terms.association.insert(INTERCEPT.into(), SurfaceLambda::symmetric(1.0, 2));
        assert!(Penalty::build(&PenaltyConfig::Arc2(terms), &spec).is_ok());
    }

    fn random_configs(spec: &ModelSpec) -> Vec<PenaltyConfig> {
        let ridge = PenaltyConfig::Ridge(Lambdas {
            margin1: lam(&[("intercept", 0.3), ("x", 2.0)]),
            margin2: lam(&[("z", 1.5)]),
            association: lam(&[("intercept", 4.0), ("x", 0.7)]),
        });
        let arc1 = PenaltyConfig::Arc1(Lambdas {
            margin1: lam(&[("x", 2.0)]),
            margin2: lam(&[("intercept", 0.1), ("z", 1.5)]),
            association: lam(&[("intercept", 4.0), ("z", 3.0)]),
        });
        let mut t = Arc2Terms::default();
        t.margin1.insert("x".into(), OrderedLambda { lambda: 2.0, order: 2 });
        t.margin2.insert("z".into(), OrderedLambda { lambda: 0.5, order: 1 });
        t.association.insert(
            INTERCEPT.into(),
            SurfaceLambda {
                lambda_row: 3.0,
                order_row: 2,
                lambda_col: 1.0,
                order_col: 1,
            },
        );
        t.association.insert("x".into(), SurfaceLambda::symmetric(0.25, 1));
        let _ = spec;
        vec![ridge, arc1, PenaltyConfig::Arc2(t)]
    }

    /// Sum-form penalty written directly from the difference definitions.
    fn sum_form(cfg: &PenaltyConfig, spec: &ModelSpec, beta: &DVector<f64>) -> f64 {
        let p = spec.pair();
        let term_of = |name: &str| {
            if name == INTERCEPT {
                Term::Intercept
            } else {
                Term::Covariate(spec.covariate_index(name).unwrap())
            }
        };
        match cfg {
            PenaltyConfig::Ridge(l) | PenaltyConfig::Arc1(l) => {
                let order = if matches!(cfg, PenaltyConfig::Ridge(_)) { 0 } else { 1 };
                let mut total = 0.0;
                for eq in Equation::ALL {
                    for (name, lambda) in l.for_equation(eq) {
                        let v = block(spec, eq, term_of(name), beta);
                        total += lambda * diff_n(&v, order).iter().map(|d| d * d).sum::<f64>();
                    }
                }
                total
            }
            PenaltyConfig::Arc2(t) => {
                let mut total = 0.0;
                for (eq, map) in [(Equation::Margin1, &t.margin1), (Equation::Margin2, &t.margin2)] {
                    for (name, ol) in map {
                        let v = block(spec, eq, term_of(name), beta);
                        total += ol.lambda * diff_n(&v, ol.order).iter().map(|d| d * d).sum::<f64>();
                    }
                }
                for (name, sl) in &t.association {
                    let v = block(spec, Equation::Association, term_of(name), beta);
                    let at = |r: usize, c: usize| v[(r - 1) * p.m2() + (c - 1)];
                    for c in 1..=p.m2() {
                        let col: Vec<f64> = (1..=p.m1()).map(|r| at(r, c)).collect();
                        total += sl.lambda_row * diff_n(&col, sl.order_row).iter().map(|d| d * d).sum::<f64>();
                    }
                    for r in 1..=p.m1() {
                        let row: Vec<f64> = (1..=p.m2()).map(|c| at(r, c)).collect();
                        total += sl.lambda_col * diff_n(&row, sl.order_col).iter().map(|d| d * d).sum::<f64>();
                    }
                }
                total
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn matrix_form_equals_sum_form() {
        let spec = x_spec(4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for cfg in random_configs(&spec) {
            let p = build_penalty_matrix(&cfg, &spec).unwrap();
            for _ in 0..100 {
                let beta = DVector::from_fn(spec.n_params(), |_, _| rng.random_range(-3.0..3.0));
                let quad = beta.dot(&(&p * &beta));
                let direct = sum_form(&cfg, &spec, &beta);
                assert!((quad - direct).abs() <= 1e-12 * direct.abs().max(1.0), "{quad} vs {direct}");
            }
        }
    }

    #[test]
    fn penalty_matrices_are_psd_and_composites_add() {
        let spec = x_spec(4, 5);
        let cfgs = random_configs(&spec);
        let mut sum = DMatrix::zeros(spec.n_params(), spec.n_params());
        for cfg in &cfgs {
            let p = build_penalty_matrix(cfg, &spec).unwrap();
            assert!((&p - p.transpose()).amax() == 0.0);
            assert!(p.clone().symmetric_eigenvalues().min() >= -1e-10);
            sum += p;
        }
        let composite = build_penalty_matrix(&PenaltyConfig::Composite { parts: cfgs }, &spec).unwrap();
        assert_eq!(composite, sum);
    }

    #[test]
    fn arc2_null_space_is_limit_basis() {
        let spec = ModelSpec::intercept_only(pair(7, 7));
        for s in 1..=4 {
            let mut t = Arc2Terms::default();
            t.association.insert(INTERCEPT.into(), SurfaceLambda::symmetric(1.0, s));
            let pen = Penalty::build(&PenaltyConfig::Arc2(t), &spec).unwrap();
            let limit = arc2_limit_structure(s, s);
            let basis = limit.basis(spec.pair());
            assert_eq!(basis.ncols(), s * s);
            let off = spec.pair().m1() + spec.pair().m2();
            for k in 0..basis.ncols() {
                let mut beta = DVector::zeros(spec.n_params());
                beta.rows_mut(off, 36).copy_from(&basis.column(k));
                assert!(rows_value(pen.rows(), &beta) < 1e-16);
            }
            assert_eq!(pen.stiff_rank(0.5), 36 - s * s);
        }
    }

    #[test]
    fn limit_structure_descriptions() {
        assert!(arc2_limit_structure(1, 1).describe().contains("uniform"));
        let lin = arc2_limit_structure(2, 2);
        assert_eq!(lin.exponents(pair(4, 4)), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        let col = LimitStructure {
            row_order: Some(1),
            col_order: None,
        };
        assert_eq!(col.describe(), "column effects");
        assert_eq!(col.dimension(pair(4, 5)), 4);
    }

    fn single_obs() -> (ModelSpec, Dataset) {
        let p = pair(3, 3);
        let spec = ModelSpec::new(
            p,
            vec!["x".into()],
            [
                EquationTerms {
                    included: vec![0],
                    category_dependent: vec![0],
                },
                Default::default(),
                Default::default(),
            ],
            false,
        )
        .unwrap();
        let ds = Dataset::new(
            p,
            1,
            vec![Group {
                covariates: vec![1.0],
                counts: vec![1, 0, 0, 0, 0, 0, 0, 0, 0],
            }],
        )
        .unwrap();
        (spec, ds)
    }

    #[test]
    fn ordering_penalty_hand_value() {
        let (spec, ds) = single_obs();
        // eta_11 = 0.1 + 0.4 = 0.5, eta_12 = 0.3 - 0.1 = 0.2
        let mut beta = DVector::zeros(spec.n_params());
        beta[0] = 0.1;
        beta[1] = 0.3;
        beta[2] = 0.4;
        beta[3] = -0.1;
        let p = build_ordering_penalty(&spec, &ds, &beta, 2.0, 5.0).unwrap();
        assert_abs_diff_eq!(beta.dot(&(&p * &beta)), 2.0 * 0.09, epsilon = 1e-14);
        // correctly ordered predictors carry no penalty
        beta[3] = 0.5;
        beta[5] = 0.1;
        let p = build_ordering_penalty(&spec, &ds, &beta, 2.0, 5.0).unwrap();
        assert_eq!(p.amax(), 0.0);
    }

    #[test]
    fn ordering_matrix_equals_sum_form() {
        let p = pair(4, 3);
        let spec = ModelSpec::nunpom(p, vec!["x".into()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let groups: Vec<Group> = (0..6)
            .map(|i| Group {
                covariates: vec![i as f64 - 2.5],
                counts: (0..12).map(|k| ((i + k) % 3) as u64).collect(),
            })
            .collect();
        let ds = Dataset::new(p, 1, groups).unwrap();
        for _ in 0..100 {
            let beta = DVector::from_fn(spec.n_params(), |_, _| rng.random_range(-1.0..1.0));
            let mat = build_ordering_penalty(&spec, &ds, &beta, 1.5, 0.5).unwrap();
            let mut direct = 0.0;
            for g in ds.groups() {
                let eta = build_design_matrix(&spec, &g.covariates).unwrap() * &beta;
                for (eq, lambda) in [(Equation::Margin1, 1.5), (Equation::Margin2, 0.5)] {
                    let off = p.eta_offset(eq);
                    for r in 1..p.equation_len(eq) {
                        let d = eta[off + r] - eta[off + r - 1];
                        if d <= 0.0 {
                            direct += lambda * g.total() as f64 * d * d;
                        }
                    }
                }
            }
            let quad = beta.dot(&(&mat * &beta));
            assert!((quad - direct).abs() <= 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn config_json_round_trip() {
        let json = r#"{"family":"arc2","association":{"intercept":{"lambda_row":1e8,"order_row":3,"lambda_col":1e8,"order_col":3}}}"#;
        let cfg: PenaltyConfig = serde_json::from_str(json).unwrap();
        let back: PenaltyConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
        let bad = r#"{"family":"arc1","asociation":{}}"#;
        assert!(serde_json::from_str::<PenaltyConfig>(bad).is_err());
    }
}
