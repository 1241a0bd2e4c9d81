//! Domain types shared by every other module: the response pair, grouped
//! data, the per-equation model specification and the parameter layout.
//!
//! Conventions used throughout the crate:
//!
//! * A `d1 x d2` probability or count table is flattened row-major, so cell
//!   `(i, j)` (0-based) sits at `i * d2 + j`.
//! * The predictor vector is `(eta_null, margin-1 logits, margin-2 logits,
//!   log global odds ratios)` with the association part in row-major `(r, c)`
//!   order. Its length equals the number of cells.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BolmError, Result};

/// Reserved term name for equation intercepts.
pub const INTERCEPT: &str = "intercept";

/// Parameter vector, laid out as described by [`ParamLayout`].
pub type ParamVector = DVector<f64>;

/// Numbers of categories of the two ordered responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrdinalPair {
    d1: usize,
    d2: usize,
}

impl OrdinalPair {
    pub fn new(d1: usize, d2: usize) -> Result<Self> {
        if d1 < 2 || d2 < 2 {
            return Err(BolmError::InvalidInput(format!(
                "responses need at least 2 categories each, got {d1}x{d2}"
            )));
        }
        Ok(Self { d1, d2 })
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    /// Number of row global logits, `d1 - 1`.
    pub fn m1(&self) -> usize {
        self.d1 - 1
    }

    /// Number of column global logits, `d2 - 1`.
    pub fn m2(&self) -> usize {
        self.d2 - 1
    }

    /// Number of global odds ratios, `(d1 - 1)(d2 - 1)`.
    pub fn m3(&self) -> usize {
        self.m1() * self.m2()
    }

    pub fn cells(&self) -> usize {
        self.d1 * self.d2
    }

    /// Number of predictor components of equation `k`.
    pub fn equation_len(&self, eq: Equation) -> usize {
        match eq {
            Equation::Margin1 => self.m1(),
            Equation::Margin2 => self.m2(),
            Equation::Association => self.m3(),
        }
    }

    /// Offset of equation `eq` inside the predictor vector (after `eta_null`).
    pub fn eta_offset(&self, eq: Equation) -> usize {
        match eq {
            Equation::Margin1 => 1,
            Equation::Margin2 => 1 + self.m1(),
            Equation::Association => 1 + self.m1() + self.m2(),
        }
    }

    /// 0-based position of the association cell `(r, c)` (1-based cut points).
    pub(crate) fn assoc_offset(&self, r: usize, c: usize) -> usize {
        (r - 1) * self.m2() + (c - 1)
    }
}

/// Row-major position (1-based) of the association cut point `(r, c)`.
pub fn flatten_index(r: usize, c: usize, pair: OrdinalPair) -> Result<usize> {
    if r == 0 || c == 0 || r > pair.m1() || c > pair.m2() {
        return Err(BolmError::CategoryOutOfRange {
            r,
            c,
            d1: pair.d1(),
            d2: pair.d2(),
        });
    }
    Ok(pair.assoc_offset(r, c) + 1)
}

/// One of the three predictor equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    Margin1,
    Margin2,
    Association,
}

impl Equation {
    pub const ALL: [Equation; 3] = [Equation::Margin1, Equation::Margin2, Equation::Association];

    pub fn index(self) -> usize {
        match self {
            Equation::Margin1 => 0,
            Equation::Margin2 => 1,
            Equation::Association => 2,
        }
    }
}

/// A covariate profile together with its `d1 x d2` table of counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub covariates: Vec<f64>,
    /// Row-major counts.
    pub counts: Vec<u64>,
}

impl Group {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Grouped bivariate multinomial observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pair: OrdinalPair,
    n_covariates: usize,
    groups: Vec<Group>,
}

impl Dataset {
    /// Validates and merges groups that share an identical covariate vector.
    /// Merged groups keep the position of their first occurrence.
    pub fn new(pair: OrdinalPair, n_covariates: usize, groups: Vec<Group>) -> Result<Self> {
        let mut merged: Vec<Group> = Vec::with_capacity(groups.len());
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        for g in groups {
            if g.covariates.len() != n_covariates {
                return Err(BolmError::DimensionMismatch {
                    context: "group covariates",
                    expected: n_covariates,
                    actual: g.covariates.len(),
                });
            }
            if g.counts.len() != pair.cells() {
                return Err(BolmError::DimensionMismatch {
                    context: "group counts",
                    expected: pair.cells(),
                    actual: g.counts.len(),
                });
            }
            if g.covariates.iter().any(|x| !x.is_finite()) {
                return Err(BolmError::InvalidInput("non-finite covariate value".into()));
            }
            // -0.0 and 0.0 are the same profile
            let key: Vec<u64> = g.covariates.iter().map(|x| (x + 0.0).to_bits()).collect();
            match seen.get(&key) {
                Some(&idx) => {
                    for (acc, c) in merged[idx].counts.iter_mut().zip(&g.counts) {
                        *acc += c;
                    }
                }
                None => {
                    seen.insert(key, merged.len());
                    merged.push(g);
                }
            }
        }
        if merged.is_empty() {
            return Err(BolmError::InvalidInput("dataset has no groups".into()));
        }
        if let Some(i) = merged.iter().position(|g| g.total() == 0) {
            return Err(BolmError::InvalidInput(format!("group {i} has zero total count")));
        }
        Ok(Self {
            pair,
            n_covariates,
            groups: merged,
        })
    }

    /// A single table without covariates.
    pub fn from_table(pair: OrdinalPair, counts: Vec<u64>) -> Result<Self> {
        Self::new(
            pair,
            0,
            vec![Group {
                covariates: Vec::new(),
                counts,
            }],
        )
    }

    pub fn pair(&self) -> OrdinalPair {
        self.pair
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// Total sample size.
    pub fn n(&self) -> u64 {
        self.groups.iter().map(Group::total).sum()
    }

    /// Counts summed over all groups (row-major).
    pub fn pooled_counts(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.pair.cells()];
        for g in &self.groups {
            for (o, c) in out.iter_mut().zip(&g.counts) {
                *o += c;
            }
        }
        out
    }
}

/// Covariates entering one equation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquationTerms {
    /// Indices into [`ModelSpec::covariate_names`].
    pub included: Vec<usize>,
    /// Subset of `included` whose effects vary with the category.
    pub category_dependent: Vec<usize>,
}

impl EquationTerms {
    pub fn is_category_dependent(&self, j: usize) -> bool {
        self.category_dependent.contains(&j)
    }

    /// Included covariates with category-independent effects.
    pub fn category_independent(&self) -> Vec<usize> {
        self.included
            .iter()
            .copied()
            .filter(|j| !self.category_dependent.contains(j))
            .collect()
    }
}

/// Which covariates enter each of the three equations, and how.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pair: OrdinalPair,
    covariate_names: Vec<String>,
    equations: [EquationTerms; 3],
    uniform_association: bool,
}

impl ModelSpec {
    pub fn new(
        pair: OrdinalPair,
        covariate_names: Vec<String>,
        equations: [EquationTerms; 3],
        uniform_association: bool,
    ) -> Result<Self> {
        let p = covariate_names.len();
        for (i, name) in covariate_names.iter().enumerate() {
            if name == INTERCEPT {
                return Err(BolmError::InvalidInput(format!(
                    "covariate name '{INTERCEPT}' is reserved"
                )));
            }
            if covariate_names[..i].contains(name) {
                return Err(BolmError::InvalidInput(format!("duplicate covariate '{name}'")));
            }
        }
        let mut equations = equations;
        for terms in equations.iter_mut() {
            if terms.included.iter().any(|&j| j >= p) {
                return Err(BolmError::InvalidInput("covariate index out of range".into()));
            }
            if let Some(j) = terms
                .category_dependent
                .iter()
                .find(|j| !terms.included.contains(j))
            {
                return Err(BolmError::InvalidInput(format!(
                    "covariate '{}' is category dependent but not included",
                    covariate_names[*j]
                )));
            }
            terms.included.sort_unstable();
            terms.included.dedup();
            terms.category_dependent.sort_unstable();
            terms.category_dependent.dedup();
        }
        Ok(Self {
            pair,
            covariate_names,
            equations,
            uniform_association,
        })
    }

    /// Intercept-only model with one global odds ratio per cut point.
    pub fn intercept_only(pair: OrdinalPair) -> Self {
        Self {
            pair,
            covariate_names: Vec::new(),
            equations: Default::default(),
            uniform_association: false,
        }
    }

    /// Every covariate in every equation with category-dependent effects,
    /// non-uniform association.
    pub fn nunpom(pair: OrdinalPair, covariate_names: Vec<String>) -> Result<Self> {
        let all: Vec<usize> = (0..covariate_names.len()).collect();
        let terms = EquationTerms {
            included: all.clone(),
            category_dependent: all,
        };
        Self::new(
            pair,
            covariate_names,
            [terms.clone(), terms.clone(), terms],
            false,
        )
    }

    /// Every covariate in every equation with category-independent effects,
    /// uniform association.
    pub fn upom(pair: OrdinalPair, covariate_names: Vec<String>) -> Result<Self> {
        let terms = EquationTerms {
            included: (0..covariate_names.len()).collect(),
            category_dependent: Vec::new(),
        };
        Self::new(
            pair,
            covariate_names,
            [terms.clone(), terms.clone(), terms],
            true,
        )
    }

    pub fn pair(&self) -> OrdinalPair {
        self.pair
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn terms(&self, eq: Equation) -> &EquationTerms {
        &self.equations[eq.index()]
    }

    pub fn uniform_association(&self) -> bool {
        self.uniform_association
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }

    pub fn n_params(&self) -> usize {
        self.layout().len()
    }
}

/// The regressor a parameter block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Intercept,
    Covariate(usize),
}

/// A contiguous run of parameters for one (equation, term) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub equation: Equation,
    pub term: Term,
    /// One coefficient per category of the equation.
    pub category_dependent: bool,
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Block structure of the parameter vector. Each equation contributes its
/// intercepts, then one entry per category-independent covariate, then one
/// run of category-specific entries per category-dependent covariate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pair: OrdinalPair,
    blocks: Vec<Block>,
    len: usize,
}

impl ParamLayout {
    fn new(spec: &ModelSpec) -> Self {
        let pair = spec.pair;
        let mut blocks = Vec::new();
        let mut offset = 0;
        for eq in Equation::ALL {
            let d = pair.equation_len(eq);
            let terms = spec.terms(eq);
            let uniform = eq == Equation::Association && spec.uniform_association;
            let n_int = if uniform { 1 } else { d };
            blocks.push(Block {
                equation: eq,
                term: Term::Intercept,
                category_dependent: !uniform,
                offset,
                len: n_int,
            });
            offset += n_int;
            for j in terms.category_independent() {
                blocks.push(Block {
                    equation: eq,
                    term: Term::Covariate(j),
                    category_dependent: false,
                    offset,
                    len: 1,
                });
                offset += 1;
            }
            for &j in &terms.category_dependent {
                blocks.push(Block {
                    equation: eq,
                    term: Term::Covariate(j),
                    category_dependent: true,
                    offset,
                    len: d,
                });
                offset += d;
            }
        }
        Self {
            pair,
            blocks,
            len: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, eq: Equation, term: Term) -> Option<&Block> {
        self.blocks
            .iter()
            .find(|b| b.equation == eq && b.term == term)
    }

    pub fn pair(&self) -> OrdinalPair {
        self.pair
    }

    /// Human-readable label per parameter, e.g. `margin1:intercept[2]` or
    /// `association:x[1,2]`.
    pub fn labels(&self, names: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.len);
        for b in &self.blocks {
            let eq = match b.equation {
                Equation::Margin1 => "margin1",
                Equation::Margin2 => "margin2",
                Equation::Association => "association",
            };
            let term = match b.term {
                Term::Intercept => INTERCEPT.to_string(),
                Term::Covariate(j) => names[j].clone(),
            };
            if !b.category_dependent {
                out.push(format!("{eq}:{term}"));
                continue;
            }
            for t in 0..b.len {
                if b.equation == Equation::Association {
                    let r = t / self.pair.m2() + 1;
                    let c = t % self.pair.m2() + 1;
                    out.push(format!("{eq}:{term}[{r},{c}]"));
                } else {
                    out.push(format!("{eq}:{term}[{}]", t + 1));
                }
            }
        }
        out
    }
}

/// Design matrix `X_i` of one covariate profile: `cells x n_params`, with an
/// all-zero first row for the null contrast.
pub fn build_design_matrix(spec: &ModelSpec, covariates: &[f64]) -> Result<DMatrix<f64>> {
    if covariates.len() != spec.n_covariates() {
        return Err(BolmError::DimensionMismatch {
            context: "design matrix covariates",
            expected: spec.n_covariates(),
            actual: covariates.len(),
        });
    }
    let pair = spec.pair();
    let layout = spec.layout();
    let mut x = DMatrix::zeros(pair.cells(), layout.len());
    for b in layout.blocks() {
        let row0 = pair.eta_offset(b.equation);
        let d = pair.equation_len(b.equation);
        let value = match b.term {
            Term::Intercept => 1.0,
            Term::Covariate(j) => covariates[j],
        };
        for t in 0..d {
            let col = if b.category_dependent { b.offset + t } else { b.offset };
            x[(row0 + t, col)] = value;
        }
    }
    Ok(x)
}
