//! The map between cell probabilities and the predictor vector
//! `eta = (eta_null, row global logits, column global logits, log-GORs)`.
//!
//! The forward direction ([`pi_to_eta`]) is direct arithmetic on quadrant
//! sums. The inverse ([`eta_to_pi`]) recovers each upper-left quadrant
//! probability from its margins and odds ratio by the Plackett root and
//! then double-differences. Not every `eta` has a positive inverse; such
//! predictors are reported as [`BolmError::IncompatibleEta`].

use nalgebra::{DMatrix, DVector};

use crate::error::{BolmError, Result};
use crate::model::OrdinalPair;

/// Below this distance from 1 the odds ratio is treated as exactly 1.
pub const PSI_ONE_TOL: f64 = 1e-8;
/// Negative discriminants of at most this magnitude are rounding noise.
pub const DISCRIMINANT_TOL: f64 = 1e-12;

const SUM_TOL: f64 = 1e-10;

#[inline]
pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Upper-left quadrant probability `P(A1 <= r, A2 <= c)` of a Plackett
/// distribution with margins `mu_r`, `mu_c` and global odds ratio `psi`.
pub fn plackett_inverse(mu_r: f64, mu_c: f64, psi: f64) -> Result<f64> {
    if !(psi > 0.0) || !psi.is_finite() {
        return Err(BolmError::InvalidOddsRatio(psi));
    }
    for mu in [mu_r, mu_c] {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(BolmError::InvalidCumulative(mu));
        }
    }
    if (psi - 1.0).abs() < PSI_ONE_TOL {
        return Ok(mu_r * mu_c);
    }
    let psi_m1 = psi - 1.0;
    let a = 1.0 + (mu_r + mu_c) * psi_m1;
    let b = -4.0 * psi * psi_m1 * mu_r * mu_c;
    let mut disc = a * a + b;
    if disc < 0.0 {
        if disc < -DISCRIMINANT_TOL {
            return Err(BolmError::NegativeDiscriminant(disc));
        }
        disc = 0.0;
    }
    let root = disc.sqrt();
    // (a - root) / (2 (psi - 1)) rewritten as 2 psi mu_r mu_c / (a + root)
    // whenever a > 0 so that neither form subtracts nearly equal numbers.
    let mu = if a > 0.0 {
        2.0 * psi * mu_r * mu_c / (a + root)
    } else {
        0.5 * (a - root) / psi_m1
    };
    Ok(mu)
}

/// Cumulative sums of a row-major `d1 x d2` table: `q[(r, c)] = P(A1 <= r, A2 <= c)`
/// for `r, c` in `1..=d`, with a zero border at index 0.
fn quadrant_sums(pi: &DMatrix<f64>) -> DMatrix<f64> {
    let (d1, d2) = pi.shape();
    let mut q = DMatrix::zeros(d1 + 1, d2 + 1);
    for r in 1..=d1 {
        for c in 1..=d2 {
            q[(r, c)] = pi[(r - 1, c - 1)] + q[(r - 1, c)] + q[(r, c - 1)] - q[(r - 1, c - 1)];
        }
    }
    q
}

fn check_table(pi: &DMatrix<f64>) -> Result<()> {
    for i in 0..pi.nrows() {
        for j in 0..pi.ncols() {
            let v = pi[(i, j)];
            if !(v > 0.0) {
                return Err(BolmError::NonPositiveCell { row: i, col: j, value: v });
            }
        }
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(BolmError::NotNormalized(total));
    }
    Ok(())
}

/// Global logits and log global odds ratios of a strictly positive table.
pub fn pi_to_eta(pi: &DMatrix<f64>) -> Result<DVector<f64>> {
    let pair = OrdinalPair::new(pi.nrows(), pi.ncols())?;
    check_table(pi)?;
    let (d1, d2) = (pair.d1(), pair.d2());
    let mut eta = DVector::zeros(pair.cells());
    // Each quadrant is summed directly rather than by subtraction, so small
    // complements keep full relative precision.
    let block_sum = |r0: usize, r1: usize, c0: usize, c1: usize| -> f64 {
        let mut s = 0.0;
        for i in r0..r1 {
            for j in c0..c1 {
                s += pi[(i, j)];
            }
        }
        s
    };
    for r in 1..d1 {
        let lo = block_sum(0, r, 0, d2);
        let hi = block_sum(r, d1, 0, d2);
        eta[r] = lo.ln() - hi.ln();
    }
    for c in 1..d2 {
        let lo = block_sum(0, d1, 0, c);
        let hi = block_sum(0, d1, c, d2);
        eta[pair.m1() + c] = lo.ln() - hi.ln();
    }
    let off = 1 + pair.m1() + pair.m2();
    for r in 1..d1 {
        for c in 1..d2 {
            let ll = block_sum(0, r, 0, c);
            let lh = block_sum(0, r, c, d2);
            let hl = block_sum(r, d1, 0, c);
            let hh = block_sum(r, d1, c, d2);
            eta[off + pair.assoc_offset(r, c)] = ll.ln() + hh.ln() - lh.ln() - hl.ln();
        }
    }
    Ok(eta)
}

/// Cell probabilities of a predictor vector; fails with
/// [`BolmError::IncompatibleEta`] when no positive table exists.
pub fn eta_to_pi(pair: OrdinalPair, eta: &DVector<f64>) -> Result<DMatrix<f64>> {
    if eta.len() != pair.cells() {
        return Err(BolmError::DimensionMismatch {
            context: "eta_to_pi",
            expected: pair.cells(),
            actual: eta.len(),
        });
    }
    if eta[0] != 0.0 {
        return Err(BolmError::InvalidInput(format!(
            "null contrast must be 0, got {}",
            eta[0]
        )));
    }
    let (d1, d2) = (pair.d1(), pair.d2());
    let incompatible = |row: usize, col: usize, value: f64| BolmError::IncompatibleEta { row, col, value };

    // mu[(r, c)] for r in 0..=d1, c in 0..=d2 with the usual boundary values.
    let mut mu = DMatrix::zeros(d1 + 1, d2 + 1);
    for r in 1..d1 {
        mu[(r, d2)] = expit(eta[r]);
    }
    for c in 1..d2 {
        mu[(d1, c)] = expit(eta[pair.m1() + c]);
    }
    mu[(d1, d2)] = 1.0;
    let off = 1 + pair.m1() + pair.m2();
    for r in 1..d1 {
        for c in 1..d2 {
            let psi = eta[off + pair.assoc_offset(r, c)].exp();
            let (mr, mc) = (mu[(r, d2)], mu[(d1, c)]);
            mu[(r, c)] = plackett_inverse(mr, mc, psi).map_err(|_| incompatible(r - 1, c - 1, f64::NAN))?;
        }
    }
    let mut pi = DMatrix::zeros(d1, d2);
    for r in 1..=d1 {
        for c in 1..=d2 {
            let v = mu[(r, c)] - mu[(r - 1, c)] - mu[(r, c - 1)] + mu[(r - 1, c - 1)];
            if !(v > 0.0) {
                return Err(incompatible(r - 1, c - 1, v));
            }
            pi[(r - 1, c - 1)] = v;
        }
    }
    Ok(pi)
}

/// Row-major flattening of a probability table.
pub fn flatten_table(pi: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(pi.len(), pi.transpose().iter().copied())
}

/// The summing matrix `L` and contrast matrix `C` of the multivariate
/// logistic representation `C' log(L pi) = eta`.
///
/// Rows of `L`: the all-ones row; for each row cut `r` the pair
/// `{A1 <= r, A1 > r}`; for each column cut the pair `{A2 <= c, A2 > c}`;
/// for each `(r, c)` in row-major order the quadrants
/// `{<=,<=}, {<=,>}, {>,<=}, {>,>}`.
#[derive(Debug, Clone)]
pub struct ContrastSystem {
    pair: OrdinalPair,
    l: DMatrix<f64>,
    ct: DMatrix<f64>,
}

impl ContrastSystem {
    pub fn new(pair: OrdinalPair) -> Self {
        let (d1, d2) = (pair.d1(), pair.d2());
        let n_rows = 1 + 2 * pair.m1() + 2 * pair.m2() + 4 * pair.m3();
        let mut l = DMatrix::zeros(n_rows, pair.cells());
        let mut ct = DMatrix::zeros(pair.cells(), n_rows);
        let fill = |l: &mut DMatrix<f64>, row: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
            for i in rows {
                for j in cols.clone() {
                    l[(row, i * d2 + j)] = 1.0;
                }
            }
        };
        fill(&mut l, 0, 0..d1, 0..d2);
        ct[(0, 0)] = 1.0;
        let mut row = 1;
        for r in 1..d1 {
            fill(&mut l, row, 0..r, 0..d2);
            fill(&mut l, row + 1, r..d1, 0..d2);
            ct[(r, row)] = 1.0;
            ct[(r, row + 1)] = -1.0;
            row += 2;
        }
        for c in 1..d2 {
            fill(&mut l, row, 0..d1, 0..c);
            fill(&mut l, row + 1, 0..d1, c..d2);
            ct[(pair.m1() + c, row)] = 1.0;
            ct[(pair.m1() + c, row + 1)] = -1.0;
            row += 2;
        }
        let off = 1 + pair.m1() + pair.m2();
        for r in 1..d1 {
            for c in 1..d2 {
                fill(&mut l, row, 0..r, 0..c);
                fill(&mut l, row + 1, 0..r, c..d2);
                fill(&mut l, row + 2, r..d1, 0..c);
                fill(&mut l, row + 3, r..d1, c..d2);
                let e = off + pair.assoc_offset(r, c);
                ct[(e, row)] = 1.0;
                ct[(e, row + 1)] = -1.0;
                ct[(e, row + 2)] = -1.0;
                ct[(e, row + 3)] = 1.0;
                row += 4;
            }
        }
        Self { pair, l, ct }
    }

    pub fn pair(&self) -> OrdinalPair {
        self.pair
    }

    /// Summing matrix `L`.
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Transposed contrast matrix `C'`.
    pub fn c_transpose(&self) -> &DMatrix<f64> {
        &self.ct
    }

    /// `C' log(L pi)` for a row-major probability vector.
    pub fn eta_of(&self, pi_flat: &DVector<f64>) -> DVector<f64> {
        let lp = &self.l * pi_flat;
        &self.ct * lp.map(f64::ln)
    }

    /// `d eta / d pi' = C' diag(L pi)^-1 L`.
    pub fn jacobian_eta_pi(&self, pi_flat: &DVector<f64>) -> DMatrix<f64> {
        let lp = &self.l * pi_flat;
        let mut scaled = self.l.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row /= lp[i];
        }
        &self.ct * scaled
    }

    /// `d pi / d eta' = (C' diag(L pi)^-1 L)^-1`.
    pub fn d_pi_d_eta(&self, pi_flat: &DVector<f64>) -> Result<DMatrix<f64>> {
        if pi_flat.iter().any(|&v| !(v > 0.0)) {
            return Err(BolmError::InvalidInput("d_pi_d_eta needs a strictly positive table".into()));
        }
        let jac = self.jacobian_eta_pi(pi_flat);
        let n = jac.nrows();
        jac.lu().try_inverse().ok_or(BolmError::SingularMatrix {
            context: "d_pi_d_eta",
            direction: vec![f64::NAN; n],
        })
    }
}

/// `d pi / d eta'` of a strictly positive `d1 x d2` table (row-major cells).
pub fn d_pi_d_eta(pi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pair = OrdinalPair::new(pi.nrows(), pi.ncols())?;
    ContrastSystem::new(pair).d_pi_d_eta(&flatten_table(pi))
}

/// Log global odds ratios of a strictly positive table, `(d1-1) x (d2-1)`.
pub fn log_gor_surface(pi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eta = pi_to_eta(pi)?;
    let pair = OrdinalPair::new(pi.nrows(), pi.ncols())?;
    let off = 1 + pair.m1() + pair.m2();
    Ok(DMatrix::from_fn(pair.m1(), pair.m2(), |ri, ci| eta[off + pair.assoc_offset(ri + 1, ci + 1)]))
}

/// Empirical log global odds ratios of a count table, `(d1-1) x (d2-1)`.
/// Quadrants with a zero count give `+inf`, `-inf` or NaN (`0/0`).
pub fn empirical_log_gor(pair: OrdinalPair, counts: &[u64]) -> DMatrix<f64> {
    let (d1, d2) = (pair.d1(), pair.d2());
    let table = DMatrix::from_fn(d1, d2, |i, j| counts[i * d2 + j] as f64);
    let q = quadrant_sums(&table);
    let total = q[(d1, d2)];
    DMatrix::from_fn(d1 - 1, d2 - 1, |ri, ci| {
        let (r, c) = (ri + 1, ci + 1);
        let ll = q[(r, c)];
        let lh = q[(r, d2)] - ll;
        let hl = q[(d1, c)] - ll;
        let hh = total - ll - lh - hl;
        (ll * hh).ln() - (lh * hl).ln()
    })
}
