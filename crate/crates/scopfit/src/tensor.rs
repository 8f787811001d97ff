//! Tensor-product smooths: unconstrained smooth-ANOVA interactions,
//! interactions monotone in the first covariate, and double/single
//! monotone bivariate smooths, with double penalties derived from the
//! marginal penalties.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::splines::{
    self, Constraint, KnotVector, beta_tilde_entry, first_diff_from, second_diff,
};
use crate::{Error, Result};

/// Row-wise Kronecker product: row i of the result is kron(A_i, B_i).
pub fn row_kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "row kronecker: {} vs {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let (n, p, q) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(n, p * q);
    for i in 0..n {
        for j in 0..p {
            let aij = a[(i, j)];
            for k in 0..q {
                out[(i, j * q + k)] = aij * b[(i, k)];
            }
        }
    }
    Ok(out)
}

/// Kronecker product of two dense matrices, first factor index major.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Orthonormal basis of the null space of c^T (q x (q-1)), via a
/// Householder reflection. Columns are orthogonal to `c`.
pub fn sum_to_zero_basis(c: &DVector<f64>) -> DMatrix<f64> {
    let q = c.len();
    let mut v = c.clone();
    let norm = v.norm();
    v[0] += norm * v[0].signum();
    let vtv = v.dot(&v);
    let mut h = DMatrix::identity(q, q);
    if vtv > 0.0 {
        h -= (&v * v.transpose()) * (2.0 / vtv);
    }
    h.columns(1, q - 1).into_owned()
}

/// Interaction constraint variants for `ti`-style terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TiConstraint {
    None,
    IncreasingFirst,
    DecreasingFirst,
}

/// Monotonicity pattern for full bivariate SCOP smooths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BivariateDirection {
    DoubleIncreasing,
    DoubleDecreasing,
    SingleIncreasing,
    SingleDecreasing,
}

impl BivariateDirection {
    pub fn from_code(code: &str) -> Result<Self> {
        Ok(match code {
            "tedmi" => BivariateDirection::DoubleIncreasing,
            "tedmd" => BivariateDirection::DoubleDecreasing,
            "tesmi" => BivariateDirection::SingleIncreasing,
            "tesmd" => BivariateDirection::SingleDecreasing,
            other => return Err(Error::UnsupportedDirection(other.to_string())),
        })
    }
}

/// A constructed bivariate smooth: marginal maps, row-Kronecker product
/// matrix and the double penalties on the working coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorDesign {
    pub kv1: KnotVector,
    pub kv2: KnotVector,
    /// Marginal maps: term matrix = rowkron(B1 * a1, B2 * a2).
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    /// Drop the leading product column (constant direction) after the
    /// Kronecker product.
    pub drop_first: bool,
    /// n x w product matrix at the training points.
    pub product: DMatrix<f64>,
    /// Local w x w penalties (one per marginal direction).
    pub penalties: Vec<DMatrix<f64>>,
    /// Exponentiation mask over the w working coefficients.
    pub exp_mask: Vec<bool>,
}

impl TensorDesign {
    pub fn ncols(&self) -> usize {
        self.product.ncols()
    }

    /// Rebuild the term matrix at new covariate values.
    pub fn matrix_at(&self, x1: &[f64], x2: &[f64]) -> Result<DMatrix<f64>> {
        let b1 = splines::eval_basis(x1, &self.kv1)? * &self.a1;
        let b2 = splines::eval_basis(x2, &self.kv2)? * &self.a2;
        let full = row_kronecker(&b1, &b2)?;
        Ok(if self.drop_first {
            full.columns(1, full.ncols() - 1).into_owned()
        } else {
            full
        })
    }

    /// Term prediction at arbitrary points for a working coefficient
    /// vector (applies the exponentiation mask).
    pub fn eval(&self, x1: &[f64], x2: &[f64], beta: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.matrix_at(x1, x2)?;
        let bt = DVector::from_fn(beta.len(), |j, _| {
            beta_tilde_entry(beta[j], self.exp_mask[j]).0
        });
        Ok(m * bt)
    }
}

fn check_marginals(x1: &[f64], x2: &[f64], q1: usize, q2: usize, order: usize) -> Result<()> {
    let min_q = order;
    for (q, name) in [(q1, "first"), (q2, "second")] {
        if q < min_q {
            return Err(Error::BasisTooSmall {
                q,
                min: min_q,
                context: format!("{name} tensor marginal"),
            });
        }
    }
    for (x, name) in [(x1, "x1"), (x2, "x2")] {
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::ConstantCovariate(name.to_string()));
        }
    }
    Ok(())
}

/// Tensor-product interaction with main effects excluded.
///
/// For `None` both marginals carry sum-to-zero centering before the
/// product. For the monotone variants the first marginal is the SCOP
/// cumulative basis with its constant column removed (its identifiability
/// absorption) and the second marginal has its leading basis function
/// removed, which eliminates constants from the span while keeping the
/// basis nonnegative so monotonicity survives the product.
pub fn ti_interaction(
    x1: &[f64],
    x2: &[f64],
    q1: usize,
    q2: usize,
    constraint: TiConstraint,
    order: usize,
) -> Result<TensorDesign> {
    check_marginals(x1, x2, q1, q2, order)?;
    let kv1 = splines::place_knots(x1, q1, order)?;
    let kv2 = splines::place_knots(x2, q2, order)?;
    let b1 = splines::eval_basis(x1, &kv1)?;
    let b2 = splines::eval_basis(x2, &kv2)?;

    let (a1, a2, s1, s2, exp_all) = match constraint {
        TiConstraint::None => {
            let z1 = sum_to_zero_basis(&b1.row_sum().transpose());
            let z2 = sum_to_zero_basis(&b2.row_sum().transpose());
            let d1 = second_diff(q1);
            let d2 = second_diff(q2);
            let s1 = z1.transpose() * d1.transpose() * &d1 * &z1;
            let s2 = z2.transpose() * d2.transpose() * &d2 * &z2;
            (z1, z2, s1, s2, false)
        }
        TiConstraint::IncreasingFirst | TiConstraint::DecreasingFirst => {
            let c = if constraint == TiConstraint::IncreasingFirst {
                Constraint::Increasing
            } else {
                Constraint::Decreasing
            };
            let sd = splines::scop_sigma(c, q1)?;
            // SCOP identifiability: drop the constant (first) column of B1*Sigma.
            let a1 = sd.sigma.columns(1, q1 - 1).into_owned();
            // Constant removal for the second marginal: drop its first basis
            // function; the remaining functions stay nonnegative.
            let a2 = DMatrix::identity(q2, q2).columns(1, q2 - 1).into_owned();
            let d1 = first_diff_from(q1 - 1, 0);
            let d2 = second_diff(q2 - 1);
            let s1 = d1.transpose() * &d1;
            let s2 = d2.transpose() * &d2;
            (a1, a2, s1, s2, true)
        }
    };
    let m1 = &b1 * &a1;
    let m2 = &b2 * &a2;
    let product = row_kronecker(&m1, &m2)?;
    let (w1, w2) = (a1.ncols(), a2.ncols());
    let penalties = vec![
        kron(&s1, &DMatrix::identity(w2, w2)),
        kron(&DMatrix::identity(w1, w1), &s2),
    ];
    Ok(TensorDesign {
        kv1,
        kv2,
        a1,
        a2,
        drop_first: false,
        product,
        penalties,
        exp_mask: vec![exp_all; w1 * w2],
    })
}

/// Full bivariate SCOP smooth, monotone in both covariates (double) or in
/// the first only (single). The constant product direction is dropped so
/// the model intercept stays identifiable.
pub fn double_monotone(
    x1: &[f64],
    x2: &[f64],
    q1: usize,
    q2: usize,
    direction: BivariateDirection,
    order: usize,
) -> Result<TensorDesign> {
    check_marginals(x1, x2, q1, q2, order)?;
    let kv1 = splines::place_knots(x1, q1, order)?;
    let kv2 = splines::place_knots(x2, q2, order)?;
    let b1 = splines::eval_basis(x1, &kv1)?;
    let b2 = splines::eval_basis(x2, &kv2)?;

    let (c1, c2) = match direction {
        BivariateDirection::DoubleIncreasing => (Constraint::Increasing, Some(Constraint::Increasing)),
        BivariateDirection::DoubleDecreasing => (Constraint::Decreasing, Some(Constraint::Decreasing)),
        BivariateDirection::SingleIncreasing => (Constraint::Increasing, None),
        BivariateDirection::SingleDecreasing => (Constraint::Decreasing, None),
    };
    let a1 = splines::scop_sigma(c1, q1)?.sigma;
    let a2 = match c2 {
        Some(c) => splines::scop_sigma(c, q2)?.sigma,
        None => DMatrix::identity(q2, q2),
    };
    let m1 = &b1 * &a1;
    let m2 = &b2 * &a2;
    let full = row_kronecker(&m1, &m2)?;
    let product = full.columns(1, q1 * q2 - 1).into_owned();

    // Exponentiation over the full q1*q2 grid, then drop the leading
    // (constant) entry. Double monotone: everything except (1,1) is
    // exponentiated. Single monotone: rows j >= 2 only.
    let mut mask_full = Vec::with_capacity(q1 * q2);
    for j in 0..q1 {
        for k in 0..q2 {
            let e = match c2 {
                Some(_) => !(j == 0 && k == 0),
                None => j >= 1,
            };
            mask_full.push(e);
        }
    }
    let exp_mask = mask_full[1..].to_vec();

    // Difference penalties on the working grid, first column removed to
    // match the dropped coefficient.
    let d1 = kron(&first_diff_from(q1, 1), &DMatrix::identity(q2, q2));
    let d2 = match c2 {
        Some(_) => kron(&DMatrix::identity(q1, q1), &first_diff_from(q2, 1)),
        None => kron(&DMatrix::identity(q1, q1), &second_diff(q2)),
    };
    let pen = |d: &DMatrix<f64>| {
        let dd = d.columns(1, q1 * q2 - 1).into_owned();
        dd.transpose() * &dd
    };
    Ok(TensorDesign {
        kv1,
        kv2,
        a1,
        a2,
        drop_first: true,
        product,
        penalties: vec![pen(&d1), pen(&d2)],
        exp_mask,
    })
}
