//! B-spline bases, knot placement, difference penalties and the SCOP
//! reparametrization machinery for univariate shape-constrained smooths.
//!
//! A SCOP-spline represents m(x) = sum_j gamma_j b_j(x) with
//! gamma = Sigma * beta_tilde, where beta_tilde holds the working
//! coefficients with selected entries exponentiated. The Sigma matrix and
//! exponentiation mask are chosen so the constraint's sufficient condition
//! on coefficient differences holds for every real beta.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Working coefficients above this value are clipped before exponentiation.
pub const EXP_CLIP: f64 = 15.0;

/// Shape constraint for a univariate smooth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    Unconstrained,
    Increasing,
    Decreasing,
    Convex,
    Concave,
    /// Increasing, built for use with a `by` variable (no identifiability
    /// absorption at assembly time).
    IncreasingBy,
    /// Decreasing, for use with a `by` variable.
    DecreasingBy,
}

impl Constraint {
    pub fn from_code(code: &str) -> Result<Self> {
        Ok(match code {
            "ps" | "cr" => Constraint::Unconstrained,
            "mpi" => Constraint::Increasing,
            "mpd" => Constraint::Decreasing,
            "cx" => Constraint::Convex,
            "cv" => Constraint::Concave,
            "mpiBy" => Constraint::IncreasingBy,
            "mpdBy" => Constraint::DecreasingBy,
            other => return Err(Error::UnknownConstraint(other.to_string())),
        })
    }

    /// True for the monotone family (first-difference condition).
    pub fn is_monotone(self) -> bool {
        matches!(
            self,
            Constraint::Increasing
                | Constraint::Decreasing
                | Constraint::IncreasingBy
                | Constraint::DecreasingBy
        )
    }

    pub fn is_shape_constrained(self) -> bool {
        !matches!(self, Constraint::Unconstrained)
    }
}

/// Knot sequence for a B-spline basis of dimension `q` and given order
/// (order 4 = cubic).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnotVector {
    pub knots: Vec<f64>,
    pub order: usize,
    pub q: usize,
}

impl KnotVector {
    /// Covariate range over which the basis forms a partition of unity.
    pub fn range(&self) -> (f64, f64) {
        (self.knots[self.order - 1], self.knots[self.q])
    }
}

/// Evenly spaced knots over the covariate range with `order` boundary
/// extensions replicated at the interior step.
pub fn place_knots(x: &[f64], q: usize, order: usize) -> Result<KnotVector> {
    if q < order {
        return Err(Error::BasisTooSmall {
            q,
            min: order,
            context: "knot placement".into(),
        });
    }
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::ConstantCovariate(format!("value {lo}")));
    }
    let nspan = q - order + 1;
    let h = (hi - lo) / nspan as f64;
    let mut knots = Vec::with_capacity(q + order);
    for i in 0..(q + order) {
        // interior knots occupy indices order-1 .. q
        knots.push(lo + (i as f64 - (order - 1) as f64) * h);
    }
    Ok(KnotVector { knots, order, q })
}

/// Evaluate the `q` B-spline basis functions at each point by the
/// Cox-de Boor recursion. Rows sum to one on the covariate range.
pub fn eval_basis(x: &[f64], kv: &KnotVector) -> Result<DMatrix<f64>> {
    let (lo, hi) = kv.range();
    let mut out = DMatrix::zeros(x.len(), kv.q);
    for (i, &xi) in x.iter().enumerate() {
        if xi < lo - 1e-12 || xi > hi + 1e-12 {
            return Err(Error::OutOfRange { x: xi, lo, hi });
        }
        let (span, vals) = basis_at(xi.clamp(lo, hi), kv);
        for (r, &v) in vals.iter().enumerate() {
            out[(i, span + 1 - kv.order + r)] = v;
        }
    }
    Ok(out)
}

/// Nonzero basis values at `x`: returns the knot span index and the
/// `order` values for bases span+1-order .. span.
fn basis_at(x: f64, kv: &KnotVector) -> (usize, Vec<f64>) {
    let t = &kv.knots;
    let k = kv.order;
    // span i such that t[i] <= x < t[i+1], clamped into [k-1, q-1]
    let mut span = k - 1;
    while span < kv.q - 1 && x >= t[span + 1] {
        span += 1;
    }
    let mut vals = vec![0.0; k];
    vals[0] = 1.0;
    for d in 1..k {
        let mut saved = 0.0;
        for r in 0..d {
            let left = t[span + 1 + r - d];
            let right = t[span + 1 + r];
            let denom = right - left;
            let term = if denom.abs() > 0.0 { vals[r] / denom } else { 0.0 };
            vals[r] = saved + (right - x) * term;
            saved = (x - left) * term;
        }
        vals[d] = saved;
    }
    (span, vals)
}

/// Reparametrization descriptor: gamma = Sigma * beta_tilde where
/// beta_tilde exponentiates the entries flagged by `exp_mask`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScopDescriptor {
    pub constraint: Constraint,
    pub q: usize,
    pub exp_mask: Vec<bool>,
    pub sigma: DMatrix<f64>,
}

/// Build the Sigma matrix and exponentiation mask for a constraint.
pub fn scop_sigma(constraint: Constraint, q: usize) -> Result<ScopDescriptor> {
    if q < 2 {
        return Err(Error::BasisTooSmall {
            q,
            min: 2,
            context: "SCOP reparametrization".into(),
        });
    }
    let mut sigma = DMatrix::zeros(q, q);
    let mut exp_mask = vec![true; q];
    exp_mask[0] = false;
    match constraint {
        Constraint::Unconstrained => {
            sigma.fill_with_identity();
            exp_mask = vec![false; q];
        }
        Constraint::Increasing | Constraint::IncreasingBy => {
            for i in 0..q {
                for j in 0..=i {
                    sigma[(i, j)] = 1.0;
                }
            }
        }
        Constraint::Decreasing | Constraint::DecreasingBy => {
            for i in 0..q {
                sigma[(i, 0)] = 1.0;
                for j in 1..=i {
                    sigma[(i, j)] = -1.0;
                }
            }
        }
        Constraint::Convex | Constraint::Concave => {
            if q < 3 {
                return Err(Error::BasisTooSmall {
                    q,
                    min: 3,
                    context: "convexity reparametrization".into(),
                });
            }
            // gamma_j = beta_1 + (j-1) beta_2 + sum_{k=3}^{j} (j-k+1) exp(beta_k)
            // so second differences equal +-exp(beta_{j+2}).
            let sign = if constraint == Constraint::Convex { 1.0 } else { -1.0 };
            exp_mask[1] = false;
            for i in 0..q {
                sigma[(i, 0)] = 1.0;
                if q > 1 {
                    sigma[(i, 1)] = i as f64;
                }
                for j in 2..=i {
                    sigma[(i, j)] = sign * (i - j + 1) as f64;
                }
            }
        }
    }
    Ok(ScopDescriptor {
        constraint,
        q,
        exp_mask,
        sigma,
    })
}

/// Result of mapping working coefficients through the reparametrization.
pub struct Reparam {
    pub beta_tilde: DVector<f64>,
    pub gamma: DVector<f64>,
    /// Set when any working coefficient hit the overflow clip.
    pub clipped: bool,
}

/// Elementwise beta -> beta_tilde map shared by every descriptor:
/// exponentiate masked entries (clipping at [`EXP_CLIP`]).
pub fn beta_tilde_entry(beta_j: f64, exponentiate: bool) -> (f64, bool) {
    if exponentiate {
        let clipped = beta_j > EXP_CLIP;
        ((beta_j.min(EXP_CLIP)).exp(), clipped)
    } else {
        (beta_j, false)
    }
}

pub fn reparam(beta: &DVector<f64>, d: &ScopDescriptor) -> Reparam {
    assert_eq!(beta.len(), d.q, "coefficient length must equal q");
    let mut clipped = false;
    let beta_tilde = DVector::from_fn(d.q, |j, _| {
        let (v, c) = beta_tilde_entry(beta[j], d.exp_mask[j]);
        clipped |= c;
        v
    });
    let gamma = &d.sigma * &beta_tilde;
    Reparam {
        beta_tilde,
        gamma,
        clipped,
    }
}

/// Jacobian d gamma / d beta = Sigma * diag(m) with m_j = exp(beta_j) for
/// exponentiated entries and 1 otherwise.
pub fn reparam_jacobian(beta: &DVector<f64>, d: &ScopDescriptor) -> DMatrix<f64> {
    assert_eq!(beta.len(), d.q);
    let mut j = d.sigma.clone();
    for (col, &mask) in d.exp_mask.iter().enumerate() {
        if mask {
            let m = beta[col].min(EXP_CLIP).exp();
            for r in 0..d.q {
                j[(r, col)] *= m;
            }
        }
    }
    j
}

/// Symmetric positive-semidefinite penalty block with its position inside
/// the assembled model matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyBlock {
    pub matrix: DMatrix<f64>,
    pub offset: usize,
    pub term_id: usize,
    /// Dimension of the penalty null space, used for edf limit checks.
    pub nullspace_dim: usize,
}

/// Difference matrix: first differences of entries `from..q` (0-based
/// inclusive start), producing q-from-1 rows over q columns.
pub fn first_diff_from(q: usize, from: usize) -> DMatrix<f64> {
    let rows = q - from - 1;
    let mut d = DMatrix::zeros(rows, q);
    for i in 0..rows {
        d[(i, from + i)] = -1.0;
        d[(i, from + i + 1)] = 1.0;
    }
    d
}

/// Second-difference matrix over all q entries, (q-2) x q.
pub fn second_diff(q: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(q - 2, q);
    for i in 0..(q - 2) {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -2.0;
        d[(i, i + 2)] = 1.0;
    }
    d
}

/// Smoothing penalty on the working coefficients.
///
/// Monotone types difference the exponentiated entries (indices 2..q in the
/// 1-based convention); convex/concave types difference indices 3..q;
/// unconstrained smooths take second differences over all q.
pub fn penalty(q: usize, constraint: Constraint) -> Result<PenaltyBlock> {
    if q < 3 {
        return Err(Error::BasisTooSmall {
            q,
            min: 3,
            context: "difference penalty".into(),
        });
    }
    let (d, null_dim) = match constraint {
        Constraint::Unconstrained => (second_diff(q), 2),
        Constraint::Increasing
        | Constraint::Decreasing
        | Constraint::IncreasingBy
        | Constraint::DecreasingBy => (first_diff_from(q, 1), 2),
        Constraint::Convex | Constraint::Concave => {
            if q < 4 {
                return Err(Error::BasisTooSmall {
                    q,
                    min: 4,
                    context: "convexity penalty".into(),
                });
            }
            (first_diff_from(q, 2), 3)
        }
    };
    Ok(PenaltyBlock {
        matrix: d.transpose() * &d,
        offset: 0,
        term_id: 0,
        nullspace_dim: null_dim,
    })
}
