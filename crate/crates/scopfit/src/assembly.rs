//! Model assembly: build the combined model matrix X = [A : F : M], the
//! penalty list with global offsets, and the coefficient exponentiation
//! map; absorb identifiability constraints into the term bases.
//!
//! Every term is stored with enough metadata to rebuild its block of the
//! model matrix at new covariate values, which is what prediction and
//! plotting use.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Column, DataTable};
use crate::formula::{ModelSpec, TermKind, TermSpec};
use crate::splines::{self, Constraint, KnotVector, PenaltyBlock, beta_tilde_entry};
use crate::tensor::{self, BivariateDirection, TensorDesign, TiConstraint};
use crate::{Error, Result};

/// Serializable evaluator for one term's block of the model matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TermEval {
    Intercept,
    Linear {
        col: String,
    },
    Factor {
        col: String,
        /// Non-reference levels, one dummy column each.
        levels: Vec<String>,
    },
    RandomEffect {
        col: String,
        levels: Vec<String>,
    },
    Smooth {
        cov: String,
        kv: KnotVector,
        /// q x w map composing the SCOP Sigma and/or centering basis.
        a: DMatrix<f64>,
    },
    Tensor {
        cov1: String,
        cov2: String,
        design: TensorDesign,
        /// Column means subtracted at assembly.
        center: Vec<f64>,
    },
    Functional {
        /// Matrix column of observation points t_ij.
        tcol: String,
        /// Matrix column of curve values z_ij.
        zcol: String,
        kv: KnotVector,
        a: DMatrix<f64>,
    },
    VaryingCoefficient {
        cov: String,
        by: String,
        kv: KnotVector,
        a: DMatrix<f64>,
    },
}

/// One assembled model term: column range, evaluator and bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuiltTerm {
    pub label: String,
    pub offset: usize,
    pub width: usize,
    pub eval: TermEval,
    /// Exponentiation mask over this term's working coefficients.
    pub exp_mask: Vec<bool>,
    /// Raw columns kept after the rank check (parametric block only).
    pub kept: Vec<usize>,
    /// Joint null-space dimension of this term's penalties; equals the
    /// width for unpenalized terms.
    pub nullspace_dim: usize,
    pub penalized: bool,
}

impl BuiltTerm {
    pub fn cols(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.width
    }
}

/// The assembled model: design matrix, penalties, coefficient map.
#[derive(Debug, Clone)]
pub struct AssembledModel {
    pub x: DMatrix<f64>,
    pub penalties: Vec<PenaltyBlock>,
    /// Global exponentiation mask, one entry per column of `x`.
    pub exp_mask: Vec<bool>,
    pub terms: Vec<BuiltTerm>,
    pub n: usize,
    pub warnings: Vec<String>,
}

impl AssembledModel {
    pub fn ncoef(&self) -> usize {
        self.x.ncols()
    }

    /// beta -> beta_tilde through the global exponentiation mask.
    pub fn beta_tilde(&self, beta: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(beta.len(), |j, _| {
            beta_tilde_entry(beta[j], self.exp_mask[j]).0
        })
    }

    /// S_lambda = sum_k lambda_k S^k embedded at the global offsets.
    pub fn penalty_total(&self, lambda: &[f64]) -> DMatrix<f64> {
        let p = self.ncoef();
        let mut s = DMatrix::zeros(p, p);
        for (pen, &lam) in self.penalties.iter().zip(lambda.iter()) {
            let w = pen.matrix.nrows();
            for i in 0..w {
                for j in 0..w {
                    s[(pen.offset + i, pen.offset + j)] += lam * pen.matrix[(i, j)];
                }
            }
        }
        s
    }

    /// Embed a single penalty at its global offset.
    pub fn penalty_embedded(&self, k: usize) -> DMatrix<f64> {
        let p = self.ncoef();
        let pen = &self.penalties[k];
        let mut s = DMatrix::zeros(p, p);
        let w = pen.matrix.nrows();
        for i in 0..w {
            for j in 0..w {
                s[(pen.offset + i, pen.offset + j)] = pen.matrix[(i, j)];
            }
        }
        s
    }
}

fn constraint_for(bs: Option<&str>, default: Constraint) -> Result<Constraint> {
    match bs {
        None => Ok(default),
        Some(code) => Constraint::from_code(code),
    }
}

/// Joint null-space dimension of a set of penalties on `w` coefficients.
fn joint_nullspace_dim(penalties: &[DMatrix<f64>], w: usize) -> usize {
    if penalties.is_empty() {
        return w;
    }
    let mut total = DMatrix::zeros(w, w);
    for p in penalties {
        total += p;
    }
    let eig = total.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = max.max(1.0) * 1e-10;
    eig.eigenvalues.iter().filter(|&&e| e.abs() < tol).count()
}

/// Quadrature model matrix for a linear functional term:
/// Q_ij = sum_l w_il b_j(t_il) z_il with per-row trapezoid weights.
pub fn functional_term(
    t_obs: &DMatrix<f64>,
    z: &DMatrix<f64>,
    kv: &KnotVector,
) -> Result<DMatrix<f64>> {
    if t_obs.shape() != z.shape() {
        return Err(Error::MatrixShapeMismatch {
            a: "t".into(),
            a_dims: format!("{:?}", t_obs.shape()),
            b: "z".into(),
            b_dims: format!("{:?}", z.shape()),
        });
    }
    let (n, j) = t_obs.shape();
    if j < 2 {
        return Err(Error::ShortFunctionalRow { row: 0 });
    }
    let mut q = DMatrix::zeros(n, kv.q);
    for i in 0..n {
        let row: Vec<f64> = (0..j).map(|l| t_obs[(i, l)]).collect();
        if row.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Invalid(format!(
                "functional term row {i}: observation points must be nondecreasing"
            )));
        }
        let basis = splines::eval_basis(&row, kv)?;
        for l in 0..j {
            let w = match l {
                0 => (row[1] - row[0]) / 2.0,
                l if l == j - 1 => (row[j - 1] - row[j - 2]) / 2.0,
                _ => (row[l + 1] - row[l - 1]) / 2.0,
            };
            let wz = w * z[(i, l)];
            for b in 0..kv.q {
                q[(i, b)] += wz * basis[(l, b)];
            }
        }
    }
    Ok(q)
}

/// Indicator matrix for a factor column: one 0/1 column per level.
pub fn random_effect_matrix(values: &[String], levels: &[String]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(values.len(), levels.len());
    for (i, v) in values.iter().enumerate() {
        let j = levels
            .iter()
            .position(|l| l == v)
            .ok_or_else(|| Error::Invalid(format!("unknown factor level `{v}`")))?;
        m[(i, j)] = 1.0;
    }
    Ok(m)
}

/// Row-wise scaling of a smooth's evaluation columns by the `by` values.
pub fn varying_coefficient_term(smooth: &DMatrix<f64>, z: &[f64]) -> DMatrix<f64> {
    let mut m = smooth.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] *= z[i];
        }
    }
    m
}

struct Block {
    label: String,
    matrix: DMatrix<f64>,
    eval: TermEval,
    exp_mask: Vec<bool>,
    penalties: Vec<DMatrix<f64>>,
    penalized: bool,
}

fn smooth_block(term: &TermSpec, data: &DataTable) -> Result<Block> {
    let cov = &term.covariates[0];
    let x = data.numeric(cov)?;
    let q = term.k.unwrap();
    let c = constraint_for(term.bs.as_deref(), Constraint::Unconstrained)?;
    let kv = splines::place_knots(x, q, 4)?;
    let basis = splines::eval_basis(x, &kv)?;
    let (a, exp_mask, pen) = match c {
        Constraint::Unconstrained => {
            let z = tensor::sum_to_zero_basis(&basis.row_sum().transpose());
            let d = splines::second_diff(q);
            let s = z.transpose() * d.transpose() * &d * &z;
            (z, vec![false; q - 1], s)
        }
        _ => {
            let sd = splines::scop_sigma(c, q)?;
            // identifiability absorption: drop the constant column of Sigma,
            // the intercept carries the level
            let a = sd.sigma.columns(1, q - 1).into_owned();
            let mask = sd.exp_mask[1..].to_vec();
            let s_full = splines::penalty(q, c)?.matrix;
            let s = s_full.view((1, 1), (q - 1, q - 1)).into_owned();
            (a, mask, s)
        }
    };
    let matrix = &basis * &a;
    Ok(Block {
        label: term.label(),
        matrix,
        eval: TermEval::Smooth {
            cov: cov.clone(),
            kv,
            a,
        },
        exp_mask,
        penalties: vec![pen],
        penalized: true,
    })
}

fn tensor_block(term: &TermSpec, data: &DataTable) -> Result<Block> {
    let cov1 = &term.covariates[0];
    let cov2 = &term.covariates[1];
    let x1 = data.numeric(cov1)?;
    let x2 = data.numeric(cov2)?;
    let q = term.k.unwrap();
    let bs = term.bs.as_deref();
    let design = match bs {
        None | Some("ps") | Some("cr") => {
            tensor::ti_interaction(x1, x2, q, q, TiConstraint::None, 4)?
        }
        Some("tismi") => tensor::ti_interaction(x1, x2, q, q, TiConstraint::IncreasingFirst, 4)?,
        Some("tismd") => tensor::ti_interaction(x1, x2, q, q, TiConstraint::DecreasingFirst, 4)?,
        Some(code) => {
            let dir = BivariateDirection::from_code(code)?;
            tensor::double_monotone(x1, x2, q, q, dir, 4)?
        }
    };
    // assembly-level centering: subtract column means (constants move into
    // the intercept)
    let mut matrix = design.product.clone();
    let n = matrix.nrows();
    let center: Vec<f64> = (0..matrix.ncols())
        .map(|j| matrix.column(j).sum() / n as f64)
        .collect();
    for jcol in 0..matrix.ncols() {
        for i in 0..n {
            matrix[(i, jcol)] -= center[jcol];
        }
    }
    Ok(Block {
        label: term.label(),
        matrix,
        exp_mask: design.exp_mask.clone(),
        penalties: design.penalties.clone(),
        eval: TermEval::Tensor {
            cov1: cov1.clone(),
            cov2: cov2.clone(),
            design,
            center,
        },
        penalized: true,
    })
}

fn functional_block(term: &TermSpec, data: &DataTable) -> Result<Block> {
    let tcol = &term.covariates[0];
    let zcol = term.by.as_ref().unwrap();
    let t = data.matrix(tcol)?;
    let z = data.matrix(zcol)?;
    let q = term.k.unwrap();
    let c = constraint_for(term.bs.as_deref(), Constraint::Unconstrained)?;
    let flat: Vec<f64> = t.iter().cloned().collect();
    let kv = splines::place_knots(&flat, q, 4)?;
    let quad = functional_term(t, z, &kv)?;
    // by-variable terms are fully identifiable: no absorption
    let (a, exp_mask, pen) = scop_full_map(c, q)?;
    let matrix = &quad * &a;
    Ok(Block {
        label: term.label(),
        matrix,
        eval: TermEval::Functional {
            tcol: tcol.clone(),
            zcol: zcol.clone(),
            kv,
            a,
        },
        exp_mask,
        penalties: vec![pen],
        penalized: true,
    })
}

/// Full (unabsorbed) Sigma map, mask and penalty for by-variable terms.
fn scop_full_map(c: Constraint, q: usize) -> Result<(DMatrix<f64>, Vec<bool>, DMatrix<f64>)> {
    Ok(match c {
        Constraint::Unconstrained => {
            let d = splines::second_diff(q);
            (DMatrix::identity(q, q), vec![false; q], d.transpose() * d)
        }
        _ => {
            let sd = splines::scop_sigma(c, q)?;
            let pen = splines::penalty(q, c)?.matrix;
            (sd.sigma, sd.exp_mask, pen)
        }
    })
}

fn varying_block(term: &TermSpec, data: &DataTable) -> Result<Block> {
    let cov = &term.covariates[0];
    let by = term.by.as_ref().unwrap();
    let x = data.numeric(cov)?;
    let z = data.numeric(by)?;
    let q = term.k.unwrap();
    let c = constraint_for(term.bs.as_deref(), Constraint::Unconstrained)?;
    let kv = splines::place_knots(x, q, 4)?;
    let basis = splines::eval_basis(x, &kv)?;
    let (a, exp_mask, pen) = scop_full_map(c, q)?;
    let matrix = varying_coefficient_term(&(&basis * &a), z);
    Ok(Block {
        label: term.label(),
        matrix,
        eval: TermEval::VaryingCoefficient {
            cov: cov.clone(),
            by: by.clone(),
            kv,
            a,
        },
        exp_mask,
        penalties: vec![pen],
        penalized: true,
    })
}

fn random_effect_block(term: &TermSpec, data: &DataTable) -> Result<Block> {
    let col = &term.covariates[0];
    let (values, levels) = data.factor(col)?;
    if levels.len() < 2 {
        return Err(Error::SingleLevelFactor(col.clone()));
    }
    let matrix = random_effect_matrix(values, levels)?;
    let l = levels.len();
    Ok(Block {
        label: term.label(),
        matrix,
        eval: TermEval::RandomEffect {
            col: col.clone(),
            levels: levels.to_vec(),
        },
        exp_mask: vec![false; l],
        penalties: vec![DMatrix::identity(l, l)],
        penalized: true,
    })
}

fn parametric_block(term: &TermSpec, data: &DataTable) -> Result<Block> {
    let col = &term.covariates[0];
    match data.column(col)? {
        Column::Numeric(v) => Ok(Block {
            label: term.label(),
            matrix: DMatrix::from_column_slice(v.len(), 1, v),
            eval: TermEval::Linear { col: col.clone() },
            exp_mask: vec![false],
            penalties: vec![],
            penalized: false,
        }),
        Column::Factor { values, levels } => {
            if levels.len() < 2 {
                return Err(Error::SingleLevelFactor(col.clone()));
            }
            let dummy_levels: Vec<String> = levels[1..].to_vec();
            let mut m = DMatrix::zeros(values.len(), dummy_levels.len());
            for (i, v) in values.iter().enumerate() {
                if let Some(j) = dummy_levels.iter().position(|l| l == v) {
                    m[(i, j)] = 1.0;
                }
            }
            let w = dummy_levels.len();
            Ok(Block {
                label: term.label(),
                matrix: m,
                eval: TermEval::Factor {
                    col: col.clone(),
                    levels: dummy_levels,
                },
                exp_mask: vec![false; w],
                penalties: vec![],
                penalized: false,
            })
        }
        Column::Matrix(_) => Err(Error::ColumnType {
            col: col.clone(),
            expected: "scalar".into(),
            found: "matrix".into(),
        }),
    }
}

/// Build the assembled model from a validated spec and data table.
pub fn build(spec: &ModelSpec, data: &DataTable) -> Result<AssembledModel> {
    let n = data.n;
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let mut blocks: Vec<Block> = vec![Block {
        label: "(Intercept)".into(),
        matrix: DMatrix::from_element(n, 1, 1.0),
        eval: TermEval::Intercept,
        exp_mask: vec![false],
        penalties: vec![],
        penalized: false,
    }];
    for term in &spec.terms {
        if term.kind == TermKind::Parametric && term.covariates[0] == "1" {
            continue; // explicit intercept marker
        }
        let block = match term.kind {
            TermKind::Parametric => parametric_block(term, data)?,
            TermKind::Smooth => smooth_block(term, data)?,
            TermKind::Tensor => tensor_block(term, data)?,
            TermKind::RandomEffect => random_effect_block(term, data)?,
            TermKind::Functional => functional_block(term, data)?,
            TermKind::VaryingCoefficient => varying_block(term, data)?,
        };
        blocks.push(block);
    }

    // pivoted drop of linearly dependent parametric columns
    let mut warnings = Vec::new();
    let mut accepted: Vec<DVector<f64>> = Vec::new();
    let mut kept_per_block: Vec<Vec<usize>> = Vec::new();
    for block in &blocks {
        let mut kept = Vec::new();
        if block.penalized {
            kept = (0..block.matrix.ncols()).collect();
        } else {
            for j in 0..block.matrix.ncols() {
                let col = block.matrix.column(j).into_owned();
                let mut resid = col.clone();
                for a in &accepted {
                    let c = a.dot(&resid) / a.dot(a);
                    resid -= a * c;
                }
                if resid.norm() < 1e-10 * col.norm().max(1.0) {
                    warnings.push(format!(
                        "parametric block `{}`: dropped linearly dependent column {j}",
                        block.label
                    ));
                } else {
                    let r = resid.norm();
                    accepted.push(resid / r);
                    kept.push(j);
                }
            }
        }
        kept_per_block.push(kept);
    }

    let p: usize = kept_per_block.iter().map(|k| k.len()).sum();
    let mut x = DMatrix::zeros(n, p);
    let mut exp_mask = Vec::with_capacity(p);
    let mut terms = Vec::new();
    let mut penalties = Vec::new();
    let mut offset = 0usize;
    for (term_id, (block, kept)) in blocks.into_iter().zip(kept_per_block).enumerate() {
        let width = kept.len();
        for (dst, &src) in kept.iter().enumerate() {
            x.set_column(offset + dst, &block.matrix.column(src));
            exp_mask.push(block.exp_mask[src]);
        }
        let nullspace_dim = if block.penalized {
            joint_nullspace_dim(&block.penalties, width)
        } else {
            width
        };
        for pen in &block.penalties {
            let mut pb = PenaltyBlock {
                matrix: pen.clone(),
                offset,
                term_id,
                nullspace_dim: 0,
            };
            pb.nullspace_dim = {
                let eig = pen.clone().symmetric_eigen();
                let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
                let tol = max.max(1.0) * 1e-10;
                eig.eigenvalues.iter().filter(|&&e| e.abs() < tol).count()
            };
            penalties.push(pb);
        }
        terms.push(BuiltTerm {
            label: block.label,
            offset,
            width,
            eval: block.eval,
            exp_mask: block.exp_mask,
            kept,
            nullspace_dim,
            penalized: block.penalized,
        });
        offset += width;
    }

    Ok(AssembledModel {
        x,
        penalties,
        exp_mask,
        terms,
        n,
        warnings,
    })
}

fn clamp_to(kv: &KnotVector, x: &[f64], extrapolate: bool) -> Result<Vec<f64>> {
    let (lo, hi) = kv.range();
    let mut out = Vec::with_capacity(x.len());
    for &v in x {
        if v < lo - 1e-12 || v > hi + 1e-12 {
            if !extrapolate {
                return Err(Error::OutOfRange { x: v, lo, hi });
            }
            out.push(v.clamp(lo, hi));
        } else {
            out.push(v.clamp(lo, hi));
        }
    }
    Ok(out)
}

impl BuiltTerm {
    /// Rebuild this term's block of the model matrix at new data.
    pub fn matrix_at(&self, data: &DataTable, extrapolate: bool) -> Result<DMatrix<f64>> {
        let n = data.n;
        let raw = match &self.eval {
            TermEval::Intercept => DMatrix::from_element(n, 1, 1.0),
            TermEval::Linear { col } => {
                let v = data.numeric(col)?;
                DMatrix::from_column_slice(v.len(), 1, v)
            }
            TermEval::Factor { col, levels } => {
                let (values, _) = data.factor(col)?;
                let mut m = DMatrix::zeros(n, levels.len());
                for (i, v) in values.iter().enumerate() {
                    if let Some(j) = levels.iter().position(|l| l == v) {
                        m[(i, j)] = 1.0;
                    }
                }
                m
            }
            TermEval::RandomEffect { col, levels } => {
                let (values, _) = data.factor(col)?;
                random_effect_matrix(values, levels)?
            }
            TermEval::Smooth { cov, kv, a } => {
                let x = clamp_to(kv, data.numeric(cov)?, extrapolate)?;
                splines::eval_basis(&x, kv)? * a
            }
            TermEval::Tensor {
                cov1,
                cov2,
                design,
                center,
            } => {
                let x1 = clamp_to(&design.kv1, data.numeric(cov1)?, extrapolate)?;
                let x2 = clamp_to(&design.kv2, data.numeric(cov2)?, extrapolate)?;
                let mut m = design.matrix_at(&x1, &x2)?;
                for j in 0..m.ncols() {
                    for i in 0..n {
                        m[(i, j)] -= center[j];
                    }
                }
                m
            }
            TermEval::Functional { tcol, zcol, kv, a } => {
                let t = data.matrix(tcol)?;
                let z = data.matrix(zcol)?;
                functional_term(t, z, kv)? * a
            }
            TermEval::VaryingCoefficient { cov, by, kv, a } => {
                let x = clamp_to(kv, data.numeric(cov)?, extrapolate)?;
                let z = data.numeric(by)?;
                varying_coefficient_term(&(splines::eval_basis(&x, kv)? * a), z)
            }
        };
        if self.kept.len() == raw.ncols() {
            Ok(raw)
        } else {
            let mut m = DMatrix::zeros(n, self.kept.len());
            for (dst, &src) in self.kept.iter().enumerate() {
                m.set_column(dst, &raw.column(src));
            }
            Ok(m)
        }
    }
}
