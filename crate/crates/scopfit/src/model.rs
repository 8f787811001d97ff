//! Fitted-model container: orchestration of formula -> assembly ->
//! smoothing-parameter selection (optionally with AR(1) whitening),
//! JSON persistence, prediction with standard errors, and per-term
//! summaries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::ar1::{self, RhoSpec};
use crate::assembly::{self, BuiltTerm};
use crate::data::DataTable;
use crate::family::Family;
use crate::fit;
use crate::formula::{self, ModelSpec};
use crate::smoothsel::{self, Criterion};
use crate::splines::PenaltyBlock;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// AR(1) request attached to a fit.
#[derive(Debug, Clone)]
pub struct Ar1Options {
    pub rho: RhoSpec,
    /// Column of block-start flags; all-false (single block) if absent.
    pub start_col: Option<String>,
}

/// Options controlling a fit.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub family: Family,
    /// None selects GCV/UBRE automatically from the family.
    pub criterion: Option<Criterion>,
    pub gamma: f64,
    pub ar1: Option<Ar1Options>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            family: Family::gaussian(),
            criterion: None,
            gamma: 1.0,
            ar1: None,
        }
    }
}

/// A fitted model with everything needed for prediction and reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub format_version: u32,
    /// Canonical formula text; parsing it back gives the model spec.
    pub formula: String,
    pub family: Family,
    pub criterion: Criterion,
    pub gamma: f64,
    pub n: usize,
    pub beta: Vec<f64>,
    pub beta_tilde: Vec<f64>,
    pub lambda: Vec<f64>,
    pub exp_mask: Vec<bool>,
    pub terms: Vec<BuiltTerm>,
    pub penalties: Vec<PenaltyBlock>,
    /// Covariance of the working coefficients, phi * Hp^{-1}.
    pub cov_beta: DMatrix<f64>,
    /// Per-coefficient effective degrees of freedom diag(Hp^{-1} Hu).
    pub edf_by_coef: Vec<f64>,
    pub edf: f64,
    pub scale: f64,
    pub deviance: f64,
    pub score: f64,
    pub outer_iterations: usize,
    /// Fitted means on the original (unwhitened) data.
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rho: Option<f64>,
    pub aic: Option<f64>,
    pub aic_trace: Option<Vec<(f64, f64)>>,
    pub whiten_passes: Option<usize>,
    /// Block-start flags used for whitening, kept for residual
    /// diagnostics.
    pub ar_starts: Option<Vec<bool>>,
    pub warnings: Vec<String>,
    pub dropped_rows: usize,
}

/// Fit a model described by a formula to a data table.
pub fn fit(formula_text: &str, data: &DataTable, opts: &FitOptions) -> Result<FittedModel> {
    let spec = formula::parse(formula_text)?;
    let spec = formula::validate(&spec, &data.schema())?;
    fit_spec(&spec, data, opts)
}

pub fn fit_spec(spec: &ModelSpec, data: &DataTable, opts: &FitOptions) -> Result<FittedModel> {
    let am = assembly::build(spec, data)?;
    let y = data.numeric(&spec.response)?.to_vec();
    let criterion = opts
        .criterion
        .unwrap_or_else(|| Criterion::auto(&opts.family));

    let mut ar_starts: Option<Vec<bool>> = None;
    let (sel, ar1_info) = match &opts.ar1 {
        None => {
            let sel = smoothsel::select(
                &am.x,
                &am.exp_mask,
                &am.penalties,
                &y,
                &opts.family,
                None,
                criterion,
                opts.gamma,
            )?;
            (sel, None)
        }
        Some(aropt) => {
            let starts = match &aropt.start_col {
                Some(col) => data.boolean(col)?,
                None => {
                    let mut s = vec![false; am.n];
                    if !s.is_empty() {
                        s[0] = true;
                    }
                    s
                }
            };
            let r = ar1::fit_ar1(
                &am.x,
                &am.exp_mask,
                &am.penalties,
                &y,
                &starts,
                &opts.family,
                criterion,
                opts.gamma,
                aropt.rho,
            )?;
            let info = (r.rho, r.aic, r.aic_trace.clone(), r.whiten_passes);
            ar_starts = Some(starts);
            (r.select, Some(info))
        }
    };

    let f = &sel.fit;
    let p = am.ncoef();
    // covariance and per-coefficient edf from the final curvature
    let hp_inv = fit::solve_spd(&f.hp, &DMatrix::identity(p, p))?;
    let cov_beta = &hp_inv * sel.scale;
    let hp_inv_hu = &hp_inv * &f.hu;
    let edf_by_coef: Vec<f64> = (0..p).map(|j| hp_inv_hu[(j, j)]).collect();

    // fitted values on the original data (identical to f.mu unless AR(1)
    // whitening was applied)
    let bt = DVector::from_column_slice(&f.beta_tilde.as_slice().to_vec());
    let eta = &am.x * &bt;
    let fitted: Vec<f64> = (0..am.n).map(|i| opts.family.mean(eta[i])).collect();
    let residuals: Vec<f64> = (0..am.n).map(|i| y[i] - fitted[i]).collect();

    Ok(FittedModel {
        format_version: FORMAT_VERSION,
        formula: spec.print(),
        family: opts.family,
        criterion: sel.criterion,
        gamma: opts.gamma,
        n: am.n,
        beta: f.beta.as_slice().to_vec(),
        beta_tilde: f.beta_tilde.as_slice().to_vec(),
        lambda: sel.lambda.clone(),
        exp_mask: am.exp_mask.clone(),
        terms: am.terms.clone(),
        penalties: am.penalties.clone(),
        cov_beta,
        edf_by_coef,
        edf: f.edf,
        scale: sel.scale,
        deviance: f.deviance,
        score: sel.score,
        outer_iterations: sel.outer_iterations,
        fitted,
        residuals,
        rho: ar1_info.as_ref().map(|i| i.0),
        aic: ar1_info.as_ref().map(|i| i.1),
        aic_trace: ar1_info.as_ref().map(|i| i.2.clone()),
        whiten_passes: ar1_info.as_ref().map(|i| i.3),
        ar_starts,
        warnings: am.warnings.clone(),
        dropped_rows: data.dropped_rows,
    })
}

/// Prediction scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictScale {
    Link,
    Response,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub fit: Vec<f64>,
    pub se: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TermPrediction {
    pub label: String,
    pub fit: Vec<f64>,
    pub se: Option<Vec<f64>>,
}

impl FittedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)
            .map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let m: FittedModel = serde_json::from_reader(std::io::BufReader::new(f))
            .map_err(|e| Error::ModelFile(e.to_string()))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::ModelFile(format!(
                "unsupported model format version {} (expected {})",
                m.format_version, FORMAT_VERSION
            )));
        }
        Ok(m)
    }

    pub fn ncoef(&self) -> usize {
        self.beta.len()
    }

    fn beta_tilde_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta_tilde)
    }

    /// Derivative of beta_tilde with respect to beta (diagonal).
    fn jacobian_diag(&self) -> DVector<f64> {
        DVector::from_fn(self.ncoef(), |j, _| {
            if self.exp_mask[j] {
                self.beta_tilde[j]
            } else {
                1.0
            }
        })
    }

    /// Full model matrix at new data, built term by term.
    pub fn model_matrix(&self, data: &DataTable, extrapolate: bool) -> Result<DMatrix<f64>> {
        let n = data.n;
        let mut x = DMatrix::zeros(n, self.ncoef());
        for term in &self.terms {
            let m = term.matrix_at(data, extrapolate)?;
            for (c, j) in term.cols().enumerate() {
                x.set_column(j, &m.column(c));
            }
        }
        Ok(x)
    }

    /// Predict at new data with optional delta-method standard errors.
    pub fn predict(
        &self,
        data: &DataTable,
        scale: PredictScale,
        want_se: bool,
        extrapolate: bool,
    ) -> Result<Prediction> {
        let x = self.model_matrix(data, extrapolate)?;
        let eta = &x * self.beta_tilde_vec();
        let se = if want_se {
            Some(self.se_of(&x, &eta, scale))
        } else {
            None
        };
        let fit = match scale {
            PredictScale::Link => eta.as_slice().to_vec(),
            PredictScale::Response => eta.iter().map(|&e| self.family.mean(e)).collect(),
        };
        Ok(Prediction { fit, se })
    }

    fn se_of(&self, x: &DMatrix<f64>, eta: &DVector<f64>, scale: PredictScale) -> Vec<f64> {
        // var(eta_i) = x_i' J V J x_i with J the diagonal coefficient map
        let jd = self.jacobian_diag();
        let mut xj = x.clone();
        for j in 0..xj.ncols() {
            for i in 0..xj.nrows() {
                xj[(i, j)] *= jd[j];
            }
        }
        let half = &xj * &self.cov_beta;
        (0..x.nrows())
            .map(|i| {
                let v: f64 = (0..x.ncols()).map(|j| half[(i, j)] * xj[(i, j)]).sum();
                let se_eta = v.max(0.0).sqrt();
                match scale {
                    PredictScale::Link => se_eta,
                    PredictScale::Response => {
                        // |dmu/deta| for the canonical links equals V(mu)
                        let mu = self.family.mean(eta[i]);
                        self.family.variance(mu) * se_eta
                    }
                }
            })
            .collect()
    }

    /// Per-term contributions to the linear predictor.
    pub fn predict_terms(
        &self,
        data: &DataTable,
        want_se: bool,
        extrapolate: bool,
    ) -> Result<Vec<TermPrediction>> {
        let jd = self.jacobian_diag();
        let bt = self.beta_tilde_vec();
        let mut out = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            let m = term.matrix_at(data, extrapolate)?;
            let tb = bt.rows(term.offset, term.width).into_owned();
            let fitv = (&m * tb).as_slice().to_vec();
            let se = if want_se {
                let mut mj = m.clone();
                for (c, j) in term.cols().enumerate() {
                    for i in 0..mj.nrows() {
                        mj[(i, c)] *= jd[j];
                    }
                }
                let vb = self
                    .cov_beta
                    .view((term.offset, term.offset), (term.width, term.width))
                    .into_owned();
                let half = &mj * vb;
                Some(
                    (0..m.nrows())
                        .map(|i| {
                            let v: f64 =
                                (0..term.width).map(|c| half[(i, c)] * mj[(i, c)]).sum();
                            v.max(0.0).sqrt()
                        })
                        .collect(),
                )
            } else {
                None
            };
            out.push(TermPrediction {
                label: term.label.clone(),
                fit: fitv,
                se,
            });
        }
        Ok(out)
    }

    /// Per-term effective degrees of freedom.
    pub fn term_edf(&self, term: &BuiltTerm) -> f64 {
        term.cols().map(|j| self.edf_by_coef[j]).sum()
    }

    /// Wald statistic and p-value for a term being zero everywhere.
    pub fn term_wald(&self, term: &BuiltTerm) -> Result<(f64, f64)> {
        let jd = self.jacobian_diag();
        let w = term.width;
        // test on the beta_tilde scale relative to a constant shift:
        // covariance of the term's beta_tilde block
        let mut vt = DMatrix::zeros(w, w);
        for (a, ja) in term.cols().enumerate() {
            for (b, jb) in term.cols().enumerate() {
                vt[(a, b)] = jd[ja] * self.cov_beta[(ja, jb)] * jd[jb];
            }
        }
        let bt = DVector::from_fn(w, |c, _| self.beta_tilde[term.offset + c]);
        // pseudo-inverse via eigendecomposition to tolerate rank deficiency
        let eig = vt.symmetric_eigen();
        let emax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let tol = emax.max(1e-300) * 1e-10;
        let mut stat = 0.0;
        let mut rank = 0usize;
        for (k, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev > tol {
                let proj = eig.eigenvectors.column(k).dot(&bt);
                stat += proj * proj / ev;
                rank += 1;
            }
        }
        let df = self.term_edf(term).max(1e-8).min(rank as f64);
        let p = chi_sq_tail(stat, df);
        Ok((stat, p))
    }
}

/// Upper tail probability of a chi-squared distribution with
/// (possibly fractional) degrees of freedom.
pub fn chi_sq_tail(x: f64, df: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Gamma};
    if x <= 0.0 {
        return 1.0;
    }
    match Gamma::new(df / 2.0, 0.5) {
        Ok(g) => 1.0 - g.cdf(x),
        Err(_) => f64::NAN,
    }
}
