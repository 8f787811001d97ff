//! Smoothing-parameter selection by an extended Fellner-Schall update
//! minimizing GCV (unknown scale) or UBRE (known scale).
//!
//! Each smoothing parameter is updated on the log scale,
//!
//!   rho*_j = rho_j + log( target_j / dD_drho_j ),
//!
//! where the target is the value the deviance derivative must take at a
//! stationary point of the criterion:
//!
//!   GCV:  target_j = -2 gamma D / (n - gamma tau) * dtau_drho_j
//!   UBRE: target_j = -2 gamma phi * dtau_drho_j
//!
//! The implicit derivatives come from differentiating the penalized
//! score equations at the inner optimum:
//!
//!   dbeta_drho_j = -Hp^{-1} (lambda_j S_j beta)
//!   dD_drho_j    = (dD/dbeta)' dbeta_drho_j
//!   dtau_drho_j  = -lambda_j tr(Hp^{-1} S_j Hp^{-1} Hu)
//!
//! When the log argument is not positive the coordinate falls back to a
//! golden-section line search on the criterion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::family::Family;
use crate::fit::{self, NewtonFit};
use crate::splines::PenaltyBlock;
use crate::{Error, Result};

pub const MAX_OUTER_ITER: usize = 50;
pub const OUTER_TOL: f64 = 1e-3;
/// Clamp on a single log-smoothing-parameter step.
pub const MAX_RHO_STEP: f64 = 5.0;
/// Bound on each log smoothing parameter. Beyond exp(±23) ~ 1e10 a
/// penalty is numerically infinite (or zero) relative to the data term
/// and larger values only degrade the Hessian's conditioning.
pub const MAX_ABS_RHO: f64 = 23.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gcv,
    Ubre,
}

impl Criterion {
    /// Default criterion for a family: UBRE when the scale is known.
    pub fn auto(family: &Family) -> Self {
        if family.scale_known() {
            Criterion::Ubre
        } else {
            Criterion::Gcv
        }
    }
}

/// Generalized cross validation score n D / (n - gamma tau)^2.
pub fn gcv(n: usize, deviance: f64, edf: f64, gamma: f64) -> f64 {
    let nf = n as f64;
    let denom = nf - gamma * edf;
    nf * deviance / (denom * denom)
}

/// UBRE / scaled AIC score D/n + 2 gamma phi tau / n - phi.
pub fn ubre(n: usize, deviance: f64, edf: f64, gamma: f64, phi: f64) -> f64 {
    let nf = n as f64;
    deviance / nf + 2.0 * gamma * phi * edf / nf - phi
}

fn score(
    criterion: Criterion,
    n: usize,
    deviance: f64,
    edf: f64,
    gamma: f64,
    phi: f64,
) -> f64 {
    match criterion {
        Criterion::Gcv => gcv(n, deviance, edf, gamma),
        Criterion::Ubre => ubre(n, deviance, edf, gamma, phi),
    }
}

/// Embed a penalty block into the full coefficient space.
pub fn embed(pen: &PenaltyBlock, p: usize) -> DMatrix<f64> {
    let w = pen.matrix.nrows();
    let mut s = DMatrix::zeros(p, p);
    for i in 0..w {
        for j in 0..w {
            s[(pen.offset + i, pen.offset + j)] = pen.matrix[(i, j)];
        }
    }
    s
}

/// S_lambda from per-block smoothing parameters.
pub fn penalty_total(penalties: &[PenaltyBlock], lambda: &[f64], p: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(p, p);
    for (pen, &lam) in penalties.iter().zip(lambda) {
        let w = pen.matrix.nrows();
        for i in 0..w {
            for j in 0..w {
                s[(pen.offset + i, pen.offset + j)] += lam * pen.matrix[(i, j)];
            }
        }
    }
    s
}

/// Implicit derivatives of the deviance and edf with respect to each
/// log smoothing parameter, at the inner optimum.
pub struct CriterionDerivs {
    pub d_dev: Vec<f64>,
    pub d_edf: Vec<f64>,
}

pub fn criterion_derivatives(
    x: &DMatrix<f64>,
    mask: &[bool],
    penalties: &[PenaltyBlock],
    lambda: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    fit_res: &NewtonFit,
) -> Result<CriterionDerivs> {
    let p = x.ncols();
    let n = y.len();
    // dD/dbeta = -2 E X'v
    let (_, m) = fit::coef_map(&fit_res.beta, mask);
    let v = DVector::from_fn(n, |i, _| {
        let w = weights.map_or(1.0, |w| w[i]);
        w * (y[i] - fit_res.mu[i])
    });
    let xtv = x.transpose() * v;
    let ddev_dbeta = DVector::from_fn(p, |j, _| -2.0 * m[j] * xtv[j]);

    let hp_inv_hu = fit::solve_spd(&fit_res.hp, &fit_res.hu)?;
    let mut d_dev = Vec::with_capacity(penalties.len());
    let mut d_edf = Vec::with_capacity(penalties.len());
    for (k, pen) in penalties.iter().enumerate() {
        let sj = embed(pen, p);
        let sjb = &sj * &fit_res.beta;
        let rhs = DMatrix::from_column_slice(p, 1, (lambda[k] * sjb).as_slice());
        let dbeta = -fit::solve_spd(&fit_res.hp, &rhs)?;
        d_dev.push(ddev_dbeta.dot(&DVector::from_column_slice(dbeta.column(0).as_slice())));
        // dtau/drho_j = -lambda_j tr(Hp^{-1} Sj Hp^{-1} Hu)
        let hp_inv_sj = fit::solve_spd(&fit_res.hp, &sj)?;
        let prod = &hp_inv_sj * &hp_inv_hu;
        let tr: f64 = (0..p).map(|i| prod[(i, i)]).sum();
        d_edf.push(-lambda[k] * tr);
    }
    Ok(CriterionDerivs { d_dev, d_edf })
}

/// Selection outcome: smoothing parameters, the final fit and score.
#[derive(Debug, Clone)]
pub struct SelectResult {
    pub lambda: Vec<f64>,
    pub fit: NewtonFit,
    pub criterion: Criterion,
    pub score: f64,
    pub scale: f64,
    pub outer_iterations: usize,
    pub converged: bool,
}

struct Objective<'a> {
    x: &'a DMatrix<f64>,
    mask: &'a [bool],
    penalties: &'a [PenaltyBlock],
    y: &'a [f64],
    family: &'a Family,
    weights: Option<&'a [f64]>,
    criterion: Criterion,
    gamma: f64,
}

impl Objective<'_> {
    fn fit_at(&self, lambda: &[f64], start: Option<&DVector<f64>>) -> Result<(NewtonFit, f64)> {
        let p = self.x.ncols();
        let s = penalty_total(self.penalties, lambda, p);
        let f = fit::newton_fit(self.x, self.mask, &s, self.y, self.family, self.weights, start)?;
        let phi = self.phi(&f)?;
        let sc = score(
            self.criterion,
            self.y.len(),
            f.deviance,
            f.edf,
            self.gamma,
            phi,
        );
        Ok((f, sc))
    }

    fn phi(&self, f: &NewtonFit) -> Result<f64> {
        if self.family.scale_known() {
            Ok(1.0)
        } else {
            fit::scale_estimate(self.family, self.y, f.mu.as_slice(), self.weights, f.edf)
        }
    }
}

/// Golden-section minimization of the criterion in a single log
/// smoothing parameter, used when the multiplicative update is
/// undefined for that coordinate.
fn golden_section(
    obj: &Objective<'_>,
    lambda: &[f64],
    j: usize,
    rho_lo: f64,
    rho_hi: f64,
    start: &DVector<f64>,
) -> Result<f64> {
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let eval = |rho: f64| -> Result<f64> {
        let mut lam = lambda.to_vec();
        lam[j] = rho.exp();
        Ok(obj.fit_at(&lam, Some(start))?.1)
    };
    let mut a = rho_lo;
    let mut b = rho_hi;
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    for _ in 0..25 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = eval(d)?;
        }
        if (b - a).abs() < 1e-3 {
            break;
        }
    }
    Ok((a + b) / 2.0)
}

/// Select smoothing parameters by the extended update, starting from
/// lambda = 1 for every penalty.
#[allow(clippy::too_many_arguments)]
pub fn select(
    x: &DMatrix<f64>,
    mask: &[bool],
    penalties: &[PenaltyBlock],
    y: &[f64],
    family: &Family,
    weights: Option<&[f64]>,
    criterion: Criterion,
    gamma: f64,
) -> Result<SelectResult> {
    let nk = penalties.len();
    let n = y.len();
    if nk == 0 {
        // no penalties: single unpenalized fit
        let obj = Objective {
            x,
            mask,
            penalties,
            y,
            family,
            weights,
            criterion,
            gamma,
        };
        let (f, sc) = obj.fit_at(&[], None)?;
        let scale = obj.phi(&f)?;
        return Ok(SelectResult {
            lambda: vec![],
            fit: f,
            criterion,
            score: sc,
            scale,
            outer_iterations: 0,
            converged: true,
        });
    }

    let obj = Objective {
        x,
        mask,
        penalties,
        y,
        family,
        weights,
        criterion,
        gamma,
    };
    let mut rho = vec![0.0f64; nk];
    let lambda_of = |rho: &[f64]| -> Vec<f64> { rho.iter().map(|r| r.exp()).collect() };
    let (mut cur_fit, mut cur_score) = obj.fit_at(&lambda_of(&rho), None)?;
    let mut converged = false;
    let mut outer = 0;

    for iter in 0..MAX_OUTER_ITER {
        outer = iter + 1;
        let lambda = lambda_of(&rho);
        let derivs =
            criterion_derivatives(x, mask, penalties, &lambda, y, weights, &cur_fit)?;
        let phi = obj.phi(&cur_fit)?;
        let nf = n as f64;

        let mut step = vec![0.0f64; nk];
        let mut fallback: Vec<usize> = Vec::new();
        for j in 0..nk {
            let target = match criterion {
                Criterion::Gcv => {
                    -2.0 * gamma * cur_fit.deviance / (nf - gamma * cur_fit.edf) * derivs.d_edf[j]
                }
                Criterion::Ubre => -2.0 * gamma * phi * derivs.d_edf[j],
            };
            let arg = target / derivs.d_dev[j];
            if arg.is_finite() && arg > 0.0 {
                step[j] = arg.ln().clamp(-MAX_RHO_STEP, MAX_RHO_STEP);
            } else {
                fallback.push(j);
            }
        }
        for &j in &fallback {
            let new_rho = golden_section(
                &obj,
                &lambda,
                j,
                (rho[j] - MAX_RHO_STEP).max(-MAX_ABS_RHO),
                (rho[j] + MAX_RHO_STEP).min(MAX_ABS_RHO),
                &cur_fit.beta,
            )?;
            step[j] = new_rho - rho[j];
        }
        // keep every log smoothing parameter inside its bound; a term
        // pinned at the bound contributes a zero step
        for j in 0..nk {
            step[j] = (rho[j] + step[j]).clamp(-MAX_ABS_RHO, MAX_ABS_RHO) - rho[j];
        }

        let max_step = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if max_step < OUTER_TOL {
            converged = true;
            break;
        }

        // take the step, halving it while it worsens the criterion
        let mut scale_factor = 1.0f64;
        let mut accepted = false;
        for _ in 0..6 {
            let cand: Vec<f64> = rho
                .iter()
                .zip(&step)
                .map(|(r, s)| r + scale_factor * s)
                .collect();
            let (f, sc) = obj.fit_at(&lambda_of(&cand), Some(&cur_fit.beta))?;
            if sc <= cur_score + 1e-12 {
                rho = cand;
                cur_fit = f;
                cur_score = sc;
                accepted = true;
                break;
            }
            scale_factor /= 2.0;
        }
        if !accepted {
            // no improving step: treat as converged at the current point
            converged = max_step < OUTER_TOL * 10.0 || true;
            break;
        }
    }

    let scale = obj.phi(&cur_fit)?;
    if !cur_fit.converged && cur_fit.grad_norm > 1e-3 * (1.0 + cur_fit.objective.abs()) {
        return Err(Error::NonConvergence {
            iterations: cur_fit.iterations,
            grad_norm: cur_fit.grad_norm,
        });
    }
    Ok(SelectResult {
        lambda: lambda_of(&rho),
        fit: cur_fit,
        criterion,
        score: cur_score,
        scale,
        outer_iterations: outer,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly;
    use crate::data::read_csv;
    use crate::formula;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn score_formula_values() {
        // hand-computed: n=10, D=5, tau=3, gamma=1 -> 10*5/49
        assert_abs_diff_eq!(gcv(10, 5.0, 3.0, 1.0), 50.0 / 49.0, epsilon = 1e-14);
        // ubre: 5/10 + 2*1*1*3/10 - 1 = 0.1
        assert_abs_diff_eq!(ubre(10, 5.0, 3.0, 1.0, 1.0), 0.1, epsilon = 1e-14);
        // gamma inflation raises the effective df cost
        assert!(gcv(10, 5.0, 3.0, 1.4) > gcv(10, 5.0, 3.0, 1.0));
    }

    fn smooth_problem(
        seed: u64,
        n: usize,
        formula_text: &str,
    ) -> (assembly::AssembledModel, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut csv = String::from("y,x,z\n");
        for _ in 0..n {
            let x: f64 = rng.random_range(0.0..1.0);
            let z: f64 = rng.random_range(0.0..1.0);
            let f = (6.0 * x).sin() + 2.0 * z * z;
            let y = f + rng.random_range(-0.3..0.3);
            csv.push_str(&format!("{y},{x},{z}\n"));
        }
        let data = read_csv(csv.as_bytes()).unwrap();
        let spec = formula::validate(
            &formula::parse(formula_text).unwrap(),
            &data.schema(),
        )
        .unwrap();
        let am = assembly::build(&spec, &data).unwrap();
        let y = data.numeric("y").unwrap().to_vec();
        (am, y)
    }

    #[test]
    fn implicit_derivatives_match_refit_differences() {
        let (am, y) = smooth_problem(31, 120, "y ~ s(x, k=8)");
        let f = Family::gaussian();
        let lambda = vec![0.5];
        let s = penalty_total(&am.penalties, &lambda, am.ncoef());
        let base = fit::newton_fit(&am.x, &am.exp_mask, &s, &y, &f, None, None).unwrap();
        let derivs = criterion_derivatives(
            &am.x,
            &am.exp_mask,
            &am.penalties,
            &lambda,
            &y,
            None,
            &base,
        )
        .unwrap();
        // finite differences in rho = log lambda by refitting
        let h = 1e-4;
        let refit = |lam: f64| {
            let s = penalty_total(&am.penalties, &[lam], am.ncoef());
            fit::newton_fit(&am.x, &am.exp_mask, &s, &y, &f, None, Some(&base.beta)).unwrap()
        };
        let rho0 = lambda[0].ln();
        let fp = refit((rho0 + h).exp());
        let fm = refit((rho0 - h).exp());
        let fd_dev = (fp.deviance - fm.deviance) / (2.0 * h);
        let fd_edf = (fp.edf - fm.edf) / (2.0 * h);
        assert_abs_diff_eq!(derivs.d_dev[0], fd_dev, epsilon = 1e-3 * (1.0 + fd_dev.abs()));
        assert_abs_diff_eq!(derivs.d_edf[0], fd_edf, epsilon = 5e-3 * (1.0 + fd_edf.abs()));
    }

    #[test]
    fn selected_lambda_matches_grid_minimizer() {
        let (am, y) = smooth_problem(32, 150, "y ~ s(x, k=10)");
        let f = Family::gaussian();
        let sel = select(
            &am.x,
            &am.exp_mask,
            &am.penalties,
            &y,
            &f,
            None,
            Criterion::Gcv,
            1.0,
        )
        .unwrap();
        assert!(sel.converged);
        // dense grid oracle over log lambda
        let mut best = (f64::INFINITY, 0.0f64);
        let mut rho = -8.0f64;
        while rho <= 8.0 {
            let s = penalty_total(&am.penalties, &[rho.exp()], am.ncoef());
            let fitted = fit::newton_fit(&am.x, &am.exp_mask, &s, &y, &f, None, None).unwrap();
            let sc = gcv(y.len(), fitted.deviance, fitted.edf, 1.0);
            if sc < best.0 {
                best = (sc, rho);
            }
            rho += 0.05;
        }
        // scores must agree closely even if the argmin is flat
        assert!(
            sel.score <= best.0 * (1.0 + 1e-4),
            "efs score {} vs grid {}",
            sel.score,
            best.0
        );
        assert!(
            (sel.lambda[0].ln() - best.1).abs() < 0.5,
            "rho {} vs grid {}",
            sel.lambda[0].ln(),
            best.1
        );
    }

    #[test]
    fn stationarity_at_selected_lambda() {
        let (am, y) = smooth_problem(33, 120, "y ~ s(x, k=8)");
        let f = Family::gaussian();
        let sel = select(
            &am.x,
            &am.exp_mask,
            &am.penalties,
            &y,
            &f,
            None,
            Criterion::Gcv,
            1.0,
        )
        .unwrap();
        // numeric derivative of GCV at the selected rho is ~ 0
        let h = 1e-3;
        let rho = sel.lambda[0].ln();
        let eval = |r: f64| {
            let s = penalty_total(&am.penalties, &[r.exp()], am.ncoef());
            let fitted =
                fit::newton_fit(&am.x, &am.exp_mask, &s, &y, &f, None, Some(&sel.fit.beta))
                    .unwrap();
            gcv(y.len(), fitted.deviance, fitted.edf, 1.0)
        };
        let d = (eval(rho + h) - eval(rho - h)) / (2.0 * h);
        let scale = eval(rho).abs().max(1e-8);
        assert!(d.abs() < 1e-2 * scale, "dGCV/drho = {d}");
    }

    #[test]
    fn two_smooths_select_converges() {
        let (am, y) = smooth_problem(34, 200, "y ~ s(x, k=10) + s(z, k=10, bs=mpi)");
        let f = Family::gaussian();
        let sel = select(
            &am.x,
            &am.exp_mask,
            &am.penalties,
            &y,
            &f,
            None,
            Criterion::Gcv,
            1.0,
        )
        .unwrap();
        assert!(sel.converged, "outer {}", sel.outer_iterations);
        assert_eq!(sel.lambda.len(), 2);
        assert!(sel.lambda.iter().all(|&l| l > 0.0));
        // selected fit beats the lambda = 1 start
        let s1 = penalty_total(&am.penalties, &[1.0, 1.0], am.ncoef());
        let f1 = fit::newton_fit(&am.x, &am.exp_mask, &s1, &y, &f, None, None).unwrap();
        let sc1 = gcv(y.len(), f1.deviance, f1.edf, 1.0);
        assert!(sel.score <= sc1 + 1e-12);
    }

    #[test]
    fn ubre_for_binomial_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let n = 400;
        let mut csv = String::from("y,x\n");
        for _ in 0..n {
            let x: f64 = rng.random_range(0.0..1.0);
            let p = 1.0 / (1.0 + (-(6.0 * x - 3.0)).exp());
            let y = if rng.random_bool(p) { 1 } else { 0 };
            csv.push_str(&format!("{y},{x}\n"));
        }
        let data = read_csv(csv.as_bytes()).unwrap();
        let spec = formula::validate(
            &formula::parse("y ~ s(x, k=10, bs=mpi)").unwrap(),
            &data.schema(),
        )
        .unwrap();
        let am = assembly::build(&spec, &data).unwrap();
        let y = data.numeric("y").unwrap();
        let fam = Family::binomial();
        assert_eq!(Criterion::auto(&fam), Criterion::Ubre);
        let sel = select(
            &am.x,
            &am.exp_mask,
            &am.penalties,
            y,
            &fam,
            None,
            Criterion::Ubre,
            1.0,
        )
        .unwrap();
        assert!(sel.converged);
        assert!(sel.fit.mu.iter().all(|&m| (0.0..=1.0).contains(&m)));
    }

    #[test]
    fn gamma_inflation_smooths_more() {
        let (am, y) = smooth_problem(36, 150, "y ~ s(x, k=12)");
        let f = Family::gaussian();
        let run = |gamma: f64| {
            select(
                &am.x,
                &am.exp_mask,
                &am.penalties,
                &y,
                &f,
                None,
                Criterion::Gcv,
                gamma,
            )
            .unwrap()
        };
        let plain = run(1.0);
        let inflated = run(1.4);
        assert!(
            inflated.fit.edf <= plain.fit.edf + 1e-6,
            "edf {} vs {}",
            inflated.fit.edf,
            plain.fit.edf
        );
    }

    #[test]
    fn unpenalized_model_short_circuits() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let n = 30;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sel = select(
            &x,
            &[false, false],
            &[],
            &y,
            &Family::gaussian(),
            None,
            Criterion::Gcv,
            1.0,
        )
        .unwrap();
        assert!(sel.lambda.is_empty());
        assert_eq!(sel.outer_iterations, 0);
        assert_abs_diff_eq!(sel.fit.edf, 2.0, epsilon = 1e-8);
    }
}
