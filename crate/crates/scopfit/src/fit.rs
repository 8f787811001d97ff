//! Penalized likelihood fitting by full Newton iteration.
//!
//! The working coefficients `beta` map to model coefficients
//! `beta_tilde` through elementwise exponentiation of the masked
//! entries, so the objective
//!
//!   Q(beta) = D(beta)/2 + beta' S_lambda beta / 2
//!
//! is smooth in `beta` and the chain rule contributes a diagonal
//! Jacobian E = diag(m), m_j = exp(beta_j) for masked entries and 1
//! otherwise. With canonical links the gradient and Hessian of the
//! deviance have closed forms in the residual v = y - mu and the
//! variance weights W = V(mu).

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::family::{self, Family};
use crate::splines::beta_tilde_entry;
use crate::{Error, Result};

pub const MAX_NEWTON_ITER: usize = 200;
pub const MAX_STEP_HALVINGS: usize = 30;
pub const OBJ_TOL: f64 = 1e-8;
pub const GRAD_TOL: f64 = 1e-6;

/// Result of a converged (or stopped) Newton fit at fixed lambda.
#[derive(Debug, Clone)]
pub struct NewtonFit {
    pub beta: DVector<f64>,
    pub beta_tilde: DVector<f64>,
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
    pub deviance: f64,
    /// Penalized objective D/2 + beta'S beta/2 at the solution.
    pub objective: f64,
    /// Penalized negative Hessian H_u + S_lambda (no ridge).
    pub hp: DMatrix<f64>,
    /// Unpenalized negative Hessian of D/2.
    pub hu: DMatrix<f64>,
    pub edf: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

/// Elementwise exponentiation map and its derivative.
pub fn coef_map(beta: &DVector<f64>, mask: &[bool]) -> (DVector<f64>, DVector<f64>) {
    let p = beta.len();
    let mut bt = DVector::zeros(p);
    let mut m = DVector::zeros(p);
    for j in 0..p {
        let (v, _) = beta_tilde_entry(beta[j], mask[j]);
        bt[j] = v;
        m[j] = if mask[j] { v } else { 1.0 };
    }
    (bt, m)
}

struct State {
    bt: DVector<f64>,
    m: DVector<f64>,
    eta: DVector<f64>,
    mu: DVector<f64>,
    deviance: f64,
    objective: f64,
}

fn evaluate(
    x: &DMatrix<f64>,
    mask: &[bool],
    s: &DMatrix<f64>,
    y: &[f64],
    family: &Family,
    weights: Option<&[f64]>,
    beta: &DVector<f64>,
) -> State {
    let (bt, m) = coef_map(beta, mask);
    let eta = x * &bt;
    let mu = DVector::from_fn(eta.len(), |i, _| family.mean(eta[i]));
    let dev = family::deviance(family, y, mu.as_slice(), weights);
    let pen = (beta.transpose() * s * beta)[(0, 0)];
    State {
        bt,
        m,
        eta,
        mu,
        deviance: dev,
        objective: dev / 2.0 + pen / 2.0,
    }
}

/// Gradient of Q and the pieces needed for the Hessian.
fn gradient(
    x: &DMatrix<f64>,
    s: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    beta: &DVector<f64>,
    st: &State,
) -> (DVector<f64>, DVector<f64>) {
    let n = y.len();
    let v = DVector::from_fn(n, |i, _| {
        let w = weights.map_or(1.0, |w| w[i]);
        w * (y[i] - st.mu[i])
    });
    let xtv = x.transpose() * &v;
    let mut g = s * beta;
    for j in 0..beta.len() {
        g[j] -= st.m[j] * xtv[j];
    }
    (g, xtv)
}

/// Negative Hessian of D/2 (unpenalized): E X'WX E - diag(m .* mask .* X'v).
fn unpenalized_hessian(
    x: &DMatrix<f64>,
    mask: &[bool],
    family: &Family,
    weights: Option<&[f64]>,
    st: &State,
    xtv: &DVector<f64>,
) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut xw = DMatrix::zeros(n, p);
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]) * family.variance(st.mu[i]);
        for j in 0..p {
            xw[(i, j)] = x[(i, j)] * w * st.m[j];
        }
    }
    let mut xe = x.clone();
    for j in 0..p {
        for i in 0..n {
            xe[(i, j)] *= st.m[j];
        }
    }
    let mut h = xe.transpose() * xw;
    for j in 0..p {
        if mask[j] {
            h[(j, j)] -= st.m[j] * xtv[j];
        }
    }
    // symmetrize against accumulation error
    for i in 0..p {
        for j in 0..i {
            let a = (h[(i, j)] + h[(j, i)]) / 2.0;
            h[(i, j)] = a;
            h[(j, i)] = a;
        }
    }
    h
}

/// Effective degrees of freedom tr[(H_u + S)^{-1} H_u].
pub fn effective_df(hu: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let p = hu.nrows();
    let hp = hu + s;
    let sol = solve_spd(&hp, hu)?;
    Ok((0..p).map(|j| sol[(j, j)]).sum())
}

/// Solve a symmetric positive (semi)definite system, escalating a
/// diagonal ridge when the factorization fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.iter().all(|v| v.is_finite()) || !b.iter().all(|v| v.is_finite()) {
        return Err(Error::NonConvergence {
            iterations: 0,
            grad_norm: f64::NAN,
        });
    }
    // Gershgorin bounds the most negative eigenvalue by p * max|a_ij|,
    // so a ridge somewhat past that always restores definiteness.
    let cap = 1e2_f64.max(10.0 * a.nrows() as f64 * a.amax());
    let mut eps = 0.0f64;
    loop {
        let mut m = a.clone();
        if eps > 0.0 {
            for j in 0..m.nrows() {
                m[(j, j)] += eps;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok(ch.solve(b));
        }
        eps = if eps == 0.0 { 1e-10 } else { eps * 10.0 };
        if eps > cap {
            return Err(Error::NonConvergence {
                iterations: 0,
                grad_norm: f64::NAN,
            });
        }
    }
}

/// Pearson estimate of the scale parameter.
pub fn scale_estimate(
    family: &Family,
    y: &[f64],
    mu: &[f64],
    weights: Option<&[f64]>,
    edf: f64,
) -> Result<f64> {
    if family.scale_known() {
        return Ok(1.0);
    }
    let n = y.len() as f64;
    if n - edf <= 0.0 {
        return Err(Error::ScaleUndefined {
            n: y.len(),
            tau: edf,
        });
    }
    let pearson: f64 = y
        .iter()
        .zip(mu.iter())
        .enumerate()
        .map(|(i, (&yi, &mi))| {
            let w = weights.map_or(1.0, |w| w[i]);
            w * (yi - mi) * (yi - mi) / family.variance(mi)
        })
        .sum();
    Ok(pearson / (n - edf))
}

/// Starting values: masked entries at zero (beta_tilde = 1), the rest
/// from a ridge-regularized least squares fit on the link scale with
/// the masked block's unit contribution subtracted as an offset.
pub fn initial_beta(
    x: &DMatrix<f64>,
    mask: &[bool],
    s: &DMatrix<f64>,
    y: &[f64],
    family: &Family,
) -> DVector<f64> {
    let (n, p) = x.shape();
    let free: Vec<usize> = (0..p).filter(|&j| !mask[j]).collect();
    let mut beta = DVector::zeros(p);
    if free.is_empty() {
        return beta;
    }
    let mut z = DVector::from_fn(n, |i, _| family.link_of(y[i]));
    for i in 0..n {
        for j in 0..p {
            if mask[j] {
                z[i] -= x[(i, j)]; // exp(0) = 1 offset
            }
        }
    }
    let mut xf = DMatrix::zeros(n, free.len());
    for (c, &j) in free.iter().enumerate() {
        xf.set_column(c, &x.column(j));
    }
    let mut a = xf.transpose() * &xf;
    for (ci, &i) in free.iter().enumerate() {
        for (cj, &j) in free.iter().enumerate() {
            a[(ci, cj)] += s[(i, j)];
        }
        a[(ci, ci)] += 1e-8;
    }
    let rhs = xf.transpose() * z;
    if let Ok(sol) = solve_spd(&a, &DMatrix::from_column_slice(free.len(), 1, rhs.as_slice())) {
        for (c, &j) in free.iter().enumerate() {
            beta[j] = sol[(c, 0)];
        }
    }
    beta
}

/// Full Newton minimization of the penalized deviance at fixed
/// smoothing parameters.
pub fn newton_fit(
    x: &DMatrix<f64>,
    mask: &[bool],
    s_lambda: &DMatrix<f64>,
    y: &[f64],
    family: &Family,
    weights: Option<&[f64]>,
    start: Option<&DVector<f64>>,
) -> Result<NewtonFit> {
    let p = x.ncols();
    if mask.len() != p || s_lambda.nrows() != p {
        return Err(Error::DimensionMismatch(format!(
            "fit inputs: p={p}, mask={}, penalty={}",
            mask.len(),
            s_lambda.nrows()
        )));
    }
    let mut beta = match start {
        Some(b) => b.clone(),
        None => initial_beta(x, mask, s_lambda, y, family),
    };
    let mut st = evaluate(x, mask, s_lambda, y, family, weights, &beta);
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm;

    for iter in 0..MAX_NEWTON_ITER {
        iterations = iter + 1;
        let (g, xtv) = gradient(x, s_lambda, y, weights, &beta, &st);
        grad_norm = g.amax();
        let hu = unpenalized_hessian(x, mask, family, weights, &st, &xtv);
        let hp = &hu + s_lambda;
        let dir = solve_spd(&hp, &DMatrix::from_column_slice(p, 1, g.as_slice()))?;
        let step = DVector::from_column_slice(dir.column(0).as_slice());

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_STEP_HALVINGS {
            let cand = &beta - alpha * &step;
            let cst = evaluate(x, mask, s_lambda, y, family, weights, &cand);
            if cst.objective.is_finite() && cst.objective <= st.objective {
                let delta = (st.objective - cst.objective).abs();
                beta = cand;
                let done = delta < OBJ_TOL * (cst.objective.abs() + OBJ_TOL)
                    && grad_norm < GRAD_TOL * (1.0 + cst.objective.abs());
                st = cst;
                accepted = true;
                if done {
                    converged = true;
                }
                break;
            }
            alpha /= 2.0;
        }
        if !accepted {
            // no descent possible: treat the current point as the optimum
            converged = grad_norm < GRAD_TOL * 10.0 * (1.0 + st.objective.abs());
            break;
        }
        if converged {
            break;
        }
    }

    // final curvature at the solution
    let (g, xtv) = gradient(x, s_lambda, y, weights, &beta, &st);
    let grad_norm = g.amax();
    let hu = unpenalized_hessian(x, mask, family, weights, &st, &xtv);
    let hp = &hu + s_lambda;
    let edf = effective_df(&hu, s_lambda)?;

    Ok(NewtonFit {
        beta,
        beta_tilde: st.bt,
        eta: st.eta,
        mu: st.mu,
        deviance: st.deviance,
        objective: st.objective,
        hp,
        hu,
        edf,
        iterations,
        converged,
        grad_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly;
    use crate::data::read_csv;
    use crate::formula;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn fd_gradient(
        x: &DMatrix<f64>,
        mask: &[bool],
        s: &DMatrix<f64>,
        y: &[f64],
        family: &Family,
        beta: &DVector<f64>,
    ) -> DVector<f64> {
        let h = 1e-6;
        DVector::from_fn(beta.len(), |j, _| {
            let mut bp = beta.clone();
            let mut bm = beta.clone();
            bp[j] += h;
            bm[j] -= h;
            let qp = evaluate(x, mask, s, y, family, None, &bp).objective;
            let qm = evaluate(x, mask, s, y, family, None, &bm).objective;
            (qp - qm) / (2.0 * h)
        })
    }

    fn random_problem(
        rng: &mut ChaCha8Rng,
        n: usize,
        p: usize,
        family: &Family,
    ) -> (DMatrix<f64>, Vec<bool>, DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let mask: Vec<bool> = (0..p).map(|j| j % 2 == 1).collect();
        let mut s = DMatrix::zeros(p, p);
        for j in 0..p {
            s[(j, j)] = rng.random_range(0.1..2.0);
        }
        let y: Vec<f64> = (0..n)
            .map(|_| match family.kind {
                crate::family::FamilyKind::Gaussian => rng.random_range(-2.0..2.0),
                crate::family::FamilyKind::Binomial => {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        0.0
                    }
                }
                crate::family::FamilyKind::Poisson => rng.random_range(0..7) as f64,
            })
            .collect();
        (x, mask, s, y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for family in [Family::gaussian(), Family::binomial(), Family::poisson()] {
            let (x, mask, s, y) = random_problem(&mut rng, 30, 6, &family);
            let beta = DVector::from_fn(6, |j, _| 0.3 * (j as f64) - 0.8);
            let st = evaluate(&x, &mask, &s, &y, &family, None, &beta);
            let (g, _) = gradient(&x, &s, &y, None, &beta, &st);
            let fd = fd_gradient(&x, &mask, &s, &y, &family, &beta);
            for j in 0..6 {
                assert_abs_diff_eq!(g[j], fd[j], epsilon = 1e-4 * (1.0 + g[j].abs()));
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for family in [Family::gaussian(), Family::binomial(), Family::poisson()] {
            let (x, mask, s, y) = random_problem(&mut rng, 25, 5, &family);
            let beta = DVector::from_fn(5, |j, _| 0.2 * (j as f64) - 0.4);
            let st = evaluate(&x, &mask, &s, &y, &family, None, &beta);
            let (_, xtv) = gradient(&x, &s, &y, None, &beta, &st);
            let hu = unpenalized_hessian(&x, &mask, &family, None, &st, &xtv);
            let hp = &hu + &s;
            // finite differences of the analytic gradient
            let h = 1e-5;
            for j in 0..5 {
                let mut bp = beta.clone();
                let mut bm = beta.clone();
                bp[j] += h;
                bm[j] -= h;
                let stp = evaluate(&x, &mask, &s, &y, &family, None, &bp);
                let stm = evaluate(&x, &mask, &s, &y, &family, None, &bm);
                let (gp, _) = gradient(&x, &s, &y, None, &bp, &stp);
                let (gm, _) = gradient(&x, &s, &y, None, &bm, &stm);
                for i in 0..5 {
                    let fd = (gp[i] - gm[i]) / (2.0 * h);
                    assert_abs_diff_eq!(hp[(i, j)], fd, epsilon = 1e-3 * (1.0 + fd.abs()));
                }
            }
        }
    }

    #[test]
    fn gaussian_unmasked_fit_is_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 40;
        let p = 4;
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask = vec![false; p];
        let s = DMatrix::zeros(p, p);
        let fit = newton_fit(&x, &mask, &s, &y, &Family::gaussian(), None, None).unwrap();
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * DVector::from_column_slice(&y);
        let ols = xtx.lu().solve(&xty).unwrap();
        assert!((fit.beta - ols).abs().max() < 1e-6);
        assert_abs_diff_eq!(fit.edf, p as f64, epsilon = 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn ridge_oracle(seed in 0u64..500, n in 12usize..40, p in 2usize..10, lam in 0.01f64..10.0) {
            prop_assume!(n > p);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mask = vec![false; p];
            let s = DMatrix::identity(p, p) * lam;
            let fit = newton_fit(&x, &mask, &s, &y, &Family::gaussian(), None, None).unwrap();
            let a = x.transpose() * &x + &s;
            let oracle = a.lu().solve(&(x.transpose() * DVector::from_column_slice(&y))).unwrap();
            prop_assert!((fit.beta - oracle).abs().max() < 1e-6);
        }
    }

    #[test]
    fn monotone_smooth_recovery() {
        // noisy monotone signal: the constrained fit is monotone and close
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let n = 150;
        let mut csv = String::from("y,x\n");
        let mut xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &x in &xs {
            let f = 3.0 / (1.0 + (-10.0 * (x - 0.5)).exp());
            let y = f + rng.random_range(-0.3..0.3);
            csv.push_str(&format!("{y},{x}\n"));
        }
        let data = read_csv(csv.as_bytes()).unwrap();
        let spec = formula::validate(
            &formula::parse("y ~ s(x, k=12, bs=mpi)").unwrap(),
            &data.schema(),
        )
        .unwrap();
        let am = assembly::build(&spec, &data).unwrap();
        let y = data.numeric("y").unwrap();
        let s = am.penalty_total(&[1.0]);
        let fit = newton_fit(&am.x, &am.exp_mask, &s, y, &Family::gaussian(), None, None).unwrap();
        assert!(fit.converged, "grad {}", fit.grad_norm);
        // sorted x: fitted values must be nondecreasing
        for i in 1..n {
            assert!(
                fit.mu[i] >= fit.mu[i - 1] - 1e-10,
                "not monotone at {i}: {} < {}",
                fit.mu[i],
                fit.mu[i - 1]
            );
        }
        let rmse: f64 = (0..n)
            .map(|i| {
                let f = 3.0 / (1.0 + (-10.0 * (xs[i] - 0.5)).exp());
                (fit.mu[i] - f) * (fit.mu[i] - f)
            })
            .sum::<f64>()
            .sqrt()
            / (n as f64).sqrt();
        assert!(rmse < 0.15, "rmse {rmse}");
    }

    #[test]
    fn edf_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let n = 80;
        let mut csv = String::from("y,x\n");
        for _ in 0..n {
            let x: f64 = rng.random_range(0.0..1.0);
            let y = (6.0 * x).sin() + rng.random_range(-0.2..0.2);
            csv.push_str(&format!("{y},{x}\n"));
        }
        let data = read_csv(csv.as_bytes()).unwrap();
        let spec = formula::validate(
            &formula::parse("y ~ s(x, k=10)").unwrap(),
            &data.schema(),
        )
        .unwrap();
        let am = assembly::build(&spec, &data).unwrap();
        let y = data.numeric("y").unwrap();
        let f = Family::gaussian();
        let small = newton_fit(&am.x, &am.exp_mask, &am.penalty_total(&[1e-8]), y, &f, None, None)
            .unwrap();
        let large = newton_fit(&am.x, &am.exp_mask, &am.penalty_total(&[1e8]), y, &f, None, None)
            .unwrap();
        // lambda -> 0: edf -> p; lambda -> inf: edf -> intercept + nullspace
        assert!((small.edf - am.ncoef() as f64).abs() < 1e-2, "edf {}", small.edf);
        let null_total = 1.0 + am.terms[1].nullspace_dim as f64;
        // the absorbed smooth's nullspace overlaps the intercept by one
        assert!((large.edf - (null_total - 0.0)).abs() < 1.1, "edf {}", large.edf);
        assert!(large.edf < small.edf);
    }

    #[test]
    fn scale_estimate_recovers_noise_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let n = 4000;
        let sigma = 0.7;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / n as f64 });
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                1.0 + 2.0 * (i as f64 / n as f64) + sigma * g
            })
            .collect();
        let mask = vec![false; 2];
        let s = DMatrix::zeros(2, 2);
        let fit = newton_fit(&x, &mask, &s, &y, &Family::gaussian(), None, None).unwrap();
        let phi = scale_estimate(&Family::gaussian(), &y, fit.mu.as_slice(), None, fit.edf).unwrap();
        assert_abs_diff_eq!(phi, sigma * sigma, epsilon = 0.05);
    }

    #[test]
    fn binomial_constrained_fit_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let n = 300;
        let mut csv = String::from("y,x\n");
        for _ in 0..n {
            let x: f64 = rng.random_range(0.0..1.0);
            let p = 1.0 / (1.0 + (-(4.0 * x - 2.0)).exp());
            let y = if rng.random_bool(p) { 1 } else { 0 };
            csv.push_str(&format!("{y},{x}\n"));
        }
        let data = read_csv(csv.as_bytes()).unwrap();
        let spec = formula::validate(
            &formula::parse("y ~ s(x, k=8, bs=mpi)").unwrap(),
            &data.schema(),
        )
        .unwrap();
        let am = assembly::build(&spec, &data).unwrap();
        let y = data.numeric("y").unwrap();
        let fit = newton_fit(
            &am.x,
            &am.exp_mask,
            &am.penalty_total(&[1.0]),
            y,
            &Family::binomial(),
            None,
            None,
        )
        .unwrap();
        assert!(fit.converged);
        assert!(fit.mu.iter().all(|&m| (0.0..=1.0).contains(&m)));
    }

    #[test]
    fn poisson_fit_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let n = 250;
        let mut csv = String::from("y,x\n");
        for _ in 0..n {
            let x: f64 = rng.random_range(0.0..1.0);
            let lam = (0.5 + 1.5 * x).exp();
            // simple inverse-cdf draw
            let u: f64 = rng.random_range(0.0..1.0);
            let mut k = 0usize;
            let mut cum = (-lam).exp();
            let mut pk = cum;
            while cum < u && k < 60 {
                k += 1;
                pk *= lam / k as f64;
                cum += pk;
            }
            csv.push_str(&format!("{k},{x}\n"));
        }
        let data = read_csv(csv.as_bytes()).unwrap();
        let spec = formula::validate(
            &formula::parse("y ~ s(x, k=8)").unwrap(),
            &data.schema(),
        )
        .unwrap();
        let am = assembly::build(&spec, &data).unwrap();
        let y = data.numeric("y").unwrap();
        let fit = newton_fit(
            &am.x,
            &am.exp_mask,
            &am.penalty_total(&[1.0]),
            y,
            &Family::poisson(),
            None,
            None,
        )
        .unwrap();
        assert!(fit.converged);
        assert!(fit.mu.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn prior_weights_replicate_rows() {
        // weight 2 on a row equals duplicating it
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let n = 20;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask = vec![false; 3];
        let s = DMatrix::identity(3, 3) * 0.3;
        let w: Vec<f64> = (0..n).map(|i| if i < 5 { 2.0 } else { 1.0 }).collect();
        let fit_w = newton_fit(&x, &mask, &s, &y, &Family::gaussian(), Some(&w), None).unwrap();
        // duplicated design
        let mut rows: Vec<f64> = Vec::new();
        let mut y2: Vec<f64> = Vec::new();
        for i in 0..n {
            let reps = if i < 5 { 2 } else { 1 };
            for _ in 0..reps {
                for j in 0..3 {
                    rows.push(x[(i, j)]);
                }
                y2.push(y[i]);
            }
        }
        let x2 = DMatrix::from_row_slice(y2.len(), 3, &rows);
        let fit_d = newton_fit(&x2, &mask, &s, &y2, &Family::gaussian(), None, None).unwrap();
        assert!((fit_w.beta - fit_d.beta).abs().max() < 1e-6);
    }

    #[test]
    fn warm_start_converges_faster_or_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let (x, mask, s, y) = random_problem(&mut rng, 60, 8, &Family::gaussian());
        let fit1 = newton_fit(&x, &mask, &s, &y, &Family::gaussian(), None, None).unwrap();
        let fit2 = newton_fit(
            &x,
            &mask,
            &s,
            &y,
            &Family::gaussian(),
            None,
            Some(&fit1.beta),
        )
        .unwrap();
        assert!(fit2.iterations <= fit1.iterations.max(2));
        assert!((fit2.beta - fit1.beta).abs().max() < 1e-6);
    }
}
