//! AR(1) residual whitening for Gaussian identity models.
//!
//! For a lag-one autocorrelation `rho`, the transform leaves the first
//! row of each independent block unchanged and replaces later rows by
//! (r_i - rho r_{i-1}) / sqrt(1 - rho^2). Written as a matrix T, this
//! satisfies T'T = V^{-1} for the block AR(1) correlation matrix V, so
//! fitting on the transformed response and model matrix is generalized
//! least squares.

use nalgebra::DMatrix;

use crate::family::{Family, FamilyKind, Link};
use crate::smoothsel::{self, Criterion, SelectResult};
use crate::splines::PenaltyBlock;
use crate::{Error, Result};

/// Fixed autocorrelation or a grid search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoSpec {
    Fixed(f64),
    Search,
}

/// Grid used by the search: -0.95 to 0.95 in steps of 0.05.
pub fn rho_grid() -> Vec<f64> {
    (-19..=19).map(|i| i as f64 * 0.05).collect()
}

fn check_rho(rho: f64) -> Result<()> {
    if !rho.is_finite() || rho.abs() >= 1.0 {
        return Err(Error::InvalidRho(rho));
    }
    Ok(())
}

/// Whiten a vector block-wise; `starts[i]` marks the first observation
/// of an independent block (index 0 is always a block start).
pub fn whiten_vec(v: &[f64], rho: f64, starts: &[bool]) -> Result<Vec<f64>> {
    check_rho(rho)?;
    let scale = 1.0 / (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(v.len());
    for i in 0..v.len() {
        if i == 0 || starts[i] {
            out.push(v[i]);
        } else {
            out.push((v[i] - rho * v[i - 1]) * scale);
        }
    }
    Ok(out)
}

/// Whiten every column of a matrix with the same row transform.
pub fn whiten_matrix(x: &DMatrix<f64>, rho: f64, starts: &[bool]) -> Result<DMatrix<f64>> {
    check_rho(rho)?;
    let (n, p) = x.shape();
    let scale = 1.0 / (1.0 - rho * rho).sqrt();
    let mut out = DMatrix::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            out[(i, j)] = if i == 0 || starts[i] {
                x[(i, j)]
            } else {
                (x[(i, j)] - rho * x[(i - 1, j)]) * scale
            };
        }
    }
    Ok(out)
}

/// Standardized (whitened) residuals, used for residual diagnostics.
pub fn std_residuals(resid: &[f64], rho: f64, starts: &[bool]) -> Result<Vec<f64>> {
    whiten_vec(resid, rho, starts)
}

/// Dense whitening matrix T with T'T = V^{-1}; test and diagnostic use.
pub fn whitening_matrix(n: usize, rho: f64, starts: &[bool]) -> Result<DMatrix<f64>> {
    check_rho(rho)?;
    let scale = 1.0 / (1.0 - rho * rho).sqrt();
    let mut t = DMatrix::zeros(n, n);
    for i in 0..n {
        if i == 0 || starts[i] {
            t[(i, i)] = 1.0;
        } else {
            t[(i, i)] = scale;
            t[(i, i - 1)] = -rho * scale;
        }
    }
    Ok(t)
}

/// AIC on the profiled Gaussian likelihood with AR(1) correlation:
/// n log(D/n) + log det V + 2 tau, where D is the whitened deviance
/// and log det V = (n - n_blocks) log(1 - rho^2).
pub fn aic(n: usize, n_blocks: usize, deviance: f64, edf: f64, rho: f64) -> f64 {
    let nf = n as f64;
    let logdet = (n - n_blocks) as f64 * (1.0 - rho * rho).ln();
    nf * (deviance / nf).ln() + logdet + 2.0 * edf
}

/// Result of an AR(1) fit: the autocorrelation used, the selection
/// outcome on the whitened data, and the AIC trace over the grid.
#[derive(Debug, Clone)]
pub struct Ar1Result {
    pub rho: f64,
    pub aic: f64,
    pub select: SelectResult,
    /// Whitening passes applied to the data (1 for a fixed rho).
    pub whiten_passes: usize,
    /// (rho, AIC) pairs evaluated during a search; single entry when
    /// rho was fixed.
    pub aic_trace: Vec<(f64, f64)>,
}

fn thread_budget(jobs: usize) -> usize {
    let avail = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("SCOPFIT_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(avail);
    cap.min(jobs).max(1)
}

#[allow(clippy::too_many_arguments)]
fn fit_whitened(
    x: &DMatrix<f64>,
    mask: &[bool],
    penalties: &[PenaltyBlock],
    y: &[f64],
    starts: &[bool],
    criterion: Criterion,
    gamma: f64,
    rho: f64,
) -> Result<(SelectResult, f64)> {
    let xw = whiten_matrix(x, rho, starts)?;
    let yw = whiten_vec(y, rho, starts)?;
    let sel = smoothsel::select(
        &xw,
        mask,
        penalties,
        &yw,
        &Family::gaussian(),
        None,
        criterion,
        gamma,
    )?;
    let n_blocks = starts
        .iter()
        .enumerate()
        .filter(|&(i, &s)| i == 0 || s)
        .count();
    let a = aic(y.len(), n_blocks, sel.fit.deviance, sel.fit.edf, rho);
    Ok((sel, a))
}

/// Fit a Gaussian identity model with AR(1) errors, either at a fixed
/// autocorrelation or searching the grid by AIC.
#[allow(clippy::too_many_arguments)]
pub fn fit_ar1(
    x: &DMatrix<f64>,
    mask: &[bool],
    penalties: &[PenaltyBlock],
    y: &[f64],
    starts: &[bool],
    family: &Family,
    criterion: Criterion,
    gamma: f64,
    rho_spec: RhoSpec,
) -> Result<Ar1Result> {
    if family.kind != FamilyKind::Gaussian || family.link != Link::Identity {
        return Err(Error::Ar1RequiresGaussianIdentity);
    }
    if starts.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "AR start flags: expected {}, found {}",
            y.len(),
            starts.len()
        )));
    }
    match rho_spec {
        RhoSpec::Fixed(rho) => {
            check_rho(rho)?;
            let (sel, a) = fit_whitened(x, mask, penalties, y, starts, criterion, gamma, rho)?;
            Ok(Ar1Result {
                rho,
                aic: a,
                select: sel,
                whiten_passes: 1,
                aic_trace: vec![(rho, a)],
            })
        }
        RhoSpec::Search => {
            let grid = rho_grid();
            let nthreads = thread_budget(grid.len());
            let mut results: Vec<Option<Result<(SelectResult, f64)>>> =
                (0..grid.len()).map(|_| None).collect();
            let next = std::sync::atomic::AtomicUsize::new(0);
            let slots: Vec<std::sync::Mutex<Option<Result<(SelectResult, f64)>>>> =
                (0..grid.len()).map(|_| std::sync::Mutex::new(None)).collect();
            std::thread::scope(|scope| {
                for _ in 0..nthreads {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                        if i >= grid.len() {
                            break;
                        }
                        let r = fit_whitened(
                            x, mask, penalties, y, starts, criterion, gamma, grid[i],
                        );
                        *slots[i].lock().unwrap() = Some(r);
                    });
                }
            });
            for (i, slot) in slots.into_iter().enumerate() {
                results[i] = slot.into_inner().unwrap();
            }
            let mut best: Option<(usize, SelectResult, f64)> = None;
            let mut trace = Vec::with_capacity(grid.len());
            for (i, r) in results.into_iter().enumerate() {
                let (sel, a) = r.expect("grid slot not filled")?;
                trace.push((grid[i], a));
                let better = match &best {
                    None => true,
                    Some((_, _, ba)) => a < *ba,
                };
                if better {
                    best = Some((i, sel, a));
                }
            }
            let (i, sel, a) = best.expect("empty rho grid");
            Ok(Ar1Result {
                rho: grid[i],
                aic: a,
                select: sel,
                whiten_passes: grid.len(),
                aic_trace: trace,
            })
        }
    }
}
