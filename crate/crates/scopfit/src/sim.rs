//! Deterministic data simulators used by the CLI and the test suite.
//!
//! Three scenarios: a binary-response model with three covariates and a
//! monotone interaction; grouped growth curves with a random intercept
//! and AR(1) within-group errors; and scalar-on-function regression
//! with a decreasing true coefficient function.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt::Write as _;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    WesdrLike,
    SitkaLike,
    ScalarOnFunction,
}

impl Scenario {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "wesdr-like" => Ok(Scenario::WesdrLike),
            "sitka-like" => Ok(Scenario::SitkaLike),
            "scalar-on-function" => Ok(Scenario::ScalarOnFunction),
            other => Err(Error::Invalid(format!("unknown scenario `{other}`"))),
        }
    }
}

/// True linear predictor for the binary scenario: smooth main effects
/// plus an interaction that is nondecreasing in `bmi` at every
/// (dur, gly).
pub fn binary_eta(dur: f64, gly: f64, bmi: f64) -> f64 {
    let d = dur / 50.0;
    let g = (gly - 5.0) / 15.0;
    let b = (bmi - 15.0) / 30.0;
    -1.2 + 1.5 * (std::f64::consts::PI * d).sin() + 0.8 * (g - 0.5) + 1.8 * b * (0.3 + 0.7 * d)
}

/// Binary-response scenario: columns ret, dur, gly, bmi.
pub fn wesdr_like(seed: u64, n: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("ret,dur,gly,bmi\n");
    for _ in 0..n {
        let dur: f64 = rng.random_range(0.0..50.0);
        let gly: f64 = rng.random_range(5.0..20.0);
        let bmi: f64 = rng.random_range(15.0..45.0);
        let p = 1.0 / (1.0 + (-binary_eta(dur, gly, bmi)).exp());
        let ret = if rng.random_bool(p) { 1 } else { 0 };
        let _ = writeln!(out, "{ret},{dur},{gly},{bmi}");
    }
    out
}

/// True increasing mean trend for the growth-curve scenario.
pub fn growth_trend(t: f64) -> f64 {
    4.0 + 2.0 * (1.0 - (-3.0 * t).exp())
}

/// Grouped growth curves: columns y, t, id, start. Each group has an
/// increasing mean trend, its own random intercept, and AR(1) errors
/// with autocorrelation `rho` within the group.
pub fn sitka_like(seed: u64, groups: usize, per_group: usize, rho: f64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = 0.25;
    let sigma_b = 0.3;
    let mut out = String::from("y,t,id,start\n");
    for g in 0..groups {
        let b: f64 = sigma_b * rng.sample::<f64, _>(StandardNormal);
        let mut eps = 0.0;
        for j in 0..per_group {
            let t = j as f64 / (per_group - 1) as f64;
            let z: f64 = rng.sample(StandardNormal);
            eps = if j == 0 {
                sigma * z
            } else {
                rho * eps + sigma * (1.0 - rho * rho).sqrt() * z
            };
            let y = growth_trend(t) + b + eps;
            let start = if j == 0 { 1 } else { 0 };
            let _ = writeln!(out, "{y},{t},tree{:02},{start}", g + 1);
        }
    }
    out
}

/// True decreasing coefficient function for the functional scenario.
pub fn decreasing_coef(t: f64) -> f64 {
    2.0 * (-2.0 * t).exp() - 0.5
}

/// Scalar-on-function regression: columns y, X[1..points], Z[1..points].
/// X holds the observation points (a shared grid), Z the random smooth
/// curves; y is the trapezoid integral of coef * curve plus noise.
pub fn scalar_on_function(seed: u64, n: usize, points: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid: Vec<f64> = (0..points)
        .map(|j| j as f64 / (points - 1) as f64)
        .collect();
    let mut out = String::from("y");
    for j in 1..=points {
        let _ = write!(out, ",X[{j}]");
    }
    for j in 1..=points {
        let _ = write!(out, ",Z[{j}]");
    }
    out.push('\n');
    for _ in 0..n {
        // random smooth curve from a few sinusoids
        let a1: f64 = rng.random_range(-1.0..1.0);
        let a2: f64 = rng.random_range(-1.0..1.0);
        let a3: f64 = rng.random_range(-1.0..1.0);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let curve: Vec<f64> = grid
            .iter()
            .map(|&t| {
                a1 * (std::f64::consts::PI * t + phase).sin()
                    + a2 * (2.0 * std::f64::consts::PI * t).cos()
                    + a3 * t
            })
            .collect();
        // trapezoid integral of coef * curve
        let mut integral = 0.0;
        for j in 1..points {
            let f0 = decreasing_coef(grid[j - 1]) * curve[j - 1];
            let f1 = decreasing_coef(grid[j]) * curve[j];
            integral += (grid[j] - grid[j - 1]) * (f0 + f1) / 2.0;
        }
        let y = integral + 0.1 * rng.sample::<f64, _>(StandardNormal);
        let _ = write!(out, "{y}");
        for &t in &grid {
            let _ = write!(out, ",{t}");
        }
        for &z in &curve {
            let _ = write!(out, ",{z}");
        }
        out.push('\n');
    }
    out
}

/// Dispatch a scenario with its default sizes.
pub fn simulate(scenario: Scenario, seed: u64, n: Option<usize>, rho: Option<f64>) -> String {
    match scenario {
        Scenario::WesdrLike => wesdr_like(seed, n.unwrap_or(600)),
        Scenario::SitkaLike => {
            let groups = n.unwrap_or(60);
            sitka_like(seed, groups, 20, rho.unwrap_or(0.6))
        }
        Scenario::ScalarOnFunction => scalar_on_function(seed, n.unwrap_or(200), 100),
    }
}
