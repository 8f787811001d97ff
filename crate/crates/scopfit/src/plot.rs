//! Plot data extraction: term curves and surfaces with confidence
//! bands, autocorrelation series, and minimal SVG rendering. CSV is
//! the contract surface; the SVG output is a convenience view.

use nalgebra::{DMatrix, DVector};
use std::fmt::Write as _;

use crate::assembly::TermEval;
use crate::data::{Column, DataTable};
use crate::model::FittedModel;
use crate::{Error, Result};

/// Sample autocorrelation function; acf[0] = 1 by construction.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Invalid(
            "acf needs at least two observations".into(),
        ));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let den: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
    let mut out = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag.min(n - 1) {
        let num: f64 = (lag..n)
            .map(|i| (series[i] - mean) * (series[i - lag] - mean))
            .sum();
        out.push(num / den);
    }
    Ok(out)
}

/// One-dimensional term curve with a symmetric two-standard-error band.
#[derive(Debug, Clone)]
pub struct PlotData1D {
    pub term: String,
    pub grid: Vec<f64>,
    pub fit: Vec<f64>,
    pub se: Vec<f64>,
}

impl PlotData1D {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,fit,lower,upper\n");
        for i in 0..self.grid.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.grid[i],
                self.fit[i],
                self.fit[i] - 2.0 * self.se[i],
                self.fit[i] + 2.0 * self.se[i]
            );
        }
        out
    }
}

/// Two-dimensional fitted surface on a lattice, row-major in x1.
#[derive(Debug, Clone)]
pub struct PlotData2D {
    pub term: String,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// fit[i * x2.len() + j] at (x1[i], x2[j]).
    pub fit: Vec<f64>,
}

impl PlotData2D {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x1,x2,fit\n");
        for (i, &a) in self.x1.iter().enumerate() {
            for (j, &b) in self.x2.iter().enumerate() {
                let _ = writeln!(out, "{a},{b},{}", self.fit[i * self.x2.len() + j]);
            }
        }
        out
    }
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
        .collect()
}

fn find_term<'m>(model: &'m FittedModel, term: &str) -> Result<&'m crate::assembly::BuiltTerm> {
    model
        .terms
        .iter()
        .find(|t| t.label == term)
        .ok_or_else(|| Error::UnknownTerm(term.to_string()))
}

fn single_column_table(name: &str, values: Vec<f64>) -> DataTable {
    DataTable {
        names: vec![name.to_string()],
        n: values.len(),
        columns: vec![Column::Numeric(values)],
        dropped_rows: 0,
    }
}

/// Curve of a univariate smooth term over its knot range.
pub fn term_plot_1d(model: &FittedModel, term: &str, grid_size: usize) -> Result<PlotData1D> {
    let t = find_term(model, term)?;
    let (cov, kv) = match &t.eval {
        TermEval::Smooth { cov, kv, .. } => (cov.clone(), kv.clone()),
        _ => {
            return Err(Error::Invalid(format!(
                "term `{term}` is not a univariate smooth"
            )))
        }
    };
    let (lo, hi) = kv.range();
    let grid = linspace(lo, hi, grid_size.max(2));
    let data = single_column_table(&cov, grid.clone());
    let m = t.matrix_at(&data, false)?;
    let (fit, se) = block_fit_se(model, t, &m);
    Ok(PlotData1D {
        term: term.to_string(),
        grid,
        fit,
        se,
    })
}

/// Lattice of a bivariate term's fitted surface.
pub fn term_plot_2d(model: &FittedModel, term: &str, grid_size: usize) -> Result<PlotData2D> {
    let t = find_term(model, term)?;
    let (cov1, cov2, kv1, kv2) = match &t.eval {
        TermEval::Tensor {
            cov1,
            cov2,
            design,
            ..
        } => (
            cov1.clone(),
            cov2.clone(),
            design.kv1.clone(),
            design.kv2.clone(),
        ),
        _ => {
            return Err(Error::Invalid(format!(
                "term `{term}` is not a bivariate smooth"
            )))
        }
    };
    let k = grid_size.max(2);
    let (lo1, hi1) = kv1.range();
    let (lo2, hi2) = kv2.range();
    let g1 = linspace(lo1, hi1, k);
    let g2 = linspace(lo2, hi2, k);
    let mut c1 = Vec::with_capacity(k * k);
    let mut c2 = Vec::with_capacity(k * k);
    for &a in &g1 {
        for &b in &g2 {
            c1.push(a);
            c2.push(b);
        }
    }
    let data = DataTable {
        names: vec![cov1, cov2],
        n: k * k,
        columns: vec![Column::Numeric(c1), Column::Numeric(c2)],
        dropped_rows: 0,
    };
    let m = t.matrix_at(&data, false)?;
    let (fit, _) = block_fit_se(model, t, &m);
    Ok(PlotData2D {
        term: term.to_string(),
        x1: g1,
        x2: g2,
        fit,
    })
}

fn block_fit_se(
    model: &FittedModel,
    term: &crate::assembly::BuiltTerm,
    m: &DMatrix<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let bt = DVector::from_fn(term.width, |c, _| model.beta_tilde[term.offset + c]);
    let fit = (m * &bt).as_slice().to_vec();
    // delta method through the diagonal coefficient map
    let mut mj = m.clone();
    for c in 0..term.width {
        let j = term.offset + c;
        let d = if model.exp_mask[j] {
            model.beta_tilde[j]
        } else {
            1.0
        };
        for i in 0..mj.nrows() {
            mj[(i, c)] *= d;
        }
    }
    let vb = DMatrix::from_fn(term.width, term.width, |a, b| {
        model.cov_beta[(term.offset + a, term.offset + b)]
    });
    let half = &mj * vb;
    let se = (0..m.nrows())
        .map(|i| {
            let v: f64 = (0..term.width).map(|c| half[(i, c)] * mj[(i, c)]).sum();
            v.max(0.0).sqrt()
        })
        .collect();
    (fit, se)
}

/// Minimal SVG polyline plot of a 1-D curve with its band.
pub fn svg_line(pd: &PlotData1D) -> String {
    let w = 640.0;
    let h = 400.0;
    let pad = 40.0;
    let lo_y = pd
        .fit
        .iter()
        .zip(&pd.se)
        .map(|(f, s)| f - 2.0 * s)
        .fold(f64::INFINITY, f64::min);
    let hi_y = pd
        .fit
        .iter()
        .zip(&pd.se)
        .map(|(f, s)| f + 2.0 * s)
        .fold(f64::NEG_INFINITY, f64::max);
    let lo_x = pd.grid.first().copied().unwrap_or(0.0);
    let hi_x = pd.grid.last().copied().unwrap_or(1.0);
    let sx = |x: f64| pad + (x - lo_x) / (hi_x - lo_x).max(1e-300) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - lo_y) / (hi_y - lo_y).max(1e-300) * (h - 2.0 * pad);
    let path = |ys: Vec<f64>| -> String {
        pd.grid
            .iter()
            .zip(ys)
            .map(|(&x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let fit = path(pd.fit.clone());
    let lower = path(pd.fit.iter().zip(&pd.se).map(|(f, s)| f - 2.0 * s).collect());
    let upper = path(pd.fit.iter().zip(&pd.se).map(|(f, s)| f + 2.0 * s).collect());
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">",
            "<polyline points=\"{lower}\" fill=\"none\" stroke=\"#999\" stroke-dasharray=\"4\"/>",
            "<polyline points=\"{upper}\" fill=\"none\" stroke=\"#999\" stroke-dasharray=\"4\"/>",
            "<polyline points=\"{fit}\" fill=\"none\" stroke=\"#000\"/>",
            "</svg>"
        ),
        w = w,
        h = h,
        lower = lower,
        upper = upper,
        fit = fit
    )
}

/// Minimal SVG heatmap of a 2-D surface.
pub fn svg_heatmap(pd: &PlotData2D) -> String {
    let cell = 12.0;
    let lo = pd.fit.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = pd.fit.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">",
        pd.x1.len() as f64 * cell,
        pd.x2.len() as f64 * cell
    );
    for i in 0..pd.x1.len() {
        for j in 0..pd.x2.len() {
            let v = pd.fit[i * pd.x2.len() + j];
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            let shade = (255.0 * (1.0 - t)) as u8;
            let _ = write!(
                out,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},255)\"/>",
                i as f64 * cell,
                j as f64 * cell,
            );
        }
    }
    out.push_str("</svg>");
    out
}
