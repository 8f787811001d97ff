//! Command-line front end: fit, predict, simulate, plotdata, acf.
//!
//! Exit codes: 0 success, 1 numeric failure, 2 usage or parse error.

use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use scopfit::ar1::RhoSpec;
use scopfit::data;
use scopfit::family::Family;
use scopfit::model::{self, Ar1Options, FitOptions, FittedModel, PredictScale};
use scopfit::plot;
use scopfit::sim;
use scopfit::smoothsel::Criterion;
use scopfit::Error;

#[derive(Parser)]
#[command(
    name = "scopfit",
    about = "Shape-constrained additive model fitting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV data file.
    Fit(FitArgs),
    /// Predict from a saved model at new data.
    Predict(PredictArgs),
    /// Generate a simulated dataset.
    Simulate(SimulateArgs),
    /// Emit plot data (and optional SVG) for a fitted term.
    Plotdata(PlotArgs),
    /// Autocorrelation of model residuals.
    Acf(AcfArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Model formula, e.g. "y ~ s(x, k=10, bs=mpi) + z".
    #[arg(long)]
    formula: String,
    /// Response family: gaussian, binomial or poisson.
    #[arg(long, default_value = "gaussian")]
    family: String,
    /// Selection criterion: gcv, ubre or auto.
    #[arg(long, default_value = "auto")]
    criterion: String,
    /// Smoothing-parameter optimizer (only "efs" is available).
    #[arg(long, default_value = "efs")]
    optimizer: String,
    /// Effective-degrees-of-freedom inflation in the criterion.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// AR(1) autocorrelation: a number, or "search" for an AIC grid.
    #[arg(long = "ar1-rho")]
    ar1_rho: Option<String>,
    /// Column of block-start flags for the AR(1) structure.
    #[arg(long = "ar-start")]
    ar_start: Option<String>,
    /// Where to write the fitted model (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Fitted model file from `fit --out`.
    #[arg(long)]
    model: PathBuf,
    /// CSV file of new covariate values.
    #[arg(long)]
    data: PathBuf,
    /// Prediction scale: link or response.
    #[arg(long, default_value = "response")]
    scale: String,
    /// Include standard errors.
    #[arg(long)]
    se: bool,
    /// Include per-term contributions.
    #[arg(long)]
    terms: bool,
    /// Clamp out-of-range covariates to the training range.
    #[arg(long)]
    extrapolate: bool,
    /// Output CSV path (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario: wesdr-like, sitka-like or scalar-on-function.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Rows (wesdr-like, scalar-on-function) or groups (sitka-like).
    #[arg(long)]
    n: Option<usize>,
    /// AR(1) autocorrelation for the grouped scenario.
    #[arg(long)]
    rho: Option<f64>,
    /// Output CSV path (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    model: PathBuf,
    /// Term label as printed in the fit summary.
    #[arg(long)]
    term: String,
    #[arg(long, default_value_t = 100)]
    grid: usize,
    /// Output CSV path (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional SVG rendering path.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct AcfArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "max-lag", default_value_t = 20)]
    max_lag: usize,
    /// Output CSV path (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::NonConvergence { .. }
        | Error::ScaleUndefined { .. }
        | Error::OutOfRange { .. }
        | Error::DimensionMismatch(_) => 1,
        _ => 2,
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            Ok(())
        }
        None => {
            use std::io::Write;
            match std::io::stdout().write_all(text.as_bytes()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                other => Ok(other?),
            }
        }
    }
}

fn parse_criterion(s: &str, family: &Family) -> Result<Criterion, Error> {
    match s {
        "gcv" => Ok(Criterion::Gcv),
        "ubre" => Ok(Criterion::Ubre),
        "auto" => Ok(Criterion::auto(family)),
        other => Err(Error::Invalid(format!("unknown criterion `{other}`"))),
    }
}

fn summary_text(m: &FittedModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Formula:   {}", m.formula);
    let _ = writeln!(
        s,
        "Family:    {:?} ({:?} link)",
        m.family.kind, m.family.link
    );
    let _ = writeln!(s, "N:         {}", m.n);
    if m.dropped_rows > 0 {
        let _ = writeln!(s, "Dropped:   {} rows with missing values", m.dropped_rows);
    }
    let _ = writeln!(s, "Criterion: {:?} = {:.6}", m.criterion, m.score);
    let _ = writeln!(s, "Deviance:  {:.6}", m.deviance);
    let _ = writeln!(s, "Scale:     {:.6}", m.scale);
    let _ = writeln!(s, "Total edf: {:.4}", m.edf);
    if let Some(rho) = m.rho {
        let _ = writeln!(s, "AR(1) rho: {rho:.2}  (AIC {:.4})", m.aic.unwrap_or(f64::NAN));
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<34} {:>8} {:>12} {:>10}",
        "Term", "edf", "Wald", "p-value"
    );
    for term in &m.terms {
        let edf = m.term_edf(term);
        match m.term_wald(term) {
            Ok((stat, p)) => {
                let _ = writeln!(s, "{:<34} {:>8.3} {:>12.3} {:>10.4}", term.label, edf, stat, p);
            }
            Err(_) => {
                let _ = writeln!(s, "{:<34} {:>8.3} {:>12} {:>10}", term.label, edf, "-", "-");
            }
        }
    }
    if let Some(lam) = (!m.lambda.is_empty()).then_some(&m.lambda) {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "Smoothing parameters: {}",
            lam.iter()
                .map(|l| format!("{l:.4e}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    if let Some(trace) = &m.aic_trace {
        if trace.len() > 1 {
            let _ = writeln!(s, "\nAIC over the rho grid:");
            let _ = writeln!(s, "{:>6} {:>12}", "rho", "AIC");
            for (rho, aic) in trace {
                let _ = writeln!(s, "{rho:>6.2} {aic:>12.4}");
            }
        }
    }
    for w in &m.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn cmd_fit(args: &FitArgs) -> Result<(), Error> {
    if args.optimizer != "efs" {
        return Err(Error::Invalid(format!(
            "unknown optimizer `{}` (only `efs` is available)",
            args.optimizer
        )));
    }
    let data = data::read_csv_path(&args.data)?;
    let family = Family::parse(&args.family)?;
    let criterion = parse_criterion(&args.criterion, &family)?;
    let ar1 = match &args.ar1_rho {
        None => None,
        Some(spec) => {
            let rho = if spec == "search" {
                RhoSpec::Search
            } else {
                let v: f64 = spec
                    .parse()
                    .map_err(|_| Error::Invalid(format!("invalid --ar1-rho value `{spec}`")))?;
                RhoSpec::Fixed(v)
            };
            Some(Ar1Options {
                rho,
                start_col: args.ar_start.clone(),
            })
        }
    };
    let opts = FitOptions {
        family,
        criterion: Some(criterion),
        gamma: args.gamma,
        ar1,
    };
    let m = model::fit(&args.formula, &data, &opts)?;
    if let Some(path) = &args.out {
        m.save(path)?;
    }
    print!("{}", summary_text(&m));
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<(), Error> {
    let m = FittedModel::load(&args.model)?;
    let data = data::read_csv_path(&args.data)?;
    let scale = match args.scale.as_str() {
        "link" => PredictScale::Link,
        "response" => PredictScale::Response,
        other => return Err(Error::Invalid(format!("unknown scale `{other}`"))),
    };
    let pred = m.predict(&data, scale, args.se, args.extrapolate)?;
    let term_preds = if args.terms {
        Some(m.predict_terms(&data, false, args.extrapolate)?)
    } else {
        None
    };
    let mut out = String::from("fit");
    if args.se {
        out.push_str(",se");
    }
    if let Some(tp) = &term_preds {
        for t in tp {
            let _ = write!(out, ",\"{}\"", t.label);
        }
    }
    out.push('\n');
    for i in 0..data.n {
        let _ = write!(out, "{}", pred.fit[i]);
        if let Some(se) = &pred.se {
            let _ = write!(out, ",{}", se[i]);
        }
        if let Some(tp) = &term_preds {
            for t in tp {
                let _ = write!(out, ",{}", t.fit[i]);
            }
        }
        out.push('\n');
    }
    emit(&args.out, &out)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let scenario = sim::Scenario::parse(&args.scenario)?;
    let csv = sim::simulate(scenario, args.seed, args.n, args.rho);
    emit(&args.out, &csv)
}

fn cmd_plotdata(args: &PlotArgs) -> Result<(), Error> {
    let m = FittedModel::load(&args.model)?;
    // try 1-D first, then fall back to a surface
    match plot::term_plot_1d(&m, &args.term, args.grid) {
        Ok(pd) => {
            if let Some(svg_path) = &args.svg {
                std::fs::write(svg_path, plot::svg_line(&pd))?;
            }
            emit(&args.out, &pd.to_csv())
        }
        Err(Error::UnknownTerm(t)) => Err(Error::UnknownTerm(t)),
        Err(_) => {
            let pd = plot::term_plot_2d(&m, &args.term, args.grid.min(40))?;
            if let Some(svg_path) = &args.svg {
                std::fs::write(svg_path, plot::svg_heatmap(&pd))?;
            }
            emit(&args.out, &pd.to_csv())
        }
    }
}

fn cmd_acf(args: &AcfArgs) -> Result<(), Error> {
    let m = FittedModel::load(&args.model)?;
    let raw = plot::acf(&m.residuals, args.max_lag)?;
    let std = match (m.rho, &m.ar_starts) {
        (Some(rho), Some(starts)) => {
            let w = scopfit::ar1::std_residuals(&m.residuals, rho, starts)?;
            Some(plot::acf(&w, args.max_lag)?)
        }
        _ => None,
    };
    let mut out = String::from("lag,acf");
    if std.is_some() {
        out.push_str(",acf_standardized");
    }
    out.push('\n');
    for (lag, a) in raw.iter().enumerate() {
        let _ = write!(out, "{lag},{a}");
        if let Some(sa) = &std {
            let _ = write!(out, ",{}", sa[lag]);
        }
        out.push('\n');
    }
    emit(&args.out, &out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Plotdata(a) => cmd_plotdata(a),
        Command::Acf(a) => cmd_acf(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
