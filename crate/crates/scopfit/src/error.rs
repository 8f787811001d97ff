use thiserror::Error;

/// Errors produced anywhere in the fitting pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("constant covariate: `{0}` has fewer than 2 distinct values")]
    ConstantCovariate(String),

    #[error("basis dimension {q} too small: need at least {min} for {context}")]
    BasisTooSmall { q: usize, min: usize, context: String },

    #[error("point {x} outside the basis range [{lo}, {hi}] (use --extrapolate to clamp)")]
    OutOfRange { x: f64, lo: f64, hi: f64 },

    #[error("unknown constraint code `{0}`")]
    UnknownConstraint(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("syntax error at byte {offset}: expected {expected}, found `{found}`")]
    Syntax {
        offset: usize,
        expected: String,
        found: String,
    },

    #[error("duplicate named argument `{0}`")]
    DuplicateArg(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("column `{col}`: expected {expected}, found {found}")]
    ColumnType {
        col: String,
        expected: String,
        found: String,
    },

    #[error("matrix shape mismatch: `{a}` is {a_dims} but `{b}` is {b_dims}")]
    MatrixShapeMismatch {
        a: String,
        a_dims: String,
        b: String,
        b_dims: String,
    },

    #[error("invalid family/link pair: {family}/{link}")]
    InvalidFamilyLink { family: String, link: String },

    #[error("AR1 requires gaussian identity")]
    Ar1RequiresGaussianIdentity,

    #[error("AR1 correlation must satisfy |rho| < 1, got {0}")]
    InvalidRho(f64),

    #[error("factor column `{0}` has a single level")]
    SingleLevelFactor(String),

    #[error("functional term row {row} has fewer than 2 observation points")]
    ShortFunctionalRow { row: usize },

    #[error("empty data: no complete rows")]
    EmptyData,

    #[error("scale estimate undefined: n = {n} <= edf = {tau}")]
    ScaleUndefined { n: usize, tau: f64 },

    #[error("fit did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("unknown term `{0}`")]
    UnknownTerm(String),

    #[error("unsupported direction combination: {0}")]
    UnsupportedDirection(String),

    #[error("csv error at line {line}: {msg}")]
    Csv { line: u64, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("{0}")]
    Invalid(String),
}
