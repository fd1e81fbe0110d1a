use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("pole of the kernel transform at lambda = {0}")]
    Pole(Complex64),
    #[error("Re lambda = {re} is outside the half plane Re lambda > {bound}")]
    Domain { re: f64, bound: f64 },
    #[error("kernel term {term} has Re a = {re_decay}, which must exceed rho = {rho}")]
    Admissibility { term: usize, re_decay: f64, rho: f64 },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("|det Delta| = {value:e} below tolerance at lambda = {lambda} on the contour")]
    BoundaryRoot { lambda: Complex64, value: f64 },
    #[error("root search did not converge: {0}")]
    RootNonconvergence(String),
    #[error("root at Re lambda = {0:e} is neither central nor separated from the imaginary axis")]
    DegenerateGap(f64),
    #[error("root {lambda} has multiplicity {multiplicity}; only simple central roots are supported")]
    Multiplicity { lambda: Complex64, multiplicity: usize },
    #[error("singular pairing matrix (determinant {0:e})")]
    SingularGram(f64),
    #[error("mollifier extrapolation of H did not settle (change {0:e})")]
    ExtrapolationDivergence(f64),
    #[error("no admissible cutoff radius above 1e-12")]
    NoAdmissibleDelta,
    #[error("fixed-point iteration failed after {iterations} iterations (last increment {increment:e}); enlarge {hint}")]
    FixedPointNonconvergence {
        iterations: usize,
        increment: f64,
        hint: &'static str,
    },
    #[error("Neumann series stalled (term ratio {0})")]
    SeriesStall(f64),
    #[error("operation requires a hyperbolic equilibrium, found {0} central roots")]
    Hyperbolicity(usize),
    #[error("operation requires {expected} central dimensions, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("solution blew up at t = {t} (|x| = {value:e})")]
    BlowUp { t: f64, value: f64 },
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
