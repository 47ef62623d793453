use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal length must be even and positive, got {0}")]
    InvalidLength(usize),
    #[error("conjugate symmetry violated at frequency {freq} (residual {residual:.3e})")]
    ConjugateSymmetry { freq: i32, residual: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("network: {0}")]
    Network(String),
    #[error("memory budget exceeded: need {needed} bytes, cap is {cap} bytes")]
    OverBudget { needed: u64, cap: u64 },
    #[error("imaginary residue {residue:.3e} exceeds tolerance")]
    ImaginaryResidue { residue: f64 },
    #[error("power spectrum vanishes at frequency {freq} (|coefficient| = {magnitude:.3e})")]
    VanishingSpectrum { freq: i32, magnitude: f64 },
    #[error("enumeration budget exceeded after {count} labelings")]
    EnumerationBudget { count: u64 },
    #[error("region lemma violated: c = {c}, r = {r}, edge labels {edges:?}, vertex labels {vertices:?}")]
    RegionViolation { c: usize, r: usize, edges: Vec<i32>, vertices: Vec<u8> },
    #[error("trial {trial}: {source}")]
    Trial { trial: usize, source: Box<Error> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
