use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("boost speed {0} is not below 1")]
    SpeedNotSubluminal(f64),
    #[error("matrix is not a Lorentz transform (metric defect {0:.3e})")]
    NotLorentz(f64),
    #[error("hypersurface normal must be unit timelike and future-pointing (n·n = {norm_sqr}, n⁰ = {n0})")]
    BadNormal { norm_sqr: f64, n0: f64 },

    #[error("term {term} has {got} modes, expected {expected}")]
    BadArity { term: usize, got: usize, expected: usize },
    #[error("mass must be positive, got {0}")]
    NonpositiveMass(f64),
    #[error("particle count must be at least 1")]
    NoParticles,
    #[error("wave function needs at least one term")]
    EmptyExpansion,
    #[error("term count {0} exceeds the limit of {max}", max = crate::wavefunction::MAX_TERMS)]
    TooManyTerms(usize),
    #[error("wave function is already symmetrized")]
    AlreadySymmetrized,
    #[error("symmetrization refused for n = {0} (limit {max})", max = crate::wavefunction::MAX_SYMMETRIZE_N)]
    SymmetrizeTooLarge(usize),
    #[error("configuration has {got} points, wave function has {expected} particles")]
    ArityMismatch { got: usize, expected: usize },
    #[error("particle index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("spacetime index {0} out of range")]
    BadComponent(usize),

    #[error("wave function node: |ψ|² = {density:.3e} at or below threshold {threshold:.3e}")]
    NodeEncountered { density: f64, threshold: f64 },
    #[error("trajectory samples are not uniformly spaced in s (gaps {0} and {1})")]
    NonuniformSpacing(f64, f64),
    #[error("point is {0:.3e} away from the hypersurface")]
    NotOnSurface(f64),
    #[error("operation requires a single-particle wave function (n = {0})")]
    NotSingleParticle(usize),

    #[error("invalid surface patch: {0}")]
    BadPatch(String),
    #[error("initial surface density is negative (j = {density:.6e}) at adapted coordinates {coords:?}")]
    InitialDensityNegative { density: f64, coords: [f64; 3] },
    #[error("no positive density found on the sampling patch")]
    MaxDensityNotFound,
    #[error("{unresolved} of {total} cells are unresolved (allowed fraction {allowed})")]
    TooManyUnresolved { unresolved: usize, total: usize, allowed: f64 },
    #[error("ensemble result and partition are defined on different patches")]
    PatchMismatch,
    #[error("initial surface must lie strictly before the measurement surface")]
    SurfacesOutOfOrder,

    #[error("invalid configuration: {0}")]
    Config(String),
}
