use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("quadrature did not converge: error estimate {achieved:.3e} exceeds requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("Brownian oscillator with omega0 = {omega0} and damping = {damping} is not underdamped (needs omega0 > damping/2)")]
    NotUnderdamped { omega0: f64, damping: f64 },

    #[error("exponential reconstruction error {achieved:.3e} exceeds tolerance {tolerance:.3e}; increase the number of Matsubara terms")]
    ReconstructionTolerance { achieved: f64, tolerance: f64 },

    #[error("mode pairing failed: {0}")]
    Pairing(String),

    #[error("mode {mode} is degenerate: eta + conj(eta_bar) vanishes while eta - conj(eta_bar) does not")]
    DegenerateMode { mode: usize },

    #[error("{what} has imaginary residue {value:.3e} above tolerance")]
    ImaginaryResidue { what: String, value: f64 },

    #[error("hierarchy holds {count} operators, more than the configured maximum {max}; reduce the tier or the number of modes")]
    HierarchyTooLarge { count: u128, max: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{what} is not Hermitian (defect {defect:.3e})")]
    NonHermitian { what: String, defect: f64 },

    #[error("unphysical density matrix: {0}")]
    UnphysicalState(String),

    #[error("propagation diverged at t = {time}: operator {index} has norm {norm:.3e}")]
    BlowUp { index: String, norm: f64, time: f64 },

    #[error("insufficient truncation for requested moment: order {requested} needs tier {requested} but hierarchy depth is {depth}")]
    InsufficientTruncation { requested: usize, depth: usize },

    #[error("dissipaton coefficient zeta vanishes for mode {mode}")]
    ZeroCoefficient { mode: usize },

    #[error("missing entry: {0}")]
    MissingEntry(String),

    #[error("field error: {0}")]
    Field(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("convergence inconclusive: {0}")]
    Inconclusive(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
