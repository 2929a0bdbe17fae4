use thiserror::Error;

/// Errors raised anywhere in the solver pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not Hermitian (max asymmetry {asymmetry:.3e})")]
    NonHermitianInput { asymmetry: f64 },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("all eigenvalues are below the absolute floor")]
    ZeroMatrix,

    #[error("periodic lattice axis of length {0} is shorter than 3")]
    DegenerateLattice(usize),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("unknown lattice kind `{0}`")]
    UnknownLattice(String),

    #[error("invalid spin system: {0}")]
    InvalidSystem(String),

    #[error("term on edge ({0}, {1}) has rank {2}, expected 2 or 3")]
    RankOutOfRange(usize, usize, usize),

    #[error("single-spin term on site {0} has full rank")]
    FullRankSingleSite(usize),

    #[error("single-spin term on site {site} has rank {rank}, expected 1")]
    SingleSiteRank { site: usize, rank: usize },

    #[error("constraints on {first:?} and {second:?} do not share exactly one site")]
    SharedSiteMismatch {
        first: (usize, usize),
        second: (usize, usize),
    },

    #[error("input is outside the natural class: {0}")]
    NotNatural(String),

    #[error("system of {n} sites exceeds the limit of {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("residual constraint on ({0}, {1}) is inconsistent with the transported local factors")]
    InconsistentConstraints(usize, usize),

    #[error("operator support includes site {0}, which is not a root site")]
    SupportNotInRoots(usize),

    #[error("Hamiltonian is frustrated")]
    FrustratedInput,

    #[error("reference Hamiltonian for the ansatz subspace is frustrated")]
    FrustratedReference,

    #[error("pairs do not form a matching of lattice edges: {0}")]
    NotAMatching(String),

    #[error("site index {site} out of range for {n} sites")]
    SiteOutOfRange { site: usize, n: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error at {location}: {message}")]
    Validation { location: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
