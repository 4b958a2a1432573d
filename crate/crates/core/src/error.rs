use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice dimensions: {0}")]
    Dimensions(String),
    #[error("edge set is not closed: vertex {vertex} has odd degree")]
    NotClosed { vertex: usize },
    #[error("branched flux configuration at triangle {triangle}")]
    Branched { triangle: usize },
    #[error("enumeration of 2^{size} terms exceeds cap 2^{cap}")]
    CapExceeded { size: usize, cap: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("matrix is not antisymmetric (max deviation {0:e})")]
    NotAntisymmetric(f64),
    #[error("matrix has odd dimension {0}")]
    OddDimension(usize),
    #[error("gapless sector: smallest |E| = {0:e}")]
    Gapless(f64),
    #[error("negative weight {0} encountered during sampling")]
    NegativeWeight(f64),
    #[error("group error: {0}")]
    Group(String),
    #[error("patch error: {0}")]
    Patch(String),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
