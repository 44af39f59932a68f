use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("link index {index} out of range for {links} links")]
    LinkIndex { index: usize, links: usize },

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("network is not iTree-ordered: link {interfered} is interfered by lower-indexed link {interferer}")]
    NotITree { interfered: usize, interferer: usize },

    #[error("interference digraph has a cycle; no iTree ordering exists")]
    NoITreeOrder,

    #[error("targets not achievable with these vectors: {0}")]
    Infeasible(String),

    #[error("stream count {streams} is below covariance rank {rank}")]
    TooFewStreams { streams: usize, rank: usize },

    #[error("positive power budget {0} with no usable subchannel")]
    NoSubchannel(f64),

    #[error("positive rate target {0} with no usable subchannel")]
    InfeasibleRate(f64),

    #[error("eigen-solve failed: {0}")]
    Eigen(String),

    #[error("invalid encoding order: {0}")]
    Order(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
