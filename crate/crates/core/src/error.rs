use thiserror::Error;

/// Errors surfaced by the navigation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scene generation failed: {0}")]
    SceneGeneration(String),

    #[error("pose on blocked cell at ({0:.2}, {1:.2})")]
    BlockedPose(f64, f64),

    #[error("obstacle placement failed: {0}")]
    ObstaclePlacement(String),

    #[error("graph is empty")]
    EmptyGraph,

    #[error("node {0} has no frames assigned")]
    EmptyRegion(u32),

    #[error("unknown node id {0}")]
    UnknownNode(u32),

    #[error("invariant violated: {0}")]
    InvariantViolated(String),

    #[error("episode spec invalid: {0}")]
    InvalidEpisode(String),

    #[error("no episode results to aggregate")]
    EmptyResults,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("file format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
