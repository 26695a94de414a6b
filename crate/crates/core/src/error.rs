use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("invalid skin matrix: {0}")]
    InvalidSkin(String),
    #[error("mesh has zero extent along every axis")]
    DegenerateExtent,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("invalid token {token} at position {position}")]
    InvalidToken { token: u16, position: usize },
    #[error("token sequence holds no complete bone")]
    EmptySequence,
    #[error("sequence of {len} positions exceeds the context length {context}")]
    ContextOverflow { len: usize, context: usize },
    #[error("timestep {t} outside [0, {max}]")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("voxel grid holds no surface or interior cell")]
    EmptyVoxelGrid,
    #[error("bone graph is not a tree rooted at the root joint: {0}")]
    NotATree(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
