use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient points: requested {requested}, cloud has {available}")]
    InsufficientPoints { requested: usize, available: usize },

    #[error("k too large: k={k} requires more than {n} points")]
    KTooLarge { k: usize, n: usize },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("non-finite coordinate at point {0}")]
    NonFiniteCoordinate(usize),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape; re-run the forward pass")]
    BackwardTwice,

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("degenerate embedding: row {0} has zero norm")]
    DegenerateEmbedding(usize),

    #[error("missing labels: {0}")]
    MissingLabels(String),

    #[error("bad category one-hot vector: {0}")]
    BadOneHot(String),

    #[error("class count mismatch: head has {head}, data has {data}")]
    ClassCountMismatch { head: usize, data: usize },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("row count mismatch: header declares {expected}, found {found}")]
    RowCountMismatch { expected: usize, found: usize },

    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload")]
    TruncatedPayload,

    #[error("shape-table mismatch: {0}")]
    ShapeTableMismatch(String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("unknown shape kind {0:?}")]
    UnknownShapeKind(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// True for numeric breakdowns: NaN/Inf or a zero-norm embedding.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::DegenerateEmbedding(_))
    }

    /// True for errors caused by the input data or files rather than usage.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::InsufficientPoints { .. }
                | Error::EmptyCloud
                | Error::NonFiniteCoordinate(_)
                | Error::MissingLabels(_)
                | Error::ClassCountMismatch { .. }
                | Error::MalformedHeader(_)
                | Error::RowCountMismatch { .. }
                | Error::MalformedRow { .. }
                | Error::BadMagic { .. }
                | Error::UnsupportedVersion(_)
                | Error::TruncatedPayload
                | Error::ShapeTableMismatch(_)
                | Error::DegenerateMesh(_)
                | Error::Io(_)
        )
    }
}
