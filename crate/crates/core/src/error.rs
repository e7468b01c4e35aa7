use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("distance matrix is not square: {rows} rows, row {row} has {len} entries")]
    NonSquare { rows: usize, row: usize, len: usize },

    #[error("negative distance {value} at ({i}, {j})")]
    NegativeEntry { i: usize, j: usize, value: f64 },

    #[error("non-finite distance at ({i}, {j})")]
    NonFiniteEntry { i: usize, j: usize },

    #[error("metric space has no points")]
    EmptySpace,

    #[error("subset is empty")]
    EmptySubset,

    #[error("space has {n} points, exhaustive search is limited to {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),

    #[error("generator list has no identity map")]
    MissingIdentity,

    #[error("generator {0} has no inverse in the list")]
    MissingInverse(usize),

    #[error("trajectory blew up at time {time} (point {point})")]
    BlowUp { point: usize, time: f64 },

    #[error("curve time grids differ: {0} vs {1} samples")]
    GridMismatch(usize, usize),

    #[error("bundle at point {0} does not start with the constant curve")]
    MissingConstantCurve(usize),

    #[error("bundles are not nested across the radius grid at point {point}: {detail}")]
    NonNestedBundles { point: usize, detail: String },

    #[error("scale factor must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("radius must be nonnegative, got {0}")]
    NegativeRadius(f64),

    #[error("velocity at sample {0} is not in the span of the generators")]
    UnresolvableVelocity(usize),

    #[error("curve has zero length")]
    ZeroLength,

    #[error("curve endpoints do not match: gap {0}")]
    EndpointMismatch(f64),

    #[error("bad restriction interval [{0}, {1}]")]
    BadInterval(f64, f64),

    #[error("vector is not in the range of the anchor (residual {0})")]
    NotInRange(f64),

    #[error("norm vanishes on a nonzero direction (sample {0})")]
    DegenerateDirection(usize),

    #[error("control norm is invalid: {0}")]
    InvalidNorm(String),

    #[error("accessibility probing requires symmetric controls")]
    AsymmetricControls,

    #[error("fit window has {got} grid points, at least 3 are required")]
    WindowTooSmall { got: usize },

    #[error("no epsilon in the grid resolves growth (all levels saturated)")]
    Unresolved,

    #[error("negative input: {0}")]
    NegativeInput(String),

    #[error("system is not controllable: {0} accessibility classes")]
    NotControllable(usize),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("bad override `{key}`: {reason}")]
    BadOverride { key: String, reason: String },

    #[error("unknown sweep parameter `{0}`")]
    UnknownParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Short machine-readable tag, used in `errors.json`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonSquare { .. } => "NonSquare",
            Error::NegativeEntry { .. } => "NegativeEntry",
            Error::NonFiniteEntry { .. } => "NonFiniteEntry",
            Error::EmptySpace => "EmptySpace",
            Error::EmptySubset => "EmptySubset",
            Error::TooLarge { .. } => "TooLarge",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::NonPositiveEpsilon(_) => "NonPositiveEpsilon",
            Error::MissingIdentity => "MissingIdentity",
            Error::MissingInverse(_) => "MissingInverse",
            Error::BlowUp { .. } => "BlowUp",
            Error::GridMismatch(..) => "GridMismatch",
            Error::MissingConstantCurve(_) => "MissingConstantCurve",
            Error::NonNestedBundles { .. } => "NonNestedBundles",
            Error::NonPositiveScale(_) => "NonPositiveScale",
            Error::NegativeRadius(_) => "NegativeRadius",
            Error::UnresolvableVelocity(_) => "UnresolvableVelocity",
            Error::ZeroLength => "ZeroLength",
            Error::EndpointMismatch(_) => "EndpointMismatch",
            Error::BadInterval(..) => "BadInterval",
            Error::NotInRange(_) => "NotInRange",
            Error::DegenerateDirection(_) => "DegenerateDirection",
            Error::InvalidNorm(_) => "InvalidNorm",
            Error::AsymmetricControls => "AsymmetricControls",
            Error::WindowTooSmall { .. } => "WindowTooSmall",
            Error::Unresolved => "Unresolved",
            Error::NegativeInput(_) => "NegativeInput",
            Error::NotControllable(_) => "NotControllable",
            Error::UnknownScenario(_) => "UnknownScenario",
            Error::BadOverride { .. } => "BadOverride",
            Error::UnknownParameter(_) => "UnknownParameter",
            Error::Config(_) => "Config",
            Error::Shape(_) => "Shape",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
            Error::Parse(_) => "Parse",
        }
    }

    /// True for errors caused by inputs/configuration rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::UnknownScenario(_)
                | Error::BadOverride { .. }
                | Error::UnknownParameter(_)
                | Error::Config(_)
                | Error::Parse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
