use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// Variants are grouped by the stage that raises them. [`Error::name`] gives
/// the stable identifier used in CLI diagnostics and the C API.
#[derive(Debug, Error)]
pub enum Error {
    // raster I/O
    #[error("unknown file magic in {0}")]
    UnknownMagic(String),
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("header field missing or invalid: {0}")]
    HeaderFieldMissing(String),
    #[error("value out of range for format: {0}")]
    RangeError(String),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),

    // geometry
    #[error("homography is singular (|det| = {0:e})")]
    SingularHomography(f64),
    #[error("point maps to infinity under homography")]
    PointAtInfinity,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    // rpc
    #[error("rpc denominator near zero ({0:e})")]
    DenominatorNearZero(f64),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular jacobian in rpc inversion")]
    SingularJacobian,
    #[error("missing rpc coefficient {0}")]
    MissingCoefficient(String),
    #[error("malformed number: {0}")]
    MalformedNumber(String),

    // matches
    #[error("malformed match line {0}")]
    MalformedLine(usize),
    #[error("match file contains no matches")]
    EmptyFile,
    #[error("image too small for matching: {0}x{1}")]
    ImageTooSmall(u32, u32),
    #[error("match set is empty")]
    EmptyMatchSet,
    #[error("automatic matching found {found} matches, {required} required")]
    MatchFailure { found: usize, required: usize },

    // supervision / dense / reconstruction
    #[error("raster has no geotransform")]
    NoGeotransform,
    #[error("raster crs tag missing or not a local frame: {0}")]
    BadCrs(String),
    #[error("dsm does not overlap the image frame")]
    EmptyOverlap,
    #[error("bad disparity range [{0}, {1}]")]
    BadDisparityRange(f64, f64),
    #[error("disparity map has mixed signs (min {min}, max {max})")]
    BipolarDisparity { min: f32, max: f32 },
    #[error("no valid input samples")]
    EmptyInput,
    #[error("altitude search pinned at bound {h} (residual {residual} px)")]
    OutOfBounds { h: f64, residual: f64 },

    // evaluation
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("frame mismatch: {0}")]
    FrameMismatch(String),
    #[error("no evaluable pixels")]
    NoEvaluablePixels,
    #[error("empty group: {0}")]
    EmptyGroup(String),
    #[error("not enough {label} pairs in {aoi}: {found} of {wanted}")]
    InsufficientPairs { aoi: String, label: String, found: usize, wanted: usize },

    // artifacts
    #[error("hash mismatch for {path}: recorded {recorded}, found {found}")]
    HashMismatch { path: String, recorded: String, found: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Stable identifier of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::UnknownMagic(_) => "UnknownMagic",
            Error::TruncatedFile(_) => "TruncatedFile",
            Error::HeaderFieldMissing(_) => "HeaderFieldMissing",
            Error::RangeError(_) => "RangeError",
            Error::InvalidRaster(_) => "InvalidRaster",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
            Error::SingularHomography(_) => "SingularHomography",
            Error::PointAtInfinity => "PointAtInfinity",
            Error::DegenerateConfiguration(_) => "DegenerateConfiguration",
            Error::DegenerateGeometry(_) => "DegenerateGeometry",
            Error::DenominatorNearZero(_) => "DenominatorNearZero",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::SingularJacobian => "SingularJacobian",
            Error::MissingCoefficient(_) => "MissingCoefficient",
            Error::MalformedNumber(_) => "MalformedNumber",
            Error::MalformedLine(_) => "MalformedLine",
            Error::EmptyFile => "EmptyFile",
            Error::ImageTooSmall(..) => "ImageTooSmall",
            Error::EmptyMatchSet => "EmptyMatchSet",
            Error::MatchFailure { .. } => "MatchFailure",
            Error::NoGeotransform => "NoGeotransform",
            Error::BadCrs(_) => "BadCrs",
            Error::EmptyOverlap => "EmptyOverlap",
            Error::BadDisparityRange(..) => "BadDisparityRange",
            Error::BipolarDisparity { .. } => "BipolarDisparityError",
            Error::EmptyInput => "EmptyInput",
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::GridMismatch(_) => "GridMismatch",
            Error::FrameMismatch(_) => "FrameMismatch",
            Error::NoEvaluablePixels => "NoEvaluablePixels",
            Error::EmptyGroup(_) => "EmptyGroup",
            Error::InsufficientPairs { .. } => "InsufficientPairs",
            Error::HashMismatch { .. } => "HashMismatch",
            Error::InvalidInput(_) => "InvalidInput",
        }
    }

    /// True for failures of a numerical procedure rather than bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularHomography(_)
                | Error::PointAtInfinity
                | Error::DegenerateConfiguration(_)
                | Error::DegenerateGeometry(_)
                | Error::DenominatorNearZero(_)
                | Error::NoConvergence { .. }
                | Error::SingularJacobian
                | Error::OutOfBounds { .. }
                | Error::MatchFailure { .. }
        )
    }
}
