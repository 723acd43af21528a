use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // geometry
    #[error("cayley singularity: rotation angle {0:.6} rad is too close to 180 degrees")]
    CayleySingularity(f64),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("non-positive inverse depth {0}")]
    NonPositiveInverseDepth(f64),
    #[error("trajectory contains no poses")]
    NoPoses,
    #[error("trajectory timestamps must be strictly increasing ({prev} then {next})")]
    NonIncreasingTimestamp { prev: f64, next: f64 },
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),

    // time surfaces
    #[error("pixel ({x}, {y}) out of range for a {width}x{height} sensor")]
    PixelOutOfRange {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },
    #[error("non-monotonic stream: event at {next} s after {prev} s")]
    NonMonotonicStream { prev: f64, next: f64 },
    #[error("invalid decay {0} (must be > 0)")]
    InvalidDecay(f64),
    #[error("invalid kernel size {0} (must be odd and >= 1)")]
    InvalidKernel(usize),
    #[error("sample ({0}, {1}) out of bounds")]
    SampleOutOfBounds(f64, f64),
    #[error("gradient at ({0}, {1}) out of bounds")]
    GradientOutOfBounds(f64, f64),

    // mapping
    #[error("degenerate patch (zero variance)")]
    DegeneratePatch,
    #[error("no stereo match above the acceptance threshold")]
    NoMatch,
    #[error("patch out of bounds")]
    PatchOutOfBounds,
    #[error("insufficient support: {valid} valid of {required} required")]
    InsufficientSupport { valid: usize, required: usize },
    #[error("unobservable depth (zero jacobian)")]
    UnobservableDepth,
    #[error("solver diverged")]
    Diverged,
    #[error("zero spread in residual samples")]
    ZeroSpread,
    #[error("too few samples: {got} (need {need})")]
    TooFewSamples { got: usize, need: usize },
    #[error("zero jacobian norm")]
    ZeroJacobian,
    #[error("undefined variance for nu = {0} (need nu > 2)")]
    UndefinedVariance(f64),
    #[error("non-positive scale")]
    NonPositiveScale,
    #[error("estimate projects outside the target image")]
    OutsideImage,
    #[error("depth map is empty")]
    EmptyMap,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // tracking
    #[error("warp invalid")]
    WarpInvalid,
    #[error("huber threshold must be > 0, got {0}")]
    InvalidHuberThreshold(f64),

    // simulator
    #[error("camera is inside a scene plane")]
    CameraInsidePlane,
    #[error("frame rate too low: {0:.3} px displacement between frames")]
    FrameRateTooLow(f64),

    // pipeline
    #[error("cannot bootstrap: {active} active pixels (need {required})")]
    CannotBootstrap { active: usize, required: usize },
    #[error("trajectories do not overlap")]
    NoOverlap,
    #[error("no valid relative pose pairs")]
    NoValidPairs,

    // io
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Data errors are problems with inputs; everything else is a runtime failure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::MissingKey(_)
                | Error::UnknownKey(_)
                | Error::Io(_)
                | Error::InvalidConfig(_)
                | Error::InvalidCamera(_)
                | Error::PixelOutOfRange { .. }
                | Error::NonMonotonicStream { .. }
                | Error::NonIncreasingTimestamp { .. }
                | Error::CannotBootstrap { .. }
                | Error::NoOverlap
                | Error::NoPoses
        )
    }
}
