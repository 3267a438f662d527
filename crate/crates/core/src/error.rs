use alloc::string::String;

/// Errors produced by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("singular warp (det = {det})")]
    SingularWarp { det: f64 },
    #[error("image too small: need at least {need_w}x{need_h}, got {got_w}x{got_h}")]
    ImageTooSmall {
        need_w: usize,
        need_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("point ({x}, {y}) outside image bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("degenerate patch (no gradient structure)")]
    DegeneratePatch,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid geotag: {0}")]
    InvalidGeoTag(String),
}

pub type Result<T> = core::result::Result<T, Error>;
