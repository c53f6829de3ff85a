//! MREAK: a binary keypoint descriptor with morphological opening/closing
//! branches over a retinal sampling pattern.
//!
//! The pipeline opens and closes an image pair, detects Harris corners on
//! each morphed image, describes them with variant-specific retinal patterns,
//! matches the two branches by Hamming distance with a ratio test, and merges
//! both match sets back onto the original images.

pub mod descriptor;
pub mod detector;
pub mod matcher;
pub mod morphology;
pub mod pipeline;
pub mod raster;
pub mod retina;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pnm: {0}")]
    PnmParse(String),
    #[error("pnm: unsupported maxval {0} (only 255)")]
    PnmMaxval(u32),
    #[error("pnm: truncated payload, expected {expected} bytes, found {found}")]
    PnmTruncated { expected: usize, found: usize },
    #[error("image data length {len} does not match {width}x{height}x{channels}")]
    BadImageShape {
        width: usize,
        height: usize,
        channels: u8,
        len: usize,
    },
    #[error("expected a single-channel image, got {0} channels")]
    NotSingleChannel(u8),
    #[error("structuring element sides must be odd and >= 1, got {width}x{height}")]
    BadStructuringElement { width: usize, height: usize },
    #[error("image {width}x{height} too small for block size {block}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        block: usize,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("pattern: {0}")]
    Pattern(String),
    #[error("pair selection: {0}")]
    PairSelection(String),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: [u8; 4] },
    #[error("file format: {0}")]
    FileFormat(String),
    #[error("descriptor bit count mismatch: {0} vs {1}")]
    BitCountMismatch(usize, usize),
    #[error("matcher: {0}")]
    Matcher(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
