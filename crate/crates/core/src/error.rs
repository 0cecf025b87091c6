use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Dims;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("tensor extents must all be >= 1, got {0}")]
    ZeroExtent(Dims),
    #[error("tensor {dims} needs {expected} values, got {actual}")]
    DataLength {
        dims: Dims,
        expected: usize,
        actual: usize,
    },
    #[error("bias length {actual} does not match {out_channels} output channels")]
    BiasLength { out_channels: usize, actual: usize },
    #[error("channel mismatch: input has {input} channels, weights expect {weights}")]
    ChannelMismatch { input: usize, weights: usize },
    #[error("extent mismatch: {left} vs {right}")]
    ExtentMismatch { left: Dims, right: Dims },
    #[error("channel range {start}..{} out of bounds for {channels} channels", start + count)]
    ChannelRange {
        start: usize,
        count: usize,
        channels: usize,
    },
    #[error("unsupported stride {0}; only 1 and 2 are allowed")]
    UnsupportedStride(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("levels must be in 2..=5, got {0}")]
    Levels(usize),
    #[error("expected {expected} channel widths (one per level), got {actual}")]
    ChannelCount { expected: usize, actual: usize },
    #[error("channel width for level {level} must be >= 1")]
    ZeroChannels { level: usize },
    #[error("convs_per_block must be >= 1")]
    ConvsPerBlock,
    #[error("fusion pattern `{pattern}` has length {actual}, expected levels - 1 = {expected}")]
    FusionLength {
        pattern: String,
        expected: usize,
        actual: usize,
    },
    #[error("invalid fusion symbol `{0}`; use '+', 'c' or '·'")]
    FusionSymbol(char),
    #[error("supervision_scales must be in 1..=min(4, levels) = 1..={max}, got {actual}")]
    SupervisionScales { max: usize, actual: usize },
    #[error("input resolution {width}x{height} is not divisible by 2^{levels} = {divisor}")]
    Resolution {
        width: usize,
        height: usize,
        levels: usize,
        divisor: usize,
    },
    #[error(
        "'+' fusion at 1/{scale} resolution needs equal widths: decoder has {decoder} channels, skip F{level} has {skip}"
    )]
    AddWidth {
        scale: usize,
        level: usize,
        decoder: usize,
        skip: usize,
    },
    #[error("upconv at level {level} would halve {channels} channels to zero")]
    UpconvWidth { level: usize, channels: usize },
    #[error("unknown variant `{0}`; expected rt-monodepth or rt-monodepth-s")]
    UnknownVariant(String),
    #[error("invalid resolution `{0}`; expected WxH, e.g. 640x192")]
    ResolutionSyntax(String),
    #[error("config parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad magic: expected \"RTMD\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    Version(u16),
    #[error("truncated file: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("duplicate entry name `{0}`")]
    DuplicateName(String),
    #[error("entry `{name}`: extents {extents:?} overflow")]
    ExtentOverflow { name: String, extents: Vec<u64> },
    #[error("entry `{name}`: rank {rank} exceeds 4")]
    Rank { name: String, rank: u8 },
    #[error("entry `{name}`: unknown dtype code {code}")]
    Dtype { name: String, code: u8 },
    #[error("entry name is not valid UTF-8")]
    NameUtf8,
    #[error("entry name `{0}` is longer than 65535 bytes")]
    NameTooLong(String),
    #[error(
        "entry `{name}`: extents {extents:?} describe {expected} values but data holds {actual}"
    )]
    DataLength {
        name: String,
        extents: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{} trailing bytes after last entry", .0)]
    TrailingBytes(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum BindError {
    #[error("missing weight `{entry}` for slot {slot}")]
    Missing { slot: String, entry: String },
    #[error("slot {slot}: extent mismatch for `{entry}`: network expects {expected:?}, store has {actual:?}")]
    Extents {
        slot: String,
        entry: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("store has entries not used by the network: {0:?} (pass allow_extra to ignore)")]
    Extra(Vec<String>),
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error("slot {0} has no weights bound")]
    Unbound(String),
    #[error("input extents {actual} do not match network input {expected}")]
    InputShape { expected: Dims, actual: Dims },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty evaluation set: no ground-truth pixels inside ({min_depth}, {max_depth}] and the crop")]
    EmptyEvaluation { min_depth: f64, max_depth: f64 },
    #[error("prediction {pred_w}x{pred_h} and ground truth {gt_w}x{gt_h} differ in size")]
    SizeMismatch {
        pred_w: usize,
        pred_h: usize,
        gt_w: usize,
        gt_h: usize,
    },
    #[error("invalid depth range: need 0 < min_depth ({0}) < max_depth ({1})")]
    DepthRange(f64, f64),
    #[error("crop {0:?} lies outside the image")]
    Crop(crate::eval::Crop),
    #[error("cannot aggregate an empty list of metrics")]
    EmptyAggregate,
    #[error("{path}: expected a 16-bit single-channel PNG, found {found}")]
    Format { path: PathBuf, found: String },
    #[error("png decode error on {path}: {message}")]
    Png { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum LossError {
    #[error("at least one source frame is required")]
    NoSources,
    #[error("{sources} sources but {poses} poses")]
    PoseCount { sources: usize, poses: usize },
    #[error("depth must be positive everywhere; found {0}")]
    NonPositiveDepth(f32),
    #[error("rotation is not orthonormal with det +1 (max deviation {0:e})")]
    Rotation(f64),
    #[error("intrinsics focal lengths must be positive, got fx={fx} fy={fy}")]
    Intrinsics { fx: f64, fy: f64 },
    #[error("depth outputs carry {available} scales, loss asked for {requested}")]
    Scales { available: usize, requested: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("online testing runs one image at a time; batch must be 1, got {0}")]
    OnlineBatch(usize),
    #[error("batch must be >= 1")]
    ZeroBatch,
    #[error("at least one measured iteration is required")]
    NoIterations,
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: unsupported image layout ({found}); expected 8-bit RGB PNG or binary PPM")]
    Unsupported { path: PathBuf, found: String },
}
