use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Format,
    Config,
    Data,
    Numeric,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Io => 3,
            ErrorCategory::Format => 4,
            ErrorCategory::Config => 5,
            ErrorCategory::Data => 6,
            ErrorCategory::Numeric => 7,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Io => "io",
            ErrorCategory::Format => "format",
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Numeric => "numeric",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{context}: line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    // lexicon
    #[error("lexicon has no labels")]
    EmptyLexicon,
    #[error("duplicate label name `{0}`")]
    DuplicateLabel(String),
    #[error("unknown class kind `{0}` (expected `thing` or `stuff`)")]
    UnknownKind(String),
    #[error("synonym `{synonym}` maps to both `{first}` and `{second}`")]
    DuplicateSynonym {
        synonym: String,
        first: String,
        second: String,
    },
    #[error("label `{0}` has no usable tokens")]
    EmptyLabelName(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),

    // corpus
    #[error("image {0} has an empty caption list")]
    EmptyCaptions(u64),
    #[error("image {0} appears in more than one caption set")]
    DuplicateImage(u64),
    #[error("window must be at least 1")]
    InvalidWindow,

    // embedding
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("corpus yields no (center, context) pairs")]
    EmptyPairStream,
    #[error("loss became non-finite at step {step}; lower the learning rate")]
    NonFiniteLoss { step: usize },
    #[error("embedding contains non-finite values")]
    NonFiniteEmbedding,
    #[error("cosine similarity of a zero-norm vector")]
    ZeroNorm,
    #[error("vector lengths differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("token `{0}` is not in the embedding vocabulary")]
    UnknownToken(String),
    #[error("k = {k} must satisfy 1 <= k < {vocab}")]
    InvalidNeighborCount { k: usize, vocab: usize },
    #[error("t-SNE needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("perplexity {perplexity} is infeasible for {points} points")]
    InfeasiblePerplexity { perplexity: f64, points: usize },

    // relation
    #[error("class {0} is not a thing in this scene")]
    NotAThing(usize),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid detector config: {0}")]
    InvalidDetectorConfig(String),

    // mask
    #[error("label map pixel value {0} is not a lexicon id")]
    UnknownPixelClass(u8),
    #[error("mask is {got:?} but {expected:?} was expected")]
    MaskSize {
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("no thing masks to sample from")]
    NoSourceMasks,
    #[error("could not sample a mask within the area bounds after {0} attempts")]
    MaskSamplingFailed(usize),
    #[error("invalid mask config: {0}")]
    InvalidMaskConfig(String),

    // inpaint
    #[error("mask covers the whole image; nothing to fill from")]
    FullFrameMask,
    #[error("no source patch lies fully outside the mask")]
    NoSourcePatch,
    #[error("invalid inpaint config: {0}")]
    InvalidInpaintConfig(String),

    // eval
    #[error("classes `{0}` and `{1}` never occur in the dataset")]
    EmptyUnion(String, String),
    #[error("sequences have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples for a correlation, got {0}")]
    TooFewSamples(usize),
    #[error("constant sequence has zero variance")]
    ZeroVariance,

    // pipeline
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("no label map for image `{0}`")]
    MissingLabelMap(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            line,
            message: message.into(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            Io { .. } => ErrorCategory::Io,
            Image { .. } | Json { .. } | Parse { .. } => ErrorCategory::Format,
            InvalidTrainConfig(_)
            | InvalidDetectorConfig(_)
            | InvalidMaskConfig(_)
            | InvalidInpaintConfig(_)
            | InvalidConfig(_)
            | InvalidWindow
            | InvalidNeighborCount { .. }
            | InfeasiblePerplexity { .. } => ErrorCategory::Config,
            NonFiniteLoss { .. } | NonFiniteEmbedding | ZeroNorm | ZeroVariance => ErrorCategory::Numeric,
            _ => ErrorCategory::Data,
        }
    }

    /// Stable snake_case code recorded in run manifests.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            Io { .. } => "io",
            Image { .. } => "unreadable_image",
            Json { .. } => "bad_json",
            Parse { .. } => "parse",
            EmptyLexicon => "empty_lexicon",
            DuplicateLabel(_) => "duplicate_label",
            UnknownKind(_) => "unknown_kind",
            DuplicateSynonym { .. } => "duplicate_synonym",
            EmptyLabelName(_) => "empty_label_name",
            UnknownClass(_) => "unknown_class",
            EmptyCaptions(_) => "empty_captions",
            DuplicateImage(_) => "duplicate_image",
            InvalidWindow => "invalid_window",
            InvalidTrainConfig(_) => "invalid_train_config",
            EmptyPairStream => "empty_pair_stream",
            NonFiniteLoss { .. } => "non_finite_loss",
            NonFiniteEmbedding => "non_finite_embedding",
            ZeroNorm => "zero_norm",
            DimensionMismatch(..) => "dimension_mismatch",
            UnknownToken(_) => "unknown_token",
            InvalidNeighborCount { .. } => "invalid_neighbor_count",
            TooFewPoints(_) => "too_few_points",
            InfeasiblePerplexity { .. } => "infeasible_perplexity",
            NotAThing(_) => "not_a_thing",
            InvalidScene(_) => "invalid_scene",
            InvalidDetectorConfig(_) => "invalid_detector_config",
            UnknownPixelClass(_) => "unknown_pixel_class",
            MaskSize { .. } => "mask_size",
            NoSourceMasks => "no_source_masks",
            MaskSamplingFailed(_) => "mask_sampling_failed",
            InvalidMaskConfig(_) => "invalid_mask_config",
            FullFrameMask => "full_frame_mask",
            NoSourcePatch => "no_source_patch",
            InvalidInpaintConfig(_) => "invalid_inpaint_config",
            EmptyUnion(..) => "empty_union",
            LengthMismatch(..) => "length_mismatch",
            TooFewSamples(_) => "too_few_samples",
            ZeroVariance => "zero_variance",
            InvalidConfig(_) => "invalid_config",
            MissingLabelMap(_) => "missing_label_map",
        }
    }
}
