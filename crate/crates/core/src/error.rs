use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// Pipeline stage, used to tag errors coming out of [`crate::pipeline::run_mrf`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Refine,
    Superpixel,
    RegionGraph,
    Merge,
    Select,
    Finalize,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Refine => "refine_seed",
            Stage::Superpixel => "slic",
            Stage::RegionGraph => "build_region_graph",
            Stage::Merge => "hierarchical_merge",
            Stage::Select => "select_text_segments",
            Stage::Finalize => "finalize_mask",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("cannot encode {path}: {reason}")]
    Encode { path: PathBuf, reason: String },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("mask {width}x{height} too small for structuring element of radius {radius}")]
    MaskTooSmall {
        width: usize,
        height: usize,
        radius: usize,
    },

    #[error("image {width}x{height} too small, need at least {min}x{min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("invalid superpixel count k={k} for {pixels} pixels")]
    InvalidK { k: usize, pixels: usize },

    #[error("mask corpus has no masks in any category")]
    EmptyCorpus,

    #[error("mix ratios invalid: {0}")]
    RatioInvalid(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset root missing: {0}")]
    RootMissing(PathBuf),

    #[error("no image pairs found under {0}")]
    NoPairsFound(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
