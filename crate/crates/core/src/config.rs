//! Top-level JSON configuration, one section per module config type.
//!
//! ```json
//! { "refine": {...}, "slic": {...}, "merge": {...}, "select": {...},
//!   "metrics": {...}, "mix": {...} }
//! ```
//!
//! Every section and field is optional and falls back to its default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskmix::MixRatios;
use crate::merge::{MergeConfig, SelectConfig};
use crate::metrics::MetricConfig;
use crate::morphology::RefineConfig;
use crate::pipeline::MrfConfig;
use crate::superpixel::SlicParams;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub refine: RefineConfig,
    pub slic: SlicParams,
    pub merge: MergeConfig,
    pub select: SelectConfig,
    pub metrics: MetricConfig,
    pub mix: MixRatios,
}

impl Config {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn mrf(&self) -> MrfConfig {
        MrfConfig {
            refine: self.refine,
            slic: self.slic,
            merge: self.merge,
            select: self.select,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.refine.validate()?;
        if self.slic.k == 0 || !(self.slic.compactness > 0.0) {
            return Err(Error::Config("slic.k must be >= 1 and slic.compactness > 0".into()));
        }
        self.merge.validate()?;
        self.select.validate()?;
        self.metrics.validate()?;
        self.mix.validate()
    }
}
