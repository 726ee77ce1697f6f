//! Training-mask sampler mixing box, coarse-stroke and detailed-stroke masks,
//! plus masked reference-image composition.
//!
//! Draws are a pure function of `(seed, draw_count)`: draw `i` uses ChaCha8
//! seeded from the 64-bit seed with stream number `i`, so any draw can be
//! reproduced without replaying the ones before it.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, load_mask, BinaryMask, RgbImage};

/// Name of the generator behind [`SamplerState`], recorded in outputs.
pub const PRNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.3), stream = draw index";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskCategory {
    Box,
    Coarse,
    Detailed,
}

impl MaskCategory {
    pub const ALL: [MaskCategory; 3] = [MaskCategory::Box, MaskCategory::Coarse, MaskCategory::Detailed];

    pub fn tag(self) -> &'static str {
        match self {
            MaskCategory::Box => "box",
            MaskCategory::Coarse => "coarse",
            MaskCategory::Detailed => "detailed",
        }
    }
}

impl fmt::Display for MaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Mask files grouped by category. Paths are used as given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskCorpus {
    #[serde(default, rename = "box")]
    pub box_masks: Vec<PathBuf>,
    #[serde(default, rename = "coarse")]
    pub coarse_masks: Vec<PathBuf>,
    #[serde(default, rename = "detailed")]
    pub detailed_masks: Vec<PathBuf>,
}

#[derive(Deserialize)]
struct CorpusManifest {
    #[serde(default)]
    root: Option<PathBuf>,
    #[serde(flatten)]
    corpus: MaskCorpus,
}

impl MaskCorpus {
    pub fn list(&self, cat: MaskCategory) -> &[PathBuf] {
        match cat {
            MaskCategory::Box => &self.box_masks,
            MaskCategory::Coarse => &self.coarse_masks,
            MaskCategory::Detailed => &self.detailed_masks,
        }
    }

    pub fn is_empty(&self) -> bool {
        MaskCategory::ALL.iter().all(|&c| self.list(c).is_empty())
    }

    /// Reads a JSON corpus manifest `{root?, box, coarse, detailed}`.
    /// Relative entries resolve against `root`, which itself resolves against
    /// the manifest's directory.
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let raw: CorpusManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let root = match raw.root {
            Some(r) if r.is_absolute() => r,
            Some(r) => base.join(r),
            None => base.to_path_buf(),
        };
        let resolve = |v: Vec<PathBuf>| -> Vec<PathBuf> {
            v.into_iter()
                .map(|p| if p.is_absolute() { p } else { root.join(p) })
                .collect()
        };
        let c = raw.corpus;
        Ok(Self {
            box_masks: resolve(c.box_masks),
            coarse_masks: resolve(c.coarse_masks),
            detailed_masks: resolve(c.detailed_masks),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixRatios {
    pub p_box: f64,
    pub p_coarse: f64,
    pub p_detailed: f64,
}

impl Default for MixRatios {
    fn default() -> Self {
        Self {
            p_box: 0.20,
            p_coarse: 0.30,
            p_detailed: 0.50,
        }
    }
}

impl MixRatios {
    pub fn validate(&self) -> Result<()> {
        let p = [self.p_box, self.p_coarse, self.p_detailed];
        if p.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::RatioInvalid(format!("negative or NaN ratio in {p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::RatioInvalid(format!("ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    pub fn get(&self, cat: MaskCategory) -> f64 {
        match cat {
            MaskCategory::Box => self.p_box,
            MaskCategory::Coarse => self.p_coarse,
            MaskCategory::Detailed => self.p_detailed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SamplerState {
    pub rng_seed: u64,
    pub draw_count: u64,
}

impl SamplerState {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            rng_seed,
            draw_count: 0,
        }
    }
}

/// One sampler draw: category and index within that category's list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub category: MaskCategory,
    pub index: usize,
}

/// Picks a category by `ratios` (empty categories drop out and the remaining
/// mass is renormalized), then a mask uniformly within it.
pub fn draw(corpus: &MaskCorpus, ratios: &MixRatios, state: SamplerState) -> Result<(Draw, SamplerState)> {
    ratios.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let weights: Vec<(MaskCategory, f64)> = MaskCategory::ALL
        .iter()
        .map(|&c| (c, if corpus.list(c).is_empty() { 0.0 } else { ratios.get(c) }))
        .collect();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        // Only categories with zero ratio have masks.
        return Err(Error::RatioInvalid(
            "every non-empty mask category has ratio 0".into(),
        ));
    }
    if state.draw_count == 0 && (total - 1.0).abs() > 1e-12 {
        log::warn!("mask corpus has empty categories; renormalizing ratios over {total:.3} of the mass");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(state.rng_seed);
    rng.set_stream(state.draw_count);
    let u: f64 = rng.gen::<f64>() * total;

    let mut acc = 0.0;
    let mut category = None;
    for &(c, w) in &weights {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        category = Some(c);
        if u < acc {
            break;
        }
    }
    let category = category.expect("at least one positive weight");
    let index = rng.gen_range(0..corpus.list(category).len());
    let next = SamplerState {
        rng_seed: state.rng_seed,
        draw_count: state.draw_count + 1,
    };
    Ok((Draw { category, index }, next))
}

/// Draws and loads one mask.
pub fn sample_mask(
    corpus: &MaskCorpus,
    ratios: &MixRatios,
    state: SamplerState,
) -> Result<(BinaryMask, MaskCategory, SamplerState)> {
    let (d, next) = draw(corpus, ratios, state)?;
    let mask = load_mask(&corpus.list(d.category)[d.index])?;
    Ok((mask, d.category, next))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Zero the masked (text) pixels.
    KeepBackground,
    /// Zero everything outside the mask.
    KeepRegion,
}

/// Multiplies the image by the 0/1 mask (or its complement).
pub fn compose_reference(img: &RgbImage, mask: &BinaryMask, polarity: Polarity) -> Result<RgbImage> {
    ensure_same_dims(img.dims(), mask.dims())?;
    let mut data = img.data().to_vec();
    for (px, &m) in data.chunks_exact_mut(3).zip(mask.data()) {
        let keep = match polarity {
            Polarity::KeepBackground => !m,
            Polarity::KeepRegion => m,
        };
        if !keep {
            px.fill(0);
        }
    }
    RgbImage::new(img.width(), img.height(), data)
}
