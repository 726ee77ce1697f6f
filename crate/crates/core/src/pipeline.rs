//! Mask refinement pipeline: seed refinement, superpixels, region merging,
//! seed-guided selection and final dilation.
//!
//! The seed is used after merging: merged regions are selected by their
//! overlap with the refined seed, not used to steer the merge itself.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::merge::{build_region_graph, finalize_mask, hierarchical_merge, select_text_segments, MergeConfig, SelectConfig};
use crate::morphology::{refine_seed, RefineConfig, SeedResult};
use crate::raster::{ensure_same_dims, overlay, rgb_to_lab, save_mask, save_rgb, BinaryMask, RgbImage};
use crate::superpixel::{slic, LabelMap, SlicParams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrfConfig {
    pub refine: RefineConfig,
    pub slic: SlicParams,
    pub merge: MergeConfig,
    pub select: SelectConfig,
}

#[derive(Debug, Clone)]
pub struct MrfOutput {
    pub seed: SeedResult,
    pub superpixels: LabelMap,
    pub merged: LabelMap,
    /// Union of selected segments, before dilation.
    pub selection: BinaryMask,
    /// Final refined text mask.
    pub mask: BinaryMask,
}

pub fn run_mrf(img: &RgbImage, initial_mask: &BinaryMask, cfg: &MrfConfig) -> Result<MrfOutput> {
    ensure_same_dims(img.dims(), initial_mask.dims())?;
    let seed = refine_seed(initial_mask, &cfg.refine).map_err(Error::at(Stage::Refine))?;
    let lab = rgb_to_lab(img);
    let superpixels = slic(&lab, &cfg.slic).map_err(Error::at(Stage::Superpixel))?;
    let graph = build_region_graph(&superpixels, &lab).map_err(Error::at(Stage::RegionGraph))?;
    let merged = hierarchical_merge(&graph, &cfg.merge).map_err(Error::at(Stage::Merge))?;
    let selection = select_text_segments(&merged, &seed.seed, &cfg.select).map_err(Error::at(Stage::Select))?;
    cfg.select.validate().map_err(Error::at(Stage::Finalize))?;
    let mask = finalize_mask(&selection, &cfg.select);
    Ok(MrfOutput {
        seed,
        superpixels,
        merged,
        selection,
        mask,
    })
}

const MASK_TINT: [u8; 3] = [255, 0, 0];
const BOUNDARY_TINT: [u8; 3] = [255, 255, 0];

/// Writes the six stage panels as `<id>_stage{1..6}.png`:
///
/// 1. initial mask
/// 2. first refinement iteration
/// 3. final seed
/// 4. superpixel boundaries over the image
/// 5. merged-region boundaries over the image
/// 6. final mask
///
/// Mask stages also get a `<id>_stage{n}_overlay.png` tinted over the image.
/// Returns the written paths in order.
pub fn write_stages(out: &MrfOutput, img: &RgbImage, initial: &BinaryMask, dir: &Path, id: &str) -> Result<Vec<PathBuf>> {
    let first = out.seed.intermediates.first().unwrap_or(&out.seed.seed);
    let masks: [(usize, &BinaryMask); 4] = [(1, initial), (2, first), (3, &out.seed.seed), (6, &out.mask)];
    let mut written = Vec::new();
    for (n, m) in masks {
        let p = dir.join(format!("{id}_stage{n}.png"));
        save_mask(m, &p)?;
        written.push(p);
        let p = dir.join(format!("{id}_stage{n}_overlay.png"));
        save_rgb(&overlay(img, m, MASK_TINT, 0.5)?, &p)?;
        written.push(p);
    }
    for (n, lm) in [(4, &out.superpixels), (5, &out.merged)] {
        let p = dir.join(format!("{id}_stage{n}.png"));
        save_rgb(&overlay(img, &lm.boundary_mask(), BOUNDARY_TINT, 1.0)?, &p)?;
        written.push(p);
    }
    written.sort();
    Ok(written)
}
