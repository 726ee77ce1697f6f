//! Binary morphology and iterative seed refinement.
//!
//! Out-of-bounds pixels read as `false`, so erosion shrinks masks that touch
//! the border while dilation is simply clipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementShape {
    /// Pixels along the two axes within `radius` (a plus sign).
    Cross,
    /// The full `(2r+1)²` square.
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuringElement {
    pub shape: ElementShape,
    pub radius: usize,
}

impl StructuringElement {
    pub fn cross(radius: usize) -> Self {
        Self {
            shape: ElementShape::Cross,
            radius,
        }
    }

    pub fn square(radius: usize) -> Self {
        Self {
            shape: ElementShape::Square,
            radius,
        }
    }

    fn check(&self, mask: &BinaryMask) -> Result<()> {
        let span = 2 * self.radius + 1;
        if self.radius == 0 {
            return Err(Error::Config("structuring element radius must be >= 1".into()));
        }
        if mask.width() < span || mask.height() < span {
            return Err(Error::MaskTooSmall {
                width: mask.width(),
                height: mask.height(),
                radius: self.radius,
            });
        }
        Ok(())
    }
}

impl Default for StructuringElement {
    fn default() -> Self {
        Self::cross(1)
    }
}

/// Pixel stays set iff every pixel under the element is set.
pub fn erode(mask: &BinaryMask, se: StructuringElement) -> Result<BinaryMask> {
    se.check(mask)?;
    Ok(erode_clipped(mask, se))
}

/// Pixel becomes set iff any pixel under the element is set.
pub fn dilate(mask: &BinaryMask, se: StructuringElement) -> Result<BinaryMask> {
    se.check(mask)?;
    Ok(dilate_clipped(mask, se))
}

pub(crate) fn erode_clipped(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    match se.shape {
        ElementShape::Square => {
            let rows = line_pass(mask, se.radius, Axis::Horizontal, true);
            line_pass(&rows, se.radius, Axis::Vertical, true)
        }
        ElementShape::Cross => {
            let h = line_pass(mask, se.radius, Axis::Horizontal, true);
            let v = line_pass(mask, se.radius, Axis::Vertical, true);
            combine(&h, &v, |a, b| a && b)
        }
    }
}

pub(crate) fn dilate_clipped(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    if se.radius == 0 {
        return mask.clone();
    }
    match se.shape {
        ElementShape::Square => {
            let rows = line_pass(mask, se.radius, Axis::Horizontal, false);
            line_pass(&rows, se.radius, Axis::Vertical, false)
        }
        ElementShape::Cross => {
            let h = line_pass(mask, se.radius, Axis::Horizontal, false);
            let v = line_pass(mask, se.radius, Axis::Vertical, false);
            combine(&h, &v, |a, b| a || b)
        }
    }
}

#[derive(Clone, Copy)]
enum Axis {
    Horizontal,
    Vertical,
}

/// 1-D erosion (`all == true`) or dilation along one axis using a running
/// count of set pixels in the window. Out-of-bounds pixels count as unset.
fn line_pass(mask: &BinaryMask, radius: usize, axis: Axis, all: bool) -> BinaryMask {
    let (w, h) = mask.dims();
    let (len, lines) = match axis {
        Axis::Horizontal => (w, h),
        Axis::Vertical => (h, w),
    };
    let idx = |line: usize, i: usize| match axis {
        Axis::Horizontal => line * w + i,
        Axis::Vertical => i * w + line,
    };
    let src = mask.data();
    let mut out = vec![false; w * h];
    let full = 2 * radius + 1;
    for line in 0..lines {
        // Window [i - r, i + r], only in-bounds pixels contribute.
        let mut count = (0..radius.min(len)).filter(|&j| src[idx(line, j)]).count();
        for i in 0..len {
            let add = i + radius;
            if add < len && src[idx(line, add)] {
                count += 1;
            }
            if i > radius && src[idx(line, i - radius - 1)] {
                count -= 1;
            }
            out[idx(line, i)] = if all { count == full } else { count > 0 };
        }
    }
    BinaryMask::new(w, h, out).expect("same dimensions as input")
}

fn combine(a: &BinaryMask, b: &BinaryMask, op: impl Fn(bool, bool) -> bool) -> BinaryMask {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| op(x, y)).collect();
    BinaryMask::new(a.width(), a.height(), data).expect("same dimensions as input")
}

/// Bilinear resampling of the 0/1 field followed by `value >= threshold`.
///
/// Pixel centres are aligned: target pixel `x` samples source coordinate
/// `(x + 0.5) * src_w / dst_w - 0.5`, clamped to the source extent.
pub fn resample_mask(mask: &BinaryMask, target_w: usize, target_h: usize, binarize_threshold: f64) -> Result<BinaryMask> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::Config(format!(
            "resample target {target_w}x{target_h} must be non-empty"
        )));
    }
    let (sw, sh) = mask.dims();
    let xs: Vec<_> = (0..target_w).map(|x| sample_coord(x, sw, target_w)).collect();
    let ys: Vec<_> = (0..target_h).map(|y| sample_coord(y, sh, target_h)).collect();
    let v = |x: usize, y: usize| if mask.get(x, y) { 1.0 } else { 0.0 };
    let mut data = Vec::with_capacity(target_w * target_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = v(x0, y0) * (1.0 - fx) + v(x1, y0) * fx;
            let bottom = v(x0, y1) * (1.0 - fx) + v(x1, y1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy >= binarize_threshold);
        }
    }
    BinaryMask::new(target_w, target_h, data)
}

fn sample_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub iterations: usize,
    pub upsample_factor: f64,
    pub element: StructuringElement,
    pub binarize_threshold: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            upsample_factor: 2.0,
            element: StructuringElement::cross(1),
            binarize_threshold: 0.5,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("refine.iterations must be >= 1".into()));
        }
        if !(self.upsample_factor > 1.0) || !self.upsample_factor.is_finite() {
            return Err(Error::Config("refine.upsample_factor must be > 1".into()));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::Config("refine.binarize_threshold must be in (0, 1)".into()));
        }
        if self.element.radius == 0 {
            return Err(Error::Config("refine.element.radius must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: BinaryMask,
    /// One mask per iteration, in order; the last equals `seed`.
    pub intermediates: Vec<BinaryMask>,
}

/// Upsample, erode and downsample `cfg.iterations` times.
pub fn refine_seed(initial: &BinaryMask, cfg: &RefineConfig) -> Result<SeedResult> {
    cfg.validate()?;
    let (w, h) = initial.dims();
    let up_w = ((w as f64 * cfg.upsample_factor).round() as usize).max(1);
    let up_h = ((h as f64 * cfg.upsample_factor).round() as usize).max(1);

    let mut current = initial.clone();
    let mut intermediates = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let up = resample_mask(&current, up_w, up_h, cfg.binarize_threshold)?;
        let eroded = erode(&up, cfg.element)?;
        current = resample_mask(&eroded, w, h, cfg.binarize_threshold)?;
        intermediates.push(current.clone());
    }
    Ok(SeedResult {
        seed: current,
        intermediates,
    })
}
