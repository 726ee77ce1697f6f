//! Raster buffers and the pixel-level conversions everything else builds on.
//!
//! All buffers are dense and row-major. Masks use `true` for text/foreground
//! and are persisted as 8-bit PNGs holding 0 or 255.

use std::path::Path;
use std::sync::OnceLock;

use image::{GenericImageView, ImageReader};

use crate::error::{Error, Result};

/// 8-bit sRGB image, three interleaved channels per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

/// 8-bit single-channel intensity image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

/// CIELAB image (D65), three interleaved `f32` channels per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Per-pixel boolean raster, `true` marks text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

fn check_dims(width: usize, height: usize, len: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidRaster(format!(
            "zero-sized raster {width}x{height}"
        )));
    }
    if width.checked_mul(height).and_then(|n| n.checked_mul(channels)) != Some(len) {
        return Err(Error::InvalidRaster(format!(
            "buffer of {len} values does not fit {width}x{height}x{channels}"
        )));
    }
    Ok(())
}

pub(crate) fn ensure_same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { left: a, right: b });
    }
    Ok(())
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len(), 3)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

impl LabImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height, data.len(), 3)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRaster("non-finite Lab value".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixel_at(y * self.width + x)
    }

    #[inline]
    pub fn pixel_at(&self, idx: usize) -> [f32; 3] {
        let i = idx * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// All-false mask.
    pub fn empty(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "zero-sized mask");
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    /// All-true mask.
    pub fn full(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "zero-sized mask");
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "zero-sized mask");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// `true` when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| !v).collect(),
        }
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn union_count(&self, other: &BinaryMask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a || b)
            .count()
    }

    /// Intersection over union. Two empty masks count as a perfect match.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        ensure_same_dims(self.dims(), other.dims())?;
        let union = self.union_count(other);
        if union == 0 {
            return Ok(1.0);
        }
        Ok(self.intersection_count(other) as f64 / union as f64)
    }

    /// 0/255 grayscale rendering, the on-disk mask convention.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| if v { 255 } else { 0 }).collect(),
        }
    }
}

fn decode_error(path: &Path, err: impl std::fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: err.to_string(),
    }
}

fn open_dynamic(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?
        .with_guessed_format()
        .map_err(|e| decode_error(path, e))?;
    reader.decode().map_err(|e| decode_error(path, e))
}

/// Loads a PNG or JPEG as 8-bit RGB. Alpha is dropped.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = open_dynamic(path)?;
    let (w, h) = img.dimensions();
    RgbImage::new(w as usize, h as usize, img.into_rgb8().into_raw())
}

/// Loads any image as BT.601 gray. Single-channel files are kept as stored.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = open_dynamic(path)?;
    let (w, h) = img.dimensions();
    if img.color().channel_count() <= 2 {
        return GrayImage::new(w as usize, h as usize, img.into_luma8().into_raw());
    }
    Ok(rgb_to_gray(&RgbImage::new(w as usize, h as usize, img.into_rgb8().into_raw())?))
}

/// Loads a mask image; any intensity ≥ 128 is text.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    Ok(threshold(&load_gray(path)?, 128))
}

/// Reads only the header to get `(width, height)`.
pub fn image_dims(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let (w, h) = image::image_dimensions(path).map_err(|e| decode_error(path, e))?;
    Ok((w as usize, h as usize))
}

fn encode_error(path: &Path, err: impl std::fmt::Display) -> Error {
    Error::Encode {
        path: path.to_path_buf(),
        reason: err.to_string(),
    }
}

fn save_png(path: &Path, data: &[u8], width: usize, height: usize, color: image::ExtendedColorType) -> Result<()> {
    image::save_buffer_with_format(
        path,
        data,
        width as u32,
        height as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| encode_error(path, e))
}

pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    save_png(path.as_ref(), &img.data, img.width, img.height, image::ExtendedColorType::Rgb8)
}

pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    save_png(path.as_ref(), &img.data, img.width, img.height, image::ExtendedColorType::L8)
}

/// Writes the mask as an 8-bit PNG holding 0 and 255.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_gray(&mask.to_gray(), path)
}

/// ITU-R BT.601 luma, rounded half-up.
#[inline]
pub fn luma(rgb: [u8; 3]) -> u8 {
    // Integer weights keep exact .5 ties rounding up.
    let y = 299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32;
    ((y + 500) / 1000) as u8
}

pub fn rgb_to_gray(img: &RgbImage) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        data: img.pixels().map(luma).collect(),
    }
}

// D65 reference white.
const WHITE_X: f64 = 0.95047;
const WHITE_Y: f64 = 1.0;
const WHITE_Z: f64 = 1.08883;

fn srgb_to_linear_table() -> &'static [f64; 256] {
    static TABLE: OnceLock<[f64; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; 256];
        for (i, v) in t.iter_mut().enumerate() {
            let c = i as f64 / 255.0;
            *v = if c <= 0.04045 {
                c / 12.92
            } else {
                ((c + 0.055) / 1.055).powf(2.4)
            };
        }
        t
    })
}

#[inline]
fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts one sRGB triple to CIELAB (D65).
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lut = srgb_to_linear_table();
    let (r, g, b) = (lut[rgb[0] as usize], lut[rgb[1] as usize], lut[rgb[2] as usize]);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (lab_f(x / WHITE_X), lab_f(y / WHITE_Y), lab_f(z / WHITE_Z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let mut data = Vec::with_capacity(img.data.len());
    for p in img.pixels() {
        let lab = srgb_to_lab(p);
        data.extend(lab.iter().map(|&v| v as f32));
    }
    LabImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Pixel is text iff intensity ≥ `t`.
pub fn threshold(img: &GrayImage, t: u8) -> BinaryMask {
    BinaryMask {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| v >= t).collect(),
    }
}

/// Blends `color` into the masked pixels with weight `alpha`; unmasked pixels
/// are copied through.
pub fn overlay(img: &RgbImage, mask: &BinaryMask, color: [u8; 3], alpha: f64) -> Result<RgbImage> {
    ensure_same_dims(img.dims(), mask.dims())?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut data = img.data.clone();
    for (px, _) in data
        .chunks_exact_mut(3)
        .zip(&mask.data)
        .filter(|(_, &m)| m)
    {
        for (c, &target) in px.iter_mut().zip(&color) {
            let v = (1.0 - alpha) * *c as f64 + alpha * target as f64;
            *c = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(RgbImage {
        width: img.width,
        height: img.height,
        data,
    })
}

/// Resizes with a triangle (bilinear) filter.
pub fn resize_rgb(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    if img.dims() == (width, height) {
        return img.clone();
    }
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .expect("buffer length checked at construction");
    let out = image::imageops::resize(&buf, width as u32, height as u32, image::imageops::FilterType::Triangle);
    RgbImage {
        width,
        height,
        data: out.into_raw(),
    }
}

/// Nearest-neighbour resize, keeps the mask strictly binary.
pub fn resize_mask_nearest(mask: &BinaryMask, width: usize, height: usize) -> BinaryMask {
    if mask.dims() == (width, height) {
        return mask.clone();
    }
    BinaryMask::from_fn(width, height, |x, y| {
        let sx = ((x as f64 + 0.5) * mask.width as f64 / width as f64) as usize;
        let sy = ((y as f64 + 0.5) * mask.height as f64 / height as f64) as usize;
        mask.get(sx.min(mask.width - 1), sy.min(mask.height - 1))
    })
}
