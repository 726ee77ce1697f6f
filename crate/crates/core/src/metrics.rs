//! Text-removal quality metrics: PSNR, MSSIM, MSE, AGE, pEPs and pCEPs.
//!
//! PSNR and MSE are computed jointly over the three RGB channels. The other
//! four work on BT.601 grayscale. MSSIM is reported ×100 and MSE is the mean
//! squared error of [0, 1]-normalized intensities ×100.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, load_rgb, rgb_to_gray, GrayImage, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Gray-level difference above which a pixel counts as an error.
    pub ep_threshold: u8,
    /// Side of the square Gaussian SSIM window.
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    /// PSNR reported for identical images.
    pub psnr_cap: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            ep_threshold: 20,
            ssim_window: 11,
            ssim_sigma: 1.5,
            psnr_cap: 100.0,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=254).contains(&self.ep_threshold) {
            return Err(Error::Config("metrics.ep_threshold must be in [1, 254]".into()));
        }
        if self.ssim_window == 0 || self.ssim_window % 2 == 0 {
            return Err(Error::Config("metrics.ssim_window must be odd".into()));
        }
        if !(self.ssim_sigma > 0.0) {
            return Err(Error::Config("metrics.ssim_sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub psnr: f64,
    pub mssim: f64,
    pub mse: f64,
    pub age: f64,
    pub peps: f64,
    pub pceps: f64,
}

impl MetricValues {
    pub fn as_array(&self) -> [f64; 6] {
        [self.psnr, self.mssim, self.mse, self.age, self.peps, self.pceps]
    }

    fn from_array(a: [f64; 6]) -> Self {
        Self {
            psnr: a[0],
            mssim: a[1],
            mse: a[2],
            age: a[3],
            peps: a[4],
            pceps: a[5],
        }
    }

    /// Arithmetic mean per metric; `None` for an empty slice.
    pub fn mean<'a>(rows: impl IntoIterator<Item = &'a MetricValues>) -> Option<MetricValues> {
        let mut sum = [0.0; 6];
        let mut n = 0usize;
        for r in rows {
            for (s, v) in sum.iter_mut().zip(r.as_array()) {
                *s += v;
            }
            n += 1;
        }
        (n > 0).then(|| Self::from_array(sum.map(|s| s / n as f64)))
    }
}

pub const COLUMNS: [&str; 6] = ["PSNR", "MSSIM", "MSE", "AGE", "pEPs", "pCEPs"];

fn sum_sq_diff(pred: &RgbImage, gt: &RgbImage) -> u64 {
    pred.data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| {
            let d = a as i64 - b as i64;
            (d * d) as u64
        })
        .sum()
}

fn psnr_from_ssd(ssd: u64, samples: usize, cap: f64) -> f64 {
    if ssd == 0 {
        return cap;
    }
    let mse = ssd as f64 / samples as f64;
    10.0 * (255.0f64 * 255.0 / mse).log10()
}

fn mse_percent_from_ssd(ssd: u64, samples: usize) -> f64 {
    ssd as f64 / (255.0 * 255.0) / samples as f64 * 100.0
}

pub fn psnr(pred: &RgbImage, gt: &RgbImage, cfg: &MetricConfig) -> Result<f64> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    Ok(psnr_from_ssd(sum_sq_diff(pred, gt), pred.data().len(), cfg.psnr_cap))
}

pub fn mse_percent(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    Ok(mse_percent_from_ssd(sum_sq_diff(pred, gt), pred.data().len()))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Valid-mode separable filtering of several planes at once.
fn filter_valid(planes: &[Vec<f64>], w: usize, h: usize, taps: &[f64]) -> Vec<Vec<f64>> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    planes
        .iter()
        .map(|p| {
            let mut horiz = vec![0.0; ow * h];
            for y in 0..h {
                let row = &p[y * w..(y + 1) * w];
                for x in 0..ow {
                    horiz[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
                }
            }
            let mut out = vec![0.0; ow * oh];
            for y in 0..oh {
                for x in 0..ow {
                    out[y * ow + x] = taps.iter().enumerate().map(|(j, t)| t * horiz[(y + j) * ow + x]).sum();
                }
            }
            out
        })
        .collect()
}

fn mssim_gray(a: &GrayImage, b: &GrayImage, cfg: &MetricConfig) -> Result<f64> {
    ensure_same_dims(a.dims(), b.dims())?;
    let (w, h) = a.dims();
    let k = cfg.ssim_window;
    if w < k || h < k {
        return Err(Error::ImageTooSmall { width: w, height: h, min: k });
    }
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let xx = x.iter().map(|v| v * v).collect();
    let yy = y.iter().map(|v| v * v).collect();
    let xy = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let taps = gaussian_taps(k, cfg.ssim_sigma);
    let f = filter_valid(&[x, y, xx, yy, xy], w, h, &taps);

    let n = f[0].len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (f[0][i], f[1][i]);
        let vx = f[2][i] - mx * mx;
        let vy = f[3][i] - my * my;
        let cov = f[4][i] - mx * my;
        total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / n as f64 * 100.0)
}

pub fn mssim(pred: &RgbImage, gt: &RgbImage, cfg: &MetricConfig) -> Result<f64> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    mssim_gray(&rgb_to_gray(pred), &rgb_to_gray(gt), cfg)
}

fn gray_abs_diff(a: &GrayImage, b: &GrayImage) -> Vec<u8> {
    a.data().iter().zip(b.data()).map(|(&p, &q)| p.abs_diff(q)).collect()
}

pub fn age(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    let d = gray_abs_diff(&rgb_to_gray(pred), &rgb_to_gray(gt));
    Ok(mean_u8(&d))
}

fn mean_u8(d: &[u8]) -> f64 {
    d.iter().map(|&v| v as u64).sum::<u64>() as f64 / d.len() as f64
}

fn error_map(diff: &[u8], thresh: u8) -> Vec<bool> {
    diff.iter().map(|&d| d > thresh).collect()
}

pub fn peps(pred: &RgbImage, gt: &RgbImage, cfg: &MetricConfig) -> Result<f64> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    let d = gray_abs_diff(&rgb_to_gray(pred), &rgb_to_gray(gt));
    let errs = error_map(&d, cfg.ep_threshold);
    Ok(errs.iter().filter(|&&e| e).count() as f64 / errs.len() as f64)
}

fn pceps_from_errors(errs: &[bool], w: usize, h: usize) -> Result<f64> {
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall { width: w, height: h, min: 3 });
    }
    let mut count = 0usize;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            if errs[i] && errs[i - 1] && errs[i + 1] && errs[i - w] && errs[i + w] {
                count += 1;
            }
        }
    }
    Ok(count as f64 / (w * h) as f64)
}

/// Fraction of pixels that are errors together with all four 4-neighbours.
/// Border pixels never qualify.
pub fn pceps(pred: &RgbImage, gt: &RgbImage, cfg: &MetricConfig) -> Result<f64> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    let d = gray_abs_diff(&rgb_to_gray(pred), &rgb_to_gray(gt));
    pceps_from_errors(&error_map(&d, cfg.ep_threshold), pred.width(), pred.height())
}

/// All six metrics, sharing the grayscale conversion and error map.
pub fn evaluate_pair(pred: &RgbImage, gt: &RgbImage, cfg: &MetricConfig) -> Result<MetricValues> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    cfg.validate()?;
    let (w, h) = pred.dims();
    let ssd = sum_sq_diff(pred, gt);
    let samples = pred.data().len();
    let (ga, gb) = (rgb_to_gray(pred), rgb_to_gray(gt));
    let diff = gray_abs_diff(&ga, &gb);
    let errs = error_map(&diff, cfg.ep_threshold);
    Ok(MetricValues {
        psnr: psnr_from_ssd(ssd, samples, cfg.psnr_cap),
        mssim: mssim_gray(&ga, &gb, cfg)?,
        mse: mse_percent_from_ssd(ssd, samples),
        age: mean_u8(&diff),
        peps: errs.iter().filter(|&&e| e).count() as f64 / errs.len() as f64,
        pceps: pceps_from_errors(&errs, w, h)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub id: String,
    pub pred: PathBuf,
    pub gt: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub id: String,
    /// Metric values, or the reason this pair could not be scored.
    pub outcome: std::result::Result<MetricValues, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// One row per input pair, in input order.
    pub rows: Vec<PairRow>,
    /// Mean over the successfully scored rows.
    pub aggregate: Option<MetricValues>,
    pub pair_count: usize,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<PairRow>) -> Self {
        let aggregate = MetricValues::mean(rows.iter().filter_map(|r| r.outcome.as_ref().ok()));
        let pair_count = rows.iter().filter(|r| r.outcome.is_ok()).count();
        Self {
            rows,
            aggregate,
            pair_count,
        }
    }

    pub fn per_pair(&self) -> impl Iterator<Item = (&str, &MetricValues)> {
        self.rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().map(|v| (r.id.as_str(), v)))
    }

    pub fn failures(&self) -> impl Iterator<Item = (&str, &str)> {
        self.rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().err().map(|e| (r.id.as_str(), e.as_str())))
    }

    /// CSV with columns `id,psnr,mssim,mse,age,peps,pceps,status` and a
    /// trailing `mean` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "psnr", "mssim", "mse", "age", "peps", "pceps", "status"])?;
        let fmt = |v: &MetricValues| v.as_array().map(|x| format!("{x:.6}"));
        for row in &self.rows {
            match &row.outcome {
                Ok(v) => {
                    let mut rec = vec![row.id.clone()];
                    rec.extend(fmt(v));
                    rec.push("ok".into());
                    w.write_record(&rec)?;
                }
                Err(e) => {
                    let mut rec = vec![row.id.clone()];
                    rec.extend(std::iter::repeat_n(String::new(), 6));
                    rec.push(format!("error: {e}"));
                    w.write_record(&rec)?;
                }
            }
        }
        let mut rec = vec!["mean".to_string()];
        match &self.aggregate {
            Some(v) => rec.extend(fmt(v)),
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        rec.push(format!("{} of {} pairs", self.pair_count, self.rows.len()));
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Aligned plain-text table in the order PSNR, MSSIM, MSE, AGE, pEPs, pCEPs.
    pub fn to_table(&self) -> String {
        let id_w = self
            .rows
            .iter()
            .map(|r| r.id.len())
            .chain(["pair".len(), "mean".len()])
            .max()
            .unwrap_or(4);
        let mut s = format!("{:<id_w$}", "pair");
        for c in COLUMNS {
            s.push_str(&format!(" {c:>10}"));
        }
        s.push('\n');
        let line = |s: &mut String, id: &str, v: Option<&MetricValues>, note: &str| {
            s.push_str(&format!("{id:<id_w$}"));
            match v {
                Some(v) => {
                    for x in v.as_array() {
                        s.push_str(&format!(" {x:>10.4}"));
                    }
                }
                None => {
                    for _ in COLUMNS {
                        s.push_str(&format!(" {:>10}", "-"));
                    }
                }
            }
            if !note.is_empty() {
                s.push_str("  ");
                s.push_str(note);
            }
            s.push('\n');
        };
        for r in &self.rows {
            match &r.outcome {
                Ok(v) => line(&mut s, &r.id, Some(v), ""),
                Err(e) => line(&mut s, &r.id, None, e),
            }
        }
        line(&mut s, "mean", self.aggregate.as_ref(), "");
        s
    }
}

/// Scores every pair (in parallel on the current rayon pool), keeping input
/// order. Load or size failures become flagged rows, not errors.
pub fn evaluate_dataset(pairs: &[EvalPair], cfg: &MetricConfig) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let rows = pairs
        .par_iter()
        .map(|p| {
            let outcome = load_rgb(&p.pred)
                .and_then(|pred| {
                    let gt = load_rgb(&p.gt)?;
                    evaluate_pair(&pred, &gt, cfg)
                })
                .map_err(|e| e.to_string());
            PairRow {
                id: p.id.clone(),
                outcome,
            }
        })
        .collect();
    Ok(MetricsReport::from_rows(rows))
}
