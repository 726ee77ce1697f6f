//! SLIC superpixels in CIELAB + xy space.
//!
//! Assignment runs row-parallel but each pixel's decision depends only on the
//! centres of the current iteration, so results do not depend on the number
//! of worker threads. Per-cluster reductions are done in raster order.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, LabImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicParams {
    /// Desired number of superpixels.
    pub k: usize,
    /// Weight of spatial distance relative to colour distance.
    pub compactness: f64,
    pub max_iters: usize,
    /// Connected fragments smaller than this fraction of `S²` are absorbed
    /// into a neighbour.
    pub min_region_frac: f64,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            k: 400,
            compactness: 10.0,
            max_iters: 10,
            min_region_frac: 0.25,
        }
    }
}

impl SlicParams {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }
}

/// Dense per-pixel segment ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    n_segments: usize,
}

impl LabelMap {
    /// Builds a map and checks that labels are dense in `[0, n_segments)`.
    pub fn new(width: usize, height: usize, labels: Vec<u32>, n_segments: usize) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "label buffer of {} does not fit {width}x{height}",
                labels.len()
            )));
        }
        let mut seen = vec![false; n_segments];
        for &l in &labels {
            match seen.get_mut(l as usize) {
                Some(s) => *s = true,
                None => {
                    return Err(Error::InvalidRaster(format!(
                        "label {l} outside [0, {n_segments})"
                    )))
                }
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidRaster(format!("label {missing} never occurs")));
        }
        Ok(Self {
            width,
            height,
            labels,
            n_segments,
        })
    }

    /// Renumbers arbitrary ids densely, in order of first appearance.
    pub fn from_raw(width: usize, height: usize, raw: &[u32]) -> Result<Self> {
        if width == 0 || height == 0 || raw.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "label buffer of {} does not fit {width}x{height}",
                raw.len()
            )));
        }
        let (labels, n_segments) = renumber_first_seen(raw);
        Ok(Self {
            width,
            height,
            labels,
            n_segments,
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

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_segments];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Number of 4-adjacent pixel pairs carrying different labels.
    pub fn boundary_length(&self) -> usize {
        let w = self.width;
        let mut total = 0;
        for y in 0..self.height {
            for x in 0..w {
                let l = self.labels[y * w + x];
                if x + 1 < w && self.labels[y * w + x + 1] != l {
                    total += 1;
                }
                if y + 1 < self.height && self.labels[(y + 1) * w + x] != l {
                    total += 1;
                }
            }
        }
        total
    }

    /// Pixels whose right or lower neighbour carries another label.
    pub fn boundary_mask(&self) -> crate::raster::BinaryMask {
        crate::raster::BinaryMask::from_fn(self.width, self.height, |x, y| {
            let l = self.get(x, y);
            (x + 1 < self.width && self.get(x + 1, y) != l) || (y + 1 < self.height && self.get(x, y + 1) != l)
        })
    }

    /// True when two maps describe the same partition, ignoring label values.
    pub fn same_partition(&self, other: &LabelMap) -> bool {
        self.dims() == other.dims()
            && self.n_segments == other.n_segments
            && renumber_first_seen(&self.labels).0 == renumber_first_seen(&other.labels).0
    }
}

fn renumber_first_seen(raw: &[u32]) -> (Vec<u32>, usize) {
    let mut map = std::collections::HashMap::new();
    let labels = raw
        .iter()
        .map(|&l| {
            let next = map.len() as u32;
            *map.entry(l).or_insert(next)
        })
        .collect();
    (labels, map.len())
}

/// Diagnostic dump as a 16-bit grayscale PNG of raw label ids.
pub fn save_label_map(lm: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if lm.n_segments > u16::MAX as usize + 1 {
        return Err(Error::Encode {
            path: path.to_path_buf(),
            reason: format!("{} labels do not fit 16 bits", lm.n_segments),
        });
    }
    let bytes: Vec<u8> = lm.labels.iter().flat_map(|&l| (l as u16).to_ne_bytes()).collect();
    image::save_buffer_with_format(
        path,
        &bytes,
        lm.width as u32,
        lm.height as u32,
        image::ExtendedColorType::L16,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Encode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// Result of a traced SLIC run.
#[derive(Debug, Clone)]
pub struct SlicOutput {
    pub labels: LabelMap,
    /// Clustering energy `Σ D²` after each assignment step.
    pub energy: Vec<f64>,
    /// Grid interval `S = sqrt(N / k)`.
    pub interval: f64,
}

pub fn slic(img: &LabImage, params: &SlicParams) -> Result<LabelMap> {
    Ok(slic_traced(img, params)?.labels)
}

pub fn slic_traced(img: &LabImage, params: &SlicParams) -> Result<SlicOutput> {
    let (w, h) = img.dims();
    let n = w * h;
    if params.k == 0 || params.k > n {
        return Err(Error::InvalidK { k: params.k, pixels: n });
    }
    if !(params.compactness > 0.0) {
        return Err(Error::Config("slic.compactness must be positive".into()));
    }
    let s = (n as f64 / params.k as f64).sqrt();
    let spatial_weight = (params.compactness / s).powi(2);

    let mut centers = initial_centers(img, params.k, s);
    let mut labels = vec![u32::MAX; n];
    let mut energy = Vec::new();

    for _ in 0..params.max_iters.max(1) {
        energy.push(assign(img, &centers, &mut labels, s, spatial_weight));
        let moved = update_centers(img, &labels, &mut centers);
        if moved < 0.5 {
            break;
        }
    }

    let min_size = params.min_region_frac * s * s;
    let labels = connectivity_pass(w, h, &labels, img, min_size);
    Ok(SlicOutput {
        labels,
        energy,
        interval: s,
    })
}

fn initial_centers(img: &LabImage, k: usize, s: f64) -> Vec<Center> {
    let (w, h) = img.dims();
    let ny = ((h as f64 / s).round() as usize).clamp(1, h);
    let nx = k.div_ceil(ny).clamp(1, w);
    let step_x = w as f64 / nx as f64;
    let step_y = h as f64 / ny as f64;

    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let gx = (((i as f64 + 0.5) * step_x) as usize).min(w - 1);
            let gy = (((j as f64 + 0.5) * step_y) as usize).min(h - 1);
            let (cx, cy) = lowest_gradient_near(img, gx, gy);
            centers.push(Center {
                lab: img.pixel(cx, cy).map(f64::from),
                x: cx as f64,
                y: cy as f64,
            });
        }
    }
    centers
}

fn gradient(img: &LabImage, x: usize, y: usize) -> f64 {
    let (w, h) = img.dims();
    let sq = |a: [f32; 3], b: [f32; 3]| -> f64 {
        a.iter().zip(&b).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum()
    };
    let gx = sq(img.pixel((x + 1).min(w - 1), y), img.pixel(x.saturating_sub(1), y));
    let gy = sq(img.pixel(x, (y + 1).min(h - 1)), img.pixel(x, y.saturating_sub(1)));
    gx + gy
}

/// Moves a grid seed to the strictly lowest-gradient pixel of its 3×3
/// neighbourhood; ties keep the earlier candidate in scan order, starting with
/// the seed itself.
fn lowest_gradient_near(img: &LabImage, x: usize, y: usize) -> (usize, usize) {
    let (w, h) = img.dims();
    let mut best = (x, y);
    let mut best_g = gradient(img, x, y);
    for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
        for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
            let g = gradient(img, nx, ny);
            if g < best_g {
                best_g = g;
                best = (nx, ny);
            }
        }
    }
    best
}

#[inline]
fn distance_sq(c: &Center, lab: [f32; 3], x: f64, y: f64, spatial_weight: f64) -> f64 {
    let dl = c.lab[0] - lab[0] as f64;
    let da = c.lab[1] - lab[1] as f64;
    let db = c.lab[2] - lab[2] as f64;
    let dx = c.x - x;
    let dy = c.y - y;
    dl * dl + da * da + db * db + (dx * dx + dy * dy) * spatial_weight
}

/// Assigns each pixel to the nearest centre whose 2S×2S window covers it.
/// The pixel's current centre always stays a candidate, which keeps the
/// energy from increasing. Returns the energy after assignment.
fn assign(img: &LabImage, centers: &[Center], labels: &mut [u32], s: f64, spatial_weight: f64) -> f64 {
    let (w, h) = img.dims();
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); h];
    for (k, c) in centers.iter().enumerate() {
        let y0 = (c.y - s).ceil().max(0.0) as usize;
        let y1 = ((c.y + s).floor() as usize).min(h - 1);
        for row in rows.iter_mut().take(y1 + 1).skip(y0) {
            row.push(k as u32);
        }
    }

    let row_energy: Vec<f64> = labels
        .par_chunks_mut(w)
        .enumerate()
        .map(|(y, row_labels)| {
            let fy = y as f64;
            let cands = &rows[y];
            let mut total = 0.0;
            for (x, label) in row_labels.iter_mut().enumerate() {
                let fx = x as f64;
                let lab = img.pixel(x, y);
                let mut best = (f64::INFINITY, u32::MAX);
                if *label != u32::MAX {
                    best = (distance_sq(&centers[*label as usize], lab, fx, fy, spatial_weight), *label);
                }
                let consider = |best: &mut (f64, u32), k: u32| {
                    let d = distance_sq(&centers[k as usize], lab, fx, fy, spatial_weight);
                    if d < best.0 || (d == best.0 && k < best.1) {
                        *best = (d, k);
                    }
                };
                let mut covered = false;
                for &k in cands {
                    if (centers[k as usize].x - fx).abs() <= s {
                        covered = true;
                        consider(&mut best, k);
                    }
                }
                if !covered && best.1 == u32::MAX {
                    for k in 0..centers.len() as u32 {
                        consider(&mut best, k);
                    }
                }
                *label = best.1;
                total += best.0;
            }
            total
        })
        .collect();
    row_energy.iter().sum()
}

/// Moves each centre to the mean of its members; returns the largest xy shift.
fn update_centers(img: &LabImage, labels: &[u32], centers: &mut [Center]) -> f64 {
    let w = img.width();
    let mut sums = vec![[0.0f64; 5]; centers.len()];
    let mut counts = vec![0usize; centers.len()];
    for (i, &l) in labels.iter().enumerate() {
        let lab = img.pixel_at(i);
        let s = &mut sums[l as usize];
        s[0] += lab[0] as f64;
        s[1] += lab[1] as f64;
        s[2] += lab[2] as f64;
        s[3] += (i % w) as f64;
        s[4] += (i / w) as f64;
        counts[l as usize] += 1;
    }
    let mut moved: f64 = 0.0;
    for ((c, s), &n) in centers.iter_mut().zip(&sums).zip(&counts) {
        if n == 0 {
            continue;
        }
        let n = n as f64;
        let (nx, ny) = (s[3] / n, s[4] / n);
        moved = moved.max(((nx - c.x).powi(2) + (ny - c.y).powi(2)).sqrt());
        *c = Center {
            lab: [s[0] / n, s[1] / n, s[2] / n],
            x: nx,
            y: ny,
        };
    }
    moved
}

/// Splits labels into 4-connected components and absorbs fragments smaller
/// than `min_region_frac · S²` (with `S² = N / n_segments`) into the adjacent
/// component of nearest mean colour.
pub fn enforce_connectivity(lm: &LabelMap, img: &LabImage, min_region_frac: f64) -> Result<LabelMap> {
    ensure_same_dims(lm.dims(), img.dims())?;
    let s_sq = (lm.width * lm.height) as f64 / lm.n_segments as f64;
    Ok(connectivity_pass(lm.width, lm.height, &lm.labels, img, min_region_frac * s_sq))
}

/// Raster-order 4-connected component labelling over equal label values.
/// Returns per-pixel component ids and the component count.
pub(crate) fn connected_components<T: PartialEq + Copy>(w: usize, h: usize, values: &[T]) -> (Vec<u32>, usize) {
    let mut comp = vec![u32::MAX; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if comp[start] != u32::MAX {
            continue;
        }
        let v = values[start];
        comp[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if comp[j] == u32::MAX && values[j] == v {
                    comp[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        next += 1;
    }
    (comp, next as usize)
}

fn connectivity_pass(w: usize, h: usize, labels: &[u32], img: &LabImage, min_size: f64) -> LabelMap {
    let (comp, n) = connected_components(w, h, labels);

    let mut size = vec![0usize; n];
    let mut lab_sum = vec![[0.0f64; 3]; n];
    let mut adj: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let c = comp[i] as usize;
            size[c] += 1;
            let lab = img.pixel_at(i);
            for ch in 0..3 {
                lab_sum[c][ch] += lab[ch] as f64;
            }
            if x + 1 < w && comp[i + 1] != comp[i] {
                adj[c].insert(comp[i + 1]);
                adj[comp[i + 1] as usize].insert(comp[i]);
            }
            if y + 1 < h && comp[i + w] != comp[i] {
                adj[c].insert(comp[i + w]);
                adj[comp[i + w] as usize].insert(comp[i]);
            }
        }
    }

    let mut parent: Vec<u32> = (0..n as u32).collect();
    for c in 0..n {
        if parent[c] != c as u32 || (size[c] as f64) >= min_size {
            continue;
        }
        let mean = |r: usize| {
            let s = size[r] as f64;
            [lab_sum[r][0] / s, lab_sum[r][1] / s, lab_sum[r][2] / s]
        };
        let own = mean(c);
        let target = adj[c].iter().copied().min_by(|&a, &b| {
            let da = delta_e(own, mean(a as usize));
            let db = delta_e(own, mean(b as usize));
            da.total_cmp(&db).then(a.cmp(&b))
        });
        let Some(t) = target else { continue };
        let t = t as usize;
        // Absorb c into t.
        parent[c] = t as u32;
        size[t] += size[c];
        for ch in 0..3 {
            lab_sum[t][ch] += lab_sum[c][ch];
        }
        let moved = std::mem::take(&mut adj[c]);
        for nb in moved {
            let nb = nb as usize;
            adj[nb].remove(&(c as u32));
            if nb != t {
                adj[nb].insert(t as u32);
                adj[t].insert(nb as u32);
            }
        }
        adj[t].remove(&(c as u32));
    }

    let find = |mut c: u32| {
        while parent[c as usize] != c {
            c = parent[c as usize];
        }
        c
    };
    let roots: Vec<u32> = comp.iter().map(|&c| find(c)).collect();
    LabelMap::from_raw(w, h, &roots).expect("dimensions checked by caller")
}

pub(crate) fn delta_e(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
