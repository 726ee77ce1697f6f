//! Hierarchical region merging over superpixels and seed-guided selection of
//! text segments.
//!
//! Merging runs in two fixed stages. Stage one greedily merges the adjacent
//! pair with the smallest mean-colour ΔE while it stays under a threshold.
//! Stage two does the same with a weighted score of colour distance, Lab
//! histogram χ² distance and weakness of the shared boundary. Region
//! statistics are folded incrementally; the priority queue discards stale
//! entries lazily through per-region version counters.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{dilate_clipped, StructuringElement};
use crate::raster::{ensure_same_dims, BinaryMask, LabImage};
use crate::superpixel::{connected_components, delta_e, LabelMap};

/// Bins per Lab axis.
pub const HIST_BINS: usize = 8;
const HIST_LEN: usize = HIST_BINS * HIST_BINS * HIST_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    /// Inclusive.
    pub x1: usize,
    /// Inclusive.
    pub y1: usize,
}

impl BBox {
    fn point(x: usize, y: usize) -> Self {
        Self { x0: x, y0: y, x1: x, y1: y }
    }

    fn union(self, o: BBox) -> Self {
        Self {
            x0: self.x0.min(o.x0),
            y0: self.y0.min(o.y0),
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: u32,
    pub pixel_count: usize,
    lab_sum: [f64; 3],
    hist_counts: Vec<u32>,
    pub bbox: BBox,
    /// Pixel sides facing another region or the image border.
    pub perimeter: usize,
}

impl Region {
    pub fn mean_lab(&self) -> [f64; 3] {
        let n = self.pixel_count as f64;
        [self.lab_sum[0] / n, self.lab_sum[1] / n, self.lab_sum[2] / n]
    }

    /// `HIST_BINS³` bins over (L, a, b), summing to 1.
    pub fn histogram(&self) -> Vec<f64> {
        let n = self.pixel_count as f64;
        self.hist_counts.iter().map(|&c| c as f64 / n).collect()
    }

    fn absorb(&mut self, other: &Region, shared: usize) {
        self.pixel_count += other.pixel_count;
        for c in 0..3 {
            self.lab_sum[c] += other.lab_sum[c];
        }
        for (a, b) in self.hist_counts.iter_mut().zip(&other.hist_counts) {
            *a += b;
        }
        self.bbox = self.bbox.union(other.bbox);
        self.perimeter = self.perimeter + other.perimeter - 2 * shared;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStats {
    pub shared_boundary_len: usize,
    /// CIE76 ΔE between region means.
    pub color_dist: f64,
    /// χ² distance between normalized histograms, in `[0, 1]`.
    pub hist_dist: f64,
}

/// Region adjacency graph over a label map.
#[derive(Debug, Clone)]
pub struct RegionGraph {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    regions: Vec<Region>,
    /// Keyed by `(low, high)` region id.
    edges: BTreeMap<(u32, u32), EdgeStats>,
}

impl RegionGraph {
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Each undirected edge once, as `(low, high, stats)`.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, &EdgeStats)> {
        self.edges.iter().map(|(&(a, b), e)| (a, b, e))
    }

    /// Order-insensitive edge lookup.
    pub fn edge(&self, a: u32, b: u32) -> Option<&EdgeStats> {
        self.edges.get(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self, id: u32) -> Vec<u32> {
        self.edges
            .keys()
            .filter_map(|&(a, b)| {
                if a == id {
                    Some(b)
                } else if b == id {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// The label map the graph was built from.
    pub fn label_map(&self) -> LabelMap {
        LabelMap::new(self.width, self.height, self.labels.clone(), self.regions.len())
            .expect("labels were validated on construction")
    }
}

fn hist_bin(lab: [f32; 3]) -> usize {
    let bin = |v: f64, lo: f64, span: f64| (((v - lo) / span * HIST_BINS as f64).floor() as isize).clamp(0, HIST_BINS as isize - 1) as usize;
    let l = bin(lab[0] as f64, 0.0, 100.0);
    let a = bin(lab[1] as f64, -128.0, 256.0);
    let b = bin(lab[2] as f64, -128.0, 256.0);
    (l * HIST_BINS + a) * HIST_BINS + b
}

fn chi_squared(a: &Region, b: &Region) -> f64 {
    let (na, nb) = (a.pixel_count as f64, b.pixel_count as f64);
    let mut d = 0.0;
    for (&ca, &cb) in a.hist_counts.iter().zip(&b.hist_counts) {
        let (p, q) = (ca as f64 / na, cb as f64 / nb);
        if p + q > 0.0 {
            d += (p - q) * (p - q) / (p + q);
        }
    }
    0.5 * d
}

fn edge_stats(a: &Region, b: &Region, shared: usize) -> EdgeStats {
    EdgeStats {
        shared_boundary_len: shared,
        color_dist: delta_e(a.mean_lab(), b.mean_lab()),
        hist_dist: chi_squared(a, b),
    }
}

pub fn build_region_graph(lm: &LabelMap, img: &LabImage) -> Result<RegionGraph> {
    ensure_same_dims(lm.dims(), img.dims())?;
    let (w, h) = lm.dims();
    let labels = lm.labels();
    let mut regions: Vec<Region> = (0..lm.n_segments() as u32)
        .map(|id| Region {
            id,
            pixel_count: 0,
            lab_sum: [0.0; 3],
            hist_counts: vec![0; HIST_LEN],
            bbox: BBox { x0: usize::MAX, y0: usize::MAX, x1: 0, y1: 0 },
            perimeter: 0,
        })
        .collect();
    let mut shared: BTreeMap<(u32, u32), usize> = BTreeMap::new();

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let l = labels[i];
            let lab = img.pixel_at(i);
            let r = &mut regions[l as usize];
            r.pixel_count += 1;
            for c in 0..3 {
                r.lab_sum[c] += lab[c] as f64;
            }
            r.hist_counts[hist_bin(lab)] += 1;
            r.bbox = r.bbox.union(BBox::point(x, y));

            let mut side = |other: Option<u32>| match other {
                Some(o) if o == l => {}
                Some(_) | None => regions[l as usize].perimeter += 1,
            };
            side((x > 0).then(|| labels[i - 1]));
            side((x + 1 < w).then(|| labels[i + 1]));
            side((y > 0).then(|| labels[i - w]));
            side((y + 1 < h).then(|| labels[i + w]));

            for j in [(x + 1 < w).then_some(i + 1), (y + 1 < h).then_some(i + w)].into_iter().flatten() {
                let o = labels[j];
                if o != l {
                    *shared.entry((l.min(o), l.max(o))).or_insert(0) += 1;
                }
            }
        }
    }

    let edges = shared
        .into_iter()
        .map(|((a, b), len)| ((a, b), edge_stats(&regions[a as usize], &regions[b as usize], len)))
        .collect();
    Ok(RegionGraph {
        width: w,
        height: h,
        labels: labels.to_vec(),
        regions,
        edges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageWeights {
    pub w_color: f64,
    pub w_hist: f64,
    pub w_boundary: f64,
}

impl Default for StageWeights {
    fn default() -> Self {
        Self {
            w_color: 0.5,
            w_hist: 0.3,
            w_boundary: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    /// Stage-one ΔE threshold (strict).
    pub stage1_color_thresh: f64,
    /// Stage-two score threshold (strict).
    pub stage2_score_thresh: f64,
    pub stage2_weights: StageWeights,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            stage1_color_thresh: 8.0,
            stage2_score_thresh: 0.35,
            stage2_weights: StageWeights::default(),
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stage1_color_thresh >= 0.0) || !(self.stage2_score_thresh >= 0.0) {
            return Err(Error::Config("merge thresholds must be >= 0".into()));
        }
        let w = self.stage2_weights;
        if [w.w_color, w.w_hist, w.w_boundary].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("merge weights must be non-negative".into()));
        }
        if (w.w_color + w.w_hist + w.w_boundary - 1.0).abs() > 1e-9 {
            return Err(Error::Config("merge weights must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeStage {
    Color,
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeEvent {
    pub stage: MergeStage,
    pub kept: u32,
    pub absorbed: u32,
    pub key: f64,
    pub segments_after: usize,
}

#[derive(Debug, Clone)]
pub struct MergeOutput {
    pub labels: LabelMap,
    pub events: Vec<MergeEvent>,
}

#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    key: f64,
    a: u32,
    b: u32,
    version_a: u32,
    version_b: u32,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry {}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueEntry {
    // Reversed: BinaryHeap pops the smallest key, then the lowest ids.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

struct Merger {
    regions: Vec<Option<Region>>,
    /// Per region: neighbour id -> shared boundary length.
    adjacency: Vec<BTreeMap<u32, usize>>,
    versions: Vec<u32>,
    alive: usize,
    events: Vec<MergeEvent>,
}

impl Merger {
    fn new(g: &RegionGraph) -> Self {
        let n = g.regions.len();
        let mut adjacency = vec![BTreeMap::new(); n];
        for (&(a, b), e) in &g.edges {
            adjacency[a as usize].insert(b, e.shared_boundary_len);
            adjacency[b as usize].insert(a, e.shared_boundary_len);
        }
        Self {
            regions: g.regions.iter().cloned().map(Some).collect(),
            adjacency,
            versions: vec![0; n],
            alive: n,
            events: Vec::new(),
        }
    }

    fn region(&self, id: u32) -> &Region {
        self.regions[id as usize].as_ref().expect("live region")
    }

    fn entry(&self, a: u32, b: u32, key: &impl Fn(&Region, &Region, usize) -> f64) -> QueueEntry {
        let (a, b) = (a.min(b), a.max(b));
        let shared = self.adjacency[a as usize][&b];
        QueueEntry {
            key: key(self.region(a), self.region(b), shared),
            a,
            b,
            version_a: self.versions[a as usize],
            version_b: self.versions[b as usize],
        }
    }

    fn is_current(&self, e: &QueueEntry) -> bool {
        self.regions[e.a as usize].is_some()
            && self.regions[e.b as usize].is_some()
            && self.versions[e.a as usize] == e.version_a
            && self.versions[e.b as usize] == e.version_b
    }

    fn run_stage(&mut self, stage: MergeStage, thresh: f64, key: impl Fn(&Region, &Region, usize) -> f64) {
        let mut heap = BinaryHeap::new();
        for a in 0..self.regions.len() as u32 {
            if self.regions[a as usize].is_none() {
                continue;
            }
            for &b in self.adjacency[a as usize].keys().filter(|&&b| b > a) {
                heap.push(self.entry(a, b, &key));
            }
        }
        while let Some(e) = heap.pop() {
            if !self.is_current(&e) {
                continue;
            }
            if !(e.key < thresh) {
                break;
            }
            self.merge(e.a, e.b);
            self.events.push(MergeEvent {
                stage,
                kept: e.a,
                absorbed: e.b,
                key: e.key,
                segments_after: self.alive,
            });
            let neighbours: Vec<u32> = self.adjacency[e.a as usize].keys().copied().collect();
            for n in neighbours {
                heap.push(self.entry(e.a, n, &key));
            }
        }
    }

    /// Folds `absorbed` into `kept` (the lower id).
    fn merge(&mut self, kept: u32, absorbed: u32) {
        let gone = self.regions[absorbed as usize].take().expect("live region");
        let gone_adj = std::mem::take(&mut self.adjacency[absorbed as usize]);
        let shared = gone_adj[&kept];
        self.regions[kept as usize]
            .as_mut()
            .expect("live region")
            .absorb(&gone, shared);
        self.adjacency[kept as usize].remove(&absorbed);
        for (n, len) in gone_adj {
            if n == kept {
                continue;
            }
            self.adjacency[n as usize].remove(&absorbed);
            *self.adjacency[n as usize].entry(kept).or_insert(0) += len;
            *self.adjacency[kept as usize].entry(n).or_insert(0) += len;
        }
        self.versions[kept as usize] += 1;
        self.alive -= 1;
    }
}

pub fn hierarchical_merge(g: &RegionGraph, cfg: &MergeConfig) -> Result<LabelMap> {
    Ok(hierarchical_merge_traced(g, cfg)?.labels)
}

/// Like [`hierarchical_merge`] but also returns every merge event in order.
pub fn hierarchical_merge_traced(g: &RegionGraph, cfg: &MergeConfig) -> Result<MergeOutput> {
    cfg.validate()?;
    let mut m = Merger::new(g);

    m.run_stage(MergeStage::Color, cfg.stage1_color_thresh, |a, b, _| {
        delta_e(a.mean_lab(), b.mean_lab())
    });

    let w = cfg.stage2_weights;
    m.run_stage(MergeStage::Score, cfg.stage2_score_thresh, move |a, b, shared| {
        let color = delta_e(a.mean_lab(), b.mean_lab()) / 100.0;
        let hist = chi_squared(a, b);
        let smaller = if (b.pixel_count, b.id) < (a.pixel_count, a.id) { b } else { a };
        let boundary = shared as f64 / smaller.perimeter.max(1) as f64;
        w.w_color * color + w.w_hist * hist + w.w_boundary * (1.0 - boundary)
    });

    // Every original region maps to its surviving root; roots are numbered in
    // ascending id order so an unmerged graph keeps its labels exactly.
    let n = g.regions.len();
    let mut root: Vec<u32> = (0..n as u32).collect();
    for e in &m.events {
        root[e.absorbed as usize] = e.kept;
    }
    fn resolve(root: &[u32], mut r: u32) -> u32 {
        while root[r as usize] != r {
            r = root[r as usize];
        }
        r
    }
    let mut dense = vec![u32::MAX; n];
    let mut next = 0u32;
    for id in 0..n {
        if m.regions[id].is_some() {
            dense[id] = next;
            next += 1;
        }
    }
    let mapping: Vec<u32> = (0..n as u32).map(|id| dense[resolve(&root, id) as usize]).collect();
    let labels = g.labels.iter().map(|&l| mapping[l as usize]).collect();
    let labels = LabelMap::new(g.width, g.height, labels, next as usize)?;
    Ok(MergeOutput {
        labels,
        events: m.events,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    /// Minimum fraction of a segment covered by seed pixels (inclusive).
    pub overlap_thresh: f64,
    /// Seeds with fewer pixels select nothing.
    pub min_seed_pixels: usize,
    /// Seed components smaller than this never trigger the containment
    /// rule. Refinement leaves a few isolated specks of mask noise, and each
    /// would otherwise pull in whichever segment surrounds it.
    pub min_component_pixels: usize,
    /// Square dilation radius applied by [`finalize_mask`].
    pub final_dilate_radius: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            overlap_thresh: 0.30,
            min_seed_pixels: 1,
            min_component_pixels: 64,
            final_dilate_radius: 2,
        }
    }
}

impl SelectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_thresh > 0.0 && self.overlap_thresh <= 1.0) {
            return Err(Error::Config("select.overlap_thresh must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Share of a seed component that one segment must hold to be selected.
pub const COMPONENT_CONTAINMENT: f64 = 0.8;

/// Selects whole segments of `merged` guided by the seed.
///
/// A segment is kept when the seed covers at least `overlap_thresh` of it, or
/// when it holds at least 80% of some 4-connected seed component of at least
/// `min_component_pixels` pixels.
pub fn select_text_segments(merged: &LabelMap, seed: &BinaryMask, cfg: &SelectConfig) -> Result<BinaryMask> {
    ensure_same_dims(merged.dims(), seed.dims())?;
    cfg.validate()?;
    let (w, h) = merged.dims();
    if seed.count() < cfg.min_seed_pixels.max(1) {
        return Ok(BinaryMask::empty(w, h));
    }

    let n = merged.n_segments();
    let sizes = merged.region_sizes();
    let mut overlap = vec![0usize; n];
    for (&l, _) in merged.labels().iter().zip(seed.data()).filter(|(_, &s)| s) {
        overlap[l as usize] += 1;
    }
    let mut selected: Vec<bool> = overlap
        .iter()
        .zip(&sizes)
        .map(|(&o, &s)| o as f64 / s as f64 >= cfg.overlap_thresh)
        .collect();

    // Seed components: count how each one is split across segments.
    let (comp, _) = connected_components(w, h, seed.data());
    let mut per_comp: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    for ((&c, &l), _) in comp.iter().zip(merged.labels()).zip(seed.data()).filter(|(_, &s)| s) {
        *per_comp.entry(c).or_default().entry(l).or_insert(0) += 1;
    }
    for split in per_comp.values() {
        let total: usize = split.values().sum();
        if total < cfg.min_component_pixels {
            continue;
        }
        for (&l, &count) in split {
            if count as f64 >= COMPONENT_CONTAINMENT * total as f64 {
                selected[l as usize] = true;
            }
        }
    }

    let data = merged.labels().iter().map(|&l| selected[l as usize]).collect();
    BinaryMask::new(w, h, data)
}

/// Square dilation by `final_dilate_radius`, clipped at the border.
pub fn finalize_mask(selected: &BinaryMask, cfg: &SelectConfig) -> BinaryMask {
    dilate_clipped(selected, StructuringElement::square(cfg.final_dilate_radius))
}
