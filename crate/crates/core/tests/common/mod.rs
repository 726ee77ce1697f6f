//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strkit::dataset::{PairEntry, PairManifest};
use strkit::raster::{save_mask, save_rgb, BinaryMask, RgbImage};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rgb(r: &mut impl Rng, w: usize, h: usize) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| [r.gen(), r.gen(), r.gen()]).unwrap()
}

pub fn random_mask(r: &mut impl Rng, w: usize, h: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| r.gen_bool(p))
}

/// Square dilation by direct neighbourhood scan.
pub fn dilate_square(m: &BinaryMask, radius: usize) -> BinaryMask {
    let (w, h) = m.dims();
    let r = radius as isize;
    BinaryMask::from_fn(w, h, |x, y| {
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && m.get(nx as usize, ny as usize)
            })
        })
    })
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.data().iter().zip(b.data()) {
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub struct Fixture {
    pub image: RgbImage,
    pub gt: BinaryMask,
    pub initial: BinaryMask,
}

/// A textured background with a few thick strokes of one ink colour.
/// The initial mask is the stroke mask dilated by 5 px with 10% of all
/// pixels flipped.
pub fn text_fixture(seed: u64, size: usize) -> Fixture {
    let mut r = rng(0x5eed_0000 + seed);
    let base: [f64; 3] = [r.gen_range(120.0..220.0), r.gen_range(120.0..220.0), r.gen_range(120.0..220.0)];
    let grad: [f64; 2] = [r.gen_range(-30.0..30.0), r.gen_range(-30.0..30.0)];
    let period = r.gen_range(9.0..23.0);
    let ink: [f64; 3] = [r.gen_range(0.0..60.0), r.gen_range(0.0..60.0), r.gen_range(0.0..60.0)];

    let s = size as f64;
    let n_strokes = r.gen_range(4..9);
    let strokes: Vec<(f64, f64, f64, f64, f64)> = (0..n_strokes)
        .map(|_| {
            let (x0, y0) = (r.gen_range(0.1..0.9) * s, r.gen_range(0.1..0.9) * s);
            let len = r.gen_range(0.15..0.4) * s;
            let ang: f64 = r.gen_range(0.0..std::f64::consts::PI);
            let half = r.gen_range(0.008..0.02) * s;
            (x0, y0, x0 + len * ang.cos(), y0 + len * ang.sin(), half)
        })
        .collect();
    let on_stroke = |x: f64, y: f64| {
        strokes.iter().any(|&(x0, y0, x1, y1, half)| {
            let (dx, dy) = (x1 - x0, y1 - y0);
            let t = (((x - x0) * dx + (y - y0) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            let (px, py) = (x0 + t * dx - x, y0 + t * dy - y);
            px * px + py * py <= half * half
        })
    };
    let gt = BinaryMask::from_fn(size, size, |x, y| on_stroke(x as f64 + 0.5, y as f64 + 0.5));

    let mut noise = rng(0xa11_0000 + seed);
    let image = RgbImage::from_fn(size, size, |x, y| {
        let (u, v) = (x as f64 / s, y as f64 / s);
        let tex = 12.0 * ((x as f64 / period).sin() * (y as f64 / (period * 1.3)).cos());
        let jitter: f64 = noise.gen_range(-6.0..6.0);
        let c = if gt.get(x, y) {
            [ink[0] + jitter, ink[1] + jitter, ink[2] + jitter]
        } else {
            let g = grad[0] * u + grad[1] * v + tex + jitter;
            [base[0] + g, base[1] + g * 0.8, base[2] - g * 0.5]
        };
        c.map(|v| v.round().clamp(0.0, 255.0) as u8)
    })
    .unwrap();

    let mut initial = dilate_square(&gt, 5);
    let mut flip = rng(0xf11b_0000 + seed);
    for v in initial.data_mut() {
        if flip.gen_bool(0.10) {
            *v = !*v;
        }
    }
    Fixture { image, gt, initial }
}

/// Writes fixtures as `<dir>/fx{i}.png`, `fx{i}_gt.png`, `fx{i}_mask.png`
/// and returns the manifest path. The gt image is the stroke mask rendered
/// as RGB so the evaluate command has something to score against.
pub fn write_fixture_set(dir: &Path, n: usize, size: usize) -> PathBuf {
    let mut entries = Vec::new();
    for i in 0..n {
        let f = text_fixture(i as u64, size);
        let id = format!("fx{i}");
        save_rgb(&f.image, dir.join(format!("{id}.png"))).unwrap();
        let gt_img = RgbImage::from_fn(size, size, |x, y| if f.gt.get(x, y) { [255; 3] } else { [0; 3] }).unwrap();
        save_rgb(&gt_img, dir.join(format!("{id}_gt.png"))).unwrap();
        save_mask(&f.initial, dir.join(format!("{id}_mask.png"))).unwrap();
        entries.push(PairEntry {
            id: id.clone(),
            input: format!("{id}.png").into(),
            gt: format!("{id}_gt.png").into(),
            mask: Some(format!("{id}_mask.png").into()),
        });
    }
    let manifest = PairManifest {
        root: dir.to_path_buf(),
        entries,
    };
    let path = dir.join("manifest.json");
    manifest.save(&path).unwrap();
    path
}
