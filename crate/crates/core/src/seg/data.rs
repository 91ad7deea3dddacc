//! Synthetic occluded-shape images: three elliptical structures (inner
//! chamber, surrounding wall, side chamber) under multiplicative speckle
//! noise, with an optional straight-edged shadow that zeroes part of the
//! structure boundary. Masks always describe the full, unoccluded anatomy.

use crate::error::{Error, Result};
use crate::numerics::rng::stream;
use rand::Rng;
use rand_distr::StandardNormal;

pub const IMAGE_SIZE: usize = 32;

pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_INNER: u8 = 1;
pub const CLASS_WALL: u8 = 2;
pub const CLASS_SIDE: u8 = 3;

const INTENSITY: [f64; 4] = [0.45, 0.18, 0.75, 0.22];
const SPECKLE_SIGMA: f64 = 0.15;
// Floor above zero so "pixel == 0.0" identifies occluded pixels exactly.
const INTENSITY_FLOOR: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// Row-major IMAGE_SIZE x IMAGE_SIZE intensities in [0, 1].
    pub image: Vec<f64>,
    /// Row-major class labels; complete even where the image is occluded.
    pub mask: Vec<u8>,
    pub occlusion_level: f64,
    pub seed: u64,
}

pub fn generate_dataset(n: usize, occlusion_level: f64, seed: u64) -> Result<Vec<SyntheticSample>> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "dataset size must be at least 1".to_string(),
        ));
    }
    if !(0.0..=1.0).contains(&occlusion_level) {
        return Err(Error::InvalidParameter(format!(
            "occlusion level must lie in [0, 1], got {occlusion_level}"
        )));
    }
    Ok((0..n)
        .map(|i| generate_sample(occlusion_level, seed, i as u64))
        .collect())
}

/// Structure pixels that touch a different class through a 4-neighbour.
pub fn boundary_pixels(mask: &[u8]) -> Vec<usize> {
    let s = IMAGE_SIZE as isize;
    let mut out = Vec::new();
    for r in 0..s {
        for c in 0..s {
            let here = mask[(r * s + c) as usize];
            if here == CLASS_BACKGROUND {
                continue;
            }
            let mut edge = false;
            for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nr >= s || nc < 0 || nc >= s {
                    edge = true;
                } else if mask[(nr * s + nc) as usize] != here {
                    edge = true;
                }
            }
            if edge {
                out.push((r * s + c) as usize);
            }
        }
    }
    out
}

fn generate_sample(occlusion_level: f64, master: u64, index: u64) -> SyntheticSample {
    let mut rng = stream(master, "dataset.sample", index);
    let hw = IMAGE_SIZE * IMAGE_SIZE;

    // pose and geometry of the three structures, main axes in pixels
    let cx: f64 = rng.gen_range(14.0..18.0);
    let cy: f64 = rng.gen_range(10.0..13.0);
    let theta: f64 = rng.gen_range(-0.25..0.25);
    let ax: f64 = rng.gen_range(6.5..8.5);
    let ay: f64 = rng.gen_range(7.5..9.5);
    let wall: f64 = rng.gen_range(2.2..3.2);
    let sbx: f64 = rng.gen_range(2.8..3.8);
    let sby: f64 = rng.gen_range(2.2..3.0);

    let (sin_t, cos_t) = theta.sin_cos();
    // side chamber sits below the main body along the rotated vertical axis
    let off = ay + sby + 0.8;
    let side_cx = cx - sin_t * off;
    let side_cy = cy + cos_t * off;

    let inside = |px: f64, py: f64, ox: f64, oy: f64, rx: f64, ry: f64| -> bool {
        let dx = px - ox;
        let dy = py - oy;
        let u = cos_t * dx + sin_t * dy;
        let v = -sin_t * dx + cos_t * dy;
        (u / rx) * (u / rx) + (v / ry) * (v / ry) <= 1.0
    };

    let mut mask = vec![CLASS_BACKGROUND; hw];
    for r in 0..IMAGE_SIZE {
        for c in 0..IMAGE_SIZE {
            let (px, py) = (c as f64, r as f64);
            let label = if inside(px, py, cx, cy, ax - wall, ay - wall) {
                CLASS_INNER
            } else if inside(px, py, cx, cy, ax, ay) {
                CLASS_WALL
            } else if inside(px, py, side_cx, side_cy, sbx, sby) {
                CLASS_SIDE
            } else {
                CLASS_BACKGROUND
            };
            mask[r * IMAGE_SIZE + c] = label;
        }
    }

    let mut image = vec![0.0; hw];
    for (i, &label) in mask.iter().enumerate() {
        let speckle = (SPECKLE_SIGMA * rng.sample::<f64, _>(StandardNormal)).exp();
        image[i] = (INTENSITY[label as usize] * speckle).clamp(INTENSITY_FLOOR, 1.0);
    }

    // Straight-edged shadow: zero exactly round(level * |B|) boundary pixels,
    // chosen as the ones farthest along a random direction's negative side,
    // and dim everything else strictly behind that line.
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let boundary = boundary_pixels(&mask);
    let zero_count = (occlusion_level * boundary.len() as f64).round() as usize;
    if zero_count > 0 {
        let (dy, dx) = phi.sin_cos();
        let proj = |i: usize| {
            let (r, c) = (i / IMAGE_SIZE, i % IMAGE_SIZE);
            dx * c as f64 + dy * r as f64
        };
        let mut order: Vec<usize> = boundary.clone();
        order.sort_by(|&a, &b| proj(a).partial_cmp(&proj(b)).unwrap().then(a.cmp(&b)));
        let chosen = &order[..zero_count.min(order.len())];
        let threshold = proj(*chosen.last().expect("zero_count > 0"));
        for i in 0..hw {
            if proj(i) < threshold {
                image[i] = 0.0;
            }
        }
        for &i in chosen {
            image[i] = 0.0;
        }
    }

    SyntheticSample {
        image,
        mask,
        occlusion_level,
        seed: stream_seed(master, index),
    }
}

fn stream_seed(master: u64, index: u64) -> u64 {
    crate::numerics::rng::derive_seed(master, "dataset.sample", index)
}
