//! SIFT descriptor on a fixed-size rectified patch: dominant orientation from
//! a 36-bin gradient histogram, then 4x4 spatial cells x 8 orientation bins
//! with trilinear interpolation, normalized with the usual 0.2 clamp.

use alloc::vec;
use alloc::vec::Vec;

use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::util::central_gradients;

pub const DESCRIPTOR_LEN: usize = 128;
const ORI_BINS: usize = 36;
const SPATIAL_CELLS: usize = 4;
const ORI_CELL_BINS: usize = 8;
const CLAMP: f32 = 0.2;

/// Dominant gradient orientation of the patch, in radians.
///
/// 36-bin histogram of gradient angles, magnitude- and Gaussian-weighted,
/// smoothed and peak-interpolated parabolically.
pub fn dominant_orientation(patch: &Image) -> Result<f64> {
    let (gx, gy) = central_gradients(patch);
    let (w, h) = (patch.width(), patch.height());
    let cx = (w - 1) as f64 / 2.0;
    let cy = (h - 1) as f64 / 2.0;
    let sigma = w.min(h) as f64 / 6.0;
    let radius = (w.min(h) as f64 / 2.0 - 1.0).max(1.0);
    let mut hist = [0.0f64; ORI_BINS];
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let r2 = dx * dx + dy * dy;
            if r2 > radius * radius {
                continue;
            }
            let gxv = gx[(y, x)];
            let gyv = gy[(y, x)];
            let mag = libm::sqrt(gxv * gxv + gyv * gyv);
            if mag < 1e-12 {
                continue;
            }
            let angle = libm::atan2(gyv, gxv);
            let weight = mag * libm::exp(-r2 / (2.0 * sigma * sigma));
            let bin = ((angle + PI) / (2.0 * PI) * ORI_BINS as f64) as usize % ORI_BINS;
            hist[bin] += weight;
            total += weight;
        }
    }
    if total < 1e-9 {
        return Err(Error::DegeneratePatch);
    }
    // circular smoothing, two passes
    for _ in 0..2 {
        let prev = hist;
        for i in 0..ORI_BINS {
            let l = prev[(i + ORI_BINS - 1) % ORI_BINS];
            let r = prev[(i + 1) % ORI_BINS];
            hist[i] = 0.25 * l + 0.5 * prev[i] + 0.25 * r;
        }
    }
    let peak = hist
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let l = hist[(peak + ORI_BINS - 1) % ORI_BINS];
    let c = hist[peak];
    let r = hist[(peak + 1) % ORI_BINS];
    let denom = l - 2.0 * c + r;
    let offset = if denom.abs() < 1e-12 {
        0.0
    } else {
        (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
    };
    let bin = peak as f64 + offset;
    Ok(bin / ORI_BINS as f64 * 2.0 * PI - PI)
}

/// Compute the 128-dimensional descriptor of a rectified patch.
///
/// The descriptor support is a square of half-width `0.35 * min(w, h)`
/// rotated by the dominant orientation, so a 45° in-plane rotation keeps the
/// support inside the patch.
pub fn sift_descriptor(patch: &Image) -> Result<Vec<f32>> {
    if patch.width() < 32 || patch.height() < 32 {
        return Err(Error::ImageTooSmall {
            need_w: 32,
            need_h: 32,
            got_w: patch.width(),
            got_h: patch.height(),
        });
    }
    let theta = dominant_orientation(patch)?;
    descriptor_with_orientation(patch, theta)
}

pub fn descriptor_with_orientation(patch: &Image, theta: f64) -> Result<Vec<f32>> {
    let (gx, gy) = central_gradients(patch);
    let (w, h) = (patch.width(), patch.height());
    let cx = (w - 1) as f64 / 2.0;
    let cy = (h - 1) as f64 / 2.0;
    let half_width = 0.35 * w.min(h) as f64;
    let cell = 2.0 * half_width / SPATIAL_CELLS as f64;
    let sigma = half_width;
    let (sin_t, cos_t) = (libm::sin(theta), libm::cos(theta));
    let mut acc = vec![0.0f64; DESCRIPTOR_LEN];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // rotate into the descriptor frame
            let rx = cos_t * dx + sin_t * dy;
            let ry = -sin_t * dx + cos_t * dy;
            // cell coordinates in [-0.5, 3.5] over the support
            let cu = rx / cell + SPATIAL_CELLS as f64 / 2.0 - 0.5;
            let cv = ry / cell + SPATIAL_CELLS as f64 / 2.0 - 0.5;
            if cu <= -1.0 || cu >= SPATIAL_CELLS as f64 || cv <= -1.0 || cv >= SPATIAL_CELLS as f64
            {
                continue;
            }
            let gxv = gx[(y, x)];
            let gyv = gy[(y, x)];
            let mag = libm::sqrt(gxv * gxv + gyv * gyv);
            if mag < 1e-12 {
                continue;
            }
            let angle = libm::atan2(gyv, gxv) - theta;
            let mut ori = angle % (2.0 * PI);
            if ori < 0.0 {
                ori += 2.0 * PI;
            }
            let ob = ori / (2.0 * PI) * ORI_CELL_BINS as f64;
            let weight = mag * libm::exp(-(rx * rx + ry * ry) / (2.0 * sigma * sigma));
            trilinear_accumulate(&mut acc, cu, cv, ob, weight);
        }
    }
    let norm: f64 = libm::sqrt(acc.iter().map(|v| v * v).sum());
    if norm < 1e-9 {
        return Err(Error::DegeneratePatch);
    }
    let mut desc: Vec<f32> = acc.iter().map(|v| ((v / norm) as f32).min(CLAMP)).collect();
    let norm2: f32 = libm::sqrtf(desc.iter().map(|v| v * v).sum::<f32>());
    if norm2 < 1e-9 {
        return Err(Error::DegeneratePatch);
    }
    for v in &mut desc {
        *v /= norm2;
    }
    Ok(desc)
}

fn trilinear_accumulate(acc: &mut [f64], cu: f64, cv: f64, ob: f64, weight: f64) {
    let u0 = libm::floor(cu) as i64;
    let v0 = libm::floor(cv) as i64;
    let o0 = libm::floor(ob) as i64;
    let fu = cu - u0 as f64;
    let fv = cv - v0 as f64;
    let fo = ob - o0 as f64;
    for (du, wu) in [(0i64, 1.0 - fu), (1, fu)] {
        let u = u0 + du;
        if u < 0 || u >= SPATIAL_CELLS as i64 {
            continue;
        }
        for (dv, wv) in [(0i64, 1.0 - fv), (1, fv)] {
            let v = v0 + dv;
            if v < 0 || v >= SPATIAL_CELLS as i64 {
                continue;
            }
            for (doo, wo) in [(0i64, 1.0 - fo), (1, fo)] {
                let o = (o0 + doo).rem_euclid(ORI_CELL_BINS as i64);
                let idx = (v as usize * SPATIAL_CELLS + u as usize) * ORI_CELL_BINS + o as usize;
                acc[idx] += weight * wu * wv * wo;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use crate::util::descriptor_distance;
    use crate::warp::{warp_crop, AffineWarp};
    use nalgebra::Vector2;

    #[test]
    fn constant_patch_is_degenerate() {
        let patch = Image::constant(50, 50, 0.5);
        assert!(matches!(sift_descriptor(&patch), Err(Error::DegeneratePatch)));
    }

    #[test]
    fn descriptor_shape_and_norm() {
        let patch = synth::window_grid(50, 50, 12, 12, 6, 6, 0.85, 0.1);
        let d = sift_descriptor(&patch).unwrap();
        assert_eq!(d.len(), 128);
        let norm: f32 = d.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(d.iter().all(|v| *v >= 0.0));
        // clamp applied before renormalization, so entries stay below ~0.3
        assert!(d.iter().all(|v| *v <= 0.3));
    }

    #[test]
    fn rotation_robustness_at_45_degrees() {
        let big = synth::window_grid(140, 140, 18, 18, 9, 9, 0.85, 0.1);
        let center = Vector2::new(69.5, 69.5);
        let patch = big.crop(45, 45, 50, 50).unwrap();
        let rot = AffineWarp::linear_about(
            AffineWarp::from_rotation(45f64.to_radians()).linear,
            center,
        );
        let (rotated_big, _) = warp_crop(&big, &rot, center, (140, 140)).unwrap();
        let rotated = rotated_big.crop(45, 45, 50, 50).unwrap();
        let d1 = sift_descriptor(&patch).unwrap();
        let d2 = sift_descriptor(&rotated).unwrap();
        let dist = descriptor_distance(&d1, &d2);
        assert!(dist <= 0.35, "45° rotation distance {dist}");
    }

    #[test]
    fn deterministic() {
        let patch = synth::facade(50, 50, 11);
        assert_eq!(sift_descriptor(&patch).unwrap(), sift_descriptor(&patch).unwrap());
    }

    #[test]
    fn small_patch_rejected() {
        let patch = synth::checkerboard(20, 20, 5);
        assert!(matches!(
            sift_descriptor(&patch),
            Err(Error::ImageTooSmall { .. })
        ));
    }
}
