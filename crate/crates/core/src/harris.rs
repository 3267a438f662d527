//! Harris corner detection with non-maximum suppression and sub-pixel
//! refinement.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::util::{gaussian_blur, sobel_gradients};

/// A detected corner with sub-pixel position and Harris response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub response: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarrisParams {
    /// Trace weight in `R = det(M) - k trace(M)^2`.
    pub k: f64,
    /// Std-dev of the structure-tensor Gaussian window.
    pub sigma: f64,
    /// Non-maximum suppression radius in pixels.
    pub nms_radius: usize,
    /// Response threshold relative to the maximum response.
    pub rel_threshold: f64,
    /// Maximum number of keypoints returned.
    pub max_points: usize,
    /// Keypoints closer than this to any border are discarded.
    pub border_margin: usize,
}

impl Default for HarrisParams {
    fn default() -> Self {
        Self {
            k: 0.04,
            sigma: 1.5,
            nms_radius: 5,
            rel_threshold: 0.01,
            max_points: 500,
            border_margin: 25,
        }
    }
}

/// Harris response map `R = det(M) - k trace(M)^2` with a Gaussian-weighted
/// gradient structure tensor.
pub fn harris_response(img: &Image, params: &HarrisParams) -> DMatrix<f64> {
    let (gx, gy) = sobel_gradients(img);
    let ixx = gx.component_mul(&gx);
    let iyy = gy.component_mul(&gy);
    let ixy = gx.component_mul(&gy);
    let sxx = gaussian_blur(&ixx, params.sigma);
    let syy = gaussian_blur(&iyy, params.sigma);
    let sxy = gaussian_blur(&ixy, params.sigma);
    let (rows, cols) = sxx.shape();
    DMatrix::from_fn(rows, cols, |y, x| {
        let a = sxx[(y, x)];
        let b = sxy[(y, x)];
        let c = syy[(y, x)];
        let det = a * c - b * b;
        let tr = a + c;
        det - params.k * tr * tr
    })
}

/// Detect Harris corners, strongest first.
pub fn harris_corners(img: &Image, params: &HarrisParams) -> Result<Vec<Keypoint>> {
    if img.width() < 16 || img.height() < 16 {
        return Err(Error::ImageTooSmall {
            need_w: 16,
            need_h: 16,
            got_w: img.width(),
            got_h: img.height(),
        });
    }
    let response = harris_response(img, params);
    let max_r = response.iter().cloned().fold(f64::MIN, f64::max);
    if max_r <= 0.0 {
        return Ok(Vec::new());
    }
    let threshold = params.rel_threshold * max_r;
    let margin = params.border_margin;
    let r = params.nms_radius as i64;
    let (h, w) = response.shape();
    let mut kps = Vec::new();
    for y in margin..h.saturating_sub(margin) {
        for x in margin..w.saturating_sub(margin) {
            let v = response[(y, x)];
            if v <= threshold {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let yy = y as i64 + dy;
                    let xx = x as i64 + dx;
                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        continue;
                    }
                    let n = response[(yy as usize, xx as usize)];
                    // strict on one side so plateaus yield a single maximum
                    if n > v || (n == v && (dy, dx) < (0, 0)) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let (sx, sy) = refine_subpixel(&response, x, y);
            kps.push(Keypoint {
                x: sx,
                y: sy,
                response: v,
            });
        }
    }
    kps.sort_by(|a, b| b.response.partial_cmp(&a.response).unwrap());
    kps.truncate(params.max_points);
    Ok(kps)
}

/// Quadratic fit of the 3x3 response neighborhood; offset clamped to ±0.5.
fn refine_subpixel(r: &DMatrix<f64>, x: usize, y: usize) -> (f64, f64) {
    let (h, w) = r.shape();
    if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
        return (x as f64, y as f64);
    }
    let dx = (r[(y, x + 1)] - r[(y, x - 1)]) / 2.0;
    let dy = (r[(y + 1, x)] - r[(y - 1, x)]) / 2.0;
    let dxx = r[(y, x + 1)] - 2.0 * r[(y, x)] + r[(y, x - 1)];
    let dyy = r[(y + 1, x)] - 2.0 * r[(y, x)] + r[(y - 1, x)];
    let dxy = (r[(y + 1, x + 1)] - r[(y + 1, x - 1)] - r[(y - 1, x + 1)] + r[(y - 1, x - 1)]) / 4.0;
    let det = dxx * dyy - dxy * dxy;
    if det.abs() < 1e-18 {
        return (x as f64, y as f64);
    }
    let ox = (-(dyy * dx - dxy * dy) / det).clamp(-0.5, 0.5);
    let oy = (-(dxx * dy - dxy * dx) / det).clamp(-0.5, 0.5);
    (x as f64 + ox, y as f64 + oy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn constant_image_yields_no_corners() {
        let img = Image::constant(64, 64, 0.5);
        let kps = harris_corners(&img, &HarrisParams::default()).unwrap();
        assert!(kps.is_empty());
    }

    #[test]
    fn white_square_has_four_corners() {
        let img = Image::from_fn(100, 100, |x, y| {
            if (40..60).contains(&x) && (40..60).contains(&y) {
                1.0
            } else {
                0.0
            }
        });
        let kps = harris_corners(&img, &HarrisParams::default()).unwrap();
        assert_eq!(kps.len(), 4);
        let corners = [(40.0, 40.0), (59.0, 40.0), (40.0, 59.0), (59.0, 59.0)];
        for (cx, cy) in corners {
            assert!(
                kps.iter()
                    .any(|k| (k.x - cx).abs() <= 2.0 && (k.y - cy).abs() <= 2.0),
                "no keypoint near ({cx}, {cy})"
            );
        }
    }

    #[test]
    fn checkerboard_corner_count_matches_lattice() {
        let cell = 10;
        let img = synth::checkerboard(120, 120, cell);
        let params = HarrisParams {
            max_points: 2000,
            ..HarrisParams::default()
        };
        let kps = harris_corners(&img, &params).unwrap();
        // interior lattice crossings respecting the 25 px margin:
        // crossings at multiples of 10 in [30, 90] on both axes -> 7 x 7
        let expected = 49.0;
        let n = kps.len() as f64;
        assert!(
            (n - expected).abs() <= expected * 0.10,
            "got {n}, expected {expected} +- 10%"
        );
    }

    #[test]
    fn intensity_scaling_invariance() {
        let img = synth::checkerboard(100, 100, 12);
        let dim = Image::from_fn(100, 100, |x, y| img.get(x, y) * 0.35);
        let kps_a = harris_corners(&img, &HarrisParams::default()).unwrap();
        let kps_b = harris_corners(&dim, &HarrisParams::default()).unwrap();
        assert_eq!(kps_a.len(), kps_b.len());
        for (a, b) in kps_a.iter().zip(&kps_b) {
            assert!((a.x - b.x).abs() <= 1.0 && (a.y - b.y).abs() <= 1.0);
        }
    }

    #[test]
    fn margin_respected() {
        let img = synth::checkerboard(90, 90, 8);
        let kps = harris_corners(&img, &HarrisParams::default()).unwrap();
        assert!(!kps.is_empty());
        for k in &kps {
            assert!(k.x >= 25.0 && k.x <= 64.0);
            assert!(k.y >= 25.0 && k.y <= 64.0);
        }
    }

    #[test]
    fn small_image_rejected() {
        let img = Image::constant(10, 10, 0.2);
        assert!(matches!(
            harris_corners(&img, &HarrisParams::default()),
            Err(Error::ImageTooSmall { .. })
        ));
    }
}
