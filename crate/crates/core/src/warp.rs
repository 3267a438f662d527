//! Affine and projective point maps plus windowed resampling.

use alloc::vec::Vec;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, ValidityMask};

/// An invertible planar point map.
pub trait PointMap {
    fn apply(&self, p: Vector2<f64>) -> Vector2<f64>;
    fn inverted(&self) -> Result<Self>
    where
        Self: Sized;
}

/// Affine transform `p -> L p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineWarp {
    pub linear: Matrix2<f64>,
    pub translation: Vector2<f64>,
}

impl AffineWarp {
    pub fn new(linear: Matrix2<f64>, translation: Vector2<f64>) -> Self {
        Self {
            linear,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix2::identity(), Vector2::zeros())
    }

    pub fn from_translation(t: Vector2<f64>) -> Self {
        Self::new(Matrix2::identity(), t)
    }

    pub fn from_rotation(theta: f64) -> Self {
        let (s, c) = libm::sincos(theta);
        Self::new(Matrix2::new(c, -s, s, c), Vector2::zeros())
    }

    pub fn from_scale(s: f64) -> Self {
        Self::new(Matrix2::identity() * s, Vector2::zeros())
    }

    /// Linear map applied about a fixed point: `p -> L (p - c) + c`.
    pub fn linear_about(linear: Matrix2<f64>, fixed_point: Vector2<f64>) -> Self {
        Self::new(linear, fixed_point - linear * fixed_point)
    }

    pub fn det(&self) -> f64 {
        self.linear.determinant()
    }

    /// Composition `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &AffineWarp) -> AffineWarp {
        AffineWarp::new(
            self.linear * other.linear,
            self.linear * other.translation + self.translation,
        )
    }

    pub fn to_projective(&self) -> ProjectiveWarp {
        let l = &self.linear;
        let t = &self.translation;
        ProjectiveWarp {
            matrix: Matrix3::new(
                l[(0, 0)],
                l[(0, 1)],
                t[0],
                l[(1, 0)],
                l[(1, 1)],
                t[1],
                0.0,
                0.0,
                1.0,
            ),
        }
    }

    /// Max absolute entry difference over the linear part and translation.
    pub fn max_abs_diff(&self, other: &AffineWarp) -> f64 {
        let dl = self.linear - other.linear;
        let dt = self.translation - other.translation;
        dl.iter()
            .chain(dt.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

impl PointMap for AffineWarp {
    fn apply(&self, p: Vector2<f64>) -> Vector2<f64> {
        self.linear * p + self.translation
    }

    fn inverted(&self) -> Result<Self> {
        let det = self.det();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::SingularWarp { det });
        }
        let inv = self
            .linear
            .try_inverse()
            .ok_or(Error::SingularWarp { det })?;
        Ok(AffineWarp::new(inv, -inv * self.translation))
    }
}

/// Projective transform given by a 3x3 homography, normalized to `H[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveWarp {
    pub matrix: Matrix3<f64>,
}

impl ProjectiveWarp {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        let det = matrix.determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::SingularWarp { det });
        }
        let h22 = matrix[(2, 2)];
        if h22.abs() < 1e-12 {
            return Err(Error::SingularWarp { det: h22 });
        }
        Ok(Self {
            matrix: matrix / h22,
        })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    pub fn compose(&self, other: &ProjectiveWarp) -> Result<ProjectiveWarp> {
        ProjectiveWarp::new(self.matrix * other.matrix)
    }
}

impl PointMap for ProjectiveWarp {
    fn apply(&self, p: Vector2<f64>) -> Vector2<f64> {
        let q = self.matrix * Vector3::new(p[0], p[1], 1.0);
        Vector2::new(q[0] / q[2], q[1] / q[2])
    }

    fn inverted(&self) -> Result<Self> {
        let det = self.matrix.determinant();
        let inv = self
            .matrix
            .try_inverse()
            .ok_or(Error::SingularWarp { det })?;
        ProjectiveWarp::new(inv)
    }
}

/// Resample a window of `img` under `warp`.
///
/// Output pixel `(u, v)` at offset `d` from the window center samples the
/// image at `warp⁻¹(center + d)`. Samples outside the pixel grid are filled
/// by border replication and flagged invalid in the returned mask.
pub fn warp_crop<W: PointMap>(
    img: &Image,
    warp: &W,
    center: Vector2<f64>,
    out_size: (usize, usize),
) -> Result<(Image, ValidityMask)> {
    let (w, h) = out_size;
    if w < 2 || h < 2 {
        return Err(Error::InvalidParameter(alloc::format!(
            "warp_crop output must be at least 2x2, got {w}x{h}"
        )));
    }
    let inv = warp.inverted()?;
    let cx = (w - 1) as f64 / 2.0;
    let cy = (h - 1) as f64 / 2.0;
    let mut data = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let p = Vector2::new(center[0] + u as f64 - cx, center[1] + v as f64 - cy);
            let q = inv.apply(p);
            data.push(img.sample_bilinear(q[0], q[1]));
            valid.push(img.in_support(q[0], q[1]));
        }
    }
    let out = Image::new(w, h, data)?;
    Ok((out, ValidityMask::new(w, h, valid)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stripes() -> Image {
        // vertical stripes of period 6
        Image::from_fn(36, 24, |x, _| if (x / 3) % 2 == 0 { 0.0 } else { 1.0 })
    }

    #[test]
    fn identity_warp_is_identity() {
        let img = stripes();
        let c = Vector2::new((img.width() - 1) as f64 / 2.0, (img.height() - 1) as f64 / 2.0);
        let (out, mask) = warp_crop(
            &img,
            &AffineWarp::identity(),
            c,
            (img.width(), img.height()),
        )
        .unwrap();
        assert_eq!(out, img);
        assert!(mask.all_valid());
    }

    #[test]
    fn translation_shifts_columns() {
        let img = stripes();
        let c = Vector2::new((img.width() - 1) as f64 / 2.0, (img.height() - 1) as f64 / 2.0);
        let warp = AffineWarp::from_translation(Vector2::new(3.0, 0.0));
        let (out, _) = warp_crop(&img, &warp, c, (img.width(), img.height())).unwrap();
        // interior: out(x, y) == img(x - 3, y)
        for y in 0..img.height() {
            for x in 3..img.width() {
                assert!(
                    (out.get(x, y) - img.get(x - 3, y)).abs() < 1e-12,
                    "mismatch at ({x}, {y})"
                );
            }
        }
    }

    #[test]
    fn rotation_twice_matches_composed() {
        // asymmetric 5x5 pattern embedded in a 21x21 canvas
        let img = Image::from_fn(21, 21, |x, y| {
            if (8..13).contains(&x) && (8..13).contains(&y) {
                ((x - 8) * 5 + (y - 8)) as f64 / 25.0
            } else {
                0.0
            }
        });
        let c = Vector2::new(10.0, 10.0);
        let rot90 = AffineWarp::linear_about(
            Matrix2::new(0.0, -1.0, 1.0, 0.0),
            c,
        );
        let rot180 = rot90.compose(&rot90);
        let (once, _) = warp_crop(&img, &rot90, c, (21, 21)).unwrap();
        let (twice, _) = warp_crop(&once, &rot90, c, (21, 21)).unwrap();
        let (direct, _) = warp_crop(&img, &rot180, c, (21, 21)).unwrap();
        for y in 2..19 {
            for x in 2..19 {
                assert!(
                    (twice.get(x, y) - direct.get(x, y)).abs() <= 1e-6,
                    "deviation at ({x}, {y})"
                );
            }
        }
    }

    #[test]
    fn singular_warp_rejected() {
        let img = stripes();
        let warp = AffineWarp::new(Matrix2::new(1.0, 1.0, 1.0, 1.0), Vector2::zeros());
        let err = warp_crop(&img, &warp, Vector2::new(5.0, 5.0), (8, 8)).unwrap_err();
        assert!(matches!(err, Error::SingularWarp { .. }));
    }

    #[test]
    fn projective_matches_affine_when_affine() {
        let img = stripes();
        let c = Vector2::new(17.5, 11.5);
        let aff = AffineWarp::linear_about(Matrix2::new(1.0, 0.2, 0.0, 1.0), c);
        let (a, _) = warp_crop(&img, &aff, c, (16, 16)).unwrap();
        let (p, _) = warp_crop(&img, &aff.to_projective(), c, (16, 16)).unwrap();
        for i in 0..a.data().len() {
            assert!((a.data()[i] - p.data()[i]).abs() < 1e-9);
        }
    }
}
