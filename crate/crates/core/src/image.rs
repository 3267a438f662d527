//! Grayscale raster carrier used throughout the pipeline.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A 2-D grayscale image with row-major intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "zero dimension: {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "data length {} != {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidImage(
                "intensity outside [0, 1] or non-finite".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel value with border replication outside the image.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> f64 {
        let xc = x.clamp(0, self.width as i64 - 1) as usize;
        let yc = y.clamp(0, self.height as i64 - 1) as usize;
        self.get(xc, yc)
    }

    /// Bilinear sample at sub-pixel `(x, y)` with border replication.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = libm::floor(x) as i64;
        let y0 = libm::floor(y) as i64;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let v00 = self.get_clamped(x0, y0);
        let v10 = self.get_clamped(x0 + 1, y0);
        let v01 = self.get_clamped(x0, y0 + 1);
        let v11 = self.get_clamped(x0 + 1, y0 + 1);
        v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy
    }

    /// True when the sample point lands inside the pixel grid.
    #[inline]
    pub fn in_support(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Crop a rectangular window; the window must lie inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::InvalidImage(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Image {
            width: w,
            height: h,
            data,
        })
    }

    /// View as a `height x width` matrix (rows = image rows).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.height, self.width, self.data.iter().copied())
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Image {
        Image::from_fn(m.ncols(), m.nrows(), |x, y| m[(y, x)])
    }
}

/// Per-pixel validity flags returned alongside warped windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    valid: Vec<bool>,
}

impl ValidityMask {
    pub(crate) fn new(width: usize, height: usize, valid: Vec<bool>) -> Self {
        debug_assert_eq!(valid.len(), width * height);
        Self {
            width,
            height,
            valid,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|v| *v)
    }

    pub fn fraction_valid(&self) -> f64 {
        self.valid.iter().filter(|v| **v).count() as f64 / self.valid.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions_and_values() {
        assert!(Image::new(0, 3, vec![]).is_err());
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(2, 2, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(Image::new(2, 2, vec![0.0, 0.5, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn bilinear_interpolates_and_replicates_border() {
        let img = Image::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((img.sample_bilinear(0.5, 0.5) - 0.5).abs() < 1e-12);
        assert!((img.sample_bilinear(-3.0, 0.0) - 0.0).abs() < 1e-12);
        assert!((img.sample_bilinear(5.0, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matrix_round_trip() {
        let img = Image::from_fn(3, 2, |x, y| (x + y) as f64 / 4.0);
        let m = img.to_matrix();
        assert_eq!(m.nrows(), 2);
        assert_eq!(m.ncols(), 3);
        assert_eq!(Image::from_matrix(&m), img);
    }
}
