//! Small numeric helpers shared across modules.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::image::Image;

/// Zero-mean normalized cross-correlation of two equally sized patches.
///
/// Returns 0 when either patch has (near-)zero variance.
pub fn ncc(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.width(), b.width());
    assert_eq!(a.height(), b.height());
    let n = a.data().len() as f64;
    let ma = a.data().iter().sum::<f64>() / n;
    let mb = b.data().iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (va, vb) in a.data().iter().zip(b.data()) {
        let xa = va - ma;
        let xb = vb - mb;
        num += xa * xb;
        da += xa * xa;
        db += xb * xb;
    }
    let denom = libm::sqrt(da * db);
    if denom < 1e-12 {
        0.0
    } else {
        num / denom
    }
}

/// 1-D Gaussian kernel with radius `ceil(3 sigma)`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(3.0 * sigma) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-(i * i) as f64 / (2.0 * sigma * sigma)))
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with border replication.
pub fn gaussian_blur(m: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (rows, cols) = m.shape();
    let mut tmp = DMatrix::zeros(rows, cols);
    for y in 0..rows {
        for x in 0..cols {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xi = (x as i64 + i as i64 - r).clamp(0, cols as i64 - 1) as usize;
                acc += kv * m[(y, xi)];
            }
            tmp[(y, x)] = acc;
        }
    }
    let mut out = DMatrix::zeros(rows, cols);
    for y in 0..rows {
        for x in 0..cols {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yi = (y as i64 + i as i64 - r).clamp(0, rows as i64 - 1) as usize;
                acc += kv * tmp[(yi, x)];
            }
            out[(y, x)] = acc;
        }
    }
    out
}

/// 3x3 Sobel gradients (x then y), border replicated.
pub fn sobel_gradients(img: &Image) -> (DMatrix<f64>, DMatrix<f64>) {
    let (w, h) = (img.width(), img.height());
    let mut gx = DMatrix::zeros(h, w);
    let mut gy = DMatrix::zeros(h, w);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let p = |dx: i64, dy: i64| img.get_clamped(x + dx, y + dy);
            gx[(y as usize, x as usize)] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)
                - p(-1, -1)
                - 2.0 * p(-1, 0)
                - p(-1, 1))
                / 8.0;
            gy[(y as usize, x as usize)] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)
                - p(-1, -1)
                - 2.0 * p(0, -1)
                - p(1, -1))
                / 8.0;
        }
    }
    (gx, gy)
}

/// Central-difference gradients of an image, border replicated.
pub fn central_gradients(img: &Image) -> (DMatrix<f64>, DMatrix<f64>) {
    let (w, h) = (img.width(), img.height());
    let mut gx = DMatrix::zeros(h, w);
    let mut gy = DMatrix::zeros(h, w);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            gx[(y as usize, x as usize)] =
                (img.get_clamped(x + 1, y) - img.get_clamped(x - 1, y)) / 2.0;
            gy[(y as usize, x as usize)] =
                (img.get_clamped(x, y + 1) - img.get_clamped(x, y - 1)) / 2.0;
        }
    }
    (gx, gy)
}

/// Euclidean distance between two descriptors.
pub fn descriptor_distance(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (*x - *y) as f64;
        acc += d * d;
    }
    libm::sqrt(acc)
}

/// Sample a matrix bilinearly with border clamping (matrix indexed (row, col)).
pub fn sample_matrix_bilinear(m: &DMatrix<f64>, x: f64, y: f64) -> f64 {
    let (rows, cols) = m.shape();
    let x0 = libm::floor(x) as i64;
    let y0 = libm::floor(y) as i64;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |xi: i64, yi: i64| {
        let xc = xi.clamp(0, cols as i64 - 1) as usize;
        let yc = yi.clamp(0, rows as i64 - 1) as usize;
        m[(yc, xc)]
    };
    at(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + at(x0 + 1, y0) * fx * (1.0 - fy)
        + at(x0, y0 + 1) * (1.0 - fx) * fy
        + at(x0 + 1, y0 + 1) * fx * fy
}

/// Deterministic mixing of a seed with a stream index.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    libm::sqrt(var)
}

#[allow(unused)]
pub(crate) fn zeros_like(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::zeros(m.nrows(), m.ncols())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ncc_is_one_for_affine_intensity_change() {
        let a = Image::from_fn(10, 10, |x, y| ((x * 7 + y * 3) % 11) as f64 / 11.0);
        let b = Image::from_fn(10, 10, |x, y| 0.25 + 0.5 * ((x * 7 + y * 3) % 11) as f64 / 11.0);
        assert!((ncc(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ncc_zero_variance_is_zero() {
        let a = Image::constant(5, 5, 0.5);
        let b = Image::from_fn(5, 5, |x, _| x as f64 / 5.0);
        assert_eq!(ncc(&a, &b), 0.0);
    }

    #[test]
    fn gaussian_kernel_normalized() {
        let k = gaussian_kernel(1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k.len(), 2 * 5 + 1);
    }

    #[test]
    fn blur_preserves_constant() {
        let m = DMatrix::from_element(8, 8, 0.7);
        let b = gaussian_blur(&m, 2.0);
        assert!(b.iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn sobel_detects_horizontal_ramp() {
        let img = Image::from_fn(9, 9, |x, _| x as f64 / 8.0);
        let (gx, gy) = sobel_gradients(&img);
        assert!((gx[(4, 4)] - 1.0 / 8.0).abs() < 1e-12);
        assert!(gy[(4, 4)].abs() < 1e-12);
    }

    #[test]
    fn mix_seed_deterministic_and_spread() {
        assert_eq!(mix_seed(42, 1), mix_seed(42, 1));
        assert_ne!(mix_seed(42, 1), mix_seed(42, 2));
    }
}
