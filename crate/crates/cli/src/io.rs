//! Raster I/O: PGM (P2/P5) and PNG (8-bit gray/RGB) loading into the core
//! `Image` type, plus PGM output for fixtures and corpora.

use std::fs;
use std::path::Path;

use lrsift_core::Image;

use crate::error::{CliError, Result};

/// Load a raster file as a grayscale image with intensities in [0,1].
///
/// PGM (both ASCII `P2` and binary `P5`) is the canonical, dependency-free
/// format; PNG is accepted in 8-bit grayscale and RGB flavors, color
/// converted by the 0.299/0.587/0.114 luminance weighting. Missing files,
/// unsupported formats and corrupt payloads are reported as distinct
/// errors.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        parse_pgm(path, &bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        parse_png(path, &bytes)
    } else {
        Err(CliError::UnsupportedFormat(format!(
            "{}: not a PGM or PNG file",
            path.display()
        )))
    }
}

/// PGM header tokenizer: whitespace-separated tokens, `#` comments to EOL.
/// Returns the token and the offset just past it.
fn next_token(bytes: &[u8], mut pos: usize) -> Option<(&[u8], usize)> {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        break;
    }
    if pos >= bytes.len() {
        return None;
    }
    let start = pos;
    while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    Some((&bytes[start..pos], pos))
}

fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let corrupt = |msg: &str| CliError::corrupt(path, msg);
    let binary = bytes.starts_with(b"P5");
    let mut pos = 2usize;
    let mut header = [0usize; 3]; // width, height, maxval
    for slot in &mut header {
        let (tok, next) =
            next_token(bytes, pos).ok_or_else(|| corrupt("truncated PGM header"))?;
        let text = std::str::from_utf8(tok).map_err(|_| corrupt("non-ASCII PGM header"))?;
        *slot = text
            .parse::<usize>()
            .map_err(|_| corrupt("non-numeric PGM header field"))?;
        pos = next;
    }
    let (width, height, maxval) = (header[0], header[1], header[2]);
    if width == 0 || height == 0 {
        return Err(corrupt("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(corrupt("PGM maxval out of range"));
    }
    let count = width * height;
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let wide = maxval > 255;
        let per = if wide { 2 } else { 1 };
        if bytes.len() < pos + count * per {
            return Err(corrupt("truncated PGM raster"));
        }
        for i in 0..count {
            let v = if wide {
                u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]) as usize
            } else {
                bytes[pos + i] as usize
            };
            if v > maxval {
                return Err(corrupt("PGM sample above maxval"));
            }
            data.push(v as f64 * scale);
        }
    } else {
        for _ in 0..count {
            let (tok, next) =
                next_token(bytes, pos).ok_or_else(|| corrupt("truncated PGM raster"))?;
            let text = std::str::from_utf8(tok).map_err(|_| corrupt("non-ASCII PGM sample"))?;
            let v = text
                .parse::<usize>()
                .map_err(|_| corrupt("non-numeric PGM sample"))?;
            if v > maxval {
                return Err(corrupt("PGM sample above maxval"));
            }
            data.push(v as f64 * scale);
            pos = next;
        }
    }
    Image::new(width, height, data).map_err(|e| corrupt(&e.to_string()))
}

fn parse_png(path: &Path, bytes: &[u8]) -> Result<Image> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| CliError::corrupt(path, e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data = match decoded {
        image::DynamicImage::ImageLuma8(gray) => gray
            .pixels()
            .map(|p| p.0[0] as f64 / 255.0)
            .collect::<Vec<_>>(),
        image::DynamicImage::ImageRgb8(rgb) => rgb
            .pixels()
            .map(|p| {
                (0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64) / 255.0
            })
            .collect::<Vec<_>>(),
        other => {
            return Err(CliError::UnsupportedFormat(format!(
                "{}: PNG color type {:?} (only 8-bit gray and RGB)",
                path.display(),
                other.color()
            )))
        }
    };
    Image::new(w, h, data).map_err(|e| CliError::corrupt(path, e.to_string()))
}

/// Write an image as binary 8-bit PGM (values quantized to 0..=255).
pub fn save_pgm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn pgm_ascii_rescales_by_maxval() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        fs::write(&p, "P2\n# comment\n2 2\n255\n0 85 170 255\n").unwrap();
        let img = load_image(&p).unwrap();
        let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (got, want) in img.data().iter().zip(want) {
            assert!((got - want).abs() <= 1.0 / 255.0, "{got} vs {want}");
        }
    }

    #[test]
    fn pgm_binary_roundtrip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("rt.pgm");
        let img = Image::from_fn(7, 5, |x, y| ((x * 37 + y * 11) % 256) as f64 / 255.0);
        save_pgm(&p, &img).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.width(), 7);
        assert_eq!(back.height(), 5);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1.0 / 510.0);
        }
    }

    #[test]
    fn pgm_nonstandard_maxval() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        fs::write(&p, "P2\n2 1\n100\n0 100\n").unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn png_black_is_all_zero() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("black.png");
        let buf = image::GrayImage::from_pixel(8, 8, image::Luma([0u8]));
        buf.save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert!(img.data().iter().all(|v| *v == 0.0));
        assert_eq!((img.width(), img.height()), (8, 8));
    }

    #[test]
    fn png_red_uses_luminance_weights() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("red.png");
        let buf = image::RgbImage::from_pixel(3, 3, image::Rgb([255u8, 0, 0]));
        buf.save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert!((img.get(1, 1) - 0.299).abs() <= 1.0 / 255.0);
    }

    #[test]
    fn error_taxonomy_is_distinct() {
        let dir = tempdir().unwrap();
        assert!(matches!(
            load_image(dir.path().join("absent.pgm")),
            Err(CliError::MissingFile(_))
        ));
        let bad = dir.path().join("note.txt");
        fs::write(&bad, "hello").unwrap();
        assert!(matches!(
            load_image(&bad),
            Err(CliError::UnsupportedFormat(_))
        ));
        let trunc = dir.path().join("trunc.pgm");
        fs::write(&trunc, "P5\n4 4\n255\nab").unwrap();
        assert!(matches!(
            load_image(&trunc),
            Err(CliError::CorruptData { .. })
        ));
    }
}
