//! Synthetic test textures: checkerboards, stripes, window grids, bricks and
//! seeded noise. Used by the experiment drivers and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;
use crate::util::mix_seed;

pub fn checkerboard(width: usize, height: usize, cell: usize) -> Image {
    Image::from_fn(width, height, |x, y| {
        if ((x / cell) + (y / cell)) % 2 == 0 {
            0.1
        } else {
            0.9
        }
    })
}

/// Stripes of the given period; vertical stripes when `horizontal` is false.
pub fn stripes(width: usize, height: usize, period: usize, horizontal: bool) -> Image {
    Image::from_fn(width, height, |x, y| {
        let c = if horizontal { y } else { x };
        if (c / (period / 2)) % 2 == 0 {
            0.15
        } else {
            0.85
        }
    })
}

/// Facade-like window grid: dark windows on a light wall.
pub fn window_grid(
    width: usize,
    height: usize,
    pitch_x: usize,
    pitch_y: usize,
    win_w: usize,
    win_h: usize,
    wall: f64,
    window: f64,
) -> Image {
    Image::from_fn(width, height, |x, y| {
        let in_win = (x % pitch_x) < win_w && (y % pitch_y) < win_h;
        if in_win {
            window
        } else {
            wall
        }
    })
}

/// Brick pattern with alternating row offsets.
pub fn bricks(width: usize, height: usize, brick_w: usize, brick_h: usize) -> Image {
    Image::from_fn(width, height, |x, y| {
        let row = y / brick_h;
        let xo = if row % 2 == 0 { x } else { x + brick_w / 2 };
        let mortar = (y % brick_h) < 2 || (xo % brick_w) < 2;
        if mortar {
            0.85
        } else {
            0.35
        }
    })
}

/// Uniform noise in [0, 1], seeded.
pub fn noise(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(width, height, |_, _| rng.gen_range(0.0..1.0))
}

/// A deterministic facade variant drawn from the seed: window grids with
/// varied pitch, window size and contrast, plus mild per-facade shading.
pub fn facade(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xfacade));
    let pitch_x = rng.gen_range(14..26);
    let pitch_y = rng.gen_range(14..26);
    let win_w = rng.gen_range(pitch_x / 3..(2 * pitch_x / 3).max(pitch_x / 3 + 1));
    let win_h = rng.gen_range(pitch_y / 3..(2 * pitch_y / 3).max(pitch_y / 3 + 1));
    let wall = rng.gen_range(0.6..0.9);
    let window = rng.gen_range(0.05..0.3);
    let shade = rng.gen_range(-0.08..0.08f64);
    let phase_x = rng.gen_range(0..pitch_x);
    let phase_y = rng.gen_range(0..pitch_y);
    Image::from_fn(width, height, |x, y| {
        let xs = x + phase_x;
        let ys = y + phase_y;
        let in_win = (xs % pitch_x) < win_w && (ys % pitch_y) < win_h;
        let base = if in_win { window } else { wall };
        base + shade * (x as f64 / width as f64 - 0.5)
    })
}

/// Composite of a flat region, a window-grid region and a noise region,
/// stacked left to right. Returns the image and the x-ranges of the three
/// regions.
pub fn composite_regions(width: usize, height: usize, seed: u64) -> (Image, [core::ops::Range<usize>; 3]) {
    let third = width / 3;
    let grid = window_grid(third, height, 16, 16, 8, 8, 0.8, 0.15);
    let noise_img = noise(width - 2 * third, height, seed);
    let img = Image::from_fn(width, height, |x, y| {
        if x < third {
            0.55
        } else if x < 2 * third {
            grid.get(x - third, y)
        } else {
            noise_img.get(x - 2 * third, y)
        }
    });
    (img, [0..third, third..2 * third, 2 * third..width])
}
