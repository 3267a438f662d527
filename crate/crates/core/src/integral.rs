//! The low-rank integral map: per-block rectifying warps over an image
//! partition, with neighbor warm-starting along each row, and propagation of
//! block transforms to arbitrary points.

use alloc::vec::Vec;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tilt::{solve_tilt, TiltParams, TiltProblem};
use crate::warp::{AffineWarp, PointMap};

/// Default partition block size in pixels.
pub const DEFAULT_BLOCK_SIZE: usize = 60;

/// Edge blocks smaller than this are merged into their neighbor.
pub const MIN_EDGE_BLOCK: usize = 30;

/// One rectified block of the partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    /// Rectifying warp in `warp_crop` convention: pass it to `warp_crop`
    /// centered anywhere in the block to obtain the rectified window. Its
    /// linear part is the inverse of the solver's `τ`; the block center is
    /// its fixed point.
    pub warp: AffineWarp,
    pub converged: bool,
    pub outer_iterations: usize,
    pub block_center: Vector2<f64>,
}

/// Partition boundaries along one axis: `bounds[i]..bounds[i+1]` is band `i`.
fn partition(extent: usize, block_size: usize) -> Vec<usize> {
    let mut bounds = Vec::new();
    let mut pos = 0;
    while pos < extent {
        bounds.push(pos);
        pos += block_size;
    }
    bounds.push(extent);
    // merge a ragged tail band into its neighbor when it is too small to solve
    if bounds.len() > 2 {
        let n = bounds.len();
        if bounds[n - 1] - bounds[n - 2] < MIN_EDGE_BLOCK {
            bounds.remove(n - 2);
        }
    }
    bounds
}

/// Block layout of an image: shared by the serial and row-parallel builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub col_bounds: Vec<usize>,
    pub row_bounds: Vec<usize>,
    pub image_dims: (usize, usize),
    pub block_size: usize,
}

impl BlockLayout {
    pub fn new(img_width: usize, img_height: usize, block_size: usize) -> Result<Self> {
        if block_size < MIN_EDGE_BLOCK {
            return Err(Error::InvalidParameter(alloc::format!(
                "block size {block_size} below minimum {MIN_EDGE_BLOCK}"
            )));
        }
        if img_width <= block_size || img_height <= block_size {
            return Err(Error::ImageTooSmall {
                need_w: block_size + 1,
                need_h: block_size + 1,
                got_w: img_width,
                got_h: img_height,
            });
        }
        let layout = Self {
            col_bounds: partition(img_width, block_size),
            row_bounds: partition(img_height, block_size),
            image_dims: (img_width, img_height),
            block_size,
        };
        // at least 2 blocks in each dimension after ragged-edge merging
        if layout.cols() < 2 || layout.rows() < 2 {
            return Err(Error::ImageTooSmall {
                need_w: block_size + MIN_EDGE_BLOCK,
                need_h: block_size + MIN_EDGE_BLOCK,
                got_w: img_width,
                got_h: img_height,
            });
        }
        Ok(layout)
    }

    pub fn cols(&self) -> usize {
        self.col_bounds.len() - 1
    }

    pub fn rows(&self) -> usize {
        self.row_bounds.len() - 1
    }

    pub fn block_count(&self) -> usize {
        self.cols() * self.rows()
    }

    /// Grid cell containing the point, or an error outside the image.
    pub fn locate(&self, p: Vector2<f64>) -> Result<(usize, usize)> {
        let (w, h) = self.image_dims;
        if p[0] < 0.0 || p[1] < 0.0 || p[0] >= w as f64 || p[1] >= h as f64 {
            return Err(Error::OutOfBounds { x: p[0], y: p[1] });
        }
        let col = match self.col_bounds.binary_search(&(p[0] as usize)) {
            Ok(i) => i.min(self.cols() - 1),
            Err(i) => i - 1,
        };
        let row = match self.row_bounds.binary_search(&(p[1] as usize)) {
            Ok(i) => i.min(self.rows() - 1),
            Err(i) => i - 1,
        };
        Ok((row, col))
    }
}

/// Per-block rectifying warps over an image partition.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankIntegralMap {
    layout: BlockLayout,
    grid: Vec<BlockEntry>, // row-major rows x cols
}

impl LowRankIntegralMap {
    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn entry(&self, row: usize, col: usize) -> &BlockEntry {
        &self.grid[row * self.layout.cols() + col]
    }

    pub fn entries(&self) -> &[BlockEntry] {
        &self.grid
    }

    pub fn block_count(&self) -> usize {
        self.grid.len()
    }

    /// Assemble a map from independently solved rows.
    pub fn from_rows(layout: BlockLayout, rows: Vec<Vec<BlockEntry>>) -> Result<Self> {
        if rows.len() != layout.rows() || rows.iter().any(|r| r.len() != layout.cols()) {
            return Err(Error::InvalidParameter(
                "row results do not match the block layout".into(),
            ));
        }
        let grid = rows.into_iter().flatten().collect();
        Ok(Self { layout, grid })
    }

    /// Propagate the block transform to an arbitrary point: same linear part,
    /// translation adjusted so `p` is the fixed point.
    pub fn transform_at(&self, p: Vector2<f64>) -> Result<AffineWarp> {
        let (row, col) = self.layout.locate(p)?;
        let entry = self.entry(row, col);
        Ok(AffineWarp::linear_about(entry.warp.linear, p))
    }
}

/// Solve one row of blocks left to right, warm-starting each block with its
/// left neighbor's converged warp. `warm_start = false` is the ablation
/// control (every block starts from the identity).
pub fn solve_row(
    img: &Image,
    layout: &BlockLayout,
    row: usize,
    params: &TiltParams,
    warm_start: bool,
) -> Result<Vec<BlockEntry>> {
    let y0 = layout.row_bounds[row];
    let y1 = layout.row_bounds[row + 1];
    let mut entries: Vec<BlockEntry> = Vec::with_capacity(layout.cols());
    for col in 0..layout.cols() {
        let x0 = layout.col_bounds[col];
        let x1 = layout.col_bounds[col + 1];
        let patch = img.crop(x0, y0, x1 - x0, y1 - y0)?;
        let center = Vector2::new(
            x0 as f64 + (x1 - x0 - 1) as f64 / 2.0,
            y0 as f64 + (y1 - y0 - 1) as f64 / 2.0,
        );
        let init = if warm_start && col > 0 {
            // solver convention: τ linear = inverse of the stored rectifying warp
            entries[col - 1]
                .warp
                .inverted()
                .map(|w| AffineWarp::new(w.linear, Vector2::zeros()))
                .unwrap_or_else(|_| AffineWarp::identity())
        } else {
            AffineWarp::identity()
        };
        let problem = TiltProblem::new(patch, init, *params)?;
        let entry = match solve_tilt(&problem) {
            Ok(sol) if sol.converged => BlockEntry {
                warp: AffineWarp::linear_about(
                    sol.warp
                        .inverted()
                        .map(|w| w.linear)
                        .unwrap_or_else(|_| nalgebra::Matrix2::identity()),
                    center,
                ),
                converged: true,
                outer_iterations: sol.outer_iterations,
                block_center: center,
            },
            Ok(sol) => BlockEntry {
                // non-converged blocks fall back to the identity warp
                warp: AffineWarp::linear_about(nalgebra::Matrix2::identity(), center),
                converged: false,
                outer_iterations: sol.outer_iterations,
                block_center: center,
            },
            Err(_) => BlockEntry {
                warp: AffineWarp::linear_about(nalgebra::Matrix2::identity(), center),
                converged: false,
                outer_iterations: 0,
                block_center: center,
            },
        };
        entries.push(entry);
    }
    Ok(entries)
}

/// Build the integral map serially. Rows are independent; a caller may
/// instead run [`solve_row`] per row on separate threads and assemble with
/// [`LowRankIntegralMap::from_rows`].
pub fn build_integral_map(
    img: &Image,
    block_size: usize,
    params: &TiltParams,
) -> Result<LowRankIntegralMap> {
    build_integral_map_opts(img, block_size, params, true)
}

pub fn build_integral_map_opts(
    img: &Image,
    block_size: usize,
    params: &TiltParams,
    warm_start: bool,
) -> Result<LowRankIntegralMap> {
    let layout = BlockLayout::new(img.width(), img.height(), block_size)?;
    let mut rows = Vec::with_capacity(layout.rows());
    for row in 0..layout.rows() {
        rows.push(solve_row(img, &layout, row, params, warm_start)?);
    }
    LowRankIntegralMap::from_rows(layout, rows)
}
