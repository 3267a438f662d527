//! The full feature pipeline: detect corners, look up the rectifying warp
//! from the integral map, rectify fixed 50x50 patches, describe them with
//! SIFT, and select features by the numerical rank of their low-rank part.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harris::{harris_corners, HarrisParams, Keypoint};
use crate::image::{Image, ValidityMask};
use crate::integral::{build_integral_map_opts, DEFAULT_BLOCK_SIZE};
use crate::rpca::{self, numerical_rank, rpca_alm};
use crate::sift::sift_descriptor;
use crate::tilt::TiltParams;
use crate::warp::{warp_crop, AffineWarp};

/// One keypoint with its rectification warp, patch rank and descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub keypoint: Keypoint,
    /// Rectifying warp applied to the patch (in `warp_crop` convention,
    /// keypoint fixed).
    pub warp: AffineWarp,
    pub patch_rank: usize,
    /// Unit-norm 128-vector.
    pub descriptor: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub image_id: String,
    pub features: Vec<Feature>,
}

/// Counters reported alongside an extraction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractDiagnostics {
    /// Rectification solves performed (equals the block count).
    pub tilt_solves: usize,
    pub non_converged_blocks: usize,
    pub degenerate_dropped: usize,
    pub keypoints_detected: usize,
}

/// Full pipeline configuration; every constant is inspectable and
/// overridable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub harris: HarrisParams,
    pub tilt: TiltParams,
    pub block_size: usize,
    pub patch_size: usize,
    /// Relative singular-value tolerance for patch rank.
    pub rank_rel_tol: f64,
    pub rank_min: usize,
    pub rank_max: usize,
    /// Rectify patches with the integral map; false degrades to plain
    /// Harris+SIFT (identity warps).
    pub rectify: bool,
    /// Compute the per-patch rank (needed for feature selection).
    pub compute_rank: bool,
    /// Apply the rank-band selection to query images.
    pub select_query_features: bool,
    /// Apply the rank-band selection to database images too.
    pub select_database_features: bool,
    /// Vocabulary tree branch factor and depth.
    pub tree_branch: usize,
    pub tree_depth: usize,
    pub seed: u64,
    /// Localization correctness radius in meters.
    pub correct_radius_m: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            harris: HarrisParams::default(),
            tilt: TiltParams::default(),
            block_size: DEFAULT_BLOCK_SIZE,
            patch_size: 50,
            rank_rel_tol: 0.03,
            rank_min: 2,
            rank_max: 5,
            rectify: true,
            compute_rank: true,
            select_query_features: true,
            select_database_features: false,
            tree_branch: 8,
            tree_depth: 3,
            seed: 20140101,
            correct_radius_m: 50.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank_min > self.rank_max {
            return Err(Error::InvalidParameter(alloc::format!(
                "rank_min {} > rank_max {}",
                self.rank_min,
                self.rank_max
            )));
        }
        if self.patch_size < 32 {
            return Err(Error::InvalidParameter(
                "patch_size must be at least 32".into(),
            ));
        }
        if self.tree_branch < 2 || self.tree_depth < 1 {
            return Err(Error::InvalidParameter(
                "tree_branch must be >= 2 and tree_depth >= 1".into(),
            ));
        }
        if self.harris.border_margin * 2 < self.patch_size {
            return Err(Error::InvalidParameter(
                "border margin too small for the patch size".into(),
            ));
        }
        Ok(())
    }
}

/// Resample the fixed-size window around a keypoint under the warp; the
/// keypoint is the fixed point of the extraction frame.
pub fn rectify_patch(
    img: &Image,
    kp: &Keypoint,
    warp: &AffineWarp,
    patch_size: usize,
) -> Result<(Image, ValidityMask)> {
    warp_crop(
        img,
        warp,
        Vector2::new(kp.x, kp.y),
        (patch_size, patch_size),
    )
}

/// Run the full pipeline on one image.
pub fn extract_lowrank_sift(
    img: &Image,
    image_id: &str,
    config: &PipelineConfig,
) -> Result<(FeatureSet, ExtractDiagnostics)> {
    config.validate()?;
    let keypoints = harris_corners(img, &config.harris)?;
    let mut diag = ExtractDiagnostics {
        keypoints_detected: keypoints.len(),
        ..Default::default()
    };
    let map = if config.rectify {
        let m = build_integral_map_opts(img, config.block_size, &config.tilt, true)?;
        diag.tilt_solves = m.block_count();
        diag.non_converged_blocks = m.entries().iter().filter(|e| !e.converged).count();
        Some(m)
    } else {
        None
    };
    let lambda = rpca::default_lambda(config.patch_size, config.patch_size);
    let mut features = Vec::with_capacity(keypoints.len());
    for kp in keypoints {
        let warp = match &map {
            Some(m) => m.transform_at(Vector2::new(kp.x, kp.y))?,
            None => AffineWarp::linear_about(
                nalgebra::Matrix2::identity(),
                Vector2::new(kp.x, kp.y),
            ),
        };
        let (patch, _mask) = rectify_patch(img, &kp, &warp, config.patch_size)?;
        let descriptor = match sift_descriptor(&patch) {
            Ok(d) => d,
            Err(Error::DegeneratePatch) => {
                diag.degenerate_dropped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let patch_rank = if config.compute_rank {
            let m = patch.to_matrix();
            let norm = m.norm();
            if norm < 1e-12 {
                0
            } else {
                let r = rpca_alm(&(m / norm), lambda, &config.tilt);
                numerical_rank(&r.low_rank, config.rank_rel_tol)
            }
        } else {
            0
        };
        features.push(Feature {
            keypoint: kp,
            warp,
            patch_rank,
            descriptor,
        });
    }
    Ok((
        FeatureSet {
            image_id: String::from(image_id),
            features,
        },
        diag,
    ))
}

/// Keep exactly the features whose rank lies in `[rank_min, rank_max]`,
/// preserving order.
pub fn select_features(fs: &FeatureSet, rank_min: usize, rank_max: usize) -> Result<FeatureSet> {
    if rank_min > rank_max {
        return Err(Error::InvalidParameter(alloc::format!(
            "rank_min {rank_min} > rank_max {rank_max}"
        )));
    }
    Ok(FeatureSet {
        image_id: fs.image_id.clone(),
        features: fs
            .features
            .iter()
            .filter(|f| f.patch_rank >= rank_min && f.patch_rank <= rank_max)
            .cloned()
            .collect(),
    })
}
