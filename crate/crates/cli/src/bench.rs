//! Experiment drivers: viewpoint simulation, the patch-similarity study,
//! the warm-start ablation, the transform-propagation check and the
//! retrieval comparison. Every driver is seeded and bit-reproducible; all
//! aggregates can be recomputed from the per-trial records.

use std::collections::BTreeMap;
use std::path::Path;

use lrsift_core::features::{extract_lowrank_sift, select_features};
use lrsift_core::geo::localization_correct;
use lrsift_core::harris::{harris_corners, HarrisParams};
use lrsift_core::integral::{build_integral_map_opts, solve_row, BlockLayout};
use lrsift_core::tilt::{solve_tilt, TiltProblem};
use lrsift_core::util::{gaussian_blur, mean, mix_seed, ncc, std_dev};
use lrsift_core::warp::{warp_crop, PointMap};
use lrsift_core::{
    AffineWarp, DatabaseIndex, GeoTag, Image, PipelineConfig, ProjectiveWarp,
};
use nalgebra::{Matrix2, Matrix3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

// ---- viewpoint simulation --------------------------------------------------

/// Parameters of one simulated camera viewpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpSpec {
    /// Out-of-plane tilt in degrees, about a seeded random axis.
    pub tilt_deg: f64,
    pub rotation_deg: f64,
    pub scale: f64,
    /// Strength of the perspective (bottom-row) terms, unitless.
    pub perspective: f64,
    pub seed: u64,
}

impl Default for WarpSpec {
    fn default() -> Self {
        Self {
            tilt_deg: 0.0,
            rotation_deg: 0.0,
            scale: 1.0,
            perspective: 0.0,
            seed: 0,
        }
    }
}

impl WarpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=60.0).contains(&self.tilt_deg) {
            return Err(CliError::Validation(format!(
                "tilt {}° outside [0, 60]",
                self.tilt_deg
            )));
        }
        if !(self.scale > 0.0) {
            return Err(CliError::Validation(format!(
                "scale {} must be positive",
                self.scale
            )));
        }
        Ok(())
    }
}

/// Tilt-axis direction drawn from the spec seed, as an angle in [0, π).
pub fn seeded_axis(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x717d));
    rng.gen_range(0.0..core::f64::consts::PI)
}

/// Analytic linear part of a tilt: contraction by cos(tilt) perpendicular
/// to the axis direction `axis_angle`.
pub fn tilt_linear(tilt_deg: f64, axis_angle: f64) -> Matrix2<f64> {
    let c = tilt_deg.to_radians().cos();
    let (s, a) = axis_angle.sin_cos();
    // m ⊥ axis is the contracted direction
    let m = Vector2::new(-s, a);
    Matrix2::identity() + (c - 1.0) * m * m.transpose()
}

/// Build the exact homography of a spec about the image center and apply
/// it: perspective(tilt about the seeded axis) ∘ rotation ∘ scale.
pub fn simulate_viewpoint(img: &Image, spec: &WarpSpec) -> Result<(Image, ProjectiveWarp)> {
    spec.validate()?;
    let axis = seeded_axis(spec.seed);
    let a = tilt_linear(spec.tilt_deg, axis)
        * AffineWarp::from_rotation(spec.rotation_deg.to_radians()).linear
        * spec.scale;
    let (s, c) = axis.sin_cos();
    let m = Vector2::new(-s, c);
    let dim = img.width().max(img.height()) as f64;
    let p = m * (spec.perspective / dim);
    let center = Vector2::new(
        (img.width() - 1) as f64 / 2.0,
        (img.height() - 1) as f64 / 2.0,
    );
    let core = Matrix3::new(
        a[(0, 0)],
        a[(0, 1)],
        0.0,
        a[(1, 0)],
        a[(1, 1)],
        0.0,
        p[0],
        p[1],
        1.0,
    );
    let shift = |t: Vector2<f64>| {
        Matrix3::new(1.0, 0.0, t[0], 0.0, 1.0, t[1], 0.0, 0.0, 1.0)
    };
    let h = ProjectiveWarp::new(shift(center) * core * shift(-center))
        .map_err(|e| CliError::Solver(e.to_string()))?;
    let (warped, mask) = warp_crop(img, &h, center, (img.width(), img.height()))?;
    if mask.fraction_valid() == 0.0 {
        return Err(CliError::Validation(
            "warp pushes the full image out of frame".into(),
        ));
    }
    Ok((warped, h))
}

// ---- reports ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub labels: BTreeMap<String, String>,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: serde_json::Value,
    pub trials: Vec<TrialRecord>,
    /// Mean/std/count per value key, plus experiment-specific derived keys;
    /// everything is recomputable from `trials`.
    pub aggregates: BTreeMap<String, f64>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, config: serde_json::Value, trials: Vec<TrialRecord>) -> Self {
        let aggregates = Self::base_aggregates(&trials);
        Self {
            experiment: experiment.into(),
            config,
            trials,
            aggregates,
        }
    }

    /// Mean, sample std and count of every value key across trials.
    pub fn base_aggregates(trials: &[TrialRecord]) -> BTreeMap<String, f64> {
        let mut per_key: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for t in trials {
            for (k, v) in &t.values {
                per_key.entry(k).or_default().push(*v);
            }
        }
        let mut out = BTreeMap::new();
        for (k, vals) in per_key {
            out.insert(format!("{k}.mean"), mean(&vals));
            out.insert(format!("{k}.std"), std_dev(&vals));
            out.insert(format!("{k}.count"), vals.len() as f64);
        }
        out
    }

    /// Fraction of trials with a given label whose value at `key` satisfies
    /// the predicate; label `None` means all trials.
    pub fn fraction(
        &self,
        key: &str,
        label: Option<(&str, &str)>,
        pred: impl Fn(f64) -> bool,
    ) -> f64 {
        let selected: Vec<f64> = self
            .trials
            .iter()
            .filter(|t| label.map_or(true, |(k, v)| t.labels.get(k).map(|s| s.as_str()) == Some(v)))
            .filter_map(|t| t.values.get(key).copied())
            .collect();
        if selected.is_empty() {
            return 0.0;
        }
        selected.iter().filter(|v| pred(**v)).count() as f64 / selected.len() as f64
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    /// Flat CSV of the per-trial records: trial index, label columns, value
    /// columns (union of keys, blank where absent).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut label_keys: Vec<&str> = Vec::new();
        let mut value_keys: Vec<&str> = Vec::new();
        for t in &self.trials {
            for k in t.labels.keys() {
                if !label_keys.contains(&k.as_str()) {
                    label_keys.push(k);
                }
            }
            for k in t.values.keys() {
                if !value_keys.contains(&k.as_str()) {
                    value_keys.push(k);
                }
            }
        }
        label_keys.sort_unstable();
        value_keys.sort_unstable();
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| CliError::Io {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let mut header = vec!["trial".to_string()];
        header.extend(label_keys.iter().map(|s| s.to_string()));
        header.extend(value_keys.iter().map(|s| s.to_string()));
        w.write_record(&header).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        for t in &self.trials {
            let mut row = vec![t.trial.to_string()];
            for k in &label_keys {
                row.push(t.labels.get(*k).cloned().unwrap_or_default());
            }
            for k in &value_keys {
                row.push(
                    t.values
                        .get(*k)
                        .map(|v| format!("{v}"))
                        .unwrap_or_default(),
                );
            }
            w.write_record(&row).map_err(|e| CliError::Io {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        }
        w.flush()
            .map_err(|e| CliError::io(path, e))
    }
}

// ---- corpora ---------------------------------------------------------------

/// Deterministic synthetic facade corpus: seeded window grids, lightly
/// blurred so sub-pixel resampling error does not dominate NCC.
pub fn facade_corpus(n: usize, width: usize, height: usize, seed: u64) -> Vec<Image> {
    (0..n)
        .map(|i| {
            let img = lrsift_core::synth::facade(width, height, mix_seed(seed, i as u64));
            Image::from_matrix(&gaussian_blur(&img.to_matrix(), 0.8))
        })
        .collect()
}

/// Dense, high-contrast window grids for the similarity study: parameters
/// vary per image, mild blur keeps NCC meaningful at sub-pixel error.
pub fn similarity_corpus(n: usize, width: usize, height: usize, seed: u64) -> Vec<Image> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x51u64 ^ i as u64));
            let pitch_x = rng.gen_range(14..21);
            let pitch_y = rng.gen_range(14..21);
            let img = lrsift_core::synth::window_grid(
                width,
                height,
                pitch_x,
                pitch_y,
                (pitch_x * 11) / 20,
                (pitch_y * 11) / 20,
                0.9,
                0.08,
            );
            Image::from_matrix(&gaussian_blur(&img.to_matrix(), 0.4))
        })
        .collect()
}

/// Viewpoint specs for the similarity protocol: random tilts in the given
/// band about axes away from the texture principal directions, with the
/// compensating zoom `1/sqrt(cos tilt)` so the simulated warp is
/// area-preserving.
///
/// Both choices isolate what rectification can recover: tilting an
/// axis-aligned grid about its own axis, and any net area change, produce
/// exactly the right-diagonal family the low-rank objective leaves free
/// (the aspect-ratio ambiguity), so they would measure the gauge
/// convention, not the rectification.
pub fn similarity_specs(n: usize, tilt_min: f64, tilt_max: f64, seed: u64) -> Vec<WarpSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5bec));
    let mut specs = Vec::with_capacity(n);
    let mut axis_seed = 0u64;
    while specs.len() < n {
        let deg = seeded_axis(axis_seed).to_degrees();
        let diagonal = (38.0..52.0).contains(&deg) || (128.0..142.0).contains(&deg);
        if diagonal {
            let tilt_deg = rng.gen_range(tilt_min..=tilt_max);
            specs.push(WarpSpec {
                tilt_deg,
                scale: 1.0 / tilt_deg.to_radians().cos().sqrt(),
                seed: axis_seed,
                ..WarpSpec::default()
            });
        }
        axis_seed += 1;
    }
    specs
}

// ---- similarity study (Table 1 analogue) ------------------------------------

/// For every image × spec: warp, detect keypoints on the warped image, and
/// compare raw vs low-rank-rectified 50×50 patches against the ground-truth
/// patch located through the known homography.
pub fn similarity_study(
    images: &[Image],
    specs: &[WarpSpec],
    patch_count: usize,
    config: &PipelineConfig,
) -> Result<ExperimentReport> {
    if images.is_empty() || specs.is_empty() {
        return Err(CliError::Validation("no images or specs".into()));
    }
    let cases: Vec<(usize, usize)> = (0..images.len())
        .flat_map(|i| (0..specs.len()).map(move |j| (i, j)))
        .collect();
    let trials: Vec<TrialRecord> = cases
        .par_iter()
        .map(|&(i, j)| similarity_trial(i, j, &images[i], &specs[j], patch_count, config))
        .collect::<Result<Vec<_>>>()?;
    let trials: Vec<TrialRecord> = trials
        .into_iter()
        .enumerate()
        .map(|(t, mut r)| {
            r.trial = t;
            r
        })
        .collect();
    let mut report = ExperimentReport::new(
        "similarity",
        serde_json::json!({"patch_count": patch_count, "specs": specs, "config": config}),
        trials,
    );
    let improvement = report.aggregates.get("after.mean").copied().unwrap_or(0.0)
        - report.aggregates.get("before.mean").copied().unwrap_or(0.0);
    report
        .aggregates
        .insert("improvement.mean".into(), improvement);
    Ok(report)
}

fn similarity_trial(
    i: usize,
    j: usize,
    img: &Image,
    spec: &WarpSpec,
    patch_count: usize,
    config: &PipelineConfig,
) -> Result<TrialRecord> {
    let (warped, h) = simulate_viewpoint(img, spec)?;
    let hinv = h.inverted().map_err(|e| CliError::Solver(e.to_string()))?;
    let params = HarrisParams {
        max_points: patch_count,
        ..config.harris
    };
    let keypoints = harris_corners(&warped, &params)?;
    let map = build_integral_map_opts(&warped, config.block_size, &config.tilt, true)?;
    let half = config.patch_size as f64 / 2.0 + 1.0;
    let identity = AffineWarp::identity();
    let mut before = Vec::new();
    let mut after = Vec::new();
    for kp in keypoints {
        let q = Vector2::new(kp.x, kp.y);
        let p = hinv.apply(q);
        // the ground-truth window must live inside the original image
        if p[0] < half
            || p[1] < half
            || p[0] > img.width() as f64 - half
            || p[1] > img.height() as f64 - half
        {
            continue;
        }
        let size = (config.patch_size, config.patch_size);
        let (truth, tmask) = warp_crop(img, &identity, p, size)?;
        if !tmask.all_valid() {
            continue;
        }
        let (raw, _) = warp_crop(&warped, &identity, q, size)?;
        let rect_warp = map.transform_at(q)?;
        let (rect, _) = warp_crop(&warped, &rect_warp, q, size)?;
        before.push(ncc(&raw, &truth));
        after.push(ncc(&rect, &truth));
    }
    if before.is_empty() {
        return Err(CliError::Solver(format!(
            "no usable keypoints for image {i}, spec {j}"
        )));
    }
    Ok(TrialRecord {
        trial: 0,
        labels: BTreeMap::from([
            ("image".into(), i.to_string()),
            ("spec".into(), j.to_string()),
        ]),
        values: BTreeMap::from([
            ("before".into(), mean(&before)),
            ("after".into(), mean(&after)),
            ("patches".into(), before.len() as f64),
        ]),
    })
}

// ---- propagation check -------------------------------------------------------

/// Compare patch rectification through the integral map's propagated warp
/// against a fresh per-point solve; one trial per sampled keypoint.
pub fn propagation_study(
    images: &[Image],
    points_per_image: usize,
    config: &PipelineConfig,
) -> Result<ExperimentReport> {
    let per_image: Vec<Vec<TrialRecord>> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| propagation_trials(i, img, points_per_image, config))
        .collect::<Result<Vec<_>>>()?;
    let mut trials: Vec<TrialRecord> = per_image.into_iter().flatten().collect();
    for (t, r) in trials.iter_mut().enumerate() {
        r.trial = t;
    }
    let mut report = ExperimentReport::new(
        "propagation",
        serde_json::json!({"points_per_image": points_per_image, "config": config}),
        trials,
    );
    let frac = report.fraction("ncc", None, |v| v >= 0.9);
    report.aggregates.insert("ncc.frac_ge_0.9".into(), frac);
    Ok(report)
}

fn propagation_trials(
    i: usize,
    img: &Image,
    points: usize,
    config: &PipelineConfig,
) -> Result<Vec<TrialRecord>> {
    let map = build_integral_map_opts(img, config.block_size, &config.tilt, true)?;
    let params = HarrisParams {
        max_points: points,
        border_margin: config.harris.border_margin.max(config.block_size / 2 + 1),
        ..config.harris
    };
    let keypoints = harris_corners(img, &params)?;
    let bs = config.block_size;
    let size = (config.patch_size, config.patch_size);
    let mut out = Vec::new();
    for kp in keypoints {
        let p = Vector2::new(kp.x, kp.y);
        let propagated = map.transform_at(p)?;
        let (patch_prop, _) = warp_crop(img, &propagated, p, size)?;
        // fresh solve on the block-sized window centered at the point
        let x0 = (kp.x.round() as usize).saturating_sub(bs / 2).min(img.width() - bs);
        let y0 = (kp.y.round() as usize).saturating_sub(bs / 2).min(img.height() - bs);
        let raw = img.crop(x0, y0, bs, bs)?;
        let problem = TiltProblem::new(raw, AffineWarp::identity(), config.tilt)?;
        let sol = match solve_tilt(&problem) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let fresh_lin = match sol.warp.inverted() {
            Ok(w) => w.linear,
            Err(_) => continue,
        };
        let fresh = AffineWarp::linear_about(fresh_lin, p);
        let (patch_fresh, _) = warp_crop(img, &fresh, p, size)?;
        out.push(TrialRecord {
            trial: 0,
            labels: BTreeMap::from([("image".into(), i.to_string())]),
            values: BTreeMap::from([("ncc".into(), ncc(&patch_prop, &patch_fresh))]),
        });
    }
    Ok(out)
}

// ---- warm-start ablation ------------------------------------------------------

/// Mean outer iterations per block with and without the left-neighbor warm
/// start; one trial per image.
pub fn warmstart_study(images: &[Image], config: &PipelineConfig) -> Result<ExperimentReport> {
    let trials: Vec<TrialRecord> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let layout = BlockLayout::new(img.width(), img.height(), config.block_size)?;
            let mut iters = [Vec::new(), Vec::new()]; // [warm, cold]
            for row in 0..layout.rows() {
                for (slot, warm) in [(0usize, true), (1, false)] {
                    for e in solve_row(img, &layout, row, &config.tilt, warm)? {
                        iters[slot].push(e.outer_iterations as f64);
                    }
                }
            }
            let warm = mean(&iters[0]);
            let cold = mean(&iters[1]);
            Ok(TrialRecord {
                trial: i,
                labels: BTreeMap::from([("image".into(), i.to_string())]),
                values: BTreeMap::from([
                    ("warm_mean_iters".into(), warm),
                    ("cold_mean_iters".into(), cold),
                    ("blocks".into(), layout.block_count() as f64),
                ]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = ExperimentReport::new(
        "warmstart",
        serde_json::json!({"config": config}),
        trials,
    );
    let warm = report
        .aggregates
        .get("warm_mean_iters.mean")
        .copied()
        .unwrap_or(0.0);
    let cold = report
        .aggregates
        .get("cold_mean_iters.mean")
        .copied()
        .unwrap_or(0.0);
    report.aggregates.insert(
        "iteration_ratio".into(),
        if cold > 0.0 { warm / cold } else { 1.0 },
    );
    Ok(report)
}

// ---- retrieval study (Table 3 analogue) ----------------------------------------

pub const RETRIEVAL_VARIANTS: [&str; 3] = ["plain", "lowrank", "lowrank_selected"];

/// Run every query under the three pipeline variants against a fixed index
/// and record top-1/top-3 localization correctness.
pub fn retrieval_study(
    index: &DatabaseIndex,
    queries: &[(Image, GeoTag)],
    config: &PipelineConfig,
) -> Result<ExperimentReport> {
    if queries.is_empty() {
        return Err(CliError::Validation("no queries".into()));
    }
    let cases: Vec<(usize, usize)> = RETRIEVAL_VARIANTS
        .iter()
        .enumerate()
        .flat_map(|(v, _)| (0..queries.len()).map(move |q| (v, q)))
        .collect();
    let trials: Vec<TrialRecord> = cases
        .par_iter()
        .map(|&(v, q)| retrieval_trial(index, v, q, &queries[q], config))
        .collect::<Result<Vec<_>>>()?;
    let trials: Vec<TrialRecord> = trials
        .into_iter()
        .enumerate()
        .map(|(t, mut r)| {
            r.trial = t;
            r
        })
        .collect();
    let mut report = ExperimentReport::new(
        "retrieval",
        serde_json::json!({"queries": queries.len(), "config": config}),
        trials,
    );
    for variant in RETRIEVAL_VARIANTS {
        for key in ["top1", "top3"] {
            let acc = report.fraction(key, Some(("variant", variant)), |v| v > 0.5);
            report
                .aggregates
                .insert(format!("{variant}.{key}_accuracy"), acc);
        }
    }
    Ok(report)
}

fn retrieval_trial(
    index: &DatabaseIndex,
    v: usize,
    q: usize,
    query: &(Image, GeoTag),
    config: &PipelineConfig,
) -> Result<TrialRecord> {
    let variant = RETRIEVAL_VARIANTS[v];
    let mut cfg = config.clone();
    cfg.rectify = variant != "plain";
    cfg.compute_rank = variant == "lowrank_selected";
    let (img, truth) = query;
    let id = format!("query-{q}");
    let fs = match extract_lowrank_sift(img, &id, &cfg) {
        Ok((fs, _)) => fs,
        Err(_) => lrsift_core::FeatureSet {
            image_id: id,
            features: Vec::new(),
        },
    };
    let fs = if variant == "lowrank_selected" {
        select_features(&fs, cfg.rank_min, cfg.rank_max)?
    } else {
        fs
    };
    let (top1, top3) = if fs.features.is_empty() {
        (0.0, 0.0)
    } else {
        let ranked = index.score_query(&fs)?;
        let correct = |n: usize| {
            ranked
                .iter()
                .take(n)
                .any(|(_, _, tag)| localization_correct(tag, truth, cfg.correct_radius_m))
        };
        (correct(1) as u8 as f64, correct(3) as u8 as f64)
    };
    Ok(TrialRecord {
        trial: 0,
        labels: BTreeMap::from([
            ("variant".into(), variant.to_string()),
            ("query".into(), q.to_string()),
        ]),
        values: BTreeMap::from([("top1".into(), top1), ("top3".into(), top3)]),
    })
}
