//! `lrsift` command-line tool: extraction, database construction, queries
//! and the experiment drivers.
//!
//! Exit codes are a stable contract:
//!   0 success, 2 I/O failure, 3 validation failure, 4 solver-degenerate,
//!   5 unknown experiment, 6 query produced zero features.

use std::path::{Path, PathBuf};
use std::process::ExitCode as ProcessExit;

use clap::{Parser, Subcommand};
use lrsift_core::features::{extract_lowrank_sift, select_features};

use lrsift::bench::{
    facade_corpus, propagation_study, retrieval_study, similarity_study, simulate_viewpoint,
    warmstart_study, WarpSpec,
};
use lrsift::error::{CliError, ExitStatus};
use lrsift::{config, corpus, formats, io};

const EXIT_CODE_DOC: &str = "Exit codes: 0 success; 2 I/O failure (missing/corrupt/unwritable \
file); 3 validation failure (bad config, manifest or arguments); 4 solver-degenerate failure; \
5 unknown experiment name; 6 query produced zero features (an empty result array is printed).";

#[derive(Parser)]
#[command(name = "lrsift", version, about = "Low-rank SIFT feature extraction and geotagged image retrieval", after_help = EXIT_CODE_DOC)]
struct Cli {
    /// Worker threads (defaults to the CPU count; LRSIFT_THREADS overrides).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Extract a Low-rank SIFT feature set from one image.
    Extract {
        #[arg(long)]
        image: PathBuf,
        /// Pipeline config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output path for the binary feature set.
        #[arg(long)]
        output: PathBuf,
        /// Optional JSON debug export alongside the binary output.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Ingest a manifest of geotagged images into a retrieval index.
    BuildDb {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output path for the binary index.
        #[arg(long)]
        index: PathBuf,
        /// Ingest report JSON (defaults to <index>.report.json).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Rank indexed images against a query image (JSON lines on stdout).
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        top_n: usize,
    },
    /// Run an experiment driver: similarity, propagation, warmstart, retrieval.
    Bench {
        #[arg(long)]
        experiment: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the report JSON/CSV pair.
        #[arg(long)]
        out_dir: PathBuf,
        /// Existing index (required by the retrieval experiment).
        #[arg(long)]
        index: Option<PathBuf>,
        /// Manifest whose images become queries (retrieval experiment).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Synthetic images per experiment.
        #[arg(long, default_value_t = 5)]
        images: usize,
        /// Tilt angle in degrees for the simulated viewpoints.
        #[arg(long, default_value_t = 25.0)]
        tilt: f64,
        /// Perspective (keystone) strength for the simulated viewpoints.
        #[arg(long, default_value_t = 0.0)]
        perspective: f64,
    },
    /// Print the full default configuration as JSON.
    PrintConfig,
}

fn main() -> ProcessExit {
    let cli = Cli::parse();
    let threads = std::env::var("LRSIFT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .or(cli.threads);
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    match run(cli.cmd) {
        Ok(status) => ProcessExit::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ProcessExit::from(e.exit_status().code() as u8)
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitStatus, CliError> {
    match cmd {
        Cmd::PrintConfig => {
            println!("{}", config::default_config_json());
            Ok(ExitStatus::Ok)
        }
        Cmd::Extract {
            image,
            config: cfg,
            output,
            json,
        } => cmd_extract(&image, cfg.as_deref(), &output, json.as_deref()),
        Cmd::BuildDb {
            manifest,
            config: cfg,
            index,
            report,
        } => cmd_build_db(&manifest, cfg.as_deref(), &index, report.as_deref()),
        Cmd::Query {
            index,
            image,
            config: cfg,
            top_n,
        } => cmd_query(&index, &image, cfg.as_deref(), top_n),
        Cmd::Bench {
            experiment,
            config: cfg,
            out_dir,
            index,
            manifest,
            images,
            tilt,
            perspective,
        } => cmd_bench(
            &experiment,
            cfg.as_deref(),
            &out_dir,
            index.as_deref(),
            manifest.as_deref(),
            images,
            tilt,
            perspective,
        ),
    }
}

fn cmd_extract(
    image: &Path,
    cfg_path: Option<&Path>,
    output: &Path,
    json: Option<&Path>,
) -> Result<ExitStatus, CliError> {
    let cfg = config::load_config(cfg_path)?;
    let img = io::load_image(image)?;
    let id = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    let (fs, diag) = extract_lowrank_sift(&img, &id, &cfg)?;
    formats::write_feature_set(output, &fs)?;
    if let Some(jp) = json {
        std::fs::write(jp, formats::feature_set_to_json(&fs)).map_err(|e| CliError::io(jp, e))?;
    }
    eprintln!(
        "{}: {} features ({} keypoints, {} degenerate dropped, {} tilt solves, {} non-converged blocks)",
        id,
        fs.features.len(),
        diag.keypoints_detected,
        diag.degenerate_dropped,
        diag.tilt_solves,
        diag.non_converged_blocks
    );
    Ok(ExitStatus::Ok)
}

fn cmd_build_db(
    manifest: &Path,
    cfg_path: Option<&Path>,
    index_path: &Path,
    report_path: Option<&Path>,
) -> Result<ExitStatus, CliError> {
    let cfg = config::load_config(cfg_path)?;
    let (index, report) = corpus::ingest(manifest, &cfg)?;
    formats::write_index(index_path, &index)?;
    let report_path = report_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| index_path.with_extension("report.json"));
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, text).map_err(|e| CliError::io(&report_path, e))?;
    for img in report.images.iter().filter(|r| r.skipped) {
        eprintln!(
            "warning: skipped {}: {}",
            img.path,
            img.warning.as_deref().unwrap_or("unknown")
        );
    }
    eprintln!(
        "indexed {} images, {} features, {} tilt solves",
        report.indexed_images, report.total_features, report.total_tilt_solves
    );
    Ok(ExitStatus::Ok)
}

fn cmd_query(
    index_path: &Path,
    image: &Path,
    cfg_path: Option<&Path>,
    top_n: usize,
) -> Result<ExitStatus, CliError> {
    let cfg = config::load_config(cfg_path)?;
    let index = formats::read_index(index_path)?;
    let img = io::load_image(image)?;
    let (fs, _) = extract_lowrank_sift(&img, "query", &cfg)?;
    let fs = if cfg.select_query_features && cfg.compute_rank {
        select_features(&fs, cfg.rank_min, cfg.rank_max)?
    } else {
        fs
    };
    if fs.features.is_empty() {
        println!("[]");
        return Ok(ExitStatus::EmptyQuery);
    }
    let ranked = index.score_query(&fs)?;
    for (image_id, score, tag) in ranked.into_iter().take(top_n) {
        println!(
            "{}",
            serde_json::json!({
                "image_id": image_id,
                "score": score,
                "latitude": tag.latitude,
                "longitude": tag.longitude,
            })
        );
    }
    Ok(ExitStatus::Ok)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    experiment: &str,
    cfg_path: Option<&Path>,
    out_dir: &Path,
    index_path: Option<&Path>,
    manifest_path: Option<&Path>,
    images: usize,
    tilt: f64,
    perspective: f64,
) -> Result<ExitStatus, CliError> {
    let cfg = config::load_config(cfg_path)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let report = match experiment {
        "similarity" => {
            let corpus = facade_corpus(images, 120, 120, cfg.seed);
            let specs: Vec<WarpSpec> = (0..images as u64)
                .map(|i| WarpSpec {
                    tilt_deg: tilt,
                    perspective,
                    seed: cfg.seed ^ i,
                    ..WarpSpec::default()
                })
                .collect();
            similarity_study(&corpus, &specs, 10, &cfg)?
        }
        "propagation" | "warmstart" => {
            let corpus = facade_corpus(images, 120, 120, cfg.seed);
            let warped: Vec<_> = corpus
                .iter()
                .enumerate()
                .map(|(i, img)| {
                    let spec = WarpSpec {
                        tilt_deg: tilt,
                        perspective,
                        seed: cfg.seed ^ i as u64,
                        ..WarpSpec::default()
                    };
                    simulate_viewpoint(img, &spec).map(|(w, _)| w)
                })
                .collect::<Result<Vec<_>, _>>()?;
            if experiment == "propagation" {
                propagation_study(&warped, 10, &cfg)?
            } else {
                warmstart_study(&warped, &cfg)?
            }
        }
        "retrieval" => {
            let index_path = index_path.ok_or_else(|| {
                CliError::Validation("the retrieval experiment requires --index".into())
            })?;
            let manifest_path = manifest_path.ok_or_else(|| {
                CliError::Validation("the retrieval experiment requires --manifest".into())
            })?;
            let index = formats::read_index(index_path)?;
            let entries = corpus::load_manifest(manifest_path)?;
            let base = manifest_path.parent().unwrap_or(Path::new("."));
            let mut queries = Vec::new();
            for (i, entry) in entries.iter().enumerate() {
                let full = if Path::new(&entry.path).is_absolute() {
                    PathBuf::from(&entry.path)
                } else {
                    base.join(&entry.path)
                };
                let img = io::load_image(&full)?;
                let spec = WarpSpec {
                    tilt_deg: tilt,
                    perspective,
                    seed: cfg.seed ^ i as u64,
                    ..WarpSpec::default()
                };
                let (warped, _) = simulate_viewpoint(&img, &spec)?;
                queries.push((warped, entry.geotag()?));
            }
            retrieval_study(&index, &queries, &cfg)?
        }
        other => return Err(CliError::UnknownExperiment(other.into())),
    };
    report.write_json(out_dir.join(format!("{}.json", report.experiment)))?;
    report.write_csv(out_dir.join(format!("{}.csv", report.experiment)))?;
    for (k, v) in &report.aggregates {
        eprintln!("{k} = {v:.4}");
    }
    Ok(ExitStatus::Ok)
}
