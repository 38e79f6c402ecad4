//! ctxfuse command line: every pipeline stage as a file-in/file-out
//! subcommand with deterministic outputs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ctxfuse::eval::{default_threshold_grid, evaluate, EvalOptions};
use ctxfuse::io::{
    detections_to_bytes, load_detections, load_detections_with_vocab, load_manifest,
    save_detections, to_json_bytes,
};
use ctxfuse::mnf::{partition_train, run_mnf, SceneNetRegistry};
use ctxfuse::model::Dataset;
use ctxfuse::render::{report_to_markdown, report_to_text, write_report_files};
use ctxfuse::scene::{
    load_scene_predictions, save_scene_predictions, HistogramClassifier, ScenePrediction,
    SceneProvider,
};
use ctxfuse::scu::{results_to_detections, scu_update_batch, ScuOptions, ScuSummary};
use ctxfuse::sim::{experiment, generate, Pipeline, SimConfig, TableSource};
use ctxfuse::stats::{
    compute_table, filter_scenes, load_table, save_table, save_table_csv, table_to_json_bytes,
    SplitFilter,
};

#[derive(Parser)]
#[command(
    name = "ctxfuse",
    version,
    about = "Fuse scene context into object-detection outputs",
    after_help = "Environment:\n  CTXFUSE_THREADS  cap internal parallelism (default: all cores)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl From<SplitArg> for SplitFilter {
    fn from(value: SplitArg) -> SplitFilter {
        match value {
            SplitArg::Train => SplitFilter::Train,
            SplitArg::Test => SplitFilter::Test,
            SplitArg::All => SplitFilter::All,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneModeArg {
    GroundTruth,
    File,
    Histogram,
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineArg {
    Baseline,
    Scu,
    Mnf,
}

impl From<PipelineArg> for Pipeline {
    fn from(value: PipelineArg) -> Pipeline {
        match value {
            PipelineArg::Baseline => Pipeline::Baseline,
            PipelineArg::Scu => Pipeline::Scu,
            PipelineArg::Mnf => Pipeline::Mnf,
        }
    }
}

#[derive(Args)]
struct SceneSourceArgs {
    /// Where scene labels come from at evaluation time
    #[arg(long, value_enum, default_value = "ground-truth")]
    scene_mode: SceneModeArg,
    /// Scene-prediction file (required in file mode)
    #[arg(long)]
    scene_file: Option<PathBuf>,
    /// Fitted histogram-classifier state (required in histogram mode)
    #[arg(long)]
    scene_state: Option<PathBuf>,
}

impl SceneSourceArgs {
    fn provider(&self, dataset: &Dataset) -> Result<SceneProvider, String> {
        match self.scene_mode {
            SceneModeArg::GroundTruth => Ok(SceneProvider::ground_truth()),
            SceneModeArg::File => {
                let path = self
                    .scene_file
                    .as_ref()
                    .ok_or("--scene-file is required in file mode")?;
                SceneProvider::from_prediction_file(path, dataset).map_err(|e| e.to_string())
            }
            SceneModeArg::Histogram => {
                let path = self
                    .scene_state
                    .as_ref()
                    .ok_or("--scene-state is required in histogram mode")?;
                Ok(SceneProvider::from_classifier(
                    HistogramClassifier::load(path).map_err(|e| e.to_string())?,
                ))
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute the object-scene co-occurrence table from a manifest
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Drop scenes with fewer training images than this
        #[arg(long)]
        alpha: Option<usize>,
        /// Output table (JSON); "-" writes to stdout
        #[arg(long)]
        out: String,
        /// Also export the table as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rescore detection candidates with scene co-occurrence
    Scu {
        #[arg(long)]
        detections: PathBuf,
        /// Scene predictions for the detections' images
        #[arg(long)]
        scenes: PathBuf,
        /// Co-occurrence table produced by `stats`
        #[arg(long)]
        cooc: PathBuf,
        /// Rescored detections output; "-" writes to stdout
        #[arg(long)]
        out: String,
        /// Audit sidecar with per-candidate products
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Candidates scoring below this are dropped
        #[arg(long, default_value_t = 1e-6)]
        score_floor: f64,
        /// Laplace smoothing weight for P(o|s); 0 keeps exact zeros
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
    },
    /// Write one training manifest per sufficiently common scene
    MnfPartition {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        alpha: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Route test images to scene-specific detection sources
    MnfRoute {
        #[arg(long)]
        manifest: PathBuf,
        /// Registry file mapping scenes to detections files
        #[arg(long)]
        registry: PathBuf,
        #[command(flatten)]
        scene: SceneSourceArgs,
        /// Routed detections output; "-" writes to stdout
        #[arg(long)]
        out: String,
    },
    /// Match predictions to ground truth and write report files
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Detections carrying one final label per box
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Comma-separated descending PR thresholds (default: 20-point grid)
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit the histogram scene classifier on training images
    SceneFit {
        #[arg(long)]
        manifest: PathBuf,
        /// Histogram bins per color channel
        #[arg(long, default_value_t = 8)]
        bins: usize,
        /// Classifier state output
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce a scene-prediction file for a split
    ScenePredict {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        scene: SceneSourceArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Prediction file output; "-" writes to stdout
        #[arg(long)]
        out: String,
    },
    /// Generate a synthetic dataset, detections, and scene predictions
    Simulate {
        /// Simulation config (JSON); defaults to the built-in demo config
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also run a pipeline end to end and write its report
        #[arg(long, value_enum)]
        experiment: Option<PipelineArg>,
    },
    /// Eval plus a human-readable markdown summary
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value = "Evaluation report")]
        title: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn write_out(bytes: &[u8], out: &str) -> Result<(), String> {
    if out == "-" {
        std::io::stdout()
            .write_all(bytes)
            .map_err(|e| format!("failed to write to stdout: {e}"))
    } else {
        std::fs::write(out, bytes).map_err(|e| format!("failed to write {out}: {e}"))
    }
}

fn configure_threads() {
    if let Ok(value) = std::env::var("CTXFUSE_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            if threads > 0 {
                // ignore failure when a pool already exists
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

fn eval_options(iou: f64, split: SplitArg, thresholds: Option<Vec<f64>>) -> EvalOptions {
    EvalOptions {
        iou_threshold: iou,
        split: split.into(),
        pr_thresholds: thresholds.unwrap_or_else(default_threshold_grid),
        cluster_split: SplitFilter::Train,
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Stats {
            manifest,
            split,
            alpha,
            out,
            csv,
        } => {
            let dataset = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let table = compute_table(&dataset, split.into());
            let table = match alpha {
                None => table,
                Some(alpha) => {
                    let (filtered, retained) =
                        filter_scenes(&table, &dataset, alpha).map_err(|e| e.to_string())?;
                    eprintln!(
                        "retained {} of {} scenes at alpha={alpha}",
                        retained.len(),
                        dataset.scene_classes.len()
                    );
                    filtered
                }
            };
            if let Some(csv_path) = csv {
                save_table_csv(&table, &csv_path).map_err(|e| e.to_string())?;
            }
            if out == "-" {
                write_out(&table_to_json_bytes(&table), "-")?;
            } else {
                save_table(&table, Path::new(&out)).map_err(|e| e.to_string())?;
            }
            eprintln!(
                "table over {} images, {} detections",
                table.image_count(),
                table.detection_count()
            );
            Ok(())
        }
        Command::Scu {
            detections,
            scenes,
            cooc,
            out,
            audit,
            score_floor,
            smoothing,
        } => {
            let table = load_table(&cooc).map_err(|e| e.to_string())?;
            let records = load_detections_with_vocab(&detections, table.objects())
                .map_err(|e| e.to_string())?;
            let vocab_dataset = Dataset::new(
                table.objects().to_vec(),
                table.scenes().to_vec(),
                Vec::new(),
            )
            .map_err(|e| e.to_string())?;
            let predictions =
                load_scene_predictions(&scenes, &vocab_dataset).map_err(|e| e.to_string())?;
            let options = ScuOptions {
                score_floor,
                smoothing,
            };
            let (results, summary) = scu_update_batch(&records, &predictions, &table, &options)
                .map_err(|e| e.to_string())?;
            let updated = results_to_detections(&results, Some("scu"));
            write_out(&detections_to_bytes(&updated), &out)?;
            if let Some(audit_path) = audit {
                #[derive(serde::Serialize)]
                struct Audit<'a> {
                    summary: &'a ScuSummary,
                    results: &'a [ctxfuse::FusionResult],
                }
                let bytes = to_json_bytes(&Audit {
                    summary: &summary,
                    results: &results,
                });
                std::fs::write(&audit_path, bytes)
                    .map_err(|e| format!("failed to write {}: {e}", audit_path.display()))?;
            }
            eprintln!(
                "rescored {} detections: {} changed, {} fell back",
                summary.total, summary.changed, summary.fallback
            );
            Ok(())
        }
        Command::MnfPartition {
            manifest,
            alpha,
            out_dir,
        } => {
            let dataset = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let spec = partition_train(&dataset, alpha, &out_dir).map_err(|e| e.to_string())?;
            eprintln!(
                "wrote {} scene manifests to {}; excluded {} scene(s)",
                spec.retained_scenes.len(),
                out_dir.display(),
                spec.excluded_scenes.len()
            );
            Ok(())
        }
        Command::MnfRoute {
            manifest,
            registry,
            scene,
            out,
        } => {
            let dataset = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let registry =
                SceneNetRegistry::from_file(&registry, &dataset).map_err(|e| e.to_string())?;
            let provider = scene.provider(&dataset)?;
            let (records, summary) =
                run_mnf(&dataset, &provider, &registry).map_err(|e| e.to_string())?;
            write_out(&detections_to_bytes(&records), &out)?;
            for (source, count) in &summary.routed_images {
                eprintln!("routed {count} image(s) to {source}");
            }
            if summary.unrouted_images > 0 {
                eprintln!(
                    "warning: {} image(s) had no source and no fallback",
                    summary.unrouted_images
                );
            }
            if summary.missing_from_source > 0 {
                eprintln!(
                    "warning: {} routed image(s) missing from their source",
                    summary.missing_from_source
                );
            }
            Ok(())
        }
        Command::Eval {
            manifest,
            pred,
            iou,
            split,
            thresholds,
            out_dir,
        } => {
            let dataset = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let predictions = load_detections(&pred, &dataset).map_err(|e| e.to_string())?;
            let report = evaluate(&dataset, &predictions, &eval_options(iou, split, thresholds))
                .map_err(|e| e.to_string())?;
            write_report_files(&report, &out_dir).map_err(|e| e.to_string())?;
            eprint!("{}", report_to_text(&report));
            Ok(())
        }
        Command::SceneFit {
            manifest,
            bins,
            out,
        } => {
            let dataset = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let classifier =
                HistogramClassifier::fit(&dataset, bins).map_err(|e| e.to_string())?;
            classifier.save(&out).map_err(|e| e.to_string())?;
            eprintln!(
                "fitted {} scene centroid(s) at {bins} bins per channel",
                classifier.scenes().len()
            );
            Ok(())
        }
        Command::ScenePredict {
            manifest,
            scene,
            split,
            out,
        } => {
            let dataset = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let provider = scene.provider(&dataset)?;
            let filter: SplitFilter = split.into();
            let predictions: Vec<ScenePrediction> = dataset
                .images
                .iter()
                .filter(|i| filter.selects(i.split))
                .map(|image| provider.identify(image))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            if out == "-" {
                #[derive(serde::Serialize)]
                struct File<'a> {
                    predictions: &'a [ScenePrediction],
                }
                write_out(
                    &to_json_bytes(&File {
                        predictions: &predictions,
                    }),
                    "-",
                )?;
            } else {
                save_scene_predictions(&predictions, Path::new(&out))
                    .map_err(|e| e.to_string())?;
            }
            eprintln!("predicted scenes for {} image(s)", predictions.len());
            Ok(())
        }
        Command::Simulate {
            config,
            out_dir,
            experiment: pipeline,
        } => {
            let config = match config {
                Some(path) => SimConfig::load(&path).map_err(|e| e.to_string())?,
                None => SimConfig::default_demo(),
            };
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| format!("failed to create {}: {e}", out_dir.display()))?;
            let output = generate(&config).map_err(|e| e.to_string())?;
            config
                .save(out_dir.join("sim.json"))
                .map_err(|e| e.to_string())?;
            ctxfuse::save_manifest(&output.dataset, out_dir.join("manifest.json"))
                .map_err(|e| e.to_string())?;
            save_detections(&output.detections, out_dir.join("detections.json"))
                .map_err(|e| e.to_string())?;
            save_scene_predictions(
                &output.scene_predictions,
                out_dir.join("scene_predictions.json"),
            )
            .map_err(|e| e.to_string())?;
            if let Some(sources) = &output.mnf_sources {
                let sources_dir = out_dir.join("mnf_sources");
                std::fs::create_dir_all(&sources_dir)
                    .map_err(|e| format!("failed to create {}: {e}", sources_dir.display()))?;
                let mut entries = BTreeMap::new();
                for (scene, records) in sources {
                    let file = format!("{}.detections.json", scene.as_str());
                    save_detections(records, sources_dir.join(&file))
                        .map_err(|e| e.to_string())?;
                    entries.insert(scene.as_str().to_owned(), format!("mnf_sources/{file}"));
                }
                #[derive(serde::Serialize)]
                struct Registry {
                    entries: BTreeMap<String, String>,
                }
                std::fs::write(
                    out_dir.join("registry.json"),
                    to_json_bytes(&Registry { entries }),
                )
                .map_err(|e| e.to_string())?;
            }
            eprintln!(
                "generated {} images, {} test detections into {}",
                output.dataset.image_count(),
                output.detections.len(),
                out_dir.display()
            );
            if let Some(pipeline) = pipeline {
                let pipeline: Pipeline = pipeline.into();
                let summary = experiment(&config, pipeline, TableSource::TrainEstimate)
                    .map_err(|e| e.to_string())?;
                let exp_dir = out_dir.join(format!("experiment_{pipeline}"));
                write_report_files(&summary.report, &exp_dir).map_err(|e| e.to_string())?;
                std::fs::write(exp_dir.join("summary.json"), to_json_bytes(&summary))
                    .map_err(|e| e.to_string())?;
                eprintln!(
                    "{pipeline}: precision {:.4}, recall {:.4}",
                    summary.total_precision, summary.total_recall
                );
            }
            Ok(())
        }
        Command::Report {
            manifest,
            pred,
            iou,
            split,
            title,
            out_dir,
        } => {
            let dataset = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let predictions = load_detections(&pred, &dataset).map_err(|e| e.to_string())?;
            let report = evaluate(&dataset, &predictions, &eval_options(iou, split, None))
                .map_err(|e| e.to_string())?;
            write_report_files(&report, &out_dir).map_err(|e| e.to_string())?;
            std::fs::write(
                out_dir.join("report.md"),
                report_to_markdown(&report, &title),
            )
            .map_err(|e| e.to_string())?;
            std::fs::write(out_dir.join("report.txt"), report_to_text(&report))
                .map_err(|e| e.to_string())?;
            eprint!("{}", report_to_text(&report));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
