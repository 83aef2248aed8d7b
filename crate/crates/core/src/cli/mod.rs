//! The `crossrec` command line: one subcommand per pipeline stage.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::baselines::BaselineKind;
use crate::dataio::{ingest, Dataset, DatasetPaths, DatasetStats, IngestReport};
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::eval::{evaluate, group_breakdown, per_step_curve, write_csv, EvalReport, GroupAttribute, Metrics};
use crate::pipeline::{
    ablate_actions, shuffle_study, threshold_sweep, train_model, CaseSplit, ModelSpec, TrainedModel,
};
use crate::prep::{prepare, PrepReport, Prepared};
use crate::recmodels::{extract_attention, HeadKind, ModelConfig};
use crate::segmentation::fit_threshold;
use crate::synth::write_synth;

pub use config::{load_artifact, save_artifact, Artifact, RunConfig, StudyConfig, CHECKPOINT_FORMAT};

pub const MODEL_KIND: &str = "model";

#[derive(Debug, Parser)]
#[command(name = "crossrec", version, about = "Cross-session purchase recommendation pipeline")]
pub struct Cli {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Input data directory, overriding `data_dir`.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output directory, overriding `out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (into --out, or `data_dir`).
    Synth,
    /// Validate the input files and report counts.
    Ingest,
    /// Fit the inter-session time mixture and its threshold.
    Segment,
    /// Clean, segment and split; report counts.
    Prep,
    /// Train a cross-sessions model.
    Train {
        /// Session encoder: encode, concat or auto.
        #[arg(long)]
        encoder: Option<EncoderKind>,
        /// Output head: bce, weibull or attention.
        #[arg(long)]
        head: Option<HeadKind>,
        /// Add the demographic branch.
        #[arg(long)]
        hybrid: bool,
    },
    /// Train a baseline.
    TrainBaseline {
        /// random, popular, svd, demo, gru4rec, gru4rec-concat, sknn or sknn-b.
        #[arg(long)]
        model: BaselineKind,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        /// Model file; defaults to `model.json` in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Metrics using the first j sessions of each test task.
    PerStep {
        /// Model file; defaults to `model.json` in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Retrain with shuffled session order.
    ShuffleStudy,
    /// Retrain without groups of actions.
    Ablate {
        /// Facets to remove; defaults to `study.facets`.
        #[arg(long)]
        facet: Vec<String>,
    },
    /// Retrain across task thresholds from `study.thresholds_days`.
    SweepThreshold,
    /// Metrics per demographic group.
    Fairness {
        /// Model file; defaults to `model.json` in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Grouping attributes; defaults to `study.attributes`.
        #[arg(long)]
        attribute: Vec<GroupAttribute>,
    },
}

/// Exit status for an error: 2 for configuration and usage problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig { .. } | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

/// Parses `args` and runs the subcommand; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.data {
        cfg.data_dir = d.clone();
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Command::Train { encoder, head, hybrid } = &cli.command {
        let mut m = match &cfg.experiment.model {
            ModelSpec::Cross(c) => c.clone(),
            ModelSpec::Baseline { .. } => ModelConfig::default(),
        };
        if let Some(e) = encoder {
            m.encoder = *e;
        }
        if let Some(h) = head {
            m.head = *h;
        }
        m.hybrid |= *hybrid;
        cfg.experiment.model = ModelSpec::Cross(m);
    }
    if let Command::TrainBaseline { model } = &cli.command {
        let config = match &cfg.experiment.model {
            ModelSpec::Baseline { config, .. } => config.clone(),
            ModelSpec::Cross(_) => Default::default(),
        };
        cfg.experiment.model = ModelSpec::Baseline { kind: *model, config };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let d = ingest(&DatasetPaths::in_dir(&cfg.data_dir))?;
    log::info!("ingested {:?}", d.stats());
    Ok(d)
}

fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    prepare(&load_dataset(cfg)?, &cfg.experiment.prep)
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn default_checkpoint(cfg: &RunConfig, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| out(cfg, "model.json"))
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<TrainedModel> {
    let a: Artifact<TrainedModel> = load_artifact(path, MODEL_KIND)?;
    if a.config_hash != cfg.hash() {
        log::info!("{} carries config hash {}", path.display(), a.config_hash);
    }
    Ok(a.payload)
}

fn stamp(mut r: EvalReport, cfg: &RunConfig, prepared: &Prepared) -> EvalReport {
    r.config_hash = cfg.hash();
    r.seed = cfg.experiment.seed;
    r.dataset_hash = prepared.dataset.source_hash.clone();
    r
}

fn write_csv_rows(cfg: &RunConfig, name: &str, rows: &[[String; 5]]) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_csv(&out(cfg, name), rows)
}

fn metric_rows(m: &Metrics, k: usize, model: &str, group: &str) -> Vec<[String; 5]> {
    Metrics::NAMES
        .iter()
        .zip(m.values())
        .map(|(n, v)| [n.to_string(), k.to_string(), model.to_string(), group.to_string(), v.to_string()])
        .collect()
}

#[derive(Serialize)]
struct IngestSummary {
    stats: DatasetStats,
    report: IngestReport,
    source_hash: String,
}

#[derive(Serialize)]
struct PrepSummary<'a> {
    report: &'a PrepReport,
    train_end: i64,
    validation_end: i64,
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli)?;
    let k = cfg.experiment.k;
    match &cli.command {
        Command::Synth => {
            let dir = cli.out.clone().unwrap_or_else(|| cfg.data_dir.clone());
            let paths = write_synth(&cfg.synth, &dir)?;
            save_artifact(&dir.join("synth.json"), "synth", &cfg, &cfg.synth)?;
            log::info!("wrote synthetic data to {}", paths.events.parent().unwrap_or(&dir).display());
        }
        Command::Ingest => {
            let d = load_dataset(&cfg)?;
            let s = IngestSummary { stats: d.stats(), report: d.report.clone(), source_hash: d.source_hash.clone() };
            save_artifact(&out(&cfg, "ingest.json"), "ingest", &cfg, &s)?;
        }
        Command::Segment => {
            let fit = fit_threshold(&load_dataset(&cfg)?)?;
            log::info!("task threshold {:.3} days", fit.threshold.days);
            save_artifact(&out(&cfg, "segment.json"), "segment", &cfg, &fit)?;
        }
        Command::Prep => {
            let p = load_prepared(&cfg)?;
            let s =
                PrepSummary { report: &p.report, train_end: p.split.train_end, validation_end: p.split.validation_end };
            save_artifact(&out(&cfg, "prep.json"), "prep", &cfg, &s)?;
        }
        Command::Train { .. } | Command::TrainBaseline { .. } => {
            let p = load_prepared(&cfg)?;
            let cases = CaseSplit::new(&p)?;
            let e = &cfg.experiment;
            let (model, summary) = train_model(&e.model, &p, &cases, &e.autoencoder, e.seed)?;
            let path = match &cli.command {
                Command::TrainBaseline { model } => out(&cfg, &format!("baseline-{model}.json")),
                _ => out(&cfg, "model.json"),
            };
            save_artifact(&path, MODEL_KIND, &cfg, &model)?;
            save_artifact(&path.with_extension("history.json"), "training-history", &cfg, &summary)?;
            log::info!("saved {}", path.display());
        }
        Command::Eval { checkpoint } => {
            let p = load_prepared(&cfg)?;
            let model = load_model(&cfg, &default_checkpoint(&cfg, checkpoint))?;
            let cases = CaseSplit::new(&p)?;
            let report = stamp(evaluate(&model, &cases.test, &p.dataset.catalog, k)?, &cfg, &p);
            println!("{}", serde_json::to_string(&report.means)?);
            let name = report.model.clone();
            save_artifact(&out(&cfg, &format!("eval-{name}.json")), "eval-report", &cfg, &report)?;
            write_csv_rows(&cfg, &format!("eval-{name}.csv"), &report.csv_rows("all"))?;
            if let TrainedModel::Cross(m) = &model {
                if m.model.head() == HeadKind::Attention {
                    let examples = cases
                        .test
                        .iter()
                        .map(|c| m.example(c, &p.dataset, c.task.purchase.time))
                        .collect::<Result<Vec<_>>>()?;
                    let table = extract_attention(&m.model, &examples)?;
                    save_artifact(&out(&cfg, &format!("attention-{name}.json")), "attention", &cfg, &table)?;
                }
            }
        }
        Command::PerStep { checkpoint } => {
            let p = load_prepared(&cfg)?;
            let model = load_model(&cfg, &default_checkpoint(&cfg, checkpoint))?;
            let cases = CaseSplit::new(&p)?;
            let curve = per_step_curve(&model, &cases.test, &p.dataset.catalog, k)?;
            let name = crate::eval::Recommender::name(&model);
            let rows: Vec<[String; 5]> =
                curve.iter().flat_map(|s| metric_rows(&s.means, k, &name, &format!("step={}", s.step))).collect();
            save_artifact(&out(&cfg, &format!("per-step-{name}.json")), "per-step", &cfg, &curve)?;
            write_csv_rows(&cfg, &format!("per-step-{name}.csv"), &rows)?;
        }
        Command::ShuffleStudy => {
            let study = shuffle_study(&cfg.experiment, &load_dataset(&cfg)?, cfg.study.trials)?;
            println!("delta hr {:+.4}", study.delta_hr);
            let mut rows = metric_rows(&study.original.means, k, &study.model, "order=original");
            rows.extend(metric_rows(&study.shuffled, k, &study.model, "order=shuffled"));
            save_artifact(&out(&cfg, "shuffle-study.json"), "shuffle-study", &cfg, &study)?;
            write_csv_rows(&cfg, "shuffle-study.csv", &rows)?;
        }
        Command::Ablate { facet } => {
            let facets = if facet.is_empty() {
                cfg.facets()?
            } else {
                facet.iter().map(|f| f.parse()).collect::<Result<Vec<_>>>()?
            };
            let study = ablate_actions(&cfg.experiment, &load_dataset(&cfg)?, &facets)?;
            let mut rows = metric_rows(&study.all_actions.means, k, &study.model, "without=none");
            for r in &study.rows {
                rows.extend(metric_rows(&r.report.means, k, &study.model, &format!("without={}", r.facet)));
            }
            save_artifact(&out(&cfg, "ablation.json"), "ablation", &cfg, &study)?;
            write_csv_rows(&cfg, "ablation.csv", &rows)?;
        }
        Command::SweepThreshold => {
            let points = threshold_sweep(&cfg.experiment, &load_dataset(&cfg)?, &cfg.study.thresholds_days)?;
            let name = cfg.experiment.model.name();
            let rows: Vec<[String; 5]> = points
                .iter()
                .flat_map(|p| metric_rows(&p.report.means, k, &name, &format!("threshold_days={}", p.threshold_days)))
                .collect();
            save_artifact(&out(&cfg, "threshold-sweep.json"), "threshold-sweep", &cfg, &points)?;
            write_csv_rows(&cfg, "threshold-sweep.csv", &rows)?;
        }
        Command::Fairness { checkpoint, attribute } => {
            let p = load_prepared(&cfg)?;
            let model = load_model(&cfg, &default_checkpoint(&cfg, checkpoint))?;
            let cases = CaseSplit::new(&p)?;
            let report = stamp(evaluate(&model, &cases.test, &p.dataset.catalog, k)?, &cfg, &p);
            let attrs = if attribute.is_empty() { cfg.study.attributes.clone() } else { attribute.clone() };
            let tables = attrs.iter().map(|a| group_breakdown(&report, &p.dataset, *a)).collect::<Result<Vec<_>>>()?;
            let rows: Vec<[String; 5]> = tables.iter().flat_map(|t| t.csv_rows()).collect();
            save_artifact(&out(&cfg, &format!("fairness-{}.json", report.model)), "fairness", &cfg, &tables)?;
            write_csv_rows(&cfg, &format!("fairness-{}.csv", report.model), &rows)?;
        }
    }
    Ok(())
}
