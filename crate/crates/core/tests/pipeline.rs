use std::fs;
use std::path::Path;

use crossrec::cli::{main_with_args, RunConfig};
use crossrec::dataio::{ingest, DatasetPaths};
use crossrec::numcore::TrainConfig;
use crossrec::pipeline::{ablate_actions, Experiment, Facet, ModelSpec};
use crossrec::recmodels::ModelConfig;
use crossrec::synth::{generate, SynthConfig};

fn small_train() -> TrainConfig {
    TrainConfig { hidden_units: 6, max_epochs: 3, ..Default::default() }
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let cfg = RunConfig {
        data_dir: dir.join("data"),
        out_dir: dir.join("out"),
        synth: SynthConfig { n_users: 400, seed: 21, ..Default::default() },
        experiment: Experiment {
            model: ModelSpec::Cross(ModelConfig { train: small_train(), ..Default::default() }),
            ..Default::default()
        },
        ..Default::default()
    };
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn crossrec(config: &Path, args: &[&str]) {
    let mut argv = vec!["crossrec", "--config", config.to_str().unwrap()];
    argv.extend_from_slice(args);
    assert_eq!(main_with_args(&argv), 0, "crossrec {args:?} failed");
}

fn run_all(dir: &Path) {
    let cfg = write_config(dir);
    for step in [&["synth"][..], &["ingest"], &["segment"], &["prep"], &["train"], &["eval"], &["per-step"]] {
        crossrec(&cfg, step);
    }
    crossrec(&cfg, &["train-baseline", "--model", "popular"]);
    let ckpt = dir.join("out/baseline-popular.json");
    crossrec(&cfg, &["eval", "--checkpoint", ckpt.to_str().unwrap()]);
}

#[test]
fn cli_pipeline_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_all(a.path());
    run_all(b.path());
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
    for f in ["data/events.csv", "data/purchases.csv", "data/profiles.csv", "data/catalog.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let outputs: Vec<String> = fs::read_dir(a.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("eval-") || n.starts_with("per-step-") || n == "prep.json")
        .collect();
    assert!(outputs.iter().any(|n| n.starts_with("eval-") && n.ends_with(".json")), "{outputs:?}");
    assert!(outputs.iter().any(|n| n.contains("popular")), "{outputs:?}");
    for f in outputs {
        let f = format!("out/{f}");
        assert_eq!(read(a.path(), &f), read(b.path(), &f), "{f}");
    }
}

#[test]
fn cli_rejects_bad_config_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    fs::write(&p, r#"{"k": 0}"#).unwrap();
    assert_eq!(main_with_args(["crossrec", "--config", p.to_str().unwrap(), "prep"]), 2);
}

#[test]
fn ablating_an_absent_facet_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let paths = DatasetPaths::in_dir(dir.path());
    let ds = generate(&SynthConfig { n_users: 300, seed: 4, ..Default::default() }).unwrap();
    crossrec::dataio::write_dataset(&ds, &paths).unwrap();
    let ds = ingest(&paths).unwrap();
    let exp = Experiment {
        model: ModelSpec::Cross(ModelConfig { train: small_train(), ..Default::default() }),
        ..Default::default()
    };
    let study = ablate_actions(&exp, &ds, &[Facet::Section("no-such-section".into())]).unwrap();
    assert_eq!(study.rows.len(), 1);
    assert_eq!(study.rows[0].report.means, study.all_actions.means);
    assert!(study.rows[0].relative_change.values().iter().all(|&c| c == 0.0), "{:?}", study.rows[0].relative_change);
}
