use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::GroupAttribute;
use crate::pipeline::{Experiment, Facet};
use crate::synth::SynthConfig;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub trials: usize,
    pub facets: Vec<String>,
    pub thresholds_days: Vec<f64>,
    pub attributes: Vec<GroupAttribute>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            trials: 5,
            facets: vec![
                "section:e-commerce".into(),
                "section:account".into(),
                "section:claims".into(),
                "section:insurance-info".into(),
                "section:news".into(),
                "section:support".into(),
                "object:items".into(),
                "object:services".into(),
                "type:start".into(),
                "type:act".into(),
                "type:complete".into(),
            ],
            thresholds_days: vec![1.0, 3.0, 5.0, 10.0, 20.0, 40.0],
            attributes: vec![GroupAttribute::AgeBucket, GroupAttribute::Gender, GroupAttribute::IncomeDecile],
        }
    }
}

/// Everything that affects results of a run. Paths are resolved relative to
/// the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Directory holding `events.csv`, `purchases.csv`, `profiles.csv`, `catalog.csv`.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    #[serde(flatten)]
    pub experiment: Experiment,
    pub synth: SynthConfig,
    pub study: StudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            experiment: Experiment::default(),
            synth: SynthConfig::default(),
            study: StudyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.synth.validate()?;
        if self.study.trials == 0 {
            return Err(Error::config("study.trials", "must be positive"));
        }
        if self.study.thresholds_days.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::config("study.thresholds_days", "thresholds must be positive"));
        }
        self.facets().map(|_| ())
    }

    pub fn facets(&self) -> Result<Vec<Facet>> {
        self.study
            .facets
            .iter()
            .map(|f| f.parse().map_err(|_| Error::config("study.facets", format!("unknown facet `{f}`"))))
            .collect()
    }

    /// SHA-256 of the canonical JSON form, leaving out the directories.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.data_dir = PathBuf::new();
        c.out_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Versioned JSON envelope around a trained model or any other artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub format_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub payload: T,
}

pub fn save_artifact<T: Serialize>(path: &Path, kind: &str, cfg: &RunConfig, payload: &T) -> Result<()> {
    let a = Artifact {
        format_version: CHECKPOINT_FORMAT,
        kind: kind.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.experiment.seed,
        payload,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    crate::eval::write_json(path, &a)
}

pub fn load_artifact<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Artifact<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let head: Artifact<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if head.format_version != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} (expected {CHECKPOINT_FORMAT})",
            path.display(),
            head.format_version
        )));
    }
    if head.kind != kind {
        return Err(Error::Checkpoint(format!("{}: holds a {} (expected {kind})", path.display(), head.kind)));
    }
    let payload =
        serde_json::from_value(head.payload).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(Artifact {
        format_version: head.format_version,
        kind: head.kind,
        config_hash: head.config_hash,
        seed: head.seed,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.experiment.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let mut c = a.clone();
        c.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn bad_field_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"k": 0}"#).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::InvalidConfig { .. })));
        fs::write(&p, r#"{"study": {"facets": ["object:nothing"]}}"#).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::InvalidConfig { .. })));
        fs::write(&p, "not json").unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::InvalidConfig { .. })));
    }

    #[test]
    fn artifact_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        let cfg = RunConfig::default();
        save_artifact(&p, "numbers", &cfg, &vec![1, 2, 3]).unwrap();
        let a: Artifact<Vec<i32>> = load_artifact(&p, "numbers").unwrap();
        assert_eq!(a.payload, vec![1, 2, 3]);
        assert_eq!(a.config_hash, cfg.hash());
        assert!(load_artifact::<Vec<i32>>(&p, "model").is_err());
    }
}
