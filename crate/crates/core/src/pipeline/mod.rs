//! Glue between prepared data and models: evaluation cases, training
//! examples, model training, and the retraining studies.

mod studies;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::baselines::{train_baseline, Baseline, BaselineConfig, BaselineKind};
use crate::dataio::{build_censored_labels, ActionVocabulary, Dataset, PurchaseEvent};
use crate::encoders::{fit_autoencoder, session_codes, EncoderKind, SessionCodes, TaskEncoder};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Case, EvalReport, Recommender};
use crate::numcore::{History, TrainConfig};
use crate::prep::{cap_recency, prepare, PrepConfig, Prepared};
use crate::recmodels::{CrossSessionsModel, FeatureScaler, HeadKind, ModelConfig, TaskExample};
use crate::segmentation::{segment_tasks, Task};

pub use studies::{
    ablate_actions, remove_facet, shuffle_sessions, shuffle_study, threshold_sweep, AblationRow, AblationStudy, Facet,
    ShuffleStudy, SweepPoint,
};

/// Evaluation cases for `tasks`, with holdings and history as of each
/// task's purchase.
pub fn build_cases(dataset: &Dataset, tasks: &[Task]) -> Result<Vec<Case>> {
    let n = dataset.n_items();
    tasks
        .iter()
        .map(|t| {
            let user = dataset
                .user(&t.user)
                .ok_or_else(|| Error::InvalidArgument(format!("task for unknown user `{}`", t.user)))?;
            let portfolio = user.portfolio_at(t.purchase.time, n);
            let features = user.profile.as_ref().map(|p| {
                p.demographics.iter().copied().chain(portfolio.iter().map(|&c| c as f64)).collect::<Vec<f64>>()
            });
            let history = user.purchases.iter().filter(|p| p.time < t.purchase.time).cloned().collect();
            Ok(Case { task: t.clone(), portfolio, features, history })
        })
        .collect()
}

/// The case a model would see if `user` bought something at `time`: the
/// task segmentation would give that purchase, capped by recency.
pub fn case_at(dataset: &Dataset, user: &str, time: i64, prep: &PrepConfig) -> Result<Case> {
    let u = dataset.user(user).ok_or_else(|| Error::InvalidArgument(format!("unknown user `{user}`")))?;
    let sessions: Vec<_> = u.sessions.iter().filter(|s| s.start < time).cloned().collect();
    let mut purchases: Vec<_> = u.purchases.iter().filter(|p| p.time < time).cloned().collect();
    purchases.push(PurchaseEvent { user: u.id.clone(), time, items: Vec::new() });
    let task = segment_tasks(&sessions, &purchases, prep.threshold_seconds())
        .tasks
        .pop()
        .filter(|t| t.purchase.time == time)
        .ok_or(Error::EmptyInput("no sessions before the requested time"))?;
    let mut cases = build_cases(dataset, &[cap_recency(&task, prep)])?;
    Ok(cases.remove(0))
}

/// Train, validation and test cases of a prepared dataset.
#[derive(Debug, Clone)]
pub struct CaseSplit {
    pub train: Vec<Case>,
    pub validation: Vec<Case>,
    pub test: Vec<Case>,
}

impl CaseSplit {
    pub fn new(prepared: &Prepared) -> Result<Self> {
        let d = &prepared.dataset;
        Ok(CaseSplit {
            train: build_cases(d, &prepared.split.train)?,
            validation: build_cases(d, &prepared.split.validation)?,
            test: build_cases(d, &prepared.split.test)?,
        })
    }
}

/// A cross-sessions model with the feature scaling it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedCrossModel {
    pub model: CrossSessionsModel,
    pub scaler: Option<FeatureScaler>,
}

impl TrainedCrossModel {
    fn features(&self, case: &Case) -> Result<Option<Vec<f64>>> {
        match &self.scaler {
            None => Ok(None),
            Some(s) => {
                let raw = case.features.as_deref().ok_or_else(|| Error::ProfileRequired(case.user().to_string()))?;
                Ok(Some(s.apply(raw)?))
            }
        }
    }

    /// Training example of `case`. Weibull labels count purchases up to `label_end`.
    pub fn example(&self, case: &Case, dataset: &Dataset, label_end: i64) -> Result<TaskExample> {
        let n = self.model.n_items;
        let mut target = vec![0.0; n];
        for &k in &case.task.purchase.items {
            target[k] = 1.0;
        }
        let labels = if self.model.head() == HeadKind::Weibull {
            let starts: Vec<i64> = case.task.sessions.iter().map(|s| s.start).collect();
            let purchases = &dataset.user(case.user()).map(|u| u.purchases.as_slice()).unwrap_or_default();
            Some(build_censored_labels(&starts, purchases, label_end, n)?)
        } else {
            None
        };
        Ok(TaskExample {
            encoded: self.model.encoder.encode(&case.task.sessions)?,
            target,
            labels,
            features: self.features(case)?,
        })
    }
}

impl Recommender for TrainedCrossModel {
    fn name(&self) -> String {
        self.model.config.name()
    }

    fn score(&self, case: &Case) -> Result<Vec<f64>> {
        let f = self.features(case)?;
        self.model.scores(&self.model.encoder.encode(&case.task.sessions)?, f.as_deref())
    }

    fn prefix_scores(&self, case: &Case) -> Result<Vec<Vec<f64>>> {
        let f = self.features(case)?;
        self.model.session_prefix_scores(&self.model.encoder.encode(&case.task.sessions)?, f.as_deref())
    }
}

/// Distinct sessions of the given cases, as code sequences.
fn distinct_sessions(cases: &[Case], dataset: &Dataset) -> Result<Vec<SessionCodes>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for c in cases {
        for s in &c.task.sessions {
            if seen.insert((s.user.as_str(), s.id.as_str())) {
                out.push(session_codes(s, &dataset.vocab)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub history: Option<History>,
    pub autoencoder_history: Option<History>,
}

/// Fits a cross-sessions model, first fitting the session autoencoder when
/// the encoder needs one.
pub fn train_cross_model(
    prepared: &Prepared,
    cases: &CaseSplit,
    config: &ModelConfig,
    autoencoder: &TrainConfig,
) -> Result<(TrainedCrossModel, TrainingSummary)> {
    config.validate()?;
    let dataset = &prepared.dataset;
    let mut summary = TrainingSummary::default();
    let ae = if config.encoder == EncoderKind::Auto {
        let train = distinct_sessions(&cases.train, dataset)?;
        let valid = distinct_sessions(&cases.validation, dataset)?;
        let ae_cfg = TrainConfig { seed: config.train.seed, ..autoencoder.clone() };
        let (ae, h) = fit_autoencoder(&dataset.vocab, &train, &valid, &ae_cfg)?;
        summary.autoencoder_history = Some(h);
        Some(ae)
    } else {
        None
    };
    let encoder = TaskEncoder::new(config.encoder, dataset.vocab.clone(), ae)?;
    let scaler = if config.hybrid {
        let rows: Vec<Vec<f64>> = cases
            .train
            .iter()
            .map(|c| c.features.clone().ok_or_else(|| Error::ProfileRequired(c.user().to_string())))
            .collect::<Result<_>>()?;
        Some(FeatureScaler::fit(&rows)?)
    } else {
        None
    };
    let n_features = scaler.as_ref().map(|s| s.mean.len());
    let model = CrossSessionsModel::new(config.clone(), encoder, dataset.n_items(), n_features)?;
    let mut trained = TrainedCrossModel { model, scaler };
    let split = &prepared.split;
    let train: Vec<TaskExample> =
        cases.train.iter().map(|c| trained.example(c, dataset, split.train_end)).collect::<Result<_>>()?;
    let valid: Vec<TaskExample> =
        cases.validation.iter().map(|c| trained.example(c, dataset, split.validation_end)).collect::<Result<_>>()?;
    let history = crate::numcore::fit(&mut trained.model, &train, &valid, &config.train)?;
    log::info!("{}: best epoch {} of {}", config.name(), history.best_epoch, history.val_loss.len());
    summary.history = Some(history);
    Ok((trained, summary))
}

/// Which model to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelSpec {
    Cross(ModelConfig),
    Baseline {
        kind: BaselineKind,
        #[serde(default)]
        config: BaselineConfig,
    },
}

impl ModelSpec {
    pub fn name(&self) -> String {
        match self {
            ModelSpec::Cross(c) => c.name(),
            ModelSpec::Baseline { kind, .. } => kind.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Cross(c) => c.validate(),
            ModelSpec::Baseline { config, .. } => config.validate(),
        }
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Cross(ModelConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "model", rename_all = "lowercase")]
pub enum TrainedModel {
    Cross(TrainedCrossModel),
    Baseline(Baseline),
}

impl TrainedModel {
    /// Vocabulary the model's action codes refer to, if it reads actions.
    pub fn vocabulary(&self) -> Option<&ActionVocabulary> {
        match self {
            TrainedModel::Cross(m) => Some(&m.model.encoder.vocab),
            TrainedModel::Baseline(Baseline::Gru4rec(m)) => Some(m.vocab()),
            TrainedModel::Baseline(Baseline::Sknn(m)) => Some(&m.vocab),
            TrainedModel::Baseline(_) => None,
        }
    }

    pub fn n_items(&self) -> usize {
        match self {
            TrainedModel::Cross(m) => m.model.n_items,
            TrainedModel::Baseline(Baseline::Random(m)) => m.n_items,
            TrainedModel::Baseline(Baseline::Popular(m)) => m.counts.len(),
            TrainedModel::Baseline(Baseline::Svd(m)) => m.n_items,
            TrainedModel::Baseline(Baseline::Demo(m)) => m.n_items(),
            TrainedModel::Baseline(Baseline::Gru4rec(m)) => m.n_items(),
            TrainedModel::Baseline(Baseline::Sknn(m)) => m.n_items,
        }
    }
}

impl Recommender for TrainedModel {
    fn name(&self) -> String {
        match self {
            TrainedModel::Cross(m) => m.name(),
            TrainedModel::Baseline(m) => m.name(),
        }
    }

    fn score(&self, case: &Case) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Cross(m) => m.score(case),
            TrainedModel::Baseline(m) => m.score(case),
        }
    }

    fn prefix_scores(&self, case: &Case) -> Result<Vec<Vec<f64>>> {
        match self {
            TrainedModel::Cross(m) => m.prefix_scores(case),
            TrainedModel::Baseline(m) => m.prefix_scores(case),
        }
    }
}

/// Trains `spec` with every random choice derived from `seed`.
pub fn train_model(
    spec: &ModelSpec,
    prepared: &Prepared,
    cases: &CaseSplit,
    autoencoder: &TrainConfig,
    seed: u64,
) -> Result<(TrainedModel, TrainingSummary)> {
    match spec {
        ModelSpec::Cross(c) => {
            let config = ModelConfig { train: TrainConfig { seed, ..c.train.clone() }, ..c.clone() };
            let (m, s) = train_cross_model(prepared, cases, &config, autoencoder)?;
            Ok((TrainedModel::Cross(m), s))
        }
        ModelSpec::Baseline { kind, config } => {
            let m = train_baseline(*kind, config, &prepared.dataset, &cases.train, &cases.validation, seed)?;
            Ok((TrainedModel::Baseline(m), TrainingSummary::default()))
        }
    }
}

/// Everything that determines one train-and-evaluate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Experiment {
    pub prep: PrepConfig,
    pub model: ModelSpec,
    pub autoencoder: TrainConfig,
    pub seed: u64,
    pub k: usize,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            prep: PrepConfig::default(),
            model: ModelSpec::default(),
            autoencoder: TrainConfig { hidden_units: 64, ..Default::default() },
            seed: 42,
            k: crate::eval::DEFAULT_K,
        }
    }
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        self.prep.validate()?;
        self.autoencoder.validate()?;
        self.model.validate()
    }
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub prepared: Prepared,
    pub cases: CaseSplit,
    pub model: TrainedModel,
    pub summary: TrainingSummary,
    pub report: EvalReport,
}

/// Prepares `dataset`, trains the model and evaluates it on the test split.
pub fn run_experiment(exp: &Experiment, dataset: &Dataset) -> Result<RunOutcome> {
    exp.validate()?;
    let prepared = prepare(dataset, &exp.prep)?;
    run_prepared(exp, prepared)
}

pub fn run_prepared(exp: &Experiment, prepared: Prepared) -> Result<RunOutcome> {
    let cases = CaseSplit::new(&prepared)?;
    let (model, summary) = train_model(&exp.model, &prepared, &cases, &exp.autoencoder, exp.seed)?;
    let mut report = evaluate(&model, &cases.test, &prepared.dataset.catalog, exp.k)?;
    report.dataset_hash = prepared.dataset.source_hash.clone();
    report.seed = exp.seed;
    Ok(RunOutcome { prepared, cases, model, summary, report })
}
