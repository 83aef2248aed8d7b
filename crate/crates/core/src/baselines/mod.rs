//! Reference recommenders: random, popular, SVD, a demographic classifier,
//! next-action GRUs and session-kNN.

mod demo;
mod gru4rec;
mod sknn;
mod static_rank;
mod svd;

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::eval::{Case, Recommender};
use crate::numcore::TrainConfig;

pub use demo::{DemoExample, DemoModel};
pub use gru4rec::Gru4Rec;
pub use sknn::{cosine, sknn_recommend, BoostForm, NeighborIndex, Sknn};
pub use static_rank::{purchase_counts, static_rank, Popular, RandomRank, StaticMode};
pub use svd::{reconstruct_row, svd_recommend, truncated_basis, SvdModel, UserItemMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Random,
    Popular,
    Svd,
    Demo,
    Gru4rec,
    Gru4recConcat,
    Sknn,
    SknnB,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 8] = [
        BaselineKind::Random,
        BaselineKind::Popular,
        BaselineKind::Svd,
        BaselineKind::Demo,
        BaselineKind::Gru4rec,
        BaselineKind::Gru4recConcat,
        BaselineKind::Sknn,
        BaselineKind::SknnB,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::Popular => "popular",
            BaselineKind::Svd => "svd",
            BaselineKind::Demo => "demo",
            BaselineKind::Gru4rec => "gru4rec",
            BaselineKind::Gru4recConcat => "gru4rec-concat",
            BaselineKind::Sknn => "sknn",
            BaselineKind::SknnB => "sknn-b",
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown baseline `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub svd_factors: usize,
    pub sknn_neighbors: usize,
    pub sknn_boost: f64,
    pub boost_form: BoostForm,
    pub demo: TrainConfig,
    pub gru4rec: TrainConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            svd_factors: 1,
            sknn_neighbors: 30,
            sknn_boost: 0.5,
            boost_form: BoostForm::Multiplicative,
            demo: TrainConfig { hidden_units: 32, dropout_rate: 0.3, batch_size: 32, ..Default::default() },
            gru4rec: TrainConfig::default(),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.svd_factors == 0 {
            return Err(Error::config("svd_factors", "must be at least 1"));
        }
        if self.sknn_neighbors == 0 {
            return Err(Error::config("sknn_neighbors", "must be at least 1"));
        }
        if !(self.sknn_boost >= 0.0) {
            return Err(Error::config("sknn_boost", "must be non-negative"));
        }
        self.demo.validate()?;
        self.gru4rec.validate()
    }
}

/// A fitted baseline of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "kebab-case")]
pub enum Baseline {
    Random(RandomRank),
    Popular(Popular),
    Svd(SvdModel),
    Demo(DemoModel),
    Gru4rec(Gru4Rec),
    Sknn(Sknn),
}

impl Baseline {
    fn inner(&self) -> &dyn Recommender {
        match self {
            Baseline::Random(m) => m,
            Baseline::Popular(m) => m,
            Baseline::Svd(m) => m,
            Baseline::Demo(m) => m,
            Baseline::Gru4rec(m) => m,
            Baseline::Sknn(m) => m,
        }
    }
}

impl Recommender for Baseline {
    fn name(&self) -> String {
        self.inner().name()
    }

    fn score(&self, case: &Case) -> Result<Vec<f64>> {
        self.inner().score(case)
    }
}

/// Fits a baseline on training cases; neural baselines stop early on `valid`.
pub fn train_baseline(
    kind: BaselineKind,
    cfg: &BaselineConfig,
    dataset: &Dataset,
    train: &[Case],
    valid: &[Case],
    seed: u64,
) -> Result<Baseline> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let n = dataset.n_items();
    let seeded = |c: &TrainConfig| TrainConfig { seed, ..c.clone() };
    Ok(match kind {
        BaselineKind::Random => Baseline::Random(RandomRank { n_items: n, seed }),
        BaselineKind::Popular => Baseline::Popular(Popular::fit(train, n)),
        BaselineKind::Svd => Baseline::Svd(SvdModel::fit(train, n, cfg.svd_factors)?),
        BaselineKind::Demo => Baseline::Demo(DemoModel::fit(train, valid, n, &seeded(&cfg.demo))?.0),
        BaselineKind::Gru4rec | BaselineKind::Gru4recConcat => Baseline::Gru4rec(
            Gru4Rec::fit(
                dataset.vocab.clone(),
                dataset.object_items.clone(),
                n,
                kind == BaselineKind::Gru4recConcat,
                train,
                valid,
                &seeded(&cfg.gru4rec),
            )?
            .0,
        ),
        BaselineKind::Sknn | BaselineKind::SknnB => Baseline::Sknn(Sknn::fit(
            train,
            dataset.vocab.clone(),
            dataset.object_items.clone(),
            n,
            cfg.sknn_neighbors,
            if kind == BaselineKind::SknnB { cfg.sknn_boost } else { 0.0 },
            cfg.boost_form,
        )?),
    })
}
