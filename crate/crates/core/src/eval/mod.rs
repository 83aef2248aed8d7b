//! Offline evaluation: post filtering, top-k metrics, per-user reports,
//! per-step curves and group breakdowns.

mod groups;
mod metrics;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{eligibility_mask, Catalog, PurchaseEvent, UserId};
use crate::error::{Error, Result};
use crate::segmentation::Task;

pub use groups::{group_breakdown, GroupAttribute, GroupRow, GroupTable};
pub use metrics::{apply_post_filter, metrics_at_k, rank, Metrics};

pub const DEFAULT_K: usize = 3;

/// Everything a recommender may look at for one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub task: Task,
    /// Owned count per item: profile holdings plus purchases before the task's purchase.
    pub portfolio: Vec<u32>,
    /// Demographics followed by the portfolio, unscaled; `None` without a profile.
    pub features: Option<Vec<f64>>,
    /// The user's purchases before the task's purchase.
    pub history: Vec<PurchaseEvent>,
}

impl Case {
    /// The same case restricted to the first `n` sessions of the task.
    pub fn with_sessions(&self, n: usize) -> Case {
        let mut c = self.clone();
        c.task.sessions.truncate(n);
        c
    }

    pub fn user(&self) -> &str {
        &self.task.user
    }
}

pub trait Recommender: Sync {
    fn name(&self) -> String;

    /// One score per catalog item; higher is better.
    fn score(&self, case: &Case) -> Result<Vec<f64>>;

    /// Scores from the first `j` sessions for `j = 1..=sessions`.
    fn prefix_scores(&self, case: &Case) -> Result<Vec<Vec<f64>>> {
        (1..=case.task.sessions.len()).map(|j| self.score(&case.with_sessions(j))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserResult {
    pub user: UserId,
    pub purchase_time: i64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub k: usize,
    pub means: Metrics,
    pub per_user: Vec<UserResult>,
    #[serde(default)]
    pub dataset_hash: String,
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub seed: u64,
}

impl EvalReport {
    pub fn users(&self) -> usize {
        self.per_user.len()
    }

    /// `metric,cutoff,model,group,value` rows for the means.
    pub fn csv_rows(&self, group: &str) -> Vec<[String; 5]> {
        Metrics::NAMES
            .iter()
            .zip(self.means.values())
            .map(|(name, v)| {
                [name.to_string(), self.k.to_string(), self.model.clone(), group.to_string(), v.to_string()]
            })
            .collect()
    }
}

/// Writes `metric,cutoff,model,group,value` rows.
pub fn write_csv(path: &Path, rows: &[[String; 5]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv { path: path.into(), source })?;
    let err = |source| Error::Csv { path: path.into(), source };
    w.write_record(["metric", "cutoff", "model", "group", "value"]).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}

fn purchased(case: &Case) -> &[usize] {
    &case.task.purchase.items
}

/// Scores, filters, ranks and measures one case.
pub fn evaluate_scores(scores: &[f64], case: &Case, catalog: &Catalog, k: usize) -> Result<Metrics> {
    if scores.len() != catalog.len() {
        return Err(Error::Shape(format!("{} scores for {} items", scores.len(), catalog.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NumericOverflow("item scores".into()));
    }
    let filtered = apply_post_filter(scores, &eligibility_mask(&case.portfolio, catalog))?;
    metrics_at_k(&rank(&filtered), purchased(case), k)
}

/// Evaluates `model` on every case. Cases are scored in parallel and
/// aggregated in input order.
pub fn evaluate(model: &dyn Recommender, cases: &[Case], catalog: &Catalog, k: usize) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let per_user: Vec<UserResult> = cases
        .par_iter()
        .map(|c| {
            let scores = model.score(c)?;
            Ok(UserResult {
                user: c.task.user.clone(),
                purchase_time: c.task.purchase.time,
                metrics: evaluate_scores(&scores, c, catalog, k)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        model: model.name(),
        k,
        means: Metrics::mean(per_user.iter().map(|u| &u.metrics)),
        per_user,
        dataset_hash: String::new(),
        config_hash: String::new(),
        seed: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPoint {
    /// Number of sessions used, from 1.
    pub step: usize,
    pub users: usize,
    pub means: Metrics,
}

/// Metrics using only the first `j` sessions, over the tasks that have at
/// least `j` sessions.
pub fn per_step_curve(model: &dyn Recommender, cases: &[Case], catalog: &Catalog, k: usize) -> Result<Vec<StepPoint>> {
    let per_case: Vec<Vec<Metrics>> = cases
        .par_iter()
        .map(|c| model.prefix_scores(c)?.iter().map(|s| evaluate_scores(s, c, catalog, k)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let steps = per_case.iter().map(Vec::len).max().unwrap_or(0);
    Ok((0..steps)
        .map(|j| {
            let at: Vec<&Metrics> = per_case.iter().filter_map(|m| m.get(j)).collect();
            StepPoint { step: j + 1, users: at.len(), means: Metrics::mean(at) }
        })
        .collect())
}
