use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run_experiment, run_prepared, Experiment};
use crate::dataio::{object_class, Action, Dataset, ObjectClass};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, Metrics};
use crate::prep::{prepare, PrepConfig, Prepared};
use crate::segmentation::Task;

/// Permutes the sessions inside every task of the split. Tasks are visited
/// in train, validation, test order with one generator.
pub fn shuffle_sessions(prepared: &Prepared, rng: &mut ChaCha8Rng) -> Prepared {
    let mut out = prepared.clone();
    let split = &mut out.split;
    for t in split.train.iter_mut().chain(split.validation.iter_mut()).chain(split.test.iter_mut()) {
        t.sessions.shuffle(rng);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleStudy {
    pub model: String,
    pub original: EvalReport,
    pub trials: Vec<EvalReport>,
    /// Mean over trials of the shuffled-order metrics.
    pub shuffled: Metrics,
    /// `shuffled.hr - original.hr`
    pub delta_hr: f64,
}

/// Retrains on session-shuffled tasks `trials` times and compares with the
/// original order. Trial `t` shuffles with seed `exp.seed + 1 + t`; the model
/// seed is the same in every run.
pub fn shuffle_study(exp: &Experiment, dataset: &Dataset, trials: usize) -> Result<ShuffleStudy> {
    if trials == 0 {
        return Err(Error::InvalidArgument("shuffle study needs at least one trial".into()));
    }
    exp.validate()?;
    let prepared = prepare(dataset, &exp.prep)?;
    let original = run_prepared(exp, prepared.clone())?.report;
    let mut reports = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(exp.seed.wrapping_add(1 + t as u64));
        let shuffled = shuffle_sessions(&prepared, &mut rng);
        let r = run_prepared(exp, shuffled)?.report;
        log::info!("shuffle trial {}: hr {:.4}", t + 1, r.means.hr);
        reports.push(r);
    }
    let shuffled = Metrics::mean(reports.iter().map(|r| &r.means));
    Ok(ShuffleStudy {
        model: original.model.clone(),
        delta_hr: shuffled.hr - original.means.hr,
        original,
        trials: reports,
        shuffled,
    })
}

/// A group of actions removed together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Facet {
    Section(String),
    ObjectItems,
    ObjectServices,
    Type(String),
}

impl std::str::FromStr for Facet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("section", name)) if !name.is_empty() => Ok(Facet::Section(name.into())),
            Some(("object", "items")) => Ok(Facet::ObjectItems),
            Some(("object", "services")) => Ok(Facet::ObjectServices),
            Some(("type", name)) if !name.is_empty() => Ok(Facet::Type(name.into())),
            _ => Err(Error::InvalidArgument(format!(
                "unknown facet `{s}`; expected section:<name>, object:items, object:services or type:<name>"
            ))),
        }
    }
}

impl std::fmt::Display for Facet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Facet::Section(n) => write!(f, "section:{n}"),
            Facet::ObjectItems => f.write_str("object:items"),
            Facet::ObjectServices => f.write_str("object:services"),
            Facet::Type(n) => write!(f, "type:{n}"),
        }
    }
}

impl Facet {
    fn matches(&self, a: &Action, d: &Dataset) -> bool {
        let v = &d.vocab;
        match self {
            Facet::Section(n) => v.sections[a.section as usize] == *n,
            Facet::Type(n) => v.types[a.act_type as usize] == *n,
            Facet::ObjectItems => object_class(&v.objects[a.object as usize]) == ObjectClass::Item,
            Facet::ObjectServices => object_class(&v.objects[a.object as usize]) == ObjectClass::Service,
        }
    }
}

/// The dataset without the actions of `facet`; sessions may become empty.
pub fn remove_facet(dataset: &Dataset, facet: &Facet) -> Result<Dataset> {
    let mut out = dataset.clone();
    let mut kept = 0usize;
    for u in &mut out.users {
        for s in &mut u.sessions {
            s.actions.retain(|a| !facet.matches(a, dataset));
            kept += s.actions.len();
        }
    }
    if kept == 0 {
        return Err(Error::EmptyInput("every action removed by the facet"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub facet: String,
    pub report: EvalReport,
    /// `(ablated - all) / all` per metric; 0 where the reference is 0.
    pub relative_change: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationStudy {
    pub model: String,
    pub all_actions: EvalReport,
    pub rows: Vec<AblationRow>,
}

fn relative(new: &Metrics, base: &Metrics) -> Metrics {
    let r = |n: f64, b: f64| if b == 0.0 { 0.0 } else { (n - b) / b };
    Metrics {
        hr: r(new.hr, base.hr),
        precision: r(new.precision, base.precision),
        recall: r(new.recall, base.recall),
        mrr: r(new.mrr, base.mrr),
        ap: r(new.ap, base.ap),
    }
}

/// Retrains without each facet's actions and compares with all actions.
pub fn ablate_actions(exp: &Experiment, dataset: &Dataset, facets: &[Facet]) -> Result<AblationStudy> {
    let all_actions = run_experiment(exp, dataset)?.report;
    let rows = facets
        .iter()
        .map(|f| {
            let report = run_experiment(exp, &remove_facet(dataset, f)?)?.report;
            log::info!("without {f}: hr {:.4}", report.means.hr);
            Ok(AblationRow {
                facet: f.to_string(),
                relative_change: relative(&report.means, &all_actions.means),
                report,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationStudy { model: all_actions.model.clone(), all_actions, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold_days: f64,
    pub tasks: usize,
    pub mean_sessions: f64,
    pub report: EvalReport,
}

fn mean_sessions(tasks: &[&Task]) -> f64 {
    if tasks.is_empty() {
        return 0.0;
    }
    tasks.iter().map(|t| t.sessions.len()).sum::<usize>() as f64 / tasks.len() as f64
}

/// Re-segments, retrains and evaluates at each task threshold.
pub fn threshold_sweep(exp: &Experiment, dataset: &Dataset, thresholds_days: &[f64]) -> Result<Vec<SweepPoint>> {
    thresholds_days
        .iter()
        .map(|&d| {
            if !(d > 0.0) {
                return Err(Error::InvalidArgument(format!("threshold {d} days is not positive")));
            }
            let e = Experiment { prep: PrepConfig { threshold_days: d, ..exp.prep.clone() }, ..exp.clone() };
            let out = run_experiment(&e, dataset)?;
            let s = &out.prepared.split;
            let all: Vec<&Task> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
            log::info!("threshold {d} days: hr {:.4}", out.report.means.hr);
            Ok(SweepPoint {
                threshold_days: d,
                tasks: all.len(),
                mean_sessions: mean_sessions(&all),
                report: out.report,
            })
        })
        .collect()
}
