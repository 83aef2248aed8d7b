//! Cleaning and splitting: rare-category and duplicate removal, session
//! length bounds, task recency caps and the temporal train/validation/test
//! split.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dataio::{ActionVocabulary, Dataset, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::segmentation::{segment_tasks, Task};

/// Fewest tasks a temporal split accepts.
pub const MIN_SPLIT_TASKS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub min_category_freq: f64,
    pub min_session_len: usize,
    pub max_session_len: usize,
    pub max_sessions: usize,
    pub threshold_days: f64,
    pub test_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            min_category_freq: 0.001,
            min_session_len: 3,
            max_session_len: 30,
            max_sessions: 7,
            threshold_days: 10.0,
            test_fraction: 0.10,
            validation_fraction: 0.10,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        let fraction = |v: f64| v > 0.0 && v < 1.0;
        if !(0.0..1.0).contains(&self.min_category_freq) {
            return Err(Error::config("min_category_freq", "must lie in [0, 1)"));
        }
        if self.min_session_len == 0 {
            return Err(Error::config("min_session_len", "must be positive"));
        }
        if self.max_session_len < self.min_session_len {
            return Err(Error::config("max_session_len", "must be at least min_session_len"));
        }
        if self.max_sessions == 0 {
            return Err(Error::config("max_sessions", "must be positive"));
        }
        if !(self.threshold_days > 0.0) || !self.threshold_days.is_finite() {
            return Err(Error::config("threshold_days", "must be positive"));
        }
        if !fraction(self.test_fraction) {
            return Err(Error::config("test_fraction", "must lie in (0, 1)"));
        }
        if !fraction(self.validation_fraction) {
            return Err(Error::config("validation_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn threshold_seconds(&self) -> f64 {
        self.threshold_days * SECONDS_PER_DAY as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanCounts {
    pub rare_actions_removed: usize,
    pub duplicates_collapsed: usize,
    pub categories_removed: usize,
}

fn keep_frequent(names: &[String], counts: &[usize], total: usize, min_freq: f64) -> (Vec<String>, Vec<Option<u32>>) {
    let mut kept = Vec::new();
    let mut remap = Vec::with_capacity(names.len());
    for (name, &c) in names.iter().zip(counts) {
        if total > 0 && (c as f64 / total as f64) >= min_freq && c > 0 {
            remap.push(Some(kept.len() as u32));
            kept.push(name.clone());
        } else {
            remap.push(None);
        }
    }
    (kept, remap)
}

/// Drops every action whose section, object or type has relative frequency
/// below `min_category_freq` (measured once, before removal), removes those
/// categories from the vocabulary, then collapses consecutive repeats of the
/// same (section, object, type) triple.
pub fn clean_actions(dataset: &Dataset, cfg: &PrepConfig) -> (Dataset, CleanCounts) {
    let v = &dataset.vocab;
    let mut counts = [vec![0usize; v.sections.len()], vec![0usize; v.objects.len()], vec![0usize; v.types.len()]];
    let mut total = 0;
    for a in dataset.users.iter().flat_map(|u| &u.sessions).flat_map(|s| &s.actions) {
        counts[0][a.section as usize] += 1;
        counts[1][a.object as usize] += 1;
        counts[2][a.act_type as usize] += 1;
        total += 1;
    }
    let (sections, rs) = keep_frequent(&v.sections, &counts[0], total, cfg.min_category_freq);
    let (objects, ro) = keep_frequent(&v.objects, &counts[1], total, cfg.min_category_freq);
    let (types, rt) = keep_frequent(&v.types, &counts[2], total, cfg.min_category_freq);
    let mut tally = CleanCounts {
        categories_removed: v.width() - sections.len() - objects.len() - types.len(),
        ..Default::default()
    };

    let mut out = dataset.clone();
    out.vocab = ActionVocabulary { sections, objects, types };
    for u in &mut out.users {
        for s in &mut u.sessions {
            let before = s.actions.len();
            let mut kept = Vec::with_capacity(before);
            for a in &s.actions {
                if let (Some(sec), Some(obj), Some(typ)) =
                    (rs[a.section as usize], ro[a.object as usize], rt[a.act_type as usize])
                {
                    kept.push(crate::dataio::Action {
                        section: sec,
                        object: obj,
                        act_type: typ,
                        timestamp: a.timestamp,
                    });
                }
            }
            tally.rare_actions_removed += before - kept.len();
            let n = kept.len();
            kept.dedup_by(|b, a| a.same_kind(b));
            tally.duplicates_collapsed += n - kept.len();
            s.actions = kept;
        }
    }
    out.link_objects();
    (out, tally)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundCounts {
    pub sessions_dropped: usize,
    pub sessions_truncated: usize,
}

/// Drops sessions shorter than `min_session_len` and keeps the first
/// `max_session_len` actions of longer ones.
pub fn bound_sessions(dataset: &Dataset, cfg: &PrepConfig) -> (Dataset, BoundCounts) {
    let mut out = dataset.clone();
    let mut tally = BoundCounts::default();
    for u in &mut out.users {
        let before = u.sessions.len();
        u.sessions.retain(|s| s.actions.len() >= cfg.min_session_len);
        tally.sessions_dropped += before - u.sessions.len();
        for s in &mut u.sessions {
            if s.actions.len() > cfg.max_session_len {
                s.actions.truncate(cfg.max_session_len);
                tally.sessions_truncated += 1;
            }
        }
    }
    (out, tally)
}

/// Keeps the most recent run of sessions whose consecutive gaps are within
/// the threshold, at most `max_sessions` of them.
pub fn cap_recency(task: &Task, cfg: &PrepConfig) -> Task {
    let limit = cfg.threshold_seconds();
    let ss = &task.sessions;
    let mut first = ss.len().saturating_sub(1);
    while first > 0 && (ss[first].start - ss[first - 1].start) as f64 <= limit {
        first -= 1;
    }
    let first = first.max(ss.len().saturating_sub(cfg.max_sessions));
    Task { user: task.user.clone(), sessions: ss[first..].to_vec(), purchase: task.purchase.clone() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<Task>,
    pub validation: Vec<Task>,
    pub test: Vec<Task>,
    /// Purchase time of the first validation task; censoring point for training labels.
    pub train_end: i64,
    /// Purchase time of the first test task.
    pub validation_end: i64,
    pub train_leaks_removed: usize,
    pub validation_leaks_removed: usize,
}

fn session_keys(tasks: &[Task]) -> HashSet<(&str, &str)> {
    tasks.iter().flat_map(|t| t.sessions.iter().map(|s| (s.user.as_str(), s.id.as_str()))).collect()
}

fn shares_session(task: &Task, keys: &HashSet<(&str, &str)>) -> bool {
    task.sessions.iter().any(|s| keys.contains(&(s.user.as_str(), s.id.as_str())))
}

fn held_out(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).ceil() as usize).clamp(1, n.saturating_sub(1))
}

/// Orders tasks by purchase time (ties by user id), holds out the latest
/// `test_fraction` for testing and the latest `validation_fraction` of the
/// remainder for validation, then removes earlier tasks that share a session
/// with a later split.
pub fn temporal_split(tasks: &[Task], cfg: &PrepConfig) -> Result<Split> {
    if tasks.len() < MIN_SPLIT_TASKS {
        return Err(Error::SplitTooSmall(tasks.len()));
    }
    let mut sorted = tasks.to_vec();
    sorted.sort_by(|a, b| a.purchase.time.cmp(&b.purchase.time).then_with(|| a.user.cmp(&b.user)));
    let n_test = held_out(sorted.len(), cfg.test_fraction);
    let test = sorted.split_off(sorted.len() - n_test);
    let n_val = held_out(sorted.len(), cfg.validation_fraction);
    let validation = sorted.split_off(sorted.len() - n_val);
    let train = sorted;

    let test_keys = session_keys(&test);
    let before = validation.len();
    let validation: Vec<Task> = validation.into_iter().filter(|t| !shares_session(t, &test_keys)).collect();
    let validation_leaks_removed = before - validation.len();
    let val_keys = session_keys(&validation);
    let before = train.len();
    let train: Vec<Task> =
        train.into_iter().filter(|t| !shares_session(t, &test_keys) && !shares_session(t, &val_keys)).collect();
    let train_leaks_removed = before - train.len();
    if train.is_empty() || validation.is_empty() {
        return Err(Error::SplitTooSmall(tasks.len()));
    }
    Ok(Split {
        train_end: validation[0].purchase.time,
        validation_end: test[0].purchase.time,
        train,
        validation,
        test,
        train_leaks_removed,
        validation_leaks_removed,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub clean: CleanCounts,
    pub bound: BoundCounts,
    pub purchases_without_sessions: usize,
    pub sessions_capped: usize,
    pub tasks: usize,
    pub train_tasks: usize,
    pub validation_tasks: usize,
    pub test_tasks: usize,
    pub train_leaks_removed: usize,
    pub validation_leaks_removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prepared {
    pub dataset: Dataset,
    pub split: Split,
    pub report: PrepReport,
}

/// Cleans and bounds the dataset without segmenting it.
pub fn clean_dataset(dataset: &Dataset, cfg: &PrepConfig) -> (Dataset, CleanCounts, BoundCounts) {
    let (cleaned, clean) = clean_actions(dataset, cfg);
    let (bounded, bound) = bound_sessions(&cleaned, cfg);
    (bounded, clean, bound)
}

/// Segments every user's sessions into recency-capped tasks.
pub fn build_tasks(dataset: &Dataset, cfg: &PrepConfig) -> (Vec<Task>, usize, usize) {
    let mut tasks = Vec::new();
    let mut dropped = 0;
    let mut capped = 0;
    for u in &dataset.users {
        let seg = segment_tasks(&u.sessions, &u.purchases, cfg.threshold_seconds());
        dropped += seg.dropped_purchases;
        for t in seg.tasks {
            let c = cap_recency(&t, cfg);
            capped += t.sessions.len() - c.sessions.len();
            tasks.push(c);
        }
    }
    (tasks, dropped, capped)
}

/// The full pipeline from an ingested dataset to a temporal split.
pub fn prepare(dataset: &Dataset, cfg: &PrepConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (dataset, clean, bound) = clean_dataset(dataset, cfg);
    let (tasks, dropped, capped) = build_tasks(&dataset, cfg);
    let split = temporal_split(&tasks, cfg)?;
    let report = PrepReport {
        clean,
        bound,
        purchases_without_sessions: dropped,
        sessions_capped: capped,
        tasks: tasks.len(),
        train_tasks: split.train.len(),
        validation_tasks: split.validation.len(),
        test_tasks: split.test.len(),
        train_leaks_removed: split.train_leaks_removed,
        validation_leaks_removed: split.validation_leaks_removed,
    };
    log::info!(
        "prepared {} tasks: {} train, {} validation, {} test",
        report.tasks,
        report.train_tasks,
        report.validation_tasks,
        report.test_tasks
    );
    Ok(Prepared { dataset, split, report })
}
