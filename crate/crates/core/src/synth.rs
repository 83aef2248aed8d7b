//! Synthetic clickstreams with a planted view-before-purchase rule.
//!
//! Every user has a preferred item. A task is "signalled" with probability
//! `rho`: its sessions then contain e-commerce actions on the preferred item
//! and its purchase is that item. Other tasks buy an item drawn from the
//! popularity distribution and view random items instead.

use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Geometric, LogNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{
    write_dataset, Action, ActionVocabulary, Catalog, Dataset, DatasetPaths, IngestReport, PurchaseEvent, Session,
    UserProfile, UserRecord, ITEM_PREFIX, NO_OBJECT, SECONDS_PER_DAY,
};
use crate::error::{Error, Result};

pub const SECTIONS: [&str; 6] = ["e-commerce", "account", "claims", "insurance-info", "news", "support"];
pub const TYPES: [&str; 4] = ["start", "act", "complete", "click"];
const START_EPOCH: i64 = 1_609_459_200;
const ECOMMERCE: u32 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Items without a base product; the rest are coverages of the first ones.
    pub n_base_items: usize,
    pub n_service_objects: usize,
    pub mean_sessions: f64,
    pub max_sessions: usize,
    pub mean_session_len: f64,
    pub min_session_len: usize,
    pub max_session_len: usize,
    /// Probability that a task carries the planted signal.
    pub rho: f64,
    /// Probability that a user's demographics encode the preferred item.
    pub demographic_strength: f64,
    /// Put the signal in the final session only; earlier sessions view distractors.
    pub last_session_signal: bool,
    /// Probability that a user has a second task.
    pub second_task_prob: f64,
    /// Log-space mean and spread of gaps between sessions of one task (seconds).
    pub within_gap: (f64, f64),
    /// Log-space mean and spread of gaps between tasks (seconds).
    pub between_gap: (f64, f64),
    /// Probability of owning each base item before the log starts.
    pub base_ownership: f64,
    pub with_gender: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 5000,
            n_items: 16,
            n_base_items: 10,
            n_service_objects: 12,
            mean_sessions: 2.18,
            max_sessions: 7,
            mean_session_len: 10.72,
            min_session_len: 3,
            max_session_len: 30,
            rho: 0.9,
            demographic_strength: 0.5,
            last_session_signal: false,
            second_task_prob: 0.25,
            within_gap: ((3600f64).ln(), 1.0),
            between_gap: ((30.0 * SECONDS_PER_DAY as f64).ln(), 0.5),
            base_ownership: 0.3,
            with_gender: true,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if self.n_users == 0 {
            return Err(Error::config("n_users", "must be positive"));
        }
        if self.n_base_items == 0 || self.n_base_items > self.n_items {
            return Err(Error::config("n_base_items", "must lie in 1..=n_items"));
        }
        if self.n_items - self.n_base_items > self.n_base_items {
            return Err(Error::config("n_items", "at most one coverage per base item"));
        }
        if self.n_service_objects == 0 {
            return Err(Error::config("n_service_objects", "must be positive"));
        }
        if self.max_sessions == 0 || !(self.mean_sessions >= 1.0 && self.mean_sessions < self.max_sessions as f64) {
            return Err(Error::config("mean_sessions", "must lie in [1, max_sessions)"));
        }
        if self.min_session_len == 0 || self.max_session_len <= self.min_session_len {
            return Err(Error::config("max_session_len", "must exceed a positive min_session_len"));
        }
        let (lo, hi) = (self.min_session_len as f64, self.max_session_len as f64);
        if !(self.mean_session_len >= lo && self.mean_session_len < hi) {
            return Err(Error::config("mean_session_len", "must lie in [min_session_len, max_session_len)"));
        }
        for (name, v) in [
            ("rho", self.rho),
            ("demographic_strength", self.demographic_strength),
            ("second_task_prob", self.second_task_prob),
            ("base_ownership", self.base_ownership),
        ] {
            if !prob(v) {
                return Err(Error::config(name, "must lie in [0, 1]"));
            }
        }
        for (name, (m, s)) in [("within_gap", self.within_gap), ("between_gap", self.between_gap)] {
            if !(m.is_finite() && s > 0.0) {
                return Err(Error::config(name, "needs a finite mean and positive spread"));
            }
        }
        Ok(())
    }
}

/// Success probability `p` such that `lo + min(G, hi - lo)` has mean `target`,
/// where `G` counts failures before the first success.
pub fn capped_geometric_p(target: f64, lo: usize, hi: usize) -> Result<f64> {
    let cap = (hi - lo) as i32;
    let want = target - lo as f64;
    if !(want >= 0.0 && want < cap as f64) {
        return Err(Error::InvalidArgument(format!("mean {target} outside [{lo}, {hi})")));
    }
    if want == 0.0 {
        return Ok(1.0);
    }
    // E[min(G, c)] = Σ_{j=1..c} (1-p)^j, decreasing in p
    let mean = |p: f64| (1..=cap).map(|j| (1.0 - p).powi(j)).sum::<f64>();
    let (mut a, mut b) = (1e-9, 1.0);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if mean(m) > want {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

struct Sampler {
    sessions: Geometric,
    length: Geometric,
    within: LogNormal<f64>,
    between: LogNormal<f64>,
    popularity: WeightedIndex<f64>,
}

fn catalog(cfg: &SynthConfig) -> Result<Catalog> {
    let base: Vec<String> = (1..=cfg.n_base_items).map(|i| format!("b{i:02}")).collect();
    let n_cov = cfg.n_items - cfg.n_base_items;
    let items = base.iter().cloned().chain((1..=n_cov).map(|i| format!("c{i:02}"))).collect();
    let coverage_of = (0..cfg.n_base_items).map(|_| None).chain((0..n_cov).map(Some)).collect();
    Catalog::new(items, coverage_of)
}

fn vocabulary(cfg: &SynthConfig, catalog: &Catalog) -> ActionVocabulary {
    let objects = std::iter::once(NO_OBJECT.to_string())
        .chain(catalog.items.iter().map(|i| format!("{ITEM_PREFIX}{i}")))
        .chain((1..=cfg.n_service_objects).map(|i| format!("svc-{i:02}")))
        .collect();
    ActionVocabulary {
        sections: SECTIONS.iter().map(|s| s.to_string()).collect(),
        objects,
        types: TYPES.iter().map(|s| s.to_string()).collect(),
    }
}

/// Object code of catalog item `k`.
fn item_object(k: usize) -> u32 {
    1 + k as u32
}

struct Gen<'a> {
    cfg: &'a SynthConfig,
    catalog: &'a Catalog,
    sampler: Sampler,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn eligible(&self, portfolio: &[u32]) -> Vec<usize> {
        (0..self.catalog.len()).filter(|&k| self.catalog.coverage_of[k].is_none_or(|b| portfolio[b] > 0)).collect()
    }

    /// Popularity-weighted draw among `eligible`.
    fn popular_item(&mut self, eligible: &[usize]) -> usize {
        loop {
            let k = self.sampler.popularity.sample(&mut self.rng);
            if eligible.contains(&k) {
                return k;
            }
        }
    }

    fn background_action(&mut self) -> (u32, u32, u32) {
        let section = self.rng.gen_range(0..SECTIONS.len() as u32);
        let object = if self.rng.gen_bool(0.3) {
            0
        } else {
            1 + self.catalog.len() as u32 + self.rng.gen_range(0..self.cfg.n_service_objects as u32)
        };
        let act_type = self.rng.gen_range(0..TYPES.len() as u32);
        (section, object, act_type)
    }

    /// Codes of one session. `focus` items get e-commerce actions; one random
    /// item is viewed outside e-commerce with some probability.
    fn session_codes(&mut self, focus: Option<usize>) -> Vec<(u32, u32, u32)> {
        let extra = self.sampler.length.sample(&mut self.rng) as usize;
        let len = self.cfg.min_session_len + extra.min(self.cfg.max_session_len - self.cfg.min_session_len);
        let mut codes: Vec<(u32, u32, u32)> = (0..len).map(|_| self.background_action()).collect();
        if let Some(k) = focus {
            let n = self.rng.gen_range(1..=3.min(len));
            for _ in 0..n {
                let at = self.rng.gen_range(0..len);
                codes[at] = (ECOMMERCE, item_object(k), self.rng.gen_range(0..3));
            }
        }
        if self.rng.gen_bool(0.3) {
            let at = self.rng.gen_range(0..len);
            let k = self.rng.gen_range(0..self.catalog.len());
            codes[at] = (1 + self.rng.gen_range(0..SECTIONS.len() as u32 - 1), item_object(k), 0);
        }
        // consecutive duplicates would be collapsed by cleaning
        for i in 1..codes.len() {
            while codes[i] == codes[i - 1] {
                codes[i].2 = (codes[i].2 + 1) % TYPES.len() as u32;
                if i + 1 < codes.len() && codes[i] == codes[i + 1] {
                    codes[i].0 = (codes[i].0 + 1) % SECTIONS.len() as u32;
                }
            }
        }
        codes
    }

    fn demographics(&mut self, preferred: usize) -> Vec<f64> {
        let r = &mut self.rng;
        let mut d = vec![
            r.gen_range(18..80) as f64,
            r.gen_range(0..4) as f64,
            r.gen_range(1..=10) as f64,
            r.gen_range(0..5) as f64,
            r.gen_range(0..4) as f64,
            r.gen_range(0..5) as f64,
            r.gen_range(1..=5) as f64,
        ];
        if r.gen_bool(self.cfg.demographic_strength) {
            d[0] = (20 + 4 * preferred as i64 + r.gen_range(0..4)) as f64;
            d[2] = (1 + preferred % 10) as f64;
            d[6] = (1 + preferred % 5) as f64;
        }
        d
    }

    fn user(&mut self, index: usize) -> UserRecord {
        let id = format!("u{index:05}");
        let n = self.catalog.len();
        let mut holdings = vec![0u32; n];
        for (k, h) in holdings.iter_mut().enumerate() {
            if self.catalog.is_base(k) && self.rng.gen_bool(self.cfg.base_ownership) {
                *h = 1;
            }
        }
        let eligible = self.eligible(&holdings);
        let preferred = self.popular_item(&eligible);
        let demographics = self.demographics(preferred);
        let gender = self.cfg.with_gender.then(|| if self.rng.gen_bool(0.5) { "f" } else { "m" }.to_string());
        let profile = UserProfile { demographics, portfolio: holdings.clone(), gender };

        let tasks = if self.rng.gen_bool(self.cfg.second_task_prob) { 2 } else { 1 };
        let mut t = START_EPOCH + self.rng.gen_range(0..300 * SECONDS_PER_DAY);
        let mut sessions = Vec::new();
        let mut purchases = Vec::new();
        let mut portfolio = holdings;
        for task in 0..tasks {
            if task > 0 {
                t += self.sampler.between.sample(&mut self.rng) as i64;
            }
            let signalled = self.rng.gen_bool(self.cfg.rho);
            let eligible = self.eligible(&portfolio);
            let bought =
                if signalled && eligible.contains(&preferred) { preferred } else { self.popular_item(&eligible) };
            let count = 1 + (self.sampler.sessions.sample(&mut self.rng) as usize).min(self.cfg.max_sessions - 1);
            let mut focus: Vec<Option<usize>> = if !signalled {
                (0..count).map(|_| self.rng.gen_bool(0.5).then(|| self.rng.gen_range(0..n))).collect()
            } else if self.cfg.last_session_signal {
                (0..count).map(|j| if j + 1 == count { Some(bought) } else { Some(self.rng.gen_range(0..n)) }).collect()
            } else {
                (0..count).map(|_| self.rng.gen_bool(0.8).then_some(bought)).collect()
            };
            if signalled && !focus.contains(&Some(bought)) {
                let j = self.rng.gen_range(0..count);
                focus[j] = Some(bought);
            }
            for (j, f) in focus.into_iter().enumerate() {
                if j > 0 {
                    t += self.sampler.within.sample(&mut self.rng) as i64;
                }
                let start = t;
                let actions = self
                    .session_codes(f)
                    .into_iter()
                    .map(|(section, object, act_type)| {
                        t += self.rng.gen_range(5..120);
                        Action { section, object, act_type, timestamp: t }
                    })
                    .collect::<Vec<_>>();
                sessions.push(Session {
                    id: format!("s{}", sessions.len() + 1),
                    user: id.clone(),
                    start: actions.first().map_or(start, |a| a.timestamp),
                    actions,
                });
            }
            t += 60 + (self.sampler.within.sample(&mut self.rng) as i64) / 2;
            purchases.push(PurchaseEvent { user: id.clone(), time: t, items: vec![bought] });
            portfolio[bought] += 1;
        }
        UserRecord { id, sessions, purchases, profile: Some(profile) }
    }
}

/// Builds a synthetic dataset in memory.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let catalog = catalog(cfg)?;
    let vocab = vocabulary(cfg, &catalog);
    let weights: Vec<f64> = (0..cfg.n_items).map(|r| 1.0 / (1.0 + r as f64).powf(0.7)).collect();
    let p_sessions = capped_geometric_p(cfg.mean_sessions, 1, cfg.max_sessions)?;
    let p_length = capped_geometric_p(cfg.mean_session_len, cfg.min_session_len, cfg.max_session_len)?;
    let bad = |e: &dyn std::fmt::Display| Error::InvalidArgument(e.to_string());
    let sampler = Sampler {
        sessions: Geometric::new(p_sessions).map_err(|e| bad(&e))?,
        length: Geometric::new(p_length).map_err(|e| bad(&e))?,
        within: LogNormal::new(cfg.within_gap.0, cfg.within_gap.1).map_err(|e| bad(&e))?,
        between: LogNormal::new(cfg.between_gap.0, cfg.between_gap.1).map_err(|e| bad(&e))?,
        popularity: WeightedIndex::new(&weights).map_err(|e| bad(&e))?,
    };
    let mut gen = Gen { cfg, catalog: &catalog, sampler, rng: ChaCha8Rng::seed_from_u64(cfg.seed) };
    let users = (1..=cfg.n_users).map(|i| gen.user(i)).collect();
    let mut dataset = Dataset {
        users,
        catalog,
        vocab,
        object_items: Vec::new(),
        report: IngestReport::default(),
        source_hash: String::new(),
    };
    dataset.link_objects();
    Ok(dataset)
}

/// Generates and writes the four input files into `dir`.
pub fn write_synth(cfg: &SynthConfig, dir: &Path) -> Result<DatasetPaths> {
    let dataset = generate(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths::in_dir(dir);
    write_dataset(&dataset, &paths)?;
    Ok(paths)
}
