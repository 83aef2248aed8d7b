//! Domain data model: actions, sessions, purchases, catalog, profiles and the
//! action vocabulary, plus the encodings every model consumes.

mod ingest;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{ingest, parse_timestamp, write_dataset, DatasetPaths, IngestReport};

pub type UserId = String;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Column names of the demographic vector, in order.
pub const DEMOGRAPHIC_FIELDS: [&str; 7] =
    ["age", "employment", "income", "residence", "marital", "children", "education"];

/// Object-vocabulary entry used for actions without an object.
pub const NO_OBJECT: &str = "none";
/// Prefix marking an object that is a catalog item.
pub const ITEM_PREFIX: &str = "item:";

/// One logged action. Categories are codes into an [`ActionVocabulary`];
/// `timestamp` is UTC seconds since the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub section: u32,
    pub object: u32,
    pub act_type: u32,
    pub timestamp: i64,
}

impl Action {
    /// Same (section, object, type) triple, ignoring time.
    pub fn same_kind(&self, other: &Action) -> bool {
        self.section == other.section && self.object == other.object && self.act_type == other.act_type
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub user: UserId,
    pub start: i64,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurchaseEvent {
    pub user: UserId,
    pub time: i64,
    /// Sorted, de-duplicated catalog indices.
    pub items: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub items: Vec<String>,
    /// For coverage items, the index of the base product they extend.
    pub coverage_of: Vec<Option<usize>>,
}

impl Catalog {
    pub fn new(items: Vec<String>, coverage_of: Vec<Option<usize>>) -> Result<Self> {
        if items.len() != coverage_of.len() {
            return Err(Error::InvalidArgument("catalog items and coverage map differ in length".into()));
        }
        for (i, base) in coverage_of.iter().enumerate() {
            if let Some(b) = *base {
                if b >= items.len() {
                    return Err(Error::InvalidArgument(format!("coverage {} refers outside the catalog", items[i])));
                }
                // A base item must itself be a base product; this also rules out cycles.
                if coverage_of[b].is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "coverage {} points at coverage {}",
                        items[i], items[b]
                    )));
                }
            }
        }
        Ok(Catalog { items, coverage_of })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn index_of(&self, item: &str) -> Option<usize> {
        self.items.iter().position(|i| i == item)
    }

    pub fn is_base(&self, k: usize) -> bool {
        self.coverage_of[k].is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    /// Values for [`DEMOGRAPHIC_FIELDS`].
    pub demographics: Vec<f64>,
    /// Owned count per catalog item.
    pub portfolio: Vec<u32>,
    #[serde(default)]
    pub gender: Option<String>,
}

/// Finite category lists for the three action components. Ordered by
/// descending frequency, ties broken by ascending id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionVocabulary {
    pub sections: Vec<String>,
    pub objects: Vec<String>,
    pub types: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectClass {
    Item,
    Service,
    NoObject,
}

pub fn object_class(object: &str) -> ObjectClass {
    if object.is_empty() || object == NO_OBJECT {
        ObjectClass::NoObject
    } else if object.starts_with(ITEM_PREFIX) {
        ObjectClass::Item
    } else {
        ObjectClass::Service
    }
}

impl ActionVocabulary {
    /// Builds each component list from raw occurrences.
    pub fn from_counts<'a>(
        sections: impl IntoIterator<Item = &'a str>,
        objects: impl IntoIterator<Item = &'a str>,
        types: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        ActionVocabulary { sections: ordered(sections), objects: ordered(objects), types: ordered(types) }
    }

    pub fn width(&self) -> usize {
        self.sections.len() + self.objects.len() + self.types.len()
    }

    pub fn encode(&self, section: &str, object: &str, act_type: &str, timestamp: i64) -> Result<Action> {
        let find = |list: &[String], v: &str, component: &'static str| {
            list.iter()
                .position(|s| s == v)
                .map(|i| i as u32)
                .ok_or_else(|| Error::UnknownCategory { component, value: v.to_string() })
        };
        Ok(Action {
            section: find(&self.sections, section, "section")?,
            object: find(&self.objects, object, "object")?,
            act_type: find(&self.types, act_type, "type")?,
            timestamp,
        })
    }

    pub fn check(&self, a: &Action) -> Result<()> {
        if a.section as usize >= self.sections.len() {
            return Err(Error::UnknownCategory { component: "section", value: a.section.to_string() });
        }
        if a.object as usize >= self.objects.len() {
            return Err(Error::UnknownCategory { component: "object", value: a.object.to_string() });
        }
        if a.act_type as usize >= self.types.len() {
            return Err(Error::UnknownCategory { component: "type", value: a.act_type.to_string() });
        }
        Ok(())
    }

    /// Positions of the three ones in the binarized vector.
    pub fn hot_indices(&self, a: &Action) -> [usize; 3] {
        let s = a.section as usize;
        let o = self.sections.len() + a.object as usize;
        let t = self.sections.len() + self.objects.len() + a.act_type as usize;
        [s, o, t]
    }

    /// Inverse of [`binarize_action`]: the category names of a one-hot triple.
    pub fn decode(&self, v: &[f64]) -> Result<(String, String, String)> {
        if v.len() != self.width() {
            return Err(Error::Shape(format!("vector of {} for vocabulary width {}", v.len(), self.width())));
        }
        let (ns, no) = (self.sections.len(), self.objects.len());
        let one = |block: &[f64], names: &[String], component: &'static str| {
            let hits: Vec<usize> = block.iter().enumerate().filter(|(_, &x)| x == 1.0).map(|(i, _)| i).collect();
            match hits.as_slice() {
                [i] => Ok(names[*i].clone()),
                _ => Err(Error::UnknownCategory { component, value: format!("{} active entries", hits.len()) }),
            }
        };
        Ok((
            one(&v[..ns], &self.sections, "section")?,
            one(&v[ns..ns + no], &self.objects, "object")?,
            one(&v[ns + no..], &self.types, "type")?,
        ))
    }
}

fn ordered<'a>(values: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut list: Vec<(&str, usize)> = counts.into_iter().collect();
    list.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    list.into_iter().map(|(s, _)| s.to_string()).collect()
}

/// One-hot concatenation of the section, object and type of `a`.
pub fn binarize_action(a: &Action, vocab: &ActionVocabulary) -> Result<Vec<f64>> {
    vocab.check(a)?;
    let mut v = vec![0.0; vocab.width()];
    for i in vocab.hot_indices(a) {
        v[i] = 1.0;
    }
    Ok(v)
}

/// Items a user may be recommended: base products always, coverage items
/// only when the corresponding base product is owned.
pub fn eligibility_mask(portfolio: &[u32], catalog: &Catalog) -> Vec<bool> {
    catalog
        .coverage_of
        .iter()
        .map(|base| match base {
            None => true,
            Some(b) => portfolio.get(*b).copied().unwrap_or(0) >= 1,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: UserId,
    /// Sorted by start time.
    pub sessions: Vec<Session>,
    /// Sorted by time.
    pub purchases: Vec<PurchaseEvent>,
    pub profile: Option<UserProfile>,
}

impl UserRecord {
    /// Profile portfolio plus every purchase strictly before `time`.
    pub fn portfolio_at(&self, time: i64, n_items: usize) -> Vec<u32> {
        let mut counts = self.profile.as_ref().map(|p| p.portfolio.clone()).unwrap_or_else(|| vec![0; n_items]);
        counts.resize(n_items, 0);
        for p in self.purchases.iter().filter(|p| p.time < time) {
            for &k in &p.items {
                counts[k] += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Sorted by user id.
    pub users: Vec<UserRecord>,
    pub catalog: Catalog,
    pub vocab: ActionVocabulary,
    /// Catalog index of each object-vocabulary entry that names an item.
    pub object_items: Vec<Option<usize>>,
    pub report: IngestReport,
    /// Hex SHA-256 over the ingested files.
    pub source_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub purchase_events: usize,
    pub sessions: usize,
    pub actions: usize,
}

impl Dataset {
    pub fn user(&self, id: &str) -> Option<&UserRecord> {
        self.users.binary_search_by(|u| u.id.as_str().cmp(id)).ok().map(|i| &self.users[i])
    }

    pub fn n_items(&self) -> usize {
        self.catalog.len()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            users: self.users.len(),
            items: self.catalog.len(),
            purchase_events: self.users.iter().map(|u| u.purchases.len()).sum(),
            sessions: self.users.iter().map(|u| u.sessions.len()).sum(),
            actions: self.users.iter().flat_map(|u| &u.sessions).map(|s| s.actions.len()).sum(),
        }
    }

    /// Recomputes `object_items` from the vocabulary and catalog.
    pub fn link_objects(&mut self) {
        self.object_items = object_item_map(&self.vocab, &self.catalog);
    }
}

pub fn object_item_map(vocab: &ActionVocabulary, catalog: &Catalog) -> Vec<Option<usize>> {
    vocab.objects.iter().map(|o| o.strip_prefix(ITEM_PREFIX).and_then(|id| catalog.index_of(id))).collect()
}

/// Time-to-purchase targets of the censored Weibull loss, one row per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoredLabels {
    /// Whole days to the first purchase of each item (or to `training_end`).
    pub y: Vec<Vec<f64>>,
    /// 1 when the purchase was observed before `training_end`, else 0.
    pub u: Vec<Vec<f64>>,
}

/// For every step start and item: days until the first purchase of the item
/// strictly after the step and no later than `training_end` (`u = 1`), or
/// days until `training_end` when there is none (`u = 0`).
pub fn build_censored_labels(
    step_starts: &[i64],
    purchases: &[PurchaseEvent],
    training_end: i64,
    n_items: usize,
) -> Result<CensoredLabels> {
    let mut y = Vec::with_capacity(step_starts.len());
    let mut u = Vec::with_capacity(step_starts.len());
    for &start in step_starts {
        if training_end < start {
            return Err(Error::InvalidArgument(format!("training end {training_end} precedes session start {start}")));
        }
        let censored_days = ((training_end - start) / SECONDS_PER_DAY) as f64;
        let mut yi = vec![censored_days; n_items];
        let mut ui = vec![0.0; n_items];
        for p in purchases.iter().filter(|p| p.time > start && p.time <= training_end) {
            let days = ((p.time - start) / SECONDS_PER_DAY) as f64;
            for &k in &p.items {
                if ui[k] == 0.0 || days < yi[k] {
                    yi[k] = days;
                    ui[k] = 1.0;
                }
            }
        }
        y.push(yi);
        u.push(ui);
    }
    Ok(CensoredLabels { y, u })
}
