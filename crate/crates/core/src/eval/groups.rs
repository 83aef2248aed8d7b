use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalReport, Metrics};
use crate::dataio::{Dataset, UserProfile};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupAttribute {
    /// Decade of age: "20-29", "30-39", ...
    AgeBucket,
    Gender,
    /// Income level rounded and clamped to 1..=10.
    IncomeDecile,
}

impl std::str::FromStr for GroupAttribute {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "age-bucket" | "age" => Ok(GroupAttribute::AgeBucket),
            "gender" => Ok(GroupAttribute::Gender),
            "income-decile" | "income" => Ok(GroupAttribute::IncomeDecile),
            _ => Err(Error::InvalidArgument(format!("unknown group attribute `{s}`"))),
        }
    }
}

impl GroupAttribute {
    pub fn name(&self) -> &'static str {
        match self {
            GroupAttribute::AgeBucket => "age-bucket",
            GroupAttribute::Gender => "gender",
            GroupAttribute::IncomeDecile => "income-decile",
        }
    }

    pub fn group_of(&self, profile: &UserProfile) -> Result<String> {
        match self {
            GroupAttribute::AgeBucket => {
                let age = profile.demographics[0];
                let lo = (age / 10.0).floor() as i64 * 10;
                Ok(format!("{lo}-{}", lo + 9))
            }
            GroupAttribute::Gender => profile.gender.clone().ok_or_else(|| Error::AttributeMissing("gender".into())),
            GroupAttribute::IncomeDecile => {
                Ok(format!("{:02}", profile.demographics[2].round().clamp(1.0, 10.0) as i64))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub users: usize,
    /// Fraction of the evaluated cases in this group.
    pub share: f64,
    pub means: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTable {
    pub attribute: GroupAttribute,
    pub model: String,
    pub k: usize,
    pub overall: Metrics,
    pub rows: Vec<GroupRow>,
}

impl GroupTable {
    /// `Σ share · mean` per metric; equals the overall means.
    pub fn recombined(&self) -> Metrics {
        let mut out = [0.0; 5];
        for r in &self.rows {
            for (o, v) in out.iter_mut().zip(r.means.values()) {
                *o += r.share * v;
            }
        }
        Metrics { hr: out[0], precision: out[1], recall: out[2], mrr: out[3], ap: out[4] }
    }

    pub fn csv_rows(&self) -> Vec<[String; 5]> {
        self.rows
            .iter()
            .flat_map(|r| {
                Metrics::NAMES.iter().zip(r.means.values()).map(move |(name, v)| {
                    [
                        name.to_string(),
                        self.k.to_string(),
                        self.model.clone(),
                        format!("{}={}", self.attribute.name(), r.group),
                        v.to_string(),
                    ]
                })
            })
            .collect()
    }
}

/// Splits the per-user results of `report` by a profile attribute.
pub fn group_breakdown(report: &EvalReport, dataset: &Dataset, attribute: GroupAttribute) -> Result<GroupTable> {
    if report.per_user.is_empty() {
        return Err(Error::EmptyInput("report without users"));
    }
    let mut groups: BTreeMap<String, Vec<&Metrics>> = BTreeMap::new();
    for r in &report.per_user {
        let profile = dataset
            .user(&r.user)
            .and_then(|u| u.profile.as_ref())
            .ok_or_else(|| Error::ProfileRequired(r.user.clone()))?;
        groups.entry(attribute.group_of(profile)?).or_default().push(&r.metrics);
    }
    let n = report.per_user.len() as f64;
    let rows = groups
        .into_iter()
        .map(|(group, ms)| GroupRow { group, users: ms.len(), share: ms.len() as f64 / n, means: Metrics::mean(ms) })
        .collect();
    Ok(GroupTable { attribute, model: report.model.clone(), k: report.k, overall: report.means, rows })
}
