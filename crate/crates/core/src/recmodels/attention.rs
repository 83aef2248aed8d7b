use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CrossSessionsModel, TaskExample};
use crate::error::Result;

/// Mean attention weight per session position, grouped by how many sessions
/// the task has. Weights of action-level steps are summed per session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTable {
    pub rows: BTreeMap<usize, Vec<f64>>,
    pub counts: BTreeMap<usize, usize>,
}

pub fn extract_attention(model: &CrossSessionsModel, examples: &[TaskExample]) -> Result<AttentionTable> {
    let per_task: Vec<Vec<f64>> = examples
        .par_iter()
        .map(|ex| {
            let w = model.attention_weights(&ex.encoded, ex.features.as_deref())?;
            let mut by_session = vec![0.0; ex.encoded.sessions()];
            for (&s, &l) in ex.encoded.step_session.iter().zip(&w) {
                by_session[s] += l;
            }
            Ok(by_session)
        })
        .collect::<Result<_>>()?;
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for w in per_task {
        let row = rows.entry(w.len()).or_insert_with(|| vec![0.0; w.len()]);
        for (r, x) in row.iter_mut().zip(&w) {
            *r += x;
        }
        *counts.entry(w.len()).or_default() += 1;
    }
    for (n, row) in rows.iter_mut() {
        let c = counts[n] as f64;
        row.iter_mut().for_each(|x| *x /= c);
    }
    Ok(AttentionTable { rows, counts })
}
