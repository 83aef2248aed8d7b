use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ranking quality of one user's list at a cutoff.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hr: f64,
    pub precision: f64,
    pub recall: f64,
    pub mrr: f64,
    pub ap: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["hr", "precision", "recall", "mrr", "map"];

    pub fn values(&self) -> [f64; 5] {
        [self.hr, self.precision, self.recall, self.mrr, self.ap]
    }

    /// Arithmetic mean, summed in the given order.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Metrics>) -> Metrics {
        let mut sum = [0.0; 5];
        let mut n = 0usize;
        for m in items {
            for (s, v) in sum.iter_mut().zip(m.values()) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return Metrics::default();
        }
        let d = n as f64;
        Metrics { hr: sum[0] / d, precision: sum[1] / d, recall: sum[2] / d, mrr: sum[3] / d, ap: sum[4] / d }
    }
}

/// Pushes ineligible items below every eligible one by giving them
/// `min(scores) - 1`. When nothing is eligible the scores are returned as-is.
pub fn apply_post_filter(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(Error::Shape(format!("{} scores for a mask of {}", scores.len(), mask.len())));
    }
    if !mask.iter().any(|&m| m) {
        log::warn!("post filter: no eligible item, scores left unchanged");
        return Ok(scores.to_vec());
    }
    let floor = scores.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    Ok(scores.iter().zip(mask).map(|(&s, &ok)| if ok { s } else { floor }).collect())
}

/// Item indices by descending score; equal scores keep ascending index.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Hit rate, precision, recall, reciprocal rank and average precision of the
/// top `k` of `ranked` against the purchased set. Reciprocal rank is zero when
/// the first hit lies beyond `k`; average precision is normalized by
/// `min(|purchased|, k)`.
pub fn metrics_at_k(ranked: &[usize], purchased: &[usize], k: usize) -> Result<Metrics> {
    if purchased.is_empty() {
        return Err(Error::EmptyInput("purchased item set"));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("cutoff k must be at least 1".into()));
    }
    let mut hits = 0usize;
    let mut first_hit = None;
    let mut precision_sum = 0.0;
    for (i, item) in ranked.iter().take(k).enumerate() {
        if purchased.contains(item) {
            hits += 1;
            first_hit.get_or_insert(i + 1);
            precision_sum += hits as f64 / (i + 1) as f64;
        }
    }
    let n_purchased = {
        let mut p = purchased.to_vec();
        p.sort_unstable();
        p.dedup();
        p.len()
    };
    Ok(Metrics {
        hr: if hits > 0 { 1.0 } else { 0.0 },
        precision: hits as f64 / k as f64,
        recall: hits as f64 / n_purchased as f64,
        mrr: first_hit.map_or(0.0, |r| 1.0 / r as f64),
        ap: precision_sum / n_purchased.min(k) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: usize = 0;
    const B: usize = 1;
    const C: usize = 2;
    const D: usize = 3;

    #[test]
    fn metric_examples() {
        let ranked = [A, B, C, D];
        let m = metrics_at_k(&ranked, &[B], 3).unwrap();
        assert_eq!(m, Metrics { hr: 1.0, precision: 1.0 / 3.0, recall: 1.0, mrr: 0.5, ap: 0.5 });
        assert_eq!(metrics_at_k(&ranked, &[D], 3).unwrap(), Metrics::default());
        let m = metrics_at_k(&ranked, &[A, B, C], 3).unwrap();
        assert_eq!(m.values(), [1.0; 5]);
        assert!(metrics_at_k(&ranked, &[], 3).is_err());
    }

    #[test]
    fn post_filter_examples() {
        assert_eq!(apply_post_filter(&[0.9, 0.2], &[true, false]).unwrap(), vec![0.9, -0.8]);
        assert_eq!(apply_post_filter(&[0.9, 0.2], &[true, true]).unwrap(), vec![0.9, 0.2]);
        assert_eq!(apply_post_filter(&[0.9, 0.2], &[false, false]).unwrap(), vec![0.9, 0.2]);
    }

    #[test]
    fn ties_break_by_index() {
        assert_eq!(rank(&[0.5, 0.7, 0.5, 0.7]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn mean_of_metrics() {
        let a = Metrics { hr: 1.0, precision: 0.5, recall: 1.0, mrr: 1.0, ap: 1.0 };
        let m = Metrics::mean([&a, &Metrics::default()]);
        assert_eq!(m.hr, 0.5);
        assert_eq!(m.precision, 0.25);
    }
}
