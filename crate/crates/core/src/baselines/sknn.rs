use serde::{Deserialize, Serialize};

use crate::dataio::{ActionVocabulary, Session};
use crate::encoders::pooled_actions;
use crate::error::{Error, Result};
use crate::eval::{Case, Recommender};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoostForm {
    /// Interacted items are scored `s · (1 + boost)`.
    #[default]
    Multiplicative,
    /// Interacted items are scored `s + boost`.
    Additive,
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Positions of the ones in a binary vector.
fn support(v: &[f64]) -> Vec<u32> {
    v.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(i, _)| i as u32).collect()
}

/// Cosine of two binary vectors given by sorted supports.
fn sparse_cosine(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    (common as f64 / ((a.len() * b.len()) as f64).sqrt()).min(1.0)
}

/// Pooled binary action vectors of training tasks with their purchases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborIndex {
    pub width: usize,
    supports: Vec<Vec<u32>>,
    purchases: Vec<Vec<usize>>,
}

impl NeighborIndex {
    pub fn new(width: usize) -> Self {
        NeighborIndex { width, supports: Vec::new(), purchases: Vec::new() }
    }

    pub fn push(&mut self, pooled: &[f64], purchased: Vec<usize>) -> Result<()> {
        if pooled.len() != self.width {
            return Err(Error::Shape(format!("pooled vector of {} for width {}", pooled.len(), self.width)));
        }
        if purchased.is_empty() {
            return Err(Error::EmptyInput("neighbor without purchases"));
        }
        self.supports.push(support(pooled));
        self.purchases.push(purchased);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }
}

/// Similarity-weighted purchase votes of the `k_neighbors` most similar
/// training tasks, with `interacted` items boosted.
pub fn sknn_recommend(
    index: &NeighborIndex,
    pooled: &[f64],
    interacted: &[usize],
    n_items: usize,
    k_neighbors: usize,
    boost: f64,
    form: BoostForm,
) -> Result<Vec<f64>> {
    if k_neighbors == 0 {
        return Err(Error::InvalidArgument("k_neighbors must be at least 1".into()));
    }
    if !(boost >= 0.0) {
        return Err(Error::InvalidArgument("boost must be non-negative".into()));
    }
    if pooled.len() != index.width {
        return Err(Error::Shape(format!("pooled vector of {} for width {}", pooled.len(), index.width)));
    }
    let q = support(pooled);
    let mut sims: Vec<(usize, f64)> =
        index.supports.iter().enumerate().map(|(i, s)| (i, sparse_cosine(&q, s))).filter(|p| p.1 > 0.0).collect();
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut scores = vec![0.0; n_items];
    for &(i, s) in sims.iter().take(k_neighbors) {
        for &k in &index.purchases[i] {
            scores[k] += s;
        }
    }
    if boost > 0.0 {
        for &k in interacted {
            match form {
                BoostForm::Multiplicative => scores[k] *= 1.0 + boost,
                BoostForm::Additive => scores[k] += boost,
            }
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sknn {
    pub index: NeighborIndex,
    pub vocab: ActionVocabulary,
    pub object_items: Vec<Option<usize>>,
    pub n_items: usize,
    pub k_neighbors: usize,
    pub boost: f64,
    pub form: BoostForm,
}

impl Sknn {
    pub fn fit(
        train: &[Case],
        vocab: ActionVocabulary,
        object_items: Vec<Option<usize>>,
        n_items: usize,
        k_neighbors: usize,
        boost: f64,
        form: BoostForm,
    ) -> Result<Self> {
        let mut index = NeighborIndex::new(vocab.width());
        for c in train {
            index.push(&pool(&c.task.sessions, &vocab)?, c.task.purchase.items.clone())?;
        }
        if index.is_empty() {
            return Err(Error::EmptyInput("neighbor index"));
        }
        Ok(Sknn { index, vocab, object_items, n_items, k_neighbors, boost, form })
    }

    /// Items whose object appears in any of the sessions, ascending.
    pub fn interacted(&self, sessions: &[Session]) -> Vec<usize> {
        let mut items: Vec<usize> = sessions
            .iter()
            .flat_map(|s| &s.actions)
            .filter_map(|a| self.object_items.get(a.object as usize).copied().flatten())
            .collect();
        items.sort_unstable();
        items.dedup();
        items
    }
}

fn pool(sessions: &[Session], vocab: &ActionVocabulary) -> Result<Vec<f64>> {
    pooled_actions(sessions.iter().flat_map(|s| &s.actions), vocab)
}

impl Recommender for Sknn {
    fn name(&self) -> String {
        if self.boost > 0.0 { "sknn-b" } else { "sknn" }.into()
    }

    fn score(&self, case: &Case) -> Result<Vec<f64>> {
        let s = &case.task.sessions;
        sknn_recommend(
            &self.index,
            &pool(s, &self.vocab)?,
            &self.interacted(s),
            self.n_items,
            self.k_neighbors,
            self.boost,
            self.form,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(rows: &[(&[f64], Vec<usize>)]) -> NeighborIndex {
        let mut ix = NeighborIndex::new(rows[0].0.len());
        for (v, p) in rows {
            ix.push(v, p.clone()).unwrap();
        }
        ix
    }

    #[test]
    fn identical_neighbor_votes_one() {
        let ix = index(&[(&[1.0, 0.0, 1.0], vec![2])]);
        let s = sknn_recommend(&ix, &[1.0, 0.0, 1.0], &[], 3, 30, 0.0, BoostForm::Multiplicative).unwrap();
        assert!((s[2] - 1.0).abs() < 1e-12);
        assert_eq!((s[0], s[1]), (0.0, 0.0));
    }

    #[test]
    fn orthogonal_gives_zero() {
        let ix = index(&[(&[1.0, 0.0, 0.0], vec![1])]);
        let s = sknn_recommend(&ix, &[0.0, 1.0, 1.0], &[1], 3, 30, 0.5, BoostForm::Multiplicative).unwrap();
        assert_eq!(s, vec![0.0; 3]);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn boost_forms() {
        let ix = index(&[(&[1.0, 1.0], vec![0, 1])]);
        let q = [1.0, 0.0];
        let plain = sknn_recommend(&ix, &q, &[0], 2, 30, 0.0, BoostForm::Multiplicative).unwrap();
        let mul = sknn_recommend(&ix, &q, &[0], 2, 30, 0.5, BoostForm::Multiplicative).unwrap();
        let add = sknn_recommend(&ix, &q, &[0], 2, 30, 0.5, BoostForm::Additive).unwrap();
        assert!((mul[0] - 1.5 * plain[0]).abs() < 1e-12);
        assert_eq!(mul[1], plain[1]);
        assert!((add[0] - plain[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn only_top_k_neighbors_vote() {
        let ix = index(&[(&[1.0, 1.0, 0.0], vec![0]), (&[1.0, 0.0, 0.0], vec![1]), (&[1.0, 0.0, 1.0], vec![2])]);
        let s = sknn_recommend(&ix, &[1.0, 0.0, 0.0], &[], 3, 1, 0.0, BoostForm::Multiplicative).unwrap();
        assert_eq!(s, vec![0.0, 1.0, 0.0]);
        assert!(sknn_recommend(&ix, &[1.0, 0.0, 0.0], &[], 3, 0, 0.0, BoostForm::Multiplicative).is_err());
    }

    #[test]
    fn sparse_matches_dense_cosine() {
        let a = [1.0, 0.0, 1.0, 1.0];
        let b = [0.0, 1.0, 1.0, 1.0];
        assert!((sparse_cosine(&support(&a), &support(&b)) - cosine(&a, &b)).abs() < 1e-12);
    }
}
