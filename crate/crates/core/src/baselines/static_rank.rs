use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{Case, Recommender};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StaticMode {
    Random,
    Popular,
}

/// Scores shared by every user: purchase counts (`Popular`) or a uniformly
/// random permutation of `n..1` drawn from `rng` (`Random`).
pub fn static_rank(mode: StaticMode, counts: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    match mode {
        StaticMode::Popular => counts.to_vec(),
        StaticMode::Random => {
            let mut s: Vec<f64> = (0..counts.len()).map(|i| i as f64).collect();
            s.shuffle(rng);
            s
        }
    }
}

/// Number of training purchase events containing each item.
pub fn purchase_counts(cases: &[Case], n_items: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_items];
    for c in cases {
        for &k in &c.task.purchase.items {
            counts[k] += 1.0;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Popular {
    pub counts: Vec<f64>,
}

impl Popular {
    pub fn fit(train: &[Case], n_items: usize) -> Self {
        Popular { counts: purchase_counts(train, n_items) }
    }
}

impl Recommender for Popular {
    fn name(&self) -> String {
        "popular".into()
    }

    fn score(&self, _case: &Case) -> Result<Vec<f64>> {
        Ok(self.counts.clone())
    }
}

/// A fresh random ranking per case, reproducible from the seed and the case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomRank {
    pub n_items: usize,
    pub seed: u64,
}

impl Recommender for RandomRank {
    fn name(&self) -> String {
        "random".into()
    }

    fn score(&self, case: &Case) -> Result<Vec<f64>> {
        let mut h = DefaultHasher::new();
        (case.user(), case.task.purchase.time, case.task.sessions.len()).hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(h.finish());
        Ok(static_rank(StaticMode::Random, &vec![0.0; self.n_items], &mut rng))
    }
}
