use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Case, Recommender};

/// Binary user × purchase-slot matrix. Slot `(k, j)` is the `j`-th
/// occurrence of item `k`; every item has at least its first slot.
#[derive(Debug, Clone, PartialEq)]
pub struct UserItemMatrix {
    pub slots: Vec<(usize, u32)>,
    pub values: DMatrix<f64>,
}

impl UserItemMatrix {
    /// Builds the matrix from owned counts per user.
    pub fn from_counts(counts: &[Vec<u32>], n_items: usize) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyInput("user-item matrix"));
        }
        let mut max = vec![1u32; n_items];
        for row in counts {
            if row.len() != n_items {
                return Err(Error::Shape(format!("portfolio of {} for {n_items} items", row.len())));
            }
            for (m, &c) in max.iter_mut().zip(row) {
                *m = (*m).max(c);
            }
        }
        let slots: Vec<(usize, u32)> =
            max.iter().enumerate().flat_map(|(k, &m)| (1..=m).map(move |j| (k, j))).collect();
        let values = DMatrix::from_fn(counts.len(), slots.len(), |r, c| {
            let (k, j) = slots[c];
            if counts[r][k] >= j {
                1.0
            } else {
                0.0
            }
        });
        Ok(UserItemMatrix { slots, values })
    }

    pub fn slot_name(&self, c: usize) -> String {
        let (k, j) = self.slots[c];
        if j == 1 {
            k.to_string()
        } else {
            format!("{k}#{j}")
        }
    }

    /// The slot row of a user owning `counts`; occurrences beyond the known
    /// slots are dropped.
    pub fn row_for(&self, counts: &[u32]) -> Vec<f64> {
        self.slots.iter().map(|&(k, j)| if counts.get(k).copied().unwrap_or(0) >= j { 1.0 } else { 0.0 }).collect()
    }
}

/// Leading right singular vectors, `slots × f`, with `f` clamped to the rank.
pub fn truncated_basis(matrix: &UserItemMatrix, factors: usize) -> Result<DMatrix<f64>> {
    if factors == 0 {
        return Err(Error::InvalidArgument("svd factors must be at least 1".into()));
    }
    let a = &matrix.values;
    if a.is_empty() {
        return Err(Error::EmptyInput("user-item matrix"));
    }
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::NumericOverflow("svd did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));
    let tol = svd.singular_values.max() * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    let rank = order.iter().filter(|&&i| svd.singular_values[i] > tol).count().max(1);
    let f = factors.min(rank);
    Ok(DMatrix::from_fn(a.ncols(), f, |r, c| v_t[(order[c], r)]))
}

/// Projection of `row` onto the span of `basis`: `row · V Vᵀ`. For a row of the
/// factorized matrix this is its rank-f reconstruction.
pub fn reconstruct_row(basis: &DMatrix<f64>, row: &[f64]) -> Result<Vec<f64>> {
    if row.len() != basis.nrows() {
        return Err(Error::Shape(format!("row of {} for {} slots", row.len(), basis.nrows())));
    }
    let x = DMatrix::from_row_slice(1, row.len(), row);
    let r = (x * basis) * basis.transpose();
    Ok(r.iter().copied().collect())
}

/// Rank-`factors` reconstruction of the user owning `counts`, collapsed to one
/// score per item by reading the item's first unowned slot (0 when every known
/// slot is owned).
pub fn svd_recommend(matrix: &UserItemMatrix, factors: usize, counts: &[u32]) -> Result<Vec<f64>> {
    let basis = truncated_basis(matrix, factors)?;
    collapse(&matrix.slots, &reconstruct_row(&basis, &matrix.row_for(counts))?, counts)
}

fn collapse(slots: &[(usize, u32)], recon: &[f64], counts: &[u32]) -> Result<Vec<f64>> {
    let mut scores = vec![0.0; counts.len()];
    for (&(k, j), &v) in slots.iter().zip(recon) {
        if k >= counts.len() {
            return Err(Error::Shape(format!("slot for item {k} beyond {} items", counts.len())));
        }
        if j == counts[k] + 1 {
            scores[k] = v;
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdModel {
    pub n_items: usize,
    pub factors: usize,
    pub slots: Vec<(usize, u32)>,
    /// Right singular vectors, row-major `slots × factors`.
    pub basis: Vec<f64>,
}

impl SvdModel {
    /// One row per training user: holdings after their latest training purchase.
    pub fn fit(train: &[Case], n_items: usize, factors: usize) -> Result<Self> {
        let mut latest: BTreeMap<&str, &Case> = BTreeMap::new();
        for c in train {
            let e = latest.entry(c.user()).or_insert(c);
            if c.task.purchase.time > e.task.purchase.time {
                *e = c;
            }
        }
        let counts: Vec<Vec<u32>> = latest
            .values()
            .map(|c| {
                let mut p = c.portfolio.clone();
                for &k in &c.task.purchase.items {
                    p[k] += 1;
                }
                p
            })
            .collect();
        let matrix = UserItemMatrix::from_counts(&counts, n_items)?;
        let b = truncated_basis(&matrix, factors)?;
        let basis = (0..b.nrows()).flat_map(|r| (0..b.ncols()).map(move |c| (r, c))).map(|(r, c)| b[(r, c)]).collect();
        Ok(SvdModel { n_items, factors: b.ncols(), slots: matrix.slots, basis })
    }
}

impl Recommender for SvdModel {
    fn name(&self) -> String {
        "svd".into()
    }

    fn score(&self, case: &Case) -> Result<Vec<f64>> {
        let basis = DMatrix::from_row_slice(self.slots.len(), self.factors, &self.basis);
        let row: Vec<f64> = self
            .slots
            .iter()
            .map(|&(k, j)| if case.portfolio.get(k).copied().unwrap_or(0) >= j { 1.0 } else { 0.0 })
            .collect();
        collapse(&self.slots, &reconstruct_row(&basis, &row)?, &case.portfolio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> UserItemMatrix {
        let n = rows[0].len();
        UserItemMatrix {
            slots: (0..n).map(|k| (k, 1)).collect(),
            values: DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]),
        }
    }

    fn full_reconstruction(m: &UserItemMatrix, f: usize) -> DMatrix<f64> {
        let b = truncated_basis(m, f).unwrap();
        &m.values * &b * b.transpose()
    }

    #[test]
    fn identity_is_reproduced() {
        let m = matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = full_reconstruction(&m, 2);
        assert!((r - DMatrix::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn rank_one_matches_eigen_oracle() {
        // symmetric: the best rank-1 approximation is λ₁ v₁ v₁ᵀ for the
        // eigenvalue of largest magnitude, λ₁ = (1 + √5) / 2
        let m = matrix(&[&[1.0, 1.0], &[1.0, 0.0]]);
        let l = (1.0 + 5f64.sqrt()) / 2.0;
        let v = [l, 1.0];
        let n2 = v[0] * v[0] + v[1] * v[1];
        let r = full_reconstruction(&m, 1);
        for i in 0..2 {
            for j in 0..2 {
                assert!((r[(i, j)] - l * v[i] * v[j] / n2).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn factors_beyond_rank_are_clamped() {
        let m = matrix(&[&[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0]]);
        assert_eq!(truncated_basis(&m, 3).unwrap().ncols(), 1);
        assert!((full_reconstruction(&m, 3) - &m.values).norm() < 1e-8 * m.values.norm());
        assert!(truncated_basis(&m, 0).is_err());
    }

    #[test]
    fn repeat_slot_is_read_for_owned_item() {
        let counts = vec![vec![2, 0], vec![1, 1], vec![2, 1]];
        let m = UserItemMatrix::from_counts(&counts, 2).unwrap();
        assert_eq!(m.slots, vec![(0, 1), (0, 2), (1, 1)]);
        assert_eq!(m.slot_name(1), "0#2");
        let basis = truncated_basis(&m, 3).unwrap();
        let recon = reconstruct_row(&basis, &m.row_for(&[1, 0])).unwrap();
        let s = svd_recommend(&m, 3, &[1, 0]).unwrap();
        assert_eq!(s[0], recon[1]);
        assert_eq!(s[1], recon[2]);
        // every known slot of item 0 owned → nothing left to recommend
        assert_eq!(svd_recommend(&m, 3, &[2, 0]).unwrap()[0], 0.0);
    }
}
