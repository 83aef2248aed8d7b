use proptest::collection::vec;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crossrec::baselines::{
    cosine, purchase_counts, reconstruct_row, sknn_recommend, truncated_basis, BoostForm, NeighborIndex, UserItemMatrix,
};
use crossrec::dataio::{PurchaseEvent, Session};
use crossrec::eval::{apply_post_filter, metrics_at_k, rank, Case};
use crossrec::prep::{build_tasks, cap_recency, PrepConfig};
use crossrec::recmodels::{weibull_median, weibull_pmf, weibull_tail};
use crossrec::segmentation::{fit_threshold, intersection_threshold, segment_tasks, Gmm2, Task};
use crossrec::synth::{generate, SynthConfig};

/// A permutation of `0..n` and a non-empty purchase set drawn from it.
fn ranking_and_purchases() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..12).prop_flat_map(|n| (Just((0..n).collect::<Vec<_>>()).prop_shuffle(), vec(0..n, 1..=n)))
}

/// Metrics written out from their definitions over a relevance vector.
fn reference(ranked: &[usize], purchased: &[usize], k: usize) -> [f64; 5] {
    let mut set = purchased.to_vec();
    set.sort_unstable();
    set.dedup();
    let rel: Vec<bool> = ranked.iter().take(k).map(|i| set.contains(i)).collect();
    let hits = rel.iter().filter(|&&r| r).count() as f64;
    let hr = if hits > 0.0 { 1.0 } else { 0.0 };
    let mrr = rel.iter().position(|&r| r).map_or(0.0, |p| 1.0 / (p + 1) as f64);
    let mut ap = 0.0;
    for i in 0..rel.len() {
        if rel[i] {
            let prec = rel[..=i].iter().filter(|&&r| r).count() as f64 / (i + 1) as f64;
            ap += prec;
        }
    }
    ap /= set.len().min(k) as f64;
    [hr, hits / k as f64, hits / set.len() as f64, mrr, ap]
}

fn sessions_at(starts: &[i64]) -> Vec<Session> {
    starts
        .iter()
        .enumerate()
        .map(|(i, &t)| Session { id: format!("s{i}"), user: "u".into(), start: t, actions: Vec::new() })
        .collect()
}

fn case_buying(items: Vec<usize>) -> Case {
    Case {
        task: Task {
            user: "u".into(),
            sessions: Vec::new(),
            purchase: PurchaseEvent { user: "u".into(), time: 0, items },
        },
        portfolio: Vec::new(),
        features: None,
        history: Vec::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn metrics_match_definitions((ranked, purchased) in ranking_and_purchases(), k in 1usize..15) {
        let m = metrics_at_k(&ranked, &purchased, k).unwrap();
        let r = reference(&ranked, &purchased, k);
        for (a, b) in m.values().iter().zip(r) {
            prop_assert!((a - b).abs() < 1e-12, "{:?} vs {:?}", m, r);
        }
        for v in m.values() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn hit_rate_and_recall_grow_with_k((ranked, purchased) in ranking_and_purchases(), k in 1usize..12) {
        let a = metrics_at_k(&ranked, &purchased, k).unwrap();
        let b = metrics_at_k(&ranked, &purchased, k + 1).unwrap();
        prop_assert!(b.hr >= a.hr);
        prop_assert!(b.recall >= a.recall);
        prop_assert!(b.mrr >= a.mrr);
    }

    #[test]
    fn rank_is_sorted_permutation(scores in vec(-3i32..3, 0..20)) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let r = rank(&scores);
        let mut sorted = r.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..scores.len()).collect::<Vec<_>>());
        for w in r.windows(2) {
            let (a, b) = (w[0], w[1]);
            prop_assert!(scores[a] > scores[b] || (scores[a] == scores[b] && a < b));
        }
    }

    #[test]
    fn post_filter_demotes_only_ineligible(
        pairs in vec((-1e6f64..1e6, any::<bool>()), 1..30)
    ) {
        let (scores, mask): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        let out = apply_post_filter(&scores, &mask).unwrap();
        if mask.iter().any(|&m| m) {
            let worst_eligible = (0..out.len()).filter(|&i| mask[i]).map(|i| out[i]).fold(f64::INFINITY, f64::min);
            for i in 0..out.len() {
                if mask[i] {
                    prop_assert_eq!(out[i], scores[i]);
                } else {
                    prop_assert!(out[i] < worst_eligible);
                }
            }
        } else {
            prop_assert_eq!(out, scores);
        }
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(a in vec(-5.0f64..5.0, 6), b in vec(-5.0f64..5.0, 6)) {
        let (x, y) = (cosine(&a, &b), cosine(&b, &a));
        prop_assert!((x - y).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&x));
        if a.iter().any(|&v| v != 0.0) {
            prop_assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sknn_without_boost_ignores_interactions(
        rows in vec((vec(any::<bool>(), 8), vec(0usize..5, 1..3)), 1..12),
        query in vec(any::<bool>(), 8),
        interacted in vec(0usize..5, 0..5),
        k in 1usize..6,
        boost in 0.01f64..2.0,
    ) {
        let bin = |v: &[bool]| v.iter().map(|&b| f64::from(u8::from(b))).collect::<Vec<f64>>();
        let mut index = NeighborIndex::new(8);
        for (v, p) in &rows {
            index.push(&bin(v), p.clone()).unwrap();
        }
        let q = bin(&query);
        let plain = sknn_recommend(&index, &q, &[], 5, k, 0.0, BoostForm::Multiplicative).unwrap();
        let zero = sknn_recommend(&index, &q, &interacted, 5, k, 0.0, BoostForm::Multiplicative).unwrap();
        prop_assert_eq!(&plain, &zero);
        let boosted = sknn_recommend(&index, &q, &interacted, 5, k, boost, BoostForm::Multiplicative).unwrap();
        for i in 0..5 {
            if interacted.contains(&i) {
                prop_assert!(boosted[i] >= plain[i]);
            } else {
                prop_assert_eq!(boosted[i], plain[i]);
            }
        }
    }

    #[test]
    fn full_rank_svd_reproduces_rows(counts in vec(vec(0u32..3, 4), 1..8)) {
        let m = UserItemMatrix::from_counts(&counts, 4).unwrap();
        let basis = truncated_basis(&m, m.values.ncols()).unwrap();
        for (r, row) in counts.iter().enumerate() {
            let x = m.row_for(row);
            let rec = reconstruct_row(&basis, &x).unwrap();
            for (a, b) in rec.iter().zip(&x) {
                prop_assert!((a - b).abs() < 1e-8, "row {}: {:?} vs {:?}", r, rec, x);
            }
        }
    }

    #[test]
    fn popularity_ignores_case_order(items in vec(vec(0usize..6, 1..3), 1..40), seed in any::<u64>()) {
        let mut cases: Vec<Case> = items.into_iter().map(case_buying).collect();
        let before = purchase_counts(&cases, 6);
        cases.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(before, purchase_counts(&cases, 6));
    }

    #[test]
    fn weibull_pmf_is_tail_difference(y in 0i64..200, alpha in 0.05f64..50.0, beta in 0.05f64..0.999) {
        let p = weibull_pmf(y, alpha, beta).unwrap();
        let d = weibull_tail(y - 1, alpha, beta).unwrap() - weibull_tail(y, alpha, beta).unwrap();
        prop_assert!(p >= 0.0);
        prop_assert!((p - d).abs() < 1e-12);
        prop_assert!(weibull_tail(y, alpha, beta).unwrap() <= weibull_tail(y - 1, alpha, beta).unwrap());
        let m = weibull_median(alpha, beta);
        prop_assert!(((-(m / alpha).powf(beta)).exp() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn weibull_median_grows_with_alpha(a in 0.1f64..20.0, ratio in 1.01f64..5.0, beta in 0.05f64..0.999) {
        prop_assert!(weibull_median(a * ratio, beta) > weibull_median(a, beta));
    }

    #[test]
    fn threshold_balances_weighted_densities(
        m1 in -5.0f64..5.0,
        sep in 0.5f64..10.0,
        s1 in 0.2f64..3.0,
        s2 in 0.2f64..3.0,
        w in 0.1f64..0.9,
    ) {
        let g = Gmm2 { weights: [w, 1.0 - w], means: [m1, m1 + sep], stdevs: [s1, s2] };
        if let Ok(t) = intersection_threshold(&g) {
            let x = t.log_seconds;
            prop_assert!((g.log_weighted_density(0, x) - g.log_weighted_density(1, x)).abs() < 1e-6);
            if (s1 - s2).abs() < 1e-12 && (w - 0.5).abs() < 1e-12 {
                prop_assert!((x - (m1 + sep / 2.0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn recency_cap_keeps_a_bounded_recent_run(
        gaps in vec(0i64..40, 1..15),
        max_sessions in 1usize..8,
        threshold in 1i64..30,
    ) {
        let mut starts = vec![0i64];
        for g in &gaps {
            starts.push(starts.last().unwrap() + g);
        }
        let cfg = PrepConfig { max_sessions, threshold_days: threshold as f64 / 86_400.0, ..Default::default() };
        let task = Task {
            user: "u".into(),
            sessions: sessions_at(&starts),
            purchase: PurchaseEvent { user: "u".into(), time: 1_000, items: vec![0] },
        };
        let c = cap_recency(&task, &cfg);
        prop_assert!(!c.sessions.is_empty());
        prop_assert!(c.sessions.len() <= max_sessions);
        prop_assert_eq!(&c.sessions[..], &task.sessions[task.sessions.len() - c.sessions.len()..]);
        for w in c.sessions.windows(2) {
            prop_assert!(w[1].start - w[0].start <= threshold);
        }
    }

    #[test]
    fn segmentation_partitions_sessions(
        gaps in vec(0i64..50, 0..15),
        purchase_times in vec(-10i64..700, 0..6),
        threshold in 1i64..40,
    ) {
        let mut starts = vec![0i64];
        for g in &gaps {
            starts.push(starts.last().unwrap() + g);
        }
        let sessions = sessions_at(&starts);
        let purchases: Vec<PurchaseEvent> = purchase_times
            .iter()
            .map(|&t| PurchaseEvent { user: "u".into(), time: t, items: vec![0] })
            .collect();
        let seg = segment_tasks(&sessions, &purchases, threshold as f64);
        let flat: Vec<&Session> = seg.chains.iter().flatten().collect();
        prop_assert_eq!(flat.len(), sessions.len());
        for (a, b) in flat.iter().zip(&sessions) {
            prop_assert_eq!(*a, b);
        }
        prop_assert_eq!(seg.tasks.len() + seg.dropped_purchases, purchases.len());
        for t in &seg.tasks {
            prop_assert!(!t.sessions.is_empty());
            for s in &t.sessions {
                prop_assert!(s.start < t.purchase.time);
            }
            for w in t.sessions.windows(2) {
                prop_assert!(w[1].start - w[0].start <= threshold);
            }
        }
    }
}

#[test]
fn synthetic_data_matches_configured_shape() {
    let cfg = SynthConfig { n_users: 2_000, seed: 5, ..Default::default() };
    let ds = generate(&cfg).unwrap();
    let prep = PrepConfig::default();
    let (tasks, dropped, _) = build_tasks(&ds, &prep);
    assert_eq!(dropped, 0);
    let mean_sessions = tasks.iter().map(|t| t.sessions.len()).sum::<usize>() as f64 / tasks.len() as f64;
    let all: Vec<&Session> = ds.users.iter().flat_map(|u| &u.sessions).collect();
    let mean_len = all.iter().map(|s| s.actions.len()).sum::<usize>() as f64 / all.len() as f64;
    assert!((mean_sessions / cfg.mean_sessions - 1.0).abs() < 0.10, "sessions per task {mean_sessions}");
    assert!((mean_len / cfg.mean_session_len - 1.0).abs() < 0.10, "actions per session {mean_len}");

    // the two gap scales separate and the threshold falls between them
    let fit = fit_threshold(&ds).unwrap();
    let within = cfg.within_gap.0;
    let between = cfg.between_gap.0;
    assert!(fit.threshold.log_seconds > within && fit.threshold.log_seconds < between, "{fit:?}");
}
