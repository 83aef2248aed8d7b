//! Acceptance checks. Runs without the libtest harness so that one
//! `criterion N: PASS|FAIL|SKIP` line per check is always printed; exits
//! non-zero if any check fails.
//!
//! Criterion 9 needs the public dataset: point `CROSSREC_PUBLIC_DATA` at a
//! directory with the four CSV files.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crossrec::baselines::BaselineKind;
use crossrec::dataio::{ActionVocabulary, CensoredLabels, Dataset, DatasetPaths};
use crossrec::encoders::{EncodedTask, EncoderKind, TaskEncoder};
use crossrec::eval::{apply_post_filter, metrics_at_k, rank};
use crossrec::numcore::{check_gradients, example_gradient, mean_loss, Grads, TrainConfig};
use crossrec::pipeline::{run_experiment, shuffle_study, Experiment, ModelSpec, TrainedModel};
use crossrec::prep::prepare;
use crossrec::recmodels::{
    extract_attention, weibull_pmf, weibull_tail, CrossSessionsModel, HeadKind, ModelConfig, TaskExample,
};
use crossrec::segmentation::{fit_gmm_em, fit_threshold, intersection_threshold, Gmm2, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crossrec::synth::{generate, SynthConfig};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(limit: Duration, t: Instant) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

// 1

fn tiny_model(head: HeadKind, hybrid: bool) -> CrossSessionsModel {
    let vocab = ActionVocabulary {
        sections: vec!["a".into(), "b".into()],
        objects: vec!["x".into(), "y".into(), "z".into()],
        types: vec!["t".into()],
    };
    let config = ModelConfig {
        head,
        hybrid,
        demo_units: 2,
        train: TrainConfig { hidden_units: 3, dropout_rate: 0.0, seed: 17, ..Default::default() },
        ..Default::default()
    };
    let enc = TaskEncoder::new(EncoderKind::Encode, vocab, None).unwrap();
    CrossSessionsModel::new(config, enc, 4, hybrid.then_some(3)).unwrap()
}

fn tiny_example(seed: u64, sessions: usize, hybrid: bool) -> TaskExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps: Vec<Vec<f64>> =
        (0..sessions).map(|_| (0..6).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect()).collect();
    TaskExample {
        encoded: EncodedTask { step_session: (0..sessions).collect(), steps },
        target: vec![0.0, 1.0, 0.0, 1.0],
        labels: Some(CensoredLabels {
            y: (0..sessions).map(|i| vec![2.0 + i as f64, 5.0, 0.0, 9.0]).collect(),
            u: (0..sessions).map(|_| vec![1.0, 0.0, 1.0, 0.0]).collect(),
        }),
        features: hybrid.then(|| vec![0.4, -0.9, 1.3]),
    }
}

fn batch_error(m: &CrossSessionsModel, batch: &[TaskExample]) -> f64 {
    let mut total: Option<Grads> = None;
    for ex in batch {
        let g = example_gradient(m, ex).unwrap().1;
        match &mut total {
            None => total = Some(g),
            Some(t) => t.add_assign(&g),
        }
    }
    let mut total = total.unwrap();
    total.scale(1.0 / batch.len() as f64);
    check_gradients(&m.params, &total, 1e-5, |p| {
        let mut probe = m.clone();
        probe.params = p.clone();
        mean_loss(&probe, batch)
    })
    .unwrap()
    .max_rel_error
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let cases = [
        ("bce", HeadKind::Bce, false),
        ("weibull", HeadKind::Weibull, false),
        ("attention", HeadKind::Attention, false),
        ("hybrid", HeadKind::Bce, true),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, head, hybrid) in cases {
        let m = tiny_model(head, hybrid);
        let batch = [tiny_example(1, 2, hybrid), tiny_example(2, 3, hybrid)];
        let err = batch_error(&m, &batch);
        ok &= err < 1e-4;
        parts.push(format!("{name} {err:.1e}"));
    }
    let (fast, time) = within(Duration::from_secs(60), t);
    verdict(ok && fast, format!("max relative gradient error {} (< 1e-4); {time}", parts.join(", ")))
}

// 2

fn criterion_2() -> Outcome {
    let mut worst_diff: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    for alpha in [0.5, 1.0, 2.0, 8.0] {
        for beta in [0.1, 0.5, 0.9] {
            for y in 0..=100 {
                let d = weibull_tail(y - 1, alpha, beta).unwrap() - weibull_tail(y, alpha, beta).unwrap();
                worst_diff = worst_diff.max((weibull_pmf(y, alpha, beta).unwrap() - d).abs());
            }
            let mass: f64 = (0..=1000).map(|y| weibull_pmf(y, alpha, beta).unwrap()).sum::<f64>()
                + weibull_tail(1000, alpha, beta).unwrap();
            worst_mass = worst_mass.max((mass - 1.0).abs());
        }
    }
    verdict(
        worst_diff < 1e-12 && worst_mass < 1e-9,
        format!("max |pmf - tail diff| {worst_diff:.1e} (< 1e-12), max |mass - 1| {worst_mass:.1e} (< 1e-9)"),
    )
}

// 3

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (w_true, n) = (0.4, 20_000);
    let low = Normal::new(0.0, 1.0).unwrap();
    let high = Normal::new(5.0, 1.0).unwrap();
    // log inter-session times of a lognormal mixture
    let xs: Vec<f64> =
        (0..n).map(|_| if rng.gen_bool(w_true) { low.sample(&mut rng) } else { high.sample(&mut rng) }).collect();
    let fit = match fit_gmm_em(&xs, DEFAULT_MAX_ITER, DEFAULT_TOL) {
        Ok(f) => f,
        Err(e) => return Outcome::Fail(format!("EM failed: {e}")),
    };
    let g = fit.gmm;
    let means_ok = (g.means[0] - 0.0).abs() <= 0.1 && (g.means[1] - 5.0).abs() <= 0.1;
    let weights_ok = (g.weights[0] - w_true).abs() <= 0.02 && (g.weights[1] - (1.0 - w_true)).abs() <= 0.02;
    let monotone = fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs());
    let sym = Gmm2 { weights: [0.5, 0.5], means: [1.0, 6.0], stdevs: [1.3, 1.3] };
    let mid = intersection_threshold(&sym).map(|t| (t.log_seconds - 3.5).abs()).unwrap_or(f64::INFINITY);
    let (fast, time) = within(Duration::from_secs(30), t);
    verdict(
        means_ok && weights_ok && monotone && mid < 1e-6 && fast,
        format!(
            "means ({:.3}, {:.3}), weights ({:.3}, {:.3}), log-likelihood monotone {monotone} over {} iterations, \
             midpoint error {mid:.1e}; {time}",
            g.means[0], g.means[1], g.weights[0], g.weights[1], fit.iterations
        ),
    )
}

// 4

fn brute_force(ranked: &[usize], purchased: &[usize], k: usize) -> [f64; 5] {
    let mut set = purchased.to_vec();
    set.sort_unstable();
    set.dedup();
    let top = &ranked[..k.min(ranked.len())];
    let mut hits = 0usize;
    let mut first = 0usize;
    let mut ap = 0.0;
    for (i, item) in top.iter().enumerate() {
        if set.contains(item) {
            hits += 1;
            if first == 0 {
                first = i + 1;
            }
            ap += hits as f64 / (i + 1) as f64;
        }
    }
    [
        if hits > 0 { 1.0 } else { 0.0 },
        hits as f64 / k as f64,
        hits as f64 / set.len() as f64,
        if first > 0 { 1.0 / first as f64 } else { 0.0 },
        ap / set.len().min(k) as f64,
    ]
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=16);
        let mut ranked: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut ranked[..], &mut rng);
        let purchased: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0..n)).collect();
        let k = rng.gen_range(1..=n);
        let m = metrics_at_k(&ranked, &purchased, k).unwrap();
        if m.values() != brute_force(&ranked, &purchased, k) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{mismatches} of 1000 random cases differ from the reference"))
}

// 5, 6, 7

fn default_synthetic() -> Dataset {
    generate(&SynthConfig { rho: 0.9, ..Default::default() }).unwrap()
}

fn cross_bce() -> Experiment {
    Experiment { model: ModelSpec::Cross(ModelConfig::default()), ..Default::default() }
}

fn criterion_5(ds: &Dataset) -> Outcome {
    let t = Instant::now();
    let cross = run_experiment(&cross_bce(), ds).unwrap().report.means;
    let popular = Experiment {
        model: ModelSpec::Baseline { kind: BaselineKind::Popular, config: Default::default() },
        ..Default::default()
    };
    let base = run_experiment(&popular, ds).unwrap().report.means;
    let gap = cross.hr - base.hr;
    let (fast, time) = within(Duration::from_secs(15 * 60), t);
    verdict(
        gap >= 0.15 && fast,
        format!("HR@3 cross encode bce {:.3} vs popular {:.3}, gap {gap:.3} (>= 0.15); {time}", cross.hr, base.hr),
    )
}

fn criterion_6(ds: &Dataset) -> Outcome {
    let s = shuffle_study(&cross_bce(), ds, 5).unwrap();
    verdict(
        s.delta_hr.abs() < 0.02,
        format!(
            "HR@3 original {:.4}, shuffled mean {:.4} over trials [{}], delta {:+.4} (|delta| < 0.02)",
            s.original.means.hr,
            s.shuffled.hr,
            s.trials.iter().map(|r| format!("{:.4}", r.means.hr)).collect::<Vec<_>>().join(" "),
            s.delta_hr
        ),
    )
}

fn criterion_7() -> Outcome {
    let ds = generate(&SynthConfig { last_session_signal: true, ..Default::default() }).unwrap();
    let exp = Experiment {
        model: ModelSpec::Cross(ModelConfig { head: HeadKind::Attention, ..Default::default() }),
        ..Default::default()
    };
    let out = run_experiment(&exp, &ds).unwrap();
    let TrainedModel::Cross(m) = &out.model else { unreachable!() };
    let examples: Vec<TaskExample> = out
        .cases
        .test
        .iter()
        .map(|c| m.example(c, &out.prepared.dataset, out.prepared.split.validation_end).unwrap())
        .collect();
    let mut worst_sum: f64 = 0.0;
    for ex in &examples {
        let w = m.model.attention_weights(&ex.encoded, ex.features.as_deref()).unwrap();
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    let table = extract_attention(&m.model, &examples).unwrap();
    let mut ok = worst_sum < 1e-6;
    let mut rows = Vec::new();
    for (n, row) in table.rows.iter().filter(|(&n, _)| n >= 2) {
        let last = row[n - 1];
        let is_max = row.iter().all(|&w| w <= last);
        ok &= is_max;
        rows.push(format!(
            "{n} sessions ({} tasks): [{}]{}",
            table.counts[n],
            row.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>().join(" "),
            if is_max { "" } else { " last not max" }
        ));
    }
    verdict(ok, format!("max |row sum - 1| {worst_sum:.1e}; mean weights by position: {}", rows.join("; ")))
}

// 8

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0usize;
    let mut vacuous = 0usize;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=20);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        let out = apply_post_filter(&scores, &mask).unwrap();
        if !mask.iter().any(|&m| m) {
            vacuous += 1;
            violations += usize::from(out != scores);
            continue;
        }
        let eligible_before: Vec<usize> = rank(&scores).into_iter().filter(|&i| mask[i]).collect();
        let order = rank(&out);
        let n_eligible = eligible_before.len();
        if order[..n_eligible] != eligible_before[..] {
            violations += 1;
        }
        let worst = order[..n_eligible].iter().map(|&i| out[i]).fold(f64::INFINITY, f64::min);
        violations += (0..n).filter(|&i| !mask[i] && !(out[i] < worst)).count();
    }
    verdict(violations == 0, format!("{violations} violations over 10000 cases ({vacuous} with nothing eligible)"))
}

// 9

fn criterion_9() -> Outcome {
    let Some(dir) = std::env::var_os("CROSSREC_PUBLIC_DATA").map(PathBuf::from) else {
        return Outcome::Skip("set CROSSREC_PUBLIC_DATA to the public dataset directory".into());
    };
    let ds = match crossrec::dataio::ingest(&DatasetPaths::in_dir(&dir)) {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(format!("ingest: {e}")),
    };
    let exp = cross_bce();
    let threshold = fit_threshold(&ds).map(|f| f.threshold.days).unwrap_or(f64::NAN);
    let prepared = match prepare(&ds, &exp.prep) {
        Ok(p) => p,
        Err(e) => return Outcome::Fail(format!("prepare: {e}")),
    };
    let st = prepared.dataset.stats();
    let counts = [st.users, prepared.dataset.catalog.len(), st.purchase_events, st.sessions, st.actions];
    let expected = [44_434, 16, 53_757, 117_163, 1_256_156];
    let m = run_experiment(&exp, &ds).unwrap().report.means;
    verdict(
        counts == expected
            && (threshold - 10.0).abs() <= 1.0
            && (m.hr - 0.838).abs() <= 0.020
            && (m.mrr - 0.709).abs() <= 0.025,
        format!(
            "counts {counts:?} (expected {expected:?}), threshold {threshold:.2} days, HR@3 {:.3}, MRR@3 {:.3}",
            m.hr, m.mrr
        ),
    )
}

fn main() {
    let _ = env_logger::builder().is_test(true).try_init();
    let synthetic = default_synthetic();
    let checks: Vec<(u32, Box<dyn Fn() -> Outcome>)> = vec![
        (1, Box::new(criterion_1)),
        (2, Box::new(criterion_2)),
        (3, Box::new(criterion_3)),
        (4, Box::new(criterion_4)),
        (5, Box::new(|| criterion_5(&synthetic))),
        (6, Box::new(|| criterion_6(&synthetic))),
        (7, Box::new(criterion_7)),
        (8, Box::new(criterion_8)),
        (9, Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (n, check) in checks {
        let (tag, detail) = match check() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {n}: {tag}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
