//! Task segmentation: a two-component Gaussian mixture over log inter-session
//! times gives the inactivity threshold that separates tasks.

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, PurchaseEvent, Session, UserId, SECONDS_PER_DAY};
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;
const MIN_STDEV: f64 = 1e-6;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gmm2 {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub stdevs: [f64; 2],
}

fn log_normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

impl Gmm2 {
    /// Log of `w_k · N(x; μ_k, σ_k)`.
    pub fn log_weighted_density(&self, k: usize, x: f64) -> f64 {
        self.weights[k].ln() + log_normal_pdf(x, self.means[k], self.stdevs[k])
    }

    pub fn log_likelihood(&self, xs: &[f64]) -> f64 {
        xs.iter().map(|&x| log_add(self.log_weighted_density(0, x), self.log_weighted_density(1, x))).sum()
    }

    /// Posterior probability of each component for `x`.
    pub fn responsibilities(&self, x: f64) -> [f64; 2] {
        let (a, b) = (self.log_weighted_density(0, x), self.log_weighted_density(1, x));
        let z = log_add(a, b);
        [(a - z).exp(), (b - z).exp()]
    }

    fn canonical(mut self) -> Self {
        if self.means[0] > self.means[1] {
            self.weights.swap(0, 1);
            self.means.swap(0, 1);
            self.stdevs.swap(0, 1);
        }
        self
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub gmm: Gmm2,
    /// Log-likelihood before each M-step, ending with the final value.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Whether a collapsed component had to be restarted.
    pub reinitialized: bool,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Fits two Gaussians by EM, starting from a split at the median. Stops when
/// the log-likelihood improves by less than `tol` or after `max_iter`
/// iterations. A component whose deviation falls below 1e-6 is restarted
/// once from the pooled statistics; a second collapse is an error.
pub fn fit_gmm_em(xs: &[f64], max_iter: usize, tol: f64) -> Result<EmFit> {
    if max_iter == 0 || !(tol > 0.0) {
        return Err(Error::InvalidArgument("EM needs max_iter ≥ 1 and tol > 0".into()));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.first() == sorted.last() {
        return Err(Error::InvalidArgument("EM needs at least two distinct values".into()));
    }
    let half = sorted.len() / 2;
    let (lo, hi) = sorted.split_at(half);
    let (m0, s0) = mean_sd(lo);
    let (m1, s1) = mean_sd(hi);
    let (pooled_mean, pooled_sd) = mean_sd(xs);
    let mut g = Gmm2 {
        weights: [lo.len() as f64 / xs.len() as f64, hi.len() as f64 / xs.len() as f64],
        means: [m0, m1],
        stdevs: [s0, s1],
    };
    let mut reinitialized = false;
    let restart = |g: &mut Gmm2, k: usize, reinitialized: &mut bool| -> Result<()> {
        if *reinitialized {
            return Err(Error::DegenerateComponent(format!(
                "component {} collapsed twice (mean {:.4})",
                k + 1,
                g.means[k]
            )));
        }
        *reinitialized = true;
        log::warn!("mixture component {} collapsed; restarting it", k + 1);
        let sign = if k == 0 { -1.0 } else { 1.0 };
        g.means[k] = pooled_mean + sign * pooled_sd;
        g.stdevs[k] = pooled_sd;
        g.weights = [0.5, 0.5];
        Ok(())
    };
    for k in 0..2 {
        if g.stdevs[k] < MIN_STDEV {
            restart(&mut g, k, &mut reinitialized)?;
        }
    }

    let n = xs.len() as f64;
    let mut lls = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut resp = vec![[0.0; 2]; xs.len()];
    loop {
        // E-step
        let mut ll = 0.0;
        for (r, &x) in resp.iter_mut().zip(xs) {
            let (a, b) = (g.log_weighted_density(0, x), g.log_weighted_density(1, x));
            let z = log_add(a, b);
            *r = [(a - z).exp(), (b - z).exp()];
            ll += z;
        }
        if let Some(&prev) = lls.last() {
            if ll - prev < tol {
                lls.push(ll);
                converged = true;
                break;
            }
        }
        lls.push(ll);
        if iterations == max_iter {
            break;
        }
        iterations += 1;
        // M-step
        for k in 0..2 {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            let mu = resp.iter().zip(xs).map(|(r, x)| r[k] * x).sum::<f64>() / nk;
            let var = resp.iter().zip(xs).map(|(r, x)| r[k] * (x - mu).powi(2)).sum::<f64>() / nk;
            g.weights[k] = nk / n;
            g.means[k] = mu;
            g.stdevs[k] = var.sqrt();
        }
        for k in 0..2 {
            if !(g.stdevs[k] >= MIN_STDEV) || !(g.weights[k] > 0.0) {
                restart(&mut g, k, &mut reinitialized)?;
                lls.clear();
            }
        }
    }
    Ok(EmFit { gmm: g.canonical(), log_likelihood: lls, iterations, converged, reinitialized })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskThreshold {
    pub days: f64,
    /// Natural log of the threshold in seconds.
    pub log_seconds: f64,
}

impl TaskThreshold {
    pub fn from_days(days: f64) -> Result<Self> {
        if !(days > 0.0) || !days.is_finite() {
            return Err(Error::config("threshold_days", "must be positive"));
        }
        Ok(TaskThreshold { days, log_seconds: (days * SECONDS_PER_DAY as f64).ln() })
    }

    pub fn seconds(&self) -> f64 {
        self.days * SECONDS_PER_DAY as f64
    }
}

/// The point between the two means where the weighted densities are equal.
pub fn intersection_threshold(g: &Gmm2) -> Result<TaskThreshold> {
    let [m1, m2] = g.means;
    let [s1, s2] = g.stdevs;
    if !(m1 < m2) {
        return Err(Error::NotSeparable);
    }
    // f(x) = ln(w1 N1) - ln(w2 N2) = a x² + b x + c
    let (v1, v2) = (s1 * s1, s2 * s2);
    let a = 0.5 / v2 - 0.5 / v1;
    let b = m1 / v1 - m2 / v2;
    let c = m2 * m2 / (2.0 * v2) - m1 * m1 / (2.0 * v1) + (g.weights[0] * s2 / (g.weights[1] * s1)).ln();
    let inside = |x: f64| x > m1 && x < m2;
    let mut roots = Vec::new();
    if a.abs() <= 1e-14 * (0.5 / v1).max(0.5 / v2) {
        if b != 0.0 {
            roots.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            roots.push(q / a);
            if q != 0.0 {
                roots.push(c / q);
            }
        }
    }
    let mid = 0.5 * (m1 + m2);
    let x = roots
        .into_iter()
        .filter(|&x| inside(x))
        .min_by(|p, q| (p - mid).abs().total_cmp(&(q - mid).abs()))
        .ok_or(Error::NotSeparable)?;
    Ok(TaskThreshold { days: x.exp() / SECONDS_PER_DAY as f64, log_seconds: x })
}

/// Start-time differences in seconds between consecutive sessions.
pub fn inter_session_times(sessions: &[Session]) -> Vec<i64> {
    sessions.windows(2).map(|w| w[1].start - w[0].start).collect()
}

/// `ln(max(Δ, 1 s))` for every consecutive session pair of every user.
pub fn pooled_log_times(dataset: &Dataset) -> Vec<f64> {
    dataset.users.iter().flat_map(|u| inter_session_times(&u.sessions)).map(|d| (d.max(1) as f64).ln()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub em: EmFit,
    pub threshold: TaskThreshold,
    pub samples: usize,
}

/// Fits the mixture to all users' inter-session times and derives the threshold.
pub fn fit_threshold(dataset: &Dataset) -> Result<ThresholdFit> {
    let xs = pooled_log_times(dataset);
    let em = fit_gmm_em(&xs, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    let threshold = intersection_threshold(&em.gmm)?;
    Ok(ThresholdFit { em, threshold, samples: xs.len() })
}

/// Sessions leading to one purchase event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub user: UserId,
    /// Time-ordered, non-empty.
    pub sessions: Vec<Session>,
    pub purchase: PurchaseEvent,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Partition of the user's sessions into chains.
    pub chains: Vec<Vec<Session>>,
    pub tasks: Vec<Task>,
    pub dropped_purchases: usize,
}

/// Groups a user's sessions into chains joined by gaps of at most
/// `threshold_seconds`, and links every purchase to the chain whose last
/// session started before it. A purchase closes its chain; further purchases
/// with no new session reuse the chain just closed. Purchases preceding all
/// sessions are dropped.
pub fn segment_tasks(sessions: &[Session], purchases: &[PurchaseEvent], threshold_seconds: f64) -> Segmentation {
    let mut out = Segmentation::default();
    let mut purchases: Vec<&PurchaseEvent> = purchases.iter().collect();
    purchases.sort_by_key(|p| p.time);
    let mut next_purchase = 0;
    let mut current: Vec<Session> = Vec::new();
    // Chain index most recently closed by a purchase.
    let mut closed: Option<usize> = None;

    let attach = |p: &PurchaseEvent, current: &mut Vec<Session>, closed: &mut Option<usize>, out: &mut Segmentation| {
        if !current.is_empty() {
            out.chains.push(std::mem::take(current));
            *closed = Some(out.chains.len() - 1);
        }
        match *closed {
            Some(c) => {
                out.tasks.push(Task { user: p.user.clone(), sessions: out.chains[c].clone(), purchase: p.clone() })
            }
            None => out.dropped_purchases += 1,
        }
    };

    for s in sessions {
        while next_purchase < purchases.len() && purchases[next_purchase].time <= s.start {
            attach(purchases[next_purchase], &mut current, &mut closed, &mut out);
            next_purchase += 1;
        }
        if current.last().is_some_and(|last| (s.start - last.start) as f64 > threshold_seconds) {
            out.chains.push(std::mem::take(&mut current));
        }
        current.push(s.clone());
    }
    for p in &purchases[next_purchase..] {
        attach(p, &mut current, &mut closed, &mut out);
    }
    if !current.is_empty() {
        out.chains.push(current);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const DAY: i64 = SECONDS_PER_DAY;

    fn session(id: &str, day: i64) -> Session {
        Session { id: id.into(), user: "u".into(), start: day * DAY, actions: Vec::new() }
    }

    fn buy(t: i64) -> PurchaseEvent {
        PurchaseEvent { user: "u".into(), time: t, items: vec![0] }
    }

    fn ids(chain: &[Session]) -> Vec<&str> {
        chain.iter().map(|s| s.id.as_str()).collect()
    }

    #[test]
    fn inter_session_examples() {
        let ss = [session("a", 0), session("b", 3), session("c", 20)];
        assert_eq!(inter_session_times(&ss), vec![3 * DAY, 17 * DAY]);
        assert!(inter_session_times(&ss[..1]).is_empty());
        assert_eq!(inter_session_times(&[session("a", 1), session("b", 1)]), vec![0]);
    }

    #[test]
    fn chains_follow_threshold() {
        let ss = [session("s1", 0), session("s2", 3), session("s3", 20)];
        let seg = segment_tasks(&ss, &[], 10.0 * DAY as f64);
        assert_eq!(seg.chains.iter().map(|c| ids(c)).collect::<Vec<_>>(), vec![vec!["s1", "s2"], vec!["s3"]]);
        let seg = segment_tasks(&ss, &[], 20.0 * DAY as f64);
        assert_eq!(seg.chains.len(), 1);
    }

    #[test]
    fn purchase_closes_chain() {
        let ss = [session("s1", 0), session("s2", 3), session("s3", 5)];
        let seg = segment_tasks(&ss, &[buy(4 * DAY)], 10.0 * DAY as f64);
        assert_eq!(seg.tasks.len(), 1);
        assert_eq!(ids(&seg.tasks[0].sessions), vec!["s1", "s2"]);
        assert_eq!(seg.chains.iter().map(|c| ids(c)).collect::<Vec<_>>(), vec![vec!["s1", "s2"], vec!["s3"]]);
    }

    #[test]
    fn early_purchase_dropped_and_repeat_purchase_shares_chain() {
        let ss = [session("s1", 1), session("s2", 3)];
        let seg = segment_tasks(&ss, &[buy(0), buy(4 * DAY), buy(5 * DAY)], 10.0 * DAY as f64);
        assert_eq!(seg.dropped_purchases, 1);
        assert_eq!(seg.tasks.len(), 2);
        assert_eq!(seg.tasks[0].sessions, seg.tasks[1].sessions);
    }

    #[test]
    fn intersection_examples() {
        let g = Gmm2 { weights: [0.5, 0.5], means: [0.0, 5.0], stdevs: [1.0, 1.0] };
        assert!((intersection_threshold(&g).unwrap().log_seconds - 2.5).abs() < 1e-12);
        let g = Gmm2 { weights: [0.5, 0.5], means: [0.0, 4.0], stdevs: [1.0, 2.0] };
        let x = intersection_threshold(&g).unwrap().log_seconds;
        assert!(x > 0.0 && x < 4.0);
        let d = g.log_weighted_density(0, x).exp() - g.log_weighted_density(1, x).exp();
        assert!(d.abs() < 1e-9);
        let g = Gmm2 { weights: [0.5, 0.5], means: [1.0, 1.0], stdevs: [1.0, 1.0] };
        assert!(matches!(intersection_threshold(&g), Err(Error::NotSeparable)));
    }

    #[test]
    fn em_recovers_two_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let jitter = Normal::new(0.0, 1e-3).unwrap();
        let xs: Vec<f64> = (0..400).map(|i| if i % 2 == 0 { 1.0 } else { 6.0 } + jitter.sample(&mut rng)).collect();
        let fit = fit_gmm_em(&xs, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert!((fit.gmm.means[0] - 1.0).abs() < 1e-2);
        assert!((fit.gmm.means[1] - 6.0).abs() < 1e-2);
    }

    #[test]
    fn em_log_likelihood_monotone_and_responsibilities_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (a, b) = (Normal::new(0.0, 1.0).unwrap(), Normal::new(3.0, 0.7).unwrap());
        let xs: Vec<f64> =
            (0..2000).map(|i| if i % 3 == 0 { b.sample(&mut rng) } else { a.sample(&mut rng) }).collect();
        let fit = fit_gmm_em(&xs, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert!(fit.converged);
        assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        for &x in xs.iter().take(100) {
            let r = fit.gmm.responsibilities(x);
            assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn em_rejects_constant_sample() {
        assert!(fit_gmm_em(&[2.0; 10], 10, 1e-8).is_err());
    }
}
