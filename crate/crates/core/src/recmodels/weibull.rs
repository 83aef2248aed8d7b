//! Discrete Weibull time-to-purchase distribution and the BCE loss, as
//! plain functions on values.

use crate::error::{Error, Result};
use crate::numcore::tape::{bce_value, clamped_exp, sigmoid, weibull_item_nll};

/// `(α, β) = (exp(o1), σ(o2))`, with the usual pre-activation clamp.
pub fn weibull_activation(o1: f64, o2: f64) -> (f64, f64) {
    (clamped_exp(o1), sigmoid(o2))
}

fn check_params(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0) || !(beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("Weibull parameters must be positive, got α={alpha}, β={beta}")));
    }
    Ok(())
}

/// `P(Y > y) = exp(-((y+1)/α)^β)`; `y = -1` gives 1.
pub fn weibull_tail(y: i64, alpha: f64, beta: f64) -> Result<f64> {
    check_params(alpha, beta)?;
    if y < -1 {
        return Err(Error::InvalidArgument(format!("tail at negative day {y}")));
    }
    Ok((-((y + 1) as f64 / alpha).powf(beta)).exp())
}

/// `P(Y = y) = exp(-(y/α)^β) - exp(-((y+1)/α)^β)` for `y ≥ 0`.
pub fn weibull_pmf(y: i64, alpha: f64, beta: f64) -> Result<f64> {
    check_params(alpha, beta)?;
    if y < 0 {
        return Err(Error::InvalidArgument(format!("pmf at negative day {y}")));
    }
    let a = (y as f64 / alpha).powf(beta);
    let b = ((y + 1) as f64 / alpha).powf(beta);
    Ok((-a).exp() * -(a - b).exp_m1())
}

/// Censored negative log-likelihood summed over items: `-ln pmf(y_k)` where
/// the purchase was observed (`u_k = 1`), `-ln P(Y > y_k)` otherwise.
pub fn loss_censored_weibull(alpha: &[f64], beta: &[f64], y: &[f64], u: &[f64]) -> Result<f64> {
    let n = alpha.len();
    if beta.len() != n || y.len() != n || u.len() != n {
        return Err(Error::Shape("Weibull loss inputs differ in length".into()));
    }
    Ok((0..n).map(|k| weibull_item_nll(alpha[k], beta[k], y[k], u[k]).0).sum())
}

/// Continuous-Weibull median `α (ln 2)^{1/β}`.
pub fn weibull_median(alpha: f64, beta: f64) -> f64 {
    alpha * std::f64::consts::LN_2.powf(1.0 / beta)
}

/// Item scores from Weibull parameters: the negated median time to purchase.
pub fn weibull_score(alpha: &[f64], beta: &[f64]) -> Vec<f64> {
    alpha.iter().zip(beta).map(|(&a, &b)| -weibull_median(a, b)).collect()
}

/// `-Σ_k [p_k ln p̂_k + (1-p_k) ln(1-p̂_k)]` with `p̂` clamped to `[1e-12, 1-1e-12]`.
pub fn loss_bce(probs: &[f64], target: &[f64]) -> Result<f64> {
    if probs.len() != target.len() {
        return Err(Error::Shape("BCE inputs differ in length".into()));
    }
    Ok(bce_value(probs, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_examples() {
        assert_eq!(weibull_activation(0.0, 0.0), (1.0, 0.5));
        assert!((weibull_activation(2f64.ln(), 0.0).0 - 2.0).abs() < 1e-15);
        assert!(weibull_activation(0.3, 0.0).0 > weibull_activation(0.2, 0.0).0);
    }

    #[test]
    fn pmf_and_tail_examples() {
        let e = std::f64::consts::E;
        assert!((weibull_pmf(0, 1.0, 1.0).unwrap() - (1.0 - 1.0 / e)).abs() < 1e-15);
        assert!((weibull_pmf(1, 2.0, 1.0).unwrap() - ((-0.5f64).exp() - (-1f64).exp())).abs() < 1e-15);
        assert!((weibull_pmf(1, 2.0, 1.0).unwrap() - 0.238651).abs() < 1e-6);
        assert!((weibull_tail(0, 1.0, 1.0).unwrap() - 1.0 / e).abs() < 1e-15);
        assert_eq!(weibull_tail(-1, 3.0, 0.4).unwrap(), 1.0);
        assert!(weibull_pmf(-1, 1.0, 1.0).is_err());
        assert!(weibull_tail(0, 0.0, 1.0).is_err());
    }

    #[test]
    fn loss_examples() {
        let l = loss_censored_weibull(&[1.0], &[1.0], &[0.0], &[1.0]).unwrap();
        assert!((l - 0.458675).abs() < 1e-6);
        assert!((l + (1.0 - (-1f64).exp()).ln()).abs() < 1e-14);
        let l = loss_censored_weibull(&[1.0], &[1.0], &[0.0], &[0.0]).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        let a = loss_censored_weibull(&[1.5], &[0.3], &[4.0], &[1.0]).unwrap();
        let b = loss_censored_weibull(&[0.7], &[0.8], &[2.0], &[0.0]).unwrap();
        let both = loss_censored_weibull(&[1.5, 0.7], &[0.3, 0.8], &[4.0, 2.0], &[1.0, 0.0]).unwrap();
        assert!((both - a - b).abs() < 1e-14);
    }

    #[test]
    fn score_examples() {
        assert!((weibull_median(1.0, 1.0) - 2f64.ln()).abs() < 1e-12);
        assert!((weibull_median(2.0, 0.5) - 0.960906).abs() < 1e-6);
        let s = weibull_score(&[1.0, 2.0], &[0.5, 0.5]);
        assert!(s[0] > s[1]);
    }

    #[test]
    fn bce_examples() {
        let k = 4;
        let half = vec![0.5; k];
        let l = loss_bce(&half, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((l - k as f64 * 2f64.ln()).abs() < 1e-12);
        let t = [0.0, 1.0, 0.0, 0.0];
        assert!(loss_bce(&t, &t).unwrap() < 1e-10 * k as f64);
    }
}
