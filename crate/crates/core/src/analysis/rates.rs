//! Theoretical envelopes and update budgets for random-scan CAVI.

use crate::error::{Error, Result};

/// `(1 − λ*/K)^n · gap0`, the expected-gap bound in the strongly convex case.
pub fn rate_bound_strong(n: u64, blocks: usize, lambda_star: f64, gap0: f64) -> Result<f64> {
    if !(lambda_star > 0.0 && lambda_star <= 1.0) {
        return Err(Error::Precondition(format!(
            "lambda* = {lambda_star} must lie in (0, 1]; use the convex-case bound"
        )));
    }
    if gap0 < 0.0 || blocks == 0 {
        return Err(Error::Precondition("gap0 ≥ 0 and K ≥ 1 required".into()));
    }
    let factor = 1.0 - lambda_star / blocks as f64;
    Ok(factor.powf(n as f64) * gap0)
}

/// `2KR²/(n + 2K)`, the expected-gap bound in the merely convex case.
pub fn rate_bound_convex(n: u64, blocks: usize, radius: f64) -> f64 {
    let k = blocks as f64;
    2.0 * k * radius * radius / (n as f64 + 2.0 * k)
}

/// Smallest `n` with `n ≥ (K/λ*)·log(gap0/(ε·δ))`; zero once `gap0 ≤ ε·δ`.
pub fn iterations_to_epsilon(
    blocks: usize,
    lambda_star: f64,
    gap0: f64,
    eps: f64,
    delta: f64,
) -> Result<u64> {
    if !(lambda_star > 0.0) {
        return Err(Error::Precondition("lambda* must be positive".into()));
    }
    if !(eps > 0.0 && delta > 0.0) {
        return Err(Error::Precondition("eps and delta must be positive".into()));
    }
    let target = eps * delta;
    if gap0 <= target {
        return Ok(0);
    }
    Ok((blocks as f64 / lambda_star * (gap0 / target).ln()).ceil() as u64)
}

/// Smallest `n` with `2KR²/(n + 2K) ≤ ε·δ`, i.e. `n ≥ 2K(R²/(ε·δ) − 1)`.
pub fn iterations_to_epsilon_convex(blocks: usize, radius: f64, eps: f64, delta: f64) -> Result<u64> {
    if !(eps > 0.0 && delta > 0.0) {
        return Err(Error::Precondition("eps and delta must be positive".into()));
    }
    let n = 2.0 * blocks as f64 * (radius * radius / (eps * delta) - 1.0);
    Ok(n.max(0.0).ceil() as u64)
}

/// Factor updates sufficient for deterministic-scan CAVI, `K²/λ*²·log(gap0/ε)`.
pub fn deterministic_scan_budget(blocks: usize, lambda_star: f64, gap0: f64, eps: f64) -> Result<u64> {
    if !(lambda_star > 0.0) {
        return Err(Error::Precondition("lambda* must be positive".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Precondition("eps must be positive".into()));
    }
    if gap0 <= eps {
        return Ok(0);
    }
    let k = blocks as f64;
    Ok((k * k / (lambda_star * lambda_star) * (gap0 / eps).ln()).ceil() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strong_bound() {
        assert_eq!(rate_bound_strong(0, 3, 0.4, 2.5).unwrap(), 2.5);
        assert_eq!(rate_bound_strong(1, 1, 1.0, 7.0).unwrap(), 0.0);
        let v = rate_bound_strong(4, 2, 0.5, 1.5).unwrap();
        assert!((v - 0.75f64.powi(4) * 1.5).abs() < 1e-15);
        assert!((v - 0.4746).abs() < 1e-4);
        assert!(rate_bound_strong(3, 2, 0.0, 1.0).is_err());
    }

    #[test]
    fn strong_bound_monotone() {
        let mut prev = f64::INFINITY;
        for n in 0..50 {
            let v = rate_bound_strong(n, 4, 0.3, 1.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
        let mut prev = f64::INFINITY;
        for i in 1..=10 {
            let v = rate_bound_strong(10, 4, i as f64 / 10.0, 1.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn convex_bound() {
        assert_eq!(rate_bound_convex(0, 4, 1.7), 1.7 * 1.7);
        assert_eq!(rate_bound_convex(18, 3, 2.0), 1.0);
        // n = 2K(R²/ε − 1) gives exactly ε
        let (k, r, eps) = (3usize, 2.0, 0.0625);
        let n = iterations_to_epsilon_convex(k, r, eps, 1.0).unwrap();
        assert!(rate_bound_convex(n, k, r) <= eps);
        assert!(rate_bound_convex(n - 1, k, r) > eps);
    }

    #[test]
    fn iteration_counts() {
        assert_eq!(iterations_to_epsilon(3, 0.5, 0.02, 0.1, 0.2).unwrap(), 0);
        assert_eq!(iterations_to_epsilon(2, 0.5, 1.0, 1e-3, 1.0).unwrap(), 28);
        let a = (2.0 / 0.5 * (1.0f64 / 1e-3).ln()).ceil();
        assert_eq!(a, 28.0);
        // linear in K before rounding
        let base = 3.0 / 0.25 * (5.0f64 / 1e-4).ln();
        assert_eq!(iterations_to_epsilon(3, 0.25, 5.0, 1e-4, 1.0).unwrap(), base.ceil() as u64);
        assert_eq!(iterations_to_epsilon(6, 0.25, 5.0, 1e-4, 1.0).unwrap(), (2.0 * base).ceil() as u64);
        assert!(iterations_to_epsilon(2, 0.0, 1.0, 1e-3, 1.0).is_err());
        assert!(iterations_to_epsilon(2, 0.5, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn ds_budget_is_k_over_lambda_larger() {
        let rs = 10.0 / 0.05 * (2.0f64 / 1e-3).ln();
        let ds = deterministic_scan_budget(10, 0.05, 2.0, 1e-3).unwrap() as f64;
        assert!((ds / rs - 10.0 / 0.05).abs() < 1e-6 * ds);
    }
}
