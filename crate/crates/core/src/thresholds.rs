//! Closed-form and numerically optimised test budgets.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::designs::tests_per_item;
use crate::error::{Error, Result};
use crate::model::check_prevalence;

/// Default constant for the very-present threshold and the extraction stop ratio.
pub const DEFAULT_XI: f64 = 0.1;

/// Asymptotic value of `c_p` as `p -> 0`: `(ln 2)^2`.
pub const C_P_ASYMPTOTIC: f64 = LN_2 * LN_2;

/// Largest `j` accepted by [`phi`].
pub const PHI_MAX_J: usize = 60;

fn check_k(n: f64, k: f64, upper: f64) -> Result<()> {
    if !(k >= 1.0 && k <= upper) {
        return Err(Error::param(format!("k = {k} must lie in [1, {upper}] for n = {n}")));
    }
    Ok(())
}

/// `max{ k log2(n/k), k log2(k) / ln 2 }`.
pub fn t_star(n: f64, k: f64) -> Result<f64> {
    check_k(n, k, n)?;
    let counting = k * (n / k).log2();
    let disguise = k * k.log2() / LN_2;
    Ok(counting.max(disguise))
}

/// `min{ T*(n, k), n }`, the optimal number of tests for `k <= n/2`.
pub fn optimal_tests(n: f64, k: f64) -> Result<f64> {
    check_k(n, k, n / 2.0)?;
    Ok(t_star(n, k)?.min(n))
}

/// Minimum of `x ln(1 - q^(x-1))` over the integer range and its minimiser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisguiseExponent {
    pub value: f64,
    pub argmin: usize,
}

/// The per-test disguise exponent `min_{x = 2..=n} x ln(1 - q^(x-1))`,
/// found by scanning every `x` (unimodality is not assumed).
pub fn calligraphic_l(p: f64, n: usize) -> Result<DisguiseExponent> {
    check_prevalence(p)?;
    if n < 2 {
        return Err(Error::param(format!("disguise exponent needs n >= 2, got {n}")));
    }
    let ln_q = (1.0 - p).ln();
    let mut best = DisguiseExponent { value: f64::INFINITY, argmin: 2 };
    for x in 2..=n {
        let v = disguise_objective(ln_q, x);
        if v < best.value {
            best = DisguiseExponent { value: v, argmin: x };
        }
    }
    Ok(best)
}

/// `x ln(1 - q^(x-1))` given `ln q`.
pub(crate) fn disguise_objective(ln_q: f64, x: usize) -> f64 {
    let q_pow = ((x - 1) as f64 * ln_q).exp();
    x as f64 * (-q_pow).ln_1p()
}

/// `c_p = -L(p) p`, evaluated exactly with a full scan.
pub fn c_p_exact(p: f64, n: usize) -> Result<f64> {
    Ok(-calligraphic_l(p, n)?.value * p)
}

/// `-d ln(1 - e^(-d))`.
pub fn d_objective(d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::param(format!("d = {d} must be positive")));
    }
    Ok(-d * (-(-d).exp()).ln_1p())
}

/// Maximiser and maximum of [`d_objective`] by golden-section search on
/// `[1e-6, 20]` down to a bracket of width `1e-9`.
pub fn d_star() -> (f64, f64) {
    let f = |d: f64| d_objective(d).expect("bracket is positive");
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (1e-6, 20.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-9 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = (a + b) / 2.0;
    (x, f(x))
}

/// `n p (1 - 4 xi) ln n / ((1 + xi) c_p)`: below this many tests the expected
/// number of independently disguised items exceeds `n^xi`.
pub fn converse_budget(n: f64, p: f64, xi: f64, c_p: f64) -> Result<f64> {
    if !(0.0..=0.25).contains(&xi) {
        return Err(Error::param(format!("xi = {xi} must lie in [0, 1/4]")));
    }
    if !(c_p > 0.0) {
        return Err(Error::param(format!("c_p = {c_p} must be positive")));
    }
    Ok(n * p * (1.0 - 4.0 * xi) * n.ln() / ((1.0 + xi) * c_p))
}

/// Parameter schedule of the DD analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub epsilon: f64,
    pub delta: f64,
    pub xi: f64,
    #[serde(rename = "L")]
    pub tests_per_item: usize,
    pub w_minus: f64,
    pub w_plus: f64,
    pub g_star: f64,
    pub z: f64,
    /// `delta <= 1/4`, the range where the PD-non-defective tail bound applies.
    pub psi3_valid: bool,
}

/// `delta = 2 epsilon / 3`, `w± = (T/2)(1 ± delta)`, `g* = n (1/2 + delta)^L`.
pub fn dd_params(n: usize, k: f64, num_tests: usize, epsilon: f64) -> Result<RateParams> {
    if num_tests < 1 {
        return Err(Error::param("dd_params needs T >= 1"));
    }
    if !(k >= 1.0 && k < n as f64) {
        return Err(Error::param(format!("k = {k} must lie in [1, n) for n = {n}")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::param(format!("epsilon = {epsilon} must be non-negative")));
    }
    let l = tests_per_item(num_tests, k);
    let delta = 2.0 * epsilon / 3.0;
    let half = num_tests as f64 / 2.0;
    Ok(RateParams {
        epsilon,
        delta,
        xi: DEFAULT_XI,
        tests_per_item: l,
        w_minus: half * (1.0 - delta),
        w_plus: half * (1.0 + delta),
        g_star: n as f64 * (0.5 + delta).powi(l as i32),
        z: 2.0 / (1.0 / (1.0 - k / n as f64)).ln(),
        psi3_valid: delta <= 0.25,
    })
}

/// Inclusion-exclusion sum `sum_{l=0}^{j} (-1)^l C(j,l) (1 - l s)^V`: the
/// probability that each of `j` mutually exclusive coupon types, each drawn
/// with probability `s` per trial, appears within `V` trials.
pub fn phi(j: usize, s: f64, v: u64) -> Result<f64> {
    if j > PHI_MAX_J {
        return Err(Error::Capacity { what: "phi order j", actual: j, limit: PHI_MAX_J });
    }
    if !(s >= 0.0) || j as f64 * s > 1.0 + 1e-12 {
        return Err(Error::param(format!("phi needs 0 <= j s <= 1, got j = {j}, s = {s}")));
    }
    // Neumaier-compensated summation of exact-binomial terms.
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut binom: u128 = 1;
    for l in 0..=j {
        if l > 0 {
            binom = binom * (j - l + 1) as u128 / l as u128;
        }
        let base = (1.0 - l as f64 * s).max(0.0);
        let mag = binom as f64 * pow_u64(base, v);
        let term = if l % 2 == 0 { mag } else { -mag };
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    Ok((sum + comp).clamp(0.0, 1.0))
}

fn pow_u64(base: f64, exp: u64) -> f64 {
    if exp <= i32::MAX as u64 {
        base.powi(exp as i32)
    } else {
        base.powf(exp as f64)
    }
}

/// `z = 2 / ln(1/q)`.
pub fn z_threshold(p: f64) -> Result<f64> {
    check_prevalence(p)?;
    Ok(2.0 / (1.0 / (1.0 - p)).ln())
}

/// `z ln n`: larger negative tests have probability at most `1/n` overall.
pub fn max_negative_test_size(p: f64, n: usize) -> Result<f64> {
    Ok(z_threshold(p)? * (n as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_star_examples() {
        assert!((t_star(16.0, 4.0).unwrap() - 8.0 / LN_2).abs() < 1e-12);
        assert!((t_star(16.0, 4.0).unwrap() - 11.5416).abs() < 1e-4);
        assert!((t_star(1024.0, 1.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((t_star(16.0, 2.0).unwrap() - 6.0).abs() < 1e-12);
        assert!(t_star(16.0, 0.5).is_err());
        assert!(t_star(16.0, 17.0).is_err());
    }

    #[test]
    fn t_star_is_branch_max() {
        for n in [10.0f64, 100.0, 1e4] {
            let mut k = 1.0f64;
            while k <= n {
                let a = k * (n / k).log2();
                let b = k * k.log2() / LN_2;
                assert_eq!(t_star(n, k).unwrap(), a.max(b));
                // The second branch wins exactly when log2(k)/ln 2 >= log2(n/k).
                assert_eq!(b >= a, k.log2() / LN_2 >= (n / k).log2());
                k += 1.0;
            }
        }
    }

    #[test]
    fn optimal_tests_examples() {
        assert_eq!(optimal_tests(16.0, 8.0).unwrap(), 16.0);
        assert!((optimal_tests(1024.0, 1.0).unwrap() - 10.0).abs() < 1e-12);
        assert!(optimal_tests(16.0, 9.0).is_err());
    }

    #[test]
    fn optimal_tests_hits_n_exactly_when_t_star_does() {
        // At finite n the individual-testing regime is t_star >= n, i.e.
        // k log2(k) / ln 2 >= n once the second branch dominates.
        for n in [100usize, 1000, 10_000] {
            for k in 1..=n / 2 {
                let (nf, kf) = (n as f64, k as f64);
                let opt = optimal_tests(nf, kf).unwrap();
                assert_eq!(opt == nf, t_star(nf, kf).unwrap() >= nf, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn calligraphic_l_half() {
        let l = calligraphic_l(0.5, 10).unwrap();
        assert_eq!(l.argmin, 2);
        assert!((l.value + 2.0 * LN_2).abs() < 1e-12);
        assert!((calligraphic_l(0.5, 2).unwrap().value + 1.386294).abs() < 1e-6);
    }

    #[test]
    fn calligraphic_l_small_p() {
        let c = c_p_exact(0.01, 10_000).unwrap();
        assert!((c - C_P_ASYMPTOTIC).abs() / C_P_ASYMPTOTIC < 0.05, "c_p = {c}");
        for p in [0.1, 0.01, 0.001] {
            let l = calligraphic_l(p, 100_000).unwrap();
            let scaled = l.argmin as f64 * p;
            assert!((0.5..=1.0).contains(&scaled), "p={p}: x*p = {scaled}");
        }
    }

    #[test]
    fn calligraphic_l_is_a_minimum() {
        let ln_q = (0.9f64).ln();
        let l = calligraphic_l(0.1, 500).unwrap();
        for x in 2..=500 {
            assert!(l.value <= disguise_objective(ln_q, x));
        }
        assert!(calligraphic_l(0.1, 1).is_err());
        assert!(calligraphic_l(0.6, 10).is_err());
    }

    #[test]
    fn d_objective_values() {
        assert!((d_objective(LN_2).unwrap() - C_P_ASYMPTOTIC).abs() < 1e-15);
        assert!(d_objective(1e-9).unwrap() < 1e-6);
        assert!(d_objective(50.0).unwrap() < 1e-18);
        assert!(d_objective(0.0).is_err());
        let (x, v) = d_star();
        assert!((x - LN_2).abs() < 1e-6);
        assert!((v - C_P_ASYMPTOTIC).abs() < 1e-9);
    }

    #[test]
    fn converse_budget_values() {
        let (n, p) = (1e4, 0.01);
        let b = converse_budget(n, p, 0.0, C_P_ASYMPTOTIC).unwrap();
        assert!((b - n * p * n.log2() / LN_2).abs() < 1e-9);
        assert_eq!(converse_budget(n, p, 0.25, C_P_ASYMPTOTIC).unwrap(), 0.0);
        let c = c_p_exact(p, 10_000).unwrap();
        let b = converse_budget(n, p, 0.05, c).unwrap();
        assert!(b > 0.0 && b < n);
        assert!(converse_budget(n, p, 0.3, c).is_err());
        assert!(converse_budget(n, p, -0.1, c).is_err());
    }

    #[test]
    fn dd_params_example() {
        let r = dd_params(10_000, 100.0, 1000, 0.3).unwrap();
        assert_eq!(r.tests_per_item, 6);
        assert!((r.delta - 0.2).abs() < 1e-15);
        assert!((r.w_minus - 400.0).abs() < 1e-9);
        assert!((r.w_plus - 600.0).abs() < 1e-9);
        assert!((r.g_star - 1e4 * 0.7f64.powi(6)).abs() < 1e-9);
        assert!(r.psi3_valid);
        let z = 2.0 / (1.0 / 0.99f64).ln();
        assert!((r.z - z).abs() < 1e-9);
    }

    #[test]
    fn dd_params_edges() {
        let r = dd_params(100, 10.0, 50, 0.0).unwrap();
        assert_eq!(r.delta, 0.0);
        assert_eq!(r.w_minus, 25.0);
        assert_eq!(r.w_plus, 25.0);
        assert!(!dd_params(100, 10.0, 50, 0.6).unwrap().psi3_valid);
        assert!(dd_params(100, 10.0, 0, 0.1).is_err());
        assert!(dd_params(100, 0.5, 10, 0.1).is_err());
    }

    #[test]
    fn dd_params_round_trip() {
        let mut last = f64::INFINITY;
        for t in (100..5000).step_by(100) {
            let r = dd_params(1000, 30.0, t, 0.2).unwrap();
            assert!((r.w_minus + r.w_plus - t as f64).abs() < 1e-9);
            assert!(r.g_star <= last);
            last = r.g_star;
        }
        let a = dd_params(1000, 30.0, 100, 0.2).unwrap();
        let b = dd_params(1000, 30.0, 1000, 0.2).unwrap();
        assert!(b.tests_per_item > a.tests_per_item && b.g_star < a.g_star);
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0, 0.3, 7).unwrap(), 1.0);
        assert!((phi(2, 0.5, 2).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(phi(1, 0.5, 0).unwrap(), 0.0);
        assert!((phi(1, 0.25, 3).unwrap() - (1.0 - 0.75f64.powi(3))).abs() < 1e-15);
        assert!(phi(3, 0.5, 2).is_err());
        assert!(phi(61, 0.001, 2).is_err());
    }

    #[test]
    fn phi_matches_coupon_recursion_at_depth() {
        // Counting DP over the number of distinct types seen.
        fn dp(j: usize, s: f64, v: u64) -> f64 {
            let mut dist = vec![0.0; j + 1];
            dist[0] = 1.0;
            for _ in 0..v {
                let mut next = vec![0.0; j + 1];
                for (seen, &m) in dist.iter().enumerate() {
                    let new = (j - seen) as f64 * s;
                    next[seen] += m * (1.0 - new);
                    if seen < j {
                        next[seen + 1] += m * new;
                    }
                }
                dist = next;
            }
            dist[j]
        }
        for j in [1usize, 5, 10, 15] {
            for v in [10u64, 100, 400] {
                let s = 1.0 / (j as f64 * 1.5);
                assert!((phi(j, s, v).unwrap() - dp(j, s, v)).abs() < 1e-9, "j={j} v={v}");
            }
        }
    }

    #[test]
    fn z_values() {
        assert!((z_threshold(0.5).unwrap() - 2.0 / LN_2).abs() < 1e-12);
        assert!((z_threshold(0.5).unwrap() - 2.8854).abs() < 1e-4);
        let p = 1e-6;
        assert!((z_threshold(p).unwrap() * p / 2.0 - 1.0).abs() < 1e-5);
        for (p, n) in [(0.5, 100usize), (0.1, 1000), (0.3, 12345)] {
            let size = max_negative_test_size(p, n).unwrap();
            let prob = (1.0 - p).powf(size);
            assert!((prob - (n as f64).powi(-2)).abs() < 1e-12 * (n as f64).powi(-2) * 1e3);
        }
    }
}
