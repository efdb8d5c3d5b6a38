//! Small, numerically stable scalar helpers shared across the crate.

/// Max-shifted log-sum-exp. Returns `-inf` for an empty slice or when every
/// entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights in place so that their exponentials sum to one;
/// returns the log-normalizer that was subtracted.
pub fn log_normalize(values: &mut [f64]) -> f64 {
    let lse = log_sum_exp(values);
    for v in values.iter_mut() {
        *v -= lse;
    }
    lse
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(e^x + e^-x)`, the per-coordinate log-partition of a ±1 spin.
pub fn log_two_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p()
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

pub fn log_softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| v - lse).collect()
}

/// `ln(n!)` via the log-gamma function.
pub fn ln_factorial(n: f64) -> f64 {
    libm::lgamma(n + 1.0)
}

/// KL divergence between two distributions given by log-probabilities over
/// the same finite support. Terms with zero mass under `log_p` contribute 0;
/// mass where `log_q` is `-inf` yields `+inf`.
pub fn kl_from_logs(log_p: &[f64], log_q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for (&lp, &lq) in log_p.iter().zip(log_q) {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        if lq == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        kl += lp.exp() * (lp - lq);
    }
    kl.max(0.0)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_large_and_empty() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for x in [-30.0, -2.0, 0.0, 0.5, 3.0, 30.0] {
            let naive = (1.0f64 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn spin_partition_matches_naive() {
        for x in [-3.0, -0.1, 0.0, 1.7] {
            let naive = (f64::exp(x) + f64::exp(-x)).ln();
            assert!((log_two_cosh(x) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn ln_factorial_small_values() {
        assert!(ln_factorial(0.0).abs() < 1e-12);
        assert!((ln_factorial(5.0) - 120f64.ln()).abs() < 1e-12);
    }
}
