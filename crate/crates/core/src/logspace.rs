//! Numerically guarded log-domain arithmetic.

pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// `ln(exp(a) + exp(b))` with `logsumexp(-inf, -inf) = -inf`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Log-sum-exp over a slice, max-shifted. Empty or all `-inf` input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// In-place log-softmax of a row of logits.
pub fn log_softmax_in_place(row: &mut [f64]) {
    let lse = log_sum_exp(row);
    for x in row.iter_mut() {
        *x -= lse;
    }
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    log_softmax_in_place(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_matches_direct_sum() {
        let a = 0.5f64;
        let b = 2.0f64;
        let direct = (a.exp() + b.exp()).ln();
        assert!((log_add(a, b) - direct).abs() < 1e-15);
        assert!((log_add(b, a) - direct).abs() < 1e-15);
    }

    #[test]
    fn log_add_large_arguments_do_not_overflow() {
        // 1232 + ln(e^2 + 1)
        let expected = 1232.0 + (2.0f64.exp() + 1.0).ln();
        assert!((log_add(1234.0, 1232.0) - expected).abs() < 1e-12);
        assert!((1234.0f64.exp() + 1232.0f64.exp()).ln().is_infinite());
    }

    #[test]
    fn log_zero_is_identity() {
        assert_eq!(log_add(LOG_ZERO, LOG_ZERO), LOG_ZERO);
        assert_eq!(log_add(LOG_ZERO, -3.0), -3.0);
        assert_eq!(log_sum_exp(&[]), LOG_ZERO);
        assert_eq!(log_sum_exp(&[LOG_ZERO, LOG_ZERO]), LOG_ZERO);
    }

    #[test]
    fn log_softmax_normalizes_and_is_shift_invariant() {
        let z = [0.3, -1.2, 4.0, 0.0];
        let a = log_softmax(&z);
        let total: f64 = a.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = z.iter().map(|x| x + 123.4).collect();
        let b = log_softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
