//! Scalar reductions used throughout the crate.
//!
//! Every reduction over units goes through [`ordered_sum`], which sorts its
//! terms before accumulating. The result therefore depends only on the
//! multiset of terms, so relabelling units permutes outputs bit-for-bit.

/// Compensated sum of `terms`, independent of their order.
pub fn ordered_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    // Neumaier's variant of Kahan summation.
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &t in terms.iter() {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

/// Order-independent weighted sum of vectors: `sum_j weights[j] * rows[j]`.
pub fn weighted_row_sum(weights: &[f64], rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut buf = Vec::with_capacity(weights.len());
    (0..dim)
        .map(|c| {
            buf.clear();
            buf.extend(weights.iter().zip(rows).map(|(w, r)| w * r[c]));
            ordered_sum(&mut buf)
        })
        .collect()
}

/// Max-shifted `log(sum_j exp(logits[j]))`. Returns `-inf` when every term is `-inf`.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    let mut terms: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    max + ordered_sum(&mut terms).ln()
}

/// Normalized softmax of `logits` computed with a max shift.
///
/// Returns `None` when no entry is finite (all mass is zero).
pub fn softmax(logits: &[f64]) -> Option<Vec<f64>> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let mut scratch = w.clone();
    let z = ordered_sum(&mut scratch);
    for x in &mut w {
        *x /= z;
    }
    Some(w)
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sup-norm of `a - b`.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_sum_is_permutation_invariant() {
        let a = [1e16, 1.0, -1e16, 3.5, 1e-3, -7.25];
        let mut x = a;
        let mut y = [a[3], a[0], a[5], a[1], a[4], a[2]];
        assert_eq!(ordered_sum(&mut x).to_bits(), ordered_sum(&mut y).to_bits());
        let mut z = a;
        assert!((ordered_sum(&mut z) + 2.749).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_survives_large_logits() {
        let l = [1234.0, 1232.0];
        let expected = 1232.0 + (2f64.exp() + 1.0).ln();
        assert!((log_sum_exp(&l) - expected).abs() < 1e-12);
        assert!((l[0].exp() + l[1].exp()).ln().is_infinite());
    }

    #[test]
    fn log_sum_exp_all_neg_inf() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn softmax_sums_to_one() {
        let w = softmax(&[-1e4, 0.0, 3.0, f64::NEG_INFINITY]).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(w[3], 0.0);
        assert!(softmax(&[f64::NEG_INFINITY]).is_none());
    }
}
