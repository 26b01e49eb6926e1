use super::NormalcyError;

/// Upper binomial tail `P[X >= k]` for `X ~ Binomial(n, q)`, summed in log space.
pub fn binomial_tail(n: u64, k: u64, q: f64) -> Result<f64, NormalcyError> {
    if k > n {
        return Err(NormalcyError::Domain(format!("k = {k} exceeds n = {n}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(NormalcyError::Domain(format!("q = {q} outside (0, 1)")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let (lq, lp) = (q.ln(), (-q).ln_1p());
    // log C(n, k) built as a running sum of log ratios
    let mut log_c: f64 = (0..k).map(|j| ((n - j) as f64).ln() - ((j + 1) as f64).ln()).sum();
    let mut terms = Vec::with_capacity((n - k + 1) as usize);
    for i in k..=n {
        terms.push(log_c + i as f64 * lq + (n - i) as f64 * lp);
        if i < n {
            log_c += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln()).exp().min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct summation with exact integer binomial coefficients.
    fn direct(n: u64, k: u64, q: f64) -> f64 {
        let mut c = vec![1u128; 1];
        for _ in 0..n {
            let mut next = vec![1u128; c.len() + 1];
            for i in 1..c.len() {
                next[i] = c[i - 1] + c[i];
            }
            c = next;
        }
        (k..=n)
            .map(|i| c[i as usize] as f64 * q.powi(i as i32) * (1.0 - q).powi((n - i) as i32))
            .sum()
    }

    #[test]
    fn edge_values() {
        assert_eq!(binomial_tail(10, 0, 0.3).unwrap(), 1.0);
        assert!((binomial_tail(1, 1, 0.05).unwrap() - 0.05).abs() < 1e-15);
        // 1 - 0.9^5 - 5*0.1*0.9^4 = 0.08146
        assert!((binomial_tail(5, 2, 0.1).unwrap() - 0.08146).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(binomial_tail(3, 4, 0.1).is_err());
        assert!(binomial_tail(3, 1, 0.0).is_err());
        assert!(binomial_tail(3, 1, 1.0).is_err());
        assert!(binomial_tail(3, 1, f64::NAN).is_err());
    }

    #[test]
    fn matches_direct_summation_small_n() {
        for q in [0.01, 0.05, 0.1, 0.37] {
            for n in 0..=30 {
                let mut prev = f64::INFINITY;
                for k in 0..=n {
                    let v = binomial_tail(n, k, q).unwrap();
                    assert!((v - direct(n, k, q)).abs() <= 1e-12, "n={n} k={k} q={q}");
                    assert!(v <= prev + 1e-15);
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn stable_for_large_n() {
        let v = binomial_tail(10_000, 1_000, 0.05).unwrap();
        assert!(v > 0.0 && v < 1e-80);
        let v = binomial_tail(10_000, 450, 0.05).unwrap();
        assert!(v > 0.9 && v <= 1.0);
        let v = binomial_tail(10_000, 10_000, 0.05).unwrap();
        assert!(v.is_finite());
    }
}
