//! Small numeric helpers shared by the closed forms and the compilers.

/// `ln C(n, k)` for `k <= n`.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k)
        .map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

/// The binomial pmf `C(n, k) p^k (1-p)^(n-k)` for all `k = 0..=n`.
pub fn binomial_row(n: u64, p: f64) -> Vec<f64> {
    let mut row = vec![0.0; n as usize + 1];
    if p <= 0.0 {
        row[0] = 1.0;
        return row;
    }
    if p >= 1.0 {
        row[n as usize] = 1.0;
        return row;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    // ln C(n, k) built incrementally
    let mut lc = 0.0;
    for k in 0..=n {
        if k > 0 {
            lc += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        row[k as usize] = (lc + k as f64 * lp + (n - k) as f64 * lq).exp();
    }
    row
}

/// `sum_k C(n, k) p^k (1-p)^(n-k) w[k]` with `n = w.len() - 1`.
pub fn bernstein_sum(weights: &[f64], p: f64) -> f64 {
    let n = weights.len() as u64 - 1;
    binomial_row(n, p)
        .iter()
        .zip(weights)
        .map(|(b, w)| b * w)
        .sum()
}

/// A uniform grid of `points` values on [0, 1], endpoints included.
pub fn unit_grid(points: usize) -> Vec<f64> {
    assert!(points >= 2);
    let step = 1.0 / (points - 1) as f64;
    (0..points)
        .map(|i| {
            if i + 1 == points {
                1.0
            } else {
                i as f64 * step
            }
        })
        .collect()
}
