//! Deterministic reducers and small statistics used across the crate.

/// Pairwise (cascade) summation. Deterministic for a fixed input order and
/// accurate to O(log n) rounding; scenario results are always reduced in
/// scenario-index order regardless of how they were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Sample mean and its standard error.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n < 2 {
        return (mean(values), 0.0);
    }
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (m, (var / n as f64).sqrt())
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let mut num = 0.0;
    let mut den = 0.0;
    for (&xi, &yi) in x.iter().zip(y.iter()) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    num / den
}

/// Slope of `log(gap)` against `log(n)`; `None` when fewer than two usable
/// points or any gap is nonpositive.
pub fn loglog_slope(ns: &[f64], gaps: &[f64]) -> Option<f64> {
    if ns.len() != gaps.len() || ns.len() < 2 {
        return None;
    }
    if gaps.iter().any(|&g| g <= 0.0) {
        return None;
    }
    let x: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = gaps.iter().map(|v| v.ln()).collect();
    Some(ls_slope(&x, &y))
}

/// Empirical quantile (linear interpolation between order statistics).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(pairwise_sum(&v), 15.0);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let ns: Vec<f64> = [8.0, 16.0, 32.0, 64.0].to_vec();
        let gaps: Vec<f64> = ns.iter().map(|n| 3.0 / n).collect();
        let s = loglog_slope(&ns, &gaps).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
    }

    #[test]
    fn stderr_of_constant_sample_is_zero() {
        let (m, se) = mean_stderr(&[2.0, 2.0, 2.0, 2.0]);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-12);
    }
}
