//! Small deterministic statistics helpers shared by the harness and tests.

/// Sum with fixed-size chunk accumulation: the summation order is a pure
/// function of the slice, independent of any parallel schedule.
pub fn chunked_sum(values: &[f64]) -> f64 {
    let mut total = 0.0;
    for chunk in values.chunks(4096) {
        let mut acc = 0.0;
        for v in chunk {
            acc += v;
        }
        total += acc;
    }
    total
}

pub fn mean(values: &[f64]) -> f64 {
    chunked_sum(values) / values.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    assert!(n >= 2, "variance needs at least two samples");
    let m = mean(values);
    let ss: f64 = chunked_sum(&values.iter().map(|v| (v - m) * (v - m)).collect::<Vec<_>>());
    ss / (n - 1) as f64
}

pub fn se_of_mean(values: &[f64]) -> f64 {
    (sample_variance(values) / values.len() as f64).sqrt()
}

/// Standard error of the unbiased sample variance via the fourth central
/// moment: Var(s^2) ~ (m4 - s^4 (n-3)/(n-1)) / n.
pub fn se_of_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = mean(values);
    let s2 = sample_variance(values);
    let m4 = values.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    ((m4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
}

/// Jackknife standard error of the sample variance (used when the variance
/// estimate itself feeds a normalisation, to flag the double use of data).
pub fn jackknife_se_of_variance(values: &[f64]) -> f64 {
    let n = values.len();
    assert!(n >= 3);
    let s1 = chunked_sum(values);
    let s2 = chunked_sum(&values.iter().map(|v| v * v).collect::<Vec<_>>());
    let mut loo = Vec::with_capacity(n);
    for &x in values {
        let m = (s1 - x) / (n - 1) as f64;
        let var = ((s2 - x * x) - (n - 1) as f64 * m * m) / (n - 2) as f64;
        loo.push(var);
    }
    let lbar = mean(&loo);
    let ss: f64 = loo.iter().map(|v| (v - lbar) * (v - lbar)).sum();
    ((n - 1) as f64 / n as f64 * ss).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Pearson correlation of two equal-length samples.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ma, mb) = (mean(a), mean(b));
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_moments() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&v), 2.5);
        assert!((sample_variance(&v) - 5.0 / 3.0).abs() < 1e-14);
        assert_eq!(median(&v), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn correlation_of_identical_series_is_one() {
        let v = [0.3, -1.2, 2.4, 0.9, -0.4];
        assert!((correlation(&v, &v) - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((correlation(&v, &neg) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn chunked_sum_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..10000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((chunked_sum(&v) - naive).abs() < 1e-9);
    }
}
