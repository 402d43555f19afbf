//! Shared resampling and summary-statistic helpers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn resample_indices(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Linearly interpolated quantile of a sorted sample (the common "type 7"
/// definition).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Percentile-method interval at the given confidence level.
pub fn percentile_interval(samples: &mut [f64], level: f64) -> (f64, f64) {
    samples.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    (percentile(samples, alpha), percentile(samples, 1.0 - alpha))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two points.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// (mean, standard error = sample SD / sqrt(n)).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let se = if xs.is_empty() {
        f64::NAN
    } else {
        sample_sd(xs) / (xs.len() as f64).sqrt()
    };
    (m, se)
}

/// 95% normal-approximation interval.
pub fn normal_ci(mean: f64, se: f64) -> (f64, f64) {
    (mean - 1.96 * se, mean + 1.96 * se)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&xs, 0.0), 1.0);
        assert_eq!(percentile(&xs, 1.0), 4.0);
        assert!((percentile(&xs, 0.5) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn sd_matches_hand_arithmetic() {
        // {1, 0, 2}: sample variance 1, sd 1, se 1/sqrt(3)
        let xs = [1.0, 0.0, 2.0];
        assert!((sample_sd(&xs) - 1.0).abs() < 1e-12);
        let (m, se) = mean_se(&xs);
        assert!((m - 1.0).abs() < 1e-12);
        assert!((se - 1.0 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_point_has_zero_se() {
        let (m, se) = mean_se(&[5.0]);
        assert_eq!(m, 5.0);
        assert_eq!(se, 0.0);
    }
}
