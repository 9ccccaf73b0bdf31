//! Small descriptive-statistics helpers shared by the encoder, the Langevin
//! bounds and the run summaries.

/// Quantile of an ascending slice by linear interpolation between the order
/// statistics around position `q * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); `None` below two values.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deciles_of_tenths() {
        let v: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert!((quantile_sorted(&v, 0.1) - 0.19).abs() < 1e-12);
        assert!((quantile_sorted(&v, 0.9) - 0.91).abs() < 1e-12);
        assert_eq!(quantile_sorted(&v, 0.0), 0.1);
        assert_eq!(quantile_sorted(&v, 1.0), 1.0);
    }

    #[test]
    fn std_of_three() {
        assert!((sample_std(&[0.4, 0.5, 0.6]).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(sample_std(&[0.5]), None);
    }
}
