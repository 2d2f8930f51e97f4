use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no samples")]
    EmptySamples,
    #[error("sample {0} is not a positive finite number")]
    NonPositiveSample(f64),
    #[error("baseline mean must be positive")]
    ZeroBaseline,
}

/// `n / sum(1 / x_i)` over strictly positive samples.
pub fn harmonic_mean(samples: &[f64]) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySamples);
    }
    let mut inv = 0.0;
    for &x in samples {
        if !(x.is_finite() && x > 0.0) {
            return Err(StatsError::NonPositiveSample(x));
        }
        inv += 1.0 / x;
    }
    Ok(samples.len() as f64 / inv)
}

/// Percentage improvement of `ours` over `baseline`: `(b - o) / b * 100`.
/// Negative when `ours` is slower.
pub fn perf_rate(baseline: f64, ours: f64) -> Result<f64, StatsError> {
    if !(baseline.is_finite() && baseline > 0.0) {
        return Err(StatsError::ZeroBaseline);
    }
    Ok((baseline - ours) / baseline * 100.0)
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySamples);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Midpoint median: the mean of the two middle samples for even counts.
pub fn median(samples: &[f64]) -> Result<f64, StatsError> {
    let v = sorted(samples)?;
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Nearest-rank percentile, `p` in `(0, 100]`.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64, StatsError> {
    let v = sorted(samples)?;
    let p = p.clamp(f64::MIN_POSITIVE, 100.0);
    let rank = (p / 100.0 * v.len() as f64).ceil() as usize;
    Ok(v[rank.clamp(1, v.len()) - 1])
}

pub fn p99(samples: &[f64]) -> Result<f64, StatsError> {
    percentile(samples, 99.0)
}
