//! Order statistics and least squares used by the detectors.

/// Scale factor that turns a MAD into a normal-consistent standard deviation.
pub const MAD_SCALE: f64 = 1.4826;
/// Scale factor that turns a mean absolute deviation into a standard deviation.
pub const MEAN_AD_SCALE: f64 = 1.253314;

/// Median of a non-empty slice (mean of the two middle values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median absolute deviation around `center`.
pub fn mad(values: &[f64], center: f64) -> f64 {
    let dev: Vec<f64> = values.iter().map(|x| (x - center).abs()).collect();
    median(&dev)
}

/// Mean absolute deviation around `center`.
pub fn mean_abs_dev(values: &[f64], center: f64) -> f64 {
    values.iter().map(|x| (x - center).abs()).sum::<f64>() / values.len() as f64
}

/// Robust z-scores of a series around its median.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustScores {
    pub median: f64,
    pub mad: f64,
    /// `|x − median| / (1.4826·MAD)`; with a zero MAD the mean absolute
    /// deviation stands in for the scale.
    pub z: Vec<f64>,
}

impl RobustScores {
    /// Whether point `i` is anomalous. With a zero MAD any point off the
    /// median counts, whatever its score.
    pub fn flagged(&self, i: usize, z_threshold: f64) -> bool {
        if self.mad > 0.0 {
            self.z[i] > z_threshold
        } else {
            self.z[i] > 0.0
        }
    }
}

pub fn robust_scores(values: &[f64]) -> RobustScores {
    let med = median(values);
    let spread = mad(values, med);
    let scale = if spread > 0.0 {
        MAD_SCALE * spread
    } else {
        MEAN_AD_SCALE * mean_abs_dev(values, med)
    };
    let z = values
        .iter()
        .map(|x| {
            let dev = (x - med).abs();
            if dev == 0.0 {
                0.0
            } else {
                dev / scale
            }
        })
        .collect();
    RobustScores {
        median: med,
        mad: spread,
        z,
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Robust noise scale from successive differences: `median|Δx| / (√2 · 0.6745)`.
/// Insensitive to level shifts, which only touch a handful of differences.
pub fn diff_sigma(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    median(&diffs) / (std::f64::consts::SQRT_2 * 0.6745)
}

/// Ordinary least-squares slope of `y` on `x`; `None` when `x` has no spread.
pub fn ls_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}
