//! Penalized change-point search (PELT) with an L2 mean-shift cost.
//!
//! The objective over a partition of `values` into segments is
//! `Σ cost(segment) + penalty · (#segments − 1)`, where `cost` is the sum of
//! squared deviations from the segment mean and every segment holds at least
//! `min_segment` points. The result is the exact minimizer; ties go to the
//! partition whose last change point is earliest.
//!
//! Pruning: a candidate `s` whose value at `t` already exceeds `F(t)` can
//! never be optimal for any `u ≥ t + min_segment` (the cost is
//! superadditive), but it can still win for `u` in `(t, t + min_segment)`
//! because `t` itself is not a legal split there. Candidates are therefore
//! retired `min_segment` steps after the condition first holds.

use super::robust::{diff_sigma, population_std};

/// Prefix sums for O(1) segment costs.
pub struct SegmentCost {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl SegmentCost {
    pub fn new(values: &[f64]) -> Self {
        let mut sum = Vec::with_capacity(values.len() + 1);
        let mut sum_sq = Vec::with_capacity(values.len() + 1);
        sum.push(0.0);
        sum_sq.push(0.0);
        for &x in values {
            sum.push(sum.last().unwrap() + x);
            sum_sq.push(sum_sq.last().unwrap() + x * x);
        }
        Self { sum, sum_sq }
    }

    /// Cost of the half-open segment `[s, t)`.
    pub fn cost(&self, s: usize, t: usize) -> f64 {
        let n = (t - s) as f64;
        let sum = self.sum[t] - self.sum[s];
        let c = (self.sum_sq[t] - self.sum_sq[s]) - sum * sum / n;
        c.max(0.0)
    }

    pub fn mean(&self, s: usize, t: usize) -> f64 {
        (self.sum[t] - self.sum[s]) / (t - s) as f64
    }
}

/// Noise scale for the penalty: the successive-difference estimate, or the
/// population standard deviation when more than half the differences are zero.
pub fn noise_sigma(values: &[f64]) -> f64 {
    let s = diff_sigma(values);
    if s > 0.0 {
        s
    } else {
        population_std(values)
    }
}

/// `multiplier · σ̂² · ln n`.
pub fn pelt_penalty(values: &[f64], multiplier: f64) -> f64 {
    let sigma = noise_sigma(values);
    multiplier * sigma * sigma * (values.len() as f64).ln()
}

/// Exact change points for a given penalty. Indices are the first point of
/// each new segment, ascending.
pub fn pelt_with_penalty(values: &[f64], penalty: f64, min_segment: usize) -> Vec<usize> {
    let n = values.len();
    let m = min_segment.max(1);
    if n < 2 * m || penalty <= 0.0 || !penalty.is_finite() {
        return Vec::new();
    }
    let cost = SegmentCost::new(values);
    let mut f = vec![f64::INFINITY; n + 1];
    let mut last = vec![0usize; n + 1];
    f[0] = -penalty;

    // (candidate, step from which it is retired)
    let mut candidates: Vec<(usize, usize)> = vec![(0, usize::MAX)];
    for t in m..=n {
        if t >= 2 * m {
            candidates.push((t - m, usize::MAX));
        }
        candidates.retain(|&(_, retire)| retire > t);

        let mut best = f64::INFINITY;
        let mut arg = 0;
        for &(s, _) in &candidates {
            let v = f[s] + cost.cost(s, t) + penalty;
            if v < best {
                best = v;
                arg = s;
            }
        }
        f[t] = best;
        last[t] = arg;

        let slack = 1e-9 * best.abs().max(1.0);
        for (s, retire) in candidates.iter_mut() {
            if *retire == usize::MAX && f[*s] + cost.cost(*s, t) > best + slack {
                *retire = t + m;
            }
        }
    }

    let mut cps = Vec::new();
    let mut t = n;
    while t > 0 {
        let s = last[t];
        if s > 0 {
            cps.push(s);
        }
        t = s;
    }
    cps.reverse();
    cps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_or_flat_series_has_no_change_points() {
        assert!(pelt_with_penalty(&[1.0, 2.0, 3.0], 1.0, 2).is_empty());
        assert!(pelt_with_penalty(&[5.0; 30], 1.0, 2).is_empty());
        assert_eq!(pelt_penalty(&[5.0; 30], 3.0), 0.0);
    }

    #[test]
    fn two_steps() {
        let mut v = vec![0.0; 10];
        v.extend([8.0; 10]);
        v.extend([-3.0; 10]);
        assert_eq!(pelt_with_penalty(&v, 5.0, 2), vec![10, 20]);
    }

    #[test]
    fn respects_min_segment() {
        let v = [0.0, 0.0, 0.0, 0.0, 50.0, 0.0, 0.0, 0.0, 0.0];
        for cp in pelt_with_penalty(&v, 1.0, 3).windows(2) {
            assert!(cp[1] - cp[0] >= 3);
        }
        let cps = pelt_with_penalty(&v, 1.0, 3);
        assert!(cps.iter().all(|&c| (3..=6).contains(&c)));
    }
}
