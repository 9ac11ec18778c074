//! Rank-based Gaussian anamorphosis.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Scores are capped at this many standard deviations.
pub const SCORE_CAP: f64 = 4.0;

pub fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Sorted knots mapping raw values to standard-normal scores. Both columns
/// are strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalScoreTable {
    raw: Vec<f64>,
    score: Vec<f64>,
}

/// Fits a table to `values` with plotting position (rank - 0.5) / n and
/// returns each value's score alongside it. Tied values share the mean
/// plotting position of their ranks.
pub fn normal_score(values: &[f64]) -> Result<(Vec<f64>, NormalScoreTable)> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite value".into()));
    }
    let n = values.len();
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut raw = Vec::new();
    let mut score = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        // ranks i+1..=j+1, mean plotting position
        let p = ((i + j) as f64 / 2.0 + 0.5) / n as f64;
        raw.push(sorted[i]);
        score.push(std_normal_quantile(p));
        i = j + 1;
    }
    if raw.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 distinct values, got {}",
            raw.len()
        )));
    }
    let table = NormalScoreTable { raw, score };
    let scores = values.iter().map(|&v| table.transform(v)).collect();
    Ok((scores, table))
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let k = xs.partition_point(|&v| v <= x);
    // segment [lo, lo + 1], clamped to the end segments for extrapolation
    let lo = k.saturating_sub(1).min(n - 2);
    let (x0, x1, y0, y1) = (xs[lo], xs[lo + 1], ys[lo], ys[lo + 1]);
    if x == x0 {
        return y0;
    }
    y0 + (x - x0) * (y1 - y0) / (x1 - x0)
}

impl NormalScoreTable {
    /// Builds a table from explicit knots.
    pub fn from_knots(raw: Vec<f64>, score: Vec<f64>) -> Result<Self> {
        let ok = raw.len() == score.len()
            && raw.len() >= 2
            && raw.windows(2).all(|w| w[0] < w[1])
            && score.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::Degenerate(
                "knots must be strictly increasing in both columns".into(),
            ));
        }
        Ok(NormalScoreTable { raw, score })
    }

    /// Table fitted to `n` quantiles of a lognormal population.
    pub fn lognormal(median: f64, log_sigma: f64, n: usize) -> Result<Self> {
        if !(median > 0.0 && log_sigma > 0.0 && n >= 2) {
            return Err(Error::Config(format!(
                "lognormal table needs median > 0, log_sigma > 0, n >= 2 (got {median}, {log_sigma}, {n})"
            )));
        }
        let population: Vec<f64> = (0..n)
            .map(|k| {
                let p = (k as f64 + 0.5) / n as f64;
                median * (log_sigma * std_normal_quantile(p)).exp()
            })
            .collect();
        Ok(normal_score(&population)?.1)
    }

    pub fn raw_knots(&self) -> &[f64] {
        &self.raw
    }

    pub fn score_knots(&self) -> &[f64] {
        &self.score
    }

    pub fn transform(&self, value: f64) -> f64 {
        interpolate(&self.raw, &self.score, value).clamp(-SCORE_CAP, SCORE_CAP)
    }

    pub fn back_transform(&self, score: f64) -> f64 {
        interpolate(&self.score, &self.raw, score.clamp(-SCORE_CAP, SCORE_CAP))
    }

    /// d(score)/d(raw) at `value`, from the enclosing table segment.
    pub fn slope_at(&self, value: f64) -> f64 {
        let n = self.raw.len();
        let k = self.raw.partition_point(|&v| v <= value);
        let lo = k.saturating_sub(1).min(n - 2);
        (self.score[lo + 1] - self.score[lo]) / (self.raw[lo + 1] - self.raw[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_maps_to_zero() {
        let (scores, _) = normal_score(&[3.0, 1.0, 2.0, 5.0, 4.0]).unwrap();
        assert!(scores[0].abs() < 1e-12);
    }

    #[test]
    fn four_values_hit_plotting_positions() {
        let (scores, _) = normal_score(&[0.4, 0.1, 0.3, 0.2]).unwrap();
        // Phi^-1 of 0.125, 0.375, 0.625, 0.875
        let want = [-1.1503493803760079, -0.3186393639643752, 0.3186393639643752, 1.1503493803760079];
        let by_rank = [scores[1], scores[3], scores[2], scores[0]];
        for (got, w) in by_rank.iter().zip(want) {
            assert!((got - w).abs() < 1e-9, "{got} vs {w}");
        }
    }

    #[test]
    fn round_trip_on_fitting_data() {
        let data = [0.12, 0.5, 0.33, 1.7, 0.05, 0.9, 0.21];
        let (scores, table) = normal_score(&data).unwrap();
        for (v, s) in data.iter().zip(&scores) {
            assert!((table.back_transform(*s) - v).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_input_is_rejected() {
        assert!(matches!(normal_score(&[2.0, 2.0, 2.0]), Err(Error::Degenerate(_))));
        assert!(normal_score(&[1.0]).is_err());
    }

    #[test]
    fn ties_share_a_score_and_table_stays_monotone() {
        let (scores, table) = normal_score(&[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(scores[1], scores[2]);
        assert!(table.score_knots().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(table.raw_knots().len(), 3);
    }

    #[test]
    fn tails_are_capped() {
        let (_, table) = normal_score(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(table.transform(1e9), SCORE_CAP);
        assert_eq!(table.transform(-1e9), -SCORE_CAP);
        let hi = table.back_transform(100.0);
        assert_eq!(hi, table.back_transform(SCORE_CAP));
        assert!(hi > 3.0);
    }

    #[test]
    fn lognormal_table_is_centred_on_median() {
        let t = NormalScoreTable::lognormal(0.25, 0.6, 1000).unwrap();
        assert!((t.back_transform(0.0) - 0.25).abs() < 1e-3);
        let one_sigma = t.back_transform(1.0);
        assert!((one_sigma - 0.25 * 0.6f64.exp()).abs() < 5e-3);
    }
}
