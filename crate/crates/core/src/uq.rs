//! Credible sets from posterior draws: a diagonal-scale ellipsoid with an
//! empirical radius, per-coordinate quantile intervals, and the coverage,
//! size and Winkler summaries used to score them.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UqError {
    #[error("need at least 2 draws, got {0}")]
    TooFewDraws(usize),
    #[error("coordinate {0} has zero posterior variance")]
    ZeroVariance(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("level parameter {0} outside the allowed range")]
    InvalidAlpha(f64),
    #[error("no credible sets to score")]
    Empty,
}

/// How the squared radius of the joint set is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    /// Empirical quantile of the draws' own Mahalanobis distances.
    #[default]
    Empirical,
    /// Chi-square quantile with `p` degrees of freedom, for near-Gaussian draws.
    ChiSquared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CredibleEllipsoid {
    pub center: Vec<f64>,
    /// Per-coordinate variances.
    pub scale: Vec<f64>,
    pub radius_sq: f64,
    pub level: f64,
}

impl CredibleEllipsoid {
    pub fn mahalanobis_sq(&self, theta: &[f64]) -> Result<f64, UqError> {
        if theta.len() != self.center.len() {
            return Err(UqError::Dimension { expected: self.center.len(), got: theta.len() });
        }
        Ok(theta
            .iter()
            .zip(&self.center)
            .zip(&self.scale)
            .map(|((t, c), s)| (t - c) * (t - c) / s)
            .sum())
    }

    /// Boundary inclusive.
    pub fn contains(&self, theta: &[f64]) -> Result<bool, UqError> {
        Ok(self.mahalanobis_sq(theta)? <= self.radius_sq)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

fn check_draws<D: AsRef<[f64]>>(draws: &[D]) -> Result<usize, UqError> {
    if draws.len() < 2 {
        return Err(UqError::TooFewDraws(draws.len()));
    }
    let p = draws[0].as_ref().len();
    for d in draws {
        if d.as_ref().len() != p {
            return Err(UqError::Dimension { expected: p, got: d.as_ref().len() });
        }
    }
    Ok(p)
}

/// Per-coordinate mean and unbiased variance.
pub fn mean_and_variance<D: AsRef<[f64]>>(draws: &[D]) -> Result<(Vec<f64>, Vec<f64>), UqError> {
    let p = check_draws(draws)?;
    let l = draws.len() as f64;
    let mut mean = vec![0.0; p];
    for d in draws {
        for (m, v) in mean.iter_mut().zip(d.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= l);
    let mut var = vec![0.0; p];
    for d in draws {
        for ((s, v), m) in var.iter_mut().zip(d.as_ref()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= l - 1.0);
    Ok((mean, var))
}

fn check_alpha(alpha: f64) -> Result<(), UqError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(UqError::InvalidAlpha(alpha))
    }
}

/// Rank `ceil((1 - alpha) L)` as an order-statistic index in `1..=L`. The
/// small offset keeps products such as `0.95 * 100` from rounding up a rank.
pub fn order_statistic_rank(alpha: f64, l: usize) -> usize {
    (((1.0 - alpha) * l as f64 - 1e-9).ceil() as usize).clamp(1, l)
}

pub fn joint_credible_set<D: AsRef<[f64]>>(draws: &[D], alpha: f64) -> Result<CredibleEllipsoid, UqError> {
    joint_credible_set_with(draws, alpha, Cutoff::Empirical)
}

pub fn joint_credible_set_with<D: AsRef<[f64]>>(
    draws: &[D],
    alpha: f64,
    cutoff: Cutoff,
) -> Result<CredibleEllipsoid, UqError> {
    check_alpha(alpha)?;
    let (center, scale) = mean_and_variance(draws)?;
    if let Some(j) = scale.iter().position(|v| !(*v > 0.0)) {
        return Err(UqError::ZeroVariance(j));
    }
    let mut set = CredibleEllipsoid { center, scale, radius_sq: 0.0, level: 1.0 - alpha };
    set.radius_sq = match cutoff {
        Cutoff::Empirical => {
            let mut d2: Vec<f64> = draws.iter().map(|d| set.mahalanobis_sq(d.as_ref())).collect::<Result<_, _>>()?;
            d2.sort_by(f64::total_cmp);
            d2[order_statistic_rank(alpha, d2.len()) - 1]
        }
        Cutoff::ChiSquared => {
            let chi = ChiSquared::new(set.center.len() as f64).expect("positive degrees of freedom");
            chi.inverse_cdf(1.0 - alpha)
        }
    };
    Ok(set)
}

pub fn contains(set: &CredibleEllipsoid, theta: &[f64]) -> Result<bool, UqError> {
    set.contains(theta)
}

/// Linear interpolation between order statistics at position `(L - 1) prob`.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed interval for coordinate `j`; `alpha = 1` collapses to the median.
pub fn marginal_interval<D: AsRef<[f64]>>(draws: &[D], j: usize, alpha: f64) -> Result<MarginalInterval, UqError> {
    let p = check_draws(draws)?;
    if j >= p {
        return Err(UqError::Dimension { expected: p, got: j + 1 });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(UqError::InvalidAlpha(alpha));
    }
    let mut column: Vec<f64> = draws.iter().map(|d| d.as_ref()[j]).collect();
    column.sort_by(f64::total_cmp);
    Ok(MarginalInterval {
        lower: quantile_sorted(&column, alpha / 2.0),
        upper: quantile_sorted(&column, 1.0 - alpha / 2.0),
        level: 1.0 - alpha,
    })
}

/// Width plus `2/alpha` times the distance by which `theta0` misses the interval.
pub fn winkler_score(interval: &MarginalInterval, theta0: f64, alpha: f64) -> f64 {
    let (l, u) = (interval.lower, interval.upper);
    let mut score = u - l;
    if theta0 < l {
        score += 2.0 / alpha * (l - theta0);
    } else if theta0 > u {
        score += 2.0 / alpha * (theta0 - u);
    }
    score
}

/// Fraction of sets containing `theta0`.
pub fn coverage(sets: &[CredibleEllipsoid], theta0: &[f64]) -> Result<f64, UqError> {
    if sets.is_empty() {
        return Err(UqError::Empty);
    }
    let mut hits = 0usize;
    for s in sets {
        hits += usize::from(s.contains(theta0)?);
    }
    Ok(hits as f64 / sets.len() as f64)
}

/// Trace of the unbiased posterior covariance.
pub fn size_metric<D: AsRef<[f64]>>(draws: &[D]) -> Result<f64, UqError> {
    Ok(mean_and_variance(draws)?.1.iter().sum())
}

/// Median by the same interpolation rule as the marginal quantiles.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolated_interval() {
        let draws: Vec<Vec<f64>> = (1..=100).map(|i| vec![i as f64]).collect();
        let ci = marginal_interval(&draws, 0, 0.05).unwrap();
        assert!((ci.lower - 3.475).abs() < 1e-12 && (ci.upper - 97.525).abs() < 1e-12);
        let med = marginal_interval(&draws, 0, 1.0).unwrap();
        assert_eq!((med.lower, med.upper), (50.5, 50.5));
        let flat = vec![vec![2.0]; 10];
        let c = marginal_interval(&flat, 0, 0.1).unwrap();
        assert_eq!((c.lower, c.upper), (2.0, 2.0));
    }

    #[test]
    fn winkler_values() {
        let ci = MarginalInterval { lower: 0.0, upper: 1.0, level: 0.95 };
        assert_eq!(winkler_score(&ci, 0.5, 0.05), 1.0);
        assert_eq!(winkler_score(&ci, 1.5, 0.05), 21.0);
        assert_eq!(winkler_score(&ci, 1.0, 0.05), 1.0);
    }

    #[test]
    fn membership_conventions() {
        let set = CredibleEllipsoid { center: vec![0.0, 0.0], scale: vec![1.0, 1.0], radius_sq: 4.0, level: 0.95 };
        assert!(set.contains(&[0.0, 0.0]).unwrap());
        assert!(set.contains(&[2.0, 0.0]).unwrap());
        assert!(!set.contains(&[3.0, 0.0]).unwrap());
        assert!(set.contains(&[1.0]).is_err());
    }

    #[test]
    fn degenerate_draws() {
        let same = vec![vec![1.0, 2.0]; 5];
        assert_eq!(joint_credible_set(&same, 0.05), Err(UqError::ZeroVariance(0)));
        assert_eq!(size_metric(&same).unwrap(), 0.0);
        let sets = vec![CredibleEllipsoid { center: vec![0.0], scale: vec![1.0], radius_sq: 1.0, level: 0.95 }];
        assert_eq!(coverage(&sets, &[0.5]).unwrap(), 1.0);
        assert_eq!(coverage(&sets, &[5.0]).unwrap(), 0.0);
    }

    #[test]
    fn rank_guard() {
        assert_eq!(order_statistic_rank(0.05, 100), 95);
        assert_eq!(order_statistic_rank(0.05, 10), 10);
        assert_eq!(order_statistic_rank(0.5, 3), 2);
    }
}
