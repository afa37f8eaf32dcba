//! Profile size versus personalization gain.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::run::EvalReport;
use crate::metrics::{Direction, MetricName};

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric: MetricName,
    /// Users with a non-zero change, i.e. those included.
    pub n: usize,
    pub excluded_ties: usize,
    pub pearson_r: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_method: String,
    pub slope: f64,
    pub intercept: f64,
}

impl CorrelationReport {
    pub fn ci_contains_zero(&self) -> bool {
        self.ci_low <= 0.0 && 0.0 <= self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("only {n} users changed; at least 3 are needed")]
    InsufficientData { n: usize },
    #[error("{0} has zero variance; correlation is undefined")]
    ZeroVariance(&'static str),
    #[error("reports cover different users (e.g. `{0}`)")]
    UserMismatch(String),
    #[error("user `{user}` has no {metric} value")]
    MissingMetric { user: String, metric: MetricName },
}

/// +1 for a gain, -1 for a loss, `None` for no change. Direction-aware:
/// for error metrics a decrease is a gain.
pub fn improvement(personalized: f64, baseline: f64, direction: Direction) -> Option<f64> {
    let diff = match direction {
        Direction::HigherBetter => personalized - baseline,
        Direction::LowerBetter => baseline - personalized,
    };
    if diff > 0.0 {
        Some(1.0)
    } else if diff < 0.0 {
        Some(-1.0)
    } else {
        None
    }
}

/// Pearson r with a Fisher z interval and the OLS fit of `y` on `x`.
pub fn correlate(
    metric: MetricName,
    x: &[f64],
    y: &[f64],
    excluded_ties: usize,
) -> Result<CorrelationReport, AnalysisError> {
    let n = x.len().min(y.len());
    if n < 3 {
        return Err(AnalysisError::InsufficientData { n });
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        return Err(AnalysisError::ZeroVariance("profile size"));
    }
    if syy == 0.0 {
        return Err(AnalysisError::ZeroVariance("improvement"));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let (ci_low, ci_high) = if n > 3 {
        let z = r.atanh();
        let se = 1.0 / ((n - 3) as f64).sqrt();
        ((z - Z_95 * se).tanh(), (z + Z_95 * se).tanh())
    } else {
        (-1.0, 1.0)
    };
    let slope = sxy / sxx;
    Ok(CorrelationReport {
        metric,
        n,
        excluded_ties,
        pearson_r: r,
        ci_low,
        ci_high,
        ci_method: "fisher_z_95".into(),
        slope,
        intercept: my - slope * mx,
    })
}

/// Correlation over `(profile size, personalized, baseline)` rows.
pub fn analyze_rows(
    metric: MetricName,
    rows: &[(usize, f64, f64)],
) -> Result<CorrelationReport, AnalysisError> {
    let mut sizes = Vec::with_capacity(rows.len());
    let mut imps = Vec::with_capacity(rows.len());
    let mut ties = 0;
    for &(size, p, b) in rows {
        match improvement(p, b, metric.direction()) {
            Some(i) => {
                sizes.push(size as f64);
                imps.push(i);
            }
            None => ties += 1,
        }
    }
    correlate(metric, &sizes, &imps, ties)
}

/// Relates each user's profile size to whether personalization beat the
/// baseline on `metric`. Users with no change are excluded.
pub fn profile_size_analysis(
    personalized: &EvalReport,
    baseline: &EvalReport,
    metric: MetricName,
) -> Result<CorrelationReport, AnalysisError> {
    if personalized.users.len() != baseline.users.len() {
        let base_ids: std::collections::HashSet<&str> =
            baseline.users.iter().map(|u| u.user_id.as_str()).collect();
        let odd = personalized
            .users
            .iter()
            .map(|u| u.user_id.as_str())
            .find(|id| !base_ids.contains(id))
            .or_else(|| baseline.users.first().map(|u| u.user_id.as_str()))
            .unwrap_or_default();
        return Err(AnalysisError::UserMismatch(odd.to_string()));
    }
    let base: HashMap<&str, f64> = baseline
        .users
        .iter()
        .map(|u| {
            u.metrics
                .get(&metric)
                .map(|&v| (u.user_id.as_str(), v))
                .ok_or_else(|| AnalysisError::MissingMetric {
                    user: u.user_id.clone(),
                    metric,
                })
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(personalized.users.len());
    for u in &personalized.users {
        let b = *base
            .get(u.user_id.as_str())
            .ok_or_else(|| AnalysisError::UserMismatch(u.user_id.clone()))?;
        let p = *u
            .metrics
            .get(&metric)
            .ok_or_else(|| AnalysisError::MissingMetric {
                user: u.user_id.clone(),
                metric,
            })?;
        rows.push((u.profile_size, p, b));
    }
    analyze_rows(metric, &rows)
}
