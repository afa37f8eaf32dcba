//! Evaluation measures: accuracy, macro-F1, MAE, RMSE, ROUGE-1, ROUGE-L.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{TaskId, TaskKind};
use crate::text::word_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricName {
    #[serde(rename = "accuracy")]
    Accuracy,
    #[serde(rename = "f1")]
    F1,
    #[serde(rename = "mae")]
    Mae,
    #[serde(rename = "rmse")]
    Rmse,
    #[serde(rename = "rouge-1")]
    Rouge1,
    #[serde(rename = "rouge-l")]
    RougeL,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    pub fn arrow(self) -> &'static str {
        match self {
            Direction::HigherBetter => "\u{2191}",
            Direction::LowerBetter => "\u{2193}",
        }
    }
}

impl MetricName {
    pub fn direction(self) -> Direction {
        match self {
            MetricName::Mae | MetricName::Rmse => Direction::LowerBetter,
            _ => Direction::HigherBetter,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MetricName::Accuracy => "Accuracy",
            MetricName::F1 => "F1",
            MetricName::Mae => "MAE",
            MetricName::Rmse => "RMSE",
            MetricName::Rouge1 => "ROUGE-1",
            MetricName::RougeL => "ROUGE-L",
        }
    }

    /// Metrics reported for a task.
    pub fn for_task(task: TaskId) -> &'static [MetricName] {
        match task.kind() {
            TaskKind::BinaryClassification => &[MetricName::Accuracy],
            TaskKind::CategoricalClassification => &[MetricName::Accuracy, MetricName::F1],
            TaskKind::OrdinalRating => &[MetricName::Mae, MetricName::Rmse],
            TaskKind::Generation => &[MetricName::Rouge1, MetricName::RougeL],
        }
    }

    /// Metric whose per-user value decides whether personalization helped.
    pub fn primary(task: TaskId) -> MetricName {
        match task.kind() {
            TaskKind::BinaryClassification | TaskKind::CategoricalClassification => {
                MetricName::Accuracy
            }
            TaskKind::OrdinalRating => MetricName::Mae,
            TaskKind::Generation => MetricName::Rouge1,
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MetricName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "accuracy" | "acc" => Ok(MetricName::Accuracy),
            "f1" | "macro-f1" => Ok(MetricName::F1),
            "mae" => Ok(MetricName::Mae),
            "rmse" => Ok(MetricName::Rmse),
            "rouge-1" | "rouge1" => Ok(MetricName::Rouge1),
            "rouge-l" | "rougel" => Ok(MetricName::RougeL),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: MetricName,
    pub value: f64,
    pub direction: Direction,
}

impl MetricValue {
    pub fn new(name: MetricName, value: f64) -> MetricValue {
        MetricValue {
            name,
            value,
            direction: name.direction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("predictions ({preds}) and golds ({golds}) differ in length")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no predictions to score")]
    Empty,
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("gold text has no tokens")]
    EmptyGold,
}

fn check_lengths(preds: usize, golds: usize) -> Result<(), MetricError> {
    if preds != golds {
        return Err(MetricError::LengthMismatch { preds, golds });
    }
    if preds == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Fraction of exact matches after trimming and lowercasing.
pub fn accuracy<P: AsRef<str>, G: AsRef<str>>(
    preds: &[P],
    golds: &[G],
) -> Result<MetricValue, MetricError> {
    check_lengths(preds.len(), golds.len())?;
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| normalize_label(p.as_ref()) == normalize_label(g.as_ref()))
        .count();
    Ok(MetricValue::new(
        MetricName::Accuracy,
        hits as f64 / preds.len() as f64,
    ))
}

/// Unweighted mean of per-class F1 over `labels`. Classes that occur in
/// neither predictions nor golds contribute 0; out-of-set predictions
/// count as false negatives for the gold class.
pub fn macro_f1<P: AsRef<str>, G: AsRef<str>>(
    preds: &[P],
    golds: &[G],
    labels: &[&str],
) -> Result<MetricValue, MetricError> {
    if labels.is_empty() {
        return Err(MetricError::EmptyLabelSet);
    }
    check_lengths(preds.len(), golds.len())?;
    let mut tp: HashMap<String, usize> = HashMap::new();
    let mut fp: HashMap<String, usize> = HashMap::new();
    let mut fn_: HashMap<String, usize> = HashMap::new();
    for (p, g) in preds.iter().zip(golds) {
        let (p, g) = (normalize_label(p.as_ref()), normalize_label(g.as_ref()));
        if p == g {
            *tp.entry(p).or_default() += 1;
        } else {
            *fp.entry(p).or_default() += 1;
            *fn_.entry(g).or_default() += 1;
        }
    }
    let total: f64 = labels
        .iter()
        .map(|l| {
            let l = normalize_label(l);
            let t = *tp.get(&l).unwrap_or(&0) as f64;
            let denom =
                2.0 * t + *fp.get(&l).unwrap_or(&0) as f64 + *fn_.get(&l).unwrap_or(&0) as f64;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * t / denom
            }
        })
        .sum();
    Ok(MetricValue::new(
        MetricName::F1,
        total / labels.len() as f64,
    ))
}

/// Midpoint of the 1..5 rating scale, used for unparseable predictions.
pub const RATING_FALLBACK: f64 = 3.0;

/// Parses a rating prediction, falling back to [`RATING_FALLBACK`].
pub fn parse_rating(text: &str) -> f64 {
    text.trim()
        .trim_end_matches('.')
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .unwrap_or(RATING_FALLBACK)
}

pub fn mae_rmse(preds: &[f64], golds: &[f64]) -> Result<(MetricValue, MetricValue), MetricError> {
    check_lengths(preds.len(), golds.len())?;
    let n = preds.len() as f64;
    let (abs, sq) = preds.iter().zip(golds).fold((0.0, 0.0), |(a, s), (p, g)| {
        (a + (p - g).abs(), s + (p - g) * (p - g))
    });
    Ok((
        MetricValue::new(MetricName::Mae, abs / n),
        MetricValue::new(MetricName::Rmse, (sq / n).sqrt()),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeVariant {
    Rouge1,
    RougeL,
}

fn f_measure(overlap: usize, pred_len: usize, gold_len: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred_len as f64;
    let r = overlap as f64 / gold_len as f64;
    2.0 * p * r / (p + r)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE F-measure (beta = 1) over lowercase alphanumeric tokens, no
/// stemming. ROUGE-1 uses clipped unigram counts; ROUGE-L uses the
/// longest common subsequence.
pub fn rouge(pred: &str, gold: &str, variant: RougeVariant) -> Result<MetricValue, MetricError> {
    let g = word_tokens(gold);
    if g.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let p = word_tokens(pred);
    let name = match variant {
        RougeVariant::Rouge1 => MetricName::Rouge1,
        RougeVariant::RougeL => MetricName::RougeL,
    };
    if p.is_empty() {
        return Ok(MetricValue::new(name, 0.0));
    }
    let overlap = match variant {
        RougeVariant::Rouge1 => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for t in &g {
                *counts.entry(t).or_default() += 1;
            }
            p.iter()
                .filter(|t| match counts.get_mut(t.as_str()) {
                    Some(c) if *c > 0 => {
                        *c -= 1;
                        true
                    }
                    _ => false,
                })
                .count()
        }
        RougeVariant::RougeL => lcs_len(&p, &g),
    };
    Ok(MetricValue::new(name, f_measure(overlap, p.len(), g.len())))
}

/// Mean ROUGE over aligned prediction/gold pairs.
pub fn mean_rouge<P: AsRef<str>, G: AsRef<str>>(
    preds: &[P],
    golds: &[G],
    variant: RougeVariant,
) -> Result<MetricValue, MetricError> {
    check_lengths(preds.len(), golds.len())?;
    let mut sum = 0.0;
    let mut name = MetricName::Rouge1;
    for (p, g) in preds.iter().zip(golds) {
        let v = rouge(p.as_ref(), g.as_ref(), variant)?;
        name = v.name;
        sum += v.value;
    }
    Ok(MetricValue::new(name, sum / preds.len() as f64))
}

/// All task metrics over aligned predictions and golds, in the order of
/// [`MetricName::for_task`].
pub fn evaluate_task<P: AsRef<str>, G: AsRef<str>>(
    task: TaskId,
    preds: &[P],
    golds: &[G],
) -> Result<Vec<MetricValue>, MetricError> {
    match task.kind() {
        TaskKind::BinaryClassification => Ok(vec![accuracy(preds, golds)?]),
        TaskKind::CategoricalClassification => Ok(vec![
            accuracy(preds, golds)?,
            macro_f1(preds, golds, task.labels().expect("classification labels"))?,
        ]),
        TaskKind::OrdinalRating => {
            let p: Vec<f64> = preds.iter().map(|s| parse_rating(s.as_ref())).collect();
            let g: Vec<f64> = golds.iter().map(|s| parse_rating(s.as_ref())).collect();
            let (mae, rmse) = mae_rmse(&p, &g)?;
            Ok(vec![mae, rmse])
        }
        TaskKind::Generation => Ok(vec![
            mean_rouge(preds, golds, RougeVariant::Rouge1)?,
            mean_rouge(preds, golds, RougeVariant::RougeL)?,
        ]),
    }
}

/// Per-user value of `metric` for one prediction. Accuracy is 0/1, MAE
/// and RMSE are the absolute error, F1 is the single-pair macro-F1.
pub fn per_user_value(
    task: TaskId,
    metric: MetricName,
    pred: &str,
    gold: &str,
) -> Result<f64, MetricError> {
    Ok(match metric {
        MetricName::Accuracy => accuracy(&[pred], &[gold])?.value,
        MetricName::F1 => {
            macro_f1(
                &[pred],
                &[gold],
                task.labels().ok_or(MetricError::EmptyLabelSet)?,
            )?
            .value
        }
        MetricName::Mae | MetricName::Rmse => (parse_rating(pred) - parse_rating(gold)).abs(),
        MetricName::Rouge1 => rouge(pred, gold, RougeVariant::Rouge1)?.value,
        MetricName::RougeL => rouge(pred, gold, RougeVariant::RougeL)?.value,
    })
}
