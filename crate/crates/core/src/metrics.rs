//! Evaluation metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numkit::DenseVector;

/// Mean squared error divided by the mean base outcome.
pub fn nmse(predictions: &[f64], outcomes: &[f64], base_outcomes: &[f64]) -> Result<f64> {
    check_dim(predictions.len(), outcomes.len())?;
    if predictions.is_empty() || base_outcomes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let nc = base_outcomes.iter().sum::<f64>() / base_outcomes.len() as f64;
    if nc == 0.0 || !nc.is_finite() {
        return Err(Error::Normalization);
    }
    let mse = predictions
        .iter()
        .zip(outcomes)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / predictions.len() as f64;
    Ok(mse / nc)
}

/// Mean binary cross-entropy of probabilities against 0/1 labels.
pub fn binary_cross_entropy(probabilities: &[f64], labels: &[f64]) -> Result<f64> {
    check_dim(probabilities.len(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let eps = 1e-12;
    Ok(probabilities
        .iter()
        .zip(labels)
        .map(|(p, y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1 {
    pub value: f64,
    /// Precision or recall had a zero denominator; `value` is then 0.
    pub zero_division: bool,
}

/// F1 of binary predictions (positive class 1).
pub fn f1_binary(predictions: &[bool], labels: &[bool]) -> Result<F1> {
    check_dim(predictions.len(), labels.len())?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fneg))
}

pub fn f1_from_counts(tp: usize, fp: usize, fneg: usize) -> F1 {
    if tp + fp == 0 || tp + fneg == 0 {
        return F1 {
            value: 0.0,
            zero_division: true,
        };
    }
    F1 {
        value: 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64,
        zero_division: false,
    }
}

/// Fraction of agents whose response equals the recommendation bitwise.
pub fn compliance_rate(responses: &[DenseVector], recommendations: &[DenseVector]) -> Result<f64> {
    check_dim(responses.len(), recommendations.len())?;
    if responses.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let adopted = responses
        .iter()
        .zip(recommendations)
        .filter(|(x, r)| x.bitwise_eq(r))
        .count();
    Ok(adopted as f64 / responses.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricTag {
    Offline,
    Strategic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub name: String,
    pub value: f64,
    pub population: usize,
    pub seed: u64,
    pub tag: MetricTag,
}

/// Writes reports as `method,metric,tag,value,population,seed` rows.
pub fn write_metric_table<W: Write>(reports: &[MetricReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "metric", "tag", "value", "population", "seed"])?;
    for r in reports {
        let tag = match r.tag {
            MetricTag::Offline => "offline",
            MetricTag::Strategic => "strategic",
        };
        out.write_record([
            r.method.clone(),
            r.name.clone(),
            tag.to_string(),
            format!("{:?}", r.value),
            r.population.to_string(),
            r.seed.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("metrics", e))?;
    Ok(())
}
