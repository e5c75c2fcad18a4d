//! German-credit style tabular data: ingestion, encoding, a logistic outcome
//! simulator and bootstrap augmentation.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::agents::{AgentRecord, CostSpec, ReactionKind};
use crate::error::{Error, Result};
use crate::explain::Constraints;
use crate::model::{LogisticModel, ScalarModel};
use crate::numkit::tape::sigmoid;
use crate::numkit::DenseVector;
use crate::rng::{stream_for, Purpose};

const RAW_COLUMNS: usize = 21;
/// Raw attributes (1-based) that are dropped: personal status/sex and age.
const DROPPED: [usize; 2] = [9, 13];
/// Raw attributes (1-based) that are numeric.
const NUMERIC: [usize; 7] = [2, 5, 8, 11, 13, 16, 18];
/// Raw attributes (1-based) the agent may change.
const MODIFIABLE_RAW: [usize; 8] = [1, 3, 5, 6, 7, 8, 10, 11];
const NAMES: [&str; 20] = [
    "checking_status",
    "duration",
    "credit_history",
    "purpose",
    "credit_amount",
    "savings",
    "employment",
    "installment_rate",
    "personal_status_sex",
    "other_debtors_guarantors",
    "residence_since",
    "property",
    "age",
    "other_installment_plans",
    "housing",
    "existing_credits",
    "job",
    "people_liable",
    "telephone",
    "foreign_worker",
];

/// Encoded indices of the modifiable features after the drop.
pub const CREDIT_MODIFIABLE: [usize; 8] = [0, 2, 4, 5, 6, 7, 8, 9];

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    /// Standardized real column.
    Numeric,
    /// Integer codes `0..levels.len()`, indexing the sorted raw levels.
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub modifiable: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Constraints for recommendations: bounds, modifiable set and levels.
    pub fn constraints(&self) -> Constraints {
        let categorical = self
            .kinds
            .iter()
            .enumerate()
            .filter_map(|(i, k)| match k {
                ColumnKind::Categorical { levels } => Some((i, (0..levels.len()).map(|l| l as f64).collect())),
                ColumnKind::Numeric => None,
            })
            .collect();
        Constraints {
            bounds: Some((self.lower.clone(), self.upper.clone())),
            modifiable: Some(self.modifiable.clone()),
            categorical,
        }
    }

    pub fn cost(&self, scale: f64) -> CostSpec {
        CostSpec::WeightedL1 {
            scale,
            modifiable: self.modifiable.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }

    /// Agents whose base covariates are the rows.
    pub fn agents(&self, scale: f64) -> Result<Vec<AgentRecord>> {
        let cost = self.cost(scale);
        self.rows
            .iter()
            .map(|r| {
                Ok(AgentRecord {
                    base: DenseVector::new(r.clone())?,
                    z: 0.0,
                    cost: cost.clone(),
                    reaction: ReactionKind::ArexChooser,
                })
            })
            .collect()
    }

    fn column_std(&self, j: usize) -> f64 {
        let n = self.rows.len() as f64;
        let mean = self.rows.iter().map(|r| r[j]).sum::<f64>() / n;
        (self.rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt()
    }
}

pub fn load_credit(path: &Path) -> Result<TabularDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_credit(&text)
}

/// Parses the space-delimited 20-attribute + label layout. Labels `1` (good)
/// and `2` (bad) become `1` and `0`.
pub fn parse_credit(text: &str) -> Result<TabularDataset> {
    let mut raw: Vec<Vec<&str>> = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != RAW_COLUMNS {
            return Err(Error::Schema(format!(
                "line {line_no}: expected {RAW_COLUMNS} columns, found {}",
                fields.len()
            )));
        }
        labels.push(match fields[20] {
            "1" => 1.0,
            "2" => 0.0,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("label `{other}` is not 1 or 2"),
                })
            }
        });
        for &attr in &NUMERIC {
            if fields[attr - 1].parse::<f64>().is_err() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("attribute {attr} value `{}` is not numeric", fields[attr - 1]),
                });
            }
        }
        raw.push(fields);
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let kept: Vec<usize> = (1..=20).filter(|a| !DROPPED.contains(a)).collect();
    let mut names = Vec::new();
    let mut kinds = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for &attr in &kept {
        names.push(NAMES[attr - 1].to_string());
        let values: Vec<&str> = raw.iter().map(|f| f[attr - 1]).collect();
        if NUMERIC.contains(&attr) {
            let v: Vec<f64> = values.iter().map(|s| s.parse().expect("checked above")).collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            let sd = if sd > 0.0 { sd } else { 1.0 };
            columns.push(v.iter().map(|x| (x - mean) / sd).collect());
            kinds.push(ColumnKind::Numeric);
        } else {
            let levels: Vec<String> = values.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>().into_iter().collect();
            columns.push(
                values
                    .iter()
                    .map(|s| levels.binary_search_by(|l| l.as_str().cmp(s)).expect("level present") as f64)
                    .collect(),
            );
            kinds.push(ColumnKind::Categorical { levels });
        }
    }
    let lower = columns.iter().map(|c| c.iter().cloned().fold(f64::INFINITY, f64::min)).collect();
    let upper = columns.iter().map(|c| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
    let modifiable = MODIFIABLE_RAW
        .iter()
        .map(|a| kept.iter().position(|k| k == a).expect("modifiable attribute kept"))
        .collect();
    let rows = (0..raw.len()).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    Ok(TabularDataset {
        names,
        kinds,
        lower,
        upper,
        modifiable,
        rows,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatorFit {
    pub model: LogisticModel,
    /// All labels were equal; the model is the constant predictor.
    pub degenerate: bool,
    pub loss: f64,
}

fn mean_bce(model: &LogisticModel, rows: &[Vec<f64>], labels: &[f64]) -> f64 {
    crate::metrics::binary_cross_entropy(
        &rows.iter().map(|r| model.value(r)).collect::<Vec<_>>(),
        labels,
    )
    .unwrap_or(f64::NAN)
}

/// Logistic regression by full-batch gradient descent on mean BCE.
pub fn fit_outcome_simulator(data: &TabularDataset, steps: usize, lr: f64) -> Result<SimulatorFit> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.len() as f64;
    let d = data.dim();
    let positive = data.labels.iter().sum::<f64>() / n;
    if positive == 0.0 || positive == 1.0 {
        let p = positive.clamp(1e-6, 1.0 - 1e-6);
        let mut model = LogisticModel::zeros(d);
        model.bias = (p / (1.0 - p)).ln();
        let loss = mean_bce(&model, &data.rows, &data.labels);
        return Ok(SimulatorFit {
            model,
            degenerate: true,
            loss,
        });
    }
    let mut model = LogisticModel::zeros(d);
    model.bias = (positive / (1.0 - positive)).ln();
    let mut gw = vec![0.0; d];
    for step in 0..steps {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (r, y) in data.rows.iter().zip(&data.labels) {
            let e = sigmoid(model.logit(r)) - y;
            gb += e;
            for (g, v) in gw.iter_mut().zip(r) {
                *g += e * v;
            }
        }
        model.bias -= lr * gb / n;
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= lr * g / n;
        }
        if !model.bias.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence {
                iteration: step,
                context: "logistic outcome simulator".into(),
            });
        }
    }
    let loss = mean_bce(&model, &data.rows, &data.labels);
    Ok(SimulatorFit {
        model,
        degenerate: false,
        loss,
    })
}

/// `n` new rows resampled with replacement. Numeric columns get Gaussian
/// jitter of `jitter` column standard deviations, clipped to the bounds;
/// labels are drawn from the simulator. `round` separates independent draws.
pub fn bootstrap_sample(
    data: &TabularDataset,
    n: usize,
    jitter: f64,
    simulator: Option<&LogisticModel>,
    seed: u64,
    round: u64,
) -> Result<TabularDataset> {
    if !(jitter >= 0.0) {
        return Err(Error::config("credit.jitter", "must be nonnegative"));
    }
    if n > 0 && data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let s = match (n, simulator) {
        (0, _) => None,
        (_, None) => return Err(Error::UninitializedSimulator),
        (_, Some(s)) => Some(s),
    };
    let sds: Vec<f64> = (0..data.dim())
        .map(|j| match data.kinds[j] {
            ColumnKind::Numeric => jitter * data.column_std(j),
            ColumnKind::Categorical { .. } => 0.0,
        })
        .collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for t in 0..n {
        let mut rng = stream_for(seed, Purpose::Augment, round, t as u64);
        let mut row = data.rows[rng.random_range(0..data.len())].clone();
        for (j, v) in row.iter_mut().enumerate() {
            if sds[j] > 0.0 {
                let noise: f64 = Normal::new(0.0, sds[j]).map_err(|e| Error::Numeric(e.to_string()))?.sample(&mut rng);
                *v = (*v + noise).clamp(data.lower[j], data.upper[j]);
            }
        }
        let p = s.expect("simulator present when n > 0").value(&row);
        labels.push(if rng.random_bool(p.clamp(0.0, 1.0)) { 1.0 } else { 0.0 });
        rows.push(row);
    }
    Ok(TabularDataset {
        rows,
        labels,
        ..data.clone_schema()
    })
}

/// The dataset followed by `n_extra` bootstrap rows.
pub fn bootstrap_augment(
    data: &TabularDataset,
    n_extra: usize,
    jitter: f64,
    simulator: Option<&LogisticModel>,
    seed: u64,
) -> Result<TabularDataset> {
    let extra = bootstrap_sample(data, n_extra, jitter, simulator, seed, 0)?;
    let mut out = data.clone();
    out.rows.extend(extra.rows);
    out.labels.extend(extra.labels);
    Ok(out)
}

impl TabularDataset {
    fn clone_schema(&self) -> TabularDataset {
        TabularDataset {
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            modifiable: self.modifiable.clone(),
            rows: Vec::new(),
            labels: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
A11 6 A34 A43 1169 A65 A75 4 A93 A101 4 A121 67 A143 A152 2 A173 1 A192 A201 1
A12 48 A32 A43 5951 A61 A73 2 A92 A101 2 A121 22 A143 A152 1 A173 1 A191 A201 2
A14 12 A34 A46 2096 A61 A74 2 A93 A101 3 A121 49 A143 A152 1 A172 2 A191 A201 1
A11 42 A32 A42 7882 A61 A74 2 A93 A103 4 A122 45 A143 A153 1 A173 2 A191 A201 1
";

    #[test]
    fn layout_and_encoding() {
        let d = parse_credit(SAMPLE).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.dim(), 18);
        assert_eq!(d.modifiable, CREDIT_MODIFIABLE.to_vec());
        assert_eq!(d.labels, vec![1.0, 0.0, 1.0, 1.0]);
        assert!(!d.names.contains(&"age".to_string()));
        assert!(!d.names.contains(&"personal_status_sex".to_string()));
        // Purpose levels sort lexicographically: A42 < A43 < A46.
        assert_eq!(d.rows.iter().map(|r| r[3]).collect::<Vec<_>>(), vec![1.0, 1.0, 2.0, 0.0]);
        assert_eq!(d.rows[0][0], 0.0);
        assert_eq!(d.rows[2][0], 2.0);
    }

    #[test]
    fn schema_and_parse_errors() {
        assert!(matches!(parse_credit("A11 6 A34\n"), Err(Error::Schema(_))));
        let bad = SAMPLE.replacen("1169", "lots", 1);
        assert!(matches!(parse_credit(&bad), Err(Error::Parse { line: 1, .. })));
        let bad_label = SAMPLE.replacen("A201 2", "A201 3", 1);
        assert!(matches!(parse_credit(&bad_label), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn separable_toy_simulator() {
        let mut d = parse_credit(SAMPLE).unwrap();
        d.rows = (0..200).map(|i| vec![i as f64 / 100.0 - 1.0]).collect();
        d.labels = d.rows.iter().map(|r| if r[0] > 0.0 { 1.0 } else { 0.0 }).collect();
        d.names.truncate(1);
        d.kinds.truncate(1);
        let fit = fit_outcome_simulator(&d, 5000, 1.0).unwrap();
        let correct = d
            .rows
            .iter()
            .zip(&d.labels)
            .filter(|(r, y)| (fit.model.value(r) >= 0.5) == (**y == 1.0))
            .count();
        assert!(correct as f64 / 200.0 > 0.99);
        d.labels = vec![1.0; 200];
        let flat = fit_outcome_simulator(&d, 10, 1.0).unwrap();
        assert!(flat.degenerate);
        assert!(flat.model.weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn augmentation_edge_cases() {
        let d = parse_credit(SAMPLE).unwrap();
        assert_eq!(bootstrap_augment(&d, 0, 0.0, None, 1).unwrap(), d);
        assert!(matches!(bootstrap_augment(&d, 3, 0.05, None, 1), Err(Error::UninitializedSimulator)));
    }
}
