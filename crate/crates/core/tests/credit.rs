use std::path::{Path, PathBuf};

use arex::dataio::{bootstrap_augment, fit_outcome_simulator, load_credit, ColumnKind, CreditConfig, CREDIT_MODIFIABLE};
use arex::model::ScalarModel;

fn data_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/german.data")
}

fn raw_column(attr: usize) -> Vec<f64> {
    std::fs::read_to_string(data_path())
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().nth(attr - 1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn schema_of_the_credit_file() {
    let d = load_credit(&data_path()).unwrap();
    assert_eq!(d.len(), 1000);
    assert_eq!(d.dim(), 18);
    assert_eq!(d.modifiable, CREDIT_MODIFIABLE.to_vec());
    assert!(!d.names.iter().any(|n| n == "age" || n == "personal_status_sex"));
    assert_eq!(d.labels.iter().filter(|&&y| y == 1.0).count(), 700);
    let numeric = d.kinds.iter().filter(|k| matches!(k, ColumnKind::Numeric)).count();
    assert_eq!(numeric, 6);
}

#[test]
fn numeric_columns_are_standardized() {
    let d = load_credit(&data_path()).unwrap();
    // duration: raw attribute 2, encoded column 1
    let raw = raw_column(2);
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    for (row, x) in d.rows.iter().zip(&raw) {
        assert!((row[1] - (x - mean) / sd).abs() < 1e-9);
    }
    for (j, kind) in d.kinds.iter().enumerate() {
        if matches!(kind, ColumnKind::Numeric) {
            let col: Vec<f64> = d.rows.iter().map(|r| r[j]).collect();
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9, "{}", d.names[j]);
        }
    }
}

#[test]
fn bounds_are_the_column_extremes() {
    let d = load_credit(&data_path()).unwrap();
    for j in 0..d.dim() {
        let lo = d.rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let hi = d.rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((d.lower[j], d.upper[j]), (lo, hi), "{}", d.names[j]);
        if let ColumnKind::Categorical { levels } = &d.kinds[j] {
            assert_eq!((lo, hi), (0.0, (levels.len() - 1) as f64));
        }
    }
}

#[test]
fn simulator_fits_and_augmentation_stays_in_bounds() {
    let d = load_credit(&data_path()).unwrap();
    let cfg = CreditConfig::default();
    let fit = fit_outcome_simulator(&d, cfg.simulator_steps, cfg.simulator_lr).unwrap();
    assert!(!fit.degenerate);
    let correct = d
        .rows
        .iter()
        .zip(&d.labels)
        .filter(|(r, y)| (fit.model.value(r) >= 0.5) == (**y == 1.0))
        .count();
    assert!(correct as f64 / d.len() as f64 > 0.70, "{correct}");

    let a = bootstrap_augment(&d, 9000, cfg.jitter, Some(&fit.model), 0).unwrap();
    assert_eq!(a.len(), 10_000);
    assert_eq!(&a.rows[..1000], &d.rows[..]);
    for r in &a.rows {
        for j in 0..a.dim() {
            assert!(r[j] >= a.lower[j] && r[j] <= a.upper[j]);
            if !matches!(a.kinds[j], ColumnKind::Numeric) {
                assert_eq!(r[j], r[j].round());
            }
        }
    }
    assert!(a.labels.iter().all(|&y| y == 0.0 || y == 1.0));
    assert_eq!(a, bootstrap_augment(&d, 9000, cfg.jitter, Some(&fit.model), 0).unwrap());
    assert_ne!(a, bootstrap_augment(&d, 9000, cfg.jitter, Some(&fit.model), 1).unwrap());
}
