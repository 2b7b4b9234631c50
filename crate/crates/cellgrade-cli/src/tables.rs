//! The CSV table formats the subcommands exchange.
//!
//! Features: `patch_id,f000..f080[,target]`. Targets: `patch_id,true_cellularity`.
//! Predictions: `patch_id,prediction`. Floats are written with Rust's shortest
//! round-trip formatting, so text round-trips are bit-exact.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cellgrade::gbt::FeatureMatrix;

pub struct FeatureTable {
    pub ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub matrix: FeatureMatrix,
    pub targets: Option<Vec<f64>>,
}

pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening features {}", path.display()))?;
    let headers = reader.headers().context("reading feature header")?.clone();
    let columns: Vec<&str> = headers.iter().collect();
    if columns.first() != Some(&"patch_id") {
        bail!("feature file must start with a patch_id column, found {columns:?}");
    }
    let has_target = columns.last() == Some(&"target");
    let feature_end = columns.len() - usize::from(has_target);
    if feature_end < 2 {
        bail!("feature file has no feature columns");
    }
    let feature_names: Vec<String> = columns[1..feature_end].iter().map(|s| s.to_string()).collect();

    let mut ids = Vec::new();
    let mut matrix = FeatureMatrix::new(feature_names.len());
    let mut targets = has_target.then(Vec::new);
    let mut row_buf = Vec::with_capacity(feature_names.len());
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("reading feature row {}", i + 2))?;
        if record.len() != columns.len() {
            bail!(
                "feature row {} has {} fields, expected {}",
                i + 2,
                record.len(),
                columns.len()
            );
        }
        ids.push(record[0].to_string());
        row_buf.clear();
        for (j, field) in record.iter().enumerate().skip(1).take(feature_names.len()) {
            let value: f64 = field.parse().with_context(|| {
                format!("feature row {} column {}: bad number {field:?}", i + 2, columns[j])
            })?;
            row_buf.push(value);
        }
        matrix.push_row(&row_buf).context("assembling feature matrix")?;
        if let Some(targets) = targets.as_mut() {
            let field = &record[columns.len() - 1];
            let value: f64 = field.parse().with_context(|| {
                format!("feature row {}: bad target {field:?}", i + 2)
            })?;
            targets.push(value);
        }
    }
    Ok(FeatureTable {
        ids,
        feature_names,
        matrix,
        targets,
    })
}

/// Reads an id-to-score CSV with the given header, in file order.
fn read_scores(path: &Path, score_column: &str) -> Result<Vec<(String, f64)>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers().context("reading header")?;
    let expected = ["patch_id", score_column];
    if headers.iter().collect::<Vec<_>>() != expected {
        bail!(
            "{} must have columns {expected:?}, found {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>()
        );
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("reading row {}", i + 2))?;
        let value: f64 = record[1]
            .parse()
            .with_context(|| format!("row {}: bad {score_column} {:?}", i + 2, &record[1]))?;
        rows.push((record[0].to_string(), value));
    }
    Ok(rows)
}

pub fn read_targets(path: &Path) -> Result<Vec<(String, f64)>> {
    read_scores(path, "true_cellularity")
}

pub fn read_predictions(path: &Path) -> Result<Vec<(String, f64)>> {
    read_scores(path, "prediction")
}
