//! CSV dataset ingestion and export.
//!
//! The on-disk contract: a header row, exactly one column named `label`,
//! every other column a numeric feature; each data row is one sample.
//! Labels are remapped to contiguous class indices (sorted by label text)
//! and the mapping is kept so exports reproduce the original labels.

use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("no column named `label` in the header")]
    MissingLabelColumn,
    #[error("no feature columns besides `label`")]
    NoFeatures,
    #[error("data row {row} has {got} fields, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("data row {row}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("data row {row}, column `{column}`: non-finite value {value}")]
    NonFinite {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A labeled sample matrix: `samples` is `N × L_tot` with one column per
/// sample and `labels[j]` the class index of column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Array2<f64>,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    /// Original label text per class index.
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_count(&self) -> usize {
        self.label_names.len()
    }
}

pub fn ingest_csv(path: &Path) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or(DatasetError::MissingLabelColumn)?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_col)
        .map(|(_, h)| h.to_string())
        .collect();
    if feature_names.is_empty() {
        return Err(DatasetError::NoFeatures);
    }
    let n = feature_names.len();

    let mut raw_labels: Vec<String> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1; // 1-based data row, header excluded
        let record = record?;
        if record.len() != headers.len() {
            return Err(DatasetError::Ragged {
                row,
                expected: headers.len(),
                got: record.len(),
            });
        }
        for (col, field) in record.iter().enumerate() {
            if col == label_col {
                raw_labels.push(field.to_string());
                continue;
            }
            let column = headers[col].to_string();
            let value: f64 = field.parse().map_err(|_| DatasetError::NonNumeric {
                row,
                column: column.clone(),
                value: field.to_string(),
            })?;
            if !value.is_finite() {
                return Err(DatasetError::NonFinite { row, column, value });
            }
            values.push(value);
        }
    }
    let l_tot = raw_labels.len();
    if l_tot == 0 {
        return Err(DatasetError::Empty);
    }

    // contiguous class indices in sorted label order
    let mut label_names: Vec<String> = raw_labels.clone();
    label_names.sort();
    label_names.dedup();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| label_names.binary_search(l).expect("label just collected"))
        .collect();

    // values are row-major per sample; transpose into N×L_tot columns
    let mut samples = Array2::<f64>::zeros((n, l_tot));
    for j in 0..l_tot {
        for i in 0..n {
            samples[(i, j)] = values[j * n + i];
        }
    }
    Ok(Dataset {
        samples,
        labels,
        feature_names,
        label_names,
    })
}

/// Write a dataset back out in the ingestion format (label column first).
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend(ds.feature_names.iter().cloned());
    writer.write_record(&header)?;
    for j in 0..ds.len() {
        let mut record = vec![ds.label_names[ds.labels[j]].clone()];
        for i in 0..ds.n() {
            record.push(format!("{}", ds.samples[(i, j)]));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Package a synthetic benchmark draw as a dataset with generated feature
/// names and stringified class labels.
pub fn from_synth(data: &krls::synth::SynthDataset) -> Dataset {
    let n = data.samples.nrows();
    let classes = data.labels.iter().copied().max().map_or(0, |m| m + 1);
    Dataset {
        samples: data.samples.clone(),
        labels: data.labels.clone(),
        feature_names: (0..n).map(|i| format!("f{i}")).collect(),
        label_names: (0..classes).map(|c| c.to_string()).collect(),
    }
}
