//! CSV ingestion. A header row is required; feature columns are every column
//! except the reserved `y`, `beta_true` and `loss_*`.

use std::path::Path;

use shiftweigh::FeatureMatrix;

use crate::failure::CliError;

pub const LABEL_COLUMN: &str = "y";
pub const TRUE_BETA_COLUMN: &str = "beta_true";
pub const LOSS_PREFIX: &str = "loss_";

fn is_reserved(name: &str) -> bool {
    name == LABEL_COLUMN || name == TRUE_BETA_COLUMN || name.starts_with(LOSS_PREFIX)
}

/// A parsed CSV table, split into features and reserved columns.
#[derive(Debug)]
pub struct Table {
    pub feature_names: Vec<String>,
    pub rows: usize,
    /// `None` only for tables read with [`read_loss_table`].
    features: Option<FeatureMatrix>,
    pub labels: Option<Vec<f64>>,
    pub beta_true: Option<Vec<f64>>,
    /// `(column name, values)` for every `loss_*` column, in file order.
    pub losses: Vec<(String, Vec<f64>)>,
}

impl Table {
    pub fn features(&self) -> &FeatureMatrix {
        self.features.as_ref().expect("read_table requires feature columns")
    }

    pub fn require_labels(&self, path: &Path) -> Result<&[f64], CliError> {
        self.labels
            .as_deref()
            .ok_or_else(|| CliError::input(format!("{}: no '{LABEL_COLUMN}' column", path.display())))
    }

    /// Checks that `other` has the same feature columns, in the same order.
    pub fn check_features_match(&self, other: &Table, self_path: &Path, other_path: &Path) -> Result<(), CliError> {
        if self.feature_names != other.feature_names {
            return Err(CliError::input(format!(
                "feature columns differ: {} has {:?}, {} has {:?}",
                self_path.display(),
                self.feature_names,
                other_path.display(),
                other.feature_names
            )));
        }
        Ok(())
    }
}

/// Reads a table that must have at least one feature column.
pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
    parse_table(file, &path.display().to_string(), true)
}

/// Reads a table that may consist of `loss_*` columns only.
pub fn read_loss_table(path: &Path) -> Result<Table, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
    parse_table(file, &path.display().to_string(), false)
}

pub fn parse_table(reader: impl std::io::Read, source: &str, require_features: bool) -> Result<Table, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::input(format!("{source}: cannot read header row: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(CliError::input(format!("{source}: missing header row")));
    }
    let mut seen = std::collections::BTreeSet::new();
    for h in &headers {
        if !seen.insert(h) {
            return Err(CliError::input(format!("{source}: duplicate column '{h}'")));
        }
    }

    let feature_idx: Vec<usize> = (0..headers.len()).filter(|&i| !is_reserved(&headers[i])).collect();
    if require_features && feature_idx.is_empty() {
        return Err(CliError::input(format!("{source}: no feature columns (every column name is reserved)")));
    }
    let label_idx = headers.iter().position(|h| h == LABEL_COLUMN);
    let beta_idx = headers.iter().position(|h| h == TRUE_BETA_COLUMN);
    let loss_idx: Vec<usize> = (0..headers.len()).filter(|&i| headers[i].starts_with(LOSS_PREFIX)).collect();

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut betas = Vec::new();
    let mut losses: Vec<Vec<f64>> = vec![Vec::new(); loss_idx.len()];
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        // Row numbers count data rows from 1; the header is line 1 of the file.
        let row = r + 1;
        let record = record.map_err(|e| CliError::input(format!("{source}: row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(CliError::input(format!(
                "{source}: row {row} has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let cell = |i: usize| -> Result<f64, CliError> {
            let text = &record[i];
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::input(format!(
                    "{source}: row {row}, column '{}': cannot parse '{text}' as a finite number",
                    headers[i]
                ))),
            }
        };
        for &i in &feature_idx {
            data.push(cell(i)?);
        }
        if let Some(i) = label_idx {
            labels.push(cell(i)?);
        }
        if let Some(i) = beta_idx {
            betas.push(cell(i)?);
        }
        for (k, &i) in loss_idx.iter().enumerate() {
            losses[k].push(cell(i)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::input(format!("{source}: no data rows")));
    }
    let features = if feature_idx.is_empty() {
        None
    } else {
        Some(FeatureMatrix::new(rows, feature_idx.len(), data).map_err(CliError::from)?)
    };
    Ok(Table {
        feature_names: feature_idx.iter().map(|&i| headers[i].clone()).collect(),
        rows,
        features,
        labels: label_idx.map(|_| labels),
        beta_true: beta_idx.map(|_| betas),
        losses: loss_idx.iter().map(|&i| headers[i].clone()).zip(losses).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_reserved_columns() {
        let text = "x1,y,x2,beta_true,loss_a,loss_b\n0.1,1,0.2,1.5,0,1\n0.3,0,0.4,0.5,1,1\n";
        let t = parse_table(text.as_bytes(), "t", true).unwrap();
        assert_eq!(t.feature_names, vec!["x1", "x2"]);
        assert_eq!(t.features().row(1), &[0.3, 0.4]);
        assert_eq!(t.labels.unwrap(), vec![1.0, 0.0]);
        assert_eq!(t.beta_true.unwrap(), vec![1.5, 0.5]);
        assert_eq!(t.losses[1], ("loss_b".to_string(), vec![1.0, 1.0]));
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let err = parse_table("x,y\n0.1,1\n0.2,abc\n".as_bytes(), "t", true).unwrap_err();
        assert!(err.message.contains("row 2") && err.message.contains("'y'"), "{}", err.message);
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rejects_ragged_and_empty_tables() {
        assert!(parse_table("x,y\n0.1\n".as_bytes(), "t", true).is_err());
        assert!(parse_table("x,y\n".as_bytes(), "t", true).is_err());
        assert!(parse_table("x,x\n1,2\n".as_bytes(), "t", true).is_err());
    }
}
