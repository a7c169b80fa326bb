use std::fs;
use std::path::{Path, PathBuf};

use heavytail::linalg::CorrelationMatrix;
use heavytail::SampleMatrix;

use crate::error::CliError;

/// 17 significant digits, round-trip exact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV table held in memory until the stage finishes.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Output directory with all files written in one pass at the end of a stage.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| {
            CliError::Usage(format!(
                "cannot create output directory {}: {e}",
                root.display()
            ))
        })?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_table(&self, name: &str, t: &Table) -> Result<(), CliError> {
        let path = self.path(name);
        let io_err =
            |e: csv::Error| CliError::Usage(format!("cannot write {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(io_err)?;
        w.write_record(&t.header).map_err(io_err)?;
        for r in &t.rows {
            w.write_record(r).map_err(io_err)?;
        }
        w.flush()
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, text)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Usage(format!("cannot serialize {name}: {e}")))?;
        text.push('\n');
        self.write_text(name, &text)
    }
}

pub fn sample_table(s: &SampleMatrix) -> Table {
    let mut t = Table::new(s.labels().iter().cloned());
    for k in 0..s.nrows() {
        t.push(s.columns().iter().map(|c| fmt_f64(c[k])).collect());
    }
    t
}

pub fn matrix_table(labels: &[String], m: &CorrelationMatrix) -> Table {
    let mut t = Table::new(std::iter::once("label".to_string()).chain(labels.iter().cloned()));
    for (i, row) in m.rows().into_iter().enumerate() {
        t.push(
            std::iter::once(labels[i].clone())
                .chain(row.into_iter().map(fmt_f64))
                .collect(),
        );
    }
    t
}

/// Read a numeric CSV with a header row into columns.
pub fn read_sample(path: &Path) -> Result<SampleMatrix, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read data {}: {e}", path.display())))?;
    let labels: Vec<String> = r
        .headers()
        .map_err(|e| CliError::Data(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if labels.is_empty() || labels.iter().all(|l| l.is_empty()) {
        return Err(CliError::Data(format!(
            "{}: missing header row",
            path.display()
        )));
    }
    let mut columns = vec![Vec::new(); labels.len()];
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CliError::Data(format!("{}: row {row}: {e}", path.display())))?;
        if rec.len() != labels.len() {
            return Err(CliError::Data(format!(
                "{}: row {row} has {} fields, header has {}",
                path.display(),
                rec.len(),
                labels.len()
            )));
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Data(format!(
                    "{}: row {row}, column {} ('{}'): not a number: '{cell}'",
                    path.display(),
                    j + 1,
                    labels[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!(
                    "{}: row {row}, column {} ('{}'): non-finite value '{cell}'",
                    path.display(),
                    j + 1,
                    labels[j]
                )));
            }
            columns[j].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(SampleMatrix::new(labels, columns)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips_with_17_digits() {
        for x in [0.1, -2.5e-300, 1.0 / 3.0, 12345.678, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17, "{s}");
        }
    }
}
