//! Per-case numeric results (`results.csv`) and comparison tables built from
//! several cases.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// File every case is expected to leave in its root directory.
pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("results missing for case `{case}`: {path} not found")]
    Missing { case: String, path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: empty results file")]
    Empty { file: String },
    #[error("{file}: duplicate series name `{name}`")]
    DuplicateSeries { file: String, name: String },
    #[error("{file}: row {row}: expected {expected} fields, found {found}")]
    Ragged {
        file: String,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{file}: row {row}, column `{column}`: `{cell}` is not a finite number")]
    BadCell {
        file: String,
        row: usize,
        column: String,
        cell: String,
    },
    #[error("{file}: row {row}: {message}")]
    Csv {
        file: String,
        row: usize,
        message: String,
    },
}

/// Named numeric series of equal length, in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    source: PathBuf,
}

impl ResultTable {
    /// Builds a table from `(name, values)` pairs. All series must have the
    /// same length and finite values.
    pub fn from_series(source: impl Into<PathBuf>, series: Vec<(String, Vec<f64>)>) -> Result<Self, ResultsError> {
        let source = source.into();
        let label = source.display().to_string();
        let mut names = Vec::with_capacity(series.len());
        let mut columns = Vec::with_capacity(series.len());
        let len = series.first().map(|(_, v)| v.len()).unwrap_or(0);
        for (name, values) in series {
            if names.contains(&name) {
                return Err(ResultsError::DuplicateSeries { file: label, name });
            }
            if values.len() != len {
                return Err(ResultsError::Ragged {
                    file: label,
                    row: values.len().min(len) + 2,
                    expected: len,
                    found: values.len(),
                });
            }
            if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(ResultsError::BadCell {
                    file: label,
                    row: i + 2,
                    column: name,
                    cell: v.to_string(),
                });
            }
            names.push(name);
            columns.push(values);
        }
        Ok(Self { names, columns, source })
    }

    /// Parses CSV text: a header row of series names followed by numeric rows.
    /// Row numbers in errors are 1-based and count the header as row 1.
    pub fn parse(text: &str, source: impl Into<PathBuf>) -> Result<Self, ResultsError> {
        let source = source.into();
        let label = source.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = match records.next() {
            None => return Err(ResultsError::Empty { file: label }),
            Some(r) => r.map_err(|e| csv_error(&label, 1, e))?,
        };
        if header.len() == 1 && header[0].is_empty() {
            return Err(ResultsError::Empty { file: label });
        }
        let names: Vec<String> = header.iter().map(str::to_string).collect();
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(ResultsError::DuplicateSeries {
                    file: label,
                    name: name.clone(),
                });
            }
        }
        let mut columns = vec![Vec::new(); names.len()];
        for (idx, record) in records.enumerate() {
            let row = idx + 2;
            let record = record.map_err(|e| csv_error(&label, row, e))?;
            if record.len() != names.len() {
                return Err(ResultsError::Ragged {
                    file: label,
                    row,
                    expected: names.len(),
                    found: record.len(),
                });
            }
            for (col, cell) in record.iter().enumerate() {
                let value = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| ResultsError::BadCell {
                    file: label.clone(),
                    row,
                    column: names[col].clone(),
                    cell: cell.to_string(),
                })?;
                columns[col].push(value);
            }
        }
        Ok(Self { names, columns, source })
    }

    /// Reads and parses `path`.
    pub fn read(path: &Path) -> Result<Self, ResultsError> {
        let text = fs::read_to_string(path).map_err(|source| ResultsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn source(&self) -> &Path {
        &self.source
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// CSV text that [`ResultTable::parse`] reads back to an identical table.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        wtr.write_record(&self.names).expect("in-memory csv");
        for row in 0..self.len() {
            wtr.write_record(self.columns.iter().map(|c| format!("{:?}", c[row])))
                .expect("in-memory csv");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory csv")).expect("csv output is utf-8")
    }
}

fn csv_error(source: &str, row: usize, err: csv::Error) -> ResultsError {
    ResultsError::Csv {
        file: source.to_string(),
        row,
        message: err.to_string(),
    }
}

/// One x column, one labelled y column per case, and an optional `exact`
/// column. Every column has one cell per x value; `None` cells are written
/// empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub x_name: String,
    pub x: Vec<f64>,
    pub columns: Vec<(String, Vec<Option<f64>>)>,
    pub exact: Option<Vec<Option<f64>>>,
}

impl ComparisonTable {
    pub fn rows(&self) -> usize {
        self.x.len()
    }

    pub fn column(&self, label: &str) -> Option<&[Option<f64>]> {
        self.columns.iter().find(|(l, _)| l == label).map(|(_, c)| c.as_slice())
    }

    /// The non-empty cells of a column, in row order.
    pub fn values(&self, label: &str) -> Option<Vec<f64>> {
        self.column(label).map(|c| c.iter().flatten().copied().collect())
    }

    pub fn to_csv(&self) -> String {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut header = vec![self.x_name.clone()];
        header.extend(self.columns.iter().map(|(l, _)| l.clone()));
        if self.exact.is_some() {
            header.push("exact".to_string());
        }
        // writing to a Vec cannot fail
        wtr.write_record(&header).expect("in-memory csv");
        let cell = |col: &[Option<f64>], row: usize| col.get(row).copied().flatten().map(|v| format!("{v:?}")).unwrap_or_default();
        for (row, x) in self.x.iter().enumerate() {
            let mut record = vec![format!("{x:?}")];
            record.extend(self.columns.iter().map(|(_, c)| cell(c, row)));
            if let Some(exact) = &self.exact {
                record.push(cell(exact, row));
            }
            wtr.write_record(&record).expect("in-memory csv");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory csv")).expect("csv output is utf-8")
    }

    /// Reads a comparison CSV back. A final column named `exact` becomes
    /// [`ComparisonTable::exact`].
    pub fn parse(text: &str) -> Result<Self, ResultsError> {
        let label = "comparison".to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = match records.next() {
            None => return Err(ResultsError::Empty { file: label }),
            Some(r) => r.map_err(|e| csv_error(&label, 1, e))?,
        };
        let names: Vec<String> = header.iter().map(str::to_string).collect();
        if names.is_empty() {
            return Err(ResultsError::Empty { file: label });
        }
        let mut x = Vec::new();
        let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len() - 1];
        for (idx, record) in records.enumerate() {
            let row = idx + 2;
            let record = record.map_err(|e| csv_error(&label, row, e))?;
            if record.len() != names.len() {
                return Err(ResultsError::Ragged {
                    file: label,
                    row,
                    expected: names.len(),
                    found: record.len(),
                });
            }
            for (c, cell) in record.iter().enumerate() {
                let bad = || ResultsError::BadCell {
                    file: label.clone(),
                    row,
                    column: names[c].clone(),
                    cell: cell.to_string(),
                };
                let v = if cell.is_empty() && c > 0 {
                    None
                } else {
                    Some(cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad)?)
                };
                match c {
                    0 => x.push(v.expect("x cells are never empty")),
                    _ => cols[c - 1].push(v),
                }
            }
        }
        let mut names = names.into_iter();
        let x_name = names.next().unwrap_or_default();
        let mut columns: Vec<(String, Vec<Option<f64>>)> = names.zip(cols).collect();
        let exact = match columns.last() {
            Some((n, _)) if n == "exact" => columns.pop().map(|(_, c)| c),
            _ => None,
        };
        Ok(Self { x_name, x, columns, exact })
    }
}
