//! Columnar in-memory tables read from CSV.
//!
//! Matrix-valued columns use the header convention `name[1]`, `name[2]`,
//! ..., `name[J]`: the group must be contiguous and complete. Columns whose
//! values all parse as numbers become numeric; anything else is a factor.
//! Rows containing missing values (empty cells or `NA`) are dropped with a
//! count report.

use nalgebra::DMatrix;
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::formula::{ColumnType, DataSchema};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub enum Column {
    Numeric(Vec<f64>),
    Factor { values: Vec<String>, levels: Vec<String> },
    Matrix(DMatrix<f64>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Factor { values, .. } => values.len(),
            Column::Matrix(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column_type(&self) -> ColumnType {
        match self {
            Column::Numeric(_) => ColumnType::Numeric,
            Column::Factor { .. } => ColumnType::Factor,
            Column::Matrix(m) => ColumnType::Matrix { ncols: m.ncols() },
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DataTable {
    pub names: Vec<String>,
    pub columns: Vec<Column>,
    pub n: usize,
    /// Rows removed by listwise deletion when the table was read.
    pub dropped_rows: usize,
}

impl DataTable {
    pub fn schema(&self) -> DataSchema {
        DataSchema {
            columns: self
                .names
                .iter()
                .cloned()
                .zip(self.columns.iter().map(|c| c.column_type()))
                .collect(),
        }
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            other => Err(Error::ColumnType {
                col: name.into(),
                expected: "numeric scalar".into(),
                found: format!("{:?}", other.column_type()),
            }),
        }
    }

    pub fn factor(&self, name: &str) -> Result<(&[String], &[String])> {
        match self.column(name)? {
            Column::Factor { values, levels } => Ok((values, levels)),
            other => Err(Error::ColumnType {
                col: name.into(),
                expected: "factor".into(),
                found: format!("{:?}", other.column_type()),
            }),
        }
    }

    pub fn matrix(&self, name: &str) -> Result<&DMatrix<f64>> {
        match self.column(name)? {
            Column::Matrix(m) => Ok(m),
            other => Err(Error::ColumnType {
                col: name.into(),
                expected: "matrix group".into(),
                found: format!("{:?}", other.column_type()),
            }),
        }
    }

    /// Boolean interpretation of a column (AR start flags): accepts a
    /// factor with TRUE/FALSE-like levels or a numeric 0/1 column.
    pub fn boolean(&self, name: &str) -> Result<Vec<bool>> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v.iter().map(|&x| x != 0.0).collect()),
            Column::Factor { values, .. } => values
                .iter()
                .map(|s| match s.to_ascii_lowercase().as_str() {
                    "true" | "t" | "1" => Ok(true),
                    "false" | "f" | "0" => Ok(false),
                    other => Err(Error::ColumnType {
                        col: name.into(),
                        expected: "boolean".into(),
                        found: other.to_string(),
                    }),
                })
                .collect(),
            Column::Matrix(_) => Err(Error::ColumnType {
                col: name.into(),
                expected: "boolean".into(),
                found: "matrix".into(),
            }),
        }
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA" || cell == "NaN" || cell == "nan"
}

/// Header layout after grouping `name[j]` columns.
enum HeaderSlot {
    Scalar(String),
    /// (group name, 1-based index within the group)
    Member(String, usize),
}

pub fn read_csv_path(path: &Path) -> Result<DataTable> {
    let f = std::fs::File::open(path)?;
    read_csv(f)
}

pub fn read_csv<R: Read>(reader: R) -> Result<DataTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    let mut slots = Vec::with_capacity(headers.len());
    for h in &headers {
        if let Some((name, idx)) = parse_matrix_header(h) {
            slots.push(HeaderSlot::Member(name, idx));
        } else {
            slots.push(HeaderSlot::Scalar(h.clone()));
        }
    }

    // raw string cells, with listwise deletion
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut dropped = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv {
            line: i as u64 + 2,
            msg: e.to_string(),
        })?;
        let cells: Vec<String> = rec.iter().map(|s| s.trim().to_string()).collect();
        if cells.len() != headers.len() {
            return Err(Error::Csv {
                line: i as u64 + 2,
                msg: format!("expected {} fields, found {}", headers.len(), cells.len()),
            });
        }
        if cells.iter().any(|c| is_missing(c)) {
            dropped += 1;
            continue;
        }
        rows.push(cells);
    }
    if rows.is_empty() {
        return Err(Error::EmptyData);
    }
    let n = rows.len();

    // column order: scalars in header order, each matrix group at the
    // position of its first member
    let mut names: Vec<String> = Vec::new();
    let mut group_cols: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for (ci, slot) in slots.iter().enumerate() {
        match slot {
            HeaderSlot::Scalar(name) => names.push(name.clone()),
            HeaderSlot::Member(name, idx) => {
                let entry = group_cols.entry(name.clone()).or_default();
                if entry.is_empty() {
                    names.push(name.clone());
                }
                entry.push((*idx, ci));
            }
        }
    }
    for (name, members) in &mut group_cols {
        members.sort();
        for (want, (idx, _)) in members.iter().enumerate() {
            if *idx != want + 1 {
                return Err(Error::Invalid(format!(
                    "matrix group `{name}` is not contiguous/complete: missing index {}",
                    want + 1
                )));
            }
        }
    }

    let mut columns = Vec::with_capacity(names.len());
    for name in &names {
        if let Some(members) = group_cols.get(name) {
            let mut m = DMatrix::zeros(n, members.len());
            for (j, (_, ci)) in members.iter().enumerate() {
                for (r, row) in rows.iter().enumerate() {
                    m[(r, j)] = row[*ci].parse().map_err(|_| Error::Csv {
                        line: r as u64 + 2,
                        msg: format!("matrix cell `{}` in `{name}` is not numeric", row[*ci]),
                    })?;
                }
            }
            columns.push(Column::Matrix(m));
        } else {
            let ci = slots
                .iter()
                .position(|s| matches!(s, HeaderSlot::Scalar(h) if h == name))
                .unwrap();
            let parsed: Option<Vec<f64>> = rows.iter().map(|row| row[ci].parse().ok()).collect();
            match parsed {
                Some(v) => columns.push(Column::Numeric(v)),
                None => {
                    let values: Vec<String> = rows.iter().map(|row| row[ci].clone()).collect();
                    let mut levels: Vec<String> = values.clone();
                    levels.sort();
                    levels.dedup();
                    columns.push(Column::Factor { values, levels });
                }
            }
        }
    }

    Ok(DataTable {
        names,
        columns,
        n,
        dropped_rows: dropped,
    })
}

fn parse_matrix_header(h: &str) -> Option<(String, usize)> {
    let open = h.find('[')?;
    if !h.ends_with(']') {
        return None;
    }
    let name = h[..open].to_string();
    let idx: usize = h[open + 1..h.len() - 1].parse().ok()?;
    if name.is_empty() {
        return None;
    }
    Some((name, idx))
}
