//! In-memory columnar dataset shared by metrics, remedies and pollution.
//!
//! Tables are immutable once built: every transformation returns a new
//! [`DataTable`]. Missing cells are stored as `None` in every column kind.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn byte_width(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }

    /// Rounds `value` to what this precision can store.
    pub fn quantize(self, value: f64) -> f64 {
        match self {
            Precision::Single => value as f32 as f64,
            Precision::Double => value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric(Precision),
    Categorical,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Numeric {
        precision: Precision,
        values: Vec<Option<f64>>,
    },
    Categorical(Vec<Option<String>>),
}

/// Borrowed view of one cell, hashable so rows can be grouped and compared.
///
/// Numeric cells compare by bit pattern; `-0.0` and `0.0` are distinct.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CellRef<'a> {
    Missing,
    Num(u64),
    Cat(&'a str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    name: String,
    data: ColumnData,
}

impl Column {
    pub fn numeric(
        name: impl Into<String>,
        precision: Precision,
        values: Vec<Option<f64>>,
    ) -> Self {
        let values = values
            .into_iter()
            .map(|v| v.map(|x| precision.quantize(x)))
            .collect();
        Column {
            name: name.into(),
            data: ColumnData::Numeric { precision, values },
        }
    }

    /// Double-precision numeric column without missing cells.
    pub fn dense(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column::numeric(
            name,
            Precision::Double,
            values.into_iter().map(Some).collect(),
        )
    }

    pub fn categorical(name: impl Into<String>, values: Vec<Option<String>>) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Categorical(values),
        }
    }

    pub fn categorical_str(name: impl Into<String>, values: &[&str]) -> Self {
        Column::categorical(name, values.iter().map(|s| Some(s.to_string())).collect())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn data(&self) -> &ColumnData {
        &self.data
    }

    pub fn kind(&self) -> ColumnKind {
        match &self.data {
            ColumnData::Numeric { precision, .. } => ColumnKind::Numeric(*precision),
            ColumnData::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric { values, .. } => values.len(),
            ColumnData::Categorical(values) => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.data, ColumnData::Numeric { .. })
    }

    pub fn numeric_values(&self) -> Option<&[Option<f64>]> {
        match &self.data {
            ColumnData::Numeric { values, .. } => Some(values),
            ColumnData::Categorical(_) => None,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match &self.data {
            ColumnData::Numeric { values, .. } => values[row].is_none(),
            ColumnData::Categorical(values) => values[row].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_missing(i)).count()
    }

    pub fn cell(&self, row: usize) -> CellRef<'_> {
        match &self.data {
            ColumnData::Numeric { values, .. } => match values[row] {
                Some(v) => CellRef::Num(v.to_bits()),
                None => CellRef::Missing,
            },
            ColumnData::Categorical(values) => match &values[row] {
                Some(s) => CellRef::Cat(s),
                None => CellRef::Missing,
            },
        }
    }

    /// Text form of a cell, used for labels, groups and quasi-identifiers.
    /// Numbers use the shortest round-trip representation (`1.0` → `"1"`).
    pub fn key(&self, row: usize) -> Option<String> {
        match &self.data {
            ColumnData::Numeric { values, .. } => values[row].map(format_number),
            ColumnData::Categorical(values) => values[row].clone(),
        }
    }

    /// Builds a column of the same kind from the given source rows (repeats allowed).
    pub fn take(&self, rows: &[usize]) -> Column {
        let data = match &self.data {
            ColumnData::Numeric { precision, values } => ColumnData::Numeric {
                precision: *precision,
                values: rows.iter().map(|&r| values[r]).collect(),
            },
            ColumnData::Categorical(values) => {
                ColumnData::Categorical(rows.iter().map(|&r| values[r].clone()).collect())
            }
        };
        Column {
            name: self.name.clone(),
            data,
        }
    }

    pub fn with_precision(&self, precision: Precision) -> Column {
        match &self.data {
            ColumnData::Numeric { values, .. } => {
                Column::numeric(self.name.clone(), precision, values.clone())
            }
            ColumnData::Categorical(_) => self.clone(),
        }
    }

    /// Encoded payload size of the column in bytes, excluding container overhead.
    pub fn payload_bytes(&self) -> usize {
        match &self.data {
            ColumnData::Numeric { precision, values } => values.len() * precision.byte_width(),
            ColumnData::Categorical(values) => values.iter().flatten().map(|s| s.len()).sum(),
        }
    }
}

pub fn format_number(v: f64) -> String {
    format!("{v}")
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetMeta {
    #[serde(skip_serializing_if = "String::is_empty")]
    pub client_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitive_feature: Option<String>,
    /// Groups the sensitive feature is declared to take, observed or not.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sensitive_groups: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub quasi_identifiers: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
}

impl DatasetMeta {
    pub fn new(client_id: impl Into<String>) -> Self {
        DatasetMeta {
            client_id: client_id.into(),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataTable {
    columns: Vec<Column>,
    n_rows: usize,
    meta: DatasetMeta,
}

impl DataTable {
    pub fn new(columns: Vec<Column>, meta: DatasetMeta) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Column::len);
        let mut seen = BTreeSet::new();
        for col in &columns {
            if col.len() != n_rows {
                return Err(Error::Schema(format!(
                    "column `{}` has {} rows, expected {n_rows}",
                    col.name,
                    col.len()
                )));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate column name `{}`",
                    col.name
                )));
            }
        }
        let table = DataTable {
            columns,
            n_rows,
            meta,
        };
        table.check_meta(&table.meta)?;
        Ok(table)
    }

    fn check_meta(&self, meta: &DatasetMeta) -> Result<()> {
        let named = meta
            .label_column
            .iter()
            .chain(meta.sensitive_feature.iter())
            .chain(meta.quasi_identifiers.iter());
        for name in named {
            if self.column(name).is_none() {
                return Err(Error::Schema(format!("meta names absent column `{name}`")));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn require_column(&self, name: &str) -> Result<&Column> {
        self.column(name)
            .ok_or_else(|| Error::Schema(format!("no column named `{name}`")))
    }

    pub fn with_meta(&self, meta: DatasetMeta) -> Result<DataTable> {
        self.check_meta(&meta)?;
        Ok(DataTable {
            columns: self.columns.clone(),
            n_rows: self.n_rows,
            meta,
        })
    }

    /// Replaces the column with the same name, keeping column order.
    pub fn with_column(&self, column: Column) -> Result<DataTable> {
        let idx = self
            .columns
            .iter()
            .position(|c| c.name == column.name)
            .ok_or_else(|| Error::Schema(format!("no column named `{}`", column.name)))?;
        let mut columns = self.columns.clone();
        columns[idx] = column;
        DataTable::new(columns, self.meta.clone())
    }

    pub fn map_columns(&self, f: impl FnMut(&Column) -> Column) -> Result<DataTable> {
        DataTable::new(self.columns.iter().map(f).collect(), self.meta.clone())
    }

    /// Numeric columns other than the label column: the feature space
    /// used by magnitude, outlier and interpolation routines.
    pub fn feature_columns(&self) -> Vec<&Column> {
        let label = self.meta.label_column.as_deref();
        self.columns
            .iter()
            .filter(|c| c.is_numeric() && Some(c.name()) != label)
            .collect()
    }

    /// Feature columns restricted to `names` when given.
    pub fn select_features(&self, names: Option<&[String]>) -> Result<Vec<&Column>> {
        match names {
            None => Ok(self.feature_columns()),
            Some(names) => names
                .iter()
                .map(|n| {
                    let col = self.require_column(n)?;
                    if col.is_numeric() {
                        Ok(col)
                    } else {
                        Err(Error::Schema(format!("column `{n}` is not numeric")))
                    }
                })
                .collect(),
        }
    }

    pub fn row(&self, row: usize) -> Vec<CellRef<'_>> {
        self.columns.iter().map(|c| c.cell(row)).collect()
    }

    pub fn missing_cells(&self) -> usize {
        self.columns.iter().map(Column::missing_count).sum()
    }

    /// Rows in the given order; repeated indices duplicate rows.
    pub fn take_rows(&self, rows: &[usize]) -> Result<DataTable> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_rows) {
            return Err(Error::Index {
                index: bad,
                n_rows: self.n_rows,
            });
        }
        Ok(DataTable {
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
            n_rows: rows.len(),
            meta: self.meta.clone(),
        })
    }

    /// Restricts the table to `keep`, preserving the original row order.
    pub fn subset_rows(&self, keep: &BTreeSet<usize>) -> Result<DataTable> {
        let rows: Vec<usize> = keep.iter().copied().collect();
        self.take_rows(&rows)
    }

    /// Concatenates rows of tables sharing this table's schema.
    pub fn concat(&self, other: &DataTable) -> Result<DataTable> {
        if self.columns.len() != other.columns.len() {
            return Err(Error::Schema("tables have different column counts".into()));
        }
        let mut columns = Vec::with_capacity(self.columns.len());
        for (a, b) in self.columns.iter().zip(&other.columns) {
            if a.name != b.name {
                return Err(Error::Schema(format!(
                    "column mismatch `{}` vs `{}`",
                    a.name, b.name
                )));
            }
            let data = match (&a.data, &b.data) {
                (
                    ColumnData::Numeric { precision, values },
                    ColumnData::Numeric { values: other, .. },
                ) => ColumnData::Numeric {
                    precision: *precision,
                    values: values
                        .iter()
                        .chain(other)
                        .map(|v| v.map(|x| precision.quantize(x)))
                        .collect(),
                },
                (ColumnData::Categorical(x), ColumnData::Categorical(y)) => {
                    ColumnData::Categorical(x.iter().chain(y).cloned().collect())
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "column `{}` has different kinds",
                        a.name
                    )))
                }
            };
            columns.push(Column {
                name: a.name.clone(),
                data,
            });
        }
        DataTable::new(columns, self.meta.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub median: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub missing_fraction: f64,
}

/// Summary statistics over the non-missing cells of a numeric column.
/// `std_dev` is the population standard deviation.
pub fn column_stats(table: &DataTable, name: &str) -> Result<ColumnStats> {
    let col = table.require_column(name)?;
    let values = col
        .numeric_values()
        .ok_or_else(|| Error::Schema(format!("column `{name}` is not numeric")))?;
    let mut present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptyInput(format!("column `{name}` has no values")));
    }
    present.sort_by(f64::total_cmp);
    let mean = stats::mean(&present);
    Ok(ColumnStats {
        mean,
        median: stats::median_sorted(&present),
        std_dev: stats::population_std(&present, mean),
        min: present[0],
        max: present[present.len() - 1],
        missing_fraction: (values.len() - present.len()) as f64 / values.len() as f64,
    })
}
