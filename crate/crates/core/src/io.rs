//! CSV / NDJSON ingest and CSV export, with an optional YAML schema sidecar.
//!
//! Sidecar format:
//!
//! ```yaml
//! age: { kind: numeric, precision: single }
//! city: { kind: categorical }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{format_number, Column, ColumnData, DataTable, DatasetMeta, Precision};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Ndjson,
}

impl Format {
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ndjson") | Some("jsonl") => Format::Ndjson,
            _ => Format::Csv,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub kind: SchemaKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<Precision>,
}

pub type Schema = BTreeMap<String, ColumnSchema>;

pub fn read_schema(path: &Path) -> Result<Schema> {
    let text = fs::read_to_string(path)?;
    serde_yaml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn schema_of(table: &DataTable) -> Schema {
    table
        .columns()
        .iter()
        .map(|c| {
            let schema = match c.data() {
                ColumnData::Numeric { precision, .. } => ColumnSchema {
                    kind: SchemaKind::Numeric,
                    precision: Some(*precision),
                },
                ColumnData::Categorical(_) => ColumnSchema {
                    kind: SchemaKind::Categorical,
                    precision: None,
                },
            };
            (c.name().to_string(), schema)
        })
        .collect()
}

pub fn write_schema(table: &DataTable, path: &Path) -> Result<()> {
    let text = serde_yaml::to_string(&schema_of(table))
        .map_err(|e| Error::Parse(format!("schema serialization: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

/// Raw cells before typing: `None` is a missing cell.
enum RawCell {
    Missing,
    Number(f64),
    Text(String),
}

pub fn load_table(
    path: &Path,
    format: Format,
    meta: DatasetMeta,
    schema: Option<&Schema>,
) -> Result<DataTable> {
    let text = fs::read_to_string(path)?;
    parse_table(&text, format, meta, schema)
}

pub fn parse_table(
    text: &str,
    format: Format,
    meta: DatasetMeta,
    schema: Option<&Schema>,
) -> Result<DataTable> {
    let (names, raw) = match format {
        Format::Csv => parse_csv(text)?,
        Format::Ndjson => parse_ndjson(text)?,
    };
    let columns = names
        .into_iter()
        .zip(raw)
        .map(|(name, cells)| {
            let override_ = schema.and_then(|s| s.get(&name));
            build_column(name, cells, override_)
        })
        .collect::<Result<Vec<_>>>()?;
    DataTable::new(columns, meta)
}

fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<RawCell>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(format!("csv header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::Parse("csv header row is empty".into()));
    }
    let mut raw: Vec<Vec<RawCell>> = names.iter().map(|_| Vec::new()).collect();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("csv row {}: {e}", line + 1)))?;
        for (col, field) in record.iter().enumerate() {
            raw[col].push(if field.is_empty() {
                RawCell::Missing
            } else {
                RawCell::Text(field.to_string())
            });
        }
    }
    Ok((names, raw))
}

fn parse_ndjson(text: &str) -> Result<(Vec<String>, Vec<Vec<RawCell>>)> {
    let mut names: Option<Vec<String>> = None;
    let mut raw: Vec<Vec<RawCell>> = Vec::new();
    for (line_no, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("ndjson line {}: {e}", line_no + 1)))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Parse(format!("ndjson line {}: not an object", line_no + 1)))?;
        let keys: Vec<String> = obj.keys().cloned().collect();
        match &names {
            None => {
                raw = keys.iter().map(|_| Vec::new()).collect();
                names = Some(keys);
            }
            Some(expected) => {
                let mut a = expected.clone();
                let mut b = keys;
                a.sort();
                b.sort();
                if a != b {
                    return Err(Error::Parse(format!(
                        "ndjson line {}: keys differ from first line",
                        line_no + 1
                    )));
                }
            }
        }
        for (col, name) in names.as_ref().unwrap().iter().enumerate() {
            let cell = match &obj[name] {
                serde_json::Value::Null => RawCell::Missing,
                serde_json::Value::Number(n) => RawCell::Number(n.as_f64().ok_or_else(|| {
                    Error::Parse(format!("ndjson line {}: bad number", line_no + 1))
                })?),
                serde_json::Value::String(s) => RawCell::Text(s.clone()),
                serde_json::Value::Bool(b) => RawCell::Text(b.to_string()),
                _ => {
                    return Err(Error::Parse(format!(
                        "ndjson line {}: field `{name}` is not flat",
                        line_no + 1
                    )))
                }
            };
            raw[col].push(cell);
        }
    }
    let names = names.ok_or_else(|| Error::Parse("ndjson input has no records".into()))?;
    Ok((names, raw))
}

fn build_column(
    name: String,
    cells: Vec<RawCell>,
    schema: Option<&ColumnSchema>,
) -> Result<Column> {
    let as_number = |cell: &RawCell| -> Option<Option<f64>> {
        match cell {
            RawCell::Missing => Some(None),
            RawCell::Number(v) => Some(Some(*v)),
            RawCell::Text(s) => s
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some),
        }
    };
    let numeric = match schema.map(|s| s.kind) {
        Some(SchemaKind::Categorical) => false,
        Some(SchemaKind::Numeric) => true,
        None => cells.iter().all(|c| as_number(c).is_some()),
    };
    if numeric {
        let precision = schema
            .and_then(|s| s.precision)
            .unwrap_or(Precision::Double);
        let values = cells
            .iter()
            .enumerate()
            .map(|(row, c)| {
                as_number(c).ok_or_else(|| {
                    Error::Parse(format!("column `{name}` row {}: not a number", row + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Column::numeric(name, precision, values))
    } else {
        let values = cells
            .into_iter()
            .map(|c| match c {
                RawCell::Missing => None,
                RawCell::Number(v) => Some(format_number(v)),
                RawCell::Text(s) => Some(s),
            })
            .collect();
        Ok(Column::categorical(name, values))
    }
}

pub fn to_csv(table: &DataTable) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let names: Vec<&str> = table.columns().iter().map(|c| c.name()).collect();
    writer
        .write_record(&names)
        .map_err(|e| Error::Parse(e.to_string()))?;
    for row in 0..table.n_rows() {
        let fields: Vec<String> = table
            .columns()
            .iter()
            .map(|c| c.key(row).unwrap_or_default())
            .collect();
        writer
            .write_record(&fields)
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `table` as CSV and its schema sidecar next to it (`<path>.schema.yaml`).
pub fn save_table(table: &DataTable, path: &Path) -> Result<()> {
    fs::write(path, to_csv(table)?)?;
    write_schema(table, &sidecar_path(path))
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".schema.yaml");
    name.into()
}
