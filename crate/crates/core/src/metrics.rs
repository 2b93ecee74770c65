//! Readiness metrics: pure functions from a [`DataTable`] to a [`MetricValue`].

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::args::{self, Args};
use crate::error::{Error, Result};
use crate::stats;
use crate::table::{column_stats, CellRef, DataTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, f64>,
}

impl MetricValue {
    fn new(name: impl Into<String>, value: f64) -> Self {
        MetricValue {
            name: name.into(),
            value,
            detail: BTreeMap::new(),
        }
    }

    fn with(mut self, key: impl Into<String>, value: f64) -> Self {
        self.detail.insert(key.into(), value);
        self
    }

    pub fn flag(&self, key: &str) -> bool {
        self.detail.get(key).is_some_and(|v| *v != 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    MeanMagnitude,
    ImbalanceDegree,
    DuplicateProportion,
    MemoryUsageMb,
    StatisticalParityDiff,
    RepresentationRateDiff,
    OutlierProportionIqr,
    KAnonymityLevel,
    StandardStats,
}

impl MetricKind {
    pub const ALL: [MetricKind; 9] = [
        MetricKind::MeanMagnitude,
        MetricKind::ImbalanceDegree,
        MetricKind::DuplicateProportion,
        MetricKind::MemoryUsageMb,
        MetricKind::StatisticalParityDiff,
        MetricKind::RepresentationRateDiff,
        MetricKind::OutlierProportionIqr,
        MetricKind::KAnonymityLevel,
        MetricKind::StandardStats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::MeanMagnitude => "mean_magnitude",
            MetricKind::ImbalanceDegree => "imbalance_degree",
            MetricKind::DuplicateProportion => "duplicate_proportion",
            MetricKind::MemoryUsageMb => "memory_usage_mb",
            MetricKind::StatisticalParityDiff => "statistical_parity_diff",
            MetricKind::RepresentationRateDiff => "representation_rate_diff",
            MetricKind::OutlierProportionIqr => "outlier_proportion_iqr",
            MetricKind::KAnonymityLevel => "k_anonymity_level",
            MetricKind::StandardStats => "standard_stats",
        }
    }

    pub fn from_name(name: &str) -> Option<MetricKind> {
        MetricKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub kind: MetricKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub args: Args,
}

impl MetricSpec {
    pub fn new(kind: MetricKind) -> Self {
        MetricSpec {
            kind,
            args: Args::new(),
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Checks that `table` carries the metadata this metric needs.
    pub fn validate(&self, table: &DataTable) -> Result<()> {
        let meta = table.meta();
        let need = |field: Option<&String>, what: &str| -> Result<()> {
            field
                .map(|_| ())
                .ok_or_else(|| Error::Schema(format!("{} requires {what}", self.name())))
        };
        match self.kind {
            MetricKind::ImbalanceDegree => need(meta.label_column.as_ref(), "a label column"),
            MetricKind::StatisticalParityDiff => {
                need(meta.sensitive_feature.as_ref(), "a sensitive feature")?;
                need(meta.label_column.as_ref(), "a label column")?;
                need(meta.positive_label.as_ref(), "a positive label")
            }
            MetricKind::RepresentationRateDiff => {
                need(meta.sensitive_feature.as_ref(), "a sensitive feature")
            }
            MetricKind::KAnonymityLevel if meta.quasi_identifiers.is_empty() => Err(Error::Schema(
                "k_anonymity_level requires quasi-identifiers".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, table: &DataTable) -> Result<MetricValue> {
        let columns = args::get_strings(&self.args, "columns")?;
        let columns = columns.as_deref();
        match self.kind {
            MetricKind::MeanMagnitude => mean_magnitude_of(table, columns),
            MetricKind::ImbalanceDegree => imbalance_degree(table),
            MetricKind::DuplicateProportion => duplicate_proportion(table),
            MetricKind::MemoryUsageMb => Ok(memory_usage_mb(table)),
            MetricKind::StatisticalParityDiff => statistical_parity_diff(table),
            MetricKind::RepresentationRateDiff => representation_rate_diff(table),
            MetricKind::OutlierProportionIqr => outlier_proportion_iqr_of(table, columns),
            MetricKind::KAnonymityLevel => k_anonymity_level(table),
            MetricKind::StandardStats => Ok(standard_stats_summary(table)),
        }
    }
}

pub fn mean_magnitude(table: &DataTable) -> Result<MetricValue> {
    mean_magnitude_of(table, None)
}

/// Mean absolute value over every non-missing feature cell.
pub fn mean_magnitude_of(table: &DataTable, columns: Option<&[String]>) -> Result<MetricValue> {
    let cols = table.select_features(columns)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for col in &cols {
        for v in col.numeric_values().unwrap().iter().flatten() {
            sum += v.abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput(
            "mean_magnitude needs numeric cells".into(),
        ));
    }
    Ok(
        MetricValue::new(MetricKind::MeanMagnitude.name(), sum / n as f64)
            .with("n_cells", n as f64)
            .with("n_rows", table.n_rows() as f64),
    )
}

/// Per-row mean absolute value over feature cells; `None` for rows with
/// no numeric cells. Used to locate noisy rows.
pub fn row_mean_magnitudes(
    table: &DataTable,
    columns: Option<&[String]>,
) -> Result<Vec<Option<f64>>> {
    let cols = table.select_features(columns)?;
    let mut sums = vec![0.0; table.n_rows()];
    let mut counts = vec![0usize; table.n_rows()];
    for col in &cols {
        for (row, v) in col.numeric_values().unwrap().iter().enumerate() {
            if let Some(v) = v {
                sums[row] += v.abs();
                counts[row] += 1;
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect())
}

/// Counts of each observed class label, missing labels skipped.
pub fn class_counts(table: &DataTable) -> Result<BTreeMap<String, usize>> {
    let label = table
        .meta()
        .label_column
        .as_deref()
        .ok_or_else(|| Error::Schema("no label column set".into()))?;
    let col = table.require_column(label)?;
    let mut counts = BTreeMap::new();
    for row in 0..table.n_rows() {
        if let Some(k) = col.key(row) {
            *counts.entry(k).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

/// Half the L1 distance between the class distribution and uniform.
pub fn imbalance_degree(table: &DataTable) -> Result<MetricValue> {
    let counts = class_counts(table)?;
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(Error::EmptyInput(
            "imbalance_degree needs labelled rows".into(),
        ));
    }
    let c = counts.len() as f64;
    let value = 0.5
        * counts
            .values()
            .map(|&n| (n as f64 / total as f64 - 1.0 / c).abs())
            .sum::<f64>();
    let mut m = MetricValue::new(MetricKind::ImbalanceDegree.name(), value)
        .with("n_classes", c)
        .with("single_class", if counts.len() == 1 { 1.0 } else { 0.0 });
    for (class, n) in &counts {
        m = m.with(format!("count:{class}"), *n as f64);
    }
    Ok(m)
}

/// Groups of row indices that are exact full-row copies of each other
/// (only groups with ≥2 rows; each group in ascending row order).
pub fn duplicate_groups(table: &DataTable) -> Vec<Vec<usize>> {
    let mut index: HashMap<Vec<CellRef<'_>>, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for row in 0..table.n_rows() {
        let key = table.row(row);
        match index.get(&key) {
            Some(&g) => groups[g].push(row),
            None => {
                index.insert(key, groups.len());
                groups.push(vec![row]);
            }
        }
    }
    groups.retain(|g| g.len() > 1);
    groups
}

pub fn duplicate_proportion(table: &DataTable) -> Result<MetricValue> {
    let n = table.n_rows();
    if n == 0 {
        return Err(Error::EmptyInput(
            "duplicate_proportion of empty table".into(),
        ));
    }
    let groups = duplicate_groups(table);
    let extra: usize = groups.iter().map(|g| g.len() - 1).sum();
    Ok(MetricValue::new(
        MetricKind::DuplicateProportion.name(),
        extra as f64 / n as f64,
    )
    .with("n_distinct", (n - extra) as f64)
    .with("n_duplicate_groups", groups.len() as f64))
}

pub const BYTES_PER_MB: f64 = 1_048_576.0;

pub fn memory_usage_mb(table: &DataTable) -> MetricValue {
    let (mut numeric, mut categorical) = (0usize, 0usize);
    for col in table.columns() {
        if col.is_numeric() {
            numeric += col.payload_bytes();
        } else {
            categorical += col.payload_bytes();
        }
    }
    let bytes = numeric + categorical;
    MetricValue::new(
        MetricKind::MemoryUsageMb.name(),
        bytes as f64 / BYTES_PER_MB,
    )
    .with("bytes", bytes as f64)
    .with("numeric_bytes", numeric as f64)
    .with("categorical_bytes", categorical as f64)
}

#[derive(Debug, Default, Clone, Copy)]
struct GroupTally {
    rows: usize,
    positive: usize,
}

fn sensitive_column(table: &DataTable) -> Result<&crate::table::Column> {
    let name = table
        .meta()
        .sensitive_feature
        .as_deref()
        .ok_or_else(|| Error::Schema("no sensitive feature set".into()))?;
    table.require_column(name)
}

pub fn statistical_parity_diff(table: &DataTable) -> Result<MetricValue> {
    let meta = table.meta();
    let group_col = sensitive_column(table)?;
    let label_col =
        table.require_column(meta.label_column.as_deref().ok_or_else(|| {
            Error::Schema("statistical_parity_diff needs a label column".into())
        })?)?;
    let positive = meta
        .positive_label
        .as_deref()
        .ok_or_else(|| Error::Schema("statistical_parity_diff needs a positive label".into()))?;

    let mut groups: BTreeMap<String, GroupTally> = BTreeMap::new();
    for row in 0..table.n_rows() {
        let (Some(g), Some(y)) = (group_col.key(row), label_col.key(row)) else {
            continue;
        };
        let tally = groups.entry(g).or_default();
        tally.rows += 1;
        if y == positive {
            tally.positive += 1;
        }
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput("no observed sensitive groups".into()));
    }
    let rates: Vec<f64> = groups
        .values()
        .map(|t| t.positive as f64 / t.rows as f64)
        .collect();
    let single = groups.len() == 1;
    let value = if single { 0.0 } else { max_minus_min(&rates) };
    let mut m = MetricValue::new(MetricKind::StatisticalParityDiff.name(), value)
        .with("single_group", if single { 1.0 } else { 0.0 });
    for ((g, t), rate) in groups.iter().zip(&rates) {
        m = m
            .with(format!("rate:{g}"), *rate)
            .with(format!("count:{g}"), t.rows as f64);
    }
    Ok(m)
}

pub fn group_counts(table: &DataTable) -> Result<BTreeMap<String, usize>> {
    let col = sensitive_column(table)?;
    let mut counts = BTreeMap::new();
    for row in 0..table.n_rows() {
        if let Some(g) = col.key(row) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

/// Spread of group shares. A client observing a single group when two or
/// more are declared scores 1.
pub fn representation_rate_diff(table: &DataTable) -> Result<MetricValue> {
    let counts = group_counts(table)?;
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(Error::EmptyInput("no observed sensitive groups".into()));
    }
    let declared = table.meta().sensitive_groups.len();
    let shares: Vec<f64> = counts.values().map(|&n| n as f64 / total as f64).collect();
    let single = counts.len() == 1;
    let value = if single {
        if declared >= 2 {
            1.0
        } else {
            0.0
        }
    } else {
        max_minus_min(&shares)
    };
    let mut m = MetricValue::new(MetricKind::RepresentationRateDiff.name(), value)
        .with("single_group", if single { 1.0 } else { 0.0 })
        .with("declared_groups", declared as f64);
    for ((g, n), share) in counts.iter().zip(&shares) {
        m = m
            .with(format!("share:{g}"), *share)
            .with(format!("count:{g}"), *n as f64);
    }
    Ok(m)
}

fn max_minus_min(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Columns with at least this many values get IQR bounds.
pub const IQR_MIN_VALUES: usize = 4;

/// Per-column Tukey fences for every feature column with enough values.
pub fn iqr_column_bounds(
    table: &DataTable,
    columns: Option<&[String]>,
) -> Result<Vec<(String, f64, f64)>> {
    let mut out = Vec::new();
    for col in table.select_features(columns)? {
        let mut values: Vec<f64> = col
            .numeric_values()
            .unwrap()
            .iter()
            .flatten()
            .copied()
            .collect();
        if values.len() < IQR_MIN_VALUES {
            continue;
        }
        values.sort_by(f64::total_cmp);
        let (lo, hi) = stats::iqr_bounds(&values);
        out.push((col.name().to_string(), lo, hi));
    }
    Ok(out)
}

pub fn outlier_proportion_iqr(table: &DataTable) -> Result<MetricValue> {
    outlier_proportion_iqr_of(table, None)
}

pub fn outlier_proportion_iqr_of(
    table: &DataTable,
    columns: Option<&[String]>,
) -> Result<MetricValue> {
    let bounds = iqr_column_bounds(table, columns)?;
    if bounds.is_empty() {
        return Err(Error::EmptyInput(format!(
            "outlier_proportion_iqr needs a numeric column with ≥{IQR_MIN_VALUES} values"
        )));
    }
    let mut m = MetricValue::new(MetricKind::OutlierProportionIqr.name(), 0.0);
    let (mut outside, mut total) = (0usize, 0usize);
    for (name, lo, hi) in &bounds {
        let col = table.column(name).unwrap();
        let mut col_out = 0usize;
        for v in col.numeric_values().unwrap().iter().flatten() {
            total += 1;
            if *v < *lo || *v > *hi {
                col_out += 1;
            }
        }
        outside += col_out;
        m = m
            .with(format!("lower:{name}"), *lo)
            .with(format!("upper:{name}"), *hi)
            .with(format!("outliers:{name}"), col_out as f64);
    }
    m.value = outside as f64 / total as f64;
    Ok(m.with("n_cells", total as f64))
}

/// Sizes of the quasi-identifier equivalence classes, in first-seen order.
pub fn qi_class_of_rows(table: &DataTable) -> Result<(Vec<usize>, Vec<usize>)> {
    let qis = &table.meta().quasi_identifiers;
    if qis.is_empty() {
        return Err(Error::Schema("no quasi-identifiers set".into()));
    }
    let cols = qis
        .iter()
        .map(|q| table.require_column(q))
        .collect::<Result<Vec<_>>>()?;
    let mut index: HashMap<Vec<CellRef<'_>>, usize> = HashMap::new();
    let mut sizes = Vec::new();
    let mut class_of = Vec::with_capacity(table.n_rows());
    for row in 0..table.n_rows() {
        let key: Vec<CellRef<'_>> = cols.iter().map(|c| c.cell(row)).collect();
        let class = *index.entry(key).or_insert_with(|| {
            sizes.push(0);
            sizes.len() - 1
        });
        sizes[class] += 1;
        class_of.push(class);
    }
    Ok((class_of, sizes))
}

pub fn k_anonymity_level(table: &DataTable) -> Result<MetricValue> {
    let (_, sizes) = qi_class_of_rows(table)?;
    let Some(&min) = sizes.iter().min() else {
        return Err(Error::EmptyInput("k_anonymity_level of empty table".into()));
    };
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &sizes {
        *histogram.entry(*s).or_insert(0) += 1;
    }
    let mut m = MetricValue::new(MetricKind::KAnonymityLevel.name(), min as f64)
        .with("n_classes", sizes.len() as f64);
    for (size, n) in histogram {
        m = m.with(format!("classes_of_size:{size}"), n as f64);
    }
    Ok(m)
}

/// Sample size, overall missing fraction and per-numeric-column
/// mean/median/standard deviation.
pub fn standard_metrics(table: &DataTable) -> Vec<MetricValue> {
    let cells = table.n_rows() * table.n_cols();
    let missing = if cells == 0 {
        0.0
    } else {
        table.missing_cells() as f64 / cells as f64
    };
    let mut out = vec![
        MetricValue::new("sample_size", table.n_rows() as f64),
        MetricValue::new("missing_fraction", missing),
    ];
    for col in table.columns().iter().filter(|c| c.is_numeric()) {
        let Ok(s) = column_stats(table, col.name()) else {
            continue;
        };
        let name = col.name();
        out.push(MetricValue::new(format!("mean:{name}"), s.mean));
        out.push(MetricValue::new(format!("median:{name}"), s.median));
        out.push(MetricValue::new(format!("std_dev:{name}"), s.std_dev));
    }
    out
}

fn standard_stats_summary(table: &DataTable) -> MetricValue {
    let all = standard_metrics(table);
    let mut m = MetricValue::new(MetricKind::StandardStats.name(), table.n_rows() as f64);
    for v in all.into_iter().skip(1) {
        m.detail.insert(v.name, v.value);
    }
    m
}
