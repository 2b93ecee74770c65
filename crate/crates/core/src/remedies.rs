//! Data-transforming remedies. Each maps a table to a new table plus a
//! summary of what changed; none of them mutate their input.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::args::{self, Args};
use crate::error::{Error, Result};
use crate::metrics::{
    self, class_counts, duplicate_groups, iqr_column_bounds, row_mean_magnitudes,
};
use crate::table::{Column, ColumnData, DataTable, Precision};

pub const DEFAULT_K_NEIGHBORS: usize = 5;
pub const DEFAULT_TARGET_K: usize = 2;
/// Largest relative error a cell may pick up when stored as `f32`.
pub const DOWNCAST_REL_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemedyKind {
    RemoveNoisyRows,
    SmoteOversample,
    Deduplicate,
    OptimizeMemory,
    StratifiedResample,
    ClipOutliersIqr,
    SuppressLowAnonymity,
}

impl RemedyKind {
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            RemedyKind::SmoteOversample | RemedyKind::StratifiedResample
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemedySpec {
    pub kind: RemedyKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub args: Args,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemedyResult {
    pub table: DataTable,
    pub changed: bool,
    /// Set when a row-removing remedy left no rows.
    pub empty_result: bool,
    pub summary: BTreeMap<String, f64>,
}

impl RemedyResult {
    fn unchanged(table: &DataTable) -> Self {
        RemedyResult {
            table: table.clone(),
            changed: false,
            empty_result: false,
            summary: BTreeMap::new(),
        }
    }

    fn note(mut self, key: &str, value: f64) -> Self {
        self.summary.insert(key.to_string(), value);
        self
    }
}

impl RemedySpec {
    pub fn new(kind: RemedyKind) -> Self {
        RemedySpec {
            kind,
            args: Args::new(),
        }
    }

    pub fn with_arg(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.args.insert(key.to_string(), value.into());
        self
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        args::get_u64(&self.args, "rng_seed")
    }

    /// Checks the argument map for this remedy kind.
    pub fn validate(&self) -> Result<()> {
        if self.kind.is_stochastic() && self.seed()?.is_none() {
            return Err(Error::config("rng_seed", "stochastic remedies need a seed"));
        }
        match self.kind {
            RemedyKind::RemoveNoisyRows => {
                args::get_f64(&self.args, "row_mean_threshold")?
                    .ok_or_else(|| Error::config("row_mean_threshold", "required"))?;
            }
            RemedyKind::SmoteOversample => {
                if args::get_usize(&self.args, "k_neighbors")? == Some(0) {
                    return Err(Error::config("k_neighbors", "must be at least 1"));
                }
            }
            RemedyKind::SuppressLowAnonymity
                if args::get_usize(&self.args, "target_k")?.unwrap_or(DEFAULT_TARGET_K) < 2 =>
            {
                return Err(Error::config("target_k", "must be at least 2"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn apply(&self, table: &DataTable) -> Result<RemedyResult> {
        self.validate()?;
        let columns = args::get_strings(&self.args, "columns")?;
        let columns = columns.as_deref();
        match self.kind {
            RemedyKind::RemoveNoisyRows => {
                let threshold = args::get_f64(&self.args, "row_mean_threshold")?.unwrap();
                remove_noisy_rows_of(table, threshold, columns)
            }
            RemedyKind::SmoteOversample => {
                let k = args::get_usize(&self.args, "k_neighbors")?.unwrap_or(DEFAULT_K_NEIGHBORS);
                smote_oversample(table, k, self.seed()?.unwrap())
            }
            RemedyKind::Deduplicate => Ok(deduplicate(table)),
            RemedyKind::OptimizeMemory => Ok(optimize_memory(table)),
            RemedyKind::StratifiedResample => stratified_resample(table, self.seed()?.unwrap()),
            RemedyKind::ClipOutliersIqr => clip_outliers_iqr_of(table, columns),
            RemedyKind::SuppressLowAnonymity => {
                let k = args::get_usize(&self.args, "target_k")?.unwrap_or(DEFAULT_TARGET_K);
                suppress_low_anonymity(table, k)
            }
        }
    }
}

fn keep_rows(table: &DataTable, keep: Vec<usize>, removed_key: &str) -> Result<RemedyResult> {
    let removed = table.n_rows() - keep.len();
    if removed == 0 {
        return Ok(RemedyResult::unchanged(table).note(removed_key, 0.0));
    }
    let out = table.take_rows(&keep)?;
    Ok(RemedyResult {
        empty_result: out.is_empty(),
        table: out,
        changed: true,
        summary: BTreeMap::new(),
    }
    .note(removed_key, removed as f64))
}

pub fn remove_noisy_rows(table: &DataTable, row_mean_threshold: f64) -> Result<RemedyResult> {
    remove_noisy_rows_of(table, row_mean_threshold, None)
}

/// Drops rows whose mean absolute feature value exceeds the threshold.
pub fn remove_noisy_rows_of(
    table: &DataTable,
    row_mean_threshold: f64,
    columns: Option<&[String]>,
) -> Result<RemedyResult> {
    let means = row_mean_magnitudes(table, columns)?;
    if table.select_features(columns)?.is_empty() {
        return Err(Error::Schema(
            "remove_noisy_rows needs numeric columns".into(),
        ));
    }
    let keep = means
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_none_or(|m| m <= row_mean_threshold))
        .map(|(i, _)| i)
        .collect();
    keep_rows(table, keep, "rows_removed")
}

/// Randomness consumed by SMOTE: a neighbour choice and an interpolation weight.
pub trait InterpolationSource {
    /// Uniform index in `0..n`.
    fn pick(&mut self, n: usize) -> usize;
    /// Uniform weight in `[0, 1)`.
    fn unit(&mut self) -> f64;
}

impl<R: Rng> InterpolationSource for R {
    fn pick(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }

    fn unit(&mut self) -> f64 {
        self.random::<f64>()
    }
}

pub fn smote_oversample(
    table: &DataTable,
    k_neighbors: usize,
    rng_seed: u64,
) -> Result<RemedyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    smote_with(table, k_neighbors, &mut rng)
}

fn distance_sq(a: &[Option<f64>], b: &[Option<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .filter_map(|(x, y)| Some((x.as_ref()? - y.as_ref()?).powi(2)))
        .sum()
}

/// Oversamples every non-majority class up to the majority count by
/// interpolating between a class member and one of its `k_neighbors`
/// nearest same-class neighbours. Non-feature columns are copied from the
/// base row.
pub fn smote_with(
    table: &DataTable,
    k_neighbors: usize,
    source: &mut impl InterpolationSource,
) -> Result<RemedyResult> {
    let counts = class_counts(table)?;
    let Some(&majority) = counts.values().max() else {
        return Ok(RemedyResult::unchanged(table));
    };
    let label_col = table.require_column(table.meta().label_column.as_deref().unwrap())?;
    let features: Vec<&Column> = table.feature_columns();
    let feature_names: BTreeSet<&str> = features.iter().map(|c| c.name()).collect();
    let point = |row: usize| -> Vec<Option<f64>> {
        features
            .iter()
            .map(|c| c.numeric_values().unwrap()[row])
            .collect()
    };

    let mut bases = Vec::new();
    let mut synthetic: Vec<Vec<Option<f64>>> = Vec::new();
    for (class, &count) in &counts {
        if count == majority {
            continue;
        }
        if count < 2 {
            return Err(Error::InsufficientMinority {
                class: class.clone(),
                count,
            });
        }
        let members: Vec<usize> = (0..table.n_rows())
            .filter(|&r| label_col.key(r).as_deref() == Some(class.as_str()))
            .collect();
        let points: Vec<Vec<Option<f64>>> = members.iter().map(|&r| point(r)).collect();
        let k = k_neighbors.min(members.len() - 1).max(1);
        let neighbours: Vec<Vec<usize>> = (0..members.len())
            .map(|i| {
                let mut others: Vec<(f64, usize)> = (0..members.len())
                    .filter(|&j| j != i)
                    .map(|j| (distance_sq(&points[i], &points[j]), j))
                    .collect();
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                others.into_iter().take(k).map(|(_, j)| j).collect()
            })
            .collect();
        for s in 0..majority - count {
            let i = s % members.len();
            let nn = neighbours[i][source.pick(neighbours[i].len())];
            let u = source.unit();
            let row: Vec<Option<f64>> = points[i]
                .iter()
                .zip(&points[nn])
                .map(|(x, y)| match (x, y) {
                    (Some(x), Some(y)) => Some(x + u * (y - x)),
                    (x, _) => *x,
                })
                .collect();
            bases.push(members[i]);
            synthetic.push(row);
        }
    }
    if synthetic.is_empty() {
        return Ok(RemedyResult::unchanged(table));
    }

    let n = table.n_rows();
    let mut rows: Vec<usize> = (0..n).collect();
    rows.extend(&bases);
    let grown = table.take_rows(&rows)?;
    let mut feature_idx = 0;
    let out = grown.map_columns(|col| {
        if !feature_names.contains(col.name()) {
            return col.clone();
        }
        let ColumnData::Numeric { precision, values } = col.data() else {
            unreachable!("feature columns are numeric")
        };
        let mut values = values.clone();
        for (s, row) in synthetic.iter().enumerate() {
            values[n + s] = row[feature_idx];
        }
        feature_idx += 1;
        Column::numeric(col.name(), *precision, values)
    })?;
    Ok(RemedyResult {
        table: out,
        changed: true,
        empty_result: false,
        summary: BTreeMap::new(),
    }
    .note("rows_added", synthetic.len() as f64)
    .note("k_neighbors", k_neighbors as f64))
}

/// Keeps the first occurrence of every distinct full row.
pub fn deduplicate(table: &DataTable) -> RemedyResult {
    let drop: BTreeSet<usize> = duplicate_groups(table)
        .into_iter()
        .flat_map(|g| g.into_iter().skip(1))
        .collect();
    let keep = (0..table.n_rows()).filter(|r| !drop.contains(r)).collect();
    keep_rows(table, keep, "rows_removed").expect("indices are in range")
}

fn fits_single(v: f64) -> bool {
    let back = v as f32 as f64;
    back.is_finite() && (back - v).abs() <= DOWNCAST_REL_TOL * v.abs()
}

/// Deduplicates, then stores every double column that survives a
/// single-precision round trip as single precision.
pub fn optimize_memory(table: &DataTable) -> RemedyResult {
    let dedup = deduplicate(table);
    let mut downcast = 0usize;
    let out = dedup
        .table
        .map_columns(|col| match col.data() {
            ColumnData::Numeric {
                precision: Precision::Double,
                values,
            } if values.iter().flatten().all(|&v| fits_single(v)) => {
                downcast += 1;
                col.with_precision(Precision::Single)
            }
            _ => col.clone(),
        })
        .expect("same schema");
    let rows_removed = dedup.summary.get("rows_removed").copied().unwrap_or(0.0);
    RemedyResult {
        changed: dedup.changed || downcast > 0,
        empty_result: false,
        table: out,
        summary: BTreeMap::new(),
    }
    .note("rows_removed", rows_removed)
    .note("columns_downcast", downcast as f64)
}

fn median_size(sizes: &[usize]) -> usize {
    let mut s = sizes.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        ((s[n / 2 - 1] + s[n / 2]) as f64 / 2.0).round() as usize
    }
}

/// Resamples every (sensitive group × label) cell to the median cell size.
/// Does nothing when fewer than two groups are observed.
pub fn stratified_resample(table: &DataTable, rng_seed: u64) -> Result<RemedyResult> {
    let meta = table.meta();
    let group_col =
        table.require_column(meta.sensitive_feature.as_deref().ok_or_else(|| {
            Error::Schema("stratified_resample needs a sensitive feature".into())
        })?)?;
    let label_col = table.require_column(
        meta.label_column
            .as_deref()
            .ok_or_else(|| Error::Schema("stratified_resample needs a label column".into()))?,
    )?;

    let mut cells: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    let mut unassigned = Vec::new();
    for row in 0..table.n_rows() {
        match (group_col.key(row), label_col.key(row)) {
            (Some(g), Some(y)) => cells.entry((g, y)).or_default().push(row),
            _ => unassigned.push(row),
        }
    }
    let groups: BTreeSet<&str> = cells.keys().map(|(g, _)| g.as_str()).collect();
    if groups.len() < 2 {
        return Ok(RemedyResult::unchanged(table).note("single_group", 1.0));
    }
    let sizes: Vec<usize> = cells.values().map(Vec::len).collect();
    let target = median_size(&sizes);
    if sizes.iter().all(|&s| s == target) {
        return Ok(RemedyResult::unchanged(table).note("target_cell_size", target as f64));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut kept = unassigned;
    let mut extra = Vec::new();
    for rows in cells.values() {
        if rows.len() > target {
            let mut chosen: Vec<usize> = index::sample(&mut rng, rows.len(), target)
                .into_iter()
                .map(|i| rows[i])
                .collect();
            chosen.sort_unstable();
            kept.extend(chosen);
        } else {
            kept.extend(rows);
            for _ in rows.len()..target {
                extra.push(rows[rng.random_range(0..rows.len())]);
            }
        }
    }
    kept.sort_unstable();
    let (before, added) = (table.n_rows(), extra.len());
    kept.extend(extra);
    let after = kept.len();
    Ok(RemedyResult {
        table: table.take_rows(&kept)?,
        changed: true,
        empty_result: false,
        summary: BTreeMap::new(),
    }
    .note("target_cell_size", target as f64)
    .note("rows_added", added as f64)
    .note("rows_removed", (before + added - after) as f64))
}

pub fn clip_outliers_iqr(table: &DataTable) -> Result<RemedyResult> {
    clip_outliers_iqr_of(table, None)
}

/// Clamps every feature cell to its column's Tukey fences.
pub fn clip_outliers_iqr_of(table: &DataTable, columns: Option<&[String]>) -> Result<RemedyResult> {
    let bounds: BTreeMap<String, (f64, f64)> = iqr_column_bounds(table, columns)?
        .into_iter()
        .map(|(name, lo, hi)| (name, (lo, hi)))
        .collect();
    let mut clipped = 0usize;
    let out = table.map_columns(|col| {
        let Some(&(lo, hi)) = bounds.get(col.name()) else {
            return col.clone();
        };
        let ColumnData::Numeric { precision, values } = col.data() else {
            return col.clone();
        };
        let (lo, hi) = storable_bounds(*precision, lo, hi);
        let values = values
            .iter()
            .map(|v| {
                v.map(|x| {
                    if x < lo || x > hi {
                        clipped += 1;
                    }
                    x.clamp(lo, hi)
                })
            })
            .collect();
        Column::numeric(col.name(), *precision, values)
    })?;
    if clipped == 0 {
        return Ok(RemedyResult::unchanged(table).note("cells_clipped", 0.0));
    }
    Ok(RemedyResult {
        table: out,
        changed: true,
        empty_result: false,
        summary: BTreeMap::new(),
    }
    .note("cells_clipped", clipped as f64))
}

/// The storable values closest to `[lo, hi]` from the inside, so clipped
/// cells still lie within the fences once rounded to the column precision.
fn storable_bounds(precision: Precision, lo: f64, hi: f64) -> (f64, f64) {
    if precision == Precision::Double {
        return (lo, hi);
    }
    let mut l = lo as f32;
    if (l as f64) < lo {
        l = l.next_up();
    }
    let mut h = hi as f32;
    if (h as f64) > hi {
        h = h.next_down();
    }
    if l > h {
        return (lo, hi);
    }
    (l as f64, h as f64)
}

/// Removes every row whose quasi-identifier class is smaller than `target_k`.
pub fn suppress_low_anonymity(table: &DataTable, target_k: usize) -> Result<RemedyResult> {
    if target_k < 2 {
        return Err(Error::config("target_k", "must be at least 2"));
    }
    let (class_of, sizes) = metrics::qi_class_of_rows(table)?;
    let keep = (0..table.n_rows())
        .filter(|&r| sizes[class_of[r]] >= target_k)
        .collect();
    keep_rows(table, keep, "rows_suppressed")
}
