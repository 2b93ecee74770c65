//! Seeded synthetic datasets, pollution recipes and client partitioning
//! used to build degraded clients for experiments.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::group_counts;
use crate::table::{Column, ColumnData, DataTable, DatasetMeta, Precision};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PollutionKind {
    GaussianNoise {
        fraction: f64,
        std_dev: f64,
    },
    DuplicateRows {
        fraction: f64,
    },
    UpcastPrecision,
    InjectOutliers {
        fraction: f64,
        std_dev: f64,
    },
    /// Target share of rows per sensitive group; unlisted groups are dropped.
    SkewSensitiveGroups {
        rates: BTreeMap<String, f64>,
    },
    DegradeAnonymity {
        singleton_fraction: f64,
    },
}

impl PollutionKind {
    pub fn validate(&self) -> Result<()> {
        let fraction = |f: f64, name: &str| {
            if f > 0.0 && f <= 1.0 {
                Ok(())
            } else {
                Err(Error::config(name, "fraction must be in (0, 1]"))
            }
        };
        let std = |s: f64| {
            if s > 0.0 && s.is_finite() {
                Ok(())
            } else {
                Err(Error::config("std_dev", "must be positive"))
            }
        };
        match self {
            PollutionKind::GaussianNoise {
                fraction: f,
                std_dev,
            }
            | PollutionKind::InjectOutliers {
                fraction: f,
                std_dev,
            } => {
                fraction(*f, "fraction")?;
                std(*std_dev)
            }
            PollutionKind::DuplicateRows { fraction: f } => fraction(*f, "fraction"),
            PollutionKind::DegradeAnonymity { singleton_fraction } => {
                fraction(*singleton_fraction, "singleton_fraction")
            }
            PollutionKind::SkewSensitiveGroups { rates } => {
                if rates.is_empty() || rates.values().any(|r| !(*r >= 0.0 && r.is_finite())) {
                    return Err(Error::config("rates", "need non-negative finite rates"));
                }
                if rates.values().all(|r| *r == 0.0) {
                    return Err(Error::config("rates", "at least one rate must be positive"));
                }
                Ok(())
            }
            PollutionKind::UpcastPrecision => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PollutionSpec {
    #[serde(flatten)]
    pub kind: PollutionKind,
    pub rng_seed: u64,
}

/// Number of rows a fraction selects: `⌈fraction · n⌉`, capped at `n`.
pub fn rows_for_fraction(fraction: f64, n: usize) -> usize {
    (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

fn chosen_rows(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    let mut rows = index::sample(rng, n, count).into_vec();
    rows.sort_unstable();
    rows
}

pub fn pollute(table: &DataTable, spec: &PollutionSpec) -> Result<DataTable> {
    spec.kind.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    match &spec.kind {
        PollutionKind::GaussianNoise { fraction, std_dev }
        | PollutionKind::InjectOutliers { fraction, std_dev } => {
            add_noise(table, *fraction, *std_dev, &mut rng)
        }
        PollutionKind::DuplicateRows { fraction } => {
            let n = table.n_rows();
            let copies = chosen_rows(&mut rng, n, rows_for_fraction(*fraction, n));
            let mut rows: Vec<usize> = (0..n).collect();
            rows.extend(copies);
            table.take_rows(&rows)
        }
        PollutionKind::UpcastPrecision => {
            table.map_columns(|c| c.with_precision(Precision::Double))
        }
        PollutionKind::SkewSensitiveGroups { rates } => skew_groups(table, rates, &mut rng),
        PollutionKind::DegradeAnonymity { singleton_fraction } => {
            degrade_anonymity(table, *singleton_fraction, &mut rng)
        }
    }
}

fn add_noise(
    table: &DataTable,
    fraction: f64,
    std_dev: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DataTable> {
    let features: Vec<String> = table
        .feature_columns()
        .iter()
        .map(|c| c.name().to_string())
        .collect();
    if features.is_empty() {
        return Err(Error::Schema(
            "noise pollution needs numeric feature columns".into(),
        ));
    }
    let n = table.n_rows();
    let rows = chosen_rows(rng, n, rows_for_fraction(fraction, n));
    let normal = Normal::new(0.0, std_dev).expect("validated std_dev");
    let mut columns: BTreeMap<String, Vec<Option<f64>>> = features
        .iter()
        .map(|name| {
            let values = table
                .column(name)
                .unwrap()
                .numeric_values()
                .unwrap()
                .to_vec();
            (name.clone(), values)
        })
        .collect();
    for &row in &rows {
        for name in &features {
            let cell = &mut columns.get_mut(name).unwrap()[row];
            if let Some(v) = cell {
                *v += normal.sample(rng);
            }
        }
    }
    table.map_columns(|col| match (col.data(), columns.remove(col.name())) {
        (ColumnData::Numeric { precision, .. }, Some(values)) => {
            Column::numeric(col.name(), *precision, values)
        }
        _ => col.clone(),
    })
}

fn skew_groups(
    table: &DataTable,
    rates: &BTreeMap<String, f64>,
    rng: &mut ChaCha8Rng,
) -> Result<DataTable> {
    let counts = group_counts(table)?;
    let group_col = table.require_column(table.meta().sensitive_feature.as_deref().unwrap())?;
    let mut scale = f64::INFINITY;
    for (group, &rate) in rates.iter().filter(|(_, r)| **r > 0.0) {
        let have = *counts
            .get(group)
            .ok_or_else(|| Error::Schema(format!("sensitive group `{group}` is not present")))?;
        scale = scale.min(have as f64 / rate);
    }
    let mut keep = Vec::new();
    for (group, &have) in &counts {
        let rate = rates.get(group).copied().unwrap_or(0.0);
        let want = ((scale * rate) + 1e-9).floor() as usize;
        let members: Vec<usize> = (0..table.n_rows())
            .filter(|&r| group_col.key(r).as_deref() == Some(group.as_str()))
            .collect();
        keep.extend(
            chosen_rows(rng, have, want.min(have))
                .into_iter()
                .map(|i| members[i]),
        );
    }
    keep.sort_unstable();
    table.take_rows(&keep)
}

fn degrade_anonymity(table: &DataTable, fraction: f64, rng: &mut ChaCha8Rng) -> Result<DataTable> {
    let qi = table
        .meta()
        .quasi_identifiers
        .first()
        .ok_or_else(|| Error::Schema("anonymity pollution needs quasi-identifiers".into()))?
        .clone();
    let col = table.require_column(&qi)?;
    let n = table.n_rows();
    let rows = chosen_rows(rng, n, rows_for_fraction(fraction, n));
    let replaced = match col.data() {
        ColumnData::Categorical(values) => {
            let mut values = values.clone();
            for &r in &rows {
                values[r] = Some(format!("~unique-{r}"));
            }
            Column::categorical(&qi, values)
        }
        ColumnData::Numeric { precision, values } => {
            let top = values
                .iter()
                .flatten()
                .copied()
                .fold(0.0f64, f64::max)
                .ceil();
            let mut values = values.clone();
            for (i, &r) in rows.iter().enumerate() {
                values[r] = Some(top + 1.0 + i as f64);
            }
            Column::numeric(&qi, *precision, values)
        }
    };
    table.with_column(replaced)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PartitionStrategy {
    DirichletLabelSkew { alpha: f64 },
    ByCategoricalColumn { column: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub n_clients: usize,
    pub strategy: PartitionStrategy,
    pub rng_seed: u64,
}

pub const DEFAULT_DIRICHLET_ALPHA: f64 = 0.5;

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients < 2 {
            return Err(Error::config(
                "partition.n_clients",
                "need at least 2 clients",
            ));
        }
        if let PartitionStrategy::DirichletLabelSkew { alpha } = self.strategy {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::config(
                    "partition.strategy.alpha",
                    "must be positive",
                ));
            }
        }
        Ok(())
    }
}

fn client_meta(base: &DatasetMeta, i: usize) -> DatasetMeta {
    let mut meta = base.clone();
    meta.client_id = if base.client_id.is_empty() {
        format!("client-{i}")
    } else {
        format!("{}-{i}", base.client_id)
    };
    meta
}

/// Splits rows into disjoint client tables that together cover the input.
pub fn partition(table: &DataTable, spec: &PartitionSpec) -> Result<Vec<DataTable>> {
    spec.validate()?;
    let assignments: Vec<Vec<usize>> = match &spec.strategy {
        PartitionStrategy::DirichletLabelSkew { alpha } => dirichlet_rows(table, spec, *alpha)?,
        PartitionStrategy::ByCategoricalColumn { column } => {
            let col = table.require_column(column)?;
            let mut by_value: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for row in 0..table.n_rows() {
                let key = col.key(row).ok_or_else(|| {
                    Error::TooFewRows(format!("row {row} has no `{column}` value"))
                })?;
                by_value.entry(key).or_default().push(row);
            }
            if by_value.len() != spec.n_clients {
                return Err(Error::Schema(format!(
                    "column `{column}` has {} values but {} clients were requested",
                    by_value.len(),
                    spec.n_clients
                )));
            }
            by_value.into_values().collect()
        }
    };
    assignments
        .into_iter()
        .enumerate()
        .map(|(i, rows)| {
            table
                .take_rows(&rows)?
                .with_meta(client_meta(table.meta(), i))
        })
        .collect()
}

fn dirichlet_rows(table: &DataTable, spec: &PartitionSpec, alpha: f64) -> Result<Vec<Vec<usize>>> {
    let label = table
        .meta()
        .label_column
        .as_deref()
        .ok_or_else(|| Error::Schema("dirichlet partition needs a label column".into()))?;
    let col = table.require_column(label)?;
    let mut by_class: BTreeMap<Option<String>, Vec<usize>> = BTreeMap::new();
    for row in 0..table.n_rows() {
        by_class.entry(col.key(row)).or_default().push(row);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let gamma = Gamma::new(alpha, 1.0).expect("validated alpha");
    let mut clients = vec![Vec::new(); spec.n_clients];
    for rows in by_class.values_mut() {
        rows.shuffle(&mut rng);
        let mut weights: Vec<f64> = (0..spec.n_clients)
            .map(|_| gamma.sample(&mut rng))
            .collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            weights.fill(1.0 / spec.n_clients as f64);
        }
        let m = rows.len();
        let mut start = 0;
        let mut cumulative = 0.0;
        for (client, w) in weights.iter().enumerate() {
            cumulative += w;
            let end = if client + 1 == spec.n_clients {
                m
            } else {
                ((cumulative * m as f64).round() as usize).clamp(start, m)
            };
            clients[client].extend_from_slice(&rows[start..end]);
            start = end;
        }
    }
    for rows in &mut clients {
        rows.sort_unstable();
    }
    Ok(clients)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SynthProfile {
    Tabular {
        n_rows: usize,
        n_features: usize,
        n_groups: usize,
        n_classes: usize,
    },
    ImageLike {
        n_rows: usize,
        n_pixels: usize,
    },
}

pub const LABEL_COLUMN: &str = "label";
pub const SENSITIVE_COLUMN: &str = "gender";
const GROUP_NAMES: [&str; 2] = ["male", "female"];
const WORKCLASS: [(&str, f64); 4] = [
    ("private", 0.55),
    ("self-emp", 0.2),
    ("government", 0.2),
    ("without-pay", 0.05),
];
const RACE: [(&str, f64); 4] = [
    ("white", 0.7),
    ("black", 0.15),
    ("asian", 0.1),
    ("other", 0.05),
];

fn group_name(i: usize) -> String {
    GROUP_NAMES
        .get(i)
        .map_or_else(|| format!("group-{i}"), |s| s.to_string())
}

fn weighted<'a>(rng: &mut ChaCha8Rng, table: &[(&'a str, f64)]) -> &'a str {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (value, w) in table {
        acc += w;
        if u < acc {
            return value;
        }
    }
    table[table.len() - 1].0
}

/// Deterministic synthetic client data.
///
/// `Tabular` mimics a census-style table: single-precision Gaussian
/// features shifted by class, a `gender` sensitive feature, `workclass` and
/// `race` quasi-identifiers and a categorical `label` whose positive rate
/// depends on the group. `ImageLike` produces single-precision pixel
/// columns in `[0, 1]` with class-dependent means of at most 0.3.
pub fn synth_table(profile: &SynthProfile, rng_seed: u64) -> Result<DataTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    match *profile {
        SynthProfile::Tabular {
            n_rows,
            n_features,
            n_groups,
            n_classes,
        } => {
            if n_rows == 0 || n_features == 0 || n_groups == 0 || n_classes == 0 {
                return Err(Error::config("synth", "dimensions must be at least 1"));
            }
            let unit = Normal::new(0.0, 1.0).unwrap();
            let group_weights: Vec<f64> =
                (0..n_groups).map(|g| (n_groups - g) as f64 + 0.5).collect();
            let group_total: f64 = group_weights.iter().sum();
            let mut features = vec![Vec::with_capacity(n_rows); n_features];
            let (mut groups, mut labels, mut work, mut race) =
                (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for _ in 0..n_rows {
                let u: f64 = rng.random::<f64>() * group_total;
                let mut acc = 0.0;
                let mut g = n_groups - 1;
                for (i, w) in group_weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        g = i;
                        break;
                    }
                }
                let class = if n_classes == 2 {
                    let p_positive = if g == 0 { 0.6 } else { 0.3 };
                    usize::from(rng.random::<f64>() < p_positive)
                } else {
                    (rng.random_range(0..n_classes) + g) % n_classes
                };
                for (j, col) in features.iter_mut().enumerate() {
                    let shift = if j % 2 == 0 { 0.5 * class as f64 } else { 0.0 };
                    col.push(Some(shift + unit.sample(&mut rng)));
                }
                groups.push(Some(group_name(g)));
                labels.push(Some(class.to_string()));
                work.push(Some(weighted(&mut rng, &WORKCLASS).to_string()));
                race.push(Some(weighted(&mut rng, &RACE).to_string()));
            }
            let mut columns: Vec<Column> = features
                .into_iter()
                .enumerate()
                .map(|(j, values)| Column::numeric(format!("f{j}"), Precision::Single, values))
                .collect();
            columns.push(Column::categorical("workclass", work));
            columns.push(Column::categorical("race", race));
            columns.push(Column::categorical(SENSITIVE_COLUMN, groups));
            columns.push(Column::categorical(LABEL_COLUMN, labels));
            let meta = DatasetMeta {
                client_id: String::new(),
                label_column: Some(LABEL_COLUMN.into()),
                sensitive_feature: Some(SENSITIVE_COLUMN.into()),
                sensitive_groups: (0..n_groups.max(2)).map(group_name).collect(),
                quasi_identifiers: vec!["workclass".into(), "race".into(), SENSITIVE_COLUMN.into()],
                positive_label: Some("1".into()),
            };
            DataTable::new(columns, meta)
        }
        SynthProfile::ImageLike { n_rows, n_pixels } => {
            if n_rows == 0 || n_pixels == 0 {
                return Err(Error::config("synth", "dimensions must be at least 1"));
            }
            let means: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..n_pixels).map(|_| rng.random_range(0.05..0.3)).collect())
                .collect();
            let jitter = Normal::new(0.0, 0.05).unwrap();
            let mut pixels = vec![Vec::with_capacity(n_rows); n_pixels];
            let mut labels = Vec::with_capacity(n_rows);
            for _ in 0..n_rows {
                let class = rng.random_range(0..2usize);
                for (j, col) in pixels.iter_mut().enumerate() {
                    let v: f64 = means[class][j] + jitter.sample(&mut rng);
                    col.push(Some(v.clamp(0.0, 1.0)));
                }
                labels.push(Some(class.to_string()));
            }
            let mut columns: Vec<Column> = pixels
                .into_iter()
                .enumerate()
                .map(|(j, values)| Column::numeric(format!("p{j}"), Precision::Single, values))
                .collect();
            columns.push(Column::categorical(LABEL_COLUMN, labels));
            let meta = DatasetMeta {
                label_column: Some(LABEL_COLUMN.into()),
                positive_label: Some("1".into()),
                ..Default::default()
            };
            DataTable::new(columns, meta)
        }
    }
}
