//! Brute-force reference implementations, written against a plain
//! row-major copy of the data rather than the engine's column types.

use std::collections::{BTreeMap, HashSet};

use cadre_core::{Column, DataTable, DatasetMeta, Precision};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
    Missing,
}

/// A table as the oracles see it.
#[derive(Clone, Debug)]
pub struct RawTable {
    pub names: Vec<String>,
    pub numeric: Vec<bool>,
    pub precision: Vec<Precision>,
    pub rows: Vec<Vec<Cell>>,
    pub meta: DatasetMeta,
}

impl RawTable {
    pub fn col(&self, name: &str) -> usize {
        self.names.iter().position(|n| n == name).expect("column")
    }

    pub fn to_table(&self) -> DataTable {
        let columns = (0..self.names.len())
            .map(|j| {
                if self.numeric[j] {
                    let values = self
                        .rows
                        .iter()
                        .map(|r| match &r[j] {
                            Cell::Num(v) => Some(*v),
                            _ => None,
                        })
                        .collect();
                    Column::numeric(self.names[j].clone(), self.precision[j], values)
                } else {
                    let values = self
                        .rows
                        .iter()
                        .map(|r| match &r[j] {
                            Cell::Text(s) => Some(s.clone()),
                            _ => None,
                        })
                        .collect();
                    Column::categorical(self.names[j].clone(), values)
                }
            })
            .collect();
        DataTable::new(columns, self.meta.clone()).unwrap()
    }

    fn feature_columns(&self) -> Vec<usize> {
        (0..self.names.len())
            .filter(|&j| self.numeric[j] && Some(&self.names[j]) != self.meta.label_column.as_ref())
            .collect()
    }
}

/// Random table of 1 to 200 rows with small value domains, so duplicates,
/// ties, shared quasi-identifiers and outliers all occur.
pub fn random_table(seed: u64) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_rows = rng.random_range(1..=200);
    let n_num = rng.random_range(1..=4);
    let missing_rate = if rng.random_bool(0.5) { 0.0 } else { 0.05 };
    let mut names = Vec::new();
    let mut numeric = Vec::new();
    let mut precision = Vec::new();
    for j in 0..n_num {
        names.push(format!("x{j}"));
        numeric.push(true);
        precision.push(if rng.random_bool(0.5) {
            Precision::Single
        } else {
            Precision::Double
        });
    }
    for name in ["label", "group", "q0", "q1"] {
        names.push(name.to_string());
        numeric.push(false);
        precision.push(Precision::Double);
    }
    let n_classes = rng.random_range(1..=4);
    let n_groups = rng.random_range(1..=3);
    let continuous = rng.random_bool(0.5);
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let mut row = Vec::new();
        for &p in precision.iter().take(n_num) {
            if rng.random_bool(missing_rate) {
                row.push(Cell::Missing);
                continue;
            }
            let v: f64 = if continuous {
                let base: f64 = rng.random_range(-2.0..2.0);
                if rng.random_bool(0.05) {
                    base * 25.0
                } else {
                    base
                }
            } else {
                rng.random_range(-3i32..=3) as f64
            };
            let v = if p == Precision::Single {
                v as f32 as f64
            } else {
                v
            };
            row.push(Cell::Num(if v == 0.0 { 0.0 } else { v }));
        }
        let text = |k: usize, prefix: &str, rng: &mut ChaCha8Rng| {
            if rng.random_bool(missing_rate) {
                Cell::Missing
            } else {
                Cell::Text(format!("{prefix}{}", rng.random_range(0..k)))
            }
        };
        row.push(text(n_classes, "c", &mut rng));
        row.push(text(n_groups, "g", &mut rng));
        row.push(text(3, "a", &mut rng));
        row.push(text(2, "b", &mut rng));
        rows.push(row);
    }
    let declared = rng.random_range(1..=3);
    let meta = DatasetMeta {
        client_id: format!("r{seed}"),
        label_column: Some("label".into()),
        sensitive_feature: Some("group".into()),
        sensitive_groups: (0..declared).map(|g| format!("g{g}")).collect(),
        quasi_identifiers: vec!["q0".into(), "q1".into()],
        positive_label: Some("c0".into()),
    };
    RawTable {
        names,
        numeric,
        precision,
        rows,
        meta,
    }
}

/// `None` where the engine must report an error.
pub type Expected = Option<f64>;

pub fn mean_magnitude(t: &RawTable) -> Expected {
    let cols = t.feature_columns();
    let (mut sum, mut n) = (0.0, 0usize);
    for r in &t.rows {
        for &j in &cols {
            if let Cell::Num(v) = r[j] {
                sum += v.abs();
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

fn text_of(c: &Cell) -> Option<String> {
    match c {
        Cell::Text(s) => Some(s.clone()),
        Cell::Num(v) => Some(format!("{v}")),
        Cell::Missing => None,
    }
}

pub fn imbalance_degree(t: &RawTable) -> Expected {
    let j = t.col("label");
    let labels: Vec<String> = t.rows.iter().filter_map(|r| text_of(&r[j])).collect();
    if labels.is_empty() {
        return None;
    }
    let distinct: Vec<&String> = {
        let mut d: Vec<&String> = Vec::new();
        for l in &labels {
            if !d.contains(&l) {
                d.push(l);
            }
        }
        d
    };
    let c = distinct.len() as f64;
    let n = labels.len() as f64;
    let mut total = 0.0;
    for class in distinct {
        let count = labels.iter().filter(|l| *l == class).count() as f64;
        total += (count / n - 1.0 / c).abs();
    }
    Some(total / 2.0)
}

fn same_cell(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Num(x), Cell::Num(y)) => x.to_bits() == y.to_bits(),
        (Cell::Text(x), Cell::Text(y)) => x == y,
        (Cell::Missing, Cell::Missing) => true,
        _ => false,
    }
}

pub fn duplicate_proportion(t: &RawTable) -> Expected {
    let n = t.rows.len();
    if n == 0 {
        return None;
    }
    let mut copies = 0;
    for i in 0..n {
        let seen_before = (0..i).any(|k| {
            t.rows[k]
                .iter()
                .zip(&t.rows[i])
                .all(|(a, b)| same_cell(a, b))
        });
        if seen_before {
            copies += 1;
        }
    }
    Some(copies as f64 / n as f64)
}

pub fn memory_usage_mb(t: &RawTable) -> Expected {
    let mut bytes = 0usize;
    for j in 0..t.names.len() {
        if t.numeric[j] {
            let width = match t.precision[j] {
                Precision::Single => 4,
                Precision::Double => 8,
            };
            bytes += t.rows.len() * width;
        } else {
            for r in &t.rows {
                if let Cell::Text(s) = &r[j] {
                    bytes += s.len();
                }
            }
        }
    }
    Some(bytes as f64 / (1024.0 * 1024.0))
}

fn spread(values: &[f64]) -> f64 {
    let mut max = values[0];
    let mut min = values[0];
    for &v in values {
        if v > max {
            max = v;
        }
        if v < min {
            min = v;
        }
    }
    max - min
}

pub fn statistical_parity_diff(t: &RawTable) -> Expected {
    let (g, y) = (t.col("group"), t.col("label"));
    let positive = t.meta.positive_label.clone().unwrap();
    let mut tallies: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for r in &t.rows {
        if let (Some(group), Some(label)) = (text_of(&r[g]), text_of(&r[y])) {
            let e = tallies.entry(group).or_insert((0.0, 0.0));
            e.0 += 1.0;
            if label == positive {
                e.1 += 1.0;
            }
        }
    }
    if tallies.is_empty() {
        return None;
    }
    if tallies.len() == 1 {
        return Some(0.0);
    }
    let rates: Vec<f64> = tallies.values().map(|(n, p)| p / n).collect();
    Some(spread(&rates))
}

pub fn representation_rate_diff(t: &RawTable) -> Expected {
    let g = t.col("group");
    let groups: Vec<String> = t.rows.iter().filter_map(|r| text_of(&r[g])).collect();
    if groups.is_empty() {
        return None;
    }
    let distinct: HashSet<&String> = groups.iter().collect();
    if distinct.len() == 1 {
        return Some(if t.meta.sensitive_groups.len() >= 2 {
            1.0
        } else {
            0.0
        });
    }
    let shares: Vec<f64> = distinct
        .iter()
        .map(|d| groups.iter().filter(|x| x == d).count() as f64 / groups.len() as f64)
        .collect();
    Some(spread(&shares))
}

/// Linear-interpolation quantile computed from scratch.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let below = h.floor();
    let i = below as usize;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[i] + (h - below) * (sorted[i + 1] - sorted[i])
}

pub fn outlier_proportion_iqr(t: &RawTable) -> Expected {
    let (mut outside, mut total) = (0usize, 0usize);
    for j in t.feature_columns() {
        let mut values: Vec<f64> = t
            .rows
            .iter()
            .filter_map(|r| match r[j] {
                Cell::Num(v) => Some(v),
                _ => None,
            })
            .collect();
        if values.len() < 4 {
            continue;
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q1 = quantile(&values, 0.25);
        let q3 = quantile(&values, 0.75);
        let (lo, hi) = (q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1));
        total += values.len();
        outside += values.iter().filter(|&&v| v < lo || v > hi).count();
    }
    (total > 0).then(|| outside as f64 / total as f64)
}

pub fn k_anonymity_level(t: &RawTable) -> Expected {
    let qi: Vec<usize> = t.meta.quasi_identifiers.iter().map(|q| t.col(q)).collect();
    if t.rows.is_empty() {
        return None;
    }
    let mut smallest = usize::MAX;
    for a in &t.rows {
        let class_size = t
            .rows
            .iter()
            .filter(|b| qi.iter().all(|&j| same_cell(&a[j], &b[j])))
            .count();
        smallest = smallest.min(class_size);
    }
    Some(smallest as f64)
}

/// Every metric with its oracle.
pub type Oracle = fn(&RawTable) -> Expected;

pub fn metric_oracles() -> Vec<(&'static str, Oracle)> {
    vec![
        ("mean_magnitude", mean_magnitude),
        ("imbalance_degree", imbalance_degree),
        ("duplicate_proportion", duplicate_proportion),
        ("memory_usage_mb", memory_usage_mb),
        ("statistical_parity_diff", statistical_parity_diff),
        ("representation_rate_diff", representation_rate_diff),
        ("outlier_proportion_iqr", outlier_proportion_iqr),
        ("k_anonymity_level", k_anonymity_level),
    ]
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() <= 1e-15
}

/// Scans wire bytes for any run of five consecutive cells of a row.
///
/// The bytes are split into scalar tokens on JSON and CSV punctuation;
/// numbers are compared by value so formatting differences do not hide a
/// leak. Returns the first leaked fragment found.
pub struct LeakScanner {
    grams: HashSet<Vec<Token>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Num(u64),
    Text(String),
}

fn token_of(s: &str) -> Token {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Token::Num(if v == 0.0 { 0 } else { v.to_bits() }),
        _ => Token::Text(s.to_string()),
    }
}

pub const FRAGMENT: usize = 5;

impl LeakScanner {
    pub fn new(haystack: &[u8]) -> Self {
        let text = String::from_utf8_lossy(haystack);
        let tokens: Vec<Token> = text
            .split(|c: char| {
                matches!(
                    c,
                    '[' | ']' | '{' | '}' | ',' | ':' | '"' | '\n' | '\r' | ' ' | '\t'
                )
            })
            .filter(|s| !s.is_empty())
            .map(token_of)
            .collect();
        let grams = tokens.windows(FRAGMENT).map(<[Token]>::to_vec).collect();
        LeakScanner { grams }
    }

    pub fn find(&self, table: &DataTable) -> Option<Vec<String>> {
        for row in 0..table.n_rows() {
            let cells: Vec<Option<String>> = table.columns().iter().map(|c| c.key(row)).collect();
            for w in cells.windows(FRAGMENT) {
                if w.iter().any(Option::is_none) {
                    continue;
                }
                let gram: Vec<Token> = w.iter().flatten().map(|s| token_of(s)).collect();
                if self.grams.contains(&gram) {
                    return Some(w.iter().flatten().cloned().collect());
                }
            }
        }
        None
    }
}
