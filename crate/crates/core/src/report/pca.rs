//! Privacy-preserving global PCA. Clients share only sufficient statistics
//! (count, sums, sums of outer products); the server fits the model; clients
//! then project a bounded sample of their own rows.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::exact::ExactSum;
use crate::error::{Error, Result};
use crate::table::DataTable;

pub const DEFAULT_SAMPLE_SIZE: usize = 200;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Sufficient statistics over the complete rows of a feature selection.
/// `outer` holds the upper triangle row by row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Moments {
    pub columns: Vec<String>,
    pub count: u64,
    pub sum: Vec<ExactSum>,
    pub outer: Vec<ExactSum>,
}

fn tri_index(d: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < d);
    i * d - i * (i + 1) / 2 + j
}

impl Moments {
    pub fn zero(columns: Vec<String>) -> Self {
        let d = columns.len();
        Moments {
            columns,
            count: 0,
            sum: vec![ExactSum::new(); d],
            outer: vec![ExactSum::new(); d * (d + 1) / 2],
        }
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn add_row(&mut self, x: &[f64]) {
        let d = self.dim();
        assert_eq!(x.len(), d);
        self.count += 1;
        for i in 0..d {
            self.sum[i].add(x[i]);
            for j in i..d {
                self.outer[tri_index(d, i, j)].add_product(x[i], x[j]);
            }
        }
    }

    pub fn merge(&mut self, other: &Moments) -> Result<()> {
        if self.columns != other.columns {
            return Err(Error::Schema(format!(
                "cannot combine moments over {:?} with moments over {:?}",
                self.columns, other.columns
            )));
        }
        self.count = self
            .count
            .checked_add(other.count)
            .ok_or_else(|| Error::Schema("combined row count overflows".into()))?;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            a.merge(b);
        }
        for (a, b) in self.outer.iter_mut().zip(&other.outer) {
            a.merge(b);
        }
        Ok(())
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sum.iter().map(|s| s.to_f64() / n).collect()
    }

    /// Population covariance `outer/n - mean meanᵀ`.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let n = self.count as f64;
        let mean = self.mean();
        let mut c = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in i..d {
                let v = self.outer[tri_index(d, i, j)].to_f64() / n - mean[i] * mean[j];
                c[i][j] = v;
                c[j][i] = v;
            }
        }
        c
    }
}

/// Complete rows of the selected numeric columns, in table order.
fn complete_rows(table: &DataTable, columns: &[String]) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let cols = columns
        .iter()
        .map(|name| {
            let c = table.require_column(name)?;
            c.numeric_values()
                .ok_or_else(|| Error::Schema(format!("PCA feature `{name}` is not numeric")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut idx = Vec::new();
    let mut rows = Vec::new();
    for r in 0..table.n_rows() {
        let row: Option<Vec<f64>> = cols.iter().map(|c| c[r]).collect();
        if let Some(row) = row {
            idx.push(r);
            rows.push(row);
        }
    }
    Ok((idx, rows))
}

/// Moments over rows with no missing value among `columns`.
pub fn local_moments(table: &DataTable, columns: &[String]) -> Result<Moments> {
    let (_, rows) = complete_rows(table, columns)?;
    let mut m = Moments::zero(columns.to_vec());
    for row in &rows {
        m.add_row(row);
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub columns: Vec<String>,
    pub mean_vector: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
}

/// Eigenvalues (descending) and unit eigenvectors of a symmetric matrix by
/// cyclic Jacobi rotations. Each vector's largest-magnitude entry is
/// positive.
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * scale || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (head, tail) = a.split_at_mut(q);
                for (apk, aqk) in head[p].iter_mut().zip(tail[0].iter_mut()) {
                    (*apk, *aqk) = (c * *apk - s * *aqk, s * *apk + c * *aqk);
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let mut col: Vec<f64> = (0..d).map(|i| v[i][k]).collect();
            let mut lead = 0;
            for i in 1..d {
                if col[i].abs() > col[lead].abs() {
                    lead = i;
                }
            }
            if col[lead] < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
            col
        })
        .collect();
    (values, vectors)
}

pub fn fit_pca(moments: &Moments) -> Result<PcaModel> {
    if moments.count < 2 {
        return Err(Error::TooFewRows(format!(
            "PCA needs at least 2 complete rows, got {}",
            moments.count
        )));
    }
    if moments.dim() < 2 {
        return Err(Error::Schema(format!(
            "PCA needs at least 2 feature columns, got {}",
            moments.dim()
        )));
    }
    let mean = moments.mean();
    let cov = moments.covariance();
    if !mean
        .iter()
        .chain(cov.iter().flatten())
        .all(|v| v.is_finite())
    {
        return Err(Error::DegenerateCovariance(
            "feature moments overflow the floating-point range".into(),
        ));
    }
    let (values, vectors) = symmetric_eigen(&cov);
    // covariance entries carry rounding of order eps * E[x²]
    let d = moments.dim();
    let second_moment = (0..d)
        .map(|i| moments.outer[tri_index(d, i, i)].to_f64() / moments.count as f64)
        .fold(0.0f64, f64::max);
    let floor = 64.0 * f64::EPSILON * second_moment.max(f64::MIN_POSITIVE);
    if values[0] <= floor {
        return Err(Error::DegenerateCovariance(
            "all selected features are constant".into(),
        ));
    }
    let clamp = |x: f64| if x <= floor { 0.0 } else { x };
    Ok(PcaModel {
        columns: moments.columns.clone(),
        mean_vector: mean,
        components: [vectors[0].clone(), vectors[1].clone()],
        explained_variance: [clamp(values[0]), clamp(values[1])],
    })
}

impl PcaModel {
    pub fn project(&self, x: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (o, comp) in out.iter_mut().zip(&self.components) {
            *o = x
                .iter()
                .zip(&self.mean_vector)
                .zip(comp)
                .map(|((xi, mi), ci)| (xi - mi) * ci)
                .sum();
        }
        out
    }
}

/// Rows chosen for projection: a seeded uniform sample without replacement
/// over the complete rows, in table order.
pub fn sample_rows(complete: usize, sample_size: usize, seed: u64) -> Vec<usize> {
    if sample_size >= complete {
        return (0..complete).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, complete, sample_size).into_vec();
    picked.sort_unstable();
    picked
}

pub fn project_sample(
    table: &DataTable,
    model: &PcaModel,
    sample_size: usize,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let (_, rows) = complete_rows(table, &model.columns)?;
    Ok(sample_rows(rows.len(), sample_size, seed)
        .into_iter()
        .map(|i| model.project(&rows[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{Column, DatasetMeta};

    fn table(cols: &[(&str, Vec<f64>)]) -> DataTable {
        DataTable::new(
            cols.iter()
                .map(|(n, v)| Column::dense(*n, v.clone()))
                .collect(),
            DatasetMeta::default(),
        )
        .unwrap()
    }

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_row_moments() {
        let t = table(&[("a", vec![2.0]), ("b", vec![3.0])]);
        let m = local_moments(&t, &names(&["a", "b"])).unwrap();
        assert_eq!(m.count, 1);
        assert_eq!(
            m.sum.iter().map(ExactSum::to_f64).collect::<Vec<_>>(),
            vec![2.0, 3.0]
        );
        assert_eq!(
            m.outer.iter().map(ExactSum::to_f64).collect::<Vec<_>>(),
            vec![4.0, 6.0, 9.0]
        );
    }

    #[test]
    fn empty_selection_has_zero_count() {
        let t = table(&[("a", vec![1.0, 2.0])]);
        let m = local_moments(&t, &[]).unwrap();
        assert_eq!(m.count, 2);
        assert_eq!(m.dim(), 0);
        let none = local_moments(&t.take_rows(&[]).unwrap(), &names(&["a"])).unwrap();
        assert_eq!(none.count, 0);
    }

    #[test]
    fn rows_with_missing_cells_are_skipped() {
        let t = DataTable::new(
            vec![
                Column::numeric(
                    "a",
                    crate::Precision::Double,
                    vec![Some(1.0), None, Some(3.0)],
                ),
                Column::dense("b", vec![1.0, 2.0, 3.0]),
            ],
            DatasetMeta::default(),
        )
        .unwrap();
        assert_eq!(local_moments(&t, &names(&["a", "b"])).unwrap().count, 2);
    }

    #[test]
    fn categorical_feature_is_schema_error() {
        let t = DataTable::new(
            vec![Column::categorical_str("a", &["x"])],
            DatasetMeta::default(),
        )
        .unwrap();
        assert!(matches!(
            local_moments(&t, &names(&["a"])),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn split_moments_equal_pooled_exactly() {
        let a: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin() * 3.1).collect();
        let b: Vec<f64> = (0..20)
            .map(|i| (i as f64 * 1.3).cos() + 0.1 * i as f64)
            .collect();
        let pooled = table(&[("a", a.clone()), ("b", b.clone())]);
        let cols = names(&["a", "b"]);
        let first = pooled.take_rows(&(0..7).collect::<Vec<_>>()).unwrap();
        let second = pooled.take_rows(&(7..20).collect::<Vec<_>>()).unwrap();
        let mut m = local_moments(&second, &cols).unwrap();
        m.merge(&local_moments(&first, &cols).unwrap()).unwrap();
        assert_eq!(m, local_moments(&pooled, &cols).unwrap());
        assert_eq!(
            fit_pca(&m).unwrap(),
            fit_pca(&local_moments(&pooled, &cols).unwrap()).unwrap()
        );
    }

    #[test]
    fn collinear_points() {
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let t = table(&[("x", v.clone()), ("y", v)]);
        let model = fit_pca(&local_moments(&t, &names(&["x", "y"])).unwrap()).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((model.components[0][0] - h).abs() < 1e-12);
        assert!((model.components[0][1] - h).abs() < 1e-12);
        assert_eq!(model.explained_variance[1], 0.0);
        assert!((model.explained_variance[0] - 16.5).abs() < 1e-9);
    }

    #[test]
    fn diagonal_covariance() {
        let (vals, vecs) = symmetric_eigen(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        assert_eq!(vals, vec![2.0, 1.0]);
        assert_eq!(vecs, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn constant_features_are_degenerate() {
        let t = table(&[("x", vec![0.1; 5]), ("y", vec![7.3; 5])]);
        assert!(matches!(
            fit_pca(&local_moments(&t, &names(&["x", "y"])).unwrap()),
            Err(Error::DegenerateCovariance(_))
        ));
        let one = table(&[("x", vec![1.0]), ("y", vec![2.0])]);
        assert!(matches!(
            fit_pca(&local_moments(&one, &names(&["x", "y"])).unwrap()),
            Err(Error::TooFewRows(_))
        ));
    }

    #[test]
    fn projection_centers_and_dots() {
        let t = table(&[
            ("x", vec![1.0, 2.0, 4.0, 7.0]),
            ("y", vec![0.5, -1.0, 2.0, 3.0]),
        ]);
        let model = fit_pca(&local_moments(&t, &names(&["x", "y"])).unwrap()).unwrap();
        assert_eq!(model.project(&model.mean_vector), [0.0, 0.0]);
        let pts = project_sample(&t, &model, 10, 3).unwrap();
        assert_eq!(pts.len(), 4);
        let x = [2.0, -1.0];
        let dot =
            |c: &[f64]| (x[0] - model.mean_vector[0]) * c[0] + (x[1] - model.mean_vector[1]) * c[1];
        assert_eq!(
            pts[1],
            [dot(&model.components[0]), dot(&model.components[1])]
        );
    }

    #[test]
    fn sample_is_seeded_and_bounded() {
        let a = sample_rows(1000, 200, 9);
        assert_eq!(a.len(), 200);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, sample_rows(1000, 200, 9));
        assert_ne!(a, sample_rows(1000, 200, 10));
    }
}
