//! Centering, PCA and k-means topic clustering.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_REDUCE_DIMS: usize = 25;
pub const DEFAULT_K_TOPICS: usize = 3;
pub const KMEANS_MAX_ITER: usize = 300;

/// Subtract column means. Returns the centered matrix and the means.
pub fn center(data: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>) {
    let mean = column_means(data);
    let centered = &data - &mean;
    (centered, mean)
}

pub fn column_means(data: ArrayView2<'_, f64>) -> Array1<f64> {
    let m = data.nrows() as f64;
    data.sum_axis(Axis(0)) / m
}

/// Principal axes of a data matrix, largest variance first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `k x d`, orthonormal rows.
    pub components: Array2<f64>,
    pub eigenvalues: Array1<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn transform(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        pca_transform(self, data)
    }

    pub fn inverse_transform(&self, scores: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if scores.ncols() != self.n_components() {
            return Err(Error::DimensionMismatch(format!(
                "scores have {} columns, model has {} components",
                scores.ncols(),
                self.n_components()
            )));
        }
        Ok(scores.dot(&self.components) + &self.mean)
    }
}

/// Fit `k` principal components from the sample covariance (divisor `m - 1`).
///
/// Each component is oriented so that its entry of largest magnitude is
/// positive.
pub fn pca_fit(data: ArrayView2<'_, f64>, k: usize) -> Result<PcaModel> {
    let (m, d) = data.dim();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 rows, got {m}")));
    }
    if k == 0 || k > d.min(m - 1) {
        return Err(Error::InvalidArgument(format!(
            "PCA component count {k} outside [1, {}]",
            d.min(m - 1)
        )));
    }
    let (centered, mean) = center(data);
    let cov = centered.t().dot(&centered) / (m as f64 - 1.0);
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Array2::zeros((k, d));
    let mut eigenvalues = Array1::zeros(k);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
            .unwrap();
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[row, j]] = sign * v[j];
        }
        eigenvalues[row] = eig.eigenvalues[idx].max(0.0);
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}

/// Project onto the principal axes: `(data - mean) * components^T`.
pub fn pca_transform(model: &PcaModel, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if data.ncols() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} columns, PCA model expects {}",
            data.ncols(),
            model.dim()
        )));
    }
    Ok((&data - &model.mean).dot(&model.components.t()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansModel {
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub seed: u64,
    /// Inertia after each Lloyd iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

impl KmeansModel {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(data: ArrayView2<'_, f64>, centroids: &Array2<f64>, labels: &mut [usize]) -> (bool, f64) {
    let mut changed = false;
    let mut inertia = 0.0;
    for (i, row) in data.outer_iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.outer_iter().enumerate() {
            let d = sq_dist(row, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if labels[i] != best {
            labels[i] = best;
            changed = true;
        }
        inertia += best_d;
    }
    (changed, inertia)
}

fn inertia_of(data: ArrayView2<'_, f64>, centroids: &Array2<f64>, labels: &[usize]) -> f64 {
    data.outer_iter()
        .zip(labels)
        .map(|(row, &l)| sq_dist(row, centroids.row(l)))
        .sum()
}

fn kmeans_pp(data: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (m, d) = data.dim();
    let mut centroids = Array2::zeros((k, d));
    let first = rng.random_range(0..m);
    centroids.row_mut(0).assign(&data.row(first));
    let mut closest: Vec<f64> = data
        .outer_iter()
        .map(|row| sq_dist(row, centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = m - 1;
            for (i, &w) in closest.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, row) in data.outer_iter().enumerate() {
            closest[i] = closest[i].min(sq_dist(row, centroids.row(c)));
        }
    }
    centroids
}

/// Lloyd's algorithm from a k-means++ start. Stops when no label changes or
/// after [`KMEANS_MAX_ITER`] iterations.
pub fn kmeans(data: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<KmeansModel> {
    let (m, d) = data.dim();
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!(
            "k-means cluster count {k} outside [1, {m}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(data, k, &mut rng);
    let mut labels = vec![usize::MAX; m];
    let mut trace = Vec::new();
    let mut iterations = 0;

    assign(data, &centroids, &mut labels);
    for iter in 0..KMEANS_MAX_ITER {
        iterations = iter + 1;
        // update step
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (row, &l) in data.outer_iter().zip(&labels) {
            sums.row_mut(l).scaled_add(1.0, &row);
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
        // empty cluster repair: move to the point farthest from its centroid
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..m)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(data.row(a), centroids.row(labels[a]))
                        .total_cmp(&sq_dist(data.row(b), centroids.row(labels[b])))
                });
            let Some(far) = far else {
                return Err(Error::InvalidArgument(format!(
                    "cannot form {k} non-empty clusters from this data"
                )));
            };
            counts[labels[far]] -= 1;
            labels[far] = c;
            counts[c] = 1;
            centroids.row_mut(c).assign(&data.row(far));
        }
        trace.push(inertia_of(data, &centroids, &labels));
        let (changed, _) = assign(data, &centroids, &mut labels);
        if !changed {
            break;
        }
    }

    // a final assignment may leave a cluster empty only if the data has
    // fewer distinct points than k
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} non-empty clusters from this data"
        )));
    }
    let inertia = inertia_of(data, &centroids, &labels);
    Ok(KmeansModel {
        centroids,
        labels,
        inertia,
        seed,
        trace,
        iterations,
    })
}

pub fn one_hot(labels: &[usize], k: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), k));
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::InvalidArgument(format!(
                "label {l} at row {i} outside [0, {k})"
            )));
        }
        out[[i, l]] = 1.0;
    }
    Ok(out)
}

/// Recover labels from a one-hot matrix. Rows must contain a single 1.
pub fn labels_from_one_hot(topics: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    topics
        .outer_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut label = None;
            for (j, &v) in row.iter().enumerate() {
                if v == 1.0 && label.is_none() {
                    label = Some(j);
                } else if v != 0.0 {
                    label = None;
                    break;
                }
            }
            label.ok_or_else(|| {
                Error::InvalidArgument(format!("topic row {i} is not one-hot"))
            })
        })
        .collect()
}
