//! Stabilized propensity ratios `π_z(q, z) = f(q) / f(q | z)`.
//!
//! Two routes are provided. The nonparametric route reads the ratios off
//! entropy-balancing solutions: the balancing weights are a softmax of
//! `-λᵀg(q, z)`, so ratios between two queries evaluated at the same `z`
//! only need the exponent and never the normalizer. The parametric route
//! fits diagonal Gaussians: one for the marginal of `q`, one per topic for
//! `q | x`, and a linear-Gaussian regression for `q | n, x`.

use nalgebra::{DMatrix, DVector};
use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::balancing::{weights_from_lambda, MomentMatrix, Tilt};
use crate::error::{Error, Result};

pub const VAR_FLOOR: f64 = 1e-8;
pub const RIDGE: f64 = 1e-8;
/// Bound on log-ratios before exponentiation.
pub const LOG_CLAMP: f64 = 30.0;

pub(crate) fn clamped_exp(log_value: f64) -> f64 {
    log_value.clamp(-LOG_CLAMP, LOG_CLAMP).exp()
}

/// `-½ (a - m)ᵀ diag(var)⁻¹ (a - m)`
pub fn qd(a: ArrayView1<'_, f64>, mean: ArrayView1<'_, f64>, var: ArrayView1<'_, f64>) -> f64 {
    -0.5 * a
        .iter()
        .zip(mean.iter())
        .zip(var.iter())
        .map(|((a, m), v)| (a - m) * (a - m) / v)
        .sum::<f64>()
}

/// Diagonal-covariance Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianModel {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl GaussianModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_det(&self) -> f64 {
        self.var.iter().map(|v| v.ln()).sum()
    }

    pub fn log_density(&self, x: ArrayView1<'_, f64>) -> f64 {
        let d = self.dim() as f64;
        -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.log_det())
            + qd(x, self.mean.view(), self.var.view())
    }
}

fn column_var(data: ArrayView2<'_, f64>, mean: &Array1<f64>) -> Array1<f64> {
    let m = data.nrows() as f64;
    let centered = &data - mean;
    (centered.mapv(|v| v * v).sum_axis(Axis(0)) / (m - 1.0)).mapv(|v| v.max(VAR_FLOOR))
}

pub fn fit_marginal_gaussian(q: ArrayView2<'_, f64>) -> Result<GaussianModel> {
    let m = q.nrows();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "Gaussian fit needs at least 2 rows, got {m}"
        )));
    }
    let mean = q.sum_axis(Axis(0)) / m as f64;
    let var = column_var(q, &mean);
    Ok(GaussianModel { mean, var })
}

pub fn fit_conditional_gaussians(
    q: ArrayView2<'_, f64>,
    labels: &[usize],
    k: usize,
) -> Result<Vec<GaussianModel>> {
    if labels.len() != q.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            q.nrows()
        )));
    }
    (0..k)
        .map(|topic| {
            let members: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter_map(|(i, &l)| (l == topic).then_some(i))
                .collect();
            if members.len() < 2 {
                return Err(Error::SparseTopic {
                    topic,
                    count: members.len(),
                });
            }
            fit_marginal_gaussian(q.select(Axis(0), &members).view())
        })
        .collect()
}

/// `q | n, x ~ N(W [n, x], diag(resid_var))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianModel {
    /// `d_q x (d_n + d_x)`
    pub w: Array2<f64>,
    pub resid_var: Array1<f64>,
}

impl LinearGaussianModel {
    pub fn predict(&self, regressors: ArrayView1<'_, f64>) -> Array1<f64> {
        self.w.dot(&regressors)
    }

    /// `log f(q_a | r) - log f(q_b | r)` for regressors `r = [n, x]`.
    pub fn log_ratio(&self, q_a: ArrayView1<'_, f64>, q_b: ArrayView1<'_, f64>, regressors: ArrayView1<'_, f64>) -> f64 {
        let mean = self.predict(regressors);
        qd(q_a, mean.view(), self.resid_var.view()) - qd(q_b, mean.view(), self.resid_var.view())
    }
}

/// Ridge-stabilized least squares of `q` on `[n, x]` (no intercept; one-hot
/// topics supply per-topic intercepts).
pub fn fit_linear_gaussian(
    q: ArrayView2<'_, f64>,
    n: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
) -> Result<LinearGaussianModel> {
    let m = q.nrows();
    if n.nrows() != m || x.nrows() != m {
        return Err(Error::DimensionMismatch("row counts of q, n, x differ".into()));
    }
    let r = concatenate(Axis(1), &[n, x]).expect("row counts checked");
    let p = r.ncols();
    if m <= p {
        return Err(Error::InvalidArgument(format!(
            "linear-Gaussian fit needs more rows ({m}) than regressors ({p})"
        )));
    }
    let gram = r.t().dot(&r);
    let cross = r.t().dot(&q); // p x d_q
    let mut a = DMatrix::from_fn(p, p, |i, j| gram[[i, j]]);
    for i in 0..p {
        a[(i, i)] += RIDGE;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("normal equations are not positive definite".into()))?;
    let d_q = q.ncols();
    let mut w = Array2::zeros((d_q, p));
    for c in 0..d_q {
        let rhs = DVector::from_fn(p, |i, _| cross[[i, c]]);
        let sol = chol.solve(&rhs);
        for i in 0..p {
            w[[c, i]] = sol[i];
        }
    }
    let resid = &q - &r.dot(&w.t());
    let resid_mean = resid.sum_axis(Axis(0)) / m as f64;
    let resid_var = column_var(resid.view(), &resid_mean);
    Ok(LinearGaussianModel { w, resid_var })
}

/// The fitted Gaussian pieces of the parametric route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricModels {
    pub marginal: GaussianModel,
    pub topics: Vec<GaussianModel>,
    pub linear: LinearGaussianModel,
}

impl ParametricModels {
    /// Fit from raw queries, one unit's activations and topic labels.
    pub fn fit(q: ArrayView2<'_, f64>, n: ArrayView2<'_, f64>, labels: &[usize], k: usize) -> Result<Self> {
        let x = crate::preprocess::one_hot(labels, k)?;
        Ok(Self {
            marginal: fit_marginal_gaussian(q)?,
            topics: fit_conditional_gaussians(q, labels, k)?,
            linear: fit_linear_gaussian(q, n, x.view())?,
        })
    }

    fn topic(&self, topic: usize) -> Result<&GaussianModel> {
        self.topics.get(topic).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "topic {topic} was not fitted ({} topics)",
                self.topics.len()
            ))
        })
    }

    fn regressors(&self, n: ArrayView1<'_, f64>, topic: usize) -> Array1<f64> {
        let k = self.topics.len();
        let mut r = Array1::zeros(n.len() + k);
        r.slice_mut(ndarray::s![..n.len()]).assign(&n);
        r[n.len() + topic] = 1.0;
        r
    }

    /// `log √(|Σ_k| / |Σ_q|)`
    fn log_prefactor(&self, topic: &GaussianModel) -> f64 {
        0.5 * (topic.log_det() - self.marginal.log_det())
    }

    /// Stabilized weight `π_X(q, x) = f(q) / f(q | x)`.
    pub fn pi_x(&self, q: ArrayView1<'_, f64>, topic: usize) -> Result<f64> {
        let t = self.topic(topic)?;
        let log = self.log_prefactor(t)
            + (qd(q, self.marginal.mean.view(), self.marginal.var.view())
                - qd(q, t.mean.view(), t.var.view()));
        Ok(clamped_exp(log))
    }
}

/// Combine the four quadratic forms and the determinant prefactor.
pub(crate) fn combine_parametric(log_prefactor: f64, qd_marg_i: f64, qd_cond_j: f64, qd_topic_j: f64, qd_cond_i: f64) -> f64 {
    clamped_exp(log_prefactor + (qd_marg_i - qd_topic_j) + (qd_cond_j - qd_cond_i))
}

/// `[π_{N,X}(q_i, n_i, x_i) / π_{N,X}(q_j, n_i, x_i)] · π_X(q_j, x_i)`
/// under the Gaussian models, i.e.
/// `f(q_i) f(q_j | n_i, x_i) / (f(q_i | n_i, x_i) f(q_j | x_i))`.
pub fn parametric_term(
    q_i: ArrayView1<'_, f64>,
    q_j: ArrayView1<'_, f64>,
    n_i: ArrayView1<'_, f64>,
    topic_i: usize,
    models: &ParametricModels,
) -> Result<f64> {
    let t = models.topic(topic_i)?;
    let r = models.regressors(n_i, topic_i);
    let pred = models.linear.predict(r.view());
    let resid = models.linear.resid_var.view();
    Ok(combine_parametric(
        models.log_prefactor(t),
        qd(q_i, models.marginal.mean.view(), models.marginal.var.view()),
        qd(q_j, pred.view(), resid),
        qd(q_j, t.mean.view(), t.var.view()),
        qd(q_i, pred.view(), resid),
    ))
}

/// `m · softmax(-Gλ)`: stabilized weights for every record, averaging to 1.
pub fn nonparametric_pi(lambda: ArrayView1<'_, f64>, g: &MomentMatrix) -> Array1<f64> {
    weights_from_lambda(lambda, g) * g.m() as f64
}

pub fn nonparametric_pi_x(i: usize, lambda_x: ArrayView1<'_, f64>, g_x: &MomentMatrix) -> f64 {
    nonparametric_pi(lambda_x, g_x)[i]
}

/// Entropy-balancing solutions for `z = x` and `z = [n, x]`, in the blockwise
/// form the ratio computations need.
#[derive(Debug, Clone, PartialEq)]
pub struct NonparametricModels {
    pub tilt_x: Tilt,
    pub tilt_nx: Tilt,
    /// `π_x(q_i, x_i)` for every record.
    pub pi_x: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StabilizedWeightModel {
    Nonparametric(NonparametricModels),
    Parametric(ParametricModels),
}
