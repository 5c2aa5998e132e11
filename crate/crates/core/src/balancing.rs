//! Entropy balancing for multi-dimensional continuous treatments.
//!
//! Each record contributes a moment vector `g(q, z) = [q, z, q ⊗ z]` built
//! from its centered treatment `q` and covariates `z`. The weights of
//! maximal entropy that zero out the weighted moments are recovered from the
//! dual
//!
//! ```text
//! min_λ  log Σ_i exp(-g_iᵀλ) + γ‖λ‖₁
//! ```
//!
//! as `π = softmax(-Gλ)`. The solver runs accelerated proximal gradient
//! (soft-thresholding for the L1 term) with backtracking, on column-scaled
//! moments; the penalty stays in the unscaled coordinates, so the problem
//! solved is exactly the one above.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CENTER_WARN: f64 = 1e-8;

/// Row `i` is `g(q_i, z_i) = [q_i | z_i | vec(q_i z_iᵀ)]`, interaction block
/// in row-major order (treatment index outer, covariate index inner).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    pub g: Array2<f64>,
    pub d_q: usize,
    pub d_z: usize,
}

impl MomentMatrix {
    /// Wrap an arbitrary moment matrix (no treatment/covariate structure).
    pub fn from_raw(g: Array2<f64>) -> Self {
        let p = g.ncols();
        Self { g, d_q: p, d_z: 0 }
    }

    pub fn m(&self) -> usize {
        self.g.nrows()
    }

    pub fn p(&self) -> usize {
        self.g.ncols()
    }

    pub fn column_means(&self) -> Array1<f64> {
        self.g.sum_axis(Axis(0)) / self.m() as f64
    }
}

/// Moment vector of a single `(q, z)` pair.
pub fn moment_row(q: ArrayView1<'_, f64>, z: ArrayView1<'_, f64>) -> Array1<f64> {
    let (d_q, d_z) = (q.len(), z.len());
    let mut g = Array1::zeros(d_q + d_z + d_q * d_z);
    g.slice_mut(ndarray::s![..d_q]).assign(&q);
    g.slice_mut(ndarray::s![d_q..d_q + d_z]).assign(&z);
    let base = d_q + d_z;
    for a in 0..d_q {
        for b in 0..d_z {
            g[base + a * d_z + b] = q[a] * z[b];
        }
    }
    g
}

pub fn build_g(q: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>) -> Result<MomentMatrix> {
    let m = q.nrows();
    if z.nrows() != m {
        return Err(Error::DimensionMismatch(format!(
            "treatment has {m} rows, covariates have {}",
            z.nrows()
        )));
    }
    for (name, block) in [("treatment", q), ("covariate", z)] {
        let worst = block
            .mean_axis(Axis(0))
            .map(|means| means.iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .unwrap_or(0.0);
        if worst > CENTER_WARN {
            log::warn!("{name} block is not centered (max |column mean| = {worst:.3e})");
        }
    }
    let (d_q, d_z) = (q.ncols(), z.ncols());
    let p = d_q + d_z + d_q * d_z;
    let mut g = Array2::zeros((m, p));
    for (i, mut row) in g.outer_iter_mut().enumerate() {
        row.assign(&moment_row(q.row(i), z.row(i)));
    }
    Ok(MomentMatrix { g, d_q, d_z })
}

/// `λᵀg(q, z)` evaluated blockwise without materializing `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tilt {
    lambda_q: Array1<f64>,
    lambda_z: Array1<f64>,
    /// `d_q x d_z` interaction coefficients.
    lambda_qz: Array2<f64>,
}

impl Tilt {
    pub fn new(lambda: ArrayView1<'_, f64>, d_q: usize, d_z: usize) -> Result<Self> {
        if lambda.len() != d_q + d_z + d_q * d_z {
            return Err(Error::DimensionMismatch(format!(
                "λ has length {}, expected {}",
                lambda.len(),
                d_q + d_z + d_q * d_z
            )));
        }
        let lambda_q = lambda.slice(ndarray::s![..d_q]).to_owned();
        let lambda_z = lambda.slice(ndarray::s![d_q..d_q + d_z]).to_owned();
        let lambda_qz = lambda
            .slice(ndarray::s![d_q + d_z..])
            .to_owned()
            .into_shape_with_order((d_q, d_z))
            .expect("length checked");
        Ok(Self {
            lambda_q,
            lambda_z,
            lambda_qz,
        })
    }

    /// Coefficient of `q` in `λᵀg(q, z)` for a fixed `z`: `λ_q + Λ z`.
    pub fn query_slope(&self, z: ArrayView1<'_, f64>) -> Array1<f64> {
        &self.lambda_q + &self.lambda_qz.dot(&z)
    }

    pub fn eval(&self, q: ArrayView1<'_, f64>, z: ArrayView1<'_, f64>) -> f64 {
        self.query_slope(z).dot(&q) + self.lambda_z.dot(&z)
    }
}

/// Dual value `log Σ exp(-Gλ) + γ‖λ‖₁` and the gradient of its smooth part,
/// `-Gᵀ softmax(-Gλ)`.
pub fn dual_objective(lambda: ArrayView1<'_, f64>, g: &MomentMatrix, gamma: f64) -> (f64, Array1<f64>) {
    let scores = g.g.dot(&lambda).mapv(|v| -v);
    let (lse, pi) = log_softmax(scores.view());
    let grad = g.g.t().dot(&pi).mapv(|v| -v);
    let l1: f64 = lambda.iter().map(|v| v.abs()).sum();
    (lse + gamma * l1, grad)
}

/// Log-sum-exp and softmax of `scores`, shifted by the max.
fn log_softmax(scores: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut pi = scores.mapv(|s| (s - max).exp());
    let total = pi.sum();
    pi /= total;
    (max + total.ln(), pi)
}

/// `softmax(-Gλ)`.
pub fn weights_from_lambda(lambda: ArrayView1<'_, f64>, g: &MomentMatrix) -> Array1<f64> {
    let scores = g.g.dot(&lambda).mapv(|v| -v);
    log_softmax(scores.view()).1
}

/// Default penalty: 1% of the largest absolute column mean of `G`.
pub fn default_gamma(g: &MomentMatrix) -> f64 {
    0.01 * max_abs(g.column_means().view())
}

fn max_abs(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EbOptions {
    pub max_iter: usize,
    /// Stop once the proximal gradient map (in scaled coordinates) has
    /// Euclidean norm below this.
    pub tol: f64,
    /// Initial inverse step size.
    pub initial_lipschitz: f64,
    /// Factor applied to the inverse step when the sufficient-decrease test
    /// fails.
    pub backtrack: f64,
    /// Factor applied to the inverse step after every accepted step.
    pub relax: f64,
    /// Scale columns of `G` to unit variance before solving.
    pub standardize: bool,
}

impl Default for EbOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol: 1e-8,
            initial_lipschitz: 1.0,
            backtrack: 2.0,
            relax: 0.9,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancingSolution {
    pub lambda: Array1<f64>,
    pub weights: Array1<f64>,
    pub gamma: f64,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Smooth part of the dual in scaled coordinates.
struct ScaledDual<'a> {
    gs: &'a Array2<f64>,
}

impl ScaledDual<'_> {
    fn scores(&self, mu: &Array1<f64>) -> Array1<f64> {
        self.gs.dot(mu).mapv(|v| -v)
    }

    /// value, softmax, gradient
    fn eval(&self, mu: &Array1<f64>) -> (f64, Array1<f64>, Array1<f64>) {
        let scores = self.scores(mu);
        let (lse, pi) = log_softmax(scores.view());
        let grad = self.gs.t().dot(&pi).mapv(|v| -v);
        (lse, pi, grad)
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Solve the penalized entropy-balancing dual.
pub fn eb_solve(g: &MomentMatrix, gamma: f64, opts: &EbOptions) -> Result<BalancingSolution> {
    let (m, p) = (g.m(), g.p());
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("empty moment matrix".into()));
    }
    if g.g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("moment matrix has non-finite entries".into()));
    }

    let uniform = |trace: Vec<f64>| BalancingSolution {
        lambda: Array1::zeros(p),
        weights: Array1::from_elem(m, 1.0 / m as f64),
        gamma,
        objective_trace: trace,
        converged: true,
        grad_norm: 0.0,
        iterations: 0,
    };

    // identical rows: every direction is flat
    let first = g.g.row(0);
    if g.g.outer_iter().all(|row| row == first) {
        return Ok(uniform(vec![(m as f64).ln()]));
    }
    // origin satisfies the subgradient condition
    let means = g.column_means();
    if gamma >= max_abs(means.view()) {
        return Ok(uniform(vec![(m as f64).ln()]));
    }

    let scale: Array1<f64> = if opts.standardize {
        g.g.std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 && s.is_finite() { s } else { 1.0 })
    } else {
        Array1::ones(p)
    };
    let gs = &g.g / &scale;
    // λ = μ / s, so γ|λ_k| = (γ / s_k)|μ_k|
    let thresholds = scale.mapv(|s| gamma / s);
    let dual = ScaledDual { gs: &gs };
    let penalty = |mu: &Array1<f64>| -> f64 {
        mu.iter().zip(thresholds.iter()).map(|(u, t)| t * u.abs()).sum()
    };
    let prox = |v: &Array1<f64>, lip: f64| -> Array1<f64> {
        Array1::from_iter(v.iter().zip(thresholds.iter()).map(|(&x, &t)| soft_threshold(x, t / lip)))
    };

    let mut x = Array1::<f64>::zeros(p);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut lip = opts.initial_lipschitz.max(1e-12);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let (f_y, pi_y, grad_y) = dual.eval(&y);
        if !f_y.is_finite() {
            return Err(Error::Diverged {
                iteration: iter,
                value: f_y,
            });
        }
        let scores_y = dual.scores(&y);
        let x_new = loop {
            let candidate = prox(&(&y - &(&grad_y / lip)), lip);
            let d = &candidate - &y;
            let model = grad_y.dot(&d) + 0.5 * lip * d.dot(&d);
            // f(candidate) - f(y) = log Σ π_i exp(δ_i), computed without cancellation
            let delta = &dual.scores(&candidate) - &scores_y;
            let diff = pi_y
                .iter()
                .zip(delta.iter())
                .map(|(p, dl)| p * dl.exp_m1())
                .sum::<f64>()
                .ln_1p();
            let slack = 8.0 * f64::EPSILON * (model.abs() + grad_y.dot(&d).abs());
            if diff.is_finite() && diff <= model + slack {
                break candidate;
            }
            lip *= opts.backtrack;
            if !lip.is_finite() {
                return Err(Error::Diverged {
                    iteration: iter,
                    value: f64::INFINITY,
                });
            }
        };

        let step = &y - &x_new;
        let map_norm = lip * step.dot(&step).sqrt();

        // gradient-based adaptive restart
        let restart = step.dot(&(&x_new - &x)) > 0.0;
        let t_next = if restart {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
        };
        let momentum = if restart { 0.0 } else { (t - 1.0) / t_next };
        y = &x_new + &((&x_new - &x) * momentum);
        x = x_new;
        t = t_next;

        let (f_x, _, grad_x) = dual.eval(&x);
        let objective = f_x + penalty(&x);
        if !objective.is_finite() {
            return Err(Error::Diverged {
                iteration: iter,
                value: objective,
            });
        }
        trace.push(objective);

        if map_norm <= opts.tol {
            // confirm at the iterate itself
            let at_x = prox(&(&x - &(&grad_x / lip)), lip);
            let r = &x - &at_x;
            grad_norm = lip * r.dot(&r).sqrt();
            if grad_norm <= opts.tol {
                converged = true;
                break;
            }
        }
        lip *= opts.relax;
        if iter + 1 == opts.max_iter {
            let at_x = prox(&(&x - &(&grad_x / lip)), lip);
            let r = &x - &at_x;
            grad_norm = lip * r.dot(&r).sqrt();
        }
    }

    let lambda = &x / &scale;
    let weights = weights_from_lambda(lambda.view(), g);
    if !converged {
        log::debug!("entropy balancing stopped after {iterations} iterations, gradient map {grad_norm:.3e}");
    }
    Ok(BalancingSolution {
        lambda,
        weights,
        gamma,
        objective_trace: trace,
        converged,
        grad_norm,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceDiagnostics {
    /// `Gᵀπ`
    pub weighted_moments: Array1<f64>,
    pub max_abs_moment: f64,
    /// Effective sample size `1 / Σ π_i²`.
    pub ess: f64,
    pub entropy: f64,
}

pub fn balance_diagnostics(g: &MomentMatrix, weights: ArrayView1<'_, f64>) -> BalanceDiagnostics {
    let weighted_moments = g.g.t().dot(&weights);
    let max_abs_moment = max_abs(weighted_moments.view());
    let ess = 1.0 / weights.dot(&weights);
    let entropy = -weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|w| w * w.ln())
        .sum::<f64>();
    BalanceDiagnostics {
        weighted_moments,
        max_abs_moment,
        ess,
        entropy,
    }
}
