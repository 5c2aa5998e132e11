//! Average indirect effect (AIE) estimation.
//!
//! For every record `i` with `y_i = 1` a fixed number of partner queries `q_j`
//! is drawn and the pair term
//!
//! ```text
//! π_x(q_i, x_i) · (R_nx · R_x − 1)
//! R_nx = π_nx(q_i, n_i, x_i) / π_nx(q_j, n_i, x_i)
//! R_x  = π_x(q_j, x_i) / π_x(q_i, x_i)
//! ```
//!
//! is evaluated. With `π ∝ exp(−λᵀg)` both ratios are free of the softmax
//! normalizers, so a term costs one dot product per ratio once the
//! per-record slopes `λ_q + Λz_i` are known. Terms are Winsorized and
//! averaged over all ordered pairs, zero-outcome records contributing
//! implicit zeros.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::balancing::{build_g, default_gamma, eb_solve, moment_row, EbOptions, MomentMatrix, Tilt};
use crate::error::{Error, Result};
use crate::exec::{mix_seed, Execution};
use crate::ingest::Dataset;
use crate::preprocess::{center, labels_from_one_hot, DEFAULT_K_TOPICS, DEFAULT_REDUCE_DIMS};
use crate::propensity::{clamped_exp, nonparametric_pi, parametric_term, ParametricModels};

pub const DEFAULT_K_PAIRS: usize = 200;
pub const DEFAULT_WINSOR_P: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Adjusted,
    Normal,
    Parametric,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Adjusted, Mode::Normal, Mode::Parametric];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Adjusted => "adjusted",
            Mode::Normal => "normal",
            Mode::Parametric => "parametric",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s:?} (adjusted, normal, parametric)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AieConfig {
    pub mode: Mode,
    /// Partners sampled per toxic record.
    pub k_pairs: usize,
    pub winsor_p: f64,
    /// Balancing penalty; `None` picks [`default_gamma`] per moment matrix.
    pub gamma: Option<f64>,
    pub seed: u64,
    pub reduce_dims: usize,
    pub k_topics: usize,
    /// Average over toxic records only instead of all ordered pairs.
    pub conditional: bool,
    pub eb: EbOptions,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for AieConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Adjusted,
            k_pairs: DEFAULT_K_PAIRS,
            winsor_p: DEFAULT_WINSOR_P,
            gamma: None,
            seed: 0,
            reduce_dims: DEFAULT_REDUCE_DIMS,
            k_topics: DEFAULT_K_TOPICS,
            conditional: false,
            eb: EbOptions::default(),
            execution: Execution::default(),
        }
    }
}

impl AieConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.winsor_p) {
            return Err(Error::InvalidArgument(format!("winsor_p must lie in [0, 0.5), got {}", self.winsor_p)));
        }
        if self.k_pairs == 0 {
            return Err(Error::InvalidArgument("k_pairs must be at least 1".into()));
        }
        if self.reduce_dims == 0 {
            return Err(Error::InvalidArgument("reduce_dims must be at least 1".into()));
        }
        if let Some(g) = self.gamma {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::InvalidArgument(format!("gamma must be finite and >= 0, got {g}")));
            }
        }
        Ok(())
    }

    fn gamma_for(&self, g: &MomentMatrix) -> f64 {
        self.gamma.unwrap_or_else(|| default_gamma(g))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AieEstimate {
    pub unit_index: usize,
    pub unit_name: String,
    pub mode: Mode,
    pub aie: f64,
    /// Explicit terms before Winsorization.
    pub n_terms: usize,
    pub winsor_lo: f64,
    pub winsor_hi: f64,
    pub nz_count: usize,
    pub no_positives: bool,
    /// Standard error across records of the per-record mean terms.
    pub se: f64,
    pub eb_converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationMetrics {
    pub slope: f64,
    pub gini: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Winsorized {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Linear-interpolation quantile of sorted data (rank `(n − 1)p + 1`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() && frac > 0.0 {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

fn winsor_bounds(values: &[f64], p: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("winsorized mean of an empty list".into()));
    }
    if !(0.0..0.5).contains(&p) {
        return Err(Error::InvalidArgument(format!("winsor percentile must lie in [0, 0.5), got {p}")));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite value {bad} in winsorized mean")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&sorted, p), quantile_sorted(&sorted, 1.0 - p)))
}

pub fn winsorized_mean(values: &[f64], p: f64) -> Result<Winsorized> {
    let (lo, hi) = winsor_bounds(values, p)?;
    let sum: f64 = values.iter().map(|v| v.clamp(lo, hi)).sum();
    Ok(Winsorized {
        mean: sum / values.len() as f64,
        lo,
        hi,
    })
}

fn split_row(g: &MomentMatrix, i: usize) -> (ArrayView1<'_, f64>, ArrayView1<'_, f64>) {
    let row = g.g.row(i);
    (row.slice_move(s![..g.d_q]), g.g.row(i).slice_move(s![g.d_q..g.d_q + g.d_z]))
}

fn check_pair(i: usize, j: usize, m: usize) -> Result<()> {
    if i == j {
        return Err(Error::SelfPair(i));
    }
    if i.max(j) >= m {
        return Err(Error::InvalidArgument(format!("pair ({i}, {j}) out of range for m = {m}")));
    }
    Ok(())
}

/// Adjusted pair term from two moment matrices, reading `q`, `x` and `[n, x]`
/// back out of their rows.
pub fn aie_term(
    i: usize,
    j: usize,
    lambda_x: ArrayView1<'_, f64>,
    lambda_nx: ArrayView1<'_, f64>,
    g_x: &MomentMatrix,
    g_nx: &MomentMatrix,
    pi_x_i: f64,
) -> Result<f64> {
    check_pair(i, j, g_x.m())?;
    if g_nx.m() != g_x.m() || g_nx.d_q != g_x.d_q {
        return Err(Error::DimensionMismatch("G_x and G_nx disagree on m or d_q".into()));
    }
    let (q_i, x_i) = split_row(g_x, i);
    let (q_j, _) = split_row(g_x, j);
    let (_, nx_i) = split_row(g_nx, i);
    let log_nx = -lambda_nx.dot(&(moment_row(q_i, nx_i) - moment_row(q_j, nx_i)));
    let log_x = -lambda_x.dot(&(moment_row(q_j, x_i) - moment_row(q_i, x_i)));
    Ok(pi_x_i * (clamped_exp(log_nx) * clamped_exp(log_x) - 1.0))
}

/// Unadjusted pair term `R_n − 1`.
pub fn aie_term_normal(i: usize, j: usize, lambda_n: ArrayView1<'_, f64>, g_n: &MomentMatrix) -> Result<f64> {
    check_pair(i, j, g_n.m())?;
    let (q_i, n_i) = split_row(g_n, i);
    let (q_j, _) = split_row(g_n, j);
    let log_n = -lambda_n.dot(&(moment_row(q_i, n_i) - moment_row(q_j, n_i)));
    Ok(clamped_exp(log_n) - 1.0)
}

/// Topic covariates used for balancing: centered columns, with the last
/// column of a one-hot encoding dropped since it is implied by the others.
pub fn topic_features(topics: ArrayView2<'_, f64>) -> Array2<f64> {
    let (centered, _) = center(topics);
    if topics.ncols() > 1 && labels_from_one_hot(topics).is_ok() {
        centered.slice(s![.., ..topics.ncols() - 1]).to_owned()
    } else {
        centered
    }
}

/// Unit-independent state shared by every unit of one dataset.
struct Shared {
    q: Array2<f64>,
    x: Array2<f64>,
    labels: Option<Vec<usize>>,
    k: usize,
    toxic: Vec<usize>,
    /// `(tilt_x, π_x per record, converged)`; only built for adjusted mode.
    x_model: Option<(Tilt, Array1<f64>, bool)>,
}

impl Shared {
    /// `force_x` builds the topic model even without toxic records.
    fn new(ds: &Dataset, cfg: &AieConfig, force_x: bool) -> Result<Self> {
        let (q, _) = center(ds.queries.view());
        let x = topic_features(ds.topics.view());
        let labels = labels_from_one_hot(ds.topics.view()).ok();
        let toxic: Vec<usize> = (0..ds.len()).filter(|&i| ds.outcomes[i]).collect();
        let x_model = if cfg.mode == Mode::Adjusted && (force_x || !toxic.is_empty()) {
            let g_x = build_g(q.view(), x.view())?;
            let sol = eb_solve(&g_x, cfg.gamma_for(&g_x), &cfg.eb)?;
            if !sol.converged {
                log::warn!("topic balancing stopped after {} iterations (gradient map {:.3e})", sol.iterations, sol.grad_norm);
            }
            let pi = nonparametric_pi(sol.lambda.view(), &g_x);
            Some((Tilt::new(sol.lambda.view(), q.ncols(), x.ncols())?, pi, sol.converged))
        } else {
            None
        };
        Ok(Self {
            q,
            x,
            labels,
            k: ds.topics.ncols(),
            toxic,
            x_model,
        })
    }
}

/// Per-unit term evaluator.
enum TermModel<'a> {
    Adjusted {
        q: &'a Array2<f64>,
        x: &'a Array2<f64>,
        n: Array2<f64>,
        tilt_x: &'a Tilt,
        tilt_nx: Tilt,
        pi_x: &'a Array1<f64>,
    },
    Normal {
        q: &'a Array2<f64>,
        n: Array2<f64>,
        tilt_n: Tilt,
    },
    Parametric {
        q: &'a Array2<f64>,
        n: Array2<f64>,
        labels: &'a [usize],
        models: ParametricModels,
    },
}

/// Slopes (or other per-record state) evaluated once for record `i`.
enum RecordTerms<'a> {
    Ratio {
        q_i: ArrayView1<'a, f64>,
        slope_outer: Array1<f64>,
        slope_x: Option<Array1<f64>>,
        weight: f64,
    },
    Parametric {
        q_i: ArrayView1<'a, f64>,
        n_i: ArrayView1<'a, f64>,
        topic: usize,
        models: &'a ParametricModels,
        pi_x: f64,
    },
}

impl RecordTerms<'_> {
    fn term(&self, q_alt: ArrayView1<'_, f64>) -> Result<f64> {
        match self {
            RecordTerms::Ratio {
                q_i,
                slope_outer,
                slope_x,
                weight,
            } => {
                let d = &q_i.view() - &q_alt;
                let outer = clamped_exp(-slope_outer.dot(&d));
                let inner = slope_x.as_ref().map_or(1.0, |sx| clamped_exp(sx.dot(&d)));
                Ok(weight * (outer * inner - 1.0))
            }
            RecordTerms::Parametric {
                q_i,
                n_i,
                topic,
                models,
                pi_x,
            } => Ok(parametric_term(q_i.view(), q_alt, n_i.view(), *topic, models)? - pi_x),
        }
    }
}

impl<'a> TermModel<'a> {
    fn new(shared: &'a Shared, activations: ArrayView2<'_, f64>, cfg: &AieConfig) -> Result<(Self, bool)> {
        let (n, _) = center(activations);
        match cfg.mode {
            Mode::Adjusted => {
                let (tilt_x, pi_x, conv_x) = shared.x_model.as_ref().expect("built for adjusted mode");
                let z = concatenate(Axis(1), &[n.view(), shared.x.view()]).expect("rows agree");
                let g = build_g(shared.q.view(), z.view())?;
                let sol = eb_solve(&g, cfg.gamma_for(&g), &cfg.eb)?;
                let tilt_nx = Tilt::new(sol.lambda.view(), g.d_q, g.d_z)?;
                Ok((
                    TermModel::Adjusted {
                        q: &shared.q,
                        x: &shared.x,
                        n,
                        tilt_x,
                        tilt_nx,
                        pi_x,
                    },
                    sol.converged && *conv_x,
                ))
            }
            Mode::Normal => {
                let g = build_g(shared.q.view(), n.view())?;
                let sol = eb_solve(&g, cfg.gamma_for(&g), &cfg.eb)?;
                let tilt_n = Tilt::new(sol.lambda.view(), g.d_q, g.d_z)?;
                Ok((TermModel::Normal { q: &shared.q, n, tilt_n }, sol.converged))
            }
            Mode::Parametric => {
                let labels = shared.labels.as_deref().ok_or_else(|| {
                    Error::InvalidArgument("parametric mode needs one-hot topics".into())
                })?;
                let models = ParametricModels::fit(shared.q.view(), n.view(), labels, shared.k)?;
                Ok((
                    TermModel::Parametric {
                        q: &shared.q,
                        n,
                        labels,
                        models,
                    },
                    true,
                ))
            }
        }
    }

    fn queries(&self) -> &Array2<f64> {
        match self {
            TermModel::Adjusted { q, .. } | TermModel::Normal { q, .. } | TermModel::Parametric { q, .. } => q,
        }
    }

    fn record(&self, i: usize) -> Result<RecordTerms<'_>> {
        Ok(match self {
            TermModel::Adjusted {
                q,
                x,
                n,
                tilt_x,
                tilt_nx,
                pi_x,
            } => {
                let z = concatenate(Axis(0), &[n.row(i), x.row(i)]).expect("1-d concat");
                RecordTerms::Ratio {
                    q_i: q.row(i),
                    slope_outer: tilt_nx.query_slope(z.view()),
                    slope_x: Some(tilt_x.query_slope(x.row(i))),
                    weight: pi_x[i],
                }
            }
            TermModel::Normal { q, n, tilt_n } => RecordTerms::Ratio {
                q_i: q.row(i),
                slope_outer: tilt_n.query_slope(n.row(i)),
                slope_x: None,
                weight: 1.0,
            },
            TermModel::Parametric { q, n, labels, models } => {
                let topic = labels[i];
                RecordTerms::Parametric {
                    q_i: q.row(i),
                    n_i: n.row(i),
                    topic,
                    models,
                    pi_x: models.pi_x(q.row(i), topic)?,
                }
            }
        })
    }

    /// Pair term for record `i` against an arbitrary alternative query
    /// (in the centered coordinates the model was fitted on).
    fn term_for_query(&self, i: usize, q_alt: ArrayView1<'_, f64>) -> Result<f64> {
        self.record(i)?.term(q_alt)
    }
}

/// `min(k, m − 1)` distinct partners `j ≠ i`, uniformly without replacement.
pub fn sample_partners(m: usize, i: usize, k: usize, seed: u64, unit_index: usize) -> Vec<usize> {
    let k_eff = k.min(m.saturating_sub(1));
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, unit_index as u64, i as u64]));
    rand::seq::index::sample(&mut rng, m - 1, k_eff)
        .into_iter()
        .map(|j| if j >= i { j + 1 } else { j })
        .collect()
}

fn no_positives(ds: &Dataset, unit_index: usize, mode: Mode) -> AieEstimate {
    AieEstimate {
        unit_index,
        unit_name: ds.units[unit_index].name.clone(),
        mode,
        aie: 0.0,
        n_terms: 0,
        winsor_lo: 0.0,
        winsor_hi: 0.0,
        nz_count: 0,
        no_positives: true,
        se: 0.0,
        eb_converged: true,
    }
}

fn estimate_unit(ds: &Dataset, shared: &Shared, unit_index: usize, cfg: &AieConfig) -> Result<AieEstimate> {
    let m = ds.len();
    if shared.toxic.is_empty() {
        return Ok(no_positives(ds, unit_index, cfg.mode));
    }
    let (model, converged) = TermModel::new(shared, ds.units[unit_index].activations.view(), cfg)?;
    if !converged {
        log::warn!("balancing for unit {} did not converge", ds.units[unit_index].name);
    }
    let q = model.queries();
    let k_eff = cfg.k_pairs.min(m - 1);
    if k_eff == 0 {
        return Err(Error::InvalidArgument("need at least 2 records to form pairs".into()));
    }

    let mut terms = Vec::with_capacity(shared.toxic.len() * k_eff);
    for &i in &shared.toxic {
        let rec = model.record(i)?;
        for j in sample_partners(m, i, cfg.k_pairs, cfg.seed, unit_index) {
            let t = rec.term(q.row(j))?;
            if !t.is_finite() {
                return Err(Error::Diverged {
                    iteration: 0,
                    value: t,
                });
            }
            terms.push(t);
        }
    }

    let (lo, hi) = winsor_bounds(&terms, cfg.winsor_p)?;
    let per_record: Vec<f64> = terms
        .chunks(k_eff)
        .map(|c| c.iter().map(|t| t.clamp(lo, hi)).sum::<f64>() / k_eff as f64)
        .collect();
    let total: f64 = terms.iter().map(|t| t.clamp(lo, hi)).sum();
    let nz = shared.toxic.len();

    let (aie, se) = if cfg.conditional {
        let aie = total / terms.len() as f64;
        (aie, standard_error(&per_record, 0, aie))
    } else {
        let aie = total / (m * k_eff) as f64;
        (aie, standard_error(&per_record, m - nz, aie))
    };

    Ok(AieEstimate {
        unit_index,
        unit_name: ds.units[unit_index].name.clone(),
        mode: cfg.mode,
        aie,
        n_terms: terms.len(),
        winsor_lo: lo,
        winsor_hi: hi,
        nz_count: nz,
        no_positives: false,
        se,
        eb_converged: converged,
    })
}

/// Standard error of the mean of `values` padded with `zeros` zeros.
fn standard_error(values: &[f64], zeros: usize, mean: f64) -> f64 {
    let n = values.len() + zeros;
    if n < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() + zeros as f64 * mean * mean;
    (ss / (n - 1) as f64 / n as f64).sqrt()
}

fn check_unit(ds: &Dataset, unit_index: usize) -> Result<()> {
    if unit_index >= ds.units.len() {
        return Err(Error::UnitOutOfRange {
            index: unit_index,
            count: ds.units.len(),
        });
    }
    Ok(())
}

fn annotate(ds: &Dataset, unit_index: usize, e: Error) -> Error {
    Error::InUnit {
        unit: ds.units[unit_index].name.clone(),
        source: Box::new(e),
    }
}

/// Estimate one unit's AIE in `cfg.mode`.
pub fn estimate_aie(ds: &Dataset, unit_index: usize, cfg: &AieConfig) -> Result<AieEstimate> {
    cfg.validate()?;
    check_unit(ds, unit_index)?;
    let shared = Shared::new(ds, cfg, false)?;
    estimate_unit(ds, &shared, unit_index, cfg)
}

/// [`estimate_aie`] with balancing on the activations alone.
pub fn estimate_aie_normal(ds: &Dataset, unit_index: usize, cfg: &AieConfig) -> Result<AieEstimate> {
    let cfg = AieConfig {
        mode: Mode::Normal,
        ..cfg.clone()
    };
    estimate_aie(ds, unit_index, &cfg)
}

/// One estimate per unit, in dataset order. Topic balancing is solved once
/// and shared by all units.
pub fn estimate_aie_all_units(ds: &Dataset, cfg: &AieConfig) -> Result<Vec<AieEstimate>> {
    cfg.validate()?;
    let shared = Shared::new(ds, cfg, false)?;
    cfg.execution.try_map(ds.units.len(), |u| {
        estimate_unit(ds, &shared, u, cfg).map_err(|e| annotate(ds, u, e))
    })
}

/// Pair term of record `i` against query `q_alt` for one unit; `q_alt` is in
/// the raw coordinates of `ds.queries`.
pub fn term_for_query(
    ds: &Dataset,
    unit_index: usize,
    cfg: &AieConfig,
    i: usize,
    q_alt: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_unit(ds, unit_index)?;
    if i >= ds.len() {
        return Err(Error::InvalidArgument(format!("record {i} out of range")));
    }
    let cfg = AieConfig {
        execution: Execution::Sequential,
        ..cfg.clone()
    };
    let shared = Shared::new(ds, &cfg, true)?;
    let (model, _) = TermModel::new(&shared, ds.units[unit_index].activations.view(), &cfg)?;
    let mean = ds.queries.mean_axis(Axis(0)).expect("non-empty");
    let centered = &q_alt - &mean;
    model.term_for_query(i, centered.view())
}

pub fn localization_from_values(values: &[f64]) -> Result<LocalizationMetrics> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("localization metrics need at least 2 units, got {n}")));
    }
    let mut desc = values.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    // rank offsets are antisymmetric, so pairing mirrored ranks makes the
    // slope of a flat curve exactly zero
    let x_mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for r in 0..n / 2 {
        let dx = (r + 1) as f64 - x_mean;
        sxy += dx * (desc[r] - desc[n - 1 - r]);
        sxx += 2.0 * dx * dx;
    }
    let slope = sxy / sxx;

    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let total: f64 = abs.iter().sum();
    let gini = if total == 0.0 {
        0.0
    } else {
        let weighted: f64 = (0..n / 2)
            .map(|i| (n as f64 - 1.0 - 2.0 * i as f64) * (abs[n - 1 - i] - abs[i]))
            .sum();
        weighted / (n as f64 * total)
    };
    Ok(LocalizationMetrics { slope, gini })
}

pub fn localization_metrics(estimates: &[AieEstimate]) -> Result<LocalizationMetrics> {
    localization_from_values(&estimates.iter().map(|e| e.aie).collect::<Vec<_>>())
}
