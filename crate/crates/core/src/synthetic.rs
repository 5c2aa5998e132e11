//! Confounded mediation data with known ground truth.
//!
//! Records are drawn from the DAG `x → q`, `x → n`, `q → n`, `x → y`,
//! `q → y`, `n → y` with Gaussian noise and a thresholded latent outcome.
//! The true AIE of a unit is available two ways: a Monte-Carlo simulation
//! of the nested counterfactual with shared noise, and an exact sum over
//! topic triples of Gaussian threshold probabilities.

use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::exec::{mix_seed, Execution};
use crate::ingest::{Dataset, Unit};
use crate::preprocess::one_hot;

/// Replications per Monte-Carlo chunk; chunks are seeded independently so
/// results do not depend on the worker count.
const MC_CHUNK: usize = 8192;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSpec {
    pub name: String,
    /// `d_n x d_q`, query → activation.
    pub w: Array2<f64>,
    /// `d_n x k`, topic → activation.
    pub v: Array2<f64>,
    pub sigma_n: f64,
    /// Activation → latent outcome.
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub m: usize,
    pub k_topics: usize,
    pub d_q: usize,
    pub d_n: usize,
    pub topic_probs: Vec<f64>,
    /// `d_q x k` topic means of the query.
    pub a: Array2<f64>,
    pub sigma_q: f64,
    pub units: Vec<UnitSpec>,
    pub alpha: Array1<f64>,
    pub c: Array1<f64>,
    pub tau: f64,
    pub sigma_y: f64,
    pub seed: u64,
}

fn shape_err(what: &str, got: (usize, usize), want: (usize, usize)) -> Error {
    Error::InvalidArgument(format!("{what} is {}x{}, expected {}x{}", got.0, got.1, want.0, want.1))
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        let (k, d_q, d_n) = (self.k_topics, self.d_q, self.d_n);
        if self.m == 0 || k == 0 || d_q == 0 || d_n == 0 {
            return Err(Error::InvalidArgument("m, k_topics, d_q and d_n must be positive".into()));
        }
        if self.topic_probs.len() != k
            || self.topic_probs.iter().any(|&p| !(p >= 0.0))
            || (self.topic_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument(format!(
                "topic_probs must be {k} nonnegative values summing to 1"
            )));
        }
        if self.a.dim() != (d_q, k) {
            return Err(shape_err("A", self.a.dim(), (d_q, k)));
        }
        if self.alpha.len() != d_q || self.c.len() != k {
            return Err(Error::InvalidArgument("alpha must have d_q entries and c must have k".into()));
        }
        if !(self.sigma_q > 0.0 && self.sigma_y > 0.0) {
            return Err(Error::InvalidArgument("sigma_q and sigma_y must be positive".into()));
        }
        if self.units.is_empty() {
            return Err(Error::NoUnits);
        }
        for u in &self.units {
            if u.w.dim() != (d_n, d_q) {
                return Err(shape_err(&format!("W of {}", u.name), u.w.dim(), (d_n, d_q)));
            }
            if u.v.dim() != (d_n, k) {
                return Err(shape_err(&format!("V of {}", u.name), u.v.dim(), (d_n, k)));
            }
            if u.beta.len() != d_n || !(u.sigma_n > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "unit {}: beta must have d_n entries and sigma_n must be positive",
                    u.name
                )));
            }
        }
        Ok(())
    }

    pub fn unit_index(&self, name: &str) -> Option<usize> {
        self.units.iter().position(|u| u.name == name)
    }

    fn topic_sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(&self.topic_probs).expect("validated probabilities")
    }
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| StandardNormal.sample(rng))
}

/// Draw the dataset. Per record: topic, query noise, each unit's noise in
/// order, then the outcome noise.
pub fn generate(spec: &DgpSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let topics_dist = spec.topic_sampler();
    let m = spec.m;
    let mut labels = Vec::with_capacity(m);
    let mut q = Array2::zeros((m, spec.d_q));
    let mut acts: Vec<Array2<f64>> = spec.units.iter().map(|_| Array2::zeros((m, spec.d_n))).collect();
    let mut outcomes = Vec::with_capacity(m);
    for i in 0..m {
        let t = topics_dist.sample(&mut rng);
        let qi = &spec.a.column(t) + &(normals(&mut rng, spec.d_q) * spec.sigma_q);
        let mut latent = spec.alpha.dot(&qi) + spec.c[t];
        for (u, unit) in spec.units.iter().enumerate() {
            let n = unit.w.dot(&qi) + unit.v.column(t) + normals(&mut rng, spec.d_n) * unit.sigma_n;
            latent += unit.beta.dot(&n);
            acts[u].row_mut(i).assign(&n);
        }
        let e: f64 = StandardNormal.sample(&mut rng);
        latent += spec.sigma_y * e;
        q.row_mut(i).assign(&qi);
        labels.push(t);
        outcomes.push(latent > spec.tau);
    }
    let units = spec
        .units
        .iter()
        .zip(acts)
        .map(|(u, activations)| Unit {
            name: u.name.clone(),
            activations,
        })
        .collect();
    Dataset::new(q, one_hot(&labels, spec.k_topics)?, outcomes, units)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub unit_index: usize,
    pub unit_name: String,
    pub aie_true: f64,
    pub mc_se: f64,
    pub n_mc: usize,
    /// Exact value from the topic-triple sum.
    pub aie_analytic: f64,
}

/// Mean and standard error from running sums.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct McSummary {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    sum: f64,
    sum_sq: f64,
    n: usize,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.sum_sq += v * v;
        self.n += 1;
    }

    fn merge(self, o: Moments) -> Moments {
        Moments {
            sum: self.sum + o.sum,
            sum_sq: self.sum_sq + o.sum_sq,
            n: self.n + o.n,
        }
    }

    fn summary(self) -> McSummary {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 {
            ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        McSummary {
            mean,
            se: (var / n).sqrt(),
            n: self.n,
        }
    }
}

/// One draw of everything exogenous: two independent queries with their own
/// topics, an independent topic for the outcome and activation paths, and
/// the noise shared by all counterfactual arms.
struct Draw {
    q_i: Array1<f64>,
    q_j: Array1<f64>,
    t: usize,
    unit_noise: Vec<Array1<f64>>,
    y_noise: f64,
}

impl Draw {
    fn sample(spec: &DgpSpec, topics: &WeightedIndex<f64>, rng: &mut ChaCha8Rng) -> Self {
        let ti = topics.sample(rng);
        let tj = topics.sample(rng);
        let t = topics.sample(rng);
        let q_i = &spec.a.column(ti) + &(normals(rng, spec.d_q) * spec.sigma_q);
        let q_j = &spec.a.column(tj) + &(normals(rng, spec.d_q) * spec.sigma_q);
        let unit_noise = spec.units.iter().map(|u| normals(rng, spec.d_n) * u.sigma_n).collect();
        let y_noise = StandardNormal.sample(rng);
        Self {
            q_i,
            q_j,
            t,
            unit_noise,
            y_noise,
        }
    }

    /// `y{q_direct, n_u{q_med}}`: unit `u` reads `q_med`, everything else
    /// reads `q_direct`.
    fn outcome(&self, spec: &DgpSpec, q_direct: &Array1<f64>, u: usize, q_med: &Array1<f64>) -> f64 {
        let mut latent = spec.alpha.dot(q_direct) + spec.c[self.t] + spec.sigma_y * self.y_noise;
        for (v, unit) in spec.units.iter().enumerate() {
            let q = if v == u { q_med } else { q_direct };
            let n = unit.w.dot(q) + unit.v.column(self.t) + &self.unit_noise[v];
            latent += unit.beta.dot(&n);
        }
        if latent > spec.tau {
            1.0
        } else {
            0.0
        }
    }
}

fn check_unit(spec: &DgpSpec, unit_index: usize) -> Result<()> {
    if unit_index >= spec.units.len() {
        return Err(Error::UnitOutOfRange {
            index: unit_index,
            count: spec.units.len(),
        });
    }
    Ok(())
}

fn simulate<F>(spec: &DgpSpec, n_mc: usize, seed: u64, stream: &[u64], exec: Execution, f: F) -> Result<McSummary>
where
    F: Fn(&Draw) -> f64 + Sync + Send,
{
    spec.validate()?;
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    let topics = spec.topic_sampler();
    let chunks = n_mc.div_ceil(MC_CHUNK);
    let parts = exec.map(chunks, |c| {
        let mut key = vec![seed];
        key.extend_from_slice(stream);
        key.push(c as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&key));
        let len = MC_CHUNK.min(n_mc - c * MC_CHUNK);
        let mut mom = Moments::default();
        for _ in 0..len {
            mom.push(f(&Draw::sample(spec, &topics, &mut rng)));
        }
        mom
    });
    Ok(parts.into_iter().fold(Moments::default(), Moments::merge).summary())
}

/// Monte-Carlo `E[y{q_i, n_u{q_j}} − y{q_i, n_u{q_i}}]` over independent
/// query pairs.
pub fn oracle_aie(spec: &DgpSpec, unit_index: usize, n_mc: usize, seed: u64) -> Result<OracleResult> {
    oracle_aie_with(spec, unit_index, n_mc, seed, Execution::default())
}

pub fn oracle_aie_with(
    spec: &DgpSpec,
    unit_index: usize,
    n_mc: usize,
    seed: u64,
    exec: Execution,
) -> Result<OracleResult> {
    check_unit(spec, unit_index)?;
    let s = simulate(spec, n_mc, seed, &[unit_index as u64], exec, |d| {
        d.outcome(spec, &d.q_i, unit_index, &d.q_j) - d.outcome(spec, &d.q_i, unit_index, &d.q_i)
    })?;
    Ok(OracleResult {
        unit_index,
        unit_name: spec.units[unit_index].name.clone(),
        aie_true: s.mean,
        mc_se: s.se,
        n_mc,
        aie_analytic: analytic_aie(spec, unit_index)?,
    })
}

pub fn oracle_all_units(spec: &DgpSpec, n_mc: usize, seed: u64) -> Result<Vec<OracleResult>> {
    (0..spec.units.len()).map(|u| oracle_aie(spec, u, n_mc, seed)).collect()
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Gaussian pieces of the latent outcome given the topic `t` that drives
/// the activation and outcome paths: the part not depending on the query
/// and its noise variance.
fn latent_offset(spec: &DgpSpec, t: usize) -> (f64, f64) {
    let mut mean = spec.c[t];
    let mut var = spec.sigma_y * spec.sigma_y;
    for u in &spec.units {
        mean += u.beta.dot(&u.v.column(t));
        var += u.sigma_n * u.sigma_n * u.beta.dot(&u.beta);
    }
    (mean, var)
}

/// `P(a·q_i + b·q_j + offset + noise > τ)` with `q_i`, `q_j` drawn from
/// topics `ti`, `tj`.
fn threshold_prob(spec: &DgpSpec, a: &Array1<f64>, b: &Array1<f64>, ti: usize, tj: usize, offset: (f64, f64)) -> f64 {
    let mean = offset.0 + a.dot(&spec.a.column(ti)) + b.dot(&spec.a.column(tj));
    let var = offset.1 + spec.sigma_q * spec.sigma_q * (a.dot(a) + b.dot(b));
    std_normal().sf((spec.tau - mean) / var.sqrt())
}

/// Exact AIE: sum over topic triples of Gaussian threshold probabilities.
pub fn analytic_aie(spec: &DgpSpec, unit_index: usize) -> Result<f64> {
    spec.validate()?;
    check_unit(spec, unit_index)?;
    let mut direct = spec.alpha.clone();
    for (v, unit) in spec.units.iter().enumerate() {
        if v != unit_index {
            direct = direct + unit.w.t().dot(&unit.beta);
        }
    }
    let u = &spec.units[unit_index];
    let med = u.w.t().dot(&u.beta);
    let both = &direct + &med;
    let zero = Array1::zeros(spec.d_q);
    let p = &spec.topic_probs;
    let k = spec.k_topics;
    let mut total = 0.0;
    for t in 0..k {
        let offset = latent_offset(spec, t);
        for ti in 0..k {
            for tj in 0..k {
                let w = p[t] * p[ti] * p[tj];
                if w == 0.0 {
                    continue;
                }
                let switched = threshold_prob(spec, &direct, &med, ti, tj, offset);
                let base = threshold_prob(spec, &both, &zero, ti, tj, offset);
                total += w * (switched - base);
            }
        }
    }
    Ok(total)
}

/// Observational `P(y = 1 | topic)` for every topic.
pub fn analytic_toxic_rates(spec: &DgpSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut coef = spec.alpha.clone();
    for u in &spec.units {
        coef = coef + u.w.t().dot(&u.beta);
    }
    let zero = Array1::zeros(spec.d_q);
    Ok((0..spec.k_topics)
        .map(|t| threshold_prob(spec, &coef, &zero, t, t, latent_offset(spec, t)))
        .collect())
}

pub fn analytic_toxic_rate(spec: &DgpSpec) -> Result<f64> {
    Ok(analytic_toxic_rates(spec)?
        .iter()
        .zip(&spec.topic_probs)
        .map(|(r, p)| r * p)
        .sum())
}

/// Total, direct and indirect effects of switching `q_i → q_j` with unit
/// `u` as the mediator, each from its own Monte-Carlo stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    /// `y{q_j, n{q_j}} − y{q_i, n{q_i}}`
    pub ate: McSummary,
    /// `y{q_j, n{q_j}} − y{q_i, n{q_j}}`
    pub nde: McSummary,
    /// `y{q_i, n{q_j}} − y{q_i, n{q_i}}`
    pub nie: McSummary,
}

pub fn decomposition(spec: &DgpSpec, unit_index: usize, n_mc: usize, seed: u64) -> Result<Decomposition> {
    check_unit(spec, unit_index)?;
    let u = unit_index;
    let exec = Execution::default();
    let ate = simulate(spec, n_mc, seed, &[u as u64, 1], exec, |d| {
        d.outcome(spec, &d.q_j, u, &d.q_j) - d.outcome(spec, &d.q_i, u, &d.q_i)
    })?;
    let nde = simulate(spec, n_mc, seed, &[u as u64, 2], exec, |d| {
        d.outcome(spec, &d.q_j, u, &d.q_j) - d.outcome(spec, &d.q_i, u, &d.q_j)
    })?;
    let nie = simulate(spec, n_mc, seed, &[u as u64, 3], exec, |d| {
        d.outcome(spec, &d.q_i, u, &d.q_j) - d.outcome(spec, &d.q_i, u, &d.q_i)
    })?;
    Ok(Decomposition { ate, nde, nie })
}

// Presets ------------------------------------------------------------------

pub const BENCHMARK_M: usize = 2000;
pub const BENCHMARK_TOPIC_PROBS: [f64; 3] = [0.4, 0.35, 0.25];
const D: usize = 5;
/// Query → activation gain of a mediating unit along its read direction.
const MEDIATOR_GAIN: f64 = 0.5;
/// Activation → outcome weight of a mediating unit.
const MEDIATOR_BETA: f64 = 2.0;
/// Direct query → outcome weight, per unit of mediated weight. Opposite in
/// sign and three times as strong as the mediated path.
const DIRECT_RATIO: f64 = -3.0;
const TAU: f64 = 4.0;
const SIGMA_Y: f64 = 0.5;

fn topic_means() -> Array2<f64> {
    let mut a = Array2::zeros((D, 3));
    a.row_mut(0).assign(&ndarray::arr1(&[1.0, -1.0, 0.5]));
    a.row_mut(1).assign(&ndarray::arr1(&[0.5, 0.5, -1.0]));
    a
}

fn mediator(name: String, dim: usize, gain: f64, beta: f64) -> UnitSpec {
    let mut w = Array2::zeros((D, D));
    w[[0, dim]] = gain;
    let mut b = Array1::zeros(D);
    b[0] = beta;
    UnitSpec {
        name,
        w,
        v: Array2::zeros((D, 3)),
        sigma_n: 1.0,
        beta: b,
    }
}

fn confounder(name: String, strength: f64) -> UnitSpec {
    let mut v = Array2::zeros((D, 3));
    v.row_mut(0).assign(&ndarray::arr1(&[strength, -strength, 0.0]));
    UnitSpec {
        name,
        w: Array2::zeros((D, D)),
        v,
        sigma_n: 1.0,
        beta: Array1::zeros(D),
    }
}

fn dead(name: String) -> UnitSpec {
    UnitSpec {
        name,
        w: Array2::zeros((D, D)),
        v: Array2::zeros((D, 3)),
        sigma_n: 1.0,
        beta: Array1::zeros(D),
    }
}

fn unit_name(i: usize) -> String {
    format!("mlp_{i:02}")
}

fn template(units: Vec<UnitSpec>, alpha: Array1<f64>, level: f64, seed: u64) -> DgpSpec {
    DgpSpec {
        m: BENCHMARK_M,
        k_topics: 3,
        d_q: D,
        d_n: D,
        topic_probs: BENCHMARK_TOPIC_PROBS.to_vec(),
        a: topic_means(),
        sigma_q: 1.0,
        units,
        alpha,
        c: ndarray::arr1(&[0.5 * level, -0.5 * level, 0.0]),
        tau: TAU,
        sigma_y: SIGMA_Y,
        seed,
    }
}

/// Three units: a true mediator (`mlp_00`), a pure confounder whose
/// activations follow the topic (`mlp_01`) and a dead unit (`mlp_02`).
/// `level` scales every topic → activation and topic → outcome edge.
pub fn benchmark(level: f64, seed: u64) -> DgpSpec {
    let mut alpha = Array1::zeros(D);
    alpha[0] = DIRECT_RATIO * MEDIATOR_GAIN * MEDIATOR_BETA;
    template(
        vec![
            mediator(unit_name(0), 0, MEDIATOR_GAIN, MEDIATOR_BETA),
            confounder(unit_name(1), level),
            dead(unit_name(2)),
        ],
        alpha,
        level,
        seed,
    )
}

/// Four weaker mediators reading separate query directions plus a strongly
/// topic-driven unit (`mlp_04`). Without adjustment that unit shows up as
/// a spurious peak in the per-unit curve.
pub fn spurious_peak(level: f64, seed: u64) -> DgpSpec {
    let beta = 0.25 * MEDIATOR_BETA;
    let mut units: Vec<UnitSpec> = (0..4).map(|d| mediator(unit_name(d), d, MEDIATOR_GAIN, beta)).collect();
    units.push(confounder(unit_name(4), 2.0 * level));
    let mut alpha = Array1::zeros(D);
    alpha.slice_mut(ndarray::s![..4]).fill(DIRECT_RATIO * MEDIATOR_GAIN * beta);
    let mut spec = template(units, alpha, level, seed);
    spec.tau = 2.0;
    spec
}

/// `n_units` units cycling through mediators of decreasing strength,
/// confounders and dead units.
pub fn many_units(n_units: usize, level: f64, seed: u64) -> DgpSpec {
    let units = (0..n_units)
        .map(|i| match i % 4 {
            0 => mediator(unit_name(i), 0, MEDIATOR_GAIN / (1.0 + (i / 4) as f64), MEDIATOR_BETA),
            1 => confounder(unit_name(i), level),
            _ => dead(unit_name(i)),
        })
        .collect();
    let mut alpha = Array1::zeros(D);
    alpha[0] = DIRECT_RATIO * MEDIATOR_GAIN * MEDIATOR_BETA;
    template(units, alpha, level, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Benchmark,
    SpuriousPeak,
    ManyUnits,
}

impl Preset {
    pub fn spec(self, level: f64, seed: u64) -> DgpSpec {
        match self {
            Preset::Benchmark => benchmark(level, seed),
            Preset::SpuriousPeak => spurious_peak(level, seed),
            Preset::ManyUnits => many_units(33, level, seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkCase {
    pub level: f64,
    pub spec: DgpSpec,
    pub dataset: Dataset,
    pub oracle: Vec<OracleResult>,
}

/// One benchmark dataset and its per-unit oracle for every level.
pub fn make_benchmark_suite(levels: &[f64], seed: u64, n_mc: usize) -> Result<Vec<BenchmarkCase>> {
    levels
        .iter()
        .map(|&level| {
            if !level.is_finite() {
                return Err(Error::InvalidArgument(format!("confounding level {level} is not finite")));
            }
            let spec = benchmark(level, seed);
            let dataset = generate(&spec)?;
            let oracle = oracle_all_units(&spec, n_mc, mix_seed(&[seed, 0x0AC1E]))?;
            Ok(BenchmarkCase {
                level,
                spec,
                dataset,
                oracle,
            })
        })
        .collect()
}
