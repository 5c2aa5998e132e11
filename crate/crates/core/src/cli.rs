//! `mediaite` command-line front end.
//!
//! Subcommands: `synth`, `preprocess`, `balance`, `aie`, `report`. Exit
//! codes: 0 on success, 2 for invalid input, 3 for numerical failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{concatenate, Array1, Axis};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::balancing::{balance_diagnostics, build_g, default_gamma, eb_solve, BalanceDiagnostics, EbOptions, MomentMatrix};
use crate::error::{Error, Result};
use crate::exec::{with_threads, Execution};
use crate::ingest::{
    load_dataset, read_json, read_report_csv, save_report, write_dataset, write_json, Dataset, Report, ReportRow, Unit,
};
use crate::mediation::{
    estimate_aie_all_units, localization_from_values, topic_features, AieConfig, LocalizationMetrics, Mode,
    DEFAULT_K_PAIRS, DEFAULT_WINSOR_P,
};
use crate::preprocess::{center, kmeans, labels_from_one_hot, one_hot, pca_fit, DEFAULT_K_TOPICS, DEFAULT_REDUCE_DIMS};
use crate::synthetic::{analytic_toxic_rate, generate, oracle_all_units, OracleResult, Preset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

#[derive(Debug, Parser)]
#[command(name = "mediaite", version, about = "Per-unit average indirect effects with confounder adjustment")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its ground-truth oracle.
    Synth(SynthArgs),
    /// Reduce dimensions with PCA and derive topics with k-means.
    Preprocess(PreprocessArgs),
    /// Report balance before and after entropy balancing.
    Balance(BalanceArgs),
    /// Estimate the AIE of every unit.
    Aie(AieArgs),
    /// Merge reports into a rank-aligned curve and localization metrics.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "benchmark")]
    pub preset: Preset,
    /// Confounding strength.
    #[arg(long, default_value_t = 2.0)]
    pub level: f64,
    #[arg(long, env = "MEDIAITE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Record count (preset default when omitted).
    #[arg(long)]
    pub m: Option<usize>,
    /// Monte-Carlo replications per unit for the oracle.
    #[arg(long, default_value_t = 200_000)]
    pub n_mc: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_REDUCE_DIMS)]
    pub reduce_dims: usize,
    #[arg(long, default_value_t = DEFAULT_K_TOPICS)]
    pub k_topics: usize,
    /// Keep the input topics instead of clustering.
    #[arg(long)]
    pub keep_topics: bool,
    #[arg(long, env = "MEDIAITE_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Diagnostics JSON path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub units: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AieArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Report CSV path; the JSON report is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "adjusted")]
    pub mode: Vec<Mode>,
    #[arg(long, value_delimiter = ',')]
    pub units: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_K_PAIRS)]
    pub k_pairs: usize,
    #[arg(long, default_value_t = DEFAULT_WINSOR_P)]
    pub winsor_p: f64,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, env = "MEDIAITE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Average over toxic records only.
    #[arg(long)]
    pub conditional: bool,
    /// Echoed when the dataset has no preprocessing record.
    #[arg(long, default_value_t = DEFAULT_REDUCE_DIMS)]
    pub reduce_dims: usize,
    #[arg(long, default_value_t = DEFAULT_K_TOPICS)]
    pub k_topics: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report CSV files.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Output directory for `curve.csv` and `metrics.json`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    with_threads(threads, move || match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Balance(a) => cmd_balance(&a),
        Command::Aie(a) => cmd_aie(&a),
        Command::Report(a) => cmd_report(&a),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OracleFile {
    pub preset: Preset,
    pub level: f64,
    pub seed: u64,
    pub toxic_rate: f64,
    pub units: Vec<OracleResult>,
    pub spec: crate::synthetic::DgpSpec,
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut spec = a.preset.spec(a.level, a.seed);
    if let Some(m) = a.m {
        spec.m = m;
    }
    let ds = generate(&spec)?;
    create_dir(&a.out)?;
    write_dataset(&a.out, &ds)?;
    let oracle = OracleFile {
        preset: a.preset,
        level: a.level,
        seed: a.seed,
        toxic_rate: analytic_toxic_rate(&spec)?,
        units: oracle_all_units(&spec, a.n_mc, a.seed)?,
        spec,
    };
    write_json(a.out.join("oracle.json"), &oracle)?;
    println!("wrote {} records, {} positives, to {}", ds.len(), ds.positives(), a.out.display());
    for u in &oracle.units {
        println!("{:>10}  oracle AIE {:+.5} (mc se {:.5})", u.unit_name, u.aie_true, u.mc_se);
    }
    Ok(())
}

/// Settings and summaries of a `preprocess` run, stored next to its
/// manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessRecord {
    pub reduce_dims: usize,
    pub k_topics: usize,
    pub keep_topics: bool,
    pub seed: u64,
    pub query_dims: usize,
    pub unit_dims: BTreeMap<String, usize>,
    pub topic_sizes: Vec<usize>,
    pub toxicity_rates: Vec<f64>,
}

pub const PREPROCESS_RECORD: &str = "preprocess.json";

fn reduce(what: &str, data: ndarray::ArrayView2<'_, f64>, target: usize) -> Result<crate::preprocess::PcaModel> {
    let (m, d) = data.dim();
    let k = target.min(d).min(m.saturating_sub(1));
    if k == 0 {
        return Err(Error::InvalidArgument(format!("{what}: too few rows or columns for PCA ({m}x{d})")));
    }
    if k < target {
        log::warn!("{what}: reducing to {k} dimensions instead of {target} ({m}x{d} input)");
    }
    pca_fit(data, k)
}

pub fn format_rates(rates: &[f64]) -> String {
    let parts: Vec<String> = rates.iter().map(|r| format!("{:.1}%", 100.0 * r)).collect();
    format!("[{}]", parts.join(", "))
}

pub fn topic_toxicity(ds: &Dataset) -> Result<(Vec<usize>, Vec<f64>)> {
    let labels = labels_from_one_hot(ds.topics.view())?;
    let k = ds.topics.ncols();
    let mut sizes = vec![0usize; k];
    let mut hits = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        sizes[l] += 1;
        hits[l] += ds.outcomes[i] as usize;
    }
    let rates = sizes
        .iter()
        .zip(&hits)
        .map(|(&n, &h)| if n == 0 { 0.0 } else { h as f64 / n as f64 })
        .collect();
    Ok((sizes, rates))
}

pub fn cmd_preprocess(a: &PreprocessArgs) -> Result<()> {
    if a.reduce_dims == 0 || a.k_topics == 0 {
        return Err(Error::InvalidArgument("reduce_dims and k_topics must be positive".into()));
    }
    let ds = load_dataset(&a.manifest)?;
    let q_model = reduce("queries", ds.queries.view(), a.reduce_dims)?;
    let queries = q_model.transform(ds.queries.view())?;
    let mut unit_models = BTreeMap::new();
    let mut unit_dims = BTreeMap::new();
    let mut units = Vec::with_capacity(ds.units.len());
    for u in &ds.units {
        let model = reduce(&u.name, u.activations.view(), a.reduce_dims)?;
        units.push(Unit {
            name: u.name.clone(),
            activations: model.transform(u.activations.view())?,
        });
        unit_dims.insert(u.name.clone(), model.n_components());
        unit_models.insert(u.name.clone(), model);
    }
    let (topics, km) = if a.keep_topics {
        (ds.topics.clone(), None)
    } else {
        let km = kmeans(queries.view(), a.k_topics, a.seed)?;
        (one_hot(&km.labels, a.k_topics)?, Some(km))
    };
    let out = Dataset::new(queries, topics, ds.outcomes.clone(), units)?;

    create_dir(&a.out)?;
    write_dataset(&a.out, &out)?;
    write_json(a.out.join("pca_queries.json"), &q_model)?;
    write_json(a.out.join("pca_units.json"), &unit_models)?;
    if let Some(km) = &km {
        write_json(a.out.join("kmeans.json"), km)?;
    }
    let (topic_sizes, toxicity_rates) = topic_toxicity(&out).unwrap_or_default();
    let record = PreprocessRecord {
        reduce_dims: a.reduce_dims,
        k_topics: a.k_topics,
        keep_topics: a.keep_topics,
        seed: a.seed,
        query_dims: q_model.n_components(),
        unit_dims,
        topic_sizes,
        toxicity_rates,
    };
    write_json(a.out.join(PREPROCESS_RECORD), &record)?;
    if !record.toxicity_rates.is_empty() {
        println!("toxicity rate per topic: {}", format_rates(&record.toxicity_rates));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub gamma: f64,
    pub converged: bool,
    pub iterations: usize,
    pub before: BalanceDiagnostics,
    pub after: BalanceDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceFile {
    /// `z = x`
    pub topics: BalanceReport,
    /// `z = [n, x]` per unit.
    pub units: BTreeMap<String, BalanceReport>,
}

fn balance_one(g: &MomentMatrix, gamma: Option<f64>) -> Result<BalanceReport> {
    let gamma = gamma.unwrap_or_else(|| default_gamma(g));
    let sol = eb_solve(g, gamma, &EbOptions::default())?;
    let uniform = Array1::from_elem(g.m(), 1.0 / g.m() as f64);
    Ok(BalanceReport {
        gamma,
        converged: sol.converged,
        iterations: sol.iterations,
        before: balance_diagnostics(g, uniform.view()),
        after: balance_diagnostics(g, sol.weights.view()),
    })
}

pub fn cmd_balance(a: &BalanceArgs) -> Result<()> {
    let mut ds = load_dataset(&a.manifest)?;
    if !a.units.is_empty() {
        ds = ds.select_units(&a.units)?;
    }
    let (q, _) = center(ds.queries.view());
    let x = topic_features(ds.topics.view());
    let topics = balance_one(&build_g(q.view(), x.view())?, a.gamma)?;
    let units = Execution::Parallel.try_map(ds.units.len(), |u| {
        let (n, _) = center(ds.units[u].activations.view());
        let z = concatenate(Axis(1), &[n.view(), x.view()]).expect("rows agree");
        balance_one(&build_g(q.view(), z.view())?, a.gamma).map_err(|e| Error::InUnit {
            unit: ds.units[u].name.clone(),
            source: Box::new(e),
        })
    })?;
    let file = BalanceFile {
        topics,
        units: ds.units.iter().map(|u| u.name.clone()).zip(units).collect(),
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(&a.out, &file)?;
    println!(
        "topics: max |moment| {:.3e} -> {:.3e}, ess {:.1}",
        file.topics.before.max_abs_moment, file.topics.after.max_abs_moment, file.topics.after.ess
    );
    for (name, r) in &file.units {
        println!(
            "{name:>10}: max |moment| {:.3e} -> {:.3e}, ess {:.1}",
            r.before.max_abs_moment, r.after.max_abs_moment, r.after.ess
        );
    }
    Ok(())
}

pub fn cmd_aie(a: &AieArgs) -> Result<()> {
    if a.mode.is_empty() {
        return Err(Error::InvalidArgument("no mode requested".into()));
    }
    let mut ds = load_dataset(&a.manifest)?;
    if !a.units.is_empty() {
        ds = ds.select_units(&a.units)?;
    }
    let base_dir = a.manifest.parent().unwrap_or(Path::new("."));
    let record: Option<PreprocessRecord> = read_json(base_dir.join(PREPROCESS_RECORD)).ok();
    let (reduce_dims, k_topics) = record.as_ref().map_or((a.reduce_dims, a.k_topics), |r| (r.reduce_dims, r.k_topics));

    let base = AieConfig {
        mode: a.mode[0],
        k_pairs: a.k_pairs,
        winsor_p: a.winsor_p,
        gamma: a.gamma,
        seed: a.seed,
        reduce_dims,
        k_topics,
        conditional: a.conditional,
        eb: EbOptions::default(),
        execution: Execution::Parallel,
    };
    base.validate()?;

    let mut rows = Vec::new();
    let mut metrics = BTreeMap::new();
    for &mode in &a.mode {
        let cfg = AieConfig { mode, ..base.clone() };
        let estimates = estimate_aie_all_units(&ds, &cfg)?;
        if estimates.len() >= 2 {
            let values: Vec<f64> = estimates.iter().map(|e| e.aie).collect();
            metrics.insert(mode.to_string(), localization_from_values(&values)?);
        }
        for e in estimates {
            if e.no_positives {
                log::warn!("unit {}: no positive outcomes, AIE set to 0", e.unit_name);
            }
            println!("{:>10} {:>10}  AIE {:+.6}  ({} terms)", e.unit_name, mode, e.aie, e.n_terms);
            rows.push(ReportRow {
                unit_index: e.unit_index,
                unit_name: e.unit_name,
                mode,
                aie: e.aie,
                n_terms: e.n_terms,
                winsor_lo: e.winsor_lo,
                winsor_hi: e.winsor_hi,
                seed: a.seed,
            });
        }
    }
    let config = json!({
        "modes": a.mode,
        "k_pairs": base.k_pairs,
        "winsor_p": base.winsor_p,
        "gamma": base.gamma,
        "seed": base.seed,
        "reduce_dims": base.reduce_dims,
        "k_topics": base.k_topics,
        "conditional": base.conditional,
        "eb": base.eb,
        "units": ds.units.iter().map(|u| u.name.clone()).collect::<Vec<_>>(),
        "m": ds.len(),
        "positives": ds.positives(),
    });
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_report(&a.out, &Report { rows, metrics, config })
}

/// Descending AIE values per mode, aligned by rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub modes: Vec<Mode>,
    /// `columns[mode][rank]`
    pub columns: Vec<Vec<f64>>,
}

pub fn build_curve(reports: &[Vec<ReportRow>]) -> Result<Curve> {
    let mut by_mode: BTreeMap<Mode, (usize, Vec<&ReportRow>)> = BTreeMap::new();
    for (src, rows) in reports.iter().enumerate() {
        for r in rows {
            let entry = by_mode.entry(r.mode).or_insert((src, Vec::new()));
            if entry.0 != src {
                return Err(Error::ModeMismatch(format!("mode {} appears in more than one report", r.mode)));
            }
            entry.1.push(r);
        }
    }
    if by_mode.is_empty() {
        return Err(Error::EmptyReport);
    }
    let mut unit_sets = by_mode.values().map(|(_, rows)| {
        let mut names: Vec<&str> = rows.iter().map(|r| r.unit_name.as_str()).collect();
        names.sort_unstable();
        names
    });
    let first = unit_sets.next().expect("non-empty");
    if unit_sets.any(|s| s != first) {
        return Err(Error::ModeMismatch("modes cover different units".into()));
    }
    let modes: Vec<Mode> = by_mode.keys().copied().collect();
    let columns = by_mode
        .values()
        .map(|(_, rows)| {
            let mut v: Vec<f64> = rows.iter().map(|r| r.aie).collect();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        })
        .collect();
    Ok(Curve { modes, columns })
}

pub fn cmd_report(a: &ReportArgs) -> Result<()> {
    let reports = a.reports.iter().map(read_report_csv).collect::<Result<Vec<_>>>()?;
    let curve = build_curve(&reports)?;
    create_dir(&a.out)?;

    let path = a.out.join("curve.csv");
    let csv_err = |e| Error::Csv {
        path: path.clone(),
        source: e,
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    let mut header = vec!["rank".to_string()];
    header.extend(curve.modes.iter().map(|m| m.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for rank in 0..curve.columns[0].len() {
        let mut rec = vec![(rank + 1).to_string()];
        rec.extend(curve.columns.iter().map(|c| c[rank].to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let mut metrics: BTreeMap<String, LocalizationMetrics> = BTreeMap::new();
    for (mode, col) in curve.modes.iter().zip(&curve.columns) {
        if col.len() >= 2 {
            let m = localization_from_values(col)?;
            println!("{mode:>10}: slope {:+.6}  gini {:.4}", m.slope, m.gini);
            metrics.insert(mode.to_string(), m);
        }
    }
    write_json(a.out.join("metrics.json"), &metrics)
}
