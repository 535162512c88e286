//! Multi-repetition experiment driver.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::SoftImpute;
use crate::harness::aggregate::{aggregate, write_summary};
use crate::harness::config::ExperimentConfig;
use crate::harness::metrics::{rows_from_trace, write_rows, MetricsRow};
use crate::model::{generate_ground_truth_with, GroundTruth};
use crate::rng::{derive_seed, stream, Lane};
use crate::strategy::{run, Event, PNorm, RunTrace};

/// Number of budget buckets in `summary.csv`.
pub const SUMMARY_BUCKETS: usize = 100;

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub rep: usize,
    pub seed: u64,
    pub strategy: String,
    pub p: Option<PNorm>,
    pub trace: RunTrace,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    /// Ordered by (rep, strategy as configured, event, k).
    pub rows: Vec<MetricsRow>,
    pub runs: Vec<RunRecord>,
}

/// Seed from which everything in repetition `rep` is derived.
pub fn rep_seed(master: u64, rep: usize) -> u64 {
    derive_seed(master, rep as u64, Lane::Truth, u64::MAX)
}

pub fn ground_truths(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<GroundTruth>> {
    Ok(cfg
        .specs()?
        .into_iter()
        .map(|spec| {
            let s = derive_seed(seed, 0, Lane::Truth, spec.index as u64);
            generate_ground_truth_with(spec, s, cfg.clip_truth_to_bound)
        })
        .collect())
}

fn run_rep(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<RunRecord>> {
    let seed = rep_seed(cfg.seed, rep);
    let truths = ground_truths(cfg, seed)?;
    let run_cfg = cfg.run_config();
    let estimator = SoftImpute::new(cfg.estimator);
    cfg.strategies
        .par_iter()
        .enumerate()
        .map(|(si, strategy)| {
            let streams = (0..truths.len())
                .map(|k| stream(seed, 0, Lane::Sampling { strategy: si as u32 }, k as u64))
                .collect();
            let outcome = run(&truths, strategy, &run_cfg, &estimator, streams)?;
            Ok(RunRecord {
                rep,
                seed,
                strategy: strategy.label(),
                p: strategy.p(),
                trace: outcome.trace,
            })
        })
        .collect()
}

/// Runs every configured strategy in every repetition. Output order does not
/// depend on `threads`.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let per_rep: Vec<Vec<RunRecord>> = pool.install(|| {
        (0..cfg.reps)
            .into_par_iter()
            .map(|rep| run_rep(cfg, rep))
            .collect::<Result<_>>()
    })?;

    let runs: Vec<RunRecord> = per_rep.into_iter().flatten().collect();
    let rows = runs
        .iter()
        .flat_map(|r| rows_from_trace(&cfg.id, r.p, r.rep, r.seed, &r.trace))
        .collect();
    Ok(ExperimentOutput {
        config: cfg.clone(),
        rows,
        runs,
    })
}

#[derive(Serialize)]
struct EventRecord {
    t: usize,
    k: usize,
    batch: usize,
    initialization: bool,
    dataset_size: usize,
    pairs: usize,
    estimate: Option<f64>,
    candidate_band: Option<f64>,
    accepted: bool,
    /// `null` stands for an infinite band.
    bands: Vec<Option<f64>>,
    spent: Vec<usize>,
    true_errors: Vec<f64>,
    loss_p1: f64,
    loss_pinf: f64,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    rep: usize,
    seed: u64,
    strategy: &'a str,
    p: Option<PNorm>,
    budget: usize,
    dims: &'a [usize],
    truth_hashes: Vec<String>,
    capped_out: bool,
    events: Vec<EventRecord>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn event_record(e: &Event) -> EventRecord {
    EventRecord {
        t: e.t,
        k: e.chosen + 1,
        batch: e.batch,
        initialization: e.initialization,
        dataset_size: e.dataset_size,
        pairs: e.pairs,
        estimate: finite(e.estimate),
        candidate_band: finite(e.candidate_band),
        accepted: e.accepted,
        bands: e.bands.iter().copied().map(finite).collect(),
        spent: e.spent.clone(),
        true_errors: e.true_errors.clone(),
        loss_p1: e.loss_p1,
        loss_pinf: e.loss_pinf,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.into(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.into(),
        source,
    }
}

/// Writes `metrics.csv`, `summary.csv`, `config.echo.json` and
/// `traces.jsonl` into `dir`.
pub fn write_outputs(dir: &Path, output: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let path = dir.join("metrics.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_rows(BufWriter::new(file), &output.rows).map_err(csv_err(&path))?;

    let path = dir.join("summary.csv");
    let summary = aggregate(&output.rows, SUMMARY_BUCKETS)?;
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_summary(BufWriter::new(file), &summary).map_err(csv_err(&path))?;

    let path = dir.join("config.echo.json");
    fs::write(&path, output.config.to_json() + "\n").map_err(io_err(&path))?;

    let path = dir.join("traces.jsonl");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    for r in &output.runs {
        let record = TraceRecord {
            rep: r.rep,
            seed: r.seed,
            strategy: &r.strategy,
            p: r.p,
            budget: r.trace.budget,
            dims: &r.trace.dims,
            truth_hashes: r.trace.truth_hashes.iter().map(|h| format!("{h:016x}")).collect(),
            capped_out: r.trace.capped_out,
            events: r.trace.events.iter().map(event_record).collect(),
        };
        let line = serde_json::to_string(&record).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        writeln!(w, "{line}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(())
}
