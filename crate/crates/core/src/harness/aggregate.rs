//! Loss-versus-budget summaries across repetitions.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::harness::metrics::{format_float, MetricsRow};
use crate::strategy::PNorm;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Stats {
    /// Quartiles use linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Self {
        assert!(!values.is_empty());
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        Self {
            mean,
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub experiment: String,
    pub strategy: String,
    pub p: Option<PNorm>,
    /// Right edge of the budget bucket.
    pub t: usize,
    pub reps: usize,
    pub loss_p1: Stats,
    pub loss_pinf: Stats,
}

pub const SUMMARY_HEADER: [&str; 13] = [
    "experiment",
    "strategy",
    "p",
    "t",
    "reps",
    "loss_p1_mean",
    "loss_p1_median",
    "loss_p1_q1",
    "loss_p1_q3",
    "loss_pinf_mean",
    "loss_pinf_median",
    "loss_pinf_q1",
    "loss_pinf_q3",
];

/// Splits `[0, max t]` into `buckets` equal intervals. For each (strategy,
/// bucket) every repetition contributes the losses of its latest event at or
/// before the bucket's right edge; repetitions with no event yet are left out.
pub fn aggregate(rows: &[MetricsRow], buckets: usize) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset("no metrics rows to aggregate"));
    }
    let buckets = buckets.max(1);
    let horizon = rows.iter().map(|r| r.t).max().unwrap_or(0).max(1);

    // (experiment, strategy) -> rep -> time-ordered (t, loss_p1, loss_pinf)
    type Curve = Vec<(usize, f64, f64)>;
    type Curves = (Option<PNorm>, BTreeMap<usize, Curve>);
    let mut groups: BTreeMap<(String, String), Curves> = BTreeMap::new();
    for r in rows {
        let group = groups
            .entry((r.experiment.clone(), r.strategy.clone()))
            .or_insert_with(|| (r.p, BTreeMap::new()));
        let curve = group.1.entry(r.rep).or_default();
        if curve.last().is_none_or(|&(t, _, _)| t != r.t) {
            curve.push((r.t, r.loss_p1, r.loss_pinf));
        }
    }

    let mut out = Vec::new();
    for ((experiment, strategy), (p, reps)) in groups {
        for b in 1..=buckets {
            let edge = (horizon * b).div_ceil(buckets);
            let mut l1 = Vec::new();
            let mut linf = Vec::new();
            for curve in reps.values() {
                let idx = curve.partition_point(|&(t, _, _)| t <= edge);
                if idx > 0 {
                    l1.push(curve[idx - 1].1);
                    linf.push(curve[idx - 1].2);
                }
            }
            if l1.is_empty() {
                continue;
            }
            out.push(SummaryRow {
                experiment: experiment.clone(),
                strategy: strategy.clone(),
                p,
                t: edge,
                reps: l1.len(),
                loss_p1: Stats::of(&l1),
                loss_pinf: Stats::of(&linf),
            });
        }
    }
    Ok(out)
}

pub fn write_summary<W: Write>(writer: W, rows: &[SummaryRow]) -> std::result::Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let mut record = vec![
            r.experiment.clone(),
            r.strategy.clone(),
            r.p.map(|p| p.to_string()).unwrap_or_default(),
            r.t.to_string(),
            r.reps.to_string(),
        ];
        for s in [r.loss_p1, r.loss_pinf] {
            record.extend([s.mean, s.median, s.q1, s.q3].map(format_float));
        }
        out.write_record(record)?;
    }
    out.flush()?;
    Ok(())
}
