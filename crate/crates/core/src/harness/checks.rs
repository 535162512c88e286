//! Invariant checks over traces and metrics, and the suite run by
//! `amcsim check`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};

use crate::error_estimation::SplitMode;
use crate::estimation::EstimatorConfig;
use crate::harness::config::ExperimentConfig;
use crate::harness::metrics::{read_rows, to_csv_string, MetricsRow};
use crate::harness::runner::{run_experiment, ExperimentOutput};
use crate::model::{MatrixSpec, NoiseModel};
use crate::rng::StreamRng;
use crate::strategy::{loss_from_errors, select_index, ArmState, LossSpec, PNorm, RunTrace, Schedule, StrategyKind};

pub type CheckResult = std::result::Result<(), String>;

/// Every arm's band is non-increasing over the run.
pub fn check_band_monotone(trace: &RunTrace) -> CheckResult {
    for w in trace.events.windows(2) {
        for (k, (before, after)) in w[0].bands.iter().zip(&w[1].bands).enumerate() {
            if after > before {
                return Err(format!("t={}: B_{} rose from {before} to {after}", w[1].t, k + 1));
            }
        }
    }
    Ok(())
}

/// Stored estimates change only for the chosen arm, at accepted events whose
/// band did not exceed the previous one.
pub fn check_update_guard(trace: &RunTrace) -> CheckResult {
    let k = trace.dims.len();
    let mut prev_hashes: Option<&[u64]> = None;
    let mut prev_bands = vec![f64::INFINITY; k];
    for e in &trace.events {
        for arm in 0..k {
            let changed = prev_hashes.is_some_and(|h| h[arm] != e.estimate_hashes[arm]);
            let band_moved = e.bands[arm] != prev_bands[arm];
            if (changed || band_moved) && arm != e.chosen {
                return Err(format!("t={}: arm {} changed without being chosen", e.t, arm + 1));
            }
            if changed && !e.accepted {
                return Err(format!(
                    "t={}: estimate {} replaced by a rejected candidate",
                    e.t,
                    arm + 1
                ));
            }
        }
        if e.accepted {
            let before = prev_bands[e.chosen];
            if before != f64::INFINITY && (e.candidate_band.is_nan() || e.candidate_band > before) {
                return Err(format!(
                    "t={}: accepted band {} above previous {before}",
                    e.t, e.candidate_band
                ));
            }
        } else if e.bands[e.chosen] != prev_bands[e.chosen] {
            return Err(format!("t={}: band moved on a rejected candidate", e.t));
        }
        prev_hashes = Some(&e.estimate_hashes);
        prev_bands.clone_from(&e.bands);
    }
    Ok(())
}

/// Under the doubling schedule every repeat pick doubles the arm's count,
/// except a batch truncated by the budget or the cap.
pub fn check_doubling_law(trace: &RunTrace) -> CheckResult {
    let mut spent = vec![0usize; trace.dims.len()];
    let last = trace.events.len().saturating_sub(1);
    for (i, e) in trace.events.iter().enumerate() {
        let m = e.chosen;
        let (before, after) = (spent[m], e.spent[m]);
        let cap = trace.dims[m] * trace.dims[m];
        if !e.initialization && after != 2 * before {
            let truncated = after < 2 * before && (i == last || after == cap);
            if !truncated {
                return Err(format!("t={}: arm {} went from {before} to {after}", e.t, m + 1));
            }
        }
        spent.clone_from(&e.spent);
    }
    Ok(())
}

/// `sum_k T_k` equals the spent budget at every event and never exceeds it.
pub fn check_budget(trace: &RunTrace) -> CheckResult {
    let mut max_batch = 0;
    for e in &trace.events {
        let total: usize = e.spent.iter().sum();
        if total != e.t {
            return Err(format!("t={}: sum of T_k is {total}", e.t));
        }
        for (k, (&s, &d)) in e.spent.iter().zip(&trace.dims).enumerate() {
            if s > d * d {
                return Err(format!("t={}: T_{} = {s} exceeds its cap", e.t, k + 1));
            }
        }
        max_batch = max_batch.max(e.batch);
    }
    let end = trace.events.last().map_or(0, |e| e.t);
    if end > trace.budget {
        return Err(format!("spent {end} over budget {}", trace.budget));
    }
    if !trace.capped_out && end + max_batch < trace.budget {
        return Err(format!("spent only {end} of {}", trace.budget));
    }
    Ok(())
}

pub fn check_time_monotone(trace: &RunTrace) -> CheckResult {
    for w in trace.events.windows(2) {
        if w[1].t <= w[0].t {
            return Err(format!("t went from {} to {}", w[0].t, w[1].t));
        }
    }
    Ok(())
}

/// Losses in each row match the loss recomputed from the rows' per-matrix
/// errors.
pub fn check_row_losses(rows: &[MetricsRow], dims: &[usize], weights: &BTreeMap<String, LossSpec>) -> CheckResult {
    let mut events: BTreeMap<(usize, &str, usize), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        events.entry((r.rep, &r.strategy, r.t)).or_default().push(r);
    }
    for ((rep, strategy, t), group) in events {
        let errors: Vec<f64> = group
            .iter()
            .map(|r| r.true_err * (dims[r.k - 1] * dims[r.k - 1]) as f64)
            .collect();
        let base = weights
            .get(strategy)
            .cloned()
            .unwrap_or(LossSpec::unweighted(PNorm::Infinite));
        let l1 = loss_from_errors(
            &errors,
            &LossSpec {
                p: PNorm::Finite(1.0),
                ..base.clone()
            },
        );
        let linf = loss_from_errors(
            &errors,
            &LossSpec {
                p: PNorm::Infinite,
                ..base
            },
        );
        for r in group {
            let tol = 1e-12 * r.loss_p1.abs().max(1.0);
            if (r.loss_p1 - l1).abs() > tol || (r.loss_pinf - linf).abs() > 1e-12 * r.loss_pinf.abs().max(1.0) {
                return Err(format!(
                    "rep {rep} {strategy} t={t}: recorded losses disagree with errors"
                ));
            }
        }
    }
    Ok(())
}

/// All strategies of one repetition saw the same ground truths.
pub fn check_paired_generation(output: &ExperimentOutput) -> CheckResult {
    let mut by_rep: BTreeMap<usize, &[u64]> = BTreeMap::new();
    for r in &output.runs {
        match by_rep.get(&r.rep) {
            Some(h) if *h != r.trace.truth_hashes.as_slice() => {
                return Err(format!("rep {}: {} saw different matrices", r.rep, r.strategy));
            }
            Some(_) => {}
            None => {
                by_rep.insert(r.rep, &r.trace.truth_hashes);
            }
        }
    }
    Ok(())
}

pub fn check_selection_scale_invariance(trials: usize, seed: u64) -> CheckResult {
    let mut rng = StreamRng::seed_from_u64(seed);
    for trial in 0..trials {
        let k = rng.random_range(1..6);
        let states: Vec<ArmState> = (0..k)
            .map(|i| {
                let d = rng.random_range(5..40);
                let mut s = ArmState::new(MatrixSpec::new(i, d, 1, 1.0).expect("valid spec"));
                s.band = rng.random_range(-0.5..3.0);
                s.spent = rng.random_range(1..d * d);
                s
            })
            .collect();
        let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..4.0)).collect();
        let c = rng.random_range(0.01..100.0);
        let scaled: Vec<ArmState> = states
            .iter()
            .map(|s| ArmState {
                band: s.band * c,
                ..s.clone()
            })
            .collect();
        for p in [
            PNorm::Finite(1.0),
            PNorm::Finite(2.0),
            PNorm::Finite(4.0),
            PNorm::Infinite,
        ] {
            let loss = LossSpec {
                p,
                weights: Some(weights.clone()),
            };
            if select_index(&states, &loss) != select_index(&scaled, &loss) {
                return Err(format!("trial {trial}: choice changed under scaling by {c} at p={p}"));
            }
        }
    }
    Ok(())
}

pub fn check_loss_p_monotone(trials: usize, seed: u64) -> CheckResult {
    let mut rng = StreamRng::seed_from_u64(seed);
    for trial in 0..trials {
        let k = rng.random_range(1..10);
        let errors: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..50.0)).collect();
        let losses: Vec<f64> = [
            PNorm::Finite(1.0),
            PNorm::Finite(2.0),
            PNorm::Finite(4.0),
            PNorm::Infinite,
        ]
        .iter()
        .map(|&p| loss_from_errors(&errors, &LossSpec::unweighted(p)))
        .collect();
        if losses.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12)) {
            return Err(format!("trial {trial}: losses {losses:?} not non-increasing in p"));
        }
    }
    Ok(())
}

/// Small experiment exercising every strategy.
pub fn check_config(schedule: Schedule, split: SplitMode) -> ExperimentConfig {
    let dims = vec![12, 16, 14];
    let cells: usize = dims.iter().map(|d| d * d).sum();
    ExperimentConfig {
        id: "check".into(),
        dims,
        ranks: vec![3, 1, 2],
        noise: NoiseModel::Gaussian { sigma: 0.1 },
        bound: 4.0,
        budget: cells * 3 / 4,
        strategies: vec![
            StrategyKind::malocate(PNorm::Finite(1.0)),
            StrategyKind::malocate(PNorm::Infinite),
            StrategyKind::Malocate {
                loss: LossSpec {
                    p: PNorm::Finite(2.0),
                    weights: Some(vec![1.0, 2.0, 0.5]),
                },
            },
            StrategyKind::Uniform { weights: None },
            StrategyKind::Oracle { weights: None },
        ],
        schedule,
        split,
        estimator: EstimatorConfig {
            max_iters: 100,
            ..EstimatorConfig::default()
        },
        confidence_scale: 0.5,
        reps: 2,
        seed: 2024,
        clip_truth_to_bound: false,
        output_dir: None,
    }
}

fn strategy_weights(cfg: &ExperimentConfig) -> BTreeMap<String, LossSpec> {
    cfg.strategies.iter().map(|s| (s.label(), s.weights())).collect()
}

pub struct Check {
    pub name: &'static str,
    pub outcome: CheckResult,
}

fn all_traces(output: &ExperimentOutput, f: impl Fn(&RunTrace) -> CheckResult) -> CheckResult {
    for r in &output.runs {
        f(&r.trace).map_err(|e| format!("rep {} {}: {e}", r.rep, r.strategy))?;
    }
    Ok(())
}

/// Runs the full invariant suite on small experiments.
pub fn run_checks() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut push = |name, outcome| checks.push(Check { name, outcome });

    let discretized = check_config(Schedule::default(), SplitMode::ByMultiplicity);
    let doubling = check_config(Schedule::Doubling, SplitMode::Halves);
    let outputs: Vec<(&ExperimentConfig, Result<ExperimentOutput, String>)> = [&discretized, &doubling]
        .into_iter()
        .map(|cfg| (cfg, run_experiment(cfg, 2).map_err(|e| e.to_string())))
        .collect();

    for (cfg, out) in &outputs {
        if let Err(e) = out {
            push("experiment runs", Err(format!("{}: {e}", cfg.id)));
        }
    }
    let ok: Vec<(&ExperimentConfig, &ExperimentOutput)> = outputs
        .iter()
        .filter_map(|(c, o)| o.as_ref().ok().map(|o| (*c, o)))
        .collect();
    let over_all =
        |f: &dyn Fn(&ExperimentOutput) -> CheckResult| -> CheckResult { ok.iter().try_for_each(|(_, o)| f(o)) };

    push("B-monotonicity", over_all(&|o| all_traces(o, check_band_monotone)));
    push("update guard", over_all(&|o| all_traces(o, check_update_guard)));
    push("budget accounting", over_all(&|o| all_traces(o, check_budget)));
    push(
        "event-time monotonicity",
        over_all(&|o| all_traces(o, check_time_monotone)),
    );
    push(
        "doubling law",
        ok.iter()
            .filter(|(c, _)| c.schedule == Schedule::Doubling)
            .try_for_each(|(_, o)| all_traces(o, check_doubling_law)),
    );
    push("argmax scale-invariance", check_selection_scale_invariance(2000, 7));
    push("loss p-monotonicity", check_loss_p_monotone(2000, 11));
    push(
        "recorded losses",
        ok.iter()
            .try_for_each(|(c, o)| check_row_losses(&o.rows, &c.dims, &strategy_weights(c))),
    );
    push(
        "CSV round-trip",
        over_all(&|o| match read_rows(to_csv_string(&o.rows).as_bytes()) {
            Ok(back) if back == o.rows => Ok(()),
            Ok(_) => Err("rows changed after a CSV round-trip".into()),
            Err(e) => Err(e.to_string()),
        }),
    );
    push("paired generation", over_all(&check_paired_generation));
    push(
        "deterministic metrics.csv",
        ok.iter().try_for_each(|(c, o)| {
            let again = run_experiment(c, 1).map_err(|e| e.to_string())?;
            if to_csv_string(&again.rows) == to_csv_string(&o.rows) {
                Ok(())
            } else {
                Err(format!("{}: reruns with the same seed differ", c.id))
            }
        }),
    );
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let checks = run_checks();
        assert!(checks.len() >= 11);
        for c in &checks {
            assert!(c.outcome.is_ok(), "{}: {:?}", c.name, c.outcome);
        }
    }

    #[test]
    fn band_check_flags_increase() {
        let cfg = check_config(Schedule::Doubling, SplitMode::Halves);
        let out = run_experiment(&ExperimentConfig { reps: 1, ..cfg }, 1).unwrap();
        let mut trace = out.runs[0].trace.clone();
        assert!(check_band_monotone(&trace).is_ok());
        let last = trace.events.len() - 1;
        trace.events[last].bands[0] = f64::INFINITY;
        assert!(check_band_monotone(&trace).is_err());

        let mut trace = out.runs[0].trace.clone();
        trace.events[last].t += 1;
        assert!(check_budget(&trace).is_err());
    }
}
