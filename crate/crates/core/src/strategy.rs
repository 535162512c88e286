//! Allocation strategies over `K` matrix-completion arms.
//!
//! All strategies share one run loop: pick an arm, draw a batch for it, refit,
//! estimate the new estimator's error band, and keep the new estimator only if
//! its band does not exceed the stored one. They differ only in how the arm is
//! picked:
//!
//! * MALocate maximizes `w^{1/p} d^2 B T^{-1/p}`, the estimated error per
//!   sample under the `L^p` loss;
//! * uniform cycles through the arms;
//! * the oracle picks the arm with the largest true error.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::error_estimation::{self, split_dataset, ErrorEstimate, SplitMode, DEFAULT_BAND_SCALE};
use crate::estimation::{Estimator, MatrixEstimate};
use crate::linalg::{self, Matrix};
use crate::model::{new_samples, Dataset, GroundTruth, MatrixSpec, NoiseModel};
use crate::rng::StreamRng;

/// Exponent of the `L^p` loss, `1 <= p <= inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PNorm {
    Finite(f64),
    Infinite,
}

impl PNorm {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_infinite() && p > 0.0 {
            Ok(PNorm::Infinite)
        } else if p >= 1.0 {
            Ok(PNorm::Finite(p))
        } else {
            Err(Error::InvalidConfig(format!("loss exponent {p} must be >= 1")))
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            PNorm::Finite(p) => p,
            PNorm::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for PNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PNorm::Finite(p) => write!(f, "{p}"),
            PNorm::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for PNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(PNorm::Infinite);
        }
        let p: f64 = s
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("cannot parse loss exponent {s:?}")))?;
        PNorm::new(p)
    }
}

impl Serialize for PNorm {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PNorm::Finite(p) => serializer.serialize_f64(*p),
            PNorm::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for PNorm {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        let parsed = match Repr::deserialize(deserializer)? {
            Repr::Num(p) => PNorm::new(p),
            Repr::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub p: PNorm,
    /// Per-matrix weights; `None` means all ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl LossSpec {
    pub fn unweighted(p: PNorm) -> Self {
        Self { p, weights: None }
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[k])
    }

    pub fn is_unweighted(&self) -> bool {
        self.weights.as_ref().is_none_or(|w| w.iter().all(|&x| x == 1.0))
    }

    pub fn validate(&self, arms: usize) -> Result<()> {
        if let PNorm::Finite(p) = self.p {
            if !(p >= 1.0 && p.is_finite()) {
                return Err(Error::InvalidConfig(format!("loss exponent {p} must be >= 1")));
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != arms {
                return Err(Error::InvalidConfig(format!(
                    "{} loss weights for {arms} matrices",
                    w.len()
                )));
            }
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidConfig("loss weights must be positive".into()));
            }
        }
        Ok(())
    }

    fn with_p(&self, p: PNorm) -> Self {
        Self {
            p,
            weights: self.weights.clone(),
        }
    }
}

/// `(sum_k w_k e_k^p)^{1/p}`, or `max_k w_k e_k` for `p = inf`, where `e_k` is
/// a squared Frobenius error.
pub fn loss_from_errors(errors: &[f64], loss: &LossSpec) -> f64 {
    match loss.p {
        PNorm::Infinite => errors
            .iter()
            .enumerate()
            .map(|(k, e)| loss.weight(k) * e)
            .fold(0.0, f64::max),
        PNorm::Finite(p) => {
            let sum: f64 = errors.iter().enumerate().map(|(k, e)| loss.weight(k) * e.powf(p)).sum();
            sum.powf(1.0 / p)
        }
    }
}

/// Squared Frobenius error of each estimate against its truth.
pub fn squared_errors(estimates: &[MatrixEstimate], truths: &[GroundTruth]) -> Vec<f64> {
    assert_eq!(estimates.len(), truths.len(), "estimates and truths misaligned");
    estimates
        .iter()
        .zip(truths)
        .map(|(est, gt)| linalg::frobenius_dist_sq(&est.values, &gt.entries))
        .collect()
}

pub fn compute_loss(estimates: &[MatrixEstimate], truths: &[GroundTruth], loss: &LossSpec) -> f64 {
    loss_from_errors(&squared_errors(estimates, truths), loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// Each pick draws a fresh dataset as large as everything spent so far on
    /// that arm.
    Doubling,
    /// `init_multiplier * d` samples per arm, then the remaining budget split
    /// into `num_batches` equal sub-batches.
    Discretized {
        #[serde(default = "default_init_multiplier")]
        init_multiplier: usize,
        #[serde(default = "default_num_batches")]
        num_batches: usize,
        #[serde(default = "default_reuse")]
        reuse_samples: bool,
    },
}

fn default_init_multiplier() -> usize {
    8
}

fn default_num_batches() -> usize {
    100
}

fn default_reuse() -> bool {
    true
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Discretized {
            init_multiplier: default_init_multiplier(),
            num_batches: default_num_batches(),
            reuse_samples: default_reuse(),
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if let Schedule::Discretized {
            init_multiplier,
            num_batches,
            ..
        } = *self
        {
            if init_multiplier == 0 || num_batches == 0 {
                return Err(Error::InvalidConfig(
                    "init_multiplier and num_batches must be >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Samples each arm receives on its first pick, capped at `d^2`.
    pub fn initial_size(&self, dim: usize) -> usize {
        let size = match *self {
            Schedule::Doubling => initial_batch(dim),
            Schedule::Discretized { init_multiplier, .. } => init_multiplier * dim,
        };
        size.min(dim * dim)
    }
}

/// `4 ceil((d ln d + 1) / 2)`: twice the smallest even integer above
/// `d ln d`.
pub fn initial_batch(dim: usize) -> usize {
    assert!(dim >= 2, "initial batch needs d >= 2");
    let d = dim as f64;
    4 * ((d * d.ln() + 1.0) / 2.0).ceil() as usize
}

#[derive(Clone, Debug)]
pub struct ArmState {
    pub spec: MatrixSpec,
    pub spent: usize,
    /// Current honest upper bound on the normalized error.
    pub band: f64,
    pub current: Option<MatrixEstimate>,
    /// Accumulated observations, kept only when samples are reused.
    pub data: Dataset,
}

impl ArmState {
    pub fn new(spec: MatrixSpec) -> Self {
        Self {
            spec,
            spent: 0,
            band: f64::INFINITY,
            current: None,
            data: Dataset::new(spec.index, spec.dim),
        }
    }

    pub fn headroom(&self) -> usize {
        self.spec.cap().saturating_sub(self.spent)
    }

    /// Current estimate, or the zero matrix before the first fit.
    pub fn estimate_values(&self) -> Matrix {
        self.current
            .as_ref()
            .map_or_else(|| Matrix::zeros(self.spec.dim, self.spec.dim), |e| e.values.clone())
    }
}

fn first_uninitialized(states: &[ArmState]) -> Option<usize> {
    states.iter().position(|s| s.band == f64::INFINITY && s.headroom() > 0)
}

fn argmax_open(states: &[ArmState], mut score: impl FnMut(usize, &ArmState) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, s) in states.iter().enumerate() {
        if s.headroom() == 0 {
            continue;
        }
        let v = score(k, s);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

/// MALocate's sampling rule. Returns `None` once every arm is at its cap.
pub fn select_index(states: &[ArmState], loss: &LossSpec) -> Option<usize> {
    if let Some(k) = first_uninitialized(states) {
        return Some(k);
    }
    argmax_open(states, |k, s| criterion(s, loss.weight(k), loss.p))
}

/// `w^{1/p} d^2 B T^{-1/p}`, or `w d^2 B` for `p = inf`.
pub fn criterion(state: &ArmState, weight: f64, p: PNorm) -> f64 {
    let d2 = (state.spec.dim * state.spec.dim) as f64;
    match p {
        PNorm::Infinite => weight * d2 * state.band,
        PNorm::Finite(p) => weight.powf(1.0 / p) * d2 * state.band * (state.spent as f64).powf(-1.0 / p),
    }
}

/// Oracle rule: the arm with the largest (weighted) true error. Errors are
/// normalized by `d^2` unless every arm has the same dimension.
pub fn oracle_select(states: &[ArmState], truths: &[GroundTruth], weights: &LossSpec) -> Option<usize> {
    if let Some(k) = first_uninitialized(states) {
        return Some(k);
    }
    let same_dim = states.windows(2).all(|w| w[0].spec.dim == w[1].spec.dim);
    argmax_open(states, |k, s| {
        let err = linalg::frobenius_dist_sq(&s.estimate_values(), &truths[k].entries);
        let d2 = (s.spec.dim * s.spec.dim) as f64;
        let metric = if same_dim { err } else { err / d2 };
        weights.weight(k) * metric
    })
}

/// Round-robin starting at `cursor`, skipping capped arms.
pub fn round_robin_select(states: &[ArmState], cursor: usize) -> Option<usize> {
    let k = states.len();
    (0..k).map(|off| (cursor + off) % k).find(|&m| states[m].headroom() > 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyKind {
    Malocate {
        loss: LossSpec,
    },
    Uniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    Oracle {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
}

impl StrategyKind {
    pub fn malocate(p: PNorm) -> Self {
        StrategyKind::Malocate {
            loss: LossSpec::unweighted(p),
        }
    }

    /// Short unique name, e.g. `malocate-pinf`, `uniform`, `oracle`.
    pub fn label(&self) -> String {
        match self {
            StrategyKind::Malocate { loss } => format!("malocate-p{}", loss.p),
            StrategyKind::Uniform { .. } => "uniform".into(),
            StrategyKind::Oracle { .. } => "oracle".into(),
        }
    }

    pub fn p(&self) -> Option<PNorm> {
        match self {
            StrategyKind::Malocate { loss } => Some(loss.p),
            _ => None,
        }
    }

    /// Weights used for the selection rule and for reported losses.
    pub fn weights(&self) -> LossSpec {
        let weights = match self {
            StrategyKind::Malocate { loss } => loss.weights.clone(),
            StrategyKind::Uniform { weights } | StrategyKind::Oracle { weights } => weights.clone(),
        };
        LossSpec {
            p: PNorm::Infinite,
            weights,
        }
    }

    pub fn validate(&self, arms: usize) -> Result<()> {
        match self {
            StrategyKind::Malocate { loss } => loss.validate(arms),
            _ => self.weights().validate(arms),
        }
    }
}

/// Everything a run needs besides the problem, the estimator and the streams.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub noise: NoiseModel,
    pub budget: usize,
    pub schedule: Schedule,
    pub split: SplitMode,
    pub band_scale: f64,
}

impl RunConfig {
    pub fn new(budget: usize, noise: NoiseModel) -> Self {
        Self {
            noise,
            budget,
            schedule: Schedule::default(),
            split: SplitMode::default(),
            band_scale: DEFAULT_BAND_SCALE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    /// Cumulative budget spent after this event.
    pub t: usize,
    pub chosen: usize,
    pub batch: usize,
    pub initialization: bool,
    /// Size of the dataset the candidate was fitted and evaluated on.
    pub dataset_size: usize,
    pub pairs: usize,
    pub estimate: f64,
    pub candidate_band: f64,
    pub accepted: bool,
    pub bands: Vec<f64>,
    pub spent: Vec<usize>,
    /// `||M_hat - M||_F^2 / d^2` per arm after the event.
    pub true_errors: Vec<f64>,
    pub loss_p1: f64,
    pub loss_pinf: f64,
    pub estimate_hashes: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub strategy: String,
    pub budget: usize,
    pub dims: Vec<usize>,
    pub truth_hashes: Vec<u64>,
    pub events: Vec<Event>,
    /// Every arm reached its cap before the budget ran out.
    pub capped_out: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub estimates: Vec<MatrixEstimate>,
    pub trace: RunTrace,
}

fn check_problem(problem: &[GroundTruth], cfg: &RunConfig) -> Result<()> {
    if problem.is_empty() {
        return Err(Error::InvalidConfig("at least one matrix is required".into()));
    }
    for (k, gt) in problem.iter().enumerate() {
        gt.spec.validate()?;
        if gt.spec.index != k {
            return Err(Error::InvalidConfig(format!(
                "matrix at position {k} carries index {}",
                gt.spec.index
            )));
        }
        if gt.spec.dim < 2 {
            return Err(Error::DimensionTooSmall(gt.spec.dim));
        }
    }
    cfg.noise.validate()?;
    cfg.schedule.validate()?;
    if !(cfg.band_scale >= 0.0 && cfg.band_scale.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "band scale {} must be >= 0",
            cfg.band_scale
        )));
    }
    let required: usize = problem.iter().map(|gt| cfg.schedule.initial_size(gt.spec.dim)).sum();
    if cfg.budget < required {
        return Err(Error::BudgetTooSmall {
            budget: cfg.budget,
            required,
        });
    }
    Ok(())
}

/// Runs `strategy` on `problem`. `streams[k]` supplies the samples of matrix
/// `k`.
pub fn run<E: Estimator + ?Sized>(
    problem: &[GroundTruth],
    strategy: &StrategyKind,
    cfg: &RunConfig,
    estimator: &E,
    mut streams: Vec<StreamRng>,
) -> Result<RunOutcome> {
    check_problem(problem, cfg)?;
    strategy.validate(problem.len())?;
    assert_eq!(streams.len(), problem.len(), "one sampling stream per matrix");

    let weights = strategy.weights();
    let mut states: Vec<ArmState> = problem.iter().map(|gt| ArmState::new(gt.spec)).collect();
    let init_total: usize = problem.iter().map(|gt| cfg.schedule.initial_size(gt.spec.dim)).sum();
    let sub_batch = match cfg.schedule {
        Schedule::Discretized { num_batches, .. } => (cfg.budget - init_total).div_ceil(num_batches).max(1),
        Schedule::Doubling => 0,
    };

    let mut trace = RunTrace {
        strategy: strategy.label(),
        budget: cfg.budget,
        dims: problem.iter().map(|gt| gt.spec.dim).collect(),
        truth_hashes: problem.iter().map(|gt| linalg::content_hash(&gt.entries)).collect(),
        events: Vec::new(),
        capped_out: false,
    };
    let mut spent_total = 0usize;
    let mut cursor = 0usize;

    while spent_total < cfg.budget {
        let chosen = match strategy {
            StrategyKind::Malocate { loss } => select_index(&states, loss),
            StrategyKind::Uniform { .. } => round_robin_select(&states, cursor),
            StrategyKind::Oracle { .. } => oracle_select(&states, problem, &weights),
        };
        let Some(m) = chosen else {
            trace.capped_out = true;
            break;
        };
        cursor = m + 1;

        let arm = &mut states[m];
        let initialization = arm.spent == 0;
        let requested = match cfg.schedule {
            Schedule::Doubling => arm.spent.max(initial_batch(arm.spec.dim)),
            Schedule::Discretized { .. } if initialization => cfg.schedule.initial_size(arm.spec.dim),
            Schedule::Discretized { .. } => sub_batch,
        };
        let batch = requested.min(cfg.budget - spent_total).min(arm.headroom());
        debug_assert!(batch > 0);

        let fresh = new_samples(&problem[m], cfg.noise, batch, &mut streams[m]);
        let reuse = matches!(
            cfg.schedule,
            Schedule::Discretized {
                reuse_samples: true,
                ..
            }
        );
        let data = if reuse {
            arm.data.extend(&fresh);
            arm.data.clone()
        } else {
            fresh
        };

        let (train, eval) = split_dataset(&data, cfg.split);
        let candidate = if train.is_empty() {
            None
        } else {
            let est = estimator.fit(&train, &arm.spec, arm.current.as_ref())?;
            let err = error_estimation::evaluate(&est, &eval, arm.spec.bound, cfg.band_scale);
            Some((est, err))
        };

        let err = candidate
            .as_ref()
            .map_or(ErrorEstimate::unavailable(arm.spec.dim), |c| c.1);
        let accepted = candidate.is_some() && (arm.band == f64::INFINITY || err.band <= arm.band);
        if accepted {
            let (est, err) = candidate.expect("accepted candidate");
            arm.current = Some(est);
            arm.band = arm.band.min(err.band);
        }
        arm.spent += batch;
        spent_total += batch;

        trace.events.push(snapshot(
            &states,
            problem,
            &weights,
            Event {
                t: spent_total,
                chosen: m,
                batch,
                initialization,
                dataset_size: data.len(),
                pairs: err.pairs,
                estimate: err.estimate,
                candidate_band: err.band,
                accepted,
                bands: Vec::new(),
                spent: Vec::new(),
                true_errors: Vec::new(),
                loss_p1: 0.0,
                loss_pinf: 0.0,
                estimate_hashes: Vec::new(),
            },
        ));
    }

    let estimates = states
        .into_iter()
        .map(|s| {
            s.current
                .unwrap_or_else(|| MatrixEstimate::zeros(s.spec.index, s.spec.dim))
        })
        .collect();
    Ok(RunOutcome { estimates, trace })
}

fn snapshot(states: &[ArmState], truths: &[GroundTruth], weights: &LossSpec, mut event: Event) -> Event {
    let mut squared = Vec::with_capacity(states.len());
    for (s, gt) in states.iter().zip(truths) {
        let values = s.estimate_values();
        let e = linalg::frobenius_dist_sq(&values, &gt.entries);
        let d2 = (s.spec.dim * s.spec.dim) as f64;
        squared.push(e);
        event.true_errors.push(e / d2);
        event.bands.push(s.band);
        event.spent.push(s.spent);
        event.estimate_hashes.push(linalg::content_hash(&values));
    }
    event.loss_p1 = loss_from_errors(&squared, &weights.with_p(PNorm::Finite(1.0)));
    event.loss_pinf = loss_from_errors(&squared, &weights.with_p(PNorm::Infinite));
    event
}

pub fn malocate_run<E: Estimator + ?Sized>(
    problem: &[GroundTruth],
    loss: &LossSpec,
    cfg: &RunConfig,
    estimator: &E,
    streams: Vec<StreamRng>,
) -> Result<RunOutcome> {
    run(
        problem,
        &StrategyKind::Malocate { loss: loss.clone() },
        cfg,
        estimator,
        streams,
    )
}

pub fn uniform_run<E: Estimator + ?Sized>(
    problem: &[GroundTruth],
    cfg: &RunConfig,
    estimator: &E,
    streams: Vec<StreamRng>,
) -> Result<RunOutcome> {
    run(
        problem,
        &StrategyKind::Uniform { weights: None },
        cfg,
        estimator,
        streams,
    )
}

pub fn oracle_run<E: Estimator + ?Sized>(
    problem: &[GroundTruth],
    cfg: &RunConfig,
    estimator: &E,
    streams: Vec<StreamRng>,
) -> Result<RunOutcome> {
    run(
        problem,
        &StrategyKind::Oracle { weights: None },
        cfg,
        estimator,
        streams,
    )
}
