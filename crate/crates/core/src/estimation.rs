//! Nuclear-norm regularized estimators.
//!
//! [`SoftImpute`] is the fitted estimator. The square-root lasso objective is
//! kept as an evaluable diagnostic, not as something the crate minimizes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_estimation::{split_dataset, SplitMode};
use crate::linalg::{self, Matrix};
use crate::model::{Dataset, MatrixSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Multiplier on the `A sqrt(ln d / (d T))` regularization schedule.
    pub lambda_scale: f64,
    pub max_iters: usize,
    /// Relative Frobenius change below which iteration stops.
    pub tol: f64,
    pub warm_start: bool,
    /// Clamp the returned entries to `[-A, A]`.
    pub clip_output: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            lambda_scale: 1.0,
            max_iters: 500,
            tol: 1e-5,
            warm_start: true,
            clip_output: true,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_scale >= 0.0 && self.lambda_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda_scale {} must be >= 0",
                self.lambda_scale
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig(format!("tol {} must be > 0", self.tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MatrixEstimate {
    pub matrix: usize,
    pub values: Matrix,
    pub trained_on: usize,
    pub lambda_used: f64,
}

impl MatrixEstimate {
    pub fn zeros(matrix: usize, dim: usize) -> Self {
        Self {
            matrix,
            values: Matrix::zeros(dim, dim),
            trained_on: 0,
            lambda_used: 0.0,
        }
    }
}

/// Anything that turns a training sample into a completed matrix.
pub trait Estimator: Sync {
    fn fit(&self, train: &Dataset, spec: &MatrixSpec, warm: Option<&MatrixEstimate>) -> Result<MatrixEstimate>;
}

/// `C' A sqrt(ln d / (d T))`.
pub fn lambda_for(dim: usize, samples: usize, bound: f64, scale: f64) -> Result<f64> {
    if dim < 2 {
        return Err(Error::DimensionTooSmall(dim));
    }
    if samples == 0 {
        return Err(Error::EmptyDataset("lambda schedule needs at least one sample"));
    }
    let d = dim as f64;
    Ok(scale * bound * (d.ln() / (d * samples as f64)).sqrt())
}

/// `sqrt(mean squared residual) + lambda * ||M||_*` on `data`.
pub fn sqrt_lasso_objective(m: &Matrix, data: &Dataset, lambda: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("square-root lasso objective"));
    }
    let rss: f64 = data
        .iter()
        .map(|o| {
            let r = o.value - m[(o.row, o.col)];
            r * r
        })
        .sum();
    let fit = (rss / data.len() as f64).sqrt();
    let penalty = if lambda == 0.0 {
        0.0
    } else {
        lambda * linalg::nuclear_norm(m)?
    };
    Ok(fit + penalty)
}

/// Shrinks every singular value of `m` by `theta`, dropping the ones that
/// reach zero.
pub fn svt(m: &Matrix, theta: f64) -> Result<Matrix> {
    Ok(svt_with_norm(m, theta)?.0)
}

/// As [`svt`], also returning the nuclear norm of the result.
fn svt_with_norm(m: &Matrix, theta: f64) -> Result<(Matrix, f64)> {
    assert!(theta >= 0.0, "threshold must be non-negative");
    let parts = linalg::svd(m)?;
    let kept: Vec<f64> = parts.sigma.iter().map(|s| s - theta).take_while(|s| *s > 0.0).collect();
    let nuclear = kept.iter().sum();
    Ok((linalg::reconstruct(&parts.u, &kept, &parts.v), nuclear))
}

/// Observed entries with duplicate observations averaged, in (row, col)
/// order.
pub fn averaged_targets(data: &Dataset) -> Vec<(usize, usize, f64)> {
    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for o in data.iter() {
        let slot = acc.entry(o.entry()).or_insert((0.0, 0));
        slot.0 += o.value;
        slot.1 += 1;
    }
    acc.into_iter()
        .map(|((i, j), (sum, n))| (i, j, sum / n as f64))
        .collect()
}

fn surrogate_objective(z: &Matrix, targets: &[(usize, usize, f64)], theta: f64, nuclear: f64) -> f64 {
    let rss: f64 = targets.iter().map(|&(i, j, y)| (y - z[(i, j)]).powi(2)).sum();
    0.5 * rss + theta * nuclear
}

/// SoftImpute: alternately fill unobserved cells from the current iterate and
/// soft-threshold the singular values of the filled matrix.
pub fn soft_impute_fit(
    train: &Dataset,
    spec: &MatrixSpec,
    cfg: &EstimatorConfig,
    warm: Option<&MatrixEstimate>,
) -> Result<MatrixEstimate> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("soft-impute training set"));
    }
    let d = spec.dim;
    let lambda = lambda_for(d, train.len(), spec.bound, cfg.lambda_scale)?;
    let theta = d as f64 * lambda;
    let targets = averaged_targets(train);

    let mut z = match warm {
        Some(w) if cfg.warm_start => w.values.clone(),
        _ => Matrix::zeros(d, d),
    };
    let mut last_checked: Option<f64> = None;

    for iter in 0..cfg.max_iters {
        let mut filled = z.clone();
        for &(i, j, y) in &targets {
            filled[(i, j)] = y;
        }
        let (next, nuclear) = svt_with_norm(&filled, theta)?;
        let change = linalg::frobenius_dist_sq(&next, &z).sqrt();
        let scale = linalg::frobenius_sq(&z).sqrt().max(1.0);
        z = next;

        if cfg!(debug_assertions) && iter % 10 == 0 {
            let obj = surrogate_objective(&z, &targets, theta, nuclear);
            if let Some(prev) = last_checked {
                debug_assert!(
                    obj <= prev + 1e-9 * prev.abs().max(1.0),
                    "soft-impute objective increased from {prev} to {obj}"
                );
            }
            last_checked = Some(obj);
        }

        if change / scale < cfg.tol {
            break;
        }
    }

    if cfg.clip_output {
        let a = spec.bound;
        for j in 0..d {
            for i in 0..d {
                z[(i, j)] = z[(i, j)].clamp(-a, a);
            }
        }
    }

    Ok(MatrixEstimate {
        matrix: spec.index,
        values: z,
        trained_on: train.len(),
        lambda_used: lambda,
    })
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SoftImpute {
    pub config: EstimatorConfig,
}

impl SoftImpute {
    pub fn new(config: EstimatorConfig) -> Self {
        Self { config }
    }
}

impl Estimator for SoftImpute {
    fn fit(&self, train: &Dataset, spec: &MatrixSpec, warm: Option<&MatrixEstimate>) -> Result<MatrixEstimate> {
        soft_impute_fit(train, spec, &self.config, warm)
    }
}

/// Fits `estimator` on the training portion of `data` under `split`.
pub fn get_estimator<E: Estimator + ?Sized>(
    data: &Dataset,
    spec: &MatrixSpec,
    split: SplitMode,
    estimator: &E,
    warm: Option<&MatrixEstimate>,
) -> Result<MatrixEstimate> {
    let (train, _) = split_dataset(data, split);
    if train.is_empty() {
        return Err(Error::EmptyDataset("training portion of the split"));
    }
    estimator.fit(&train, spec, warm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_ground_truth, new_samples, NoiseModel, Observation, DEFAULT_BOUND};
    use crate::rng::StreamRng;
    use rand::SeedableRng;

    fn diag(values: &[f64]) -> Matrix {
        Matrix::from_fn(values.len(), values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    fn obs(row: usize, col: usize, value: f64) -> Observation {
        Observation {
            matrix: 0,
            row,
            col,
            value,
        }
    }

    fn dataset(d: usize, obs: Vec<Observation>) -> Dataset {
        Dataset::from_observations(0, d, obs).unwrap()
    }

    #[test]
    fn lambda_schedule_values() {
        let base = lambda_for(100, 1000, 1.0, 1.0).unwrap();
        assert!((base - 0.0067861).abs() < 1e-6);
        let doubled = lambda_for(100, 1000, 2.0, 1.0).unwrap();
        assert_eq!(doubled, 2.0 * base);
        assert_eq!(lambda_for(100, 1000, 1.0, 0.0).unwrap(), 0.0);
        assert!(lambda_for(100, 2000, 1.0, 1.0).unwrap() < base);
        assert!(matches!(lambda_for(1, 10, 1.0, 1.0), Err(Error::DimensionTooSmall(1))));
    }

    #[test]
    fn sqrt_lasso_objective_cases() {
        let data = dataset(2, vec![obs(0, 0, 1.0)]);
        let zero = Matrix::zeros(2, 2);
        assert_eq!(sqrt_lasso_objective(&zero, &data, 0.0).unwrap(), 1.0);
        let e11 = diag(&[1.0, 0.0]);
        assert_eq!(sqrt_lasso_objective(&e11, &data, 0.0).unwrap(), 0.0);
        assert!((sqrt_lasso_objective(&e11, &data, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!(sqrt_lasso_objective(&e11, &Dataset::new(0, 2), 0.0).is_err());
    }

    #[test]
    fn svt_cases() {
        let m = Matrix::from_fn(4, 4, |i, j| (i as f64 - j as f64 * 0.5).sin());
        assert!(linalg::frobenius_dist_sq(&svt(&m, 0.0).unwrap(), &m).sqrt() < 1e-10);

        let shrunk = svt(&diag(&[3.0, 1.0]), 2.0).unwrap();
        assert!(linalg::frobenius_dist_sq(&shrunk, &diag(&[1.0, 0.0])) < 1e-24);

        let smax = linalg::singular_values(&m).unwrap()[0];
        assert_eq!(linalg::frobenius_sq(&svt(&m, smax).unwrap()), 0.0);
    }

    #[test]
    fn duplicates_are_averaged() {
        let data = dataset(4, vec![obs(1, 2, 0.4), obs(0, 0, 1.0), obs(1, 2, 0.6)]);
        let targets = averaged_targets(&data);
        assert_eq!(targets.len(), 2);
        let (_, _, v) = targets.iter().find(|t| (t.0, t.1) == (1, 2)).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_recovery_with_full_coverage() {
        let d = 20;
        let u: Vec<f64> = (0..d).map(|i| (i as f64 * 0.37).cos()).collect();
        let v: Vec<f64> = (0..d).map(|i| 0.5 + (i as f64 * 0.11).sin()).collect();
        let truth = Matrix::from_fn(d, d, |i, j| u[i] * v[j]);
        let mut observations = Vec::new();
        for i in 0..d {
            for j in 0..d {
                observations.push(obs(i, j, truth[(i, j)]));
            }
        }
        let data = dataset(d, observations);
        let spec = MatrixSpec::new(0, d, 1, DEFAULT_BOUND).unwrap();
        let cfg = EstimatorConfig {
            lambda_scale: 1e-9,
            ..Default::default()
        };
        let est = soft_impute_fit(&data, &spec, &cfg, None).unwrap();
        let rel = (linalg::frobenius_dist_sq(&est.values, &truth) / linalg::frobenius_sq(&truth)).sqrt();
        assert!(rel <= 1e-3, "relative error {rel}");
        assert_eq!(est.trained_on, d * d);
    }

    #[test]
    fn full_shrinkage_returns_zero() {
        let data = dataset(3, vec![obs(0, 0, 0.01), obs(2, 1, -0.02)]);
        let spec = MatrixSpec::new(0, 3, 1, 1.0).unwrap();
        // theta = 3 * sqrt(ln 3 / 6) ~ 1.28, far above sigma_max = 0.02.
        let est = soft_impute_fit(&data, &spec, &EstimatorConfig::default(), None).unwrap();
        assert_eq!(linalg::frobenius_sq(&est.values), 0.0);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let spec = MatrixSpec::new(0, 3, 1, 1.0).unwrap();
        let err = soft_impute_fit(&Dataset::new(0, 3), &spec, &EstimatorConfig::default(), None);
        assert!(matches!(err, Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn clipping_bounds_output() {
        let data = dataset(
            2,
            vec![obs(0, 0, 10.0), obs(1, 1, -10.0), obs(0, 1, 10.0), obs(1, 0, 10.0)],
        );
        let spec = MatrixSpec::new(0, 2, 2, 1.0).unwrap();
        let cfg = EstimatorConfig {
            lambda_scale: 0.0,
            ..Default::default()
        };
        let est = soft_impute_fit(&data, &spec, &cfg, None).unwrap();
        for j in 0..2 {
            for i in 0..2 {
                assert!(est.values[(i, j)].abs() <= 1.0);
            }
        }
    }

    #[test]
    fn fit_is_bitwise_deterministic() {
        let spec = MatrixSpec::new(0, 25, 2, DEFAULT_BOUND).unwrap();
        let gt = generate_ground_truth(spec, 3);
        let mut rng = StreamRng::seed_from_u64(5);
        let data = new_samples(&gt, NoiseModel::Gaussian { sigma: 0.1 }, 300, &mut rng);
        let warm = MatrixEstimate {
            values: Matrix::from_fn(25, 25, |i, j| 0.01 * (i + j) as f64),
            ..MatrixEstimate::zeros(0, 25)
        };
        let cfg = EstimatorConfig::default();
        let a = soft_impute_fit(&data, &spec, &cfg, Some(&warm)).unwrap();
        let b = soft_impute_fit(&data, &spec, &cfg, Some(&warm)).unwrap();
        assert_eq!(linalg::content_hash(&a.values), linalg::content_hash(&b.values));
    }

    #[test]
    fn get_estimator_trains_on_split() {
        let spec = MatrixSpec::new(0, 10, 1, DEFAULT_BOUND).unwrap();
        let gt = generate_ground_truth(spec, 1);
        let mut rng = StreamRng::seed_from_u64(9);
        let data = new_samples(&gt, NoiseModel::None, 100, &mut rng);
        let est = get_estimator(&data, &spec, SplitMode::Halves, &SoftImpute::default(), None).unwrap();
        assert_eq!(est.trained_on, 50);

        let distinct = dataset(10, (0..10).map(|i| obs(i, (i * 3) % 10, 0.5)).collect());
        let est = get_estimator(
            &distinct,
            &spec,
            SplitMode::ByMultiplicity,
            &SoftImpute::default(),
            None,
        )
        .unwrap();
        assert_eq!(est.trained_on, 10);

        let all_dupes = dataset(10, vec![obs(1, 1, 0.5), obs(1, 1, 0.4)]);
        assert!(get_estimator(
            &all_dupes,
            &spec,
            SplitMode::ByMultiplicity,
            &SoftImpute::default(),
            None
        )
        .is_err());
    }

    #[test]
    fn halves_split_recovers_on_full_coverage() {
        // Each entry observed twice; Halves keeps the first full pass.
        let d = 20;
        let truth = Matrix::from_fn(d, d, |i, j| ((i + 1) as f64 / 10.0) * ((j as f64) * 0.2).cos());
        let mut observations = Vec::new();
        for _ in 0..2 {
            for i in 0..d {
                for j in 0..d {
                    observations.push(obs(i, j, truth[(i, j)]));
                }
            }
        }
        let data = dataset(d, observations);
        let spec = MatrixSpec::new(0, d, 1, DEFAULT_BOUND).unwrap();
        let cfg = EstimatorConfig {
            lambda_scale: 1e-9,
            ..Default::default()
        };
        let est = get_estimator(&data, &spec, SplitMode::Halves, &SoftImpute::new(cfg), None).unwrap();
        assert_eq!(est.trained_on, d * d);
        let rel = (linalg::frobenius_dist_sq(&est.values, &truth) / linalg::frobenius_sq(&truth)).sqrt();
        assert!(rel <= 1e-3);
    }
}
