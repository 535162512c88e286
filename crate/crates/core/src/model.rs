//! Problem instances: low-rank ground truths, the noise model, and uniform
//! trace-regression sampling.
//!
//! Indices are zero-based throughout the library. Matrix `k` here is matrix
//! `k + 1` in reports and CSV output.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::StreamRng;

/// Default magnitude bound for the unit-variance synthetic generator.
pub const DEFAULT_BOUND: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub index: usize,
    pub dim: usize,
    pub rank: usize,
    pub bound: f64,
}

impl MatrixSpec {
    pub fn new(index: usize, dim: usize, rank: usize, bound: f64) -> Result<Self> {
        let spec = Self {
            index,
            dim,
            rank,
            bound,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidSpec("dimension must be positive".into()));
        }
        if self.rank == 0 || self.rank > self.dim {
            return Err(Error::InvalidSpec(format!(
                "rank {} outside [1, {}]",
                self.rank, self.dim
            )));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(Error::InvalidSpec(format!("bound {} must be positive", self.bound)));
        }
        Ok(())
    }

    /// Number of observations after which the matrix stops accepting samples.
    pub fn cap(&self) -> usize {
        self.dim * self.dim
    }
}

#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub spec: MatrixSpec,
    pub entries: Matrix,
}

impl GroundTruth {
    pub fn dim(&self) -> usize {
        self.spec.dim
    }
}

/// Draws `M = U V` with `U` (d x r) and `V` (r x d) filled with i.i.d.
/// `N(0, r^{-1/2})` entries, so every entry of `M` has unit variance.
pub fn generate_ground_truth(spec: MatrixSpec, seed: u64) -> GroundTruth {
    generate_ground_truth_with(spec, seed, false)
}

/// As [`generate_ground_truth`]; with `clip_to_bound` the entries are clamped
/// to `[-A, A]` afterwards, which may raise the rank.
pub fn generate_ground_truth_with(spec: MatrixSpec, seed: u64, clip_to_bound: bool) -> GroundTruth {
    use rand::SeedableRng;

    let mut rng = StreamRng::seed_from_u64(seed);
    let (d, r) = (spec.dim, spec.rank);
    let std = (r as f64).powf(-0.25);
    let normal = Normal::new(0.0, std).expect("finite std");
    let u = Matrix::from_fn(d, r, |_, _| normal.sample(&mut rng));
    let v = Matrix::from_fn(r, d, |_, _| normal.sample(&mut rng));
    let mut entries = &u * &v;
    if clip_to_bound {
        let a = spec.bound;
        for j in 0..d {
            for i in 0..d {
                entries[(i, j)] = entries[(i, j)].clamp(-a, a);
            }
        }
    }
    GroundTruth { spec, entries }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseModel {
    None,
    Gaussian { sigma: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidConfig(format!("noise sigma {sigma} must be >= 0")))
            }
            _ => Ok(()),
        }
    }
}

/// One noisy entry query `y = <e_i e_j^T, M> + eps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub matrix: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Observation {
    pub fn entry(&self) -> (usize, usize) {
        (self.row, self.col)
    }
}

/// Observations of a single matrix, in the order they were drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    matrix: usize,
    dim: usize,
    observations: Vec<Observation>,
}

impl Dataset {
    pub fn new(matrix: usize, dim: usize) -> Self {
        Self {
            matrix,
            dim,
            observations: Vec::new(),
        }
    }

    pub fn from_observations(matrix: usize, dim: usize, observations: Vec<Observation>) -> Result<Self> {
        for o in &observations {
            if o.matrix != matrix {
                return Err(Error::InvalidConfig(format!(
                    "observation for matrix {} in dataset of matrix {matrix}",
                    o.matrix
                )));
            }
            if o.row >= dim || o.col >= dim {
                return Err(Error::InvalidConfig(format!(
                    "entry ({}, {}) outside a {dim}x{dim} matrix",
                    o.row, o.col
                )));
            }
        }
        Ok(Self {
            matrix,
            dim,
            observations,
        })
    }

    pub fn matrix(&self) -> usize {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.observations.iter()
    }

    /// Appends `other`, which must describe the same matrix.
    pub fn extend(&mut self, other: &Dataset) {
        assert_eq!(self.matrix, other.matrix, "datasets of different matrices");
        self.observations.extend_from_slice(&other.observations);
    }

    pub(crate) fn push(&mut self, obs: Observation) {
        debug_assert_eq!(obs.matrix, self.matrix);
        self.observations.push(obs);
    }
}

/// Draws `count` entries uniformly with replacement and returns their noisy
/// values.
pub fn new_samples(gt: &GroundTruth, noise: NoiseModel, count: usize, rng: &mut StreamRng) -> Dataset {
    let d = gt.dim();
    let gaussian = match noise {
        NoiseModel::Gaussian { sigma } if sigma > 0.0 => Some(Normal::new(0.0, sigma).expect("finite sigma")),
        _ => None,
    };
    let mut data = Dataset::new(gt.spec.index, d);
    data.observations.reserve(count);
    for _ in 0..count {
        let row = rng.random_range(0..d);
        let col = rng.random_range(0..d);
        let eps = gaussian.as_ref().map_or(0.0, |n| n.sample(rng));
        data.push(Observation {
            matrix: gt.spec.index,
            row,
            col,
            value: gt.entries[(row, col)] + eps,
        });
    }
    data
}
