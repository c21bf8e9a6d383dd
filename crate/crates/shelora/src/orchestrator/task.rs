//! The toy regression task the federation trains on.
//!
//! A frozen base matrix `W0` is perturbed by a planted low-rank
//! teacher delta; inputs come from a small set of feature clusters so
//! partitions can be made non-IID, and targets are noise free, which
//! keeps the task realizable by any adapter of rank at least the
//! teacher's.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::OrchestratorError;
use crate::client::Dataset;
use crate::linalg::Matrix;

/// Norm of the planted teacher perturbation.
const TEACHER_NORM: f64 = 1.0;

/// Relative spread of samples around their cluster center.
const CLUSTER_NOISE: f64 = 0.3;

/// The full sample pool: inputs as columns of `x`, targets as columns
/// of `y`. Sample `s` belongs to feature cluster `s % n_clusters`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub x: Matrix,
    pub y: Matrix,
    pub n_clusters: usize,
}

impl TaskData {
    /// Number of samples in the pool.
    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.cols() == 0
    }

    /// The cluster label of sample `s`.
    pub fn cluster_of(&self, s: usize) -> usize {
        s % self.n_clusters
    }

    /// Extracts the samples at `indices` as a training dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, OrchestratorError> {
        let mut x = Matrix::zeros(self.x.rows(), indices.len());
        let mut y = Matrix::zeros(self.y.rows(), indices.len());
        for (col, &s) in indices.iter().enumerate() {
            if s >= self.len() {
                return Err(OrchestratorError::Validation(format!(
                    "sample index {s} beyond pool of {}",
                    self.len()
                )));
            }
            for r in 0..self.x.rows() {
                x.set(r, col, self.x.get(r, s));
            }
            for r in 0..self.y.rows() {
                y.set(r, col, self.y.get(r, s));
            }
        }
        Ok(Dataset::new(x, y)?)
    }

    /// The whole pool as one dataset.
    pub fn as_dataset(&self) -> Result<Dataset, OrchestratorError> {
        Ok(Dataset::new(self.x.clone(), self.y.clone())?)
    }
}

/// A generated teacher-student instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    /// Frozen base weights, `m x n`.
    pub w0: Matrix,
    /// `w0` plus the planted low-rank delta; generates the targets.
    pub teacher: Matrix,
    pub data: TaskData,
}

impl ToyTask {
    /// Builds the task deterministically from `seed`.
    ///
    /// Cluster centers and inputs are scaled so `|x| ~ 1`, which keeps
    /// gradient magnitudes independent of `n` and makes learning-rate
    /// choices portable across sizes.
    pub fn generate(
        m: usize,
        n: usize,
        teacher_rank: usize,
        n_clusters: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<ToyTask, OrchestratorError> {
        if m == 0 || n == 0 {
            return Err(OrchestratorError::Validation(format!(
                "model dims {m}x{n} must be positive"
            )));
        }
        if teacher_rank == 0 || teacher_rank > m.min(n) {
            return Err(OrchestratorError::Validation(format!(
                "teacher_rank {teacher_rank} outside 1..={}",
                m.min(n)
            )));
        }
        if n_clusters == 0 || n_samples == 0 {
            return Err(OrchestratorError::Validation(
                "need at least one cluster and one sample".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).expect("valid std");
        let coord = Normal::new(0.0, 1.0 / (n as f64).sqrt()).expect("valid std");

        let mut centers = Matrix::zeros(n, n_clusters);
        for c in 0..n_clusters {
            for r in 0..n {
                centers.set(r, c, coord.sample(&mut rng));
            }
        }

        let mut w0 = Matrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                w0.set(i, j, coord.sample(&mut rng));
            }
        }

        let mut u = Matrix::zeros(m, teacher_rank);
        for i in 0..m {
            for t in 0..teacher_rank {
                u.set(i, t, unit.sample(&mut rng));
            }
        }
        let mut v = Matrix::zeros(teacher_rank, n);
        for t in 0..teacher_rank {
            for j in 0..n {
                v.set(t, j, unit.sample(&mut rng));
            }
        }
        let raw = u.matmul(&v)?;
        let norm = raw.frobenius_norm();
        let delta = if norm > 0.0 {
            raw.scale(TEACHER_NORM / norm)
        } else {
            raw
        };
        let teacher = w0.add(&delta)?;

        let noise = Normal::new(0.0, CLUSTER_NOISE / (n as f64).sqrt()).expect("valid std");
        let mut x = Matrix::zeros(n, n_samples);
        for s in 0..n_samples {
            let c = s % n_clusters;
            for r in 0..n {
                x.set(r, s, centers.get(r, c) + noise.sample(&mut rng));
            }
        }
        let y = teacher.matmul(&x)?;

        Ok(ToyTask {
            w0,
            teacher,
            data: TaskData { x, y, n_clusters },
        })
    }

    /// The planted delta the federation is trying to learn.
    pub fn target_delta(&self) -> Matrix {
        self.teacher.sub(&self.w0).expect("shapes match")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = ToyTask::generate(4, 8, 2, 3, 12, 5).unwrap();
        let b = ToyTask::generate(4, 8, 2, 3, 12, 5).unwrap();
        let c = ToyTask::generate(4, 8, 2, 3, 12, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn teacher_delta_has_the_planted_rank_and_norm() {
        let task = ToyTask::generate(6, 10, 2, 2, 8, 1).unwrap();
        let delta = task.target_delta();
        assert!((delta.frobenius_norm() - 1.0).abs() < 1e-9);
        let svd = delta.svd().unwrap();
        let positive = svd.sigma.iter().filter(|s| **s > 1e-9).count();
        assert_eq!(positive, 2);
    }

    #[test]
    fn targets_are_noise_free() {
        let task = ToyTask::generate(3, 5, 1, 2, 7, 9).unwrap();
        let reproduced = task.teacher.matmul(&task.data.x).unwrap();
        assert_eq!(reproduced, task.data.y);
    }

    #[test]
    fn subset_extracts_the_right_columns() {
        let task = ToyTask::generate(3, 5, 1, 2, 7, 9).unwrap();
        let set = task.data.subset(&[2, 5]).unwrap();
        assert_eq!(set.len(), 2);
        for r in 0..5 {
            assert_eq!(set.x.get(r, 0), task.data.x.get(r, 2));
            assert_eq!(set.x.get(r, 1), task.data.x.get(r, 5));
        }
        assert!(task.data.subset(&[7]).is_err());
    }

    #[test]
    fn rejects_oversized_teacher_rank() {
        assert!(ToyTask::generate(2, 5, 3, 2, 4, 0).is_err());
    }
}
