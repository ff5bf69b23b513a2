//! Synthetic non-IID federated objective.
//!
//! Every client `c` owns a quadratic `f_c(w) = ½ (w − θ_c)ᵀ A_c (w − θ_c)`
//! with a symmetric positive-definite `A_c`. The global objective is the
//! cardinality-weighted mean of the client objectives, so its minimizer has a
//! closed form and convergence of any strategy can be checked exactly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{work_units, ClientId, ModelParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("dimension must be at least 1")]
    InvalidDimension,
    #[error("task needs at least one client")]
    EmptyClients,
    #[error("expected dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("unknown client {0}")]
    UnknownClient(ClientId),
    #[error("invalid task option: {0}")]
    InvalidOption(String),
    #[error("normal equations are singular")]
    SingularSystem,
}

/// Shape knobs for task generation that are not part of the client pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOptions {
    /// Eigenvalue range of every `A_c`; `hi / lo` bounds the condition number.
    pub eig_range: (f64, f64),
    /// Components of the common center are drawn from `[-scale, scale]`.
    pub center_scale: f64,
}

impl Default for TaskOptions {
    fn default() -> Self {
        Self {
            eig_range: (0.1, 1.0),
            center_scale: 2.0,
        }
    }
}

impl TaskOptions {
    pub fn validate(&self) -> Result<(), TaskError> {
        let (lo, hi) = self.eig_range;
        if !(lo > 0.0 && hi >= lo && hi / lo <= 100.0) {
            return Err(TaskError::InvalidOption(format!(
                "eigenvalue range ({lo}, {hi}) must be positive with condition number <= 100"
            )));
        }
        if !(self.center_scale >= 0.0 && self.center_scale.is_finite()) {
            return Err(TaskError::InvalidOption("center scale must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LocalObjective {
    pub curvature: DMatrix<f64>,
    pub optimum: DVector<f64>,
    pub cardinality: u32,
    /// Largest eigenvalue of `curvature`.
    pub lambda_max: f64,
}

impl LocalObjective {
    pub fn loss(&self, w: &DVector<f64>) -> f64 {
        let diff = w - &self.optimum;
        0.5 * diff.dot(&(&self.curvature * &diff))
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.curvature * (w - &self.optimum)
    }
}

#[derive(Debug, Clone)]
pub struct FederatedTask {
    dim: usize,
    clients: Vec<LocalObjective>,
}

impl FederatedTask {
    /// Builds a task with default [`TaskOptions`].
    pub fn generate(
        dim: usize,
        spread: f64,
        cardinalities: &[u32],
        seed: u64,
    ) -> Result<Self, TaskError> {
        Self::generate_with(dim, spread, cardinalities, seed, &TaskOptions::default())
    }

    pub fn generate_with(
        dim: usize,
        spread: f64,
        cardinalities: &[u32],
        seed: u64,
        options: &TaskOptions,
    ) -> Result<Self, TaskError> {
        if dim == 0 {
            return Err(TaskError::InvalidDimension);
        }
        if cardinalities.is_empty() {
            return Err(TaskError::EmptyClients);
        }
        if !(spread >= 0.0 && spread.is_finite()) {
            return Err(TaskError::InvalidOption("spread must be non-negative".into()));
        }
        options.validate()?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = options.center_scale;
        let center: DVector<f64> =
            DVector::from_fn(dim, |_, _| if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 });
        let (lo, hi) = options.eig_range;

        let clients = cardinalities
            .iter()
            .map(|&n| {
                let offset = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let optimum = &center + offset * spread;
                let gaussian = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let q = gaussian.qr().q();
                let eigs: Vec<f64> = (0..dim)
                    .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                    .collect();
                let diag = DMatrix::from_diagonal(&DVector::from_vec(eigs.clone()));
                let a = &q * diag * q.transpose();
                // Symmetrize away rounding noise.
                let curvature = (&a + a.transpose()) * 0.5;
                let lambda_max = eigs.iter().cloned().fold(f64::MIN, f64::max);
                LocalObjective {
                    curvature,
                    optimum,
                    cardinality: n,
                    lambda_max,
                }
            })
            .collect();

        Ok(Self { dim, clients })
    }

    /// Builds a task from explicit objectives.
    pub fn from_objectives(
        objectives: Vec<(DMatrix<f64>, DVector<f64>, u32)>,
    ) -> Result<Self, TaskError> {
        let dim = objectives.first().ok_or(TaskError::EmptyClients)?.1.len();
        if dim == 0 {
            return Err(TaskError::InvalidDimension);
        }
        let mut clients = Vec::with_capacity(objectives.len());
        for (a, theta, n) in objectives {
            if a.nrows() != dim || a.ncols() != dim || theta.len() != dim {
                return Err(TaskError::DimensionMismatch {
                    expected: dim,
                    actual: theta.len(),
                });
            }
            let lambda_max = a.clone().symmetric_eigenvalues().max();
            clients.push(LocalObjective {
                curvature: a,
                optimum: theta,
                cardinality: n,
                lambda_max,
            });
        }
        Ok(Self { dim, clients })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn objective(&self, client: ClientId) -> Result<&LocalObjective, TaskError> {
        self.clients
            .get(client.index())
            .ok_or(TaskError::UnknownClient(client))
    }

    pub fn objectives(&self) -> &[LocalObjective] {
        &self.clients
    }

    /// Largest curvature eigenvalue over all clients.
    pub fn lambda_max(&self) -> f64 {
        self.clients
            .iter()
            .map(|c| c.lambda_max)
            .fold(f64::MIN, f64::max)
    }

    fn check_dim(&self, w: &ModelParams) -> Result<(), TaskError> {
        if w.dim() != self.dim {
            return Err(TaskError::DimensionMismatch {
                expected: self.dim,
                actual: w.dim(),
            });
        }
        Ok(())
    }

    /// Runs `ceil(N_c * E / B)` full-batch gradient steps on the client
    /// objective plus an optional proximal term anchored at `anchor`.
    ///
    /// Returns the trained parameters and the number of steps taken.
    #[allow(clippy::too_many_arguments)]
    pub fn local_train(
        &self,
        client: ClientId,
        w: &ModelParams,
        epochs: u32,
        batch_size: u32,
        lr: f64,
        prox_mu: f64,
        anchor: &ModelParams,
    ) -> Result<(ModelParams, u64), TaskError> {
        self.check_dim(w)?;
        self.check_dim(anchor)?;
        if !(lr > 0.0) || !(prox_mu >= 0.0) || batch_size == 0 {
            return Err(TaskError::InvalidOption(
                "learning rate and batch size must be positive, prox_mu non-negative".into(),
            ));
        }
        let objective = self.objective(client)?;
        let steps = work_units(objective.cardinality, epochs, batch_size);
        let anchor = DVector::from_column_slice(anchor.as_slice());
        let mut current = DVector::from_column_slice(w.as_slice());
        for _ in 0..steps {
            let mut grad = objective.gradient(&current);
            if prox_mu > 0.0 {
                grad += (&current - &anchor) * prox_mu;
            }
            current -= grad * lr;
        }
        Ok((ModelParams(current.as_slice().to_vec()), steps))
    }

    fn total_cardinality(&self) -> f64 {
        self.clients.iter().map(|c| c.cardinality as f64).sum()
    }

    pub fn global_loss(&self, w: &ModelParams) -> Result<f64, TaskError> {
        self.check_dim(w)?;
        let w = DVector::from_column_slice(w.as_slice());
        let n = self.total_cardinality();
        let loss = self
            .clients
            .iter()
            .map(|c| c.cardinality as f64 / n * c.loss(&w))
            .sum::<f64>();
        Ok(loss.max(0.0))
    }

    /// Solves `(Σ p_c A_c) w = Σ p_c A_c θ_c` with `p_c = n_c / n`.
    pub fn closed_form_optimum(&self) -> Result<ModelParams, TaskError> {
        let n = self.total_cardinality();
        let mut hessian = DMatrix::<f64>::zeros(self.dim, self.dim);
        let mut rhs = DVector::<f64>::zeros(self.dim);
        for c in &self.clients {
            let p = c.cardinality as f64 / n;
            hessian += &c.curvature * p;
            rhs += &c.curvature * &c.optimum * p;
        }
        let chol = hessian
            .clone()
            .cholesky()
            .ok_or(TaskError::SingularSystem)?;
        let solution = chol.solve(&rhs);
        let residual = (&hessian * &solution - &rhs).norm();
        if !(residual <= 1e-10 * (1.0 + rhs.norm())) {
            return Err(TaskError::SingularSystem);
        }
        Ok(ModelParams(solution.as_slice().to_vec()))
    }

    pub fn optimum_loss(&self) -> Result<f64, TaskError> {
        self.global_loss(&self.closed_form_optimum()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest, ProptestConfig};
    use rand::Rng;

    fn identity_task(thetas: &[[f64; 2]], n: &[u32]) -> FederatedTask {
        FederatedTask::from_objectives(
            thetas
                .iter()
                .zip(n)
                .map(|(t, &n)| (DMatrix::identity(2, 2), DVector::from_row_slice(t), n))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_spread_gives_identical_optima() {
        let task = FederatedTask::generate(3, 0.0, &[10, 20, 30], 5).unwrap();
        let first = &task.objectives()[0].optimum;
        for c in task.objectives() {
            assert_eq!(&c.optimum, first);
        }
        let opt = task.closed_form_optimum().unwrap();
        for (a, b) in opt.as_slice().iter().zip(first.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = FederatedTask::generate(4, 1.0, &[5, 6, 7], 42).unwrap();
        let b = FederatedTask::generate(4, 1.0, &[5, 6, 7], 42).unwrap();
        for (x, y) in a.objectives().iter().zip(b.objectives()) {
            assert_eq!(x.curvature, y.curvature);
            assert_eq!(x.optimum, y.optimum);
        }
    }

    #[test]
    fn generation_errors() {
        assert_eq!(
            FederatedTask::generate(0, 1.0, &[1], 0).unwrap_err(),
            TaskError::InvalidDimension
        );
        assert_eq!(
            FederatedTask::generate(2, 1.0, &[], 0).unwrap_err(),
            TaskError::EmptyClients
        );
    }

    #[test]
    fn curvature_is_spd_with_bounded_condition() {
        let task = FederatedTask::generate(5, 1.0, &[1; 8], 3).unwrap();
        for c in task.objectives() {
            let eig = c.curvature.clone().symmetric_eigenvalues();
            assert!(eig.min() > 0.0);
            assert!(eig.max() / eig.min() <= 100.0 + 1e-9);
            assert!((eig.max() - c.lambda_max).abs() < 1e-9);
        }
    }

    #[test]
    fn local_train_fixed_point_and_single_step() {
        let task = identity_task(&[[1.0, 1.0]], &[200]);
        let theta = ModelParams(vec![1.0, 1.0]);
        let (w, units) = task
            .local_train(ClientId(0), &theta, 5, 10, 0.1, 0.0, &theta)
            .unwrap();
        assert_eq!(units, 100);
        assert_eq!(w, theta);

        let single = identity_task(&[[1.0, 1.0]], &[1]);
        let zero = ModelParams::zeros(2);
        let (w, units) = single
            .local_train(ClientId(0), &zero, 1, 1, 0.1, 0.0, &zero)
            .unwrap();
        assert_eq!(units, 1);
        assert!((w.0[0] - 0.1).abs() < 1e-15 && (w.0[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn local_train_errors() {
        let task = identity_task(&[[1.0, 1.0]], &[10]);
        let bad = ModelParams::zeros(3);
        let ok = ModelParams::zeros(2);
        assert!(matches!(
            task.local_train(ClientId(0), &bad, 1, 1, 0.1, 0.0, &ok),
            Err(TaskError::DimensionMismatch { .. })
        ));
        assert_eq!(
            task.local_train(ClientId(9), &ok, 1, 1, 0.1, 0.0, &ok).unwrap_err(),
            TaskError::UnknownClient(ClientId(9))
        );
    }

    #[test]
    fn global_loss_hand_values() {
        let task = identity_task(&[[0.0, 0.0], [2.0, 0.0]], &[5, 5]);
        let loss = task.global_loss(&ModelParams(vec![1.0, 0.0])).unwrap();
        assert!((loss - 0.5).abs() < 1e-15);
        let opt = task.closed_form_optimum().unwrap();
        assert!((opt.0[0] - 1.0).abs() < 1e-12 && opt.0[1].abs() < 1e-12);

        let single = identity_task(&[[3.0, -1.0]], &[4]);
        assert_eq!(single.global_loss(&ModelParams(vec![3.0, -1.0])).unwrap(), 0.0);
        assert_eq!(single.closed_form_optimum().unwrap(), ModelParams(vec![3.0, -1.0]));
    }

    #[test]
    fn optimum_beats_perturbations() {
        let task = FederatedTask::generate(3, 1.5, &[10, 40, 25, 5, 60], 11).unwrap();
        let opt = task.closed_form_optimum().unwrap();
        let best = task.global_loss(&opt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let delta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0) * 0.1).collect();
            let w = ModelParams(opt.0.iter().zip(&delta).map(|(a, b)| a + b).collect());
            assert!(best <= task.global_loss(&w).unwrap());
        }
    }

    #[test]
    fn prox_term_pulls_toward_anchor() {
        // A = I, θ = 2, anchor 0, μ = 1 → (A + μI)⁻¹(Aθ + μ·anchor) = 1.
        let task = FederatedTask::from_objectives(vec![(
            DMatrix::identity(1, 1),
            DVector::from_row_slice(&[2.0]),
            1000,
        )])
        .unwrap();
        let anchor = ModelParams(vec![0.0]);
        let (w, _) = task
            .local_train(ClientId(0), &anchor, 1, 1, 0.1, 1.0, &anchor)
            .unwrap();
        assert!((w.0[0] - 1.0).abs() < 1e-9);

        let mut previous = f64::INFINITY;
        for mu in [0.01, 0.1, 1.0, 10.0] {
            let lr = 0.5 / (1.0 + mu);
            let (w, _) = task
                .local_train(ClientId(0), &anchor, 1, 1, lr, mu, &anchor)
                .unwrap();
            let d = w.0[0].abs();
            assert!(d < previous, "mu {mu}: {d} !< {previous}");
            assert!(w.0[0] > 0.0 && w.0[0] < 2.0);
            previous = d;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn gradient_matches_finite_differences(seed in 0u64..1000, x in prop::collection::vec(-3.0f64..3.0, 4)) {
            let task = FederatedTask::generate(4, 1.0, &[1, 2], seed).unwrap();
            let obj = &task.objectives()[0];
            let w = DVector::from_vec(x);
            let grad = obj.gradient(&w);
            let h = 1e-5;
            for i in 0..4 {
                let mut plus = w.clone();
                plus[i] += h;
                let mut minus = w.clone();
                minus[i] -= h;
                let fd = (obj.loss(&plus) - obj.loss(&minus)) / (2.0 * h);
                let scale = grad[i].abs().max(1e-3);
                prop_assert!((fd - grad[i]).abs() / scale < 1e-6);
            }
        }

        #[test]
        fn small_steps_descend(seed in 0u64..1000, x in prop::collection::vec(-5.0f64..5.0, 3)) {
            let task = FederatedTask::generate(3, 2.0, &[1], seed).unwrap();
            let obj = &task.objectives()[0];
            let lr = 0.9 / obj.lambda_max;
            let mut w = ModelParams(x);
            let mut prev = obj.loss(&DVector::from_column_slice(w.as_slice()));
            for _ in 0..5 {
                let (next, _) = task.local_train(ClientId(0), &w, 1, 1, lr, 0.0, &w).unwrap();
                let loss = obj.loss(&DVector::from_column_slice(next.as_slice()));
                prop_assert!(loss < prev || prev < 1e-14);
                prev = loss;
                w = next;
            }
        }

        #[test]
        fn global_loss_is_convex(seed in 0u64..1000,
                                 a in prop::collection::vec(-5.0f64..5.0, 3),
                                 b in prop::collection::vec(-5.0f64..5.0, 3)) {
            let task = FederatedTask::generate(3, 1.0, &[3, 7, 1], seed).unwrap();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let fa = task.global_loss(&ModelParams(a)).unwrap();
            let fb = task.global_loss(&ModelParams(b)).unwrap();
            let fm = task.global_loss(&ModelParams(mid)).unwrap();
            prop_assert!(fm <= 0.5 * (fa + fb) + 1e-12);
        }
    }
}
