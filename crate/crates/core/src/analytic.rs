//! Closed-form base classifiers whose smoothed probabilities are known exactly.
//! They back the oracle tests of the smoothing and optimization code.

use crate::classifier::SoftClassifier;
use crate::stats::{std_normal_cdf, std_normal_pdf};
use alloc::vec::Vec;
use nalgebra::DMatrix;

/// `F ≡ e_class` everywhere.
#[derive(Debug, Clone)]
pub struct ConstantClassifier {
    pub dim: usize,
    pub classes: usize,
    pub class: usize,
}

impl ConstantClassifier {
    pub fn new(dim: usize, classes: usize, class: usize) -> Self {
        assert!(class < classes);
        Self { dim, classes, class }
    }
}

impl SoftClassifier for ConstantClassifier {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn probs_batch(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(inputs.nrows(), self.classes);
        p.column_mut(self.class).fill(1.0);
        p
    }

    fn prob_grads_batch(&self, inputs: &DMatrix<f64>, classes: &[usize]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let grads = classes.iter().map(|_| DMatrix::zeros(inputs.nrows(), self.dim)).collect();
        (self.probs_batch(inputs), grads)
    }
}

/// Hard two-class step in one dimension: class 0 iff `x < boundary`.
/// Smoothing with `N(0, σ²)` at `x` gives `G_0 = Φ((b − x)/σ)`.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdClassifier {
    pub boundary: f64,
}

/// Smooth version of [`ThresholdClassifier`] on a linear projection: the
/// class-0 score is `Φ((b − ⟨w, x⟩)/s)`. For unit `w`, smoothing with
/// `N(0, σ² I)` gives `Φ((b − ⟨w, x⟩)/√(σ² + s²))`.
#[derive(Debug, Clone)]
pub struct ProbitClassifier {
    pub direction: Vec<f64>,
    pub boundary: f64,
    pub softness: f64,
}

impl SoftClassifier for ThresholdClassifier {
    fn input_dim(&self) -> usize {
        1
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn probs_batch(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(inputs.nrows(), 2);
        for i in 0..inputs.nrows() {
            let a = if inputs[(i, 0)] < self.boundary { 1.0 } else { 0.0 };
            p[(i, 0)] = a;
            p[(i, 1)] = 1.0 - a;
        }
        p
    }

    fn prob_grads_batch(&self, inputs: &DMatrix<f64>, classes: &[usize]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let grads = classes.iter().map(|_| DMatrix::zeros(inputs.nrows(), 1)).collect();
        (self.probs_batch(inputs), grads)
    }
}

impl ProbitClassifier {
    fn score(&self, row: impl Iterator<Item = f64>) -> f64 {
        let proj: f64 = row.zip(&self.direction).map(|(x, w)| x * w).sum();
        (self.boundary - proj) / self.softness
    }
}

impl SoftClassifier for ProbitClassifier {
    fn input_dim(&self) -> usize {
        self.direction.len()
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn probs_batch(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(inputs.nrows(), 2);
        for i in 0..inputs.nrows() {
            let a = std_normal_cdf(self.score(inputs.row(i).iter().copied()));
            p[(i, 0)] = a;
            p[(i, 1)] = 1.0 - a;
        }
        p
    }

    fn prob_grads_batch(&self, inputs: &DMatrix<f64>, classes: &[usize]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let (n, d) = inputs.shape();
        let mut g0 = DMatrix::zeros(n, d);
        for i in 0..n {
            let dens = std_normal_pdf(self.score(inputs.row(i).iter().copied())) / self.softness;
            for j in 0..d {
                g0[(i, j)] = -dens * self.direction[j];
            }
        }
        let grads = classes.iter().map(|&c| if c == 0 { g0.clone() } else { -g0.clone() }).collect();
        (self.probs_batch(inputs), grads)
    }
}

/// Two-class radial model: class 0 iff `‖x‖² < radius²`, blurred by `softness`.
/// Invariant under any orthogonal map, in particular coordinate permutations.
#[derive(Debug, Clone, Copy)]
pub struct RadialClassifier {
    pub dim: usize,
    pub radius: f64,
    pub softness: f64,
}

impl RadialClassifier {
    fn score(&self, sq: f64) -> f64 {
        (self.radius * self.radius - sq) / self.softness
    }
}

impl SoftClassifier for RadialClassifier {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn probs_batch(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(inputs.nrows(), 2);
        for i in 0..inputs.nrows() {
            let a = std_normal_cdf(self.score(inputs.row(i).norm_squared()));
            p[(i, 0)] = a;
            p[(i, 1)] = 1.0 - a;
        }
        p
    }

    fn prob_grads_batch(&self, inputs: &DMatrix<f64>, classes: &[usize]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let (n, d) = inputs.shape();
        let mut g0 = DMatrix::zeros(n, d);
        for i in 0..n {
            let dens = std_normal_pdf(self.score(inputs.row(i).norm_squared())) / self.softness;
            for j in 0..d {
                g0[(i, j)] = -2.0 * dens * inputs[(i, j)];
            }
        }
        let grads = classes.iter().map(|&c| if c == 0 { g0.clone() } else { -g0.clone() }).collect();
        (self.probs_batch(inputs), grads)
    }
}
