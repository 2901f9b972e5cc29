//! Base classifiers: anything that maps inputs to a probability simplex and can
//! differentiate class probabilities with respect to its input.
//!
//! [`Mlp`] is the concrete network: fully connected layers with a smooth
//! activation and a softmax head, trained by minibatch SGD on
//! Gaussian-augmented inputs.

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::sampling::{normal_matrix, stream_rng};
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

/// A base classifier evaluated on batches (one input per row).
pub trait SoftClassifier {
    fn input_dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Class probabilities, `n × K`.
    fn probs_batch(&self, inputs: &DMatrix<f64>) -> DMatrix<f64>;

    /// Class probabilities plus, for each requested class `c`, the `n × d`
    /// matrix whose rows are `∇ₓ F_c` at the corresponding input.
    fn prob_grads_batch(&self, inputs: &DMatrix<f64>, classes: &[usize]) -> (DMatrix<f64>, Vec<DMatrix<f64>>);

    /// Class probabilities and the rows of `∇ₓ Σ_c w_c F_c`, where
    /// `weights` picks the `(c, w_c)` pairs after seeing the probabilities.
    fn weighted_grad_batch(
        &self,
        inputs: &DMatrix<f64>,
        weights: &mut dyn FnMut(&DMatrix<f64>) -> Vec<(usize, f64)>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let w = weights(&self.probs_batch(inputs));
        let classes: Vec<usize> = w.iter().map(|&(c, _)| c).collect();
        let (probs, grads) = self.prob_grads_batch(inputs, &classes);
        let mut g = DMatrix::zeros(inputs.nrows(), inputs.ncols());
        for (gc, &(_, wc)) in grads.iter().zip(&w) {
            g += gc * wc;
        }
        (probs, g)
    }
}

/// Hidden-layer nonlinearity. Both choices are smooth so input gradients exist everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Softplus => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Softplus),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            // through expm1: as accurate as libm's tanh and cheaper
            Activation::Tanh => {
                let e = libm::expm1(-2.0 * libm::fabs(z));
                libm::copysign(-e / (2.0 + e), z)
            }
            Activation::Softplus => {
                if z > 30.0 {
                    z
                } else {
                    libm::log1p(libm::exp(z))
                }
            }
        }
    }

    // derivative expressed through the activation value a = apply(z)
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            // a = log(1 + e^z), so sigmoid(z) = 1 − e^{−a}
            Activation::Softplus => -libm::expm1(-a),
        }
    }
}

/// Fully connected network `d → hidden… → K` with softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    /// `out × in` per layer.
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    activation: Activation,
}

struct Tape {
    /// Layer inputs: `inputs[0]` is the batch, `inputs[l]` the activated output of layer `l-1`.
    inputs: Vec<DMatrix<f64>>,
    probs: DMatrix<f64>,
}

fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut row in p.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            total += *v;
        }
        row /= total;
    }
    p
}

impl Mlp {
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<DMatrix<f64>>,
        biases: Vec<DVector<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config("need at least an input and an output layer, all positive".into()));
        }
        let layers = layer_dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::Config(alloc::format!(
                "expected {layers} weight/bias pairs, got {}/{}",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..layers {
            let (rows, cols) = weights[l].shape();
            if rows != layer_dims[l + 1] || cols != layer_dims[l] || biases[l].len() != layer_dims[l + 1] {
                return Err(Error::Config(alloc::format!("layer {l} shapes do not chain")));
            }
        }
        Ok(Self { layer_dims, weights, biases, activation })
    }

    /// All weights and biases zero: the output is uniform over classes.
    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        let weights = layer_dims.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect();
        let biases = layer_dims[1..].iter().map(|&o| DVector::zeros(o)).collect();
        Self::from_parts(layer_dims.to_vec(), weights, biases, activation)
    }

    /// Gaussian initialization with variance `1/fan_in`, zero biases.
    pub fn random(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, 0);
        let weights = layer_dims
            .windows(2)
            .map(|w| normal_matrix(&mut rng, w[1], w[0]) / libm::sqrt(w[0] as f64))
            .collect();
        let biases = layer_dims[1..].iter().map(|&o| DVector::zeros(o)).collect();
        Self::from_parts(layer_dims.to_vec(), weights, biases, activation)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Classifier seen in rotated coordinates: `F'(y) = F(Qᵀ y)`.
    pub fn rotate_input(&self, q: &DMatrix<f64>) -> Result<Self> {
        let d = self.layer_dims[0];
        if q.shape() != (d, d) {
            return Err(Error::DimMismatch { expected: d, got: q.nrows() });
        }
        let mut out = self.clone();
        out.weights[0] = &self.weights[0] * q.transpose();
        Ok(out)
    }

    fn check_batch(&self, inputs: &DMatrix<f64>) {
        assert_eq!(inputs.ncols(), self.layer_dims[0], "batch width must equal the input dimension");
    }

    fn run(&self, inputs: &DMatrix<f64>) -> Tape {
        let layers = self.weights.len();
        let mut logits = None;
        let mut acts = Vec::with_capacity(layers);
        acts.push(inputs.clone());
        for l in 0..layers {
            let mut z = &acts[l] * self.weights[l].transpose();
            for (j, &b) in self.biases[l].iter().enumerate() {
                z.column_mut(j).add_scalar_mut(b);
            }
            if l + 1 < layers {
                acts.push(z.map(|v| self.activation.apply(v)));
            } else {
                logits = Some(z);
            }
        }
        let probs = softmax_rows(&logits.expect("at least one layer"));
        Tape { inputs: acts, probs }
    }

    /// Propagates `∂/∂logits` back to the input (`n × d`). When `param_grads`
    /// is given it also accumulates weight and bias gradients summed over rows.
    fn backward(&self, tape: &Tape, mut g: DMatrix<f64>, mut param_grads: Option<&mut [(DMatrix<f64>, DVector<f64>)]>) -> DMatrix<f64> {
        for l in (0..self.weights.len()).rev() {
            if let Some(pg) = param_grads.as_deref_mut() {
                pg[l].0 += g.transpose() * &tape.inputs[l];
                for (j, col) in g.column_iter().enumerate() {
                    pg[l].1[j] += col.sum();
                }
            }
            let mut down = &g * &self.weights[l];
            if l > 0 {
                let act = self.activation;
                down.zip_apply(&tape.inputs[l], |d, a| *d *= act.derivative(a));
            }
            g = down;
        }
        g
    }

    /// Class probabilities for a single input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.layer_dims[0];
        if x.len() != d {
            return Err(Error::DimMismatch { expected: d, got: x.len() });
        }
        let p = self.probs_batch(&DMatrix::from_row_slice(1, d, x));
        Ok(p.row(0).iter().copied().collect())
    }

    /// `∇ₓ F_class(x)` by backpropagation.
    pub fn input_gradient(&self, x: &[f64], class_index: usize) -> Result<Vec<f64>> {
        let d = self.layer_dims[0];
        if x.len() != d {
            return Err(Error::DimMismatch { expected: d, got: x.len() });
        }
        let k = self.num_classes();
        if class_index >= k {
            return Err(Error::DimMismatch { expected: k, got: class_index });
        }
        let (_, grads) = self.prob_grads_batch(&DMatrix::from_row_slice(1, d, x), &[class_index]);
        Ok(grads[0].row(0).iter().copied().collect())
    }

    /// Fraction of samples whose argmax prediction equals the label.
    pub fn accuracy(&self, data: &LabeledDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut correct = 0usize;
        for chunk in idx.chunks(1024) {
            let p = self.probs_batch(&data.batch(chunk));
            for (r, &i) in chunk.iter().enumerate() {
                if argmax(p.row(r).iter().copied()) == data.samples[i].label {
                    correct += 1;
                }
            }
        }
        correct as f64 / data.len() as f64
    }
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

impl SoftClassifier for Mlp {
    fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    fn num_classes(&self) -> usize {
        *self.layer_dims.last().expect("at least two layers")
    }

    fn probs_batch(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        self.check_batch(inputs);
        self.run(inputs).probs
    }

    fn prob_grads_batch(&self, inputs: &DMatrix<f64>, classes: &[usize]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        self.check_batch(inputs);
        let tape = self.run(inputs);
        let grads = classes.iter().map(|&c| self.backward(&tape, logit_grad(&tape.probs, &[(c, 1.0)]), None)).collect();
        (tape.probs, grads)
    }

    fn weighted_grad_batch(
        &self,
        inputs: &DMatrix<f64>,
        weights: &mut dyn FnMut(&DMatrix<f64>) -> Vec<(usize, f64)>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        self.check_batch(inputs);
        let tape = self.run(inputs);
        let w = weights(&tape.probs);
        let g = self.backward(&tape, logit_grad(&tape.probs, &w), None);
        (tape.probs, g)
    }
}

/// `∂(Σ_c w_c p_c)/∂logit_j = Σ_c w_c p_c (δ_cj − p_j)`, row by row.
fn logit_grad(probs: &DMatrix<f64>, w: &[(usize, f64)]) -> DMatrix<f64> {
    let (n, k) = probs.shape();
    let mut g = DMatrix::zeros(n, k);
    for i in 0..n {
        let s: f64 = w.iter().map(|&(c, wc)| wc * probs[(i, c)]).sum();
        for j in 0..k {
            g[(i, j)] = -s * probs[(i, j)];
        }
        for &(c, wc) in w {
            g[(i, c)] += wc * probs[(i, c)];
        }
    }
    g
}

/// Minibatch SGD settings for Gaussian-augmented training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Standard deviation of the input noise added to every example each epoch; 0 disables it.
    pub sigma_aug: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sigma_aug: 0.25,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.1,
            seed: 0,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
        }
    }
}

/// Trains an [`Mlp`] with cross-entropy on noisy copies of the data.
///
/// Deterministic in `cfg.seed`: initialization, epoch shuffles and noise all
/// come from separate seeded streams.
pub fn train(data: &LabeledDataset, cfg: &TrainConfig) -> Result<Mlp> {
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    data.validate()?;
    if !(cfg.sigma_aug >= 0.0) || cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("sigma_aug must be >= 0; epochs, batch_size and learning_rate positive".into()));
    }
    let mut dims = Vec::with_capacity(cfg.hidden.len() + 2);
    dims.push(data.dim);
    dims.extend_from_slice(&cfg.hidden);
    dims.push(data.num_classes);
    let mut net = Mlp::random(&dims, cfg.activation, cfg.seed)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = stream_rng(cfg.seed, 1 + 2 * epoch as u64);
        let mut noise_rng = stream_rng(cfg.seed, 2 + 2 * epoch as u64);
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut x = data.batch(chunk);
            if cfg.sigma_aug > 0.0 {
                x += normal_matrix(&mut noise_rng, chunk.len(), data.dim) * cfg.sigma_aug;
            }
            let tape = net.run(&x);
            // cross-entropy: ∂L/∂logits = p − onehot
            let mut g = tape.probs.clone();
            for (r, &i) in chunk.iter().enumerate() {
                g[(r, data.samples[i].label)] -= 1.0;
            }
            g /= chunk.len() as f64;
            let mut pg: Vec<(DMatrix<f64>, DVector<f64>)> = net
                .weights
                .iter()
                .map(|w| (DMatrix::zeros(w.nrows(), w.ncols()), DVector::zeros(w.nrows())))
                .collect();
            net.backward(&tape, g, Some(&mut pg));
            for (l, (gw, gb)) in pg.into_iter().enumerate() {
                net.weights[l] -= gw * cfg.learning_rate;
                net.biases[l] -= gb * cfg.learning_rate;
            }
        }
        if net.weights.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(alloc::format!("weights diverged in epoch {epoch}")));
        }
    }
    Ok(net)
}

const MAGIC_PREFIX: &[u8; 6] = b"SMCERT";
const VERSION: &[u8; 2] = b"01";

impl Mlp {
    /// Versioned binary encoding: `SMCERT01`, then little-endian `u32` dim count,
    /// `u32` dims, activation tag byte, and per layer the row-major weights
    /// followed by the bias, all as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let params: usize = self.weights.iter().map(|w| w.len() + w.nrows()).sum();
        let mut out = Vec::with_capacity(8 + 4 + 4 * self.layer_dims.len() + 1 + 8 * params);
        out.extend_from_slice(MAGIC_PREFIX);
        out.extend_from_slice(VERSION);
        out.extend_from_slice(&(self.layer_dims.len() as u32).to_le_bytes());
        for &d in &self.layer_dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(self.activation.tag());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.extend_from_slice(&w[(r, c)].to_le_bytes());
                }
            }
            for v in b.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8)?;
        if &magic[..6] != MAGIC_PREFIX {
            return Err(Error::Format("bad magic bytes".into()));
        }
        if &magic[6..8] != VERSION {
            return Err(Error::Format(alloc::format!(
                "unsupported model version {:?}",
                core::str::from_utf8(&magic[6..8]).unwrap_or("??")
            )));
        }
        let count = cur.u32()? as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Format(alloc::format!("implausible layer count {count}")));
        }
        let mut dims = Vec::with_capacity(count);
        for _ in 0..count {
            let d = cur.u32()? as usize;
            if d == 0 || d > 1 << 20 {
                return Err(Error::Format(alloc::format!("implausible layer width {d}")));
            }
            dims.push(d);
        }
        let tag = cur.take(1)?[0];
        let activation = Activation::from_tag(tag).ok_or_else(|| Error::Format(alloc::format!("unknown activation tag {tag}")))?;
        let mut weights = Vec::with_capacity(count - 1);
        let mut biases = Vec::with_capacity(count - 1);
        for w in dims.windows(2) {
            let (inp, out) = (w[0], w[1]);
            let mut m = DMatrix::zeros(out, inp);
            for r in 0..out {
                for c in 0..inp {
                    m[(r, c)] = cur.f64()?;
                }
            }
            let mut b = DVector::zeros(out);
            for v in b.iter_mut() {
                *v = cur.f64()?;
            }
            weights.push(m);
            biases.push(b);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(alloc::format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Self::from_parts(dims, weights, biases, activation).map_err(|e| Error::Format(alloc::format!("{e}")))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(alloc::format!("truncated at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::sampling::stream_rng;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = stream_rng(seed, 0);
        let z = normal_matrix(&mut rng, n, 2);
        let samples = (0..n)
            .map(|i| {
                let label = i % 2;
                let cx = if label == 0 { -2.0 } else { 2.0 };
                Sample { x: vec![cx + 0.5 * z[(i, 0)], 0.5 * z[(i, 1)]], label }
            })
            .collect();
        LabeledDataset::new("blobs", 2, 2, samples).unwrap()
    }

    #[test]
    fn weighted_gradient_is_one_backward_of_the_combination() {
        for act in [Activation::Tanh, Activation::Softplus] {
            let net = Mlp::random(&[3, 7, 5, 4], act, 11).unwrap();
            let y = normal_matrix(&mut stream_rng(3, 0), 20, 3);
            let w = [(2, 0.7), (0, -1.3)];
            let (p, g) = net.weighted_grad_batch(&y, &mut |_| w.to_vec());
            let (p2, gs) = net.prob_grads_batch(&y, &[2, 0]);
            assert_eq!(p, p2);
            let want = &gs[0] * 0.7 - &gs[1] * 1.3;
            assert!((g - want).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = Mlp::zeros(&[3, 5, 4], Activation::Tanh).unwrap();
        let p = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let g = net.input_gradient(&[0.3, -1.0, 2.0], 2).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_logits() {
        let w = DMatrix::identity(2, 2);
        let net = Mlp::from_parts(vec![2, 2], vec![w], vec![DVector::zeros(2)], Activation::Tanh).unwrap();
        let p = net.forward(&[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn outputs_on_simplex() {
        let net = Mlp::random(&[4, 8, 8, 5], Activation::Softplus, 3).unwrap();
        let mut rng = stream_rng(4, 0);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
            let p = net.forward(&x).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn dim_errors() {
        let net = Mlp::random(&[3, 4, 2], Activation::Tanh, 0).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimMismatch { .. })));
        assert!(net.input_gradient(&[1.0, 2.0, 3.0], 2).is_err());
        assert!(Mlp::from_parts(vec![2, 2], vec![DMatrix::zeros(3, 2)], vec![DVector::zeros(2)], Activation::Tanh).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream_rng(99, 0);
        for trial in 0..50u64 {
            let act = if trial % 2 == 0 { Activation::Tanh } else { Activation::Softplus };
            let net = Mlp::random(&[3, 7, 5, 4], act, trial).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let c = (trial % 4) as usize;
            let g = net.input_gradient(&x, c).unwrap();
            let h = 1e-6;
            let fd: Vec<f64> = (0..3)
                .map(|i| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    (net.forward(&xp).unwrap()[c] - net.forward(&xm).unwrap()[c]) / (2.0 * h)
                })
                .collect();
            let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
            assert!(num / den <= 1e-4, "trial {trial}: rel err {}", num / den);
        }
    }

    #[test]
    fn class_gradients_sum_to_zero() {
        let net = Mlp::random(&[3, 6, 4], Activation::Tanh, 8).unwrap();
        let x = DMatrix::from_row_slice(2, 3, &[0.1, -0.4, 1.2, 2.0, 0.0, -1.0]);
        let (_, grads) = net.prob_grads_batch(&x, &[0, 1, 2, 3]);
        let total = grads.iter().fold(DMatrix::zeros(2, 3), |acc, g| acc + g);
        assert!(total.norm() < 1e-15 * 100.0);
    }

    #[test]
    fn rotated_network_sees_rotated_inputs() {
        let net = Mlp::random(&[2, 5, 3], Activation::Tanh, 2).unwrap();
        let q = crate::sampling::rotation_2d(30.0);
        let rot = net.rotate_input(&q).unwrap();
        let x = [0.7, -0.2];
        let qx = &q * DVector::from_column_slice(&x);
        let a = net.forward(&x).unwrap();
        let b = rot.forward(qx.as_slice()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn trains_separable_blobs() {
        let data = blobs(200, 1);
        let cfg = TrainConfig { sigma_aug: 0.12, epochs: 20, hidden: vec![16], ..TrainConfig::default() };
        let net = train(&data, &cfg).unwrap();
        assert!(net.accuracy(&data) >= 0.95);
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(64, 2);
        let cfg = TrainConfig { epochs: 3, hidden: vec![8], ..TrainConfig::default() };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let other = train(&data, &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.to_bytes(), other.to_bytes());
    }

    #[test]
    fn zero_sigma_is_plain_erm() {
        // With no noise the noise stream is never consumed, so the result only
        // depends on the shuffle and initialization streams.
        let data = blobs(32, 3);
        let cfg = TrainConfig { sigma_aug: 0.0, epochs: 2, hidden: vec![4], ..TrainConfig::default() };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &TrainConfig { sigma_aug: 1e-300, ..cfg.clone() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_rejects_bad_input() {
        let empty = LabeledDataset { name: "e".into(), dim: 2, num_classes: 2, samples: vec![] };
        assert!(matches!(train(&empty, &TrainConfig::default()), Err(Error::Config(_))));
        let mut bad = blobs(4, 0);
        bad.samples[0].x.push(1.0);
        assert!(train(&bad, &TrainConfig::default()).is_err());
    }

    #[test]
    fn bytes_round_trip() {
        let net = Mlp::random(&[3, 4, 2], Activation::Softplus, 5).unwrap();
        let bytes = net.to_bytes();
        assert_eq!(&bytes[..8], b"SMCERT01");
        let back = Mlp::from_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.forward(&[0.1, 0.2, 0.3]).unwrap(), net.forward(&[0.1, 0.2, 0.3]).unwrap());
    }

    #[test]
    fn corrupt_bytes_rejected() {
        let net = Mlp::random(&[3, 4, 2], Activation::Tanh, 5).unwrap();
        let bytes = net.to_bytes();
        assert!(matches!(Mlp::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut v = bytes.clone();
        v[7] = b'2';
        assert!(matches!(Mlp::from_bytes(&v), Err(Error::Format(_))));
        let mut v = bytes.clone();
        v[0] = b'X';
        assert!(matches!(Mlp::from_bytes(&v), Err(Error::Format(_))));
        let mut v = bytes;
        v.push(0);
        assert!(matches!(Mlp::from_bytes(&v), Err(Error::Format(_))));
    }
}
