//! Per-input noise optimizers: scalar σ (DDRS), diagonal θ (ANCER) and full
//! SPD `C` by Riemannian ascent (RDDRS).
//!
//! All three work on soft Monte-Carlo estimates `Ĝ = (1/n) Σ F(x + S z_j)` and
//! differentiate them pathwise through `S`. Iteration `t` of every run draws
//! its noise from stream `t` of the run seed, so grid entries share common
//! random numbers and runs are bit-reproducible.

mod ancer;
mod ddrs;
mod rddrs;

pub use ancer::{ancer_optimize, AncerConfig};
pub use ddrs::{ddrs_optimize, DdrsConfig};
pub use rddrs::{
    det_root_riemannian_grad, lambda_min_riemannian_grad, rddrs_gradient, rddrs_objective, rddrs_optimize, rddrs_step,
    InitialCovariance, RddrsConfig, RddrsObjective,
};

use crate::classifier::SoftClassifier;
use crate::error::{Error, Result};
use crate::sampling::{normal_matrix, stream_rng};
use crate::smoothing::{perturbed_inputs, SmoothingSpec};
use crate::stats::{clamp_probability, clopper_pearson_lower, is_unclamped, std_normal_pdf, std_normal_quantile, PROB_EPS};
use alloc::vec::Vec;
use nalgebra::DMatrix;

/// One optimizer iteration, as dumped to JSON lines.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub h: f64,
    pub r: f64,
    pub p: f64,
    pub kmin: f64,
    pub lambda_min: f64,
    pub step_size: f64,
}

/// Output of a noise optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOptResult {
    pub spec: SmoothingSpec,
    /// Objective value per iteration of the selected run.
    pub objective_trace: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    /// Best isotropic radius from DDRS in the units of `R · P`: `σ* · 2Φ⁻¹(p_A)`
    /// at `σ* I` on the selection batch.
    pub r_iso_star: f64,
    pub sigma_star: f64,
    pub converged: bool,
    /// `λ_min(S) · R(S)` on the selection batch; compared against `r_iso_star`.
    pub enclosure: f64,
    /// The optimized region failed the enclosure check (or every run diverged)
    /// and the isotropic DDRS solution was returned instead.
    pub fallback: bool,
    /// Iterations at which the smallest eigenvalue was repeated.
    pub degenerate_steps: usize,
    /// Seed and size of the selection batch. Later optimizers reuse it so that
    /// their enclosure check sees the same draws that fixed `r_iso_star`.
    pub eval_seed: u64,
    pub eval_samples: usize,
    /// Frame of every noise draw in the chain (see [`DdrsConfig::noise_frame`]).
    pub noise_frame: Option<DMatrix<f64>>,
}

/// Rows `Q z_j` of fresh standard normal draws; `Q = I` when no frame is set.
fn framed(z: DMatrix<f64>, frame: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    match frame {
        Some(q) => z * q.transpose(),
        None => z,
    }
}

pub(crate) fn eval_noise(seed: u64, n: usize, d: usize, frame: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    framed(normal_matrix(&mut stream_rng(seed, 0), n, d), frame)
}

pub(crate) fn iter_noise(seed: u64, t: usize, n: usize, d: usize, frame: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    framed(normal_matrix(&mut stream_rng(seed, t as u64), n, d), frame)
}

/// Checks that `q` is a `d × d` orthogonal matrix.
pub(crate) fn check_frame(q: &DMatrix<f64>, d: usize) -> Result<()> {
    if q.shape() != (d, d) {
        return Err(Error::DimMismatch { expected: d, got: q.nrows() });
    }
    let err = (q.transpose() * q - DMatrix::<f64>::identity(d, d)).amax();
    if !(err <= 1e-9) {
        return Err(Error::Config(alloc::format!("noise frame is not orthogonal (error {err})")));
    }
    Ok(())
}

/// Which probability plays `p_B` in the gap `R = Φ⁻¹(p_A) − Φ⁻¹(p_B)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunnerUp {
    /// Soft mass of the second most likely class.
    TopTwo,
    /// `1 − p_A`, the bound certification uses; `R = 2 Φ⁻¹(p_A)`.
    Complement,
}

/// Soft estimate of `G` on one batch with the pathwise input gradient of the gap.
pub(crate) struct SoftBatch {
    pub class_a: usize,
    pub class_b: usize,
    /// `R = Φ⁻¹(clamp p_A) − Φ⁻¹(clamp p_B)`.
    pub r: f64,
    /// `n × d` rows of `∇_y [w_A F_{c_A}(y_j) − w_B F_{c_B}(y_j)]` with
    /// `w = dΦ⁻¹/dp` at the batch means, so that `∇R = mean_j (row_j ⊗ ∂y_j)`.
    pub grad_r: DMatrix<f64>,
}

/// Indices of the largest and second-largest entries; ties go to the lower index.
pub(crate) fn top_two(p: &[f64]) -> (usize, usize) {
    let mut a = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[a] {
            a = i;
        }
    }
    let mut b = if a == 0 { 1 } else { 0 };
    for (i, &v) in p.iter().enumerate() {
        if i != a && v > p[b] {
            b = i;
        }
    }
    (a, b)
}

pub(crate) fn soft_batch<F: SoftClassifier + ?Sized>(
    f: &F,
    x: &[f64],
    spec: &SmoothingSpec,
    z: &DMatrix<f64>,
    rule: RunnerUp,
) -> Result<SoftBatch> {
    if f.num_classes() < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    let y = perturbed_inputs(x, spec, z)?;
    let mut picked = (0, 0, 0.0, 0.0);
    let (_, grad_r) = f.weighted_grad_batch(&y, &mut |probs| {
        let n = probs.nrows() as f64;
        let mean: Vec<f64> = probs.column_iter().map(|c| c.sum() / n).collect();
        let (a, b) = top_two(&mean);
        let pa = mean[a];
        match rule {
            // p_B = 1 − p_A, so ∇p_B = −∇p_A and both terms land on c_A
            RunnerUp::Complement => {
                picked = (a, b, pa, 1.0 - pa);
                alloc::vec![(a, quantile_slope(pa) + quantile_slope(1.0 - pa))]
            }
            RunnerUp::TopTwo => {
                picked = (a, b, pa, mean[b]);
                alloc::vec![(a, quantile_slope(pa)), (b, -quantile_slope(mean[b]))]
            }
        }
    });
    let (class_a, class_b, pa, pb) = picked;
    let r = clamped_quantile(pa) - clamped_quantile(pb);
    Ok(SoftBatch { class_a, class_b, r, grad_r })
}

/// Soft estimate of `G` on one batch without gradients.
pub(crate) fn soft_probs<F: SoftClassifier + ?Sized>(f: &F, x: &[f64], spec: &SmoothingSpec, z: &DMatrix<f64>) -> Result<Vec<f64>> {
    crate::smoothing::smoothed_probs_with_noise(f, x, spec, z)
}

/// `Φ⁻¹(clamp p)`.
pub(crate) fn clamped_quantile(p: f64) -> f64 {
    std_normal_quantile(clamp_probability(p, PROB_EPS)).expect("clamped probability is inside (0,1)")
}

/// `d Φ⁻¹(clamp p) / dp`: `1/φ(Φ⁻¹(p))` inside the clamp, zero where it saturates.
pub(crate) fn quantile_slope(p: f64) -> f64 {
    if is_unclamped(p, PROB_EPS) {
        1.0 / std_normal_pdf(clamped_quantile(p))
    } else {
        0.0
    }
}

/// Soft gap from a probability vector under `rule`.
pub(crate) fn soft_gap(p: &[f64], rule: RunnerUp) -> f64 {
    let (a, b) = top_two(p);
    match rule {
        RunnerUp::TopTwo => clamped_quantile(p[a]) - clamped_quantile(p[b]),
        RunnerUp::Complement => clamped_quantile(p[a]) - clamped_quantile(1.0 - p[a]),
    }
}

/// Checkpoints are scored on the selection batch every this many iterations
/// (and at the start and end of every run).
pub const CHECKPOINT_EVERY: usize = 10;

/// How checkpoints are ranked on the selection batch.
///
/// Scores use `p_A` estimated on the selection batch, lowered by
/// `penalty_se` binomial standard errors and, when `bound` is set, passed
/// through the lower confidence bound certification will apply. The
/// reference `r_iso*` is computed the same way at `σ* I` but lowered by
/// `enclosure_se` standard errors, so the enclosure check tolerates the
/// Monte-Carlo error of the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    /// Estimate `p_A` from argmax votes of the base classifier, as
    /// certification does, instead of averaging its probabilities.
    pub votes: bool,
    /// `(n, alpha)`: replace `p_A` by the Clopper-Pearson lower bound on
    /// `round(p_A n)` successes out of `n`.
    pub bound: Option<(u64, f64)>,
    pub penalty_se: f64,
    pub enclosure_se: f64,
}

impl Selection {
    /// Soft `p_A`, no bound, exact enclosure check.
    pub fn soft() -> Self {
        Self { votes: false, bound: None, penalty_se: 0.0, enclosure_se: 0.0 }
    }

    /// Votes and the certification bound at `(n, alpha)`; one standard error
    /// of penalty and three of enclosure slack.
    pub fn certified(n: u64, alpha: f64) -> Self {
        Self { votes: true, bound: Some((n, alpha)), penalty_se: 1.0, enclosure_se: 3.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_se >= 0.0 && self.enclosure_se >= 0.0 && self.penalty_se.is_finite() && self.enclosure_se.is_finite()) {
            return Err(Error::Config("selection standard-error multiples must be finite and >= 0".into()));
        }
        if let Some((n, alpha)) = self.bound {
            if n == 0 || !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Config("selection bound needs n > 0 and alpha in (0,1)".into()));
            }
        }
        Ok(())
    }

    /// `2 Φ⁻¹(p)` for `p = p̂_A − k·se` on a batch of `m`, through the bound when one is set.
    fn gap(&self, pa: f64, m: usize, k: f64) -> Result<f64> {
        let pa = (pa - k * libm::sqrt(pa * (1.0 - pa) / m as f64)).max(0.0);
        let pa = match self.bound {
            None => pa,
            Some((n, alpha)) => {
                let s = libm::round(pa * n as f64).clamp(0.0, n as f64) as u64;
                clopper_pearson_lower(s, n, alpha)?
            }
        };
        Ok(clamped_quantile(pa) - clamped_quantile(1.0 - pa))
    }
}

/// Keeps the best checkpoint that passes the enclosure check.
///
/// A checkpoint `S` is feasible when, on the selection batch, its top class is
/// the class DDRS certified and `λ_min(S) · R(S) ≥ r_iso*`, where
/// `r_iso* = σ* R(σ* I)` (see [`Selection`] for how each `R` is estimated).
/// Among feasible checkpoints the largest `R(S) · det(S)^{1/d}` wins; ties
/// keep the earlier one. Here `R` always uses `p_B = 1 − p_A`, the gap
/// certification will see, whatever rule the ascent itself follows.
pub(crate) struct Selector<'a, F: SoftClassifier + ?Sized> {
    f: &'a F,
    x: &'a [f64],
    z_eval: DMatrix<f64>,
    class_star: usize,
    rule: Selection,
    pub r_iso_star: f64,
    pub best: Option<Checkpoint>,
    /// Noise frame of the chain, for the runs that report to this selector.
    pub frame: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Checkpoint {
    pub spec: SmoothingSpec,
    pub score: f64,
    pub enclosure: f64,
    pub run: usize,
    pub iter: usize,
}

impl<'a, F: SoftClassifier + ?Sized> Selector<'a, F> {
    pub fn new(f: &'a F, x: &'a [f64], ddrs_out: &NoiseOptResult, rule: Selection) -> Result<Self> {
        rule.validate()?;
        let z_eval = eval_noise(ddrs_out.eval_seed, ddrs_out.eval_samples, x.len(), ddrs_out.noise_frame.as_ref());
        let sigma = ddrs_out.sigma_star;
        let p = estimate(f, x, &SmoothingSpec::Isotropic(sigma), &z_eval, rule.votes)?;
        let (class_star, _) = top_two(&p);
        let r_iso_star = sigma * rule.gap(p[class_star], z_eval.nrows(), rule.enclosure_se)?;
        Ok(Self { f, x, z_eval, class_star, rule, r_iso_star, best: None, frame: ddrs_out.noise_frame.clone() })
    }

    pub fn consider(&mut self, spec: &SmoothingSpec, run: usize, iter: usize) -> Result<()> {
        let d = self.x.len();
        let p = estimate(self.f, self.x, spec, &self.z_eval, self.rule.votes)?;
        let (a, _) = top_two(&p);
        let gap = self.rule.gap(p[a], self.z_eval.nrows(), self.rule.penalty_se)?;
        let enclosure = spec.lambda_min(d)? * gap;
        if a != self.class_star || !(enclosure >= self.r_iso_star) {
            return Ok(());
        }
        let score = gap * spec.det_root(d)?;
        if self.best.as_ref().is_none_or(|b| score > b.score) {
            self.best = Some(Checkpoint { spec: spec.clone(), score, enclosure, run, iter });
        }
        Ok(())
    }
}

/// Class frequencies on a fixed batch: mean probabilities or argmax vote shares.
fn estimate<F: SoftClassifier + ?Sized>(f: &F, x: &[f64], spec: &SmoothingSpec, z: &DMatrix<f64>, votes: bool) -> Result<Vec<f64>> {
    if !votes {
        return soft_probs(f, x, spec, z);
    }
    let probs = f.probs_batch(&perturbed_inputs(x, spec, z)?);
    let mut share = alloc::vec![0.0; probs.ncols()];
    for row in probs.row_iter() {
        share[crate::classifier::argmax(row.iter().copied())] += 1.0;
    }
    let n = probs.nrows() as f64;
    Ok(share.into_iter().map(|c| c / n).collect())
}

pub(crate) fn is_checkpoint(t: usize, iterations: usize) -> bool {
    t.is_multiple_of(CHECKPOINT_EVERY) || t == iterations
}

pub(crate) fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(alloc::format!("{what} = {v}")))
    }
}
