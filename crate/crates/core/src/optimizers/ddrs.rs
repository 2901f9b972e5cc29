use super::{check_finite, check_frame, clamped_quantile, eval_noise, iter_noise, soft_batch, soft_gap, soft_probs, top_two, NoiseOptResult, RunnerUp, TraceRecord};
use crate::classifier::SoftClassifier;
use crate::error::{Error, Result};
use crate::sampling::derive_seed;
use crate::smoothing::SmoothingSpec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

/// Smallest σ the projection step allows.
pub const SIGMA_MIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct DdrsConfig {
    pub lr: f64,
    pub n_samples: usize,
    /// Iteration budgets; the best σ among them is kept.
    pub iter_grid: Vec<usize>,
    pub sigma_init: f64,
    /// Draws in the batch that ranks the budgets and fixes `r_iso*`.
    pub n_eval: usize,
    /// Orthogonal `Q` applied to every standard normal draw of this optimizer
    /// and of the ANCER and RDDRS runs chained on its result. The Gaussian is
    /// invariant under `Q`, so only the pairing of draws changes: a problem
    /// rotated by `Q` and run in frame `Q` sees exactly the rotated draws.
    pub noise_frame: Option<DMatrix<f64>>,
}

impl DdrsConfig {
    pub fn paper(sigma_init: f64) -> Self {
        Self { lr: 1e-4, n_samples: 100, iter_grid: (1..=15).map(|k| 100 * k).collect(), sigma_init, n_eval: 2000, noise_frame: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.sigma_init > 0.0) || self.n_samples == 0 || self.n_eval == 0 {
            return Err(Error::Config("DDRS lr, sigma_init, n_samples and n_eval must be positive".into()));
        }
        if self.iter_grid.is_empty() || self.iter_grid.contains(&0) {
            return Err(Error::Config("DDRS iter_grid needs positive budgets".into()));
        }
        Ok(())
    }
}

/// Objective `σ Φ⁻¹(p̂_A)` and its pathwise derivative in σ on one batch.
fn objective_and_slope<F: SoftClassifier + ?Sized>(f: &F, x: &[f64], sigma: f64, z: &DMatrix<f64>) -> Result<(f64, f64, f64)> {
    // with p_B = 1 − p_A the gap is R = 2 Φ⁻¹(p_A)
    let b = soft_batch(f, x, &SmoothingSpec::Isotropic(sigma), z, RunnerUp::Complement)?;
    let q = b.r / 2.0;
    let dq = b.grad_r.component_mul(z).sum() / (2.0 * z.nrows() as f64);
    Ok((sigma * q, q + sigma * dq, q))
}

/// Isotropic certified radius `σ Φ⁻¹(p̂_A)` on a fixed batch.
fn iso_radius<F: SoftClassifier + ?Sized>(f: &F, x: &[f64], sigma: f64, z: &DMatrix<f64>) -> Result<(f64, f64)> {
    let p = soft_probs(f, x, &SmoothingSpec::Isotropic(sigma), z)?;
    let (a, _) = top_two(&p);
    Ok((sigma * clamped_quantile(p[a]), sigma * soft_gap(&p, RunnerUp::Complement)))
}

/// Gradient ascent on the isotropic certified radius.
///
/// Every budget in `iter_grid` starts from the same σ₀ with the same noise
/// streams, so the runs are prefixes of one trajectory; they are evaluated
/// as snapshots of it.
pub fn ddrs_optimize<F: SoftClassifier + ?Sized>(f: &F, x: &[f64], cfg: &DdrsConfig, seed: u64) -> Result<NoiseOptResult> {
    cfg.validate()?;
    if x.len() != f.input_dim() {
        return Err(Error::DimMismatch { expected: f.input_dim(), got: x.len() });
    }
    let d = x.len();
    if let Some(q) = &cfg.noise_frame {
        check_frame(q, d)?;
    }
    let max_iter = *cfg.iter_grid.iter().max().expect("validated");
    let mut sigma = cfg.sigma_init;
    let mut trace = Vec::with_capacity(max_iter);
    let mut snapshots: Vec<(usize, f64, f64)> = Vec::new();
    for t in 0..max_iter {
        let z = iter_noise(seed, t, cfg.n_samples, d, cfg.noise_frame.as_ref());
        let step = objective_and_slope(f, x, sigma, &z).and_then(|(obj, g, q)| {
            check_finite(obj, "DDRS objective")?;
            check_finite(g, "DDRS gradient")?;
            Ok((obj, g, q))
        });
        let Ok((obj, g, q)) = step else { break };
        trace.push(TraceRecord { iter: t, h: obj, r: q, p: sigma, kmin: sigma, lambda_min: sigma, step_size: cfg.lr });
        let prev = sigma;
        sigma = (sigma + cfg.lr * g).max(SIGMA_MIN);
        if cfg.iter_grid.contains(&(t + 1)) {
            snapshots.push((t + 1, sigma, (sigma - prev).abs() / prev));
        }
    }
    if snapshots.is_empty() {
        return Err(Error::NonFinite("DDRS diverged before the first budget".into()));
    }

    let eval_seed = derive_seed(&[seed, u64::MAX]);
    let z_eval = eval_noise(eval_seed, cfg.n_eval, d, cfg.noise_frame.as_ref());
    let mut best: Option<(usize, f64, f64, f64, f64)> = None;
    for &(k, s, rel) in &snapshots {
        let (radius, r_iso) = iso_radius(f, x, s, &z_eval)?;
        if best.is_none_or(|b| radius > b.2) {
            best = Some((k, s, radius, r_iso, rel));
        }
    }
    let (k, sigma_star, _, r_iso_star, rel) = best.expect("at least one snapshot");
    trace.truncate(k);
    Ok(NoiseOptResult {
        spec: SmoothingSpec::Isotropic(sigma_star),
        objective_trace: trace.iter().map(|r| r.h).collect(),
        trace,
        r_iso_star,
        sigma_star,
        converged: rel < 1e-3,
        enclosure: r_iso_star,
        fallback: false,
        degenerate_steps: 0,
        eval_seed,
        eval_samples: cfg.n_eval,
        noise_frame: cfg.noise_frame.clone(),
    })
}
