use super::{check_finite, is_checkpoint, iter_noise, soft_batch, NoiseOptResult, RunnerUp, Selection, Selector, TraceRecord};
use crate::classifier::SoftClassifier;
use crate::error::{Error, Result};
use crate::smoothing::SmoothingSpec;
use crate::spd_manifold::{exp_map, project_eigen_floor, SpdMatrix, SymEigen, SymMatrix};
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

/// Relative gap under which the smallest eigenvalue counts as repeated.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// The eigenvalue floor is applied at `σ*(1 + FLOOR_MARGIN)` so that rounding
/// in the reconstruction can never push `λ_min` below `σ*`.
pub const FLOOR_MARGIN: f64 = 1e-9;

/// Starting point of the Riemannian ascent.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCovariance {
    /// `σ* I`.
    FloorIdentity,
    /// A given noise model, lifted to a full matrix and projected onto the floor.
    From(SmoothingSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RddrsConfig {
    /// One run per step size; the best final region is kept.
    pub lr_grid: Vec<f64>,
    pub kappa: f64,
    pub iterations: usize,
    pub n_samples: usize,
    pub init: InitialCovariance,
    pub runner_up: RunnerUp,
    pub selection: Selection,
    /// A run counts as diverged, and stops, once an eigenvalue of `C`
    /// exceeds `max_scale · σ*`.
    pub max_scale: f64,
}

impl RddrsConfig {
    pub fn paper() -> Self {
        Self { lr_grid: vec![0.5, 1.25], kappa: 1e-6, iterations: 100, n_samples: 20_000, init: InitialCovariance::FloorIdentity, runner_up: RunnerUp::TopTwo, selection: Selection::soft(), max_scale: 100.0 }
    }

    /// Same as [`RddrsConfig::paper`] with 2000 draws per gradient.
    pub fn desk() -> Self {
        Self { n_samples: 2000, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("RDDRS lr_grid needs positive step sizes".into()));
        }
        if !(self.kappa >= 0.0) || self.iterations == 0 || self.n_samples == 0 {
            return Err(Error::Config("RDDRS kappa must be >= 0, iterations and n_samples positive".into()));
        }
        if !(self.max_scale > 1.0) {
            return Err(Error::Config("RDDRS max_scale must exceed 1".into()));
        }
        self.selection.validate()?;
        Ok(())
    }
}

/// Parts of `H(C) = R·P + κ·K·R` on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RddrsObjective {
    pub h: f64,
    pub r: f64,
    pub p: f64,
    pub kmin: f64,
    pub class_a: usize,
    pub class_b: usize,
}

/// Riemannian gradient of `P(C) = det(C)^{1/d}`: `(P/d)·C`.
pub fn det_root_riemannian_grad(c: &SpdMatrix) -> Result<SymMatrix> {
    let p = c.det_root()?;
    Ok(c.as_sym().scale(p / c.dim() as f64))
}

fn lambda_min_grad(eig: &SymEigen) -> SymMatrix {
    let l = eig.values[0];
    let v = eig.vectors.column(0);
    SymMatrix::from_symmetrized(&((v * v.transpose()) * (l * l)))
}

/// Riemannian gradient of `K(C) = λ_min(C)`: `λ_min² v vᵀ`. Where `λ_min` is
/// repeated this is the subgradient of the first eigenvector returned.
pub fn lambda_min_riemannian_grad(c: &SpdMatrix) -> Result<SymMatrix> {
    Ok(lambda_min_grad(&c.eigen()?))
}

/// `sym(Gᵀ Z) / n`: the sample mean of `A` for gradient rows `G`.
fn mean_a(g: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let m = g.transpose() * z;
    (&m + m.transpose()) * (0.5 / z.nrows() as f64)
}

/// Objective parts, Riemannian gradient and whether `λ_min` was degenerate, on one batch.
pub fn rddrs_step<F: SoftClassifier + ?Sized>(
    f: &F,
    x: &[f64],
    c: &SpdMatrix,
    kappa: f64,
    z: &DMatrix<f64>,
    rule: RunnerUp,
) -> Result<(RddrsObjective, SymMatrix, bool)> {
    if c.dim() != x.len() {
        return Err(Error::DimMismatch { expected: x.len(), got: c.dim() });
    }
    let d = c.dim() as f64;
    let b = soft_batch(f, x, &SmoothingSpec::Full(c.clone()), z, rule)?;
    let r = b.r;
    let eig = c.eigen()?;
    let p = eig.geometric_mean();
    let k = eig.values[0];
    let degenerate = eig.min_is_degenerate(DEGENERACY_TOL);

    let cm = c.as_matrix();
    let grad_r = cm * mean_a(&b.grad_r, z) * cm;
    let grad_p = cm * (p / d);
    let grad_k = lambda_min_grad(&eig);
    let grad = grad_r * (p + kappa * k) + (grad_p + grad_k.as_matrix() * kappa) * r;
    let grad = SymMatrix::from_symmetrized(&grad);

    let h = r * p + kappa * k * r;
    check_finite(h, "RDDRS objective")?;
    if grad.as_matrix().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("RDDRS gradient".into()));
    }
    Ok((RddrsObjective { h, r, p, kmin: k, class_a: b.class_a, class_b: b.class_b }, grad, degenerate))
}

/// `H`, `R`, `P`, `K` at `C` from `n` draws of stream 0 of `seed`.
pub fn rddrs_objective<F: SoftClassifier + ?Sized>(f: &F, x: &[f64], c: &SpdMatrix, kappa: f64, n: usize, seed: u64) -> Result<RddrsObjective> {
    Ok(rddrs_step(f, x, c, kappa, &iter_noise(seed, 0, n, x.len(), None), RunnerUp::TopTwo)?.0)
}

/// Riemannian gradient of `H` at `C` on the same draws as [`rddrs_objective`].
pub fn rddrs_gradient<F: SoftClassifier + ?Sized>(f: &F, x: &[f64], c: &SpdMatrix, kappa: f64, n: usize, seed: u64) -> Result<SymMatrix> {
    Ok(rddrs_step(f, x, c, kappa, &iter_noise(seed, 0, n, x.len(), None), RunnerUp::TopTwo)?.1)
}

struct Run {
    trace: Vec<TraceRecord>,
    rel_change: f64,
    degenerate: usize,
}

#[allow(clippy::too_many_arguments)]
fn run<F: SoftClassifier + ?Sized>(
    f: &F,
    x: &[f64],
    cfg: &RddrsConfig,
    c0: &SpdMatrix,
    lr: f64,
    floor: f64,
    seed: u64,
    sel: &mut Selector<'_, F>,
    index: usize,
) -> (Run, Result<()>) {
    let d = x.len();
    let frame = sel.frame.clone();
    let frame = frame.as_ref();
    let mut c = c0.clone();
    let mut out = Run { trace: Vec::with_capacity(cfg.iterations), rel_change: f64::INFINITY, degenerate: 0 };
    for t in 0..=cfg.iterations {
        if is_checkpoint(t, cfg.iterations) {
            if let Err(e) = sel.consider(&SmoothingSpec::Full(c.clone()), index, t) {
                return (out, Err(e));
            }
        }
        if t == cfg.iterations {
            break;
        }
        let z = iter_noise(seed, t, cfg.n_samples, d, frame);
        let next = rddrs_step(f, x, &c, cfg.kappa, &z, cfg.runner_up).and_then(|(obj, grad, degen)| {
            out.degenerate += degen as usize;
            out.trace.push(TraceRecord { iter: t, h: obj.h, r: obj.r, p: obj.p, kmin: obj.kmin, lambda_min: obj.kmin, step_size: lr });
            project_eigen_floor(&exp_map(&c, &grad.scale(lr))?, floor)
        });
        let next = match next {
            Ok(n) => n,
            Err(e) => return (out, Err(e)),
        };
        let top = match next.eigen() {
            Ok(e) => e.values[d - 1],
            Err(e) => return (out, Err(e)),
        };
        if top > cfg.max_scale * floor {
            return (out, Err(Error::Diverged(alloc::format!("RDDRS step {t} reached eigenvalue {top}"))));
        }
        out.rel_change = (next.as_matrix() - c.as_matrix()).norm() / c.as_matrix().norm();
        c = next;
    }
    (out, Ok(()))
}

fn initial<F: SoftClassifier + ?Sized>(f: &F, cfg: &RddrsConfig, floor: f64) -> Result<SpdMatrix> {
    let d = f.input_dim();
    match &cfg.init {
        InitialCovariance::FloorIdentity => SpdMatrix::scaled_identity(d, floor),
        InitialCovariance::From(spec) => {
            spec.validate()?;
            let m = SpdMatrix::new(spec.sqrt_cov_matrix(d)?)?;
            project_eigen_floor(&m, floor)
        }
    }
}

/// Riemannian gradient ascent `C ← floor(Exp_C(γ ∇H(C)))`, from `σ* I` unless
/// configured otherwise.
///
/// Each step size in `lr_grid` gets its own run on the same noise streams.
/// Checkpoints of every run are scored on the DDRS selection batch and the
/// best one passing the enclosure check `λ_min(C) · R(C) ≥ r_iso*` is
/// returned. Every returned `C` has `λ_min(C) ≥ σ*`. When no checkpoint past
/// the start qualifies, the result is `σ* I` with `fallback` set.
pub fn rddrs_optimize<F: SoftClassifier + ?Sized>(
    f: &F,
    x: &[f64],
    cfg: &RddrsConfig,
    ddrs_out: &NoiseOptResult,
    seed: u64,
) -> Result<NoiseOptResult> {
    cfg.validate()?;
    if x.len() != f.input_dim() {
        return Err(Error::DimMismatch { expected: f.input_dim(), got: x.len() });
    }
    let d = x.len();
    let sigma_star = ddrs_out.sigma_star;
    let floor = sigma_star * (1.0 + FLOOR_MARGIN);
    let c0 = initial(f, cfg, floor)?;
    let mut sel = Selector::new(f, x, ddrs_out, cfg.selection)?;
    let mut runs = Vec::with_capacity(cfg.lr_grid.len());
    for (i, &lr) in cfg.lr_grid.iter().enumerate() {
        let (r, status) = run(f, x, cfg, &c0, lr, floor, seed, &mut sel, i);
        runs.push((r, status.is_ok()));
    }
    let mut out = NoiseOptResult {
        spec: SmoothingSpec::Full(SpdMatrix::scaled_identity(d, sigma_star)?),
        objective_trace: Vec::new(),
        trace: Vec::new(),
        r_iso_star: sel.r_iso_star,
        sigma_star,
        converged: false,
        enclosure: sel.r_iso_star,
        fallback: true,
        degenerate_steps: 0,
        eval_seed: ddrs_out.eval_seed,
        eval_samples: ddrs_out.eval_samples,
        noise_frame: ddrs_out.noise_frame.clone(),
    };
    if let Some(best) = sel.best {
        let (r, ok) = &runs[best.run];
        out.objective_trace = r.trace.iter().map(|t| t.h).collect();
        out.trace = r.trace.clone();
        out.converged = *ok && r.rel_change < 1e-2;
        out.degenerate_steps = r.degenerate;
        let from_floor = best.iter == 0 && cfg.init == InitialCovariance::FloorIdentity;
        if !from_floor && best.spec.lambda_min(d)? >= sigma_star {
            out.spec = best.spec;
            out.enclosure = best.enclosure;
            out.fallback = false;
        }
    }
    Ok(out)
}
