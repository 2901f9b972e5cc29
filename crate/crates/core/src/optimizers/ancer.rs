use super::{check_finite, is_checkpoint, iter_noise, soft_batch, NoiseOptResult, RunnerUp, Selection, Selector, TraceRecord};
use crate::classifier::SoftClassifier;
use crate::error::{Error, Result};
use crate::smoothing::SmoothingSpec;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct AncerConfig {
    /// One run per step size; the best final region is kept.
    pub lr_grid: Vec<f64>,
    pub kappa: f64,
    pub iterations: usize,
    pub n_samples: usize,
    pub runner_up: RunnerUp,
    pub selection: Selection,
}

impl AncerConfig {
    pub fn paper() -> Self {
        Self { lr_grid: vec![0.04, 0.4], kappa: 2.0, iterations: 100, n_samples: 100, runner_up: RunnerUp::TopTwo, selection: Selection::soft() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("ANCER lr_grid needs positive step sizes".into()));
        }
        if !(self.kappa >= 0.0) || self.iterations == 0 || self.n_samples == 0 {
            return Err(Error::Config("ANCER kappa must be >= 0, iterations and n_samples positive".into()));
        }
        self.selection.validate()?;
        Ok(())
    }
}

fn geo_mean(t: &[f64]) -> f64 {
    libm::exp(t.iter().map(|&v| libm::log(v)).sum::<f64>() / t.len() as f64)
}

fn arg_min(t: &[f64]) -> usize {
    let mut m = 0;
    for (i, &v) in t.iter().enumerate() {
        if v < t[m] {
            m = i;
        }
    }
    m
}

struct Step {
    h: f64,
    r: f64,
    p: f64,
    m: f64,
    grad: Vec<f64>,
}

/// `H(θ) = r(θ)·P(θ) + κ·min θ·r(θ)` and its gradient on one batch.
fn step<F: SoftClassifier + ?Sized>(f: &F, x: &[f64], theta: &[f64], kappa: f64, z: &DMatrix<f64>, rule: RunnerUp) -> Result<Step> {
    let d = theta.len();
    let b = soft_batch(f, x, &SmoothingSpec::Diagonal(theta.to_vec()), z, rule)?;
    let n = z.nrows() as f64;
    let r = b.r;
    let p = geo_mean(theta);
    let im = arg_min(theta);
    let m = theta[im];
    let gr = b.grad_r.component_mul(z);
    let grad = (0..d)
        .map(|i| {
            let dr = gr.column(i).sum() / n;
            let mut g = dr * (p + kappa * m) + r * p / (d as f64 * theta[i]);
            if i == im {
                g += kappa * r;
            }
            g
        })
        .collect::<Vec<_>>();
    let h = r * p + kappa * m * r;
    check_finite(h, "ANCER objective")?;
    for &g in &grad {
        check_finite(g, "ANCER gradient")?;
    }
    Ok(Step { h, r, p, m, grad })
}

struct Run {
    trace: Vec<TraceRecord>,
    rel_change: f64,
}

fn run<F: SoftClassifier + ?Sized>(
    f: &F,
    x: &[f64],
    cfg: &AncerConfig,
    lr: f64,
    floor: f64,
    seed: u64,
    sel: &mut Selector<'_, F>,
    index: usize,
) -> (Run, Result<()>) {
    let d = x.len();
    let frame = sel.frame.clone();
    let frame = frame.as_ref();
    let mut theta = vec![floor; d];
    let mut out = Run { trace: Vec::with_capacity(cfg.iterations), rel_change: f64::INFINITY };
    for t in 0..=cfg.iterations {
        if is_checkpoint(t, cfg.iterations) {
            if let Err(e) = sel.consider(&SmoothingSpec::Diagonal(theta.clone()), index, t) {
                return (out, Err(e));
            }
        }
        if t == cfg.iterations {
            break;
        }
        let z = iter_noise(seed, t, cfg.n_samples, d, frame);
        let s = match step(f, x, &theta, cfg.kappa, &z, cfg.runner_up) {
            Ok(s) => s,
            Err(e) => return (out, Err(e)),
        };
        out.trace.push(TraceRecord { iter: t, h: s.h, r: s.r, p: s.p, kmin: s.m, lambda_min: s.m, step_size: lr });
        let next: Vec<f64> = theta.iter().zip(&s.grad).map(|(&th, &g)| (th + lr * g).max(floor)).collect();
        let num: f64 = next.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = theta.iter().map(|a| a * a).sum();
        out.rel_change = libm::sqrt(num / den);
        theta = next;
    }
    (out, Ok(()))
}

/// Gradient ascent over diagonal scales `θ ≥ σ*` with the volume objective
/// penalized by the enclosure term.
///
/// Checkpoints of every run are scored on the DDRS selection batch and the
/// best one passing the enclosure check is returned. The starting point
/// `σ* · 1` always passes, so when nothing better is found the DDRS solution
/// comes back with `fallback` set.
pub fn ancer_optimize<F: SoftClassifier + ?Sized>(
    f: &F,
    x: &[f64],
    cfg: &AncerConfig,
    ddrs_out: &NoiseOptResult,
    seed: u64,
) -> Result<NoiseOptResult> {
    cfg.validate()?;
    if x.len() != f.input_dim() {
        return Err(Error::DimMismatch { expected: f.input_dim(), got: x.len() });
    }
    let d = x.len();
    let floor = ddrs_out.sigma_star;
    let mut sel = Selector::new(f, x, ddrs_out, cfg.selection)?;
    let mut runs = Vec::with_capacity(cfg.lr_grid.len());
    for (i, &lr) in cfg.lr_grid.iter().enumerate() {
        let (r, status) = run(f, x, cfg, lr, floor, seed, &mut sel, i);
        runs.push((r, status.is_ok()));
    }
    let mut out = NoiseOptResult {
        spec: SmoothingSpec::Diagonal(vec![floor; d]),
        objective_trace: Vec::new(),
        trace: Vec::new(),
        r_iso_star: sel.r_iso_star,
        sigma_star: floor,
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
        if best.iter > 0 {
            out.spec = best.spec;
            out.enclosure = best.enclosure;
            out.fallback = false;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{ConstantClassifier, RadialClassifier};
    use crate::optimizers::{ddrs_optimize, DdrsConfig};

    fn theta(out: &NoiseOptResult) -> Vec<f64> {
        match &out.spec {
            SmoothingSpec::Diagonal(t) => t.clone(),
            s => panic!("unexpected spec {s:?}"),
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let net = crate::classifier::Mlp::random(&[3, 8, 3], crate::classifier::Activation::Softplus, 2).unwrap();
        let x = [0.2, 0.1, -0.3];
        let th = [0.4, 0.7, 0.55];
        let z = iter_noise(6, 0, 300, 3, None);
        let s = step(&net, &x, &th, 2.0, &z, RunnerUp::TopTwo).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = th;
            up[i] += h;
            let mut dn = th;
            dn[i] -= h;
            let fd = (step(&net, &x, &up, 2.0, &z, RunnerUp::TopTwo).unwrap().h - step(&net, &x, &dn, 2.0, &z, RunnerUp::TopTwo).unwrap().h) / (2.0 * h);
            assert!((fd - s.grad[i]).abs() <= 1e-5 * fd.abs().max(1.0), "i={i}: fd {fd} vs {}", s.grad[i]);
        }
    }

    #[test]
    fn floor_and_enclosure_hold() {
        let net = crate::classifier::Mlp::random(&[2, 8, 3], crate::classifier::Activation::Tanh, 3).unwrap();
        let x = [0.3, -0.2];
        let dd = ddrs_optimize(&net, &x, &DdrsConfig { iter_grid: vec![100, 200], ..DdrsConfig::paper(0.25) }, 1).unwrap();
        let out = ancer_optimize(&net, &x, &AncerConfig::paper(), &dd, 2).unwrap();
        assert!(theta(&out).iter().all(|&t| t >= dd.sigma_star));
        assert!(out.fallback || out.enclosure >= dd.r_iso_star - 1e-9);
    }

    #[test]
    fn permutation_symmetric_problem_stays_isotropic() {
        let f = RadialClassifier { dim: 3, radius: 1.0, softness: 0.3 };
        let x = [0.0; 3];
        let dd = ddrs_optimize(&f, &x, &DdrsConfig { iter_grid: vec![100], n_eval: 4000, ..DdrsConfig::paper(0.25) }, 4).unwrap();
        let cfg = AncerConfig { n_samples: 2000, ..AncerConfig::paper() };
        let out = ancer_optimize(&f, &x, &cfg, &dd, 5).unwrap();
        let t = theta(&out);
        let mean = t.iter().sum::<f64>() / 3.0;
        let spread = t.iter().cloned().fold(f64::MIN, f64::max) - t.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= 0.05 * mean, "{t:?}");
    }

    #[test]
    fn one_dimension_agrees_with_ddrs() {
        // class 0 inside [-1, 1], blurred: σ Φ⁻¹(p_A(σ)) has an interior maximum away from the clamp
        let f = RadialClassifier { dim: 1, radius: 1.0, softness: 0.5 };
        let x = [0.0];
        let dcfg = DdrsConfig { lr: 1e-2, iter_grid: vec![500, 1000, 1500], ..DdrsConfig::paper(0.1) };
        let dd = ddrs_optimize(&f, &x, &dcfg, 7).unwrap();
        let cfg = AncerConfig { kappa: 0.0, ..AncerConfig::paper() };
        let t = theta(&ancer_optimize(&f, &x, &cfg, &dd, 7).unwrap())[0];
        assert!((t - dd.sigma_star).abs() <= 0.1 * dd.sigma_star, "ANCER {t} vs DDRS {}", dd.sigma_star);
        // same check when ANCER has to climb from σ₀ itself
        let mut low = dd.clone();
        low.sigma_star = 0.1;
        low.r_iso_star = 0.0;
        let cfg = AncerConfig { kappa: 0.0, lr_grid: vec![0.04], iterations: 400, n_samples: 100, runner_up: RunnerUp::TopTwo, selection: Selection::soft() };
        let t = theta(&ancer_optimize(&f, &x, &cfg, &low, 7).unwrap())[0];
        assert!((t - dd.sigma_star).abs() <= 0.1 * dd.sigma_star, "ANCER {t} vs DDRS {}", dd.sigma_star);
    }

    #[test]
    fn constant_classifier_falls_back_or_grows() {
        let f = ConstantClassifier::new(2, 2, 1);
        let dd = ddrs_optimize(&f, &[0.0, 0.0], &DdrsConfig { iter_grid: vec![10], ..DdrsConfig::paper(0.25) }, 0).unwrap();
        let out = ancer_optimize(&f, &[0.0, 0.0], &AncerConfig::paper(), &dd, 0).unwrap();
        assert!(!out.fallback);
        assert!(theta(&out).iter().all(|&t| t > dd.sigma_star));
    }
}
