//! Orchestration: data and model preparation, the four certification methods
//! over a test subset, certified-accuracy curves, method comparison and 2-D
//! region export.

use crate::config::{DatasetConfig, RunConfig};
use crate::data_io::{gen_toy2d, load_mnist, train_test_split, Split};
use crate::error::{AppError, Result};
use rayon::prelude::*;
use smoothcert_core::classifier::train;
use smoothcert_core::optimizers::{ancer_optimize, ddrs_optimize, rddrs_optimize, NoiseOptResult, TraceRecord};
use smoothcert_core::sampling::derive_seed;
use smoothcert_core::smoothing::predict_certify;
use smoothcert_core::{Certificate, LabeledDataset, Method, Mlp, SmoothingSpec, SoftClassifier};
use std::time::Instant;

/// `(train, test)` for the configured dataset.
pub fn load_datasets(cfg: &RunConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    match &cfg.dataset {
        DatasetConfig::Toy2d { toy, train_fraction, split_seed } => train_test_split(&gen_toy2d(toy)?, *train_fraction, *split_seed),
        DatasetConfig::Mnist { dir, pool } => Ok((load_mnist(dir, Split::Train, *pool)?, load_mnist(dir, Split::Test, *pool)?)),
    }
}

/// Trains with Gaussian augmentation at the configured σ. Returns the model
/// and its clean test accuracy.
pub fn train_model(cfg: &RunConfig) -> Result<(Mlp, f64)> {
    let (tr, te) = load_datasets(cfg)?;
    let net = train(&tr, &cfg.train_config())?;
    let acc = net.accuracy(&te);
    Ok((net, acc))
}

/// What an optimizer reported about the spec behind a certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptInfo {
    pub sigma_star: f64,
    pub r_iso_star: f64,
    pub enclosure: f64,
    pub fallback: bool,
    pub converged: bool,
    pub degenerate_steps: usize,
}

impl OptInfo {
    fn from_result(r: &NoiseOptResult) -> Self {
        Self {
            sigma_star: r.sigma_star,
            r_iso_star: r.r_iso_star,
            enclosure: r.enclosure,
            fallback: r.fallback,
            converged: r.converged,
            degenerate_steps: r.degenerate_steps,
        }
    }
}

/// One certificate with the context needed to score and plot it.
#[derive(Debug, Clone, PartialEq)]
pub struct CertRecord {
    pub cert: Certificate,
    pub true_label: usize,
    /// Absent for RS and for inputs whose optimizer failed.
    pub opt: Option<OptInfo>,
    pub trace: Vec<TraceRecord>,
}

impl CertRecord {
    /// Correct, non-abstaining prediction.
    pub fn is_correct(&self) -> bool {
        self.cert.predicted_class == Some(self.true_label)
    }

    /// Proxy radius credited to this input: zero unless correct.
    pub fn credited_proxy(&self) -> f64 {
        if self.is_correct() {
            self.cert.proxy_radius
        } else {
            0.0
        }
    }
}

/// All records for one test input, in canonical method order.
#[derive(Debug, Clone, PartialEq)]
pub struct InputResult {
    pub input_id: usize,
    pub x: Vec<f64>,
    pub true_label: usize,
    pub records: Vec<CertRecord>,
}

/// Seed of the optimizer run for `(input, method)`.
pub fn optimizer_seed(master: u64, input_id: usize, method: Method) -> u64 {
    derive_seed(&[master, input_id as u64, method.code()])
}

/// Seed of the final certification step. Shared by all methods of one input.
pub fn certification_seed(master: u64, input_id: usize) -> u64 {
    derive_seed(&[master, input_id as u64, 0])
}

fn abstain(id: usize, method: Method, spec: SmoothingSpec, label: usize, note: String) -> CertRecord {
    CertRecord { cert: Certificate::abstain(id, method, spec, Some(note)), true_label: label, opt: None, trace: Vec::new() }
}

/// Runs every configured method on one input. Failures become abstentions
/// carrying the error text.
pub fn certify_input(net: &Mlp, cfg: &RunConfig, input_id: usize, x: &[f64], label: usize) -> Result<Vec<CertRecord>> {
    let conf = cfg.confidence_params()?;
    let methods = cfg.method_list();
    let cert_seed = certification_seed(cfg.seed, input_id);
    let iso = SmoothingSpec::Isotropic(cfg.sigma);
    let finish = |method: Method, spec: &SmoothingSpec, started: Instant, opt: Option<&NoiseOptResult>| -> CertRecord {
        match predict_certify(net, x, spec, &conf, cert_seed, input_id, method) {
            Ok(mut cert) => {
                if cfg.record_timing {
                    cert.wall_time_s = started.elapsed().as_secs_f64();
                }
                CertRecord {
                    cert,
                    true_label: label,
                    opt: opt.map(OptInfo::from_result),
                    trace: opt.map(|o| o.trace.clone()).unwrap_or_default(),
                }
            }
            Err(e) => abstain(input_id, method, spec.clone(), label, format!("certification failed: {e}")),
        }
    };
    let mut out = Vec::with_capacity(methods.len());
    if methods.contains(&Method::Rs) {
        out.push(finish(Method::Rs, &iso, Instant::now(), None));
    }
    let needs_ddrs = methods.iter().any(|m| *m != Method::Rs);
    if !needs_ddrs {
        return Ok(out);
    }
    let t0 = Instant::now();
    let dd = ddrs_optimize(net, x, &cfg.ddrs_config(), optimizer_seed(cfg.seed, input_id, Method::Ddrs));
    let ddrs_time = t0.elapsed();
    let dd = match dd {
        Ok(dd) => dd,
        Err(e) => {
            for m in methods.into_iter().filter(|m| *m != Method::Rs) {
                out.push(abstain(input_id, m, iso.clone(), label, format!("DDRS failed: {e}")));
            }
            return Ok(out);
        }
    };
    if methods.contains(&Method::Ddrs) {
        let started = Instant::now() - ddrs_time;
        out.push(finish(Method::Ddrs, &dd.spec, started, Some(&dd)));
    }
    let mut ancer_spec = None;
    if methods.contains(&Method::Ancer) || cfg.rddrs.init == crate::config::RddrsInit::Ancer && methods.contains(&Method::Rddrs) {
        let started = Instant::now();
        match ancer_optimize(net, x, &cfg.ancer_config(), &dd, optimizer_seed(cfg.seed, input_id, Method::Ancer)) {
            Ok(an) => {
                if methods.contains(&Method::Ancer) {
                    out.push(finish(Method::Ancer, &an.spec, started, Some(&an)));
                }
                ancer_spec = Some(an.spec);
            }
            Err(e) => {
                if methods.contains(&Method::Ancer) {
                    out.push(abstain(input_id, Method::Ancer, dd.spec.clone(), label, format!("ANCER failed: {e}")));
                }
            }
        }
    }
    if methods.contains(&Method::Rddrs) {
        let started = Instant::now();
        let rcfg = cfg.rddrs_config(ancer_spec.as_ref());
        match rddrs_optimize(net, x, &rcfg, &dd, optimizer_seed(cfg.seed, input_id, Method::Rddrs)) {
            Ok(rd) => out.push(finish(Method::Rddrs, &rd.spec, started, Some(&rd))),
            Err(e) => out.push(abstain(input_id, Method::Rddrs, dd.spec.clone(), label, format!("RDDRS failed: {e}"))),
        }
    }
    Ok(out)
}

/// Certifies the first `subset` test inputs with every configured method.
/// Inputs run in a pool of `workers` threads; results come back in input order.
pub fn run_certification(cfg: &RunConfig, net: &Mlp, test: &LabeledDataset) -> Result<Vec<InputResult>> {
    cfg.validate()?;
    if net.input_dim() != test.dim {
        return Err(AppError::Data(format!("model expects d={} but the dataset has d={}", net.input_dim(), test.dim)));
    }
    if test.is_empty() {
        return Err(AppError::Data("test set is empty".into()));
    }
    let n = cfg.subset.min(test.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| AppError::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        test.samples[..n]
            .par_iter()
            .enumerate()
            .map(|(id, s)| {
                Ok(InputResult { input_id: id, x: s.x.clone(), true_label: s.label, records: certify_input(net, cfg, id, &s.x, s.label)? })
            })
            .collect()
    })
}

/// One point of a certified-accuracy curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub radius: f64,
    pub certified_accuracy: f64,
    pub method: Method,
    pub sigma_train: f64,
}

/// `0, step, 2·step, …` up to `max` (inclusive up to rounding).
pub fn radius_grid(max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && max >= 0.0 && max.is_finite()) {
        return Err(AppError::Config(format!("radius grid needs step > 0 and max >= 0, got step {step}, max {max}")));
    }
    let k = (max / step + 1e-9).floor() as usize;
    Ok((0..=k).map(|i| i as f64 * step).collect())
}

/// Fraction of all records that are correct with proxy radius `≥ R`, for every
/// `R` in `grid`.
pub fn build_curve(records: &[CertRecord], grid: &[f64], sigma_train: f64) -> Result<Vec<CurvePoint>> {
    let method = match records.first() {
        Some(r) => r.cert.method,
        None => return Err(AppError::Data("no certificates to build a curve from".into())),
    };
    if records.iter().any(|r| r.cert.method != method) {
        return Err(AppError::Data("curve certificates must share one method".into()));
    }
    let n = records.len() as f64;
    let mut proxies: Vec<f64> = records.iter().filter(|r| r.is_correct()).map(|r| r.cert.proxy_radius).collect();
    proxies.sort_by(f64::total_cmp);
    let points: Vec<CurvePoint> = grid
        .iter()
        .map(|&radius| {
            let below = proxies.partition_point(|&p| p < radius);
            CurvePoint { radius, certified_accuracy: (proxies.len() - below) as f64 / n, method, sigma_train }
        })
        .collect();
    let mut sorted = points.clone();
    sorted.sort_by(|a, b| a.radius.total_cmp(&b.radius));
    assert!(sorted.windows(2).all(|w| w[1].certified_accuracy <= w[0].certified_accuracy), "curve must not increase");
    Ok(points)
}

/// A method's curve plus the per-input credited proxies behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodCurve {
    pub method: Method,
    pub points: Vec<CurvePoint>,
    /// Proxy radius per evaluated input, zero when wrong or abstaining.
    pub credited: Vec<f64>,
}

impl MethodCurve {
    pub fn new(records: &[CertRecord], grid: &[f64], sigma_train: f64) -> Result<Self> {
        let points = build_curve(records, grid, sigma_train)?;
        Ok(Self { method: points[0].method, points, credited: records.iter().map(CertRecord::credited_proxy).collect() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    /// Mean credited proxy over all evaluated inputs.
    pub mean_proxy: f64,
    /// Standard error of `mean_proxy`.
    pub mean_proxy_se: f64,
    /// Mean proxy over the correct, certified inputs only.
    pub mean_proxy_certified: f64,
    pub clean_accuracy: f64,
    /// Trapezoidal area under the curve on the common grid.
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dominance {
    pub a: Method,
    pub b: Method,
    /// Share of common grid points with `acc_a ≥ acc_b`.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub grid: Vec<f64>,
    pub methods: Vec<MethodSummary>,
    pub dominance: Vec<Dominance>,
}

impl Comparison {
    pub fn summary(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    pub fn dominance(&self, a: Method, b: Method) -> Option<f64> {
        self.dominance.iter().find(|d| d.a == a && d.b == b).map(|d| d.fraction)
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Mean and standard error of the per-input difference `a − b`.
pub fn paired_difference(a: &MethodCurve, b: &MethodCurve) -> Result<(f64, f64)> {
    if a.credited.len() != b.credited.len() {
        return Err(AppError::Data(format!("{} has {} inputs but {} has {}", a.method, a.credited.len(), b.method, b.credited.len())));
    }
    let d: Vec<f64> = a.credited.iter().zip(&b.credited).map(|(x, y)| x - y).collect();
    Ok(mean_se(&d))
}

fn accuracy_at(c: &MethodCurve, r: f64) -> f64 {
    c.points.iter().find(|p| (p.radius - r).abs() <= 1e-9).map(|p| p.certified_accuracy).unwrap_or(0.0)
}

/// Per-method summaries and pairwise dominance on the radii all curves share.
pub fn compare_methods(curves: &[MethodCurve]) -> Result<Comparison> {
    if curves.is_empty() {
        return Err(AppError::GridMismatch("no curves".into()));
    }
    let mut grid: Vec<f64> = curves[0].points.iter().map(|p| p.radius).collect();
    for c in &curves[1..] {
        grid.retain(|&r| c.points.iter().any(|p| (p.radius - r).abs() <= 1e-9));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.is_empty() {
        return Err(AppError::GridMismatch("curves share no radius".into()));
    }
    let methods = curves
        .iter()
        .map(|c| {
            let (mean_proxy, mean_proxy_se) = mean_se(&c.credited);
            let certified: Vec<f64> = c.credited.iter().copied().filter(|&p| p > 0.0).collect();
            let acc: Vec<f64> = grid.iter().map(|&r| accuracy_at(c, r)).collect();
            let auc = grid.windows(2).zip(acc.windows(2)).map(|(r, a)| (r[1] - r[0]) * (a[0] + a[1]) / 2.0).sum();
            MethodSummary {
                method: c.method,
                mean_proxy,
                mean_proxy_se,
                mean_proxy_certified: mean_se(&certified).0,
                clean_accuracy: accuracy_at(c, 0.0),
                auc,
            }
        })
        .collect();
    let mut dominance = Vec::new();
    for a in curves {
        for b in curves {
            if a.method == b.method {
                continue;
            }
            let wins = grid.iter().filter(|&&r| accuracy_at(a, r) >= accuracy_at(b, r)).count();
            dominance.push(Dominance { a: a.method, b: b.method, fraction: wins as f64 / grid.len() as f64 });
        }
    }
    Ok(Comparison { grid, methods, dominance })
}

/// `a` is at least `b` at every grid radius `≥ from` and above it at one or more.
pub fn strictly_dominates(a: &MethodCurve, b: &MethodCurve, from: f64) -> bool {
    let radii: Vec<f64> = a.points.iter().map(|p| p.radius).filter(|&r| r >= from - 1e-9).collect();
    let (mut ge, mut gt) = (true, false);
    for r in radii {
        let (x, y) = (accuracy_at(a, r), accuracy_at(b, r));
        ge &= x >= y;
        gt |= x > y;
    }
    ge && gt
}

/// Boundary of the certified ellipse `{x + r·S·u : ‖u‖ = 1}` with
/// `r = radius_gap / 2`, at `points` equally spaced angles.
pub fn export_region_2d(x: &[f64], cert: &Certificate, points: usize) -> Result<Vec<[f64; 2]>> {
    if x.len() != 2 {
        return Err(AppError::Dim(x.len()));
    }
    if points == 0 {
        return Err(AppError::Config("need at least one boundary point".into()));
    }
    let s = cert.sqrt_cov.sqrt_cov_matrix(2)?;
    let r = cert.ellipsoid_radius();
    Ok((0..points)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / points as f64;
            let (u0, u1) = (t.cos(), t.sin());
            [x[0] + r * (s[(0, 0)] * u0 + s[(0, 1)] * u1), x[1] + r * (s[(1, 0)] * u0 + s[(1, 1)] * u1)]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use smoothcert_core::SpdMatrix;

    fn record(id: usize, proxy: Option<f64>, correct: bool) -> CertRecord {
        let mut cert = Certificate::abstain(id, Method::Rs, SmoothingSpec::Isotropic(1.0), None);
        if let Some(p) = proxy {
            cert.predicted_class = Some(if correct { 0 } else { 1 });
            cert.proxy_radius = p;
            cert.radius_gap = 2.0 * p;
            cert.pa_lower = 0.9;
        }
        CertRecord { cert, true_label: 0, opt: None, trace: Vec::new() }
    }

    #[test]
    fn curve_counts_all_inputs() {
        let recs = [record(0, Some(1.0), true), record(1, Some(2.0), true), record(2, None, true)];
        let c = build_curve(&recs, &[0.0, 1.0, 1.5, 2.0, 2.5], 0.25).unwrap();
        let acc: Vec<f64> = c.iter().map(|p| p.certified_accuracy).collect();
        assert_eq!(acc, vec![2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);
        let recs = [record(0, Some(1.0), false), record(1, Some(2.0), true)];
        assert_eq!(build_curve(&recs, &[0.0], 0.25).unwrap()[0].certified_accuracy, 0.5);
    }

    #[test]
    fn grid_is_inclusive() {
        let g = radius_grid(6.0, 0.05).unwrap();
        assert_eq!(g.len(), 121);
        assert!((g[120] - 6.0).abs() < 1e-12);
        assert!(radius_grid(1.0, 0.0).is_err());
    }

    #[test]
    fn identical_sets_dominate_both_ways() {
        let recs = [record(0, Some(1.0), true), record(1, Some(0.3), true)];
        let grid = radius_grid(2.0, 0.5).unwrap();
        let a = MethodCurve::new(&recs, &grid, 0.25).unwrap();
        let mut b = a.clone();
        b.method = Method::Ddrs;
        let cmp = compare_methods(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(cmp.dominance(Method::Rs, Method::Ddrs), Some(1.0));
        assert_eq!(cmp.dominance(Method::Ddrs, Method::Rs), Some(1.0));
        assert!(!strictly_dominates(&a, &b, 0.0));
        let s = cmp.summary(Method::Rs).unwrap();
        assert!((s.mean_proxy - 0.65).abs() < 1e-12);
        assert_eq!(s.clean_accuracy, 1.0);
        assert!((s.auc - 0.75).abs() < 1e-12, "{}", s.auc);
    }

    #[test]
    fn disjoint_grids_fail() {
        let recs = [record(0, Some(1.0), true)];
        let a = MethodCurve::new(&recs, &[0.0, 1.0], 0.25).unwrap();
        let mut b = MethodCurve::new(&recs, &[0.5, 1.5], 0.25).unwrap();
        b.method = Method::Ddrs;
        assert!(matches!(compare_methods(&[a, b]), Err(AppError::GridMismatch(_))));
    }

    fn cert_with(spec: SmoothingSpec, gap: f64) -> Certificate {
        let mut c = Certificate::abstain(0, Method::Rddrs, spec, None);
        c.predicted_class = Some(0);
        c.radius_gap = gap;
        c
    }

    #[test]
    fn isotropic_region_is_a_circle() {
        let pts = export_region_2d(&[0.0, 0.0], &cert_with(SmoothingSpec::Isotropic(1.0), 2.0), 64).unwrap();
        for p in pts {
            assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_region_semi_axes() {
        let pts = export_region_2d(&[1.0, -1.0], &cert_with(SmoothingSpec::Diagonal(vec![1.0, 2.0]), 2.0), 4).unwrap();
        let want = [[2.0, -1.0], [1.0, 1.0], [0.0, -1.0], [1.0, -3.0]];
        for (p, w) in pts.iter().zip(want) {
            assert!((p[0] - w[0]).abs() < 1e-12 && (p[1] - w[1]).abs() < 1e-12, "{p:?} vs {w:?}");
        }
    }

    #[test]
    fn rotated_region_principal_axis() {
        let q = smoothcert_core::sampling::rotation_2d(45.0);
        let c = SpdMatrix::from_diagonal(&[1.0, 2.0]).unwrap().congruence(&q).unwrap();
        let pts = export_region_2d(&[0.0, 0.0], &cert_with(SmoothingSpec::Full(c), 2.0), 360).unwrap();
        // the long axis of diag(1, 2) is e₂; turned by 45° it points at 135°
        let n = pts.len() as f64;
        let sxx = pts.iter().map(|p| p[0] * p[0]).sum::<f64>() / n;
        let syy = pts.iter().map(|p| p[1] * p[1]).sum::<f64>() / n;
        let sxy = pts.iter().map(|p| p[0] * p[1]).sum::<f64>() / n;
        let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        assert!((angle.to_degrees().rem_euclid(180.0) - 135.0).abs() < 1e-9, "{}", angle.to_degrees());
        assert!(matches!(export_region_2d(&[0.0; 3], &cert_with(SmoothingSpec::Isotropic(1.0), 1.0), 8), Err(AppError::Dim(3))));
    }
}
