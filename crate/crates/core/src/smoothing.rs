//! The smoothed classifier `G(x) = E[F(x + S z)]`, `z ~ N(0, I)`, its Monte-Carlo
//! estimates, certified radii, and the two-stage certification protocol.
//!
//! Every noise model is stored by its sqrt-covariance `S` (`σI`, `diag(θ)` or a
//! full SPD `C`); the effective covariance is `S²`. For gap
//! `r = Φ⁻¹(p_A) − Φ⁻¹(p_B)` the top class is certified on the ellipsoid
//! `{δ : ‖S⁻¹δ‖₂ < r/2}`.

use crate::classifier::{argmax, SoftClassifier};
use crate::error::{domain, Error, Result};
use crate::sampling::{derive_seed, normal_matrix, stream_rng};
use crate::spd_manifold::SpdMatrix;
use crate::stats::{clopper_pearson_lower, std_normal_quantile, ConfidenceParams};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

/// Rows per Monte-Carlo block. Block `b` of a run always draws from stream `b`.
pub const MC_BLOCK: usize = 1024;

/// Noise model of a smoothed classifier, as a sqrt-covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothingSpec {
    Isotropic(f64),
    Diagonal(Vec<f64>),
    Full(SpdMatrix),
}

impl SmoothingSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SmoothingSpec::Isotropic(s) if !(*s > 0.0 && s.is_finite()) => Err(domain(alloc::format!("sigma must be positive, got {s}"))),
            SmoothingSpec::Diagonal(t) if t.is_empty() || t.iter().any(|v| !(*v > 0.0 && v.is_finite())) => {
                Err(domain("diagonal scales must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Input dimension fixed by the spec, if any (isotropic specs fit every dimension).
    pub fn dim(&self) -> Option<usize> {
        match self {
            SmoothingSpec::Isotropic(_) => None,
            SmoothingSpec::Diagonal(t) => Some(t.len()),
            SmoothingSpec::Full(c) => Some(c.dim()),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        match self.dim() {
            Some(k) if k != d => Err(Error::DimMismatch { expected: d, got: k }),
            _ => Ok(()),
        }
    }

    /// Eigenvalues of `S`, ascending.
    pub fn eigenvalues(&self, d: usize) -> Result<Vec<f64>> {
        self.check_dim(d)?;
        let mut v = match self {
            SmoothingSpec::Isotropic(s) => vec![*s; d],
            SmoothingSpec::Diagonal(t) => t.clone(),
            SmoothingSpec::Full(c) => c.eigen()?.values.iter().copied().collect(),
        };
        v.sort_by(f64::total_cmp);
        Ok(v)
    }

    /// `det(S)^{1/d}`.
    pub fn det_root(&self, d: usize) -> Result<f64> {
        match self {
            SmoothingSpec::Isotropic(s) => Ok(*s),
            SmoothingSpec::Diagonal(t) => {
                self.check_dim(d)?;
                Ok(libm::exp(t.iter().map(|&v| libm::log(v)).sum::<f64>() / t.len() as f64))
            }
            SmoothingSpec::Full(c) => {
                self.check_dim(d)?;
                c.det_root()
            }
        }
    }

    pub fn lambda_min(&self, d: usize) -> Result<f64> {
        Ok(self.eigenvalues(d)?[0])
    }

    /// Dense `S` for a `d`-dimensional input.
    pub fn sqrt_cov_matrix(&self, d: usize) -> Result<DMatrix<f64>> {
        self.check_dim(d)?;
        Ok(match self {
            SmoothingSpec::Isotropic(s) => DMatrix::identity(d, d) * *s,
            SmoothingSpec::Diagonal(t) => DMatrix::from_diagonal(&DVector::from_column_slice(t)),
            SmoothingSpec::Full(c) => c.as_matrix().clone(),
        })
    }

    /// Maps standard normal rows `z_j` to `S z_j` (`S` is symmetric, so this is `Z S`).
    pub fn transform_noise(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let d = z.ncols();
        self.check_dim(d)?;
        Ok(match self {
            SmoothingSpec::Isotropic(s) => z * *s,
            SmoothingSpec::Diagonal(t) => {
                let mut out = z.clone();
                for (j, &s) in t.iter().enumerate() {
                    out.column_mut(j).scale_mut(s);
                }
                out
            }
            SmoothingSpec::Full(c) => z * c.as_matrix(),
        })
    }
}

/// `x + S z_j` for every row of `z`.
pub fn perturbed_inputs(x: &[f64], spec: &SmoothingSpec, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() != x.len() {
        return Err(Error::DimMismatch { expected: x.len(), got: z.ncols() });
    }
    let mut y = spec.transform_noise(z)?;
    for (j, &xj) in x.iter().enumerate() {
        y.column_mut(j).add_scalar_mut(xj);
    }
    Ok(y)
}

fn check_input<F: SoftClassifier + ?Sized>(f: &F, x: &[f64]) -> Result<()> {
    if x.len() != f.input_dim() {
        return Err(Error::DimMismatch { expected: f.input_dim(), got: x.len() });
    }
    Ok(())
}

/// Average of `F(x + S z_j)` over the rows of an explicit noise matrix.
pub fn smoothed_probs_with_noise<F: SoftClassifier + ?Sized>(
    f: &F,
    x: &[f64],
    spec: &SmoothingSpec,
    z: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    check_input(f, x)?;
    let p = f.probs_batch(&perturbed_inputs(x, spec, z)?);
    let n = p.nrows() as f64;
    Ok(p.column_iter().map(|c| c.sum() / n).collect())
}

fn for_each_block<F: SoftClassifier + ?Sized>(
    f: &F,
    x: &[f64],
    spec: &SmoothingSpec,
    n: usize,
    seed: u64,
    mut visit: impl FnMut(&DMatrix<f64>),
) -> Result<()> {
    check_input(f, x)?;
    spec.validate()?;
    let d = x.len();
    let mut done = 0;
    let mut block = 0u64;
    while done < n {
        let rows = MC_BLOCK.min(n - done);
        let z = normal_matrix(&mut stream_rng(seed, block), rows, d);
        visit(&f.probs_batch(&perturbed_inputs(x, spec, &z)?));
        done += rows;
        block += 1;
    }
    Ok(())
}

/// Monte-Carlo estimate of `G(x)` from `n` seeded noise draws.
pub fn mc_class_probs<F: SoftClassifier + ?Sized>(f: &F, x: &[f64], spec: &SmoothingSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(domain("need at least one sample"));
    }
    let mut acc = vec![0.0; f.num_classes()];
    for_each_block(f, x, spec, n, seed, |p| {
        for (k, col) in p.column_iter().enumerate() {
            acc[k] += col.sum();
        }
    })?;
    for v in &mut acc {
        *v /= n as f64;
    }
    Ok(acc)
}

/// Hard-vote counts: how often each class is the argmax of `F(x + S z_j)`.
pub fn mc_vote_counts<F: SoftClassifier + ?Sized>(f: &F, x: &[f64], spec: &SmoothingSpec, n: usize, seed: u64) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; f.num_classes()];
    for_each_block(f, x, spec, n, seed, |p| {
        for row in p.row_iter() {
            counts[argmax(row.iter().copied())] += 1;
        }
    })?;
    Ok(counts)
}

fn check_open_unit(p: f64, name: &str) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(alloc::format!("{name} must be in (0,1), got {p}")));
    }
    Ok(())
}

/// `Φ⁻¹(p_A) − Φ⁻¹(p_B)`.
pub fn certified_radius_gap(pa: f64, pb: f64) -> Result<f64> {
    check_open_unit(pa, "pA")?;
    check_open_unit(pb, "pB")?;
    Ok(std_normal_quantile(pa)? - std_normal_quantile(pb)?)
}

/// Isotropic ℓ₂ radius `(σ/2)(Φ⁻¹(p_A) − Φ⁻¹(p_B))`.
pub fn certified_radius_iso(pa: f64, pb: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(domain(alloc::format!("sigma must be positive, got {sigma}")));
    }
    Ok(0.5 * sigma * certified_radius_gap(pa, pb)?)
}

/// Radius of the certified ellipsoid in the `‖S⁻¹·‖₂` norm for a given gap.
pub fn ellipsoid_radius(radius_gap: f64) -> f64 {
    0.5 * radius_gap
}

/// Volume-equivalent isotropic radius `radius · det(S)^{1/d}` of an ellipsoid
/// `{δ : ‖S⁻¹δ‖₂ < radius}`.
pub fn proxy_radius(radius: f64, spec: &SmoothingSpec, d: usize) -> Result<f64> {
    if !(radius >= 0.0) {
        return Err(domain(alloc::format!("radius must be non-negative, got {radius}")));
    }
    Ok(radius * spec.det_root(d)?)
}

/// Which certification method produced a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Rs,
    Ddrs,
    Ancer,
    Rddrs,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Rs, Method::Ddrs, Method::Ancer, Method::Rddrs];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rs => "RS",
            Method::Ddrs => "DDRS",
            Method::Ancer => "ANCER",
            Method::Rddrs => "RDDRS",
        }
    }

    /// Stable code mixed into per-input seeds.
    pub fn code(self) -> u64 {
        match self {
            Method::Rs => 1,
            Method::Ddrs => 2,
            Method::Ancer => 3,
            Method::Rddrs => 4,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s))
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of certifying one input with one noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub input_id: usize,
    /// `None` means the protocol abstained.
    pub predicted_class: Option<usize>,
    pub pa_lower: f64,
    /// `Φ⁻¹(p_A) − Φ⁻¹(p_B)` with `p_B = 1 − p_A`; zero when abstaining.
    pub radius_gap: f64,
    /// Volume-equivalent radius of the certified ellipsoid; zero when abstaining.
    pub proxy_radius: f64,
    pub sqrt_cov: SmoothingSpec,
    pub method: Method,
    pub wall_time_s: f64,
    pub note: Option<String>,
}

impl Certificate {
    pub fn abstain(input_id: usize, method: Method, sqrt_cov: SmoothingSpec, note: Option<String>) -> Self {
        Self {
            input_id,
            predicted_class: None,
            pa_lower: 0.0,
            radius_gap: 0.0,
            proxy_radius: 0.0,
            sqrt_cov,
            method,
            wall_time_s: 0.0,
            note,
        }
    }

    pub fn is_abstain(&self) -> bool {
        self.predicted_class.is_none()
    }

    /// Radius of the certified ellipsoid `{δ : ‖S⁻¹δ‖₂ < r}`.
    pub fn ellipsoid_radius(&self) -> f64 {
        ellipsoid_radius(self.radius_gap)
    }
}

/// Two-stage certification: `n0` votes pick the class, `n` fresh votes bound
/// its probability from below. Abstains when the bound does not exceed 1/2.
pub fn predict_certify<F: SoftClassifier + ?Sized>(
    f: &F,
    x: &[f64],
    spec: &SmoothingSpec,
    conf: &ConfidenceParams,
    seed: u64,
    input_id: usize,
    method: Method,
) -> Result<Certificate> {
    conf.validate()?;
    let d = x.len();
    let select = mc_vote_counts(f, x, spec, conf.n0, derive_seed(&[seed, 0]))?;
    let top = argmax(select.iter().map(|&c| c as f64));
    let counts = mc_vote_counts(f, x, spec, conf.n, derive_seed(&[seed, 1]))?;
    let pa_lower = clopper_pearson_lower(counts[top], conf.n as u64, conf.alpha)?;
    if pa_lower <= 0.5 {
        let mut c = Certificate::abstain(input_id, method, spec.clone(), None);
        c.pa_lower = pa_lower;
        return Ok(c);
    }
    let radius_gap = certified_radius_gap(pa_lower, 1.0 - pa_lower)?;
    let proxy = proxy_radius(ellipsoid_radius(radius_gap), spec, d)?;
    Ok(Certificate {
        input_id,
        predicted_class: Some(top),
        pa_lower,
        radius_gap,
        proxy_radius: proxy,
        sqrt_cov: spec.clone(),
        method,
        wall_time_s: 0.0,
        note: None,
    })
}
