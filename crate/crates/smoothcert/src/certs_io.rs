//! Output files of a certification run:
//!
//! * `certificates.csv`: one row per (input, method);
//! * `certificates.json`: the resolved config, the inputs and every record with its noise model;
//! * `traces.jsonl`: optimizer iterations, one JSON object per line.
//!
//! Plus the curve table, comparison summary and region polylines.

use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::harness::{CertRecord, Comparison, CurvePoint, InputResult, OptInfo};
use serde::{Deserialize, Serialize};
use smoothcert_core::optimizers::TraceRecord;
use smoothcert_core::{Certificate, Method, SmoothingSpec, SpdMatrix};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const CERTS_CSV: &str = "certificates.csv";
pub const CERTS_JSON: &str = "certificates.json";
pub const TRACES_JSONL: &str = "traces.jsonl";

const FORMAT_TAG: &str = "smoothcert-certificates/1";

/// Full matrices above this dimension are stored by their eigenvalues only.
pub const MAX_STORED_MATRIX_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpecJson {
    Isotropic { sigma: f64 },
    Diagonal { theta: Vec<f64> },
    Full { eigenvalues: Vec<f64>, matrix: Option<Vec<Vec<f64>>> },
}

impl SpecJson {
    pub fn from_spec(spec: &SmoothingSpec, d: usize) -> Result<Self> {
        Ok(match spec {
            SmoothingSpec::Isotropic(s) => SpecJson::Isotropic { sigma: *s },
            SmoothingSpec::Diagonal(t) => SpecJson::Diagonal { theta: t.clone() },
            SmoothingSpec::Full(c) => {
                let m = c.as_matrix();
                let matrix = (d <= MAX_STORED_MATRIX_DIM).then(|| (0..d).map(|i| m.row(i).iter().copied().collect()).collect());
                SpecJson::Full { eigenvalues: spec.eigenvalues(d)?, matrix }
            }
        })
    }

    /// The stored noise model. A full matrix stored without entries comes back
    /// as the diagonal of its eigenvalues, which keeps volume and smallest
    /// eigenvalue but not orientation.
    pub fn to_spec(&self) -> Result<SmoothingSpec> {
        Ok(match self {
            SpecJson::Isotropic { sigma } => SmoothingSpec::Isotropic(*sigma),
            SpecJson::Diagonal { theta } => SmoothingSpec::Diagonal(theta.clone()),
            SpecJson::Full { matrix: Some(rows), .. } => {
                let d = rows.len();
                if rows.iter().any(|r| r.len() != d) {
                    return Err(AppError::Format("covariance matrix is not square".into()));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                SmoothingSpec::Full(SpdMatrix::from_row_slice(d, &flat)?)
            }
            SpecJson::Full { eigenvalues, matrix: None } => SmoothingSpec::Diagonal(eigenvalues.clone()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptJson {
    pub sigma_star: f64,
    pub r_iso_star: f64,
    pub enclosure: f64,
    pub fallback: bool,
    pub converged: bool,
    pub degenerate_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordJson {
    pub input_id: usize,
    pub method: String,
    pub true_label: usize,
    pub predicted_class: i64,
    #[serde(rename = "pA_lower")]
    pub pa_lower: f64,
    pub radius_gap: f64,
    pub proxy_radius: f64,
    pub det_root: f64,
    pub lambda_min: f64,
    pub wall_time_s: f64,
    pub note: Option<String>,
    pub sqrt_cov: SpecJson,
    pub optimizer: Option<OptJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputJson {
    pub input_id: usize,
    pub true_label: usize,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub config: RunConfig,
    pub dim: usize,
    pub inputs: Vec<InputJson>,
    pub records: Vec<RecordJson>,
}

fn predicted(c: &Certificate) -> i64 {
    c.predicted_class.map_or(-1, |k| k as i64)
}

fn record_json(r: &CertRecord, d: usize) -> Result<RecordJson> {
    let c = &r.cert;
    Ok(RecordJson {
        input_id: c.input_id,
        method: c.method.as_str().into(),
        true_label: r.true_label,
        predicted_class: predicted(c),
        pa_lower: c.pa_lower,
        radius_gap: c.radius_gap,
        proxy_radius: c.proxy_radius,
        det_root: c.sqrt_cov.det_root(d)?,
        lambda_min: c.sqrt_cov.lambda_min(d)?,
        wall_time_s: c.wall_time_s,
        note: c.note.clone(),
        sqrt_cov: SpecJson::from_spec(&c.sqrt_cov, d)?,
        optimizer: r.opt.as_ref().map(|o| OptJson {
            sigma_star: o.sigma_star,
            r_iso_star: o.r_iso_star,
            enclosure: o.enclosure,
            fallback: o.fallback,
            converged: o.converged,
            degenerate_steps: o.degenerate_steps,
        }),
    })
}

impl RecordJson {
    pub fn to_record(&self) -> Result<CertRecord> {
        let method = Method::parse(&self.method).ok_or_else(|| AppError::Format(format!("unknown method tag {:?}", self.method)))?;
        let predicted_class = match self.predicted_class {
            -1 => None,
            k if k >= 0 => Some(k as usize),
            k => return Err(AppError::Format(format!("bad predicted_class {k}"))),
        };
        Ok(CertRecord {
            cert: Certificate {
                input_id: self.input_id,
                predicted_class,
                pa_lower: self.pa_lower,
                radius_gap: self.radius_gap,
                proxy_radius: self.proxy_radius,
                sqrt_cov: self.sqrt_cov.to_spec()?,
                method,
                wall_time_s: self.wall_time_s,
                note: self.note.clone(),
            },
            true_label: self.true_label,
            opt: self.optimizer.as_ref().map(|o| OptInfo {
                sigma_star: o.sigma_star,
                r_iso_star: o.r_iso_star,
                enclosure: o.enclosure,
                fallback: o.fallback,
                converged: o.converged,
                degenerate_steps: o.degenerate_steps,
            }),
            trace: Vec::new(),
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| AppError::io(path, e))?))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |e| AppError::Data(format!("{}: {e}", path.display()))
}

/// Writes the certificate table.
pub fn write_certificates_csv(path: &Path, results: &[InputResult], d: usize) -> Result<()> {
    let fail = csv_err(path);
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["input_id", "method_tag", "predicted_class", "pA_lower", "radius_gap", "proxy_radius", "det_root", "lambda_min", "wall_time_s"])
        .map_err(&fail)?;
    for r in results.iter().flat_map(|r| &r.records) {
        let c = &r.cert;
        w.write_record([
            c.input_id.to_string(),
            c.method.as_str().to_string(),
            predicted(c).to_string(),
            c.pa_lower.to_string(),
            c.radius_gap.to_string(),
            c.proxy_radius.to_string(),
            c.sqrt_cov.det_root(d)?.to_string(),
            c.sqrt_cov.lambda_min(d)?.to_string(),
            c.wall_time_s.to_string(),
        ])
        .map_err(&fail)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

#[derive(Serialize)]
struct TraceLine<'a> {
    input_id: usize,
    method: &'a str,
    iter: usize,
    #[serde(rename = "H")]
    h: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "P")]
    p: f64,
    #[serde(rename = "Kmin")]
    kmin: f64,
    lambda_min: f64,
    step_size: f64,
}

pub fn write_traces(path: &Path, results: &[InputResult]) -> Result<()> {
    let mut w = create(path)?;
    for r in results.iter().flat_map(|r| &r.records) {
        for t in &r.trace {
            let line = trace_line(r.cert.input_id, r.cert.method, t);
            serde_json::to_writer(&mut w, &line).map_err(|e| AppError::Data(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| AppError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

fn trace_line(input_id: usize, method: Method, t: &TraceRecord) -> TraceLine<'static> {
    TraceLine { input_id, method: method.as_str(), iter: t.iter, h: t.h, r: t.r, p: t.p, kmin: t.kmin, lambda_min: t.lambda_min, step_size: t.step_size }
}

pub fn sidecar(cfg: &RunConfig, results: &[InputResult], d: usize) -> Result<Sidecar> {
    let mut records = Vec::new();
    for r in results.iter().flat_map(|r| &r.records) {
        records.push(record_json(r, d)?);
    }
    Ok(Sidecar {
        format: FORMAT_TAG.into(),
        config: cfg.clone(),
        dim: d,
        inputs: results.iter().map(|r| InputJson { input_id: r.input_id, true_label: r.true_label, x: r.x.clone() }).collect(),
        records,
    })
}

/// Writes the three run files into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, results: &[InputResult], d: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    write_certificates_csv(&dir.join(CERTS_CSV), results, d)?;
    let side = sidecar(cfg, results, d)?;
    let path = dir.join(CERTS_JSON);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &side).map_err(|e| AppError::Data(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| AppError::io(&path, e))?;
    w.flush().map_err(|e| AppError::io(&path, e))?;
    write_traces(&dir.join(TRACES_JSONL), results)
}

/// Accepts the sidecar itself, or a run directory / table next to it.
pub fn sidecar_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CERTS_JSON)
    } else if p.extension().is_some_and(|e| e == "csv") {
        p.with_file_name(CERTS_JSON)
    } else {
        p.to_path_buf()
    }
}

pub fn read_sidecar(p: &Path) -> Result<Sidecar> {
    let path = sidecar_path(p);
    let bytes = fs::read(&path).map_err(|e| AppError::io(&path, e))?;
    let side: Sidecar = serde_json::from_slice(&bytes).map_err(|e| AppError::Format(format!("{}: {e}", path.display())))?;
    if side.format != FORMAT_TAG {
        return Err(AppError::Format(format!("{}: unknown format {:?}", path.display(), side.format)));
    }
    Ok(side)
}

/// Records of the sidecar grouped by method, in canonical order.
pub fn records_by_method(side: &Sidecar) -> Result<Vec<(Method, Vec<CertRecord>)>> {
    let mut out: Vec<(Method, Vec<CertRecord>)> = Vec::new();
    for rj in &side.records {
        let r = rj.to_record()?;
        match out.iter_mut().find(|(m, _)| *m == r.cert.method) {
            Some((_, v)) => v.push(r),
            None => out.push((r.cert.method, vec![r])),
        }
    }
    out.sort_by_key(|(m, _)| *m);
    Ok(out)
}

pub fn write_curves_csv(path: &Path, curves: &[Vec<CurvePoint>]) -> Result<()> {
    let fail = csv_err(path);
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["radius", "certified_accuracy", "method_tag", "sigma_train"]).map_err(&fail)?;
    for p in curves.iter().flatten() {
        w.write_record([p.radius.to_string(), p.certified_accuracy.to_string(), p.method.as_str().to_string(), p.sigma_train.to_string()])
            .map_err(&fail)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn comparison_json(cmp: &Comparison) -> serde_json::Value {
    let methods: Vec<_> = cmp
        .methods
        .iter()
        .map(|s| {
            serde_json::json!({
                "method": s.method.as_str(),
                "mean_proxy": s.mean_proxy,
                "mean_proxy_se": s.mean_proxy_se,
                "mean_proxy_certified": s.mean_proxy_certified,
                "clean_accuracy": s.clean_accuracy,
                "auc": s.auc,
            })
        })
        .collect();
    let dominance: Vec<_> =
        cmp.dominance.iter().map(|d| serde_json::json!({"a": d.a.as_str(), "b": d.b.as_str(), "fraction": d.fraction})).collect();
    serde_json::json!({ "grid_points": cmp.grid.len(), "methods": methods, "dominance": dominance })
}

pub fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| AppError::Data(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| AppError::io(path, e))?;
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn write_region_csv(path: &Path, pts: &[[f64; 2]]) -> Result<()> {
    let fail = csv_err(path);
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["x1", "x2"]).map_err(&fail)?;
    for p in pts {
        w.write_record([p[0].to_string(), p[1].to_string()]).map_err(&fail)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}
