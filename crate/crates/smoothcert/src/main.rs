use clap::{Args, Parser, Subcommand, ValueEnum};
use smoothcert::certs_io::{self, read_sidecar, records_by_method};
use smoothcert::config::{resolve, DatasetKind, MethodTag, Overrides, Profile};
use smoothcert::data_io::write_toy_csv;
use smoothcert::error::{AppError, Result};
use smoothcert::harness::{self, compare_methods, export_region_2d, radius_grid, MethodCurve};
use smoothcert::model_io::{load_model, save_model};
use smoothcert_core::{Method, SoftClassifier};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

// the optimizers allocate many short-lived batch matrices
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "smoothcert", version, about = "Certified robustness with optimized Gaussian smoothing")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a classifier with Gaussian noise augmentation.
    Train(TrainArgs),
    /// Certify test inputs with RS, DDRS, ANCER and RDDRS.
    Certify(CertifyArgs),
    /// Certified-accuracy curves and a method summary from a certify run.
    Curve(CurveArgs),
    /// Boundary polyline of one certified region (2-D inputs only).
    Region2d(RegionArgs),
    /// Write the synthetic plane dataset as CSV.
    ExportToy(ExportToyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Mnist,
    Toy2d,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Mnist => DatasetKind::Mnist,
            DatasetArg::Toy2d => DatasetKind::Toy2d,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Args)]
struct Common {
    /// JSON document with any RunConfig fields; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    dataset: Option<DatasetArg>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    epochs: Option<usize>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated subset of rs,ddrs,ancer,rddrs.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    outdir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct CurveArgs {
    /// Output directory of a certify run (or its certificates.json).
    #[arg(long)]
    certs: PathBuf,
    #[arg(long, default_value_t = 6.0)]
    grid_max: f64,
    #[arg(long, default_value_t = 0.05)]
    grid_step: f64,
    #[arg(long, default_value = "curves.csv")]
    out: PathBuf,
    /// Summary JSON; defaults to `summary.json` next to `--out`.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct RegionArgs {
    /// certificates.json of a certify run, or its directory.
    #[arg(long)]
    cert: PathBuf,
    #[arg(long, default_value_t = 0)]
    input_id: usize,
    #[arg(long, default_value = "rddrs")]
    method: String,
    #[arg(long, default_value_t = 256)]
    points: usize,
    #[arg(long, default_value = "region.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ExportToyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "toy2d.csv")]
    out: PathBuf,
}

fn read_config(path: Option<&Path>) -> Result<Option<serde_json::Value>> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map(Some).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
}

fn overrides(c: &Common) -> Overrides {
    Overrides {
        profile: c.profile.map(Into::into),
        dataset: c.dataset.map(Into::into),
        sigma: c.sigma,
        seed: c.seed,
        ..Default::default()
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(d) => std::fs::create_dir_all(d).map_err(|e| AppError::io(d, e)),
        None => Ok(()),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut ov = overrides(&a.common);
    ov.epochs = a.epochs;
    ov.train_seed = a.common.seed;
    ov.model = a.out;
    let cfg = resolve(read_config(a.common.config.as_deref())?, &ov)?;
    let (net, acc) = harness::train_model(&cfg)?;
    save_model(&cfg.model, &net)?;
    println!("trained {:?} sigma={} -> {} (clean test accuracy {acc:.4})", net.layer_dims(), cfg.sigma, cfg.model.display());
    Ok(())
}

fn certify(a: CertifyArgs) -> Result<()> {
    let mut ov = overrides(&a.common);
    ov.model = a.model;
    ov.methods = a.methods.as_deref().map(MethodTag::parse_list).transpose()?;
    ov.subset = a.subset;
    ov.outdir = a.outdir;
    ov.workers = a.workers;
    let cfg = resolve(read_config(a.common.config.as_deref())?, &ov)?;
    let net = load_model(&cfg.model)?;
    let (_, test) = harness::load_datasets(&cfg)?;
    let results = harness::run_certification(&cfg, &net, &test)?;
    certs_io::write_run(&cfg.outdir, &cfg, &results, net.input_dim())?;
    let n = results.len();
    for m in cfg.method_list() {
        let recs: Vec<_> = results.iter().flat_map(|r| &r.records).filter(|r| r.cert.method == m).collect();
        let correct = recs.iter().filter(|r| r.is_correct()).count();
        let mean = recs.iter().map(|r| r.credited_proxy()).sum::<f64>() / n as f64;
        println!("{m:>5}: certified correct {correct}/{n}, mean proxy radius {mean:.4}");
    }
    println!("wrote {}", cfg.outdir.display());
    Ok(())
}

fn curve(a: CurveArgs) -> Result<()> {
    let side = read_sidecar(&a.certs)?;
    let grid = radius_grid(a.grid_max, a.grid_step)?;
    let mut curves = Vec::new();
    for (_, recs) in records_by_method(&side)? {
        curves.push(MethodCurve::new(&recs, &grid, side.config.sigma)?);
    }
    let cmp = compare_methods(&curves)?;
    ensure_parent(&a.out)?;
    certs_io::write_curves_csv(&a.out, &curves.iter().map(|c| c.points.clone()).collect::<Vec<_>>())?;
    let summary = a.summary.unwrap_or_else(|| a.out.with_file_name("summary.json"));
    certs_io::write_json(&summary, &certs_io::comparison_json(&cmp))?;
    for s in &cmp.methods {
        println!(
            "{:>5}: mean proxy {:.4} ± {:.4}, clean {:.3}, auc {:.4}",
            s.method.as_str(),
            s.mean_proxy,
            s.mean_proxy_se,
            s.clean_accuracy,
            s.auc
        );
    }
    println!("wrote {} and {}", a.out.display(), summary.display());
    Ok(())
}

fn region2d(a: RegionArgs) -> Result<()> {
    let side = read_sidecar(&a.cert)?;
    let method = Method::parse(&a.method).ok_or_else(|| AppError::Config(format!("unknown method {:?}", a.method)))?;
    let input = side
        .inputs
        .iter()
        .find(|i| i.input_id == a.input_id)
        .ok_or_else(|| AppError::Data(format!("no input {} in the certificate file", a.input_id)))?;
    let rec = side
        .records
        .iter()
        .find(|r| r.input_id == a.input_id && r.method == method.as_str())
        .ok_or_else(|| AppError::Data(format!("no {method} certificate for input {}", a.input_id)))?
        .to_record()?;
    if rec.cert.is_abstain() {
        eprintln!("note: input {} abstained under {method}; the region is empty", a.input_id);
    }
    let pts = export_region_2d(&input.x, &rec.cert, a.points)?;
    ensure_parent(&a.out)?;
    certs_io::write_region_csv(&a.out, &pts)?;
    println!("wrote {} boundary points to {}", pts.len(), a.out.display());
    Ok(())
}

fn export_toy(a: ExportToyArgs) -> Result<()> {
    let ov = Overrides { dataset: Some(DatasetKind::Toy2d), ..Default::default() };
    let cfg = resolve(read_config(a.config.as_deref())?, &ov)?;
    let smoothcert::config::DatasetConfig::Toy2d { toy, .. } = &cfg.dataset else { unreachable!("dataset kind forced to toy2d") };
    let ds = smoothcert::data_io::gen_toy2d(toy)?;
    ensure_parent(&a.out)?;
    write_toy_csv(&a.out, &ds)?;
    println!("wrote {} points to {}", ds.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Train(a) => train(a),
        Cmd::Certify(a) => certify(a),
        Cmd::Curve(a) => curve(a),
        Cmd::Region2d(a) => region2d(a),
        Cmd::ExportToy(a) => export_toy(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
