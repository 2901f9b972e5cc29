//! Run configuration. A run is resolved in three layers: the defaults of the
//! chosen profile and dataset, then a JSON file (merged key by key), then
//! command-line flags.

use crate::data_io::Toy2DConfig;
use crate::error::{AppError, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use smoothcert_core::optimizers::{AncerConfig, DdrsConfig, InitialCovariance, RddrsConfig, RunnerUp, Selection};
use smoothcert_core::{Activation, ConfidenceParams, Method, TrainConfig};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Reduced sample counts and pooled MNIST; minutes on one core.
    Desk,
    /// Published sample counts at full resolution.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Toy2d,
    Mnist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Toy2d {
        toy: Toy2DConfig,
        /// Share of the generated points used for training; the rest is the test set.
        train_fraction: f64,
        split_seed: u64,
    },
    Mnist {
        /// Directory holding the four standard IDX files.
        dir: PathBuf,
        /// Average-pooling factor on the 28×28 images (1 keeps full resolution).
        pool: usize,
    },
}

impl DatasetConfig {
    pub fn kind(&self) -> DatasetKind {
        match self {
            DatasetConfig::Toy2d { .. } => DatasetKind::Toy2d,
            DatasetConfig::Mnist { .. } => DatasetKind::Mnist,
        }
    }

    fn defaults(kind: DatasetKind, profile: Profile) -> Self {
        match kind {
            DatasetKind::Toy2d => DatasetConfig::Toy2d { toy: Toy2DConfig::default(), train_fraction: 0.8, split_seed: 0 },
            DatasetKind::Mnist => DatasetConfig::Mnist {
                dir: PathBuf::from("data/mnist"),
                pool: match profile {
                    Profile::Desk => 4,
                    Profile::Paper => 1,
                },
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MethodTag {
    #[serde(alias = "rs")]
    Rs,
    #[serde(alias = "ddrs")]
    Ddrs,
    #[serde(alias = "ancer")]
    Ancer,
    #[serde(alias = "rddrs")]
    Rddrs,
}

impl MethodTag {
    pub fn method(self) -> Method {
        match self {
            MethodTag::Rs => Method::Rs,
            MethodTag::Ddrs => Method::Ddrs,
            MethodTag::Ancer => Method::Ancer,
            MethodTag::Rddrs => Method::Rddrs,
        }
    }

    /// Parses a comma-separated list such as `rs,ddrs,ancer,rddrs`.
    pub fn parse_list(s: &str) -> Result<Vec<MethodTag>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| match Method::parse(t) {
                Some(Method::Rs) => Ok(MethodTag::Rs),
                Some(Method::Ddrs) => Ok(MethodTag::Ddrs),
                Some(Method::Ancer) => Ok(MethodTag::Ancer),
                Some(Method::Rddrs) => Ok(MethodTag::Rddrs),
                None => Err(AppError::Config(format!("unknown method {t:?}; expected rs, ddrs, ancer or rddrs"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceSettings {
    pub alpha: f64,
    pub n0: usize,
    pub n: usize,
}

impl ConfidenceSettings {
    pub fn params(&self) -> Result<ConfidenceParams> {
        Ok(ConfidenceParams::new(self.alpha, self.n0, self.n)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdrsSettings {
    pub lr: f64,
    pub n_samples: usize,
    pub iter_grid: Vec<usize>,
    /// Starting σ; `null` means the training σ.
    pub sigma_init: Option<f64>,
    pub n_eval: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunnerUpSetting {
    TopTwo,
    Complement,
}

impl From<RunnerUpSetting> for RunnerUp {
    fn from(r: RunnerUpSetting) -> Self {
        match r {
            RunnerUpSetting::TopTwo => RunnerUp::TopTwo,
            RunnerUpSetting::Complement => RunnerUp::Complement,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSettings {
    pub votes: bool,
    /// Rank with the certification lower bound at the run's `n` and `alpha`.
    pub confidence_bound: bool,
    pub penalty_se: f64,
    pub enclosure_se: f64,
}

impl SelectionSettings {
    fn certified() -> Self {
        Self { votes: true, confidence_bound: true, penalty_se: 1.0, enclosure_se: 3.0 }
    }

    fn selection(&self, conf: &ConfidenceSettings) -> Selection {
        Selection {
            votes: self.votes,
            bound: self.confidence_bound.then_some((conf.n as u64, conf.alpha)),
            penalty_se: self.penalty_se,
            enclosure_se: self.enclosure_se,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AncerSettings {
    pub lr_grid: Vec<f64>,
    pub kappa: f64,
    pub iterations: usize,
    pub n_samples: usize,
    pub runner_up: RunnerUpSetting,
    pub selection: SelectionSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RddrsInit {
    /// `σ* I`.
    Floor,
    /// The ANCER diagonal, projected onto the floor.
    Ancer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RddrsSettings {
    pub lr_grid: Vec<f64>,
    pub kappa: f64,
    pub iterations: usize,
    pub n_samples: usize,
    pub init: RddrsInit,
    pub runner_up: RunnerUpSetting,
    pub selection: SelectionSettings,
    /// Eigenvalue bound, in units of `σ*`, past which a run counts as diverged.
    pub max_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationSetting {
    Tanh,
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub activation: ActivationSetting,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: PathBuf,
    pub methods: Vec<MethodTag>,
    /// Training σ; RS certifies with it and DDRS starts from it.
    pub sigma: f64,
    pub profile: Profile,
    /// Number of test inputs, taken in index order.
    pub subset: usize,
    pub confidence: ConfidenceSettings,
    pub seed: u64,
    pub outdir: PathBuf,
    /// Threads in the per-input work pool.
    pub workers: usize,
    /// Write measured wall times into the certificate table. Off by default
    /// so that repeated runs produce identical files.
    pub record_timing: bool,
    pub ddrs: DdrsSettings,
    pub ancer: AncerSettings,
    pub rddrs: RddrsSettings,
    pub train: TrainSettings,
}

impl RunConfig {
    pub fn defaults(profile: Profile, kind: DatasetKind) -> Self {
        let ddrs = DdrsConfig::paper(0.25);
        let ancer = AncerConfig::paper();
        let rddrs = match profile {
            Profile::Desk => RddrsConfig::desk(),
            Profile::Paper => RddrsConfig::paper(),
        };
        // the volume term moves log C by about γ·R·P/d per step, so small inputs need small steps
        let rddrs_lr = match kind {
            DatasetKind::Toy2d => vec![0.02, 0.05, 0.1, 0.25],
            DatasetKind::Mnist => rddrs.lr_grid.clone(),
        };
        let (model, outdir, subset, train) = match kind {
            DatasetKind::Toy2d => (
                "runs/toy2d/model.bin",
                "runs/toy2d",
                100,
                TrainSettings {
                    epochs: 60,
                    batch_size: 32,
                    learning_rate: 0.1,
                    hidden: vec![32, 32],
                    activation: ActivationSetting::Tanh,
                    seed: 0,
                },
            ),
            DatasetKind::Mnist => (
                "runs/mnist/model.bin",
                "runs/mnist",
                500,
                TrainSettings {
                    epochs: 150,
                    batch_size: 32,
                    learning_rate: 0.05,
                    hidden: match profile {
                        Profile::Desk => vec![64, 32],
                        Profile::Paper => vec![256, 128],
                    },
                    activation: ActivationSetting::Tanh,
                    seed: 0,
                },
            ),
        };
        let conf = ConfidenceParams::default();
        RunConfig {
            dataset: DatasetConfig::defaults(kind, profile),
            model: model.into(),
            methods: vec![MethodTag::Rs, MethodTag::Ddrs, MethodTag::Ancer, MethodTag::Rddrs],
            sigma: 0.25,
            profile,
            subset,
            confidence: ConfidenceSettings { alpha: conf.alpha, n0: conf.n0, n: conf.n },
            seed: 0,
            outdir: outdir.into(),
            workers: 1,
            record_timing: false,
            ddrs: DdrsSettings {
                lr: ddrs.lr,
                n_samples: ddrs.n_samples,
                iter_grid: ddrs.iter_grid,
                sigma_init: None,
                n_eval: ddrs.n_eval,
            },
            ancer: AncerSettings {
                lr_grid: ancer.lr_grid,
                kappa: ancer.kappa,
                iterations: ancer.iterations,
                n_samples: ancer.n_samples,
                runner_up: RunnerUpSetting::TopTwo,
                selection: SelectionSettings::certified(),
            },
            rddrs: RddrsSettings {
                lr_grid: rddrs_lr,
                kappa: rddrs.kappa,
                iterations: rddrs.iterations,
                n_samples: rddrs.n_samples,
                init: RddrsInit::Floor,
                runner_up: RunnerUpSetting::TopTwo,
                selection: SelectionSettings::certified(),
                max_scale: rddrs.max_scale,
            },
            train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(AppError::Config("methods must not be empty".into()));
        }
        if self.subset == 0 {
            return Err(AppError::Config("subset must be at least 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(AppError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.workers == 0 {
            return Err(AppError::Config("workers must be at least 1".into()));
        }
        match &self.dataset {
            DatasetConfig::Toy2d { toy, train_fraction, .. } => {
                toy.validate()?;
                if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                    return Err(AppError::Config("train_fraction must be in (0,1)".into()));
                }
            }
            DatasetConfig::Mnist { pool, .. } => {
                if *pool == 0 || 28 % pool != 0 {
                    return Err(AppError::Config(format!("pool must divide 28, got {pool}")));
                }
            }
        }
        self.confidence.params()?;
        self.ddrs_config().validate()?;
        self.ancer_config().validate()?;
        self.rddrs_config(None).validate()?;
        self.train_config().validate_settings()?;
        Ok(())
    }

    pub fn confidence_params(&self) -> Result<ConfidenceParams> {
        self.confidence.params()
    }

    pub fn ddrs_config(&self) -> DdrsConfig {
        DdrsConfig {
            lr: self.ddrs.lr,
            n_samples: self.ddrs.n_samples,
            iter_grid: self.ddrs.iter_grid.clone(),
            sigma_init: self.ddrs.sigma_init.unwrap_or(self.sigma),
            n_eval: self.ddrs.n_eval,
            noise_frame: None,
        }
    }

    pub fn ancer_config(&self) -> AncerConfig {
        let a = &self.ancer;
        AncerConfig {
            lr_grid: a.lr_grid.clone(),
            kappa: a.kappa,
            iterations: a.iterations,
            n_samples: a.n_samples,
            runner_up: a.runner_up.into(),
            selection: a.selection.selection(&self.confidence),
        }
    }

    /// `ancer_spec` is the starting point when `init` is `ancer`.
    pub fn rddrs_config(&self, ancer_spec: Option<&smoothcert_core::SmoothingSpec>) -> RddrsConfig {
        let r = &self.rddrs;
        let init = match (r.init, ancer_spec) {
            (RddrsInit::Ancer, Some(s)) => InitialCovariance::From(s.clone()),
            _ => InitialCovariance::FloorIdentity,
        };
        RddrsConfig {
            lr_grid: r.lr_grid.clone(),
            kappa: r.kappa,
            iterations: r.iterations,
            n_samples: r.n_samples,
            init,
            runner_up: r.runner_up.into(),
            selection: r.selection.selection(&self.confidence),
            max_scale: r.max_scale,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            sigma_aug: self.sigma,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: t.seed,
            hidden: t.hidden.clone(),
            activation: match t.activation {
                ActivationSetting::Tanh => Activation::Tanh,
                ActivationSetting::Softplus => Activation::Softplus,
            },
        }
    }

    /// Methods in canonical order without repeats.
    pub fn method_list(&self) -> Vec<Method> {
        Method::ALL.into_iter().filter(|m| self.methods.iter().any(|t| t.method() == *m)).collect()
    }
}

trait ValidateSettings {
    fn validate_settings(&self) -> Result<()>;
}

impl ValidateSettings for TrainConfig {
    fn validate_settings(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) || self.hidden.contains(&0) {
            return Err(AppError::Config("train epochs, batch_size, learning_rate and hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub dataset: Option<DatasetKind>,
    pub model: Option<PathBuf>,
    pub methods: Option<Vec<MethodTag>>,
    pub sigma: Option<f64>,
    pub subset: Option<usize>,
    pub seed: Option<u64>,
    pub outdir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub epochs: Option<usize>,
    pub train_seed: Option<u64>,
}

/// Recursive object merge; `patch` wins. A dataset object whose `kind`
/// differs from the base replaces it wholesale.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let kind_changed = matches!((b.get("kind"), p.get("kind")), (Some(x), Some(y)) if x != y);
            if kind_changed {
                *b = p;
                return;
            }
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn peek<T: for<'de> Deserialize<'de>>(file: Option<&Value>, path: &[&str]) -> Result<Option<T>> {
    let mut v = match file {
        Some(v) => v,
        None => return Ok(None),
    };
    for key in path {
        match v.get(key) {
            Some(next) => v = next,
            None => return Ok(None),
        }
    }
    serde_json::from_value(v.clone())
        .map(Some)
        .map_err(|e| AppError::Config(format!("config field {}: {e}", path.join("."))))
}

/// Profile defaults, then `file`, then `cli`.
pub fn resolve(file: Option<Value>, cli: &Overrides) -> Result<RunConfig> {
    if let Some(f) = &file {
        if !f.is_object() {
            return Err(AppError::Config("config file must hold a JSON object".into()));
        }
    }
    let profile = match cli.profile {
        Some(p) => p,
        None => peek(file.as_ref(), &["profile"])?.unwrap_or(Profile::Desk),
    };
    let kind = match cli.dataset {
        Some(k) => k,
        None => peek(file.as_ref(), &["dataset", "kind"])?.unwrap_or(DatasetKind::Toy2d),
    };
    let mut value = serde_json::to_value(RunConfig::defaults(profile, kind)).expect("defaults serialize");
    if let Some(mut f) = file {
        // the flags decide profile and dataset kind
        if let Some(obj) = f.as_object_mut() {
            obj.insert("profile".into(), serde_json::to_value(profile).expect("enum"));
            if let Some(ds) = obj.get_mut("dataset").and_then(Value::as_object_mut) {
                if ds.get("kind").is_some_and(|k| *k != serde_json::to_value(kind).expect("enum")) {
                    obj.remove("dataset");
                }
            }
        }
        merge(&mut value, f);
    }
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| AppError::Config(format!("config: {e}")))?;
    if let Some(v) = &cli.model {
        cfg.model = v.clone();
    }
    if let Some(v) = &cli.methods {
        cfg.methods = v.clone();
    }
    if let Some(v) = cli.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = cli.subset {
        cfg.subset = v;
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = &cli.outdir {
        cfg.outdir = v.clone();
    }
    if let Some(v) = cli.workers {
        cfg.workers = v;
    }
    if let Some(v) = cli.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = cli.train_seed {
        cfg.train.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}
