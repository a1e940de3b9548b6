//! Run configuration: a TOML file whose keys mirror the command-line
//! flags. Flags override file values; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use dspt_core::benchmark::{noise_seed, Benchmark, BenchmarkInstance};
use dspt_core::data::{anchors_from_dataset, Dataset, Split, SyntheticParams};
use dspt_core::noise::NoiseSpec;
use dspt_core::trainer::{zero_shot_accuracy, ModelConfig, TrainConfig, DEFAULT_BATCH, DEFAULT_EPOCHS, DEFAULT_LR};
use dspt_core::{LossKind, PrototypeModel, ShiftMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub audit: AuditSection,
    pub sweep: SweepSection,
}

/// Synthetic generator settings, or `dir` holding `train`, `test` and
/// `anchors` files. When `dir` is set the generator keys are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub dir: Option<PathBuf>,
    pub classes: usize,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub kappa: f64,
    pub anchor_perturb: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let p = Benchmark::pinned(0).data;
        DataSection {
            dir: None,
            classes: p.classes,
            dim: p.dim,
            n_train: p.n_train,
            n_test: p.n_test,
            kappa: p.kappa,
            anchor_perturb: p.anchor_perturb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub mode: ShiftMode,
    pub scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            mode: m.mode,
            scale: m.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// `name[:param]`, e.g. `dspt` or `logitclip:0.5`.
    pub loss: String,
    pub epochs: usize,
    pub batch: usize,
    pub lr0: f64,
    /// `sym:<rate>` or `pair:<rate>[:mapping=cycle]`.
    pub noise: String,
    pub selection: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            loss: "dspt".into(),
            epochs: DEFAULT_EPOCHS,
            batch: DEFAULT_BATCH,
            lr0: DEFAULT_LR,
            noise: "sym:0".into(),
            selection: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSection {
    pub losses: Vec<String>,
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection {
            losses: vec!["ce".into(), "dspt".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub etas: Vec<f64>,
    pub losses: Vec<String>,
    /// Values used for every `logitclip` entry of `losses`.
    pub taus: Vec<f64>,
    /// `sym` or `pair`.
    pub noise_kind: String,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            etas: vec![0.2, 0.4, 0.6, 0.8],
            losses: vec!["ce".into(), "dspt".into()],
            taus: vec![0.05, 0.1, 0.5, 1.0, 2.0],
            noise_kind: "sym".into(),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: <OUT_ROOT>/<command>]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Root for default output directories
    #[arg(long, env = "DSPT_OUT", default_value = "dspt-out", value_name = "DIR")]
    pub out_root: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Directory with train, test (.emb or .csv) and anchors.emb
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Cluster concentration
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Expected norm of the anchor perturbation
    #[arg(long)]
    pub anchor_perturb: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// shared | per-class
    #[arg(long)]
    pub mode: Option<ShiftMode>,
    /// Logit temperature
    #[arg(long)]
    pub scale: Option<f64>,
}

/// Loss hyperparameters, attached to a loss given by name only.
#[derive(Args, Debug, Clone, Default)]
pub struct LossParams {
    /// LogitClip / LogitNorm temperature (mandatory for logitclip)
    #[arg(long)]
    pub tau: Option<f64>,
    /// Label smoothing weight
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bootstrap weight on the given label
    #[arg(long)]
    pub beta: Option<f64>,
    /// GCE exponent
    #[arg(long)]
    pub q: Option<f64>,
}

impl LossParams {
    /// Parses `spec` (`name` or `name:param`), filling the parameter from
    /// the matching flag when the spec has none.
    pub fn loss(&self, spec: &str) -> CliResult<LossKind> {
        let spec = spec.trim();
        let name = spec.split(':').next().unwrap_or_default().to_ascii_lowercase();
        let flag = match name.as_str() {
            "logitclip" | "logitnorm" => self.tau,
            "smoothing" => self.alpha,
            "bootstrap" => self.beta,
            "gce" => self.q,
            _ => None,
        };
        let full = match flag {
            Some(v) if !spec.contains(':') => format!("{name}:{v}"),
            _ => spec.to_string(),
        };
        full.parse::<LossKind>().map_err(|e| CliError::usage(e.to_string()))
    }
}

pub fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text =
        fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
}

impl RunConfig {
    pub fn apply_common(&mut self, a: &CommonArgs) {
        if let Some(s) = a.seed {
            self.seed = s;
        }
        if a.out.is_some() {
            self.out = a.out.clone();
        }
    }

    pub fn apply_data(&mut self, a: &DataArgs) {
        let d = &mut self.data;
        if a.data.is_some() {
            d.dir = a.data.clone();
        }
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = a.$f { d.$f = v; } )*};
        }
        set!(classes, dim, n_train, n_test, kappa, anchor_perturb);
    }

    pub fn apply_model(&mut self, a: &ModelArgs) {
        if let Some(m) = a.mode {
            self.model.mode = m;
        }
        if let Some(s) = a.scale {
            self.model.scale = s;
        }
    }

    pub fn out_dir(&self, common: &CommonArgs, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| common.out_root.join(command))
    }

    pub fn noise(&self) -> CliResult<NoiseSpec> {
        self.train
            .noise
            .parse()
            .map_err(|e: dspt_core::Error| CliError::usage(e.to_string()))
    }

    pub fn synthetic_params(&self) -> SyntheticParams {
        let d = &self.data;
        SyntheticParams {
            classes: d.classes,
            dim: d.dim,
            n_train: d.n_train,
            n_test: d.n_test,
            kappa: d.kappa,
            anchor_perturb: d.anchor_perturb,
            seed: self.seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            mode: self.model.mode,
            scale: self.model.scale,
        }
    }

    pub fn train_config(&self, loss: LossKind, noise: NoiseSpec) -> CliResult<TrainConfig> {
        let cfg = TrainConfig {
            loss,
            epochs: self.train.epochs,
            batch: self.train.batch,
            lr0: self.train.lr0,
            seed: self.seed,
            noise,
            model: self.model_config(),
            selection: self.train.selection,
        };
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }

    /// Checks that an embedding directory has every file it needs.
    pub fn check_paths(&self) -> CliResult<()> {
        if let Some(dir) = &self.data.dir {
            split_path(dir, "train")?;
            split_path(dir, "test")?;
            let anchors = dir.join("anchors.emb");
            if !anchors.is_file() {
                return Err(CliError::data(format!("missing {}", anchors.display())));
            }
        }
        Ok(())
    }

    /// Training split (corrupted by `noise`), clean test split and the
    /// initial model.
    pub fn load(&self, noise: NoiseSpec) -> CliResult<BenchmarkInstance> {
        let model = self.model_config();
        let Some(dir) = &self.data.dir else {
            let bench = Benchmark {
                data: self.synthetic_params(),
                model,
                noise,
            };
            return Ok(bench.build()?);
        };
        let anchor_set = Dataset::load(&dir.join("anchors.emb"), Split::Test)?;
        let classes = anchor_set.classes();
        let mut train = load_split(dir, "train", Split::Train, classes)?;
        let test = load_split(dir, "test", Split::Test, classes)?;
        let anchors = anchors_from_dataset(&anchor_set)?;
        let model = PrototypeModel::new(anchors, classes, anchor_set.dim(), model.scale, model.mode)?;
        let report = train.corrupt(&noise.matrix(classes)?, noise_seed(self.seed))?;
        let zero_shot_acc = zero_shot_accuracy(&model, &test)?;
        Ok(BenchmarkInstance {
            train,
            test,
            model,
            noise: report,
            zero_shot_acc,
        })
    }

    /// JSON form used for hashing and manifests; the output location is
    /// left out so that relocated runs hash the same.
    pub fn fingerprint(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.out = None;
        serde_json::to_value(c).expect("config serializes")
    }
}

fn split_path(dir: &Path, stem: &str) -> CliResult<PathBuf> {
    for ext in ["emb", "csv"] {
        let p = dir.join(format!("{stem}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(CliError::data(format!(
        "no {stem}.emb or {stem}.csv in {}",
        dir.display()
    )))
}

fn load_split(dir: &Path, stem: &str, split: Split, classes: usize) -> CliResult<Dataset> {
    let path = split_path(dir, stem)?;
    let ds = if path.extension().is_some_and(|e| e == "csv") {
        Dataset::read_csv(fs::File::open(&path)?, classes, split)?
    } else {
        Dataset::load(&path, split)?
    };
    if ds.classes() != classes {
        return Err(CliError::data(format!(
            "{} has {} classes but anchors.emb has {classes}",
            path.display(),
            ds.classes()
        )));
    }
    Ok(ds)
}
