//! The `unlearn-forge` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use forge_core::checkpoint::{Checkpoint, Role};
use forge_core::data::{gen_blobs_with, split_classwise, split_random, BlobParams, Part, SplitDataset};
use forge_core::metrics::{eval_report, rcd_with, PhiKind, RcdOptions, RcdReport, StepMode};
use forge_core::models::{Activation, ModelSpec, NoiseScope};
use forge_core::numcore::streams;
use forge_core::training::{forget_oracle, retrain_oracle, train_original, BatchSize, OptimizerConfig, OptimizerKind, PhiRef};
use forge_core::unlearning::{unlearn, Method, UnlearnConfig};
use forge_core::derive_stream;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::compare::{compare, EvalRow, TaskInfo};
use crate::config::{resolve, Overrides};
use crate::error::{Error, Result};
use crate::experiments::{kappa_trends, method_ordering, OrderingConfig, TrendConfig};
use crate::runs::{read_file, verify_manifest, Kind, RunDir};
use crate::verify::{verify_suite, VerifyConfig};

#[derive(Parser, Debug)]
#[command(name = "unlearn-forge", version, about = "Machine-unlearning laboratory: train, unlearn, measure relearning delay, verify")]
pub struct Cli {
    /// Root for run directories (overrides UNLEARN_FORGE_RUNS_DIR).
    #[arg(long, global = true)]
    pub runs_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a Gaussian-blob dataset with a retain/forget split (.uds).
    GenData(GenDataArgs),
    /// Train the original model on the whole train partition.
    Train(TrainArgs),
    /// Train from scratch on the retain set only.
    Retrain(TrainArgs),
    /// Train from scratch on the forget set only; records the reference error.
    ForgetOracle(TrainArgs),
    /// Apply an unlearning method to a checkpoint.
    Unlearn(UnlearnArgs),
    /// Relearning convergence delay of a checkpoint on the forget set.
    Rcd(RcdArgs),
    /// Accuracies, membership inference and gaps against a retrained model.
    Eval(EvalArgs),
    /// Tabulate eval reports (CSV/JSON/text).
    Compare(CompareArgs),
    /// Run the analytic verification suite.
    Verify(VerifyArgs),
    /// Run a desk-scale experiment.
    Experiment(ExperimentArgs),
    /// Check that a run directory's artifacts match its manifest.
    CheckRun(CheckRunArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON config file; a top-level key named after the command is used when present.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also copy the primary artifact here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    None,
    Random,
    Classwise,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long, value_enum)]
    pub split: Option<SplitKind>,
    /// Forget fraction (random: of train examples; class-wise: of classes).
    #[arg(long)]
    pub fraction: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataSettings {
    pub n_per_class: usize,
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise_sd: f64,
    pub test_fraction: f64,
    pub split: SplitKind,
    pub fraction: f64,
}

impl Default for GenDataSettings {
    fn default() -> Self {
        Self { n_per_class: 100, classes: 3, dim: 2, separation: 3.0, noise_sd: 1.0, test_fraction: 0.2, split: SplitKind::Random, fraction: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub weight_decay: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self { kind: ModelKind::Logistic, hidden: vec![32, 32], activation: Activation::Relu, weight_decay: 1e-4 }
    }
}

impl ModelSettings {
    pub fn spec_for(&self, data: &SplitDataset) -> Result<ModelSpec> {
        let classes = data.num_classes().ok_or_else(|| Error::Usage("dataset has no class labels".into()))?;
        let p = data.input_dim();
        Ok(match self.kind {
            ModelKind::Logistic => ModelSpec::logistic(p, classes, self.weight_decay)?,
            ModelKind::Mlp => ModelSpec::mlp(p, &self.hidden, classes, self.activation, self.weight_decay)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub model: ModelSettings,
    pub optimizer: OptimizerConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerFlag {
    Gd,
    GdAdaptive,
    Sgd,
    Adam,
}

impl OptimizerFlag {
    fn kind(self) -> OptimizerKind {
        match self {
            OptimizerFlag::Gd => OptimizerKind::GdFixed,
            OptimizerFlag::GdAdaptive => OptimizerKind::GdAdaptive,
            OptimizerFlag::Sgd => OptimizerKind::Sgd,
            OptimizerFlag::Adam => OptimizerKind::Adam,
        }
    }
}

fn parse_batch(s: &str) -> std::result::Result<BatchSize, String> {
    serde_json::from_value(if s == "full" { json!("full") } else { json!(s.parse::<usize>().map_err(|e| e.to_string())?) }).map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationFlag>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerFlag>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Minibatch size or `full`.
    #[arg(long, value_parser = parse_batch)]
    pub batch: Option<BatchSize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ActivationFlag {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodFlag {
    Ft,
    Rl,
    Scrub,
    Salun,
    Ieu,
}

impl MethodFlag {
    fn method(self) -> Method {
        match self {
            MethodFlag::Ft => Method::Ft,
            MethodFlag::Rl => Method::Rl,
            MethodFlag::Scrub => Method::Scrub,
            MethodFlag::Salun => Method::Salun,
            MethodFlag::Ieu => Method::Ieu,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScopeFlag {
    GlobalD,
    PerLayerFanIn,
}

#[derive(Args, Debug)]
pub struct UnlearnArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub method: Option<MethodFlag>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_parser = parse_batch)]
    pub batch: Option<BatchSize>,
    #[arg(long)]
    pub salun_ratio: Option<f64>,
    #[arg(long)]
    pub scrub_max_epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub noise_scope: Option<ScopeFlag>,
    /// Forget-gradient clip factor; 0 disables clipping.
    #[arg(long)]
    pub clip_factor: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcdSettings {
    pub k: usize,
    pub phi: PhiKind,
    pub relearn: OptimizerConfig,
    pub clamp: bool,
}

impl Default for RcdSettings {
    fn default() -> Self {
        Self { k: 50, phi: PhiKind::Loss, relearn: OptimizerConfig::gd(0.1, 50), clamp: false }
    }
}

fn parse_phi(s: &str) -> std::result::Result<PhiKind, String> {
    s.parse().map_err(|e: forge_core::ForgeError| e.to_string())
}

fn parse_step(s: &str) -> std::result::Result<StepMode, String> {
    s.parse().map_err(|e: forge_core::ForgeError| e.to_string())
}

#[derive(Args, Debug)]
pub struct RcdArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub k: Option<usize>,
    /// `loss` or `one_minus_accuracy`.
    #[arg(long, value_parser = parse_phi)]
    pub phi: Option<PhiKind>,
    /// `fixed:<eta>` or `adaptive`.
    #[arg(long, value_parser = parse_step)]
    pub step: Option<StepMode>,
    /// Relearning optimizer (default full-batch GD).
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerFlag>,
    #[arg(long, value_parser = parse_batch)]
    pub batch: Option<BatchSize>,
    /// Clamp each per-step error at zero.
    #[arg(long)]
    pub clamp: bool,
    /// Reference error of the forget oracle.
    #[arg(long, conflicts_with = "oracle")]
    pub phi_ref: Option<f64>,
    /// Forget-oracle checkpoint; the reference error is computed from it.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Retrained checkpoint to report gaps against.
    #[arg(long)]
    pub against: Option<PathBuf>,
    /// RCD report to attach.
    #[arg(long)]
    pub rcd: Option<PathBuf>,
    /// Row label (defaults to the checkpoint role, or the method for unlearned models).
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Eval reports written by `eval`.
    pub reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip the condition-number trend experiment.
    #[arg(long)]
    pub no_trends: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    /// Condition-number trends under training and IRP.
    Trends,
    /// Method ordering by RCD and average gap.
    Ordering,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub name: ExperimentName,
    /// Number of seeds (0, 1, ...).
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckRunArgs {
    pub run_dir: PathBuf,
}

fn load_data(path: &Path) -> Result<SplitDataset> {
    Ok(SplitDataset::from_bytes(&read_file(path)?)?)
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::from_bytes(&read_file(path)?)?)
}

fn run_dir(root: &Option<PathBuf>, command: &str, config: serde_json::Value, seed: Option<u64>, inputs: &[&Path]) -> Result<RunDir> {
    match root {
        Some(r) => RunDir::create_in(r, command, config, seed, inputs),
        None => RunDir::create(command, config, seed, inputs),
    }
}

/// Copies `primary` to `out` when requested; returns the path to report.
fn emit(primary: PathBuf, out: &Option<PathBuf>) -> Result<PathBuf> {
    if let Some(o) = out {
        std::fs::copy(&primary, o).map_err(|e| Error::io(o, e))?;
    }
    Ok(primary)
}

fn gen_data(root: &Option<PathBuf>, a: &GenDataArgs) -> Result<PathBuf> {
    let mut o = Overrides::new();
    o.set("n_per_class", a.n_per_class)
        .set("classes", a.classes)
        .set("dim", a.dim)
        .set("separation", a.separation)
        .set("noise_sd", a.noise_sd)
        .set("split", a.split)
        .set("fraction", a.fraction);
    let s: GenDataSettings = resolve(a.common.config.as_deref(), "gen-data", o)?;
    let bp = BlobParams { test_fraction: s.test_fraction, ..BlobParams::new(s.n_per_class, s.classes, s.dim, s.separation, s.noise_sd) };
    let full = gen_blobs_with(&bp, a.seed)?;
    let data = match s.split {
        SplitKind::None => full,
        SplitKind::Random => split_random(&full, s.fraction, a.seed)?,
        SplitKind::Classwise => split_classwise(&full, s.fraction, a.seed)?,
    };
    let mut run = run_dir(root, "gen-data", serde_json::to_value(&s)?, Some(a.seed), &[])?;
    let p = run.write(Kind::Reports, "dataset.uds", &data.to_bytes()?)?;
    run.finish()?;
    emit(p, &a.common.out)
}

fn train_settings(a: &TrainArgs, section: &str) -> Result<TrainSettings> {
    let mut o = Overrides::new();
    o.set("model.kind", a.model)
        .set("model.hidden", a.hidden.clone())
        .set(
            "model.activation",
            a.activation.map(|x| match x {
                ActivationFlag::Relu => Activation::Relu,
                ActivationFlag::Tanh => Activation::Tanh,
            }),
        )
        .set("model.weight_decay", a.weight_decay)
        .set("optimizer.kind", a.optimizer.map(OptimizerFlag::kind))
        .set("optimizer.eta", a.eta)
        .set("optimizer.batch_size", a.batch)
        .set("optimizer.max_epochs", a.epochs)
        .set("optimizer.grad_norm_tol", a.grad_tol);
    resolve(a.common.config.as_deref(), section, o)
}

fn train_cmd(root: &Option<PathBuf>, a: &TrainArgs, role: Role) -> Result<PathBuf> {
    let section = match role {
        Role::Original => "train",
        Role::Retrain => "retrain",
        _ => "forget-oracle",
    };
    let s = train_settings(a, section)?;
    let data = load_data(&a.data)?;
    let spec = s.model.spec_for(&data)?;
    let mut run = run_dir(root, section, serde_json::to_value(&s)?, Some(a.seed), &[&a.data])?;
    let (ckpt, trace) = match role {
        Role::Original => train_original(&data, &spec, &s.optimizer, a.seed)?,
        Role::Retrain => retrain_oracle(&data, &spec, &s.optimizer, a.seed)?,
        _ => {
            let (ck, phi, trace) = forget_oracle(&data, &spec, &s.optimizer, a.seed)?;
            run.write_json(Kind::Reports, "phi_ref.json", &phi)?;
            (ck, trace)
        }
    };
    let name = format!("{section}.ieuc");
    let p = run.write(Kind::Checkpoints, &name, &ckpt.to_bytes()?)?;
    run.write(Kind::Traces, &format!("{section}.csv"), trace.to_csv().as_bytes())?;
    run.finish()?;
    emit(p, &a.common.out)
}

fn unlearn_cmd(root: &Option<PathBuf>, a: &UnlearnArgs) -> Result<PathBuf> {
    let mut o = Overrides::new();
    o.set("method", a.method.map(MethodFlag::method))
        .set("alpha", a.alpha)
        .set("c", a.c)
        .set("eta", a.eta)
        .set("epochs", a.epochs)
        .set("batch_size", a.batch)
        .set("salun_ratio", a.salun_ratio)
        .set("scrub_max_epochs", a.scrub_max_epochs)
        .set(
            "noise_scope",
            a.noise_scope.map(|s| match s {
                ScopeFlag::GlobalD => NoiseScope::GlobalD,
                ScopeFlag::PerLayerFanIn => NoiseScope::PerLayerFanIn,
            }),
        )
        .set("seed", Some(a.seed));
    if let Some(cf) = a.clip_factor {
        o.set("clip_factor", Some(if cf == 0.0 { serde_json::Value::Null } else { json!(cf) }));
    }
    let cfg: UnlearnConfig = resolve(a.common.config.as_deref(), "unlearn", o)?;
    cfg.validate()?;
    let ckpt = load_ckpt(&a.ckpt)?;
    let data = load_data(&a.data)?;
    let mut run = run_dir(root, "unlearn", serde_json::to_value(&cfg)?, Some(a.seed), &[&a.ckpt, &a.data])?;
    let result = unlearn(&ckpt, &data, &cfg)?;
    if let Some(ab) = &result.aborted {
        eprintln!("warning: unlearning aborted at epoch {} ({}); kept the last finite parameters", ab.epoch, ab.reason);
    }
    let config = json!({ "unlearn": cfg, "input_checkpoint": result.input_checkpoint, "aborted": result.aborted });
    let out = Checkpoint::new(Role::Unlearned, a.seed, ckpt.spec.clone(), config, result.theta.clone())?;
    let p = run.write(Kind::Checkpoints, "unlearned.ieuc", &out.to_bytes()?)?;
    run.write(Kind::Traces, "unlearn.csv", result.to_csv().as_bytes())?;
    run.write_json(Kind::Reports, "unlearn.json", &result)?;
    run.finish()?;
    emit(p, &a.common.out)
}

fn rcd_cmd(root: &Option<PathBuf>, a: &RcdArgs) -> Result<PathBuf> {
    let mut o = Overrides::new();
    o.set("k", a.k).set("phi", a.phi).set("relearn.kind", a.optimizer.map(OptimizerFlag::kind)).set("relearn.batch_size", a.batch);
    match a.step {
        Some(StepMode::Fixed { eta }) => {
            o.set("relearn.eta", Some(eta));
        }
        Some(StepMode::AdaptiveInvLambdaMax) => {
            o.set("relearn.kind", Some(OptimizerKind::GdAdaptive));
        }
        None => {}
    }
    if a.clamp {
        o.set("clamp", Some(true));
    }
    let s: RcdSettings = resolve(a.common.config.as_deref(), "rcd", o)?;
    let ckpt = load_ckpt(&a.ckpt)?;
    let data = load_data(&a.data)?;
    data.check_spec(&ckpt.spec)?;
    let forget = data.objective(&ckpt.spec, Part::Forget)?;
    let mut inputs: Vec<&Path> = vec![&a.ckpt, &a.data];
    let phi_ref = match (&a.phi_ref, &a.oracle) {
        (Some(v), None) => *v,
        (None, Some(p)) => {
            inputs.push(p);
            let oracle = load_ckpt(p)?;
            if oracle.spec != ckpt.spec {
                return Err(Error::Usage("oracle checkpoint has a different model spec".into()));
            }
            let phi = PhiRef {
                loss: forget.value(&oracle.theta)?,
                one_minus_accuracy: if forget.is_classification() { Some(1.0 - forget.accuracy(&oracle.theta)?) } else { None },
            };
            phi.get(s.phi)?
        }
        _ => return Err(Error::Usage("rcd needs exactly one of --phi-ref or --oracle".into())),
    };
    let config = json!({ "rcd": s, "phi_ref": phi_ref });
    let mut run = run_dir(root, "rcd", config, Some(a.seed), &inputs)?;
    let opts = RcdOptions { clamp: s.clamp, ..RcdOptions::default() };
    let relearn = OptimizerConfig { max_epochs: s.k, ..s.relearn.clone() };
    let report = rcd_with(&ckpt.theta, &forget, phi_ref, s.k, &relearn, s.phi, &opts, &mut derive_stream(a.seed, streams::RELEARN))?;
    let p = run.write_json(Kind::Reports, "rcd.json", &report)?;
    run.write(Kind::Traces, "rcd.csv", report.to_csv().as_bytes())?;
    run.finish()?;
    emit(p, &a.common.out)
}

fn role_name(r: Role) -> String {
    serde_json::to_value(r).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn eval_cmd(root: &Option<PathBuf>, a: &EvalArgs) -> Result<PathBuf> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let data = load_data(&a.data)?;
    let mut inputs: Vec<&Path> = vec![&a.ckpt, &a.data];
    let reference = match &a.against {
        Some(p) => {
            inputs.push(p);
            let r = load_ckpt(p)?;
            if r.role != Role::Retrain {
                eprintln!("warning: --against checkpoint has role {}, not retrain", role_name(r.role));
            }
            Some(eval_report(&r, &data, None)?)
        }
        None => None,
    };
    let rcd = match &a.rcd {
        Some(p) => {
            inputs.push(p);
            let r: RcdReport = serde_json::from_slice(&read_file(p)?)?;
            Some(r.rcd_value)
        }
        None => None,
    };
    let label = a.label.clone().unwrap_or_else(|| {
        ckpt.config
            .pointer("/unlearn/method")
            .and_then(|m| m.as_str())
            .map(String::from)
            .unwrap_or_else(|| role_name(ckpt.role))
    });
    let row = EvalRow {
        label: label.clone(),
        role: role_name(ckpt.role),
        checkpoint_sha256: ckpt.content_hash()?,
        task: TaskInfo { split_mode: data.split_mode(), forget_digest: data.forget_digest() },
        eval: eval_report(&ckpt, &data, reference.as_ref())?,
        rcd,
    };
    let mut run = run_dir(root, "eval", json!({ "label": label }), None, &inputs)?;
    let p = run.write_json(Kind::Reports, "eval.json", &row)?;
    run.finish()?;
    emit(p, &a.out)
}

fn compare_cmd(root: &Option<PathBuf>, a: &CompareArgs) -> Result<String> {
    if a.reports.is_empty() {
        return Err(Error::Usage("compare needs at least one eval report".into()));
    }
    let rows: Vec<EvalRow> = a.reports.iter().map(|p| Ok(serde_json::from_slice(&read_file(p)?)?)).collect::<Result<_>>()?;
    let table = compare(&rows)?;
    let inputs: Vec<&Path> = a.reports.iter().map(PathBuf::as_path).collect();
    let mut run = run_dir(root, "compare", json!({}), None, &inputs)?;
    let csv = table.csv()?;
    let js = serde_json::to_string_pretty(&table)? + "\n";
    run.write(Kind::Reports, "compare.csv", csv.as_bytes())?;
    run.write(Kind::Reports, "compare.json", js.as_bytes())?;
    run.write(Kind::Reports, "pairs.csv", table.pairs_csv()?.as_bytes())?;
    run.write(Kind::Reports, "compare.txt", table.text().as_bytes())?;
    run.finish()?;
    Ok(match a.format {
        Format::Text => table.text(),
        Format::Csv => csv,
        Format::Json => js,
    })
}

fn verify_cmd(root: &Option<PathBuf>, a: &VerifyArgs) -> Result<String> {
    let mut o = Overrides::new();
    o.set("seed", Some(a.seed));
    if a.no_trends {
        o.set("trends", Some(false));
    }
    let cfg: VerifyConfig = resolve(a.config.as_deref(), "verify", o)?;
    let mut run = run_dir(root, "verify", serde_json::to_value(&cfg)?, Some(cfg.seed), &[])?;
    let report = verify_suite(&cfg);
    run.write_json(Kind::Reports, "verify.json", &report)?;
    run.write(Kind::Reports, "verify.txt", report.table().as_bytes())?;
    run.finish()?;
    let text = if a.json { serde_json::to_string_pretty(&report)? + "\n" } else { report.table() };
    if report.passed {
        Ok(text)
    } else {
        print!("{text}");
        Err(Error::VerifyFailed(report.failures().count()))
    }
}

fn experiment_cmd(root: &Option<PathBuf>, a: &ExperimentArgs) -> Result<String> {
    let mut o = Overrides::new();
    o.set("seeds", a.seeds);
    match a.name {
        ExperimentName::Trends => {
            let cfg: TrendConfig = resolve(a.config.as_deref(), "trends", o)?;
            let mut run = run_dir(root, "experiment-trends", serde_json::to_value(&cfg)?, None, &[])?;
            let r = kappa_trends(&cfg)?;
            let p = run.write_json(Kind::Reports, "trends.json", &r)?;
            run.finish()?;
            Ok(format!(
                "training: rho {:.3} (p {:.2e}), IRP: rho {:.3} (p {:.2e}), max kappa/(beta/mu) {:.3}: {}\n{}\n",
                r.training.mean_curve.rho,
                r.training.mean_curve.p_value,
                r.irp.mean_curve.rho,
                r.irp.mean_curve.p_value,
                r.max_kappa_over_surrogate,
                if r.passed { "PASS" } else { "FAIL" },
                p.display()
            ))
        }
        ExperimentName::Ordering => {
            let cfg: OrderingConfig = resolve(a.config.as_deref(), "ordering", o)?;
            let mut run = run_dir(root, "experiment-ordering", serde_json::to_value(&cfg)?, None, &[])?;
            let r = method_ordering(&cfg)?;
            let p = run.write_json(Kind::Reports, "ordering.json", &r)?;
            run.finish()?;
            let mut s = format!("{:<10} {:>9} {:>9}\n", "method", "mean_rcd", "avg_gap");
            for (m, v) in &r.mean_rcd {
                s += &format!("{m:<10} {v:>9.4} {:>9.4}\n", r.mean_avg_gap[m]);
            }
            s += &format!(
                "retrain > rl: {}, rl > ft: {}, gap(ieu_noisy) <= gap(rl): {}\n{}\n",
                r.retrain_gt_rl,
                r.rl_gt_ft,
                r.noisy_gap_le_rl,
                p.display()
            );
            Ok(s)
        }
    }
}

/// Runs a parsed command; returns what to print on stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let root = &cli.runs_dir;
    let line = |p: PathBuf| format!("{}\n", p.display());
    match &cli.command {
        Command::GenData(a) => gen_data(root, a).map(line),
        Command::Train(a) => train_cmd(root, a, Role::Original).map(line),
        Command::Retrain(a) => train_cmd(root, a, Role::Retrain).map(line),
        Command::ForgetOracle(a) => train_cmd(root, a, Role::ForgetOracle).map(line),
        Command::Unlearn(a) => unlearn_cmd(root, a).map(line),
        Command::Rcd(a) => rcd_cmd(root, a).map(line),
        Command::Eval(a) => eval_cmd(root, a).map(line),
        Command::Compare(a) => compare_cmd(root, a),
        Command::Verify(a) => verify_cmd(root, a),
        Command::Experiment(a) => experiment_cmd(root, a),
        Command::CheckRun(a) => {
            let m = verify_manifest(&a.run_dir)?;
            Ok(format!("{}: {} outputs verified\n", m.experiment_id, m.outputs.len()))
        }
    }
}

/// Parses `args`, runs, prints, and returns the process exit code: 0 on
/// success, 1 on usage or runtime errors, 2 when verification fails.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
