//! Optimizers, the training loop, and the retrain / forget oracles.
//!
//! One epoch is one full-batch step for the gradient-descent kinds and one
//! shuffled pass over minibatches for `sgd` and `adam`. The loop records
//! epoch 0 (the starting point) and every completed epoch, and stops once
//! the full-batch gradient norm reaches `grad_norm_tol` or after
//! `max_epochs`.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Role};
use crate::data::{Part, SplitDataset};
use crate::error::{ForgeError, Result};
use crate::metrics::PhiKind;
use crate::models::{ModelSpec, NoiseScope, Objective, Targets};
use crate::numcore::{derive_stream, streams, ParamVector, RngStream};
use crate::spectral::{self, SpectralConfig, SpectralEstimate};

/// Loss growth factor over the starting loss that aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    GdFixed,
    /// `η_t = 1/λ₁(θ_t)` from a fresh power iteration every epoch.
    GdAdaptive,
    Sgd,
    Adam,
}

/// Minibatch size: a positive count or `"full"`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BatchRepr", into = "BatchRepr")]
pub enum BatchSize {
    #[default]
    Full,
    Size(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BatchRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<BatchRepr> for BatchSize {
    type Error = String;
    fn try_from(r: BatchRepr) -> std::result::Result<Self, String> {
        match r {
            BatchRepr::Count(0) => Err("batch_size must be positive".into()),
            BatchRepr::Count(n) => Ok(BatchSize::Size(n)),
            BatchRepr::Word(w) if w == "full" => Ok(BatchSize::Full),
            BatchRepr::Word(w) => Err(format!("batch_size must be a positive integer or \"full\", got {w:?}")),
        }
    }
}

impl From<BatchSize> for BatchRepr {
    fn from(b: BatchSize) -> Self {
        match b {
            BatchSize::Full => BatchRepr::Word("full".into()),
            BatchSize::Size(n) => BatchRepr::Count(n),
        }
    }
}

impl BatchSize {
    /// Batch length for a dataset of `n` examples.
    pub fn resolve(self, n: usize) -> Result<usize> {
        match self {
            BatchSize::Full => Ok(n.max(1)),
            BatchSize::Size(0) => Err(ForgeError::InvalidArgument("batch_size must be positive".into())),
            BatchSize::Size(b) if n > 0 && b > n => Err(ForgeError::InvalidArgument(format!(
                "batch_size {b} exceeds dataset size {n}"
            ))),
            BatchSize::Size(b) => Ok(if n == 0 { 1 } else { b }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub eta: f64,
    pub batch_size: BatchSize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub grad_norm_tol: f64,
    pub spectral: SpectralConfig,
    /// Record both extreme eigenvalues at every logged epoch.
    pub log_spectrum: bool,
    /// Kaiming convention for fresh initialisations.
    pub init_scope: NoiseScope,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::GdFixed,
            eta: 0.1,
            batch_size: BatchSize::Full,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 100,
            grad_norm_tol: 1e-8,
            spectral: SpectralConfig { tol: 1e-8, max_iter: 5_000, dense_max_dim: 0 },
            log_spectrum: false,
            init_scope: NoiseScope::GlobalD,
        }
    }
}

impl OptimizerConfig {
    pub fn gd(eta: f64, max_epochs: usize) -> Self {
        Self { kind: OptimizerKind::GdFixed, eta, max_epochs, ..Self::default() }
    }

    pub fn gd_adaptive(max_epochs: usize) -> Self {
        Self { kind: OptimizerKind::GdAdaptive, max_epochs, ..Self::default() }
    }

    pub fn sgd(eta: f64, batch_size: BatchSize, max_epochs: usize) -> Self {
        Self { kind: OptimizerKind::Sgd, eta, batch_size, max_epochs, ..Self::default() }
    }

    pub fn adam(eta: f64, batch_size: BatchSize, max_epochs: usize) -> Self {
        Self { kind: OptimizerKind::Adam, eta, batch_size, max_epochs, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ForgeError::InvalidArgument(m.into()));
        if self.kind != OptimizerKind::GdAdaptive && !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("adam betas must lie in (0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("adam eps must be positive");
        }
        if !(self.grad_norm_tol >= 0.0) {
            return bad("grad_norm_tol must be >= 0");
        }
        if !(self.spectral.tol > 0.0) || self.spectral.max_iter == 0 {
            return bad("spectral tol must be > 0 and max_iter >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub acc: Option<f64>,
    pub grad_norm: f64,
    /// Step size applied from this point (adaptive schedule only).
    pub step_size: Option<f64>,
    pub lambda_max: Option<f64>,
    pub lambda_min: Option<f64>,
    pub spectral: Option<SpectralEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
    pub theta: ParamVector,
    pub stop: StopReason,
}

impl TrainTrace {
    pub fn final_record(&self) -> &EpochRecord {
        self.records.last().expect("trace has the epoch-0 record")
    }

    /// CSV with header `epoch,loss,acc,grad_norm,lambda_max,lambda_min`.
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        let mut s = String::from("epoch,loss,acc,grad_norm,lambda_max,lambda_min\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:e},{},{:e},{},{}\n",
                r.epoch,
                r.loss,
                opt(r.acc),
                r.grad_norm,
                opt(r.lambda_max),
                opt(r.lambda_min)
            ));
        }
        s
    }
}

/// Stateful parameter update rule.
pub(crate) struct Stepper {
    kind: OptimizerKind,
    eta: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Stepper {
    pub(crate) fn new(cfg: &OptimizerConfig, d: usize) -> Self {
        let adam = cfg.kind == OptimizerKind::Adam;
        Self {
            kind: cfg.kind,
            eta: cfg.eta,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            m: if adam { vec![0.0; d] } else { Vec::new() },
            v: if adam { vec![0.0; d] } else { Vec::new() },
            t: 0,
        }
    }

    /// Applies one update in place; `eta_override` replaces the fixed step.
    pub(crate) fn step(&mut self, theta: &mut [f64], grad: &[f64], eta_override: Option<f64>) {
        let eta = eta_override.unwrap_or(self.eta);
        match self.kind {
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - self.beta1.powi(self.t);
                let c2 = 1.0 - self.beta2.powi(self.t);
                for i in 0..theta.len() {
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    theta[i] -= eta * mh / (vh.sqrt() + self.eps);
                }
            }
            _ => theta.iter_mut().zip(grad).for_each(|(t, g)| *t -= eta * g),
        }
    }
}

pub(crate) fn divergence_limit(initial_loss: f64) -> f64 {
    if initial_loss != 0.0 {
        DIVERGENCE_FACTOR * initial_loss.abs()
    } else {
        DIVERGENCE_FACTOR
    }
}

/// Minibatch index lists for one epoch; `None` means one full-batch step.
pub(crate) fn epoch_batches(n: usize, batch: usize, shuffle: bool, rng: &mut RngStream) -> Option<Vec<Vec<usize>>> {
    if n == 0 || (batch >= n && !shuffle) {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    Some(order.chunks(batch).map(<[usize]>::to_vec).collect())
}

fn has_hard_labels(obj: &Objective) -> bool {
    matches!(obj.data().map(|d| d.targets()), Some(Targets::Classes { .. }))
}

/// Trains `obj` from `theta0`. Deterministic given its inputs; `rng` drives
/// minibatch shuffling and spectral start vectors.
pub fn train(obj: &Objective, theta0: &ParamVector, cfg: &OptimizerConfig, rng: &mut RngStream) -> Result<TrainTrace> {
    train_observed(obj, theta0, cfg, rng, |_, _| Ok(()))
}

/// As [`train`], calling `observe(epoch, θ)` at every logged epoch.
pub fn train_observed<F>(
    obj: &Objective,
    theta0: &ParamVector,
    cfg: &OptimizerConfig,
    rng: &mut RngStream,
    mut observe: F,
) -> Result<TrainTrace>
where
    F: FnMut(usize, &ParamVector) -> Result<()>,
{
    cfg.validate()?;
    crate::error::check_dims(obj.dim(), theta0.dim())?;
    let n = obj.num_examples();
    let batch = match cfg.kind {
        OptimizerKind::GdFixed | OptimizerKind::GdAdaptive => n.max(1),
        _ => cfg.batch_size.resolve(n)?,
    };
    let shuffle = matches!(cfg.kind, OptimizerKind::Sgd | OptimizerKind::Adam) && batch < n;
    let mut spec_rng = rng.substream(streams::SPECTRAL);
    let mut stepper = Stepper::new(cfg, obj.dim());
    let classify = has_hard_labels(obj);

    let mut theta = theta0.clone();
    let mut records = Vec::new();
    let mut limit = f64::INFINITY;
    let mut stop = StopReason::MaxEpochs;
    for epoch in 0..=cfg.max_epochs {
        let (loss, grad) = obj.value_and_gradient(&theta)?;
        if epoch == 0 {
            limit = divergence_limit(loss);
        } else if !(loss <= limit) {
            return Err(ForgeError::Diverged { epoch, loss, limit });
        }
        let gn = grad.norm();
        let mut rec = EpochRecord {
            epoch,
            loss,
            acc: if classify { Some(obj.accuracy(&theta)?) } else { None },
            grad_norm: gn,
            step_size: None,
            lambda_max: None,
            lambda_min: None,
            spectral: None,
        };
        if cfg.log_spectrum {
            let est = spectral::estimate(obj, &theta, &cfg.spectral, &mut spec_rng)?;
            rec.lambda_max = Some(est.lambda_max);
            rec.lambda_min = Some(est.lambda_min);
            rec.spectral = Some(est);
        }
        let converged = gn <= cfg.grad_norm_tol;
        if cfg.kind == OptimizerKind::GdAdaptive && !converged && epoch < cfg.max_epochs {
            let lmax = match rec.lambda_max {
                Some(l) => l,
                None => spectral::lambda_max_with(obj, &theta, &cfg.spectral, &mut spec_rng)?.0,
            };
            if !(lmax > 0.0) {
                return Err(ForgeError::Unsupported(format!(
                    "adaptive step needs a positive lambda_max, got {lmax:e}"
                )));
            }
            rec.lambda_max = Some(lmax);
            rec.step_size = Some(1.0 / lmax);
        }
        observe(epoch, &theta)?;
        let step = rec.step_size;
        records.push(rec);
        if converged {
            stop = StopReason::Converged;
            break;
        }
        if epoch == cfg.max_epochs {
            break;
        }
        let mut t = theta.clone().into_vec();
        match epoch_batches(n, batch, shuffle, rng) {
            None => stepper.step(&mut t, grad.as_slice(), step),
            Some(batches) => {
                for b in batches {
                    let (_, g) = obj.batch_value_and_gradient(&ParamVector::new(t.clone())?, &b)?;
                    stepper.step(&mut t, g.as_slice(), step);
                }
            }
        }
        theta = ParamVector::new(t).map_err(|_| ForgeError::NonFinite(format!("parameters after epoch {}", epoch + 1)))?;
    }
    Ok(TrainTrace { records, theta, stop })
}

/// The training configuration plus its stopping rule, as stored in
/// checkpoints.
pub fn checkpoint_config(cfg: &OptimizerConfig, trace: &TrainTrace) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "optimizer": serde_json::to_value(cfg)?,
        "stop_reason": trace.stop,
        "epochs_run": trace.final_record().epoch,
        "final_grad_norm": trace.final_record().grad_norm,
    }))
}

/// Fresh Kaiming initialisation for `spec`, from `(seed, INIT)`.
pub fn fresh_init(spec: &ModelSpec, scope: NoiseScope, seed: u64) -> Result<ParamVector> {
    spec.kaiming_init(scope, &mut derive_stream(seed, streams::INIT))
}

fn train_role(
    data: &SplitDataset,
    part: Part,
    spec: &ModelSpec,
    cfg: &OptimizerConfig,
    seed: u64,
    role: Role,
) -> Result<(Checkpoint, TrainTrace)> {
    data.check_spec(spec)?;
    let obj = data.objective(spec, part)?;
    let theta0 = fresh_init(spec, cfg.init_scope, seed)?;
    let trace = train(&obj, &theta0, cfg, &mut derive_stream(seed, streams::TRAIN))?;
    let ckpt = Checkpoint::new(role, seed, spec.clone(), checkpoint_config(cfg, &trace)?, trace.theta.clone())?;
    Ok((ckpt, trace))
}

/// Original model: fresh init trained on the whole train partition.
pub fn train_original(data: &SplitDataset, spec: &ModelSpec, cfg: &OptimizerConfig, seed: u64) -> Result<(Checkpoint, TrainTrace)> {
    train_role(data, Part::Train, spec, cfg, seed, Role::Original)
}

/// Exact unlearning: fresh init trained on the retain set only.
pub fn retrain_oracle(data: &SplitDataset, spec: &ModelSpec, cfg: &OptimizerConfig, seed: u64) -> Result<(Checkpoint, TrainTrace)> {
    if data.indices(Part::Retain).is_empty() {
        return Err(ForgeError::EmptyData("retain set is empty".into()));
    }
    train_role(data, Part::Retain, spec, cfg, seed, Role::Retrain)
}

/// Reference errors of the forget oracle, per Φ kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiRef {
    pub loss: f64,
    pub one_minus_accuracy: Option<f64>,
}

impl PhiRef {
    pub fn get(&self, kind: PhiKind) -> Result<f64> {
        match kind {
            PhiKind::Loss => Ok(self.loss),
            PhiKind::OneMinusAccuracy => self
                .one_minus_accuracy
                .ok_or_else(|| ForgeError::Unsupported("accuracy Φ on a non-classification task".into())),
        }
    }
}

fn phi_refs(obj: &Objective, theta: &ParamVector) -> Result<PhiRef> {
    Ok(PhiRef {
        loss: obj.value(theta)?,
        one_minus_accuracy: if has_hard_labels(obj) { Some(1.0 - obj.accuracy(theta)?) } else { None },
    })
}

/// Forget oracle on an arbitrary forget objective. Quadratics short-circuit
/// to their known minimiser.
pub fn forget_oracle_objective(
    forget: &Objective,
    cfg: &OptimizerConfig,
    scope: NoiseScope,
    seed: u64,
) -> Result<(Checkpoint, PhiRef, TrainTrace)> {
    let spec = forget.model().clone();
    let (theta, trace) = match forget.quadratic_optimum() {
        Some((theta_star, l_star)) => {
            let g = forget.gradient(&theta_star)?.norm();
            let rec = EpochRecord {
                epoch: 0,
                loss: l_star,
                acc: None,
                grad_norm: g,
                step_size: None,
                lambda_max: None,
                lambda_min: None,
                spectral: None,
            };
            let trace = TrainTrace { records: vec![rec], theta: theta_star.clone(), stop: StopReason::Converged };
            (theta_star, trace)
        }
        None => {
            if forget.num_examples() == 0 {
                return Err(ForgeError::EmptyData("forget set is empty".into()));
            }
            let theta0 = fresh_init(&spec, scope, seed)?;
            let trace = train(forget, &theta0, cfg, &mut derive_stream(seed, streams::ORACLE))?;
            (trace.theta.clone(), trace)
        }
    };
    let phi = match forget.quadratic_optimum() {
        Some((_, l_star)) => PhiRef { loss: l_star, one_minus_accuracy: None },
        None => phi_refs(forget, &theta)?,
    };
    let ckpt = Checkpoint::new(Role::ForgetOracle, seed, spec, checkpoint_config(cfg, &trace)?, theta)?;
    Ok((ckpt, phi, trace))
}

/// Fresh init trained to convergence on the forget set alone.
pub fn forget_oracle(
    data: &SplitDataset,
    spec: &ModelSpec,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<(Checkpoint, PhiRef, TrainTrace)> {
    if data.indices(Part::Forget).is_empty() {
        return Err(ForgeError::EmptyData("forget set is empty".into()));
    }
    data.check_spec(spec)?;
    let obj = data.objective(spec, Part::Forget)?;
    forget_oracle_objective(&obj, cfg, cfg.init_scope, seed)
}

/// Forget-oracle references computed once per (forget set, model spec,
/// oracle configuration, seed) and reused for every audited model.
#[derive(Default)]
pub struct PhiRefCache {
    entries: Mutex<HashMap<String, PhiRef>>,
}

impl PhiRefCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_compute(&self, data: &SplitDataset, spec: &ModelSpec, cfg: &OptimizerConfig, seed: u64) -> Result<PhiRef> {
        let key = format!(
            "{}|{}|{}|{seed}",
            data.forget_digest(),
            serde_json::to_string(spec)?,
            serde_json::to_string(cfg)?
        );
        if let Some(p) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(p.clone());
        }
        let (_, phi, _) = forget_oracle(data, spec, cfg, seed)?;
        self.entries.lock().expect("cache lock").insert(key, phi.clone());
        Ok(phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, split_classwise, split_random};
    use crate::models::make_quadratic;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn quad41() -> Objective {
        make_quadratic(vec![4.0, 1.0], pv(&[0.0, 0.0]), 0.0).unwrap()
    }

    #[test]
    fn gd_fixed_loss_sequence() {
        let tr = train(&quad41(), &pv(&[1.0, 1.0]), &OptimizerConfig::gd(0.25, 5), &mut derive_stream(0, 4)).unwrap();
        let losses: Vec<f64> = tr.records.iter().map(|r| r.loss).collect();
        assert_eq!(&losses[..3], &[2.5, 0.28125, 0.158203125]);
        // Independent oracle: coordinate residuals contract by (1 − λᵢ/4).
        for (t, l) in losses.iter().enumerate() {
            let r1 = if t == 0 { 1.0 } else { 0.0 };
            let r2 = 0.75f64.powi(t as i32);
            assert!((l - 0.5 * (4.0 * r1 * r1 + r2 * r2)).abs() < 1e-15);
        }
        assert_eq!(tr.records.len(), 6);
        assert_eq!(tr.stop, StopReason::MaxEpochs);
    }

    #[test]
    fn starting_at_optimum_converges_at_epoch_zero() {
        let tr = train(&quad41(), &pv(&[0.0, 0.0]), &OptimizerConfig::gd(0.25, 50), &mut derive_stream(0, 4)).unwrap();
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.stop, StopReason::Converged);
    }

    #[test]
    fn adaptive_isotropic_one_step() {
        let q = make_quadratic(vec![1.0, 1.0], pv(&[2.0, -1.0]), 0.5).unwrap();
        let tr = train(&q, &pv(&[0.0, 3.0]), &OptimizerConfig::gd_adaptive(10), &mut derive_stream(0, 4)).unwrap();
        assert!((tr.records[0].step_size.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(tr.stop, StopReason::Converged);
        assert_eq!(tr.records.len(), 2);
        assert!((tr.theta.as_slice()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_step_matches_lambda_max() {
        let q = make_quadratic(vec![5.0, 2.0, 0.5], pv(&[1.0, 0.0, -1.0]), 0.0).unwrap();
        let mut cfg = OptimizerConfig::gd_adaptive(30);
        cfg.spectral.tol = 1e-12;
        cfg.spectral.max_iter = 100_000;
        let tr = train(&q, &pv(&[0.0, 1.0, 2.0]), &cfg, &mut derive_stream(3, 4)).unwrap();
        for r in &tr.records {
            if let Some(s) = r.step_size {
                assert!((s * 5.0 - 1.0).abs() < 1e-9);
                assert_eq!(s, 1.0 / r.lambda_max.unwrap());
            }
        }
    }

    #[test]
    fn geometric_decay_and_pl_on_quadratics() {
        let mut rng = derive_stream(99, 0);
        for _ in 0..20 {
            let d = 1 + rng.below(6);
            let mut spec: Vec<f64> = (0..d).map(|_| 0.1 + 10.0 * rng.uniform()).collect();
            spec.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let star: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let q = make_quadratic(spec.clone(), pv(&star), 0.3).unwrap();
            let (mu, beta) = q.quadratic_bounds().unwrap();
            let start: Vec<f64> = (0..d).map(|_| 3.0 * rng.normal()).collect();
            let tr = train(&q, &pv(&start), &OptimizerConfig::gd(1.0 / beta, 40), &mut derive_stream(0, 4)).unwrap();
            for w in tr.records.windows(2) {
                let (a, b) = (w[0].loss - 0.3, w[1].loss - 0.3);
                assert!((1.0 - mu / beta) * a - b >= -1e-10);
            }
            for r in &tr.records {
                assert!(r.grad_norm * r.grad_norm - 2.0 * mu * (r.loss - 0.3) >= -1e-10);
            }
        }
    }

    #[test]
    fn divergence_guard_trips() {
        let tr = train(&quad41(), &pv(&[1.0, 1.0]), &OptimizerConfig::gd(2.0, 200), &mut derive_stream(0, 4));
        assert!(matches!(tr, Err(ForgeError::Diverged { .. })));
    }

    #[test]
    fn sgd_and_adam_reduce_loss_deterministically() {
        let ds = split_random(&gen_blobs(30, 3, 2, 4.0, 0.6, 1).unwrap(), 0.2, 1).unwrap();
        let spec = ModelSpec::logistic(2, 3, 0.01).unwrap();
        let obj = ds.objective(&spec, Part::Train).unwrap();
        let init = fresh_init(&spec, NoiseScope::GlobalD, 1).unwrap();
        for cfg in [OptimizerConfig::sgd(0.1, BatchSize::Size(8), 30), OptimizerConfig::adam(0.05, BatchSize::Size(8), 30)] {
            let a = train(&obj, &init, &cfg, &mut derive_stream(5, 4)).unwrap();
            let b = train(&obj, &init, &cfg, &mut derive_stream(5, 4)).unwrap();
            assert_eq!(a, b);
            assert!(a.final_record().loss < a.records[0].loss);
            assert!(a.final_record().acc.unwrap() > 0.9);
            let c = train(&obj, &init, &cfg, &mut derive_stream(6, 4)).unwrap();
            assert_ne!(a.theta, c.theta);
        }
        let too_big = OptimizerConfig::sgd(0.1, BatchSize::Size(10_000), 3);
        assert!(train(&obj, &init, &too_big, &mut derive_stream(5, 4)).is_err());
    }

    #[test]
    fn batch_size_serde() {
        let cfg: OptimizerConfig = serde_json::from_str(r#"{"kind":"sgd","batch_size":"full"}"#).unwrap();
        assert_eq!(cfg.batch_size, BatchSize::Full);
        let cfg: OptimizerConfig = serde_json::from_str(r#"{"kind":"adam","batch_size":16}"#).unwrap();
        assert_eq!(cfg.batch_size, BatchSize::Size(16));
        assert!(serde_json::from_str::<OptimizerConfig>(r#"{"batch_size":0}"#).is_err());
        assert!(serde_json::from_str::<OptimizerConfig>(r#"{"batch_size":"half"}"#).is_err());
        let back: OptimizerConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn csv_export() {
        let tr = train(&quad41(), &pv(&[1.0, 1.0]), &OptimizerConfig::gd(0.25, 2), &mut derive_stream(0, 4)).unwrap();
        let csv = tr.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,loss,acc,grad_norm,lambda_max,lambda_min");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,2.5e0,,"));
    }

    #[test]
    fn retrain_with_nothing_forgotten_equals_full_training() {
        let ds = gen_blobs(20, 3, 2, 4.0, 0.5, 3).unwrap();
        let spec = ModelSpec::logistic(2, 3, 0.01).unwrap();
        let cfg = OptimizerConfig::gd(0.5, 40);
        let (a, ta) = retrain_oracle(&ds, &spec, &cfg, 8).unwrap();
        let (b, tb) = train_original(&ds, &spec, &cfg, 8).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.role, Role::Retrain);
    }

    #[test]
    fn retrain_seeds_converge_to_tolerance() {
        let ds = split_random(&gen_blobs(20, 2, 2, 3.0, 1.0, 3).unwrap(), 0.3, 2).unwrap();
        let spec = ModelSpec::logistic(2, 2, 0.05).unwrap();
        let mut cfg = OptimizerConfig::gd(1.0, 5_000);
        cfg.grad_norm_tol = 1e-8;
        let (a, ta) = retrain_oracle(&ds, &spec, &cfg, 1).unwrap();
        let (b, tb) = retrain_oracle(&ds, &spec, &cfg, 2).unwrap();
        assert_ne!(ta.records[0].loss, tb.records[0].loss);
        assert_eq!(ta.stop, StopReason::Converged);
        assert_eq!(tb.stop, StopReason::Converged);
        let obj = ds.objective(&spec, Part::Retain).unwrap();
        assert!(obj.gradient(&a.theta).unwrap().norm() <= 1e-8);
        assert!(obj.gradient(&b.theta).unwrap().norm() <= 1e-8);
    }

    #[test]
    fn classwise_retrain_cannot_predict_forgotten_classes() {
        let ds = split_classwise(&gen_blobs(40, 4, 2, 6.0, 0.5, 4).unwrap(), 0.25, 3).unwrap();
        let spec = ModelSpec::logistic(2, 4, 0.01).unwrap();
        let (ckpt, _) = retrain_oracle(&ds, &spec, &OptimizerConfig::gd(0.5, 300), 1).unwrap();
        let acc = ds.objective(&spec, Part::Forget).unwrap().accuracy(&ckpt.theta).unwrap();
        assert_eq!(acc, 0.0);
        let kept = ds.objective(&spec, Part::TestRetain).unwrap().accuracy(&ckpt.theta).unwrap();
        assert!(kept > 0.95);
    }

    #[test]
    fn forget_oracle_references() {
        let q = make_quadratic(vec![3.0, 1.0], pv(&[1.0, 2.0]), 0.75).unwrap();
        let (ckpt, phi, _) = forget_oracle_objective(&q, &OptimizerConfig::default(), NoiseScope::GlobalD, 0).unwrap();
        assert_eq!(phi.loss, 0.75);
        assert_eq!(ckpt.theta.as_slice(), &[1.0, 2.0]);

        // Separable two-class forget set: perfect accuracy reference.
        let ds = split_random(&gen_blobs(30, 2, 2, 8.0, 0.3, 5).unwrap(), 0.4, 1).unwrap();
        let spec = ModelSpec::logistic(2, 2, 0.0).unwrap();
        let (_, phi, _) = forget_oracle(&ds, &spec, &OptimizerConfig::gd(0.5, 200), 3).unwrap();
        assert_eq!(phi.one_minus_accuracy, Some(0.0));

        let cache = PhiRefCache::new();
        let cfg = OptimizerConfig::gd(0.5, 50);
        let a = cache.get_or_compute(&ds, &spec, &cfg, 3).unwrap();
        let b = cache.get_or_compute(&ds, &spec, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn oracles_reject_empty_sets() {
        let ds = gen_blobs(10, 2, 2, 3.0, 0.5, 1).unwrap();
        let spec = ModelSpec::logistic(2, 2, 0.0).unwrap();
        assert!(matches!(forget_oracle(&ds, &spec, &OptimizerConfig::default(), 0), Err(ForgeError::EmptyData(_))));
    }
}
