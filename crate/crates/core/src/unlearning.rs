//! Influence-eliminating unlearning and baselines.
//!
//! The IEU update is
//!
//! ```text
//! θ_t = α·θ_{t−1} + (1−α)·θ_init − η·∇ʳ_{t−1} + c·η·∇ᶠ_{t−1},   θ_init ~ Kaiming
//! ```
//!
//! with a fresh `θ_init` per step. `α = 1, c = 0` is plain fine-tuning on the
//! retain set; `c > 0` adds gradient ascent on the forget set; `α < 1` adds
//! iterative re-initialisation (IRP) noise. Baselines: fine-tuning, random
//! labels, a SCRUB-style teacher/student KL schedule and saliency-masked
//! random labels.
//!
//! Randomness comes from `(seed, UNLEARN)` and is split into independent
//! substreams for retain shuffles, forget shuffles, noise and relabelling,
//! so enabling one component never perturbs the draws of another.
//!
//! Under IRP with `α ∈ (0, 1)` the per-coordinate stationary variance is
//! `(1−α)/(1+α) · 2/d`, not the Kaiming variance `2/d`: the iterate
//! approaches a shrunken initialisation distribution.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Part, SplitDataset};
use crate::error::{check_dims, ForgeError, Result};
use crate::models::{ModelSpec, NoiseScope, Objective, Targets};
use crate::numcore::{all_finite, derive_stream, norm, streams, ParamVector, RngStream};
use crate::training::{divergence_limit, epoch_batches, BatchSize};

const TAG_RETAIN: u64 = 0;
const TAG_NOISE: u64 = 1;
const TAG_FORGET: u64 = 2;
const TAG_RELABEL: u64 = 3;

/// Forget-gradient norms are clipped to this multiple of the retain-gradient
/// norm before the ascent term.
pub const DEFAULT_CLIP_FACTOR: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ft,
    Rl,
    Scrub,
    Salun,
    Ieu,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ft => "ft",
            Method::Rl => "rl",
            Method::Scrub => "scrub",
            Method::Salun => "salun",
            Method::Ieu => "ieu",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = ForgeError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ft" => Method::Ft,
            "rl" => Method::Rl,
            "scrub" => Method::Scrub,
            "salun" => Method::Salun,
            "ieu" => Method::Ieu,
            _ => return Err(ForgeError::InvalidArgument(format!("unknown method {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnConfig {
    pub method: Method,
    pub alpha: f64,
    pub c: f64,
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub seed: u64,
    /// SCRUB: number of leading epochs with the forget-set KL ascent.
    pub scrub_max_epochs: usize,
    /// SALUN: fraction of coordinates left trainable.
    pub salun_ratio: f64,
    pub noise_scope: NoiseScope,
    /// `None` disables forget-gradient clipping.
    pub clip_factor: Option<f64>,
    /// Permit IEU with an empty retain set (forget-only ascent).
    pub allow_empty_retain: bool,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            method: Method::Ieu,
            alpha: 1.0,
            c: 0.0,
            eta: 0.01,
            epochs: 10,
            batch_size: BatchSize::Full,
            seed: 0,
            scrub_max_epochs: 2,
            salun_ratio: 0.5,
            noise_scope: NoiseScope::GlobalD,
            clip_factor: Some(DEFAULT_CLIP_FACTOR),
            allow_empty_retain: false,
        }
    }
}

impl UnlearnConfig {
    pub fn ieu(alpha: f64, c: f64, eta: f64, epochs: usize, seed: u64) -> Self {
        Self { method: Method::Ieu, alpha, c, eta, epochs, seed, ..Self::default() }
    }

    pub fn baseline(method: Method, eta: f64, epochs: usize, seed: u64) -> Self {
        Self { method, eta, epochs, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ForgeError::InvalidArgument(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.c) {
            return bad(format!("c must lie in [0, 1], got {}", self.c));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.salun_ratio > 0.0 && self.salun_ratio <= 1.0) {
            return bad(format!("salun ratio must lie in (0, 1], got {}", self.salun_ratio));
        }
        if let Some(f) = self.clip_factor {
            if !(f > 0.0) {
                return bad("clip factor must be positive".into());
            }
        }
        if let BatchSize::Size(0) = self.batch_size {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }
}

/// Evaluation after an epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnlearnEpoch {
    pub epoch: usize,
    pub retain_loss: Option<f64>,
    pub forget_loss: Option<f64>,
    pub retain_acc: Option<f64>,
    pub forget_acc: Option<f64>,
    /// Mean KL(teacher ‖ student) on the forget set (SCRUB).
    pub forget_kl: Option<f64>,
    /// Mean KL(teacher ‖ student) on the retain set (SCRUB).
    pub retain_kl: Option<f64>,
    /// Steps in this epoch whose forget gradient was clipped.
    pub clipped_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub epoch: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlearnRun {
    /// Content hash of the input checkpoint, when there is one.
    pub input_checkpoint: Option<String>,
    pub config: UnlearnConfig,
    pub initial: UnlearnEpoch,
    /// One entry per completed epoch.
    pub trace: Vec<UnlearnEpoch>,
    pub theta: ParamVector,
    pub aborted: Option<Abort>,
    /// Wall-clock seconds; excluded from serialised reports.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl UnlearnRun {
    /// CSV with header
    /// `epoch,retain_loss,forget_loss,retain_acc,forget_acc,forget_kl,clipped_steps`.
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        let mut s = String::from("epoch,retain_loss,forget_loss,retain_acc,forget_acc,forget_kl,clipped_steps\n");
        for r in std::iter::once(&self.initial).chain(&self.trace) {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                opt(r.retain_loss),
                opt(r.forget_loss),
                opt(r.retain_acc),
                opt(r.forget_acc),
                opt(r.forget_kl),
                r.clipped_steps
            ));
        }
        s
    }
}

/// One parameter update, for replay and monitoring.
pub struct StepEvent<'a> {
    pub epoch: usize,
    pub step: usize,
    pub theta_before: &'a [f64],
    pub grad_r: &'a [f64],
    /// Forget gradient after clipping, when the ascent term is active.
    pub grad_f: Option<&'a [f64]>,
    pub theta_after: &'a [f64],
    pub clipped: bool,
}

/// Retain and forget objectives an unlearning method works on.
#[derive(Clone, Debug)]
pub struct UnlearnTask {
    pub spec: ModelSpec,
    pub retain: Option<Objective>,
    pub forget: Option<Objective>,
}

impl UnlearnTask {
    pub fn from_split(data: &SplitDataset, spec: &ModelSpec) -> Result<Self> {
        data.check_spec(spec)?;
        let part = |p: Part| -> Result<Option<Objective>> {
            if data.indices(p).is_empty() {
                Ok(None)
            } else {
                data.objective(spec, p).map(Some)
            }
        };
        Ok(Self { spec: spec.clone(), retain: part(Part::Retain)?, forget: part(Part::Forget)? })
    }

    pub fn from_objectives(retain: Option<Objective>, forget: Option<Objective>) -> Result<Self> {
        let spec = retain
            .as_ref()
            .or(forget.as_ref())
            .ok_or_else(|| ForgeError::EmptyData("task needs a retain or forget objective".into()))?
            .model()
            .clone();
        if let (Some(r), Some(f)) = (&retain, &forget) {
            check_dims(r.dim(), f.dim())?;
        }
        Ok(Self { spec, retain, forget })
    }

    pub fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn retain_obj(&self) -> Result<&Objective> {
        self.retain.as_ref().ok_or_else(|| ForgeError::EmptyData("retain set is empty".into()))
    }

    fn forget_obj(&self) -> Result<&Objective> {
        self.forget.as_ref().ok_or_else(|| ForgeError::EmptyData("forget set is empty".into()))
    }

    fn class_views(&self) -> Result<(&Objective, &Objective, usize)> {
        let r = self.retain_obj()?;
        let f = self.forget_obj()?;
        let c = self
            .spec
            .num_classes()
            .filter(|_| r.is_classification())
            .ok_or_else(|| ForgeError::Unsupported("method requires a classification task".into()))?;
        Ok((r, f, c))
    }

    /// Losses and accuracies on both sets.
    pub fn evaluate(&self, theta: &ParamVector, epoch: usize) -> Result<UnlearnEpoch> {
        let eval = |o: &Option<Objective>| -> Result<(Option<f64>, Option<f64>)> {
            match o {
                None => Ok((None, None)),
                Some(o) => {
                    let acc = match o.data().map(|d| d.targets()) {
                        Some(Targets::Classes { .. }) => Some(o.accuracy(theta)?),
                        _ => None,
                    };
                    Ok((Some(o.value(theta)?), acc))
                }
            }
        };
        let (retain_loss, retain_acc) = eval(&self.retain)?;
        let (forget_loss, forget_acc) = eval(&self.forget)?;
        Ok(UnlearnEpoch { epoch, retain_loss, forget_loss, retain_acc, forget_acc, ..Default::default() })
    }
}

/// Kaiming draw of the noise scope's shape.
fn draw_init(spec: &ModelSpec, scope: NoiseScope, rng: &mut RngStream) -> Result<ParamVector> {
    spec.kaiming_init(scope, rng)
}

/// In-place IEU combination. The re-initialisation term is skipped exactly
/// when `init` is `None` and the ascent term when `grad_f` is `None`.
fn ieu_update(theta: &mut [f64], grad_r: &[f64], grad_f: Option<&[f64]>, alpha: f64, c: f64, eta: f64, init: Option<&[f64]>) {
    for i in 0..theta.len() {
        let mut x = alpha * theta[i];
        if let Some(z) = init {
            x += (1.0 - alpha) * z[i];
        }
        x -= eta * grad_r[i];
        if let Some(gf) = grad_f {
            x += c * eta * gf[i];
        }
        theta[i] = x;
    }
}

/// One IEU step with a fresh Kaiming draw (only when `alpha < 1`).
#[allow(clippy::too_many_arguments)]
pub fn ieu_step(
    theta: &ParamVector,
    grad_r: &ParamVector,
    grad_f: &ParamVector,
    alpha: f64,
    c: f64,
    eta: f64,
    rng: &mut RngStream,
    spec: &ModelSpec,
    scope: NoiseScope,
) -> Result<ParamVector> {
    check_dims(theta.dim(), grad_r.dim())?;
    check_dims(theta.dim(), grad_f.dim())?;
    check_dims(spec.param_count(), theta.dim())?;
    if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&c) || !(eta >= 0.0) {
        return Err(ForgeError::InvalidArgument("need alpha, c in [0, 1] and eta >= 0".into()));
    }
    let init = if alpha < 1.0 { Some(draw_init(spec, scope, rng)?) } else { None };
    let mut out = theta.as_slice().to_vec();
    let gf = (c > 0.0).then_some(grad_f.as_slice());
    ieu_update(&mut out, grad_r.as_slice(), gf, alpha, c, eta, init.as_ref().map(ParamVector::as_slice));
    ParamVector::new(out)
}

fn clip_to(g: &mut [f64], limit: f64) -> bool {
    let n = norm(g);
    if n > limit {
        let s = limit / n;
        g.iter_mut().for_each(|x| *x *= s);
        true
    } else {
        false
    }
}

fn batch_len(batch: BatchSize, n: usize) -> usize {
    match batch {
        BatchSize::Full => n.max(1),
        BatchSize::Size(b) => b.min(n.max(1)),
    }
}

fn grad_on(obj: &Objective, theta: &[f64], batch: Option<&[usize]>) -> Result<Vec<f64>> {
    let t = ParamVector::new(theta.to_vec()).map_err(|_| ForgeError::NonFinite("parameters".into()))?;
    let (_, g) = match batch {
        Some(b) => obj.batch_value_and_gradient(&t, b)?,
        None => obj.value_and_gradient(&t)?,
    };
    Ok(g.into_vec())
}

/// Per-epoch divergence guard on the monitored loss.
struct Guard {
    limit: f64,
}

impl Guard {
    fn new(initial: &UnlearnEpoch) -> Self {
        let base = initial.retain_loss.or(initial.forget_loss).unwrap_or(1.0);
        Self { limit: divergence_limit(base) }
    }

    fn check(&self, stats: &UnlearnEpoch) -> Option<String> {
        let loss = stats.retain_loss.or(stats.forget_loss)?;
        (!(loss <= self.limit)).then(|| format!("monitored loss {loss:e} exceeded guard {:e}", self.limit))
    }
}

struct Driver<'a> {
    task: &'a UnlearnTask,
    cfg: &'a UnlearnConfig,
    theta: Vec<f64>,
    initial: UnlearnEpoch,
    trace: Vec<UnlearnEpoch>,
    aborted: Option<Abort>,
    guard: Guard,
}

impl<'a> Driver<'a> {
    fn new(task: &'a UnlearnTask, theta0: &ParamVector, cfg: &'a UnlearnConfig) -> Result<Self> {
        cfg.validate()?;
        check_dims(task.dim(), theta0.dim())?;
        let initial = task.evaluate(theta0, 0)?;
        let guard = Guard::new(&initial);
        Ok(Self { task, cfg, theta: theta0.as_slice().to_vec(), initial, trace: Vec::new(), aborted: None, guard })
    }

    /// Records the end of an epoch; returns false when the run must stop.
    /// On abort the parameters roll back to `last_good`.
    fn end_epoch(&mut self, epoch: usize, clipped: usize, last_good: &[f64]) -> Result<bool> {
        if !all_finite(&self.theta) {
            self.theta = last_good.to_vec();
            self.aborted = Some(Abort { epoch, reason: "non-finite parameters".into() });
            return Ok(false);
        }
        let theta = ParamVector::new(self.theta.clone())?;
        let mut stats = match self.task.evaluate(&theta, epoch) {
            Ok(s) => s,
            Err(ForgeError::NonFinite(what)) => {
                self.theta = last_good.to_vec();
                self.aborted = Some(Abort { epoch, reason: format!("non-finite {what}") });
                return Ok(false);
            }
            Err(e) => return Err(e),
        };
        stats.clipped_steps = clipped;
        if let Some(reason) = self.guard.check(&stats) {
            self.theta = last_good.to_vec();
            self.aborted = Some(Abort { epoch, reason });
            return Ok(false);
        }
        self.trace.push(stats);
        Ok(true)
    }

    fn finish(self, input: Option<String>, start: Instant) -> Result<UnlearnRun> {
        Ok(UnlearnRun {
            input_checkpoint: input,
            config: self.cfg.clone(),
            initial: self.initial,
            trace: self.trace,
            theta: ParamVector::new(self.theta)?,
            aborted: self.aborted,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        })
    }
}

/// IEU on an arbitrary task, reporting every update to `observe`.
pub fn ieu_run_observed<F>(task: &UnlearnTask, theta0: &ParamVector, cfg: &UnlearnConfig, mut observe: F) -> Result<UnlearnRun>
where
    F: FnMut(&StepEvent<'_>),
{
    let start = Instant::now();
    let mut drv = Driver::new(task, theta0, cfg)?;
    if task.retain.is_none() && !cfg.allow_empty_retain {
        return Err(ForgeError::EmptyData("retain set is empty (set allow_empty_retain for forget-only ascent)".into()));
    }
    let ascent = cfg.c > 0.0;
    let forget = if ascent { Some(task.forget_obj()?) } else { None };
    let root = derive_stream(cfg.seed, streams::UNLEARN);
    let mut retain_rng = root.substream(TAG_RETAIN);
    let mut forget_rng = root.substream(TAG_FORGET);
    let mut noise_rng = root.substream(TAG_NOISE);
    let n_r = task.retain.as_ref().map_or(0, Objective::num_examples);
    let n_f = forget.map_or(0, Objective::num_examples);
    let b_r = batch_len(cfg.batch_size, n_r);
    let b_f = batch_len(cfg.batch_size, n_f);
    let d = task.dim();
    let zeros = vec![0.0; d];

    for epoch in 1..=cfg.epochs {
        let last_good = drv.theta.clone();
        let r_batches = match &task.retain {
            Some(_) => epoch_batches(n_r, b_r, b_r < n_r, &mut retain_rng),
            None => None,
        };
        let f_batches = if ascent { epoch_batches(n_f, b_f, b_f < n_f, &mut forget_rng) } else { None };
        let steps = match (&task.retain, &r_batches, &f_batches) {
            (Some(_), Some(b), _) => b.len(),
            (Some(_), None, _) => 1,
            (None, _, Some(fb)) => fb.len(),
            (None, _, None) => 1,
        };
        let mut clipped_steps = 0;
        for s in 0..steps {
            let gr = match &task.retain {
                Some(r) => grad_on(r, &drv.theta, r_batches.as_ref().map(|b| b[s].as_slice()))?,
                None => zeros.clone(),
            };
            let mut clipped = false;
            let gf = match forget {
                Some(f) => {
                    let fb = f_batches.as_ref().map(|b| b[s % b.len()].as_slice());
                    let mut g = grad_on(f, &drv.theta, fb)?;
                    if let (Some(factor), Some(_)) = (cfg.clip_factor, &task.retain) {
                        let rn = norm(&gr);
                        if rn > 0.0 {
                            clipped = clip_to(&mut g, factor * rn);
                        }
                    }
                    Some(g)
                }
                None => None,
            };
            clipped_steps += clipped as usize;
            let init = if cfg.alpha < 1.0 { Some(draw_init(&task.spec, cfg.noise_scope, &mut noise_rng)?) } else { None };
            let before = drv.theta.clone();
            ieu_update(&mut drv.theta, &gr, gf.as_deref(), cfg.alpha, cfg.c, cfg.eta, init.as_ref().map(ParamVector::as_slice));
            observe(&StepEvent {
                epoch,
                step: s,
                theta_before: &before,
                grad_r: &gr,
                grad_f: gf.as_deref(),
                theta_after: &drv.theta,
                clipped,
            });
            if !all_finite(&drv.theta) {
                break;
            }
        }
        if !drv.end_epoch(epoch, clipped_steps, &last_good)? {
            break;
        }
    }
    drv.finish(None, start)
}

pub fn ieu_run_task(task: &UnlearnTask, theta0: &ParamVector, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    ieu_run_observed(task, theta0, cfg, |_| {})
}

/// Plain gradient descent on the retain loss, with the same minibatch
/// schedule as IEU.
pub fn finetune_task(task: &UnlearnTask, theta0: &ParamVector, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    let start = Instant::now();
    let mut drv = Driver::new(task, theta0, cfg)?;
    let retain = task.retain_obj()?;
    let mut rng = derive_stream(cfg.seed, streams::UNLEARN).substream(TAG_RETAIN);
    let n = retain.num_examples();
    let b = batch_len(cfg.batch_size, n);
    for epoch in 1..=cfg.epochs {
        let last_good = drv.theta.clone();
        match epoch_batches(n, b, b < n, &mut rng) {
            None => {
                let g = grad_on(retain, &drv.theta, None)?;
                drv.theta.iter_mut().zip(&g).for_each(|(t, gi)| *t -= cfg.eta * gi);
            }
            Some(batches) => {
                for bt in &batches {
                    let g = grad_on(retain, &drv.theta, Some(bt))?;
                    drv.theta.iter_mut().zip(&g).for_each(|(t, gi)| *t -= cfg.eta * gi);
                    if !all_finite(&drv.theta) {
                        break;
                    }
                }
            }
        }
        if !drv.end_epoch(epoch, 0, &last_good)? {
            break;
        }
    }
    drv.finish(None, start)
}

/// Labels resampled uniformly from the other `C − 1` classes, from the
/// `(seed, epoch)` relabelling stream.
pub fn relabel_forget(labels: &[usize], num_classes: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = derive_stream(seed, streams::UNLEARN).substream(TAG_RELABEL).substream(epoch as u64);
    labels.iter().map(|&y| (y + 1 + rng.below(num_classes - 1)) % num_classes).collect()
}

/// Coordinates with the `⌈ρ·d⌉` largest forget-gradient magnitudes at
/// `theta`; ties go to the lower index.
pub fn saliency_mask(task: &UnlearnTask, theta: &ParamVector, ratio: f64) -> Result<Vec<bool>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(ForgeError::InvalidArgument(format!("saliency ratio must lie in (0, 1], got {ratio}")));
    }
    let g = task.forget_obj()?.gradient(theta)?;
    let d = g.dim();
    let k = ((ratio * d as f64).ceil() as usize).clamp(1, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        let (ga, gb) = (g.as_slice()[a].abs(), g.as_slice()[b].abs());
        gb.partial_cmp(&ga).expect("finite gradient").then(a.cmp(&b))
    });
    let mut mask = vec![false; d];
    order[..k].iter().for_each(|&i| mask[i] = true);
    Ok(mask)
}

fn random_label_impl(task: &UnlearnTask, theta0: &ParamVector, cfg: &UnlearnConfig, mask: Option<&[bool]>) -> Result<UnlearnRun> {
    let start = Instant::now();
    let mut drv = Driver::new(task, theta0, cfg)?;
    let (retain, forget, classes) = task.class_views()?;
    let rview = retain.data().expect("classification objective has data");
    let fview = forget.data().expect("classification objective has data");
    let Targets::Classes { labels: true_labels, .. } = fview.targets() else {
        return Err(ForgeError::Unsupported("random labels need hard forget labels".into()));
    };
    let mut rng = derive_stream(cfg.seed, streams::UNLEARN).substream(TAG_RETAIN);
    for epoch in 1..=cfg.epochs {
        let last_good = drv.theta.clone();
        let fresh = relabel_forget(true_labels, classes, cfg.seed, epoch);
        let relabeled = fview.with_targets(Targets::Classes { labels: fresh, num_classes: classes })?;
        let union = Objective::new(task.spec.clone(), rview.concat(&relabeled)?)?;
        let n = union.num_examples();
        let b = batch_len(cfg.batch_size, n);
        let batches = epoch_batches(n, b, b < n, &mut rng);
        let steps = batches.as_ref().map_or(1, Vec::len);
        for s in 0..steps {
            let g = grad_on(&union, &drv.theta, batches.as_ref().map(|bs| bs[s].as_slice()))?;
            match mask {
                None => drv.theta.iter_mut().zip(&g).for_each(|(t, gi)| *t -= cfg.eta * gi),
                Some(m) => {
                    for i in 0..g.len() {
                        if m[i] {
                            drv.theta[i] -= cfg.eta * g[i];
                        }
                    }
                }
            }
            if !all_finite(&drv.theta) {
                break;
            }
        }
        if !drv.end_epoch(epoch, 0, &last_good)? {
            break;
        }
    }
    drv.finish(None, start)
}

/// Descent on the retain set plus the forget set with labels resampled
/// every epoch.
pub fn random_label_task(task: &UnlearnTask, theta0: &ParamVector, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    random_label_impl(task, theta0, cfg, None)
}

/// Random labels restricted to the saliency mask computed at `theta0`.
pub fn salun_task(task: &UnlearnTask, theta0: &ParamVector, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    cfg.validate()?;
    task.class_views()?;
    let mask = saliency_mask(task, theta0, cfg.salun_ratio)?;
    random_label_impl(task, theta0, cfg, Some(&mask))
}

fn teacher_targets(obj: &Objective, teacher: &ParamVector, classes: usize, spec: &ModelSpec) -> Result<(Objective, Vec<f64>)> {
    let probs = obj.probabilities(teacher)?;
    let entropy = probs
        .chunks(classes)
        .map(|p| -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>())
        .collect();
    let view = obj.data().expect("classification objective has data").with_targets(Targets::Soft { probs, num_classes: classes })?;
    Ok((Objective::new(spec.with_weight_decay(0.0)?, view)?, entropy))
}

/// Mean KL(teacher ‖ student) given the soft-target objective and the
/// teacher entropies.
fn mean_kl(soft: &Objective, entropy: &[f64], theta: &[f64]) -> Result<f64> {
    let ce = soft.per_example_losses(&ParamVector::new(theta.to_vec())?)?;
    Ok(ce.iter().zip(entropy).map(|(c, h)| c - h).sum::<f64>() / ce.len() as f64)
}

/// SCRUB-style schedule: for the first `m` epochs ascend the forget-set
/// KL(teacher ‖ student); every epoch descend retain CE + KL.
pub fn scrub_task(task: &UnlearnTask, theta0: &ParamVector, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    let start = Instant::now();
    let mut drv = Driver::new(task, theta0, cfg)?;
    let (retain, forget, classes) = task.class_views()?;
    let (soft_r, h_r) = teacher_targets(retain, theta0, classes, &task.spec)?;
    let (soft_f, h_f) = teacher_targets(forget, theta0, classes, &task.spec)?;
    drv.initial.forget_kl = Some(mean_kl(&soft_f, &h_f, &drv.theta)?);
    drv.initial.retain_kl = Some(mean_kl(&soft_r, &h_r, &drv.theta)?);
    let root = derive_stream(cfg.seed, streams::UNLEARN);
    let mut retain_rng = root.substream(TAG_RETAIN);
    let mut forget_rng = root.substream(TAG_FORGET);
    let (n_r, n_f) = (retain.num_examples(), forget.num_examples());
    let (b_r, b_f) = (batch_len(cfg.batch_size, n_r), batch_len(cfg.batch_size, n_f));
    for epoch in 1..=cfg.epochs {
        let last_good = drv.theta.clone();
        if epoch <= cfg.scrub_max_epochs {
            let batches = epoch_batches(n_f, b_f, b_f < n_f, &mut forget_rng);
            for s in 0..batches.as_ref().map_or(1, Vec::len) {
                let g = grad_on(&soft_f, &drv.theta, batches.as_ref().map(|b| b[s].as_slice()))?;
                drv.theta.iter_mut().zip(&g).for_each(|(t, gi)| *t += cfg.eta * gi);
            }
        }
        let batches = epoch_batches(n_r, b_r, b_r < n_r, &mut retain_rng);
        for s in 0..batches.as_ref().map_or(1, Vec::len) {
            let b = batches.as_ref().map(|b| b[s].as_slice());
            let g = grad_on(retain, &drv.theta, b)?;
            let k = grad_on(&soft_r, &drv.theta, b)?;
            drv.theta.iter_mut().zip(g.iter().zip(&k)).for_each(|(t, (gi, ki))| *t -= cfg.eta * (gi + ki));
        }
        let ok = drv.end_epoch(epoch, 0, &last_good)?;
        if !ok {
            break;
        }
        let last = drv.trace.last_mut().expect("epoch recorded");
        last.forget_kl = Some(mean_kl(&soft_f, &h_f, &drv.theta)?);
        last.retain_kl = Some(mean_kl(&soft_r, &h_r, &drv.theta)?);
    }
    drv.finish(None, start)
}

/// Dispatches on `cfg.method`.
pub fn unlearn_task(task: &UnlearnTask, theta0: &ParamVector, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    match cfg.method {
        Method::Ieu => ieu_run_task(task, theta0, cfg),
        Method::Ft => finetune_task(task, theta0, cfg),
        Method::Rl => random_label_task(task, theta0, cfg),
        Method::Scrub => scrub_task(task, theta0, cfg),
        Method::Salun => salun_task(task, theta0, cfg),
    }
}

/// Unlearns `ckpt` on `data` with the configured method.
pub fn unlearn(ckpt: &Checkpoint, data: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    let task = UnlearnTask::from_split(data, &ckpt.spec)?;
    let mut run = unlearn_task(&task, &ckpt.theta, cfg)?;
    run.input_checkpoint = Some(ckpt.content_hash()?);
    Ok(run)
}

pub fn ieu_run(ckpt: &Checkpoint, data: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    unlearn(ckpt, data, &UnlearnConfig { method: Method::Ieu, ..cfg.clone() })
}

pub fn finetune(ckpt: &Checkpoint, data: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    unlearn(ckpt, data, &UnlearnConfig { method: Method::Ft, ..cfg.clone() })
}

pub fn random_label(ckpt: &Checkpoint, data: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    unlearn(ckpt, data, &UnlearnConfig { method: Method::Rl, ..cfg.clone() })
}

pub fn scrub_lite(ckpt: &Checkpoint, data: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    unlearn(ckpt, data, &UnlearnConfig { method: Method::Scrub, ..cfg.clone() })
}

pub fn salun_lite(ckpt: &Checkpoint, data: &SplitDataset, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    unlearn(ckpt, data, &UnlearnConfig { method: Method::Salun, ..cfg.clone() })
}

/// The iterative re-initialisation process
/// `θ_{t+1} = α·θ_t + (1−α)·z_t`, `z_t ~ Normal(0, 2/d)`, as an iterator
/// over successive states.
pub struct Irp {
    theta: Vec<f64>,
    alpha: f64,
    sd: f64,
    rng: RngStream,
}

impl Irp {
    pub fn new(theta: &ParamVector, alpha: f64, rng: RngStream) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ForgeError::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let sd = (2.0 / theta.dim() as f64).sqrt();
        Ok(Self { theta: theta.as_slice().to_vec(), alpha, sd, rng })
    }

    /// Advances one step in place and returns the new state.
    pub fn advance(&mut self) -> &[f64] {
        if self.alpha < 1.0 {
            for t in self.theta.iter_mut() {
                *t = self.alpha * *t + (1.0 - self.alpha) * (self.sd * self.rng.normal());
            }
        }
        &self.theta
    }

    pub fn state(&self) -> &[f64] {
        &self.theta
    }
}

impl Iterator for Irp {
    type Item = ParamVector;
    fn next(&mut self) -> Option<ParamVector> {
        Some(ParamVector::new(self.advance().to_vec()).expect("IRP keeps parameters finite"))
    }
}

/// Full IRP trajectory `θ_0, …, θ_steps`.
pub fn irp_run(theta: &ParamVector, alpha: f64, steps: usize, rng: RngStream) -> Result<Vec<ParamVector>> {
    let mut irp = Irp::new(theta, alpha, rng)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(theta.clone());
    out.extend((&mut irp).take(steps));
    Ok(out)
}

/// Stationary per-coordinate variance of IRP: solves `v = α²v + (1−α)²·2/d`.
pub fn irp_stationary_variance(alpha: f64, d: usize) -> f64 {
    (1.0 - alpha) / (1.0 + alpha) * 2.0 / d as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetainBoundCheck {
    pub t: usize,
    pub gap: f64,
    pub bound: f64,
}

/// Retain-loss gap along an IEU trajectory against
/// `L·D·e^{−(μ/β)t} + 2β(D(1−α)/2 + Lc/(2β) + L/β)² + β(1−α)²`, with `L`
/// the largest retain-gradient norm and `D` half the largest pairwise
/// distance on the trajectory. The additive constant of the guarantee is
/// unspecified and taken as zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetainBoundReport {
    pub lipschitz: f64,
    pub half_diameter: f64,
    pub mu: f64,
    pub beta: f64,
    pub alpha: f64,
    pub c: f64,
    pub checks: Vec<RetainBoundCheck>,
    /// Smallest `bound − gap` over the trajectory.
    pub min_slack: f64,
    pub holds: bool,
    pub label: String,
}

pub fn retain_bound_monitor(retain: &Objective, trajectory: &[ParamVector], alpha: f64, c: f64) -> Result<RetainBoundReport> {
    let (mu, beta) = retain
        .quadratic_bounds()
        .ok_or_else(|| ForgeError::Unsupported("retain-bound monitor needs known curvature (quadratic)".into()))?;
    let (_, l_star) = retain.quadratic_optimum().expect("quadratic has an optimum");
    if trajectory.is_empty() {
        return Err(ForgeError::EmptyData("empty trajectory".into()));
    }
    let mut lip: f64 = 0.0;
    let mut gaps = Vec::with_capacity(trajectory.len());
    for th in trajectory {
        let (v, g) = retain.value_and_gradient(th)?;
        lip = lip.max(g.norm());
        gaps.push(v - l_star);
    }
    let mut diam: f64 = 0.0;
    for i in 0..trajectory.len() {
        for j in 0..i {
            diam = diam.max(trajectory[i].distance(&trajectory[j])?);
        }
    }
    let dd = diam / 2.0;
    let floor = 2.0 * beta * (dd * (1.0 - alpha) / 2.0 + lip * c / (2.0 * beta) + lip / beta).powi(2) + beta * (1.0 - alpha).powi(2);
    let checks: Vec<RetainBoundCheck> = gaps
        .iter()
        .enumerate()
        .map(|(t, &gap)| RetainBoundCheck { t, gap, bound: lip * dd * (-(mu / beta) * t as f64).exp() + floor })
        .collect();
    let min_slack = checks.iter().map(|k| k.bound - k.gap).fold(f64::INFINITY, f64::min);
    Ok(RetainBoundReport {
        lipschitz: lip,
        half_diameter: dd,
        mu,
        beta,
        alpha,
        c,
        checks,
        min_slack,
        holds: min_slack >= 0.0,
        label: "trajectory-empirical L and D; additive constant omitted".into(),
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, gen_quadratic_task, split_classwise, split_random};
    use crate::models::Activation;
    use crate::training::{train_original, OptimizerConfig};

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn trained(classwise: bool, classes: usize) -> (Checkpoint, SplitDataset) {
        trained_with(classwise, classes, 4.0, 1e-3)
    }

    fn trained_with(classwise: bool, classes: usize, separation: f64, wd: f64) -> (Checkpoint, SplitDataset) {
        let ds = gen_blobs(40, classes, 2, separation, 0.7, 5).unwrap();
        let ds = if classwise { split_classwise(&ds, 1.0 / classes as f64, 3) } else { split_random(&ds, 0.2, 3) }.unwrap();
        let spec = ModelSpec::logistic(2, classes, wd).unwrap();
        let (ck, _) = train_original(&ds, &spec, &OptimizerConfig::gd(0.5, 200), 1).unwrap();
        (ck, ds)
    }

    fn bits(p: &ParamVector) -> Vec<u64> {
        p.as_slice().iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn ieu_step_substitution() {
        let spec = ModelSpec::quadratic(vec![1.0, 1.0], vec![0.0, 0.0], 0.0).unwrap();
        let mut rng = derive_stream(0, streams::UNLEARN);
        let out = ieu_step(&pv(&[1.0, 1.0]), &pv(&[0.2, -0.4]), &pv(&[1.0, 1.0]), 1.0, 0.5, 0.1, &mut rng, &spec, NoiseScope::GlobalD).unwrap();
        assert!((out.as_slice()[0] - 1.03).abs() < 1e-15);
        assert!((out.as_slice()[1] - 1.09).abs() < 1e-15);
        // No noise drawn when alpha == 1.
        assert_eq!(rng.word_pos(), derive_stream(0, streams::UNLEARN).word_pos());
        let bad = ieu_step(&pv(&[1.0]), &pv(&[0.2, -0.4]), &pv(&[1.0, 1.0]), 1.0, 0.5, 0.1, &mut rng, &spec, NoiseScope::GlobalD);
        assert!(bad.is_err());
    }

    #[test]
    fn ieu_step_full_reinit_ignores_theta() {
        let spec = ModelSpec::quadratic(vec![1.0; 4], vec![0.0; 4], 0.0).unwrap();
        let g = pv(&[0.0; 4]);
        let a = ieu_step(&pv(&[5.0; 4]), &g, &g, 0.0, 0.0, 0.0, &mut derive_stream(9, 1), &spec, NoiseScope::GlobalD).unwrap();
        let b = ieu_step(&pv(&[-3.0; 4]), &g, &g, 0.0, 0.0, 0.0, &mut derive_stream(9, 1), &spec, NoiseScope::GlobalD).unwrap();
        assert_eq!(a, b);
        let k = spec.kaiming_init(NoiseScope::GlobalD, &mut derive_stream(9, 1)).unwrap();
        assert_eq!(a, k);
    }

    #[test]
    fn finetune_matches_ieu_limit_bitwise() {
        let (ck, ds) = trained(false, 3);
        for batch in [BatchSize::Full, BatchSize::Size(16)] {
            let cfg = UnlearnConfig { batch_size: batch, ..UnlearnConfig::ieu(1.0, 0.0, 0.1, 5, 7) };
            let a = ieu_run(&ck, &ds, &cfg).unwrap();
            let b = finetune(&ck, &ds, &cfg).unwrap();
            assert_eq!(bits(&a.theta), bits(&b.theta));
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.trace.len(), 5);
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (ck, ds) = trained(false, 3);
        for m in [Method::Ieu, Method::Ft, Method::Rl, Method::Scrub, Method::Salun] {
            let cfg = UnlearnConfig { method: m, ..UnlearnConfig::ieu(0.5, 0.5, 0.1, 0, 1) };
            let run = unlearn(&ck, &ds, &cfg).unwrap();
            assert_eq!(bits(&run.theta), bits(&ck.theta), "{m:?}");
            assert!(run.trace.is_empty());
            assert_eq!(run.input_checkpoint.as_deref(), Some(ck.content_hash().unwrap().as_str()));
        }
    }

    #[test]
    fn ascent_adds_exactly_c_eta_grad_f() {
        let (ck, ds) = trained(false, 3);
        let task = UnlearnTask::from_split(&ds, &ck.spec).unwrap();
        let cfg = UnlearnConfig { batch_size: BatchSize::Size(20), ..UnlearnConfig::ieu(1.0, 0.3, 0.05, 3, 2) };
        let mut steps = 0;
        ieu_run_observed(&task, &ck.theta, &cfg, |e| {
            let gf = e.grad_f.expect("ascent active");
            for i in 0..e.theta_before.len() {
                let replay = 1.0 * e.theta_before[i] - 0.05 * e.grad_r[i] + 0.3 * 0.05 * gf[i];
                assert_eq!(replay.to_bits(), e.theta_after[i].to_bits());
            }
            steps += 1;
        })
        .unwrap();
        let n_r = ds.indices(Part::Retain).len();
        assert_eq!(steps, 3 * n_r.div_ceil(20));
    }

    #[test]
    fn noisy_variant_reproducible_and_seed_dependent() {
        let (ck, ds) = trained(false, 3);
        let cfg = UnlearnConfig::ieu(0.99, 0.0, 0.1, 3, 4);
        let a = ieu_run(&ck, &ds, &cfg).unwrap();
        let b = ieu_run(&ck, &ds, &cfg).unwrap();
        assert_eq!(bits(&a.theta), bits(&b.theta));
        let c = ieu_run(&ck, &ds, &UnlearnConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(bits(&a.theta), bits(&c.theta));
    }

    #[test]
    fn empty_retain_needs_opt_in() {
        let (ck, ds) = trained(false, 3);
        let task = UnlearnTask::from_split(&ds, &ck.spec).unwrap();
        let forget_only = UnlearnTask::from_objectives(None, task.forget.clone()).unwrap();
        let cfg = UnlearnConfig::ieu(1.0, 0.01, 0.1, 3, 0);
        assert!(matches!(ieu_run_task(&forget_only, &ck.theta, &cfg), Err(ForgeError::EmptyData(_))));
        let run = ieu_run_task(&forget_only, &ck.theta, &UnlearnConfig { allow_empty_retain: true, ..cfg }).unwrap();
        let f0 = run.initial.forget_loss.unwrap();
        assert!(run.trace.last().unwrap().forget_loss.unwrap() > f0);
        assert!(finetune_task(&forget_only, &ck.theta, &UnlearnConfig::default()).is_err());
    }

    #[test]
    fn relabel_binary_always_flips() {
        let labels: Vec<usize> = (0..50).map(|i| i % 2).collect();
        for epoch in 0..5 {
            let r = relabel_forget(&labels, 2, 3, epoch);
            assert!(r.iter().zip(&labels).all(|(a, b)| a != b));
        }
        let labels: Vec<usize> = (0..200).map(|i| i % 4).collect();
        let a = relabel_forget(&labels, 4, 3, 1);
        assert_eq!(a, relabel_forget(&labels, 4, 3, 1));
        assert_ne!(a, relabel_forget(&labels, 4, 3, 2));
        assert!(a.iter().zip(&labels).all(|(x, y)| x != y && *x < 4));
    }

    #[test]
    fn salun_full_mask_equals_random_label() {
        let (ck, ds) = trained(false, 3);
        let cfg = UnlearnConfig { salun_ratio: 1.0, batch_size: BatchSize::Size(25), ..UnlearnConfig::baseline(Method::Rl, 0.1, 4, 8) };
        let a = random_label(&ck, &ds, &cfg).unwrap();
        let b = salun_lite(&ck, &ds, &cfg).unwrap();
        assert_eq!(bits(&a.theta), bits(&b.theta));
    }

    #[test]
    fn salun_leaves_unmasked_coordinates_alone() {
        let (ck, ds) = trained(false, 3);
        let task = UnlearnTask::from_split(&ds, &ck.spec).unwrap();
        let mask = saliency_mask(&task, &ck.theta, 0.2).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), (0.2 * 9.0f64).ceil() as usize);
        assert_eq!(mask, saliency_mask(&task, &ck.theta, 0.2).unwrap());
        let cfg = UnlearnConfig { salun_ratio: 0.2, ..UnlearnConfig::baseline(Method::Salun, 0.1, 6, 1) };
        let run = salun_lite(&ck, &ds, &cfg).unwrap();
        let mut moved = 0;
        for i in 0..mask.len() {
            if mask[i] {
                moved += (run.theta.as_slice()[i] != ck.theta.as_slice()[i]) as usize;
            } else {
                assert_eq!(run.theta.as_slice()[i].to_bits(), ck.theta.as_slice()[i].to_bits());
            }
        }
        assert!(moved > 0);
        assert!(saliency_mask(&task, &ck.theta, 0.0).is_err());
        assert!(saliency_mask(&task, &ck.theta, 1.5).is_err());
    }

    #[test]
    fn random_label_lowers_forget_accuracy() {
        let (ck, ds) = trained(true, 3);
        let mut finals = Vec::new();
        for seed in 0..5 {
            let cfg = UnlearnConfig::baseline(Method::Rl, 0.5, 5, seed);
            let run = random_label(&ck, &ds, &cfg).unwrap();
            finals.push(run.trace.last().unwrap().forget_acc.unwrap());
        }
        let original = random_label(&ck, &ds, &UnlearnConfig::baseline(Method::Rl, 0.5, 0, 0)).unwrap().initial.forget_acc.unwrap();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        assert!(mean < original, "{finals:?} vs {original}");
    }

    #[test]
    fn baselines_reject_regression() {
        let q = gen_quadratic_task(vec![4.0, 1.0], pv(&[0.0, 0.0]), 0.0, vec![1.0, 1.0], pv(&[1.0, 1.0])).unwrap();
        let task = UnlearnTask::from_objectives(Some(q.retain), Some(q.forget)).unwrap();
        let th = pv(&[1.0, 1.0]);
        for m in [Method::Rl, Method::Scrub, Method::Salun] {
            let cfg = UnlearnConfig::baseline(m, 0.1, 1, 0);
            assert!(matches!(unlearn_task(&task, &th, &cfg), Err(ForgeError::Unsupported(_))), "{m:?}");
        }
    }

    #[test]
    fn finetune_forgets_disjoint_class() {
        // Two classes, one forgotten: the retain set alone pulls the boundary
        // across the forgotten cluster.
        let (ck, ds) = trained_with(true, 2, 2.0, 1e-3);
        let cfg = UnlearnConfig::baseline(Method::Ft, 2.0, 2000, 0);
        let run = finetune(&ck, &ds, &cfg).unwrap();
        let last = run.trace.last().unwrap();
        assert!(last.forget_acc.unwrap() < run.initial.forget_acc.unwrap());
        assert!(last.retain_loss.unwrap() < run.initial.retain_loss.unwrap());
    }

    #[test]
    fn scrub_kl_schedule() {
        let (ck, ds) = trained(false, 3);
        let cfg = UnlearnConfig { batch_size: BatchSize::Size(32), ..UnlearnConfig::baseline(Method::Scrub, 0.2, 4, 3) };
        let run = scrub_lite(&ck, &ds, &cfg).unwrap();
        assert!(run.initial.retain_kl.unwrap().abs() < 1e-12);
        assert!(run.initial.forget_kl.unwrap().abs() < 1e-12);
        let kl: Vec<f64> = std::iter::once(&run.initial).chain(&run.trace).map(|r| r.forget_kl.unwrap()).collect();
        for t in 0..cfg.scrub_max_epochs {
            assert!(kl[t + 1] >= kl[t], "{kl:?}");
        }
        assert!(kl[cfg.scrub_max_epochs] > 0.0);
        // Without the max phase the schedule is distillation-regularised descent.
        let m0 = scrub_lite(&ck, &ds, &UnlearnConfig { scrub_max_epochs: 0, ..cfg.clone() }).unwrap();
        assert_ne!(bits(&m0.theta), bits(&run.theta));
    }

    #[test]
    fn divergence_is_flagged_and_rolled_back() {
        let q = gen_quadratic_task(vec![4.0, 1.0], pv(&[0.0, 0.0]), 0.0, vec![1.0, 1.0], pv(&[1.0, 1.0])).unwrap();
        let task = UnlearnTask::from_objectives(Some(q.retain), Some(q.forget)).unwrap();
        let run = ieu_run_task(&task, &pv(&[1.0, 1.0]), &UnlearnConfig::ieu(1.0, 0.0, 1.0, 50, 0)).unwrap();
        let ab = run.aborted.as_ref().expect("eta = 1 on curvature 4 diverges");
        assert!(run.trace.len() == ab.epoch - 1 && run.trace.len() < 50);
        assert!(run.theta.as_slice().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn quadratic_retain_bound_holds() {
        let q = gen_quadratic_task(vec![4.0, 1.0], pv(&[0.0, 0.0]), 0.0, vec![2.0, 1.0], pv(&[1.0, -1.0])).unwrap();
        let task = UnlearnTask::from_objectives(Some(q.retain.clone()), Some(q.forget)).unwrap();
        for (alpha, c) in [(1.0, 0.0), (1.0, 0.1), (0.95, 0.0), (0.9, 0.2)] {
            let theta0 = pv(&[2.0, -1.5]);
            let mut traj = vec![theta0.clone()];
            let cfg = UnlearnConfig { clip_factor: None, ..UnlearnConfig::ieu(alpha, c, 0.25, 60, 11) };
            ieu_run_observed(&task, &theta0, &cfg, |e| traj.push(pv(e.theta_after))).unwrap();
            let rep = retain_bound_monitor(&q.retain, &traj, alpha, c).unwrap();
            assert_eq!(rep.checks.len(), 61);
            assert!(rep.holds, "alpha {alpha} c {c}: slack {}", rep.min_slack);
        }
    }

    #[test]
    fn irp_limits() {
        let th = pv(&[0.3, -0.2, 1.0]);
        let traj = irp_run(&th, 1.0, 10, derive_stream(1, streams::IRP)).unwrap();
        assert_eq!(traj.len(), 11);
        assert!(traj.iter().all(|t| bits(t) == bits(&th)));
        let traj = irp_run(&th, 0.0, 2, derive_stream(1, streams::IRP)).unwrap();
        let mut rng = derive_stream(1, streams::IRP);
        let sd = (2.0f64 / 3.0).sqrt();
        let first: Vec<f64> = (0..3).map(|_| sd * rng.normal()).collect();
        assert_eq!(traj[1].as_slice(), first.as_slice());
        assert!(irp_run(&th, 1.5, 1, derive_stream(1, 1)).is_err());
    }

    #[test]
    fn irp_stationary_law() {
        // alpha = 0.9, d = 100 over 10^5 steps; statistics on the tail with
        // batch means to account for autocorrelation.
        let (alpha, d, steps, burn) = (0.9, 100usize, 100_000usize, 1_000usize);
        let target = irp_stationary_variance(alpha, d);
        assert!((target - 1.0526315789473684e-3).abs() < 1e-15);
        let mut irp = Irp::new(&ParamVector::zeros(d).unwrap(), alpha, derive_stream(17, streams::IRP)).unwrap();
        let batch = 1_000;
        let mut sq_means = Vec::new();
        let mut means = Vec::new();
        let (mut acc_sq, mut acc, mut k) = (0.0, 0.0, 0);
        for t in 0..steps {
            let s = irp.advance();
            if t < burn {
                continue;
            }
            acc_sq += s.iter().map(|x| x * x).sum::<f64>() / d as f64;
            acc += s.iter().sum::<f64>() / d as f64;
            k += 1;
            if k == batch {
                sq_means.push(acc_sq / batch as f64);
                means.push(acc / batch as f64);
                acc_sq = 0.0;
                acc = 0.0;
                k = 0;
            }
        }
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, (var / v.len() as f64).sqrt())
        };
        let (var_hat, se_v) = stats(&sq_means);
        let (mean_hat, se_m) = stats(&means);
        assert!((var_hat - target).abs() < 3.0 * se_v, "{var_hat} vs {target} (se {se_v})");
        assert!(mean_hat.abs() < 3.0 * se_m, "{mean_hat} (se {se_m})");
        // And clearly not the Kaiming variance 2/d.
        assert!((var_hat - 2.0 / d as f64).abs() > 100.0 * se_v);
    }

    #[test]
    fn config_validation_and_serde() {
        assert!(UnlearnConfig::ieu(1.5, 0.0, 0.1, 1, 0).validate().is_err());
        assert!(UnlearnConfig::ieu(1.0, -0.1, 0.1, 1, 0).validate().is_err());
        assert!(UnlearnConfig::ieu(1.0, 0.0, 0.0, 1, 0).validate().is_err());
        let cfg = UnlearnConfig { batch_size: BatchSize::Size(64), ..UnlearnConfig::ieu(0.9999, 0.01, 0.1, 3, 2) };
        let js = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<UnlearnConfig>(&js).unwrap(), cfg);
        let partial: UnlearnConfig = serde_json::from_str(r#"{"method":"scrub","eta":0.05}"#).unwrap();
        assert_eq!(partial.method, Method::Scrub);
        assert_eq!(partial.scrub_max_epochs, 2);
        assert_eq!("salun".parse::<Method>().unwrap(), Method::Salun);
    }

    #[test]
    fn mlp_unlearning_runs() {
        let ds = split_random(&gen_blobs(30, 3, 2, 4.0, 0.7, 2).unwrap(), 0.2, 1).unwrap();
        let spec = ModelSpec::mlp(2, &[6], 3, Activation::Relu, 1e-4).unwrap();
        let (ck, _) = train_original(&ds, &spec, &OptimizerConfig::gd(0.3, 50), 0).unwrap();
        let cfg = UnlearnConfig { noise_scope: NoiseScope::PerLayerFanIn, ..UnlearnConfig::ieu(0.99, 0.01, 0.1, 5, 0) };
        let run = ieu_run(&ck, &ds, &cfg).unwrap();
        assert_eq!(run.trace.len(), 5);
        assert!(run.to_csv().lines().count() == 7);
    }
}
