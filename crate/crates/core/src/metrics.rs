//! Relearning convergence delay, its bounds, membership inference and the
//! average performance gap.
//!
//! `RCD^K = Σ_{t=0}^{K} [Φ(θ_t) − Φ_ref]` where `θ_t` relearns the forget set
//! from the audited weights and `Φ_ref` is the forget oracle's error.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Part, SplitDataset, SplitMode};
use crate::error::{ForgeError, Result};
use crate::models::{ModelSpec, Objective};
use crate::numcore::{ParamVector, RngStream};
use crate::spectral::{self, condition_number, Conditioning, SpectralConfig, SpectralEstimate};
use crate::training::{train, OptimizerConfig, OptimizerKind};

const TAG_BOUND: u64 = 0xB0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    Loss,
    OneMinusAccuracy,
}

impl std::str::FromStr for PhiKind {
    type Err = ForgeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(PhiKind::Loss),
            "one_minus_accuracy" | "1-acc" | "acc" => Ok(PhiKind::OneMinusAccuracy),
            _ => Err(ForgeError::InvalidArgument(format!("unknown phi {s:?} (loss | one_minus_accuracy)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    Fixed { eta: f64 },
    AdaptiveInvLambdaMax,
}

impl std::str::FromStr for StepMode {
    type Err = ForgeError;
    /// `adaptive` or `fixed:<eta>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "adaptive" {
            return Ok(StepMode::AdaptiveInvLambdaMax);
        }
        let eta = s
            .strip_prefix("fixed:")
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|e| *e > 0.0 && e.is_finite())
            .ok_or_else(|| ForgeError::InvalidArgument(format!("bad step {s:?} (fixed:<eta> | adaptive)")))?;
        Ok(StepMode::Fixed { eta })
    }
}

/// Which guarantee a bound comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Local condition number at the audited weights (convex loss).
    Theorem1,
    /// Global `β/μ` of a strongly convex, smooth objective.
    Corollary1,
    /// Local condition number on a non-convex model: PSD at the audited
    /// point only, so the bound is indicative rather than guaranteed.
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcdBound {
    pub kind: BoundKind,
    pub kappa: f64,
    /// `L(θ) − L*`.
    pub gap: f64,
    pub bound: f64,
    pub spectral: Option<SpectralEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundOutcome {
    Bound(RcdBound),
    Diagnostic(String),
}

impl BoundOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            BoundOutcome::Bound(b) => Some(b.bound),
            BoundOutcome::Diagnostic(_) => None,
        }
    }
}

/// `κ·(L(θ) − L*)` on the forget objective, with `κ = β/μ` for quadratics
/// and the local Hessian condition number otherwise.
pub fn rcd_bound(theta: &ParamVector, forget: &Objective, l_star: f64, cfg: &SpectralConfig, rng: &mut RngStream) -> Result<BoundOutcome> {
    let gap = forget.value(theta)? - l_star;
    if let Some((mu, beta)) = forget.quadratic_bounds() {
        let kappa = beta / mu;
        return Ok(BoundOutcome::Bound(RcdBound { kind: BoundKind::Corollary1, kappa, gap, bound: kappa * gap, spectral: None }));
    }
    let est = match spectral::estimate(forget, theta, cfg, rng) {
        Ok(e) => e,
        Err(e) => return Ok(BoundOutcome::Diagnostic(format!("spectral estimate failed: {e}"))),
    };
    match condition_number(&est) {
        Conditioning::Undefined(why) => Ok(BoundOutcome::Diagnostic(why)),
        Conditioning::Finite(kappa) => {
            let kind = if forget.model().is_convex() { BoundKind::Theorem1 } else { BoundKind::Heuristic };
            Ok(BoundOutcome::Bound(RcdBound { kind, kappa, gap, bound: kappa * gap, spectral: Some(est) }))
        }
    }
}

/// Upper bound on `RCD^∞ − RCD^K` for gradient descent with step `1/λ₁`:
/// the loss gap contracts by at least `1 − 1/κ` per step, so the tail is at
/// most `κ·gap·(1 − 1/κ)^{K+1}`.
pub fn tail_estimate(kappa: f64, gap: f64, k: usize) -> f64 {
    if kappa <= 1.0 {
        return 0.0;
    }
    kappa * gap * (1.0 - 1.0 / kappa).powi(k as i32 + 1)
}

/// Exact `RCD^∞` of fixed-step gradient descent on a quadratic forget
/// objective (`Φ` = loss, `Φ_ref = L*`): `Σ_i ½λ_i r_i² / (1 − (1 − ηλ_i)²)`
/// with `r = θ_0 − θ*`.
pub fn quadratic_rcd_limit(forget: &Objective, theta0: &ParamVector, eta: f64) -> Result<f64> {
    let ModelSpec::Quadratic { spectrum, theta_star, .. } = forget.model() else {
        return Err(ForgeError::Unsupported("closed-form RCD needs a quadratic objective".into()));
    };
    crate::error::check_dims(spectrum.len(), theta0.dim())?;
    let mut total = 0.0;
    for ((l, t), x) in spectrum.iter().zip(theta_star).zip(theta0.as_slice()) {
        let r = x - t;
        if r == 0.0 {
            continue;
        }
        let q = 1.0 - eta * l;
        if q.abs() >= 1.0 {
            return Err(ForgeError::Unsupported(format!("step {eta} does not contract curvature {l}")));
        }
        total += 0.5 * l * r * r / (1.0 - q * q);
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcdOptions {
    /// Clamp each `e_t` at zero.
    pub clamp: bool,
    /// Attach the condition-number bound (loss `Φ` only).
    pub attach_bound: bool,
    pub spectral: SpectralConfig,
}

impl Default for RcdOptions {
    fn default() -> Self {
        Self { clamp: false, attach_bound: true, spectral: SpectralConfig { tol: 1e-8, max_iter: 5_000, dense_max_dim: 64 } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcdReport {
    pub k: usize,
    pub phi_kind: PhiKind,
    pub step_mode: StepMode,
    /// `rcd_gd`, `rcd_sgd` or `rcd_adam`.
    pub label: String,
    pub phi_ref: f64,
    /// `Φ(θ_t)` for `t = 0..=K`.
    pub phi: Vec<f64>,
    /// `e_t = Φ(θ_t) − Φ_ref` (clamped when requested).
    pub errors: Vec<f64>,
    pub rcd_value: f64,
    pub clamped: bool,
    pub theorem1_bound: Option<f64>,
    pub bound: Option<BoundOutcome>,
    pub spectral: Option<SpectralEstimate>,
    pub tail_estimate: Option<f64>,
}

impl RcdReport {
    /// Per-step CSV with header `t,phi,e_t,cumulative`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,phi,e_t,cumulative\n");
        let mut acc = 0.0;
        for (t, (p, e)) in self.phi.iter().zip(&self.errors).enumerate() {
            acc += e;
            let _ = writeln!(s, "{t},{p:e},{e:e},{acc:e}");
        }
        s
    }
}

fn relearn_label(cfg: &OptimizerConfig, n: usize) -> &'static str {
    match cfg.kind {
        OptimizerKind::Adam => "rcd_adam",
        OptimizerKind::Sgd if cfg.batch_size.resolve(n).is_ok_and(|b| b < n) => "rcd_sgd",
        _ => "rcd_gd",
    }
}

/// Relearns `forget` from `theta` for exactly `k` epochs with `relearn`
/// and sums the excess error over `t = 0..=K`.
pub fn rcd(
    theta: &ParamVector,
    forget: &Objective,
    phi_ref: f64,
    k: usize,
    relearn: &OptimizerConfig,
    phi_kind: PhiKind,
    rng: &mut RngStream,
) -> Result<RcdReport> {
    rcd_with(theta, forget, phi_ref, k, relearn, phi_kind, &RcdOptions::default(), rng)
}

#[allow(clippy::too_many_arguments)]
pub fn rcd_with(
    theta: &ParamVector,
    forget: &Objective,
    phi_ref: f64,
    k: usize,
    relearn: &OptimizerConfig,
    phi_kind: PhiKind,
    opts: &RcdOptions,
    rng: &mut RngStream,
) -> Result<RcdReport> {
    if !phi_ref.is_finite() {
        return Err(ForgeError::NonFinite("phi_ref".into()));
    }
    if phi_kind == PhiKind::OneMinusAccuracy && !forget.is_classification() {
        return Err(ForgeError::Unsupported("accuracy Φ on a non-classification objective".into()));
    }
    let step_mode = match relearn.kind {
        OptimizerKind::GdAdaptive => StepMode::AdaptiveInvLambdaMax,
        _ => StepMode::Fixed { eta: relearn.eta },
    };
    // Exactly K epochs: the only early stop left is an exact stationary
    // point, where gradient descent no longer moves.
    let cfg = OptimizerConfig { max_epochs: k, grad_norm_tol: 0.0, log_spectrum: false, ..relearn.clone() };
    let mut bound_rng = rng.substream(TAG_BOUND);
    let trace = train(forget, theta, &cfg, rng)?;
    let mut phi = Vec::with_capacity(k + 1);
    for rec in &trace.records {
        phi.push(match phi_kind {
            PhiKind::Loss => rec.loss,
            PhiKind::OneMinusAccuracy => 1.0 - rec.acc.expect("classification records accuracy"),
        });
    }
    let last = *phi.last().expect("epoch 0 is always recorded");
    phi.resize(k + 1, last);
    let mut errors = Vec::with_capacity(k + 1);
    for (t, p) in phi.iter().enumerate() {
        let e = p - phi_ref;
        if !e.is_finite() {
            return Err(ForgeError::NonFinite(format!("relearning error at t = {t} (phi = {p}, phi_ref = {phi_ref})")));
        }
        errors.push(if opts.clamp { e.max(0.0) } else { e });
    }
    let rcd_value = errors.iter().sum();

    let (mut bound, mut theorem1_bound, mut spectral, mut tail) = (None, None, None, None);
    if opts.attach_bound && phi_kind == PhiKind::Loss {
        let b = rcd_bound(theta, forget, phi_ref, &opts.spectral, &mut bound_rng)?;
        if let BoundOutcome::Bound(rb) = &b {
            theorem1_bound = Some(rb.bound);
            spectral = rb.spectral.clone();
            tail = Some(tail_estimate(rb.kappa, rb.gap, k));
        }
        bound = Some(b);
    }
    Ok(RcdReport {
        k,
        phi_kind,
        step_mode,
        label: relearn_label(relearn, forget.num_examples()).into(),
        phi_ref,
        phi,
        errors,
        rcd_value,
        clamped: opts.clamp,
        theorem1_bound,
        bound,
        spectral,
        tail_estimate: tail,
    })
}

/// RCD of a checkpoint against a dataset's forget set.
pub fn rcd_checkpoint(
    ckpt: &Checkpoint,
    data: &SplitDataset,
    phi_ref: f64,
    k: usize,
    relearn: &OptimizerConfig,
    phi_kind: PhiKind,
    rng: &mut RngStream,
) -> Result<RcdReport> {
    data.check_spec(&ckpt.spec)?;
    let forget = data.objective(&ckpt.spec, Part::Forget)?;
    rcd(&ckpt.theta, &forget, phi_ref, k, relearn, phi_kind, rng)
}

/// Outcome of the loss-threshold membership attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    /// Examples with loss `≤ threshold` are called members.
    pub threshold: f64,
    pub balanced_accuracy: f64,
    /// Fraction of forget examples called members.
    pub member_rate: f64,
}

/// Candidate thresholds: `−∞`, midpoints of consecutive distinct pooled
/// losses, `+∞`.
pub fn mia_candidates(members: &[f64], non_members: &[f64]) -> Vec<f64> {
    let mut pooled: Vec<f64> = members.iter().chain(non_members).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let mut c = Vec::with_capacity(pooled.len() + 1);
    c.push(f64::NEG_INFINITY);
    c.extend(pooled.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    c.push(f64::INFINITY);
    c
}

/// Chooses the threshold maximising balanced accuracy between members
/// (retain) and non-members (test), the smallest on ties, then scores the
/// forget set. Balanced accuracy is compared exactly through the integer
/// `tp·n_test + tn·n_retain`.
pub fn mia_attack(retain: &[f64], test: &[f64], forget: &[f64]) -> Result<MiaResult> {
    if retain.is_empty() || test.is_empty() || forget.is_empty() {
        return Err(ForgeError::EmptyData("membership attack needs retain, test and forget losses".into()));
    }
    if ![retain, test, forget].iter().all(|s| s.iter().all(|x| x.is_finite())) {
        return Err(ForgeError::NonFinite("membership losses".into()));
    }
    let (nr, nt) = (retain.len() as u128, test.len() as u128);
    let mut pooled: Vec<(f64, bool)> = retain.iter().map(|&l| (l, true)).chain(test.iter().map(|&l| (l, false))).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sweep: at τ = −∞ nobody is a member (tp = 0, tn = nt).
    let (mut tp, mut tn) = (0u128, nt);
    let mut best = (tp * nt + tn * nr, f64::NEG_INFINITY);
    let mut i = 0;
    while i < pooled.len() {
        let v = pooled[i].0;
        while i < pooled.len() && pooled[i].0 == v {
            if pooled[i].1 {
                tp += 1;
            } else {
                tn -= 1;
            }
            i += 1;
        }
        let tau = if i < pooled.len() { 0.5 * (v + pooled[i].0) } else { f64::INFINITY };
        let score = tp * nt + tn * nr;
        if score > best.0 {
            best = (score, tau);
        }
    }
    let tau = best.1;
    let balanced_accuracy = best.0 as f64 / (2 * nr * nt) as f64;
    let member_rate = forget.iter().filter(|&&l| l <= tau).count() as f64 / forget.len() as f64;
    Ok(MiaResult { threshold: tau, balanced_accuracy, member_rate })
}

/// Forget-set member rate under the loss-threshold attack calibrated on
/// retain (members) against test (non-members).
pub fn mia_score(theta: &ParamVector, retain: &Objective, test: &Objective, forget: &Objective) -> Result<MiaResult> {
    let losses = |o: &Objective| -> Result<Vec<f64>> {
        if o.num_examples() == 0 {
            return Err(ForgeError::EmptyData("membership attack on an empty view".into()));
        }
        o.per_example_losses(theta)
    };
    mia_attack(&losses(retain)?, &losses(test)?, &losses(forget)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricGap {
    pub metric: String,
    pub value: f64,
    pub reference: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_mode: SplitMode,
    pub retain_acc: f64,
    pub forget_acc: f64,
    pub test_acc: f64,
    /// Class-wise splits only.
    pub test_retain_acc: Option<f64>,
    pub test_forget_acc: Option<f64>,
    pub mia: f64,
    pub mia_threshold: f64,
    pub gaps: Vec<MetricGap>,
    pub avg_gap: Option<f64>,
}

impl EvalReport {
    /// The metrics that enter the average gap, in a fixed order.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        let mut m = vec![("retain_acc", self.retain_acc), ("forget_acc", self.forget_acc), ("test_acc", self.test_acc)];
        if let Some(v) = self.test_retain_acc {
            m.push(("test_retain_acc", v));
        }
        if let Some(v) = self.test_forget_acc {
            m.push(("test_forget_acc", v));
        }
        m.push(("mia", self.mia));
        m
    }

    /// Fills per-metric gaps and their mean against `reference`.
    pub fn with_reference(mut self, reference: &EvalReport) -> Result<Self> {
        let ours = self.metrics();
        let theirs = reference.metrics();
        if ours.len() != theirs.len() || ours.iter().zip(&theirs).any(|(a, b)| a.0 != b.0) {
            return Err(ForgeError::InvalidArgument("reports cover different metrics (mixed split modes)".into()));
        }
        self.gaps = ours
            .iter()
            .zip(&theirs)
            .map(|(a, b)| MetricGap { metric: a.0.into(), value: a.1, reference: b.1, gap: (a.1 - b.1).abs() })
            .collect();
        self.avg_gap = Some(avg_gap(&self.gaps.iter().map(|g| g.gap).collect::<Vec<_>>()));
        Ok(self)
    }
}

/// Arithmetic mean of absolute gaps.
pub fn avg_gap(gaps: &[f64]) -> f64 {
    if gaps.is_empty() {
        return 0.0;
    }
    gaps.iter().map(|g| g.abs()).sum::<f64>() / gaps.len() as f64
}

/// Accuracies per split and the membership attack for `theta`.
pub fn eval_theta(theta: &ParamVector, spec: &ModelSpec, data: &SplitDataset) -> Result<EvalReport> {
    data.check_spec(spec)?;
    if !spec.num_classes().is_some() {
        return Err(ForgeError::Unsupported("evaluation needs a classification model".into()));
    }
    let obj = |p: Part| data.objective(spec, p);
    let (retain, forget, test) = (obj(Part::Retain)?, obj(Part::Forget)?, obj(Part::Test)?);
    let classwise = data.split_mode() == SplitMode::Classwise;
    let opt_acc = |p: Part| -> Result<Option<f64>> {
        if classwise && !data.indices(p).is_empty() {
            Ok(Some(obj(p)?.accuracy(theta)?))
        } else {
            Ok(None)
        }
    };
    let mia = mia_score(theta, &retain, &test, &forget)?;
    Ok(EvalReport {
        split_mode: data.split_mode(),
        retain_acc: retain.accuracy(theta)?,
        forget_acc: forget.accuracy(theta)?,
        test_acc: test.accuracy(theta)?,
        test_retain_acc: opt_acc(Part::TestRetain)?,
        test_forget_acc: opt_acc(Part::TestForget)?,
        mia: mia.member_rate,
        mia_threshold: mia.threshold,
        gaps: Vec::new(),
        avg_gap: None,
    })
}

pub fn eval_report(ckpt: &Checkpoint, data: &SplitDataset, reference: Option<&EvalReport>) -> Result<EvalReport> {
    let r = eval_theta(&ckpt.theta, &ckpt.spec, data)?;
    match reference {
        Some(reference) => r.with_reference(reference),
        None => Ok(r),
    }
}
