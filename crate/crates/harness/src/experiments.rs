//! Desk-scale experiments: condition-number trends on softmax regression
//! and the method-ordering comparison on blobs.

use std::collections::BTreeMap;

use forge_core::data::{gen_blobs, split_random, Part, SplitDataset};
use forge_core::metrics::{eval_theta, rcd, EvalReport, PhiKind};
use forge_core::models::{Activation, ModelSpec, NoiseScope, Objective};
use forge_core::numcore::streams;
use forge_core::spectral::{self, SpectralConfig};
use forge_core::training::{fresh_init, forget_oracle, retrain_oracle, train_observed, train_original, BatchSize, OptimizerConfig};
use forge_core::unlearning::{unlearn, Irp, Method, UnlearnConfig};
use forge_core::{derive_stream, ParamVector, Result};
use serde::{Deserialize, Serialize};

use crate::stats::{sign_test, spearman, spearman_test, Direction, SignTest, SpearmanTest};

/// Runs `f` over `items` on scoped threads, keeping the input order.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(workers.max(1)).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendConfig {
    pub seeds: u64,
    pub n_per_class: usize,
    pub classes: usize,
    pub input_dim: usize,
    pub separation: f64,
    pub noise_sd: f64,
    pub weight_decay: f64,
    pub train_eta: f64,
    pub train_epochs: usize,
    pub record_every: usize,
    pub irp_alpha: f64,
    pub irp_steps: usize,
    pub irp_record_every: usize,
    pub significance: f64,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            seeds: 100,
            n_per_class: 100,
            classes: 3,
            input_dim: 2,
            separation: 3.0,
            noise_sd: 1.0,
            weight_decay: 1e-2,
            train_eta: 0.5,
            train_epochs: 200,
            record_every: 10,
            irp_alpha: 0.9,
            irp_steps: 40,
            irp_record_every: 2,
            significance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub times: Vec<usize>,
    pub mean_kappa: Vec<f64>,
    pub direction: Direction,
    /// Rank correlation of the seed-averaged curve with time.
    pub mean_curve: SpearmanTest,
    /// Per-seed Spearman signs.
    pub per_seed: SignTest,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub config: TrendConfig,
    pub training: TrendSeries,
    pub irp: TrendSeries,
    /// Largest `κ(θ)/(β/μ)` over seeds and recorded states, with `β/μ` the
    /// global condition surrogate of each seed's objective. Must not exceed 1.
    pub max_kappa_over_surrogate: f64,
    pub surrogate_holds: bool,
    pub passed: bool,
}

fn kappa_at(obj: &Objective, theta: &ParamVector, rng: &mut forge_core::RngStream) -> Result<f64> {
    let cfg = SpectralConfig { tol: 1e-10, max_iter: 100_000, dense_max_dim: 64 };
    let est = spectral::estimate(obj, theta, &cfg, rng)?;
    spectral::condition_number(&est)
        .value()
        .ok_or_else(|| forge_core::ForgeError::Unsupported("condition number undefined on a convex objective".into()))
}

/// Global `β/μ` of softmax regression with weight decay `wd`: the
/// per-example Hessian is `(diag p − ppᵀ) ⊗ x̃x̃ᵀ` with `‖diag p − ppᵀ‖ ≤ ½`,
/// so `β ≤ ½·λ_max(mean x̃x̃ᵀ) + wd` and `μ ≥ wd`.
fn softmax_surrogate(data: &SplitDataset, wd: f64, rng: &mut forge_core::RngStream) -> Result<f64> {
    let idx = data.indices(Part::Train);
    let p = data.input_dim();
    let q = p + 1;
    let mut m = vec![0.0; q * q];
    for &i in &idx {
        let mut x = data.features()[i * p..(i + 1) * p].to_vec();
        x.push(1.0);
        for a in 0..q {
            for b in 0..q {
                m[a * q + b] += x[a] * x[b] / idx.len() as f64;
            }
        }
    }
    let (l, _) = spectral::power_iteration(
        q,
        |v, out| {
            for a in 0..q {
                out[a] = (0..q).map(|b| m[a * q + b] * v[b]).sum();
            }
            Ok(())
        },
        1e-12,
        100_000,
        rng,
    )?;
    Ok((0.5 * l + wd) / wd)
}

struct SeedTrend {
    train: Vec<f64>,
    irp: Vec<f64>,
    surrogate: f64,
}

fn trend_seed(cfg: &TrendConfig, seed: u64) -> Result<SeedTrend> {
    let data = gen_blobs(cfg.n_per_class, cfg.classes, cfg.input_dim, cfg.separation, cfg.noise_sd, seed)?;
    let spec = ModelSpec::logistic(cfg.input_dim, cfg.classes, cfg.weight_decay)?;
    let obj = data.objective(&spec, Part::Train)?;
    let mut spec_rng = derive_stream(seed, streams::SPECTRAL);
    let theta0 = fresh_init(&spec, NoiseScope::GlobalD, seed)?;
    let opt = OptimizerConfig { grad_norm_tol: 0.0, ..OptimizerConfig::gd(cfg.train_eta, cfg.train_epochs) };
    let mut train = Vec::new();
    let trace = train_observed(&obj, &theta0, &opt, &mut derive_stream(seed, streams::TRAIN), |epoch, th| {
        if epoch % cfg.record_every == 0 {
            train.push(kappa_at(&obj, th, &mut spec_rng)?);
        }
        Ok(())
    })?;
    let mut irp = vec![kappa_at(&obj, &trace.theta, &mut spec_rng)?];
    let mut proc = Irp::new(&trace.theta, cfg.irp_alpha, derive_stream(seed, streams::IRP))?;
    for step in 1..=cfg.irp_steps {
        proc.advance();
        if step % cfg.irp_record_every == 0 {
            irp.push(kappa_at(&obj, &ParamVector::new(proc.state().to_vec())?, &mut spec_rng)?);
        }
    }
    let surrogate = softmax_surrogate(&data, cfg.weight_decay, &mut spec_rng)?;
    Ok(SeedTrend { train, irp, surrogate })
}

fn series(curves: &[Vec<f64>], step: usize, direction: Direction, alpha: f64) -> TrendSeries {
    let len = curves[0].len();
    let times: Vec<usize> = (0..len).map(|i| i * step).collect();
    let t: Vec<f64> = times.iter().map(|&x| x as f64).collect();
    let mean_kappa: Vec<f64> = (0..len).map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64).collect();
    let mean_curve = spearman_test(&t, &mean_kappa, direction);
    let rhos: Vec<f64> = curves.iter().map(|c| spearman(&t, c)).collect();
    let per_seed = sign_test(&rhos, direction);
    let passed = mean_curve.p_value < alpha && per_seed.p_value < alpha;
    TrendSeries { times, mean_kappa, direction, mean_curve, per_seed, passed }
}

/// Seed-averaged condition number of softmax regression along gradient
/// descent from a fresh initialisation (expected to fall) and along IRP
/// from the trained optimum (expected to rise).
pub fn kappa_trends(cfg: &TrendConfig) -> Result<TrendReport> {
    let seeds: Vec<u64> = (0..cfg.seeds).collect();
    let runs: Vec<SeedTrend> = par_map(&seeds, |&s| trend_seed(cfg, s)).into_iter().collect::<Result<_>>()?;
    let train: Vec<Vec<f64>> = runs.iter().map(|r| r.train.clone()).collect();
    let irp: Vec<Vec<f64>> = runs.iter().map(|r| r.irp.clone()).collect();
    let training = series(&train, cfg.record_every, Direction::Decreasing, cfg.significance);
    let irp = series(&irp, cfg.irp_record_every, Direction::Increasing, cfg.significance);
    let max_kappa_over_surrogate = runs
        .iter()
        .flat_map(|r| r.train.iter().chain(&r.irp).map(move |k| k / r.surrogate))
        .fold(f64::NEG_INFINITY, f64::max);
    let surrogate_holds = max_kappa_over_surrogate <= 1.0 + 1e-9;
    let passed = training.passed && irp.passed && surrogate_holds;
    Ok(TrendReport { config: cfg.clone(), training, irp, max_kappa_over_surrogate, surrogate_holds, passed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderingConfig {
    pub seeds: u64,
    pub n_per_class: usize,
    pub classes: usize,
    pub input_dim: usize,
    pub separation: f64,
    pub noise_sd: f64,
    pub forget_fraction: f64,
    pub hidden: Vec<usize>,
    pub weight_decay: f64,
    pub train: OptimizerConfig,
    pub unlearn_eta: f64,
    pub unlearn_epochs: usize,
    pub unlearn_batch: BatchSize,
    pub noisy_alpha: f64,
    pub ga_c: f64,
    pub relearn: OptimizerConfig,
    pub rcd_k: usize,
}

impl Default for OrderingConfig {
    fn default() -> Self {
        Self {
            seeds: 5,
            n_per_class: 200,
            classes: 10,
            input_dim: 8,
            separation: 1.5,
            noise_sd: 1.0,
            forget_fraction: 0.3,
            hidden: vec![32, 32],
            weight_decay: 1e-4,
            train: OptimizerConfig::sgd(0.05, BatchSize::Size(64), 200),
            unlearn_eta: 0.05,
            unlearn_epochs: 5,
            unlearn_batch: BatchSize::Size(64),
            noisy_alpha: 0.999,
            ga_c: 0.01,
            relearn: OptimizerConfig::sgd(0.01, BatchSize::Size(64), 0),
            rcd_k: 20,
        }
    }
}

/// The methods compared, in report order.
pub const ORDERING_METHODS: [&str; 9] = ["original", "retrain", "ft", "rl", "scrub", "salun", "ieu_ga", "ieu_noisy", "ieu"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub rcd: f64,
    pub eval: EvalReport,
    pub aborted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub phi_ref: f64,
    pub methods: Vec<MethodResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub config: OrderingConfig,
    pub seeds: Vec<SeedResult>,
    pub mean_rcd: BTreeMap<String, f64>,
    pub mean_avg_gap: BTreeMap<String, f64>,
    pub retrain_gt_rl: bool,
    pub rl_gt_ft: bool,
    pub noisy_gap_le_rl: bool,
    pub passed: bool,
}

fn ordering_seed(cfg: &OrderingConfig, seed: u64) -> Result<SeedResult> {
    let full = gen_blobs(cfg.n_per_class, cfg.classes, cfg.input_dim, cfg.separation, cfg.noise_sd, seed)?;
    let data = split_random(&full, cfg.forget_fraction, seed)?;
    let spec = ModelSpec::mlp(cfg.input_dim, &cfg.hidden, cfg.classes, Activation::Relu, cfg.weight_decay)?;
    let (original, _) = train_original(&data, &spec, &cfg.train, seed)?;
    let (retrain, _) = retrain_oracle(&data, &spec, &cfg.train, seed)?;
    let (_, phi, _) = forget_oracle(&data, &spec, &cfg.train, seed)?;
    let phi_ref = phi.get(PhiKind::OneMinusAccuracy)?;
    let forget = data.objective(&spec, Part::Forget)?;

    let base = UnlearnConfig {
        eta: cfg.unlearn_eta,
        epochs: cfg.unlearn_epochs,
        batch_size: cfg.unlearn_batch,
        seed,
        ..UnlearnConfig::default()
    };
    let mut thetas: Vec<(String, ParamVector, bool)> = vec![
        ("original".into(), original.theta.clone(), false),
        ("retrain".into(), retrain.theta.clone(), false),
    ];
    let variants = [
        ("ft", UnlearnConfig { method: Method::Ft, ..base.clone() }),
        ("rl", UnlearnConfig { method: Method::Rl, ..base.clone() }),
        ("scrub", UnlearnConfig { method: Method::Scrub, ..base.clone() }),
        ("salun", UnlearnConfig { method: Method::Salun, ..base.clone() }),
        ("ieu_ga", UnlearnConfig { method: Method::Ieu, alpha: 1.0, c: cfg.ga_c, ..base.clone() }),
        ("ieu_noisy", UnlearnConfig { method: Method::Ieu, alpha: cfg.noisy_alpha, c: 0.0, ..base.clone() }),
        ("ieu", UnlearnConfig { method: Method::Ieu, alpha: cfg.noisy_alpha, c: cfg.ga_c, ..base.clone() }),
    ];
    for (name, ucfg) in variants {
        let run = unlearn(&original, &data, &ucfg)?;
        thetas.push((name.into(), run.theta, run.aborted.is_some()));
    }

    let retrain_eval = eval_theta(&retrain.theta, &spec, &data)?;
    let mut methods = Vec::new();
    for (name, theta, aborted) in thetas {
        let mut rng = derive_stream(seed, streams::RELEARN);
        let r = rcd(&theta, &forget, phi_ref, cfg.rcd_k, &cfg.relearn, PhiKind::OneMinusAccuracy, &mut rng)?;
        let eval = eval_theta(&theta, &spec, &data)?.with_reference(&retrain_eval)?;
        methods.push(MethodResult { method: name, rcd: r.rcd_value, eval, aborted });
    }
    Ok(SeedResult { seed, phi_ref, methods })
}

/// Random forgetting on blobs with every method, scored by RCD (Φ = 1 −
/// accuracy) and the average gap against retraining.
pub fn method_ordering(cfg: &OrderingConfig) -> Result<OrderingReport> {
    let seeds: Vec<u64> = (0..cfg.seeds).collect();
    let results: Vec<SeedResult> = par_map(&seeds, |&s| ordering_seed(cfg, s)).into_iter().collect::<Result<_>>()?;
    let mut mean_rcd = BTreeMap::new();
    let mut mean_avg_gap = BTreeMap::new();
    for m in ORDERING_METHODS {
        let rows: Vec<&MethodResult> = results.iter().flat_map(|s| s.methods.iter().filter(|r| r.method == m)).collect();
        let n = rows.len() as f64;
        mean_rcd.insert(m.to_string(), rows.iter().map(|r| r.rcd).sum::<f64>() / n);
        mean_avg_gap.insert(m.to_string(), rows.iter().map(|r| r.eval.avg_gap.unwrap_or(0.0)).sum::<f64>() / n);
    }
    let retrain_gt_rl = mean_rcd["retrain"] > mean_rcd["rl"];
    let rl_gt_ft = mean_rcd["rl"] > mean_rcd["ft"];
    let noisy_gap_le_rl = mean_avg_gap["ieu_noisy"] <= mean_avg_gap["rl"];
    Ok(OrderingReport {
        config: cfg.clone(),
        seeds: results,
        mean_rcd,
        mean_avg_gap,
        retrain_gt_rl,
        rl_gt_ft,
        noisy_gap_le_rl,
        passed: retrain_gt_rl && rl_gt_ft && noisy_gap_le_rl,
    })
}
