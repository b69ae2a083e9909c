//! Extreme Hessian eigenvalues by power iteration on Hessian-vector products.
//!
//! `λ₁` comes from the dominant eigenpair; `λ_d` from the dominant eigenpair
//! of the shifted operator `λ₁·I − H`, so no linear solves are needed. For
//! small parameter counts the Hessian can optionally be materialised first
//! (`d` HVPs) to make repeated iterations cheap.

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::models::Objective;
use crate::numcore::{all_finite, dot, norm, ParamVector, RngStream};

/// Smallest `λ_d` for which a condition number is reported.
pub const KAPPA_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    /// Relative residual target: stop once `‖Hv − λv‖ ≤ tol·|λ|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Materialise the Hessian when `d` is at most this.
    #[serde(default)]
    pub dense_max_dim: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 20_000, dense_max_dim: 0 }
    }
}

impl SpectralConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(ForgeError::InvalidArgument("spectral tol must be > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }
}

/// Result of one power iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerDiagnostics {
    pub iterations_used: usize,
    /// `‖Av − λv‖` for the returned unit vector `v`.
    pub residual: f64,
    pub converged: bool,
    pub eigenvector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub kappa: Option<f64>,
    pub iterations_used: usize,
    /// Worst residual of the two eigenpairs.
    pub residual: f64,
    pub psd_flag: bool,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    Finite(f64),
    Undefined(String),
}

impl Conditioning {
    pub fn value(&self) -> Option<f64> {
        match self {
            Conditioning::Finite(k) => Some(*k),
            Conditioning::Undefined(_) => None,
        }
    }
}

/// `λ₁/λ_d`, or the reason it is undefined.
pub fn condition_number(est: &SpectralEstimate) -> Conditioning {
    if !est.psd_flag {
        Conditioning::Undefined("non-PSD Hessian; bound not applicable".into())
    } else if est.lambda_min <= KAPPA_FLOOR {
        Conditioning::Undefined(format!("lambda_min {:e} below floor {KAPPA_FLOOR:e}", est.lambda_min))
    } else {
        Conditioning::Finite(est.lambda_max / est.lambda_min)
    }
}

/// Power iteration for the eigenvalue of largest magnitude of a symmetric
/// operator. Returns the Rayleigh quotient of the final unit vector.
pub fn power_iteration<F>(d: usize, mut apply: F, tol: f64, max_iter: usize, rng: &mut RngStream) -> Result<(f64, PowerDiagnostics)>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    normalize(&mut v);
    let mut w = vec![0.0; d];
    for it in 1..=max_iter {
        apply(&v, &mut w)?;
        if !all_finite(&w) {
            return Err(ForgeError::NonFinite("operator product during power iteration".into()));
        }
        let wn = norm(&w);
        if wn == 0.0 {
            // Null operator: every vector is an eigenvector for 0.
            return Ok((0.0, PowerDiagnostics { iterations_used: it, residual: 0.0, converged: true, eigenvector: v }));
        }
        let lambda = dot(&v, &w);
        let residual = w.iter().zip(&v).map(|(wi, vi)| (wi - lambda * vi).powi(2)).sum::<f64>().sqrt();
        if residual <= tol * lambda.abs() {
            return Ok((lambda, PowerDiagnostics { iterations_used: it, residual, converged: true, eigenvector: v }));
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
    }
    // Report the residual of the vector actually returned.
    apply(&v, &mut w)?;
    let lambda = dot(&v, &w);
    let residual = w.iter().zip(&v).map(|(wi, vi)| (wi - lambda * vi).powi(2)).sum::<f64>().sqrt();
    Ok((lambda, PowerDiagnostics { iterations_used: max_iter, residual, converged: false, eigenvector: v }))
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
}

/// The Hessian at `θ` as a linear operator, dense when small enough.
struct HessianOp<'a> {
    obj: &'a Objective,
    theta: &'a [f64],
    dense: Option<Vec<f64>>,
}

impl<'a> HessianOp<'a> {
    fn new(obj: &'a Objective, theta: &'a ParamVector, dense_max_dim: usize) -> Result<Self> {
        let d = theta.dim();
        let mut op = HessianOp { obj, theta: theta.as_slice(), dense: None };
        if d <= dense_max_dim {
            let mut h = vec![0.0; d * d];
            let mut e = vec![0.0; d];
            for j in 0..d {
                e[j] = 1.0;
                let col = obj.hvp_slice(op.theta, &e)?;
                e[j] = 0.0;
                for i in 0..d {
                    h[i * d + j] = col[i];
                }
            }
            // Symmetrise away rounding asymmetry.
            for i in 0..d {
                for j in 0..i {
                    let m = 0.5 * (h[i * d + j] + h[j * d + i]);
                    h[i * d + j] = m;
                    h[j * d + i] = m;
                }
            }
            op.dense = Some(h);
        }
        Ok(op)
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.dense {
            Some(h) => {
                let d = v.len();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = dot(&h[i * d..(i + 1) * d], v);
                }
            }
            None => out.copy_from_slice(&self.obj.hvp_slice(self.theta, v)?),
        }
        Ok(())
    }
}

fn check_theta(obj: &Objective, theta: &ParamVector) -> Result<()> {
    crate::error::check_dims(obj.dim(), theta.dim())
}

/// Dominant (largest-magnitude) Hessian eigenvalue.
pub fn dominant_eigenvalue(
    obj: &Objective,
    theta: &ParamVector,
    tol: f64,
    max_iter: usize,
    rng: &mut RngStream,
) -> Result<(f64, PowerDiagnostics)> {
    let cfg = SpectralConfig { tol, max_iter, dense_max_dim: 0 };
    cfg.validate()?;
    check_theta(obj, theta)?;
    let op = HessianOp::new(obj, theta, 0)?;
    power_iteration(theta.dim(), |v, out| op.apply(v, out), tol, max_iter, rng)
}

/// Largest Hessian eigenvalue `λ₁`. Coincides with the dominant eigenvalue
/// unless that is negative, in which case `λ₁` is recovered from the shifted
/// operator `H − λ_dom·I`.
pub fn lambda_max(
    obj: &Objective,
    theta: &ParamVector,
    tol: f64,
    max_iter: usize,
    rng: &mut RngStream,
) -> Result<(f64, PowerDiagnostics)> {
    lambda_max_with(obj, theta, &SpectralConfig { tol, max_iter, dense_max_dim: 0 }, rng)
}

/// Smallest Hessian eigenvalue `λ_d` given `λ₁`, with the PSD flag
/// `λ_d > −tol·max(|λ₁|, 1)`.
pub fn lambda_min(
    obj: &Objective,
    theta: &ParamVector,
    lambda_max: f64,
    tol: f64,
    max_iter: usize,
    rng: &mut RngStream,
) -> Result<(f64, bool, PowerDiagnostics)> {
    let cfg = SpectralConfig { tol, max_iter, dense_max_dim: 0 };
    cfg.validate()?;
    check_theta(obj, theta)?;
    let op = HessianOp::new(obj, theta, 0)?;
    lambda_min_op(&op, theta.dim(), lambda_max, &cfg, rng)
}

fn lambda_max_op(op: &HessianOp<'_>, d: usize, cfg: &SpectralConfig, rng: &mut RngStream) -> Result<(f64, PowerDiagnostics)> {
    let (dom, diag) = power_iteration(d, |v, out| op.apply(v, out), cfg.tol, cfg.max_iter, rng)?;
    if dom >= 0.0 {
        return Ok((dom, diag));
    }
    let shift = dom;
    let (top, mut d2) = power_iteration(
        d,
        |v, out| {
            op.apply(v, out)?;
            out.iter_mut().zip(v).for_each(|(o, vi)| *o -= shift * vi);
            Ok(())
        },
        cfg.tol,
        cfg.max_iter,
        rng,
    )?;
    d2.iterations_used += diag.iterations_used;
    d2.converged &= diag.converged;
    Ok((shift + top, d2))
}

fn lambda_min_op(
    op: &HessianOp<'_>,
    d: usize,
    lambda_max: f64,
    cfg: &SpectralConfig,
    rng: &mut RngStream,
) -> Result<(f64, bool, PowerDiagnostics)> {
    let (top, diag) = power_iteration(
        d,
        |v, out| {
            op.apply(v, out)?;
            out.iter_mut().zip(v).for_each(|(o, vi)| *o = lambda_max * vi - *o);
            Ok(())
        },
        cfg.tol,
        cfg.max_iter,
        rng,
    )?;
    // The shifted operator is PSD, so its dominant eigenvalue is its largest.
    let lmin = lambda_max - top.max(0.0);
    let psd = lmin > -cfg.tol * lambda_max.abs().max(1.0);
    Ok((lmin, psd, diag))
}

/// `λ₁` with an explicit configuration.
pub fn lambda_max_with(
    obj: &Objective,
    theta: &ParamVector,
    cfg: &SpectralConfig,
    rng: &mut RngStream,
) -> Result<(f64, PowerDiagnostics)> {
    cfg.validate()?;
    check_theta(obj, theta)?;
    let op = HessianOp::new(obj, theta, cfg.dense_max_dim)?;
    lambda_max_op(&op, theta.dim(), cfg, rng)
}

/// Both extreme eigenvalues, the PSD flag and `κ` where defined.
pub fn estimate(obj: &Objective, theta: &ParamVector, cfg: &SpectralConfig, rng: &mut RngStream) -> Result<SpectralEstimate> {
    cfg.validate()?;
    check_theta(obj, theta)?;
    let op = HessianOp::new(obj, theta, cfg.dense_max_dim)?;
    let (lmax, dmax) = lambda_max_op(&op, theta.dim(), cfg, rng)?;
    let (lmin, psd, dmin) = lambda_min_op(&op, theta.dim(), lmax, cfg, rng)?;
    let mut est = SpectralEstimate {
        lambda_max: lmax,
        lambda_min: lmin.min(lmax),
        kappa: None,
        iterations_used: dmax.iterations_used + dmin.iterations_used,
        residual: dmax.residual.max(dmin.residual),
        psd_flag: psd,
        converged: dmax.converged && dmin.converged,
    };
    est.kappa = condition_number(&est).value();
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_quadratic, Activation, DataView, ModelSpec, Targets};
    use crate::numcore::derive_stream;

    fn quad(spectrum: &[f64]) -> Objective {
        make_quadratic(spectrum.to_vec(), ParamVector::zeros(spectrum.len()).unwrap(), 0.0).unwrap()
    }

    fn at(d: usize) -> ParamVector {
        ParamVector::zeros(d).unwrap()
    }

    #[test]
    fn quadratic_extremes() {
        let q = quad(&[4.0, 1.0]);
        let mut rng = derive_stream(7, 7);
        let (lmax, d) = lambda_max(&q, &at(2), 1e-12, 10_000, &mut rng).unwrap();
        assert!((lmax - 4.0).abs() < 1e-8, "{lmax}");
        assert!(d.converged);
        let (lmin, psd, _) = lambda_min(&q, &at(2), lmax, 1e-12, 10_000, &mut rng).unwrap();
        assert!((lmin - 1.0).abs() < 1e-6, "{lmin}");
        assert!(psd);
    }

    #[test]
    fn isotropic_converges_in_one_iteration() {
        let q = quad(&[1.0, 1.0]);
        let (l, d) = lambda_max(&q, &at(2), 1e-12, 100, &mut derive_stream(1, 7)).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        assert_eq!(d.iterations_used, 1);
    }

    #[test]
    fn near_degenerate_top_pair() {
        let q = quad(&[4.0, 3.999, 1.0]);
        let (l, d) = lambda_max(&q, &at(3), 1e-10, 100_000, &mut derive_stream(3, 7)).unwrap();
        assert!((l - 4.0).abs() < 1e-4, "{l}");
        // The λ₂ component decays like (λ₂/λ₁)^k, so many iterations are needed.
        assert!(d.iterations_used > 1000, "{}", d.iterations_used);
    }

    #[test]
    fn null_shift_on_repeated_spectrum() {
        let q = quad(&[4.0, 4.0]);
        let mut rng = derive_stream(5, 7);
        let est = estimate(&q, &at(2), &SpectralConfig::default(), &mut rng).unwrap();
        assert!((est.lambda_max - 4.0).abs() < 1e-12);
        assert!((est.lambda_min - 4.0).abs() < 1e-12);
        assert_eq!(est.kappa, Some(est.lambda_max / est.lambda_min));
        let (_, _, d) = lambda_min(&q, &at(2), 4.0, 1e-10, 100, &mut rng).unwrap();
        assert_eq!(d.residual, 0.0);
    }

    #[test]
    fn residual_is_recomputable() {
        let q = quad(&[5.0, 3.0, 2.0, 0.5]);
        let (l, d) = lambda_max(&q, &at(4), 1e-6, 50, &mut derive_stream(9, 7)).unwrap();
        let hv = q.hvp(&at(4), &ParamVector::new(d.eigenvector.clone()).unwrap()).unwrap();
        let r: f64 = hv.as_slice().iter().zip(&d.eigenvector).map(|(h, v)| (h - l * v).powi(2)).sum::<f64>().sqrt();
        let vn = norm(&d.eigenvector);
        assert!((vn - 1.0).abs() < 1e-12);
        assert!((r / vn - d.residual).abs() <= 1e-12 * (1.0 + r), "{r} vs {}", d.residual);
    }

    #[test]
    fn condition_number_cases() {
        let mk = |lmax, lmin, psd| SpectralEstimate {
            lambda_max: lmax,
            lambda_min: lmin,
            kappa: None,
            iterations_used: 0,
            residual: 0.0,
            psd_flag: psd,
            converged: true,
        };
        assert_eq!(condition_number(&mk(4.0, 1.0, true)), Conditioning::Finite(4.0));
        assert!((condition_number(&mk(10.0, 0.1, true)).value().unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(
            condition_number(&mk(3.0, -0.5, false)),
            Conditioning::Undefined("non-PSD Hessian; bound not applicable".into())
        );
        assert!(condition_number(&mk(3.0, 0.0, true)).value().is_none());
    }

    #[test]
    fn scaling_scales_eigenvalues() {
        let q = quad(&[9.0, 4.0, 2.0, 1.5]);
        let cfg = SpectralConfig { tol: 1e-12, max_iter: 50_000, dense_max_dim: 0 };
        let base = estimate(&q, &at(4), &cfg, &mut derive_stream(11, 7)).unwrap();
        for s in [0.01, 3.0, 250.0] {
            let e = estimate(&q.scaled(s).unwrap(), &at(4), &cfg, &mut derive_stream(11, 7)).unwrap();
            assert!((e.lambda_max / (s * base.lambda_max) - 1.0).abs() < 1e-8);
            assert!((e.lambda_min / (s * base.lambda_min) - 1.0).abs() < 1e-8);
            assert!((e.kappa.unwrap() / base.kappa.unwrap() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn dense_and_matrix_free_agree() {
        let mut rng = derive_stream(2, 0);
        let inputs: Vec<f64> = (0..40 * 2).map(|_| rng.normal()).collect();
        let labels = (0..40).map(|_| rng.below(3)).collect();
        let data = DataView::new(inputs, 2, Targets::Classes { labels, num_classes: 3 }).unwrap();
        let obj = Objective::new(ModelSpec::logistic(2, 3, 0.01).unwrap(), data).unwrap();
        let theta = ParamVector::new((0..9).map(|_| 0.3 * rng.normal()).collect()).unwrap();
        let free = SpectralConfig { tol: 1e-11, max_iter: 100_000, dense_max_dim: 0 };
        let dense = SpectralConfig { dense_max_dim: 64, ..free };
        let a = estimate(&obj, &theta, &free, &mut derive_stream(4, 7)).unwrap();
        let b = estimate(&obj, &theta, &dense, &mut derive_stream(4, 7)).unwrap();
        assert!((a.lambda_max - b.lambda_max).abs() < 1e-9 * a.lambda_max);
        assert!((a.lambda_min - b.lambda_min).abs() < 1e-7 * a.lambda_max);
        // Weight decay makes softmax regression strongly convex.
        assert!(a.psd_flag && a.lambda_min >= 0.01 - 1e-8);
    }

    /// Finite-difference Hessian of a tiny tanh MLP, diagonalised
    /// independently, against the power-iteration extremes.
    #[test]
    fn mlp_matches_finite_difference_hessian() {
        let mut rng = derive_stream(21, 0);
        // 1 input, 1 hidden unit, regression: W1, b1, W2, b2.
        let spec = ModelSpec::mlp(1, &[1], 0, Activation::Tanh, 0.0).unwrap();
        let xs: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let ys: Vec<f64> = (0..6).map(|_| 2.0 * rng.normal()).collect();
        let obj = Objective::new(spec, DataView::new(xs, 1, Targets::Real(ys)).unwrap()).unwrap();
        let mut found_indefinite = false;
        for trial in 0..8 {
            let theta = ParamVector::new((0..4).map(|_| 1.5 * rng.normal()).collect()).unwrap();
            let h = 1e-5;
            let mut m = nalgebra::DMatrix::<f64>::zeros(4, 4);
            for j in 0..4 {
                let mut p = theta.as_slice().to_vec();
                let mut q = p.clone();
                p[j] += h;
                q[j] -= h;
                let gp = obj.gradient(&ParamVector::new(p).unwrap()).unwrap();
                let gq = obj.gradient(&ParamVector::new(q).unwrap()).unwrap();
                for i in 0..4 {
                    m[(i, j)] = (gp.as_slice()[i] - gq.as_slice()[i]) / (2.0 * h);
                }
            }
            let m = 0.5 * (&m + m.transpose());
            let eig = m.symmetric_eigenvalues();
            let (omax, omin) = (eig.max(), eig.min());
            let cfg = SpectralConfig { tol: 1e-12, max_iter: 200_000, dense_max_dim: 0 };
            let est = estimate(&obj, &theta, &cfg, &mut derive_stream(trial, 7)).unwrap();
            let scale = omax.abs().max(omin.abs()).max(1.0);
            assert!((est.lambda_max - omax).abs() < 1e-5 * scale, "{} vs {omax}", est.lambda_max);
            assert!((est.lambda_min - omin).abs() < 1e-5 * scale, "{} vs {omin}", est.lambda_min);
            if omin < -1e-3 * scale {
                found_indefinite = true;
                assert!(!est.psd_flag);
                assert!(est.kappa.is_none());
            }
        }
        assert!(found_indefinite, "expected at least one indefinite Hessian");
    }

    #[test]
    fn rejects_bad_config() {
        let q = quad(&[2.0, 1.0]);
        assert!(lambda_max(&q, &at(2), 0.0, 10, &mut derive_stream(0, 0)).is_err());
        assert!(lambda_max(&q, &at(2), 1e-6, 0, &mut derive_stream(0, 0)).is_err());
        assert!(lambda_max(&q, &at(3), 1e-6, 10, &mut derive_stream(0, 0)).is_err());
    }
}
