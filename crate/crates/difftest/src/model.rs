//! Parametric diffusion models dX_t = b(X_t, beta) dt + a(X_t, alpha) dW_t,
//! parameter boxes, null hypotheses, and derivative evaluation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg;

/// Pointwise floor on the smallest eigenvalue of S(x, alpha). Assumption A3
/// (uniform ellipticity) cannot be checked analytically, so it is policed at
/// every evaluation point.
pub const PD_FLOOR: f64 = 1e-12;

type VecFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
type DensityFn = Arc<dyn Fn(&[f64], &Theta) -> f64 + Send + Sync>;
type SupportFn = Arc<dyn Fn(&Theta) -> (f64, f64) + Send + Sync>;

/// Invariant density of the diffusion plus a finite quadrature window that
/// carries essentially all of its mass. Only used by the Monte Carlo
/// population-quantity oracles (1-dimensional state only).
#[derive(Clone)]
pub struct InvariantDensity {
    pub density: DensityFn,
    pub support: SupportFn,
}

/// A parametric diffusion model. All evaluation closures write into caller
/// buffers so the quasi-likelihood loops stay allocation-free.
///
/// Buffer layouts (row-major):
/// - drift: out[d]
/// - diffusion: out[d*r]
/// - drift_jacobian_beta: out[d*p2], column j = d(b)/d(beta_j)
/// - drift_hessian_beta: out[p2*p2*d], block (j,k) = d^2(b)/d(beta_j)d(beta_k)
/// - s_grad_alpha: out[p1*d*d], block i = d(S)/d(alpha_i)
/// - s_hess_alpha: out[p1*p1*d*d], block (i,j) = d^2(S)/d(alpha_i)d(alpha_j)
#[derive(Clone)]
pub struct DiffusionModel {
    pub name: String,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub alpha_dim: usize,
    pub beta_dim: usize,
    pub drift: VecFn,
    pub diffusion: VecFn,
    pub drift_jacobian_beta: Option<VecFn>,
    pub drift_hessian_beta: Option<VecFn>,
    pub s_grad_alpha: Option<VecFn>,
    pub s_hess_alpha: Option<VecFn>,
    pub invariant: Option<InvariantDensity>,
}

impl DiffusionModel {
    pub fn drift_into(&self, x: &[f64], beta: &[f64], out: &mut [f64]) {
        (self.drift)(x, beta, out);
    }

    pub fn diffusion_into(&self, x: &[f64], alpha: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, alpha, out);
    }

    /// S(x, alpha) = a a^T, written into `out` (d x d row-major).
    /// `a_buf` must hold d*r scratch.
    pub fn s_into(&self, x: &[f64], alpha: &[f64], a_buf: &mut [f64], out: &mut [f64]) {
        let (d, r) = (self.state_dim, self.noise_dim);
        (self.diffusion)(x, alpha, a_buf);
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for k in 0..r {
                    s += a_buf[i * r + k] * a_buf[j * r + k];
                }
                out[i * d + j] = s;
                out[j * d + i] = s;
            }
        }
    }

    /// d(S)/d(alpha) blocks, analytic when supplied, central differences
    /// otherwise. `out` holds p1 blocks of d*d.
    pub fn s_grad_into(&self, x: &[f64], alpha: &[f64], out: &mut [f64]) -> Result<()> {
        if let Some(g) = &self.s_grad_alpha {
            g(x, alpha, out);
            return Ok(());
        }
        let d = self.state_dim;
        let dd = d * d;
        let mut a_buf = vec![0.0; d * self.noise_dim];
        let mut s_buf = vec![0.0; dd];
        for e in 0..dd {
            let grad = fd_gradient(
                &mut |al: &[f64]| {
                    self.s_into(x, al, &mut a_buf, &mut s_buf);
                    s_buf[e]
                },
                alpha,
            )?;
            for (i, g) in grad.iter().enumerate() {
                out[i * dd + e] = *g;
            }
        }
        Ok(())
    }
}

/// Compact box parameter space Theta_alpha x Theta_beta.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpace {
    pub alpha_lower: Vec<f64>,
    pub alpha_upper: Vec<f64>,
    pub beta_lower: Vec<f64>,
    pub beta_upper: Vec<f64>,
}

impl ParameterSpace {
    pub fn validate(&self, model: &DiffusionModel) -> Result<()> {
        if self.alpha_lower.len() != model.alpha_dim || self.alpha_upper.len() != model.alpha_dim {
            return Err(Error::invalid("parameter space", "alpha bound length mismatch"));
        }
        if self.beta_lower.len() != model.beta_dim || self.beta_upper.len() != model.beta_dim {
            return Err(Error::invalid("parameter space", "beta bound length mismatch"));
        }
        let ok = |lo: &[f64], hi: &[f64]| {
            lo.iter()
                .zip(hi)
                .all(|(l, u)| l.is_finite() && u.is_finite() && l < u)
        };
        if !ok(&self.alpha_lower, &self.alpha_upper) || !ok(&self.beta_lower, &self.beta_upper) {
            return Err(Error::invalid(
                "parameter space",
                "bounds must be finite with lower < upper componentwise",
            ));
        }
        Ok(())
    }

    pub fn contains(&self, theta: &Theta) -> bool {
        let inside = |v: &[f64], lo: &[f64], hi: &[f64]| {
            v.iter().zip(lo.iter().zip(hi)).all(|(x, (l, u))| *x >= *l && *x <= *u)
        };
        inside(&theta.alpha, &self.alpha_lower, &self.alpha_upper)
            && inside(&theta.beta, &self.beta_lower, &self.beta_upper)
    }
}

/// Null hypothesis: a set of parameter components pinned to fixed values.
/// The common alpha_1 = ... = alpha_{r1} = 0 form is the special case
/// value = 0; the simulation studies pin nonzero values (alpha = 1.0 etc.).
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hypothesis {
    #[serde(default)]
    pub alpha_fixed: Vec<(usize, f64)>,
    #[serde(default)]
    pub beta_fixed: Vec<(usize, f64)>,
}

impl Hypothesis {
    pub fn validate(&self, model: &DiffusionModel, space: &ParameterSpace) -> Result<()> {
        check_fixed(&self.alpha_fixed, model.alpha_dim, &space.alpha_lower, &space.alpha_upper)?;
        check_fixed(&self.beta_fixed, model.beta_dim, &space.beta_lower, &space.beta_upper)
    }

    /// r1: number of pinned alpha components.
    pub fn r1(&self) -> usize {
        self.alpha_fixed.len()
    }

    /// r2: number of pinned beta components.
    pub fn r2(&self) -> usize {
        self.beta_fixed.len()
    }
}

fn check_fixed(fixed: &[(usize, f64)], dim: usize, lo: &[f64], hi: &[f64]) -> Result<()> {
    let mut seen = vec![false; dim];
    for &(idx, val) in fixed {
        if idx >= dim {
            return Err(Error::invalid("hypothesis", format!("index {idx} out of range")));
        }
        if seen[idx] {
            return Err(Error::invalid("hypothesis", format!("index {idx} fixed twice")));
        }
        seen[idx] = true;
        if val < lo[idx] || val > hi[idx] {
            return Err(Error::invalid(
                "hypothesis",
                format!("fixed value {val} outside box [{}, {}]", lo[idx], hi[idx]),
            ));
        }
    }
    Ok(())
}

/// A parameter point theta = (alpha, beta).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Theta {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        Theta { alpha, beta }
    }
}

/// S(x, alpha) with the A3 positive-definiteness check.
pub fn eval_s(model: &DiffusionModel, x: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
    let d = model.state_dim;
    let mut a_buf = vec![0.0; d * model.noise_dim];
    let mut s = vec![0.0; d * d];
    model.s_into(x, alpha, &mut a_buf, &mut s);
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eval_s"));
    }
    let min_eig = linalg::sym_eigenvalues(&s, d)[0];
    if min_eig <= PD_FLOOR {
        return Err(Error::NotPositiveDefinite {
            min_eig,
            floor: PD_FLOOR,
        });
    }
    Ok(s)
}

// Central-difference steps: eps^(1/3) for gradients, eps^(1/4) for Hessians.
fn fd_step(order: u32, at: f64) -> f64 {
    let scale = match order {
        1 => f64::EPSILON.powf(1.0 / 3.0),
        _ => f64::EPSILON.powf(1.0 / 4.0),
    };
    scale * at.abs().max(1.0)
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, at: &[f64]) -> Result<Vec<f64>> {
    let p = at.len();
    let mut grad = vec![0.0; p];
    let mut x = at.to_vec();
    for i in 0..p {
        let h = fd_step(1, at[i]);
        x[i] = at[i] + h;
        let fp = f(&x);
        x[i] = at[i] - h;
        let fm = f(&x);
        x[i] = at[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("fd_gradient"));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Central-difference Hessian (9-point cross stencil off the diagonal),
/// symmetrized by construction.
pub fn fd_hessian(f: &mut dyn FnMut(&[f64]) -> f64, at: &[f64]) -> Result<Vec<f64>> {
    let p = at.len();
    let mut hess = vec![0.0; p * p];
    let mut x = at.to_vec();
    let f0 = f(&x);
    if !f0.is_finite() {
        return Err(Error::NonFinite("fd_hessian"));
    }
    for i in 0..p {
        let hi = fd_step(2, at[i]);
        x[i] = at[i] + hi;
        let fp = f(&x);
        x[i] = at[i] - hi;
        let fm = f(&x);
        x[i] = at[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("fd_hessian"));
        }
        hess[i * p + i] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in (i + 1)..p {
            let hj = fd_step(2, at[j]);
            let mut eval = |si: f64, sj: f64| {
                x[i] = at[i] + si * hi;
                x[j] = at[j] + sj * hj;
                let v = f(&x);
                x[i] = at[i];
                x[j] = at[j];
                v
            };
            let fpp = eval(1.0, 1.0);
            let fpm = eval(1.0, -1.0);
            let fmp = eval(-1.0, 1.0);
            let fmm = eval(-1.0, -1.0);
            if ![fpp, fpm, fmp, fmm].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("fd_hessian"));
            }
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            hess[i * p + j] = v;
            hess[j * p + i] = v;
        }
    }
    Ok(hess)
}

/// 1-dimensional Ornstein-Uhlenbeck model dX_t = -(X_t - beta) dt + alpha dW_t.
/// Invariant law: Normal(beta, alpha^2 / 2).
pub fn make_ou_model() -> DiffusionModel {
    DiffusionModel {
        name: "ou".into(),
        state_dim: 1,
        noise_dim: 1,
        alpha_dim: 1,
        beta_dim: 1,
        drift: Arc::new(|x, beta, out| out[0] = -(x[0] - beta[0])),
        diffusion: Arc::new(|_x, alpha, out| out[0] = alpha[0]),
        drift_jacobian_beta: Some(Arc::new(|_x, _beta, out| out[0] = 1.0)),
        drift_hessian_beta: Some(Arc::new(|_x, _beta, out| out[0] = 0.0)),
        s_grad_alpha: Some(Arc::new(|_x, alpha, out| out[0] = 2.0 * alpha[0])),
        s_hess_alpha: Some(Arc::new(|_x, _alpha, out| out[0] = 2.0)),
        invariant: Some(InvariantDensity {
            density: Arc::new(|x, theta| {
                let var = theta.alpha[0] * theta.alpha[0] / 2.0;
                let z = x[0] - theta.beta[0];
                (-z * z / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
            }),
            support: Arc::new(|theta| {
                let sd = (theta.alpha[0] * theta.alpha[0] / 2.0).sqrt();
                (theta.beta[0] - 10.0 * sd, theta.beta[0] + 10.0 * sd)
            }),
        }),
    }
}

/// 1-dimensional model with three diffusion and two drift parameters:
/// dX_t = -beta_1 (X_t - beta_2) dt
///        + (alpha_1 + alpha_2 / (1 + X_t^2) + alpha_3 cos^2 X_t) dW_t.
/// No closed-form invariant density.
pub fn make_model2() -> DiffusionModel {
    let diff_coeff = |x: f64, alpha: &[f64]| -> f64 {
        alpha[0] + alpha[1] / (1.0 + x * x) + alpha[2] * x.cos() * x.cos()
    };
    // gradient of the diffusion coefficient a in alpha
    let a_grad = |x: f64, out: &mut [f64; 3]| {
        out[0] = 1.0;
        out[1] = 1.0 / (1.0 + x * x);
        out[2] = x.cos() * x.cos();
    };
    DiffusionModel {
        name: "model2".into(),
        state_dim: 1,
        noise_dim: 1,
        alpha_dim: 3,
        beta_dim: 2,
        drift: Arc::new(|x, beta, out| out[0] = -beta[0] * (x[0] - beta[1])),
        diffusion: Arc::new(move |x, alpha, out| out[0] = diff_coeff(x[0], alpha)),
        drift_jacobian_beta: Some(Arc::new(|x, beta, out| {
            out[0] = -(x[0] - beta[1]);
            out[1] = beta[0];
        })),
        drift_hessian_beta: Some(Arc::new(|_x, _beta, out| {
            // d^2 b / d(beta_j) d(beta_k); only the cross term survives
            out[0] = 0.0;
            out[1] = 1.0;
            out[2] = 1.0;
            out[3] = 0.0;
        })),
        s_grad_alpha: Some(Arc::new(move |x, alpha, out| {
            let a = diff_coeff(x[0], alpha);
            let mut g = [0.0; 3];
            a_grad(x[0], &mut g);
            for i in 0..3 {
                out[i] = 2.0 * a * g[i];
            }
        })),
        s_hess_alpha: Some(Arc::new(move |x, _alpha, out| {
            // a is linear in alpha, so d^2 S = 2 (da_i)(da_j)
            let mut g = [0.0; 3];
            a_grad(x[0], &mut g);
            for i in 0..3 {
                for j in 0..3 {
                    out[i * 3 + j] = 2.0 * g[i] * g[j];
                }
            }
        })),
        invariant: None,
    }
}

/// Look up a built-in model by registry name.
pub fn model_by_name(name: &str) -> Option<DiffusionModel> {
    match name {
        "ou" => Some(make_ou_model()),
        "model2" => Some(make_model2()),
        _ => None,
    }
}
