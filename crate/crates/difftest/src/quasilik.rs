//! The two quasi-log-likelihoods
//!   U1(alpha) = -1/2 sum_i { h^{-1} S^{-1}(X_{i-1},alpha)[(dX_i)^{x2}] + log det S(X_{i-1},alpha) }
//!   U2(beta|abar) = -1/2 sum_i { h^{-1} S^{-1}(X_{i-1},abar)[(dX_i - h b(X_{i-1},beta))^{x2}] }
//! with their scores, Hessians, and the empirical information matrices
//! I_{a,n} = -(1/n) d^2 U1, I_{b,n} = -(1/(n h)) d^2 U2 (identity fallback on
//! the singular event).

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, DiffusionModel, PD_FLOOR};
use crate::simulate::SamplePath;

/// Relative singularity tolerance for the identity fallback: the empirical
/// information matrix counts as singular when its smallest eigenvalue
/// magnitude is below 1e-10 times the largest.
pub const SING_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Stage {
    Alpha,
    Beta,
}

/// Scaled negative Hessian of a quasi-log-likelihood, with the identity
/// fallback flag. When `singular_fallback_used` is set, `matrix` is the
/// identity of the stage dimension.
#[derive(Debug, Clone)]
pub struct InfoMatrix {
    pub matrix: Vec<f64>,
    pub dim: usize,
    pub stage: Stage,
    pub singular_fallback_used: bool,
}

impl InfoMatrix {
    fn from_scaled_neg_hessian(mut m: Vec<f64>, dim: usize, stage: Stage) -> Self {
        // symmetrize away optimizer-level rounding
        for i in 0..dim {
            for j in (i + 1)..dim {
                let v = 0.5 * (m[i * dim + j] + m[j * dim + i]);
                m[i * dim + j] = v;
                m[j * dim + i] = v;
            }
        }
        let eig = linalg::sym_eigenvalues(&m, dim);
        let max_abs = eig.iter().fold(0.0f64, |a, e| a.max(e.abs()));
        let min_abs = eig.iter().fold(f64::INFINITY, |a, e| a.min(e.abs()));
        let singular = max_abs == 0.0 || min_abs < SING_TOL * max_abs;
        if singular {
            let mut id = vec![0.0; dim * dim];
            for i in 0..dim {
                id[i * dim + i] = 1.0;
            }
            InfoMatrix {
                matrix: id,
                dim,
                stage,
                singular_fallback_used: true,
            }
        } else {
            InfoMatrix {
                matrix: m,
                dim,
                stage,
                singular_fallback_used: false,
            }
        }
    }

    /// The Rao weight matrix: inverse of the information matrix on the
    /// non-singular event, the identity otherwise.
    pub fn rao_weight(&self) -> Vec<f64> {
        if self.singular_fallback_used {
            return self.matrix.clone();
        }
        // non-singular by the eigenvalue test above
        linalg::invert(&self.matrix, self.dim).expect("info matrix passed singularity test")
    }
}

fn not_pd(s_val: f64) -> Error {
    Error::NotPositiveDefinite {
        min_eig: s_val,
        floor: PD_FLOOR,
    }
}

/// U_n^(1)(alpha).
pub fn u1(path: &SamplePath, model: &DiffusionModel, alpha: &[f64]) -> Result<f64> {
    let d = model.state_dim;
    let n = path.n();
    let h = path.h();
    let states = path.states();
    if d == 1 {
        let mut a_buf = vec![0.0; model.noise_dim];
        let mut s_buf = [0.0];
        let mut acc_q = 0.0;
        let mut acc_ld = 0.0;
        // batch the log det sum as ln of running products; S stays O(1) so a
        // 128-fold product is far from overflow
        let mut prod = 1.0f64;
        for i in 1..=n {
            let x = &states[i - 1..i];
            model.s_into(x, alpha, &mut a_buf, &mut s_buf);
            let s = s_buf[0];
            if !(s > PD_FLOOR) {
                return Err(not_pd(s));
            }
            let dx = states[i] - states[i - 1];
            acc_q += dx * dx / s;
            prod *= s;
            if i % 128 == 0 {
                acc_ld += prod.ln();
                prod = 1.0;
            }
        }
        acc_ld += prod.ln();
        let val = -0.5 * (acc_q / h + acc_ld);
        if !val.is_finite() {
            return Err(Error::NonFinite("u1"));
        }
        Ok(val)
    } else {
        let mut a_buf = vec![0.0; d * model.noise_dim];
        let mut s_buf = vec![0.0; d * d];
        let mut dx = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        let mut acc = 0.0;
        for i in 1..=n {
            let x = &states[(i - 1) * d..i * d];
            model.s_into(x, alpha, &mut a_buf, &mut s_buf);
            if !linalg::cholesky_in_place(&mut s_buf, d, PD_FLOOR) {
                let min_eig = {
                    let mut full = vec![0.0; d * d];
                    model.s_into(x, alpha, &mut a_buf, &mut full);
                    linalg::sym_eigenvalues(&full, d)[0]
                };
                return Err(not_pd(min_eig));
            }
            for k in 0..d {
                dx[k] = states[i * d + k] - x[k];
            }
            acc += linalg::chol_quad_form(&s_buf, d, &dx, &mut scratch) / h
                + linalg::chol_logdet(&s_buf, d);
        }
        let val = -0.5 * acc;
        if !val.is_finite() {
            return Err(Error::NonFinite("u1"));
        }
        Ok(val)
    }
}

/// Score of U1 in alpha: analytic when the model supplies dS/dalpha,
/// central differences otherwise.
pub fn score_u1(path: &SamplePath, model: &DiffusionModel, alpha: &[f64]) -> Result<Vec<f64>> {
    if model.state_dim == 1 && model.s_grad_alpha.is_some() {
        return score_u1_analytic_1d(path, model, alpha);
    }
    fd_of_u1(path, model, alpha, 1)
}

/// Hessian of U1 in alpha.
pub fn hess_u1(path: &SamplePath, model: &DiffusionModel, alpha: &[f64]) -> Result<Vec<f64>> {
    if model.state_dim == 1 && model.s_grad_alpha.is_some() && model.s_hess_alpha.is_some() {
        return hess_u1_analytic_1d(path, model, alpha);
    }
    fd_of_u1(path, model, alpha, 2)
}

fn fd_of_u1(
    path: &SamplePath,
    model: &DiffusionModel,
    alpha: &[f64],
    order: u32,
) -> Result<Vec<f64>> {
    let mut f = |a: &[f64]| u1(path, model, a).unwrap_or(f64::NAN);
    match order {
        1 => model::fd_gradient(&mut f, alpha),
        _ => model::fd_hessian(&mut f, alpha),
    }
}

fn score_u1_analytic_1d(
    path: &SamplePath,
    model: &DiffusionModel,
    alpha: &[f64],
) -> Result<Vec<f64>> {
    let p1 = model.alpha_dim;
    let n = path.n();
    let h = path.h();
    let states = path.states();
    let sg = model.s_grad_alpha.as_ref().unwrap();
    let mut a_buf = vec![0.0; model.noise_dim];
    let mut s_buf = [0.0];
    let mut g = vec![0.0; p1];
    let mut score = vec![0.0; p1];
    for i in 1..=n {
        let x = &states[i - 1..i];
        model.s_into(x, alpha, &mut a_buf, &mut s_buf);
        let s = s_buf[0];
        if !(s > PD_FLOOR) {
            return Err(not_pd(s));
        }
        sg(x, alpha, &mut g);
        let dx = states[i] - states[i - 1];
        let q = dx * dx / h;
        let inv_s = 1.0 / s;
        // d/d(alpha_k) of -(1/2)(q/s + ln s) = (1/2)(q g/s^2 - g/s)
        let w = 0.5 * (q * inv_s * inv_s - inv_s);
        for k in 0..p1 {
            score[k] += w * g[k];
        }
    }
    if score.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score_u1"));
    }
    Ok(score)
}

fn hess_u1_analytic_1d(
    path: &SamplePath,
    model: &DiffusionModel,
    alpha: &[f64],
) -> Result<Vec<f64>> {
    let p1 = model.alpha_dim;
    let n = path.n();
    let h = path.h();
    let states = path.states();
    let sg = model.s_grad_alpha.as_ref().unwrap();
    let sh = model.s_hess_alpha.as_ref().unwrap();
    let mut a_buf = vec![0.0; model.noise_dim];
    let mut s_buf = [0.0];
    let mut g = vec![0.0; p1];
    let mut hh = vec![0.0; p1 * p1];
    let mut hess = vec![0.0; p1 * p1];
    for i in 1..=n {
        let x = &states[i - 1..i];
        model.s_into(x, alpha, &mut a_buf, &mut s_buf);
        let s = s_buf[0];
        if !(s > PD_FLOOR) {
            return Err(not_pd(s));
        }
        sg(x, alpha, &mut g);
        sh(x, alpha, &mut hh);
        let dx = states[i] - states[i - 1];
        let q = dx * dx / h;
        let inv_s = 1.0 / s;
        let inv_s2 = inv_s * inv_s;
        let inv_s3 = inv_s2 * inv_s;
        for j in 0..p1 {
            for k in 0..p1 {
                let gg = g[j] * g[k];
                let hjk = hh[j * p1 + k];
                hess[j * p1 + k] -= 0.5
                    * (q * (2.0 * gg * inv_s3 - hjk * inv_s2) + hjk * inv_s - gg * inv_s2);
            }
        }
    }
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hess_u1"));
    }
    Ok(hess)
}

/// U2 and its beta-derivatives for a fixed conditioning alpha. Construction
/// precomputes S^{-1}(X_{i-1}, alpha_bar) once so repeated evaluations during
/// the beta fit touch only the drift.
pub struct DriftObjective<'a> {
    path: &'a SamplePath,
    model: &'a DiffusionModel,
    /// d == 1: 1/S per observation; d > 1: lower Cholesky factor per observation
    weights: Vec<f64>,
}

impl<'a> DriftObjective<'a> {
    pub fn new(path: &'a SamplePath, model: &'a DiffusionModel, alpha_bar: &[f64]) -> Result<Self> {
        let d = model.state_dim;
        let n = path.n();
        let states = path.states();
        let mut a_buf = vec![0.0; d * model.noise_dim];
        if d == 1 {
            let mut s_buf = [0.0];
            let mut weights = Vec::with_capacity(n);
            for i in 1..=n {
                model.s_into(&states[i - 1..i], alpha_bar, &mut a_buf, &mut s_buf);
                let s = s_buf[0];
                if !(s > PD_FLOOR) {
                    return Err(not_pd(s));
                }
                weights.push(1.0 / s);
            }
            Ok(DriftObjective { path, model, weights })
        } else {
            let mut weights = vec![0.0; n * d * d];
            for i in 1..=n {
                let x = &states[(i - 1) * d..i * d];
                let block = &mut weights[(i - 1) * d * d..i * d * d];
                model.s_into(x, alpha_bar, &mut a_buf, block);
                if !linalg::cholesky_in_place(block, d, PD_FLOOR) {
                    return Err(not_pd(f64::NAN));
                }
            }
            Ok(DriftObjective { path, model, weights })
        }
    }

    pub fn u2(&self, beta: &[f64]) -> Result<f64> {
        let d = self.model.state_dim;
        let n = self.path.n();
        let h = self.path.h();
        let states = self.path.states();
        let mut b = vec![0.0; d];
        let mut acc = 0.0;
        if d == 1 {
            for i in 1..=n {
                self.model.drift_into(&states[i - 1..i], beta, &mut b);
                let r = states[i] - states[i - 1] - h * b[0];
                acc += r * r * self.weights[i - 1];
            }
        } else {
            let mut r = vec![0.0; d];
            let mut scratch = vec![0.0; d];
            for i in 1..=n {
                let x = &states[(i - 1) * d..i * d];
                self.model.drift_into(x, beta, &mut b);
                for k in 0..d {
                    r[k] = states[i * d + k] - x[k] - h * b[k];
                }
                let l = &self.weights[(i - 1) * d * d..i * d * d];
                acc += linalg::chol_quad_form(l, d, &r, &mut scratch);
            }
        }
        let val = -0.5 * acc / h;
        if !val.is_finite() {
            return Err(Error::NonFinite("u2"));
        }
        Ok(val)
    }

    /// Score of U2 in beta: sum_i (db)^T S^{-1} r_i.
    pub fn score(&self, beta: &[f64]) -> Result<Vec<f64>> {
        let jac = match &self.model.drift_jacobian_beta {
            Some(j) => j.clone(),
            None => {
                let mut f = |bt: &[f64]| self.u2(bt).unwrap_or(f64::NAN);
                return model::fd_gradient(&mut f, beta);
            }
        };
        let d = self.model.state_dim;
        let p2 = self.model.beta_dim;
        let n = self.path.n();
        let h = self.path.h();
        let states = self.path.states();
        let mut b = vec![0.0; d];
        let mut jbuf = vec![0.0; d * p2];
        let mut score = vec![0.0; p2];
        if d == 1 {
            for i in 1..=n {
                let x = &states[i - 1..i];
                self.model.drift_into(x, beta, &mut b);
                jac(x, beta, &mut jbuf);
                let rw = (states[i] - states[i - 1] - h * b[0]) * self.weights[i - 1];
                for k in 0..p2 {
                    score[k] += jbuf[k] * rw;
                }
            }
        } else {
            let mut r = vec![0.0; d];
            for i in 1..=n {
                let x = &states[(i - 1) * d..i * d];
                self.model.drift_into(x, beta, &mut b);
                jac(x, beta, &mut jbuf);
                for k in 0..d {
                    r[k] = states[i * d + k] - x[k] - h * b[k];
                }
                let l = &self.weights[(i - 1) * d * d..i * d * d];
                linalg::chol_solve(l, d, &mut r); // r <- S^{-1} r
                for k in 0..p2 {
                    let mut s = 0.0;
                    for row in 0..d {
                        s += jbuf[row * p2 + k] * r[row];
                    }
                    score[k] += s;
                }
            }
        }
        if score.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score_u2"));
        }
        Ok(score)
    }

    /// Hessian of U2 in beta:
    /// sum_i [ (d^2 b)^T S^{-1} r_i - h (db_j)^T S^{-1} (db_k) ].
    pub fn hess(&self, beta: &[f64]) -> Result<Vec<f64>> {
        let (jac, dh) = match (&self.model.drift_jacobian_beta, &self.model.drift_hessian_beta) {
            (Some(j), Some(h2)) => (j.clone(), h2.clone()),
            _ => {
                let mut f = |bt: &[f64]| self.u2(bt).unwrap_or(f64::NAN);
                return model::fd_hessian(&mut f, beta);
            }
        };
        let d = self.model.state_dim;
        let p2 = self.model.beta_dim;
        let n = self.path.n();
        let h = self.path.h();
        let states = self.path.states();
        let mut b = vec![0.0; d];
        let mut jbuf = vec![0.0; d * p2];
        let mut hbuf = vec![0.0; p2 * p2 * d];
        let mut hess = vec![0.0; p2 * p2];
        if d == 1 {
            for i in 1..=n {
                let x = &states[i - 1..i];
                self.model.drift_into(x, beta, &mut b);
                jac(x, beta, &mut jbuf);
                dh(x, beta, &mut hbuf);
                let w = self.weights[i - 1];
                let r = states[i] - states[i - 1] - h * b[0];
                for j in 0..p2 {
                    for k in 0..p2 {
                        hess[j * p2 + k] += hbuf[j * p2 + k] * r * w - h * jbuf[j] * jbuf[k] * w;
                    }
                }
            }
        } else {
            let mut r = vec![0.0; d];
            let mut sj = vec![0.0; d * p2];
            for i in 1..=n {
                let x = &states[(i - 1) * d..i * d];
                self.model.drift_into(x, beta, &mut b);
                jac(x, beta, &mut jbuf);
                dh(x, beta, &mut hbuf);
                for k in 0..d {
                    r[k] = states[i * d + k] - x[k] - h * b[k];
                }
                let l = &self.weights[(i - 1) * d * d..i * d * d];
                linalg::chol_solve(l, d, &mut r);
                // sj column k = S^{-1} (db_k)
                for k in 0..p2 {
                    let mut col: Vec<f64> = (0..d).map(|row| jbuf[row * p2 + k]).collect();
                    linalg::chol_solve(l, d, &mut col);
                    for row in 0..d {
                        sj[row * p2 + k] = col[row];
                    }
                }
                for j in 0..p2 {
                    for k in 0..p2 {
                        let mut cross = 0.0;
                        let mut hr = 0.0;
                        for row in 0..d {
                            cross += jbuf[row * p2 + j] * sj[row * p2 + k];
                            hr += hbuf[(j * p2 + k) * d + row] * r[row];
                        }
                        hess[j * p2 + k] += hr - h * cross;
                    }
                }
            }
        }
        if hess.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("hess_u2"));
        }
        Ok(hess)
    }
}

/// U_n^(2)(beta | alpha_bar).
pub fn u2(path: &SamplePath, model: &DiffusionModel, beta: &[f64], alpha_bar: &[f64]) -> Result<f64> {
    DriftObjective::new(path, model, alpha_bar)?.u2(beta)
}

pub fn score_u2(
    path: &SamplePath,
    model: &DiffusionModel,
    beta: &[f64],
    alpha_bar: &[f64],
) -> Result<Vec<f64>> {
    DriftObjective::new(path, model, alpha_bar)?.score(beta)
}

pub fn hess_u2(
    path: &SamplePath,
    model: &DiffusionModel,
    beta: &[f64],
    alpha_bar: &[f64],
) -> Result<Vec<f64>> {
    DriftObjective::new(path, model, alpha_bar)?.hess(beta)
}

/// I_{a,n}(alpha) = -(1/n) d^2 U1, identity fallback on the singular event.
pub fn info_a(path: &SamplePath, model: &DiffusionModel, alpha: &[f64]) -> Result<InfoMatrix> {
    let p1 = model.alpha_dim;
    let mut m = hess_u1(path, model, alpha)?;
    let scale = -1.0 / path.n() as f64;
    m.iter_mut().for_each(|v| *v *= scale);
    Ok(InfoMatrix::from_scaled_neg_hessian(m, p1, Stage::Alpha))
}

/// I_{b,n}(beta | alpha_bar) = -(1/(n h)) d^2 U2, identity fallback likewise.
pub fn info_b(
    path: &SamplePath,
    model: &DiffusionModel,
    beta: &[f64],
    alpha_bar: &[f64],
) -> Result<InfoMatrix> {
    let p2 = model.beta_dim;
    let mut m = hess_u2(path, model, beta, alpha_bar)?;
    let scale = -1.0 / (path.n() as f64 * path.h());
    m.iter_mut().for_each(|v| *v *= scale);
    Ok(InfoMatrix::from_scaled_neg_hessian(m, p2, Stage::Beta))
}

/// Closed-form reference quantities for the OU model, used as independent
/// oracles by the test suites. These never touch the optimizer or the
/// generic likelihood code above.
pub mod oracle {
    use crate::simulate::SamplePath;

    /// alpha_hat = sqrt( (1/(n h)) sum (dX)^2 ).
    pub fn ou_alpha_hat(path: &SamplePath) -> f64 {
        let s = path.states();
        let n = path.n();
        let ss: f64 = (1..=n).map(|i| (s[i] - s[i - 1]).powi(2)).sum();
        (ss / (n as f64 * path.h())).sqrt()
    }

    /// beta_hat = (1/n) sum (X_{i-1} + dX_i / h).
    pub fn ou_beta_hat(path: &SamplePath) -> f64 {
        let s = path.states();
        let n = path.n();
        let total: f64 = (1..=n)
            .map(|i| s[i - 1] + (s[i] - s[i - 1]) / path.h())
            .sum();
        total / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_ou_model, Theta};
    use crate::simulate::{derive_seed, ou_exact, SimConfig, StepRule};
    use std::sync::Arc;

    fn toy_path() -> SamplePath {
        SamplePath::new(0.5, 1, vec![0.0, 1.0, 0.0], "ou".into()).unwrap()
    }

    #[test]
    fn u1_hand_values() {
        let m = make_ou_model();
        let p = toy_path();
        assert!((u1(&p, &m, &[1.0]).unwrap() - (-2.0)).abs() < 1e-12);
        let v = u1(&p, &m, &[std::f64::consts::SQRT_2]).unwrap();
        assert!((v - (-1.0 - (2.0f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn u2_hand_values() {
        let m = make_ou_model();
        // zero increments, zero drift: U2 = 0
        let flat = SamplePath::new(0.5, 1, vec![1.0, 1.0, 1.0], "ou".into()).unwrap();
        assert_eq!(u2(&flat, &m, &[1.0], &[1.0]).unwrap(), 0.0);
        // X=(0,1,0), beta=0: residuals (1, -0.5) -> -1.25
        let p = toy_path();
        assert!((u2(&p, &m, &[0.0], &[1.0]).unwrap() - (-1.25)).abs() < 1e-12);
    }

    #[test]
    fn u2_maximized_at_closed_form_beta() {
        let m = make_ou_model();
        let p = toy_path();
        let beta_hat = oracle::ou_beta_hat(&p);
        assert!((beta_hat - 0.5).abs() < 1e-12);
        let at = u2(&p, &m, &[beta_hat], &[1.0]).unwrap();
        for db in [-0.1, -0.01, 0.01, 0.1] {
            assert!(u2(&p, &m, &[beta_hat + db], &[1.0]).unwrap() < at);
        }
    }

    #[test]
    fn u1_decreases_away_from_closed_form_maximizer() {
        let cfg = SimConfig {
            n: 500,
            h: StepRule::Explicit(0.02),
            x0: vec![1.0],
            substeps: 1,
            seed: 11,
        };
        let p = ou_exact(&Theta::new(vec![1.0], vec![2.0]), &cfg).unwrap();
        let m = make_ou_model();
        let ahat = oracle::ou_alpha_hat(&p);
        let at = u1(&p, &m, &[ahat]).unwrap();
        for da in [-0.2, -0.05, 0.05, 0.2] {
            assert!(u1(&p, &m, &[ahat + da]).unwrap() < at);
        }
        // score vanishes at the maximizer
        let s = score_u1(&p, &m, &[ahat]).unwrap();
        assert!(s[0].abs() < 1e-8 * p.n() as f64, "score {}", s[0]);
    }

    #[test]
    fn scores_match_finite_differences() {
        let m = make_ou_model();
        let m2 = crate::model::make_model2();
        for rep in 0..50 {
            let seed = derive_seed(99, rep);
            let cfg = SimConfig {
                n: 200,
                h: StepRule::Explicit(0.02),
                x0: vec![1.0],
                substeps: 1,
                seed,
            };
            let (model, theta) = if rep % 2 == 0 {
                (&m, Theta::new(vec![1.0], vec![2.0]))
            } else {
                (&m2, Theta::new(vec![1.0, 1.0, 0.5], vec![2.0, 2.0]))
            };
            let p = crate::simulate::euler_maruyama(model, &theta, &cfg).unwrap();
            let alpha = &theta.alpha;
            let analytic = score_u1(&p, model, alpha).unwrap();
            let mut f = |a: &[f64]| u1(&p, model, a).unwrap_or(f64::NAN);
            let fd = crate::model::fd_gradient(&mut f, alpha).unwrap();
            for k in 0..alpha.len() {
                let denom = analytic[k].abs().max(1.0);
                assert!(
                    (analytic[k] - fd[k]).abs() / denom < 1e-5,
                    "u1 score {k}: {} vs {}",
                    analytic[k],
                    fd[k]
                );
            }
            let obj = DriftObjective::new(&p, model, alpha).unwrap();
            let sc = obj.score(&theta.beta).unwrap();
            let mut g = |bt: &[f64]| obj.u2(bt).unwrap_or(f64::NAN);
            let fd2 = crate::model::fd_gradient(&mut g, &theta.beta).unwrap();
            for k in 0..theta.beta.len() {
                let denom = sc[k].abs().max(1.0);
                assert!(
                    (sc[k] - fd2[k]).abs() / denom < 1e-5,
                    "u2 score {k}: {} vs {}",
                    sc[k],
                    fd2[k]
                );
            }
        }
    }

    #[test]
    fn ou_info_matrices_match_closed_forms() {
        let cfg = SimConfig {
            n: 2000,
            h: StepRule::Explicit(0.01),
            x0: vec![1.0],
            substeps: 1,
            seed: 5,
        };
        let p = ou_exact(&Theta::new(vec![1.0], vec![2.0]), &cfg).unwrap();
        let m = make_ou_model();
        let ahat = oracle::ou_alpha_hat(&p);
        let ia = info_a(&p, &m, &[ahat]).unwrap();
        assert!(!ia.singular_fallback_used);
        assert!((ia.matrix[0] - 2.0 / (ahat * ahat)).abs() < 1e-10);
        let ib = info_b(&p, &m, &[3.0], &[ahat]).unwrap();
        assert!((ib.matrix[0] - 1.0 / (ahat * ahat)).abs() < 1e-10);
        // info_a at the maximizer is psd (1-d: nonnegative)
        assert!(ia.matrix[0] > -1e-8);
    }

    #[test]
    fn hess_u2_constant_in_beta_for_ou() {
        let m = make_ou_model();
        let p = toy_path();
        let h1 = hess_u2(&p, &m, &[0.3], &[1.2]).unwrap();
        let h2 = hess_u2(&p, &m, &[5.0], &[1.2]).unwrap();
        assert!((h1[0] - h2[0]).abs() < 1e-12);
        let expect = -(p.n() as f64 * p.h()) / (1.2f64 * 1.2);
        assert!((h1[0] - expect).abs() < 1e-10);
    }

    #[test]
    fn u2_is_nonpositive() {
        let m = make_ou_model();
        let p = toy_path();
        for beta in [-3.0, 0.0, 0.5, 4.0] {
            assert!(u2(&p, &m, &[beta], &[0.7]).unwrap() <= 0.0);
        }
    }

    #[test]
    fn singular_hessian_falls_back_to_identity() {
        // constant diffusion that ignores alpha: the U1 Hessian is exactly 0
        let mut m = make_ou_model();
        m.diffusion = Arc::new(|_x, _a, out| out[0] = 1.0);
        m.s_grad_alpha = Some(Arc::new(|_x, _a, out| out[0] = 0.0));
        m.s_hess_alpha = Some(Arc::new(|_x, _a, out| out[0] = 0.0));
        let flat = SamplePath::new(0.5, 1, vec![1.0, 1.0, 1.0], "ou".into()).unwrap();
        let ia = info_a(&flat, &m, &[1.0]).unwrap();
        assert!(ia.singular_fallback_used);
        assert_eq!(ia.matrix, vec![1.0]);
        assert_eq!(ia.rao_weight(), vec![1.0]);
    }

    #[test]
    fn generic_dimension_path_agrees_with_scalar_path() {
        // two independent OU components as a d=2 model; U1 must equal the sum
        // of the scalar U1's of the component paths
        let m2 = DiffusionModel {
            name: "ou2d".into(),
            state_dim: 2,
            noise_dim: 2,
            alpha_dim: 2,
            beta_dim: 2,
            drift: Arc::new(|x, beta, out| {
                out[0] = -(x[0] - beta[0]);
                out[1] = -(x[1] - beta[1]);
            }),
            diffusion: Arc::new(|_x, alpha, out| {
                out[0] = alpha[0];
                out[1] = 0.0;
                out[2] = 0.0;
                out[3] = alpha[1];
            }),
            drift_jacobian_beta: Some(Arc::new(|_x, _b, out| {
                out[0] = 1.0;
                out[1] = 0.0;
                out[2] = 0.0;
                out[3] = 1.0;
            })),
            drift_hessian_beta: Some(Arc::new(|_x, _b, out| out.fill(0.0))),
            s_grad_alpha: None,
            s_hess_alpha: None,
            invariant: None,
        };
        let m1 = make_ou_model();
        let cfg = SimConfig {
            n: 100,
            h: StepRule::Explicit(0.05),
            x0: vec![1.0],
            substeps: 1,
            seed: 21,
        };
        let pa = ou_exact(&Theta::new(vec![1.0], vec![2.0]), &cfg).unwrap();
        let pb = ou_exact(
            &Theta::new(vec![1.5], vec![0.5]),
            &SimConfig { seed: 22, ..cfg },
        )
        .unwrap();
        let mut joint = Vec::new();
        for i in 0..=100 {
            joint.push(pa.state(i)[0]);
            joint.push(pb.state(i)[0]);
        }
        let pj = SamplePath::new(0.05, 2, joint, "ou2d".into()).unwrap();
        let a = [1.0, 1.5];
        let b = [2.0, 0.5];
        let expect = u1(&pa, &m1, &[1.0]).unwrap() + u1(&pb, &m1, &[1.5]).unwrap();
        assert!((u1(&pj, &m2, &a).unwrap() - expect).abs() < 1e-9);
        let e2 = u2(&pa, &m1, &[2.0], &[1.0]).unwrap() + u2(&pb, &m1, &[0.5], &[1.5]).unwrap();
        assert!((u2(&pj, &m2, &b, &a).unwrap() - e2).abs() < 1e-9);
        // analytic d=2 u2 score against finite differences
        let obj = DriftObjective::new(&pj, &m2, &a).unwrap();
        let sc = obj.score(&b).unwrap();
        let mut g = |bt: &[f64]| obj.u2(bt).unwrap_or(f64::NAN);
        let fd = crate::model::fd_gradient(&mut g, &b).unwrap();
        for k in 0..2 {
            assert!((sc[k] - fd[k]).abs() / sc[k].abs().max(1.0) < 1e-5);
        }
    }
}
