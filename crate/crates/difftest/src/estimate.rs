//! Adaptive ML-type estimation: maximize U1 over the (possibly constrained)
//! alpha box, then U2(.|alpha_hat) over the (possibly constrained) beta box.
//!
//! The optimizer is a derivative-free Nelder-Mead restarted from five
//! quasi-random points of the box, each run followed by one coordinate-wise
//! golden-section polish. Infeasible proposals are reflected back to the box.

use crate::error::{Error, Result};
use crate::model::{DiffusionModel, Hypothesis, ParameterSpace};
use crate::quasilik::{self, DriftObjective};
use crate::simulate::SamplePath;

pub const FIT_TOL: f64 = 1e-9;
pub const MAX_ITERS: usize = 2000;
pub const N_STARTS: usize = 5;
const BOUNDARY_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Full parameter vector, fixed components included.
    pub theta_hat: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub at_boundary: bool,
}

/// Search box with pinned components.
struct BoxProblem {
    lower: Vec<f64>,
    upper: Vec<f64>,
    fixed: Vec<Option<f64>>,
    free_idx: Vec<usize>,
}

impl BoxProblem {
    fn new(lower: &[f64], upper: &[f64], fixed_pairs: &[(usize, f64)]) -> Self {
        let dim = lower.len();
        let mut fixed = vec![None; dim];
        for &(i, v) in fixed_pairs {
            fixed[i] = Some(v);
        }
        let free_idx = (0..dim).filter(|i| fixed[*i].is_none()).collect();
        BoxProblem {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            fixed,
            free_idx,
        }
    }

    fn embed(&self, free: &[f64], full: &mut [f64]) {
        for (i, f) in self.fixed.iter().enumerate() {
            if let Some(v) = f {
                full[i] = *v;
            }
        }
        for (k, &i) in self.free_idx.iter().enumerate() {
            full[i] = free[k];
        }
    }

    /// Reflect an infeasible coordinate back inside, then clamp.
    fn project(&self, free: &mut [f64]) {
        for (k, &i) in self.free_idx.iter().enumerate() {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            let mut x = free[k];
            if x < lo {
                x = lo + (lo - x);
            }
            if x > hi {
                x = hi - (x - hi);
            }
            free[k] = x.clamp(lo, hi);
        }
    }

    fn start_point(&self, index: usize) -> Vec<f64> {
        const BASES: [u64; 6] = [2, 3, 5, 7, 11, 13];
        self.free_idx
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let u = halton((index + 1) as u64, BASES[k % BASES.len()]);
                self.lower[i] + u * (self.upper[i] - self.lower[i])
            })
            .collect()
    }
}

fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Maximize `obj` over the box by multi-start Nelder-Mead. `Err` objective
/// evaluations count as -infinity; AllStartsFailed when no start ever sees a
/// finite value.
fn maximize(
    obj: &mut dyn FnMut(&[f64]) -> Result<f64>,
    problem: &BoxProblem,
) -> Result<FitResult> {
    let dim = problem.fixed.len();
    let mut full = vec![0.0; dim];
    if problem.free_idx.is_empty() {
        problem.embed(&[], &mut full);
        let v = obj(&full)?;
        return Ok(FitResult {
            theta_hat: full,
            objective: v,
            iterations: 0,
            converged: true,
            at_boundary: false,
        });
    }

    let mut eval = |free: &[f64], full: &mut [f64]| -> f64 {
        problem.embed(free, full);
        match obj(full) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    };

    let mut runs: Vec<(Vec<f64>, f64, usize)> = Vec::with_capacity(N_STARTS);
    for s in 0..N_STARTS {
        let x0 = problem.start_point(s);
        if let Some((x, fval, iters)) = nelder_mead(&mut eval, problem, &x0, &mut full) {
            let (x, fval, polish_evals) = golden_polish(&mut eval, problem, x, fval, &mut full);
            runs.push((x, fval, iters + polish_evals));
        }
    }
    if runs.is_empty() {
        return Err(Error::AllStartsFailed);
    }
    runs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let iterations = runs.iter().map(|r| r.2).sum();
    let (best_x, best_f, _) = runs[0].clone();

    // converged: best two starts agree in objective and parameters
    let converged = if runs.len() < 2 {
        true
    } else {
        let (x2, f2, _) = &runs[1];
        let obj_ok = (best_f - f2).abs() <= FIT_TOL * (1.0 + best_f.abs());
        let par_ok = best_x
            .iter()
            .zip(x2)
            .all(|(a, b)| (a - b).abs() <= 100.0 * FIT_TOL * (1.0 + a.abs()));
        obj_ok && par_ok
    };

    let at_boundary = problem.free_idx.iter().enumerate().any(|(k, &i)| {
        let w = problem.upper[i] - problem.lower[i];
        let x = best_x[k];
        (x - problem.lower[i]).abs() < BOUNDARY_TOL * w || (problem.upper[i] - x).abs() < BOUNDARY_TOL * w
    });

    problem.embed(&best_x, &mut full);
    Ok(FitResult {
        theta_hat: full,
        objective: best_f,
        iterations,
        converged,
        at_boundary,
    })
}

/// Standard Nelder-Mead on the free coordinates (maximization), returning
/// (best point, best value, evaluations). None when no finite value was seen.
fn nelder_mead(
    eval: &mut dyn FnMut(&[f64], &mut [f64]) -> f64,
    problem: &BoxProblem,
    x0: &[f64],
    full: &mut [f64],
) -> Option<(Vec<f64>, f64, usize)> {
    let k = x0.len();
    let mut evals = 0;
    let mut ev = |x: &mut Vec<f64>, full: &mut [f64], evals: &mut usize| -> f64 {
        problem.project(x);
        *evals += 1;
        eval(x, full)
    };

    // initial simplex: x0 plus steps of 10% box width per coordinate
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    let mut p0 = x0.to_vec();
    let f0 = ev(&mut p0, full, &mut evals);
    simplex.push((p0, f0));
    for j in 0..k {
        let i = problem.free_idx[j];
        let step = 0.1 * (problem.upper[i] - problem.lower[i]);
        let mut p = x0.to_vec();
        p[j] += if p[j] + step <= problem.upper[i] { step } else { -step };
        let f = ev(&mut p, full, &mut evals);
        simplex.push((p, f));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..MAX_ITERS {
        simplex.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        let fbest = simplex[0].1;
        let fworst = simplex[k].1;
        if fbest.is_finite() && fworst.is_finite() && (fbest - fworst).abs() < FIT_TOL {
            break;
        }
        // centroid of all but the worst
        let mut centroid = vec![0.0; k];
        for (p, _) in simplex.iter().take(k) {
            for j in 0..k {
                centroid[j] += p[j] / k as f64;
            }
        }
        let worst = simplex[k].0.clone();
        let mut reflected: Vec<f64> = (0..k)
            .map(|j| centroid[j] + alpha * (centroid[j] - worst[j]))
            .collect();
        let fr = ev(&mut reflected, full, &mut evals);
        if fr > simplex[0].1 {
            let mut expanded: Vec<f64> = (0..k)
                .map(|j| centroid[j] + gamma * (reflected[j] - centroid[j]))
                .collect();
            let fe = ev(&mut expanded, full, &mut evals);
            simplex[k] = if fe > fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr > simplex[k - 1].1 {
            simplex[k] = (reflected, fr);
        } else {
            let mut contracted: Vec<f64> = (0..k)
                .map(|j| centroid[j] + rho * (worst[j] - centroid[j]))
                .collect();
            let fc = ev(&mut contracted, full, &mut evals);
            if fc > simplex[k].1 {
                simplex[k] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let mut p: Vec<f64> = (0..k)
                        .map(|j| best[j] + sigma * (item.0[j] - best[j]))
                        .collect();
                    let f = ev(&mut p, full, &mut evals);
                    *item = (p, f);
                }
            }
        }
    }
    simplex.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, f) = simplex.swap_remove(0);
    if f.is_finite() {
        Some((x, f, evals))
    } else {
        None
    }
}

/// One golden-section pass per free coordinate inside a small window around
/// the current point, clipped to the box.
fn golden_polish(
    eval: &mut dyn FnMut(&[f64], &mut [f64]) -> f64,
    problem: &BoxProblem,
    mut x: Vec<f64>,
    mut fx: f64,
    full: &mut [f64],
) -> (Vec<f64>, f64, usize) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut evals = 0;
    for (k, &i) in problem.free_idx.iter().enumerate() {
        let w = 0.02 * (problem.upper[i] - problem.lower[i]);
        let mut lo = (x[k] - w).max(problem.lower[i]);
        let mut hi = (x[k] + w).min(problem.upper[i]);
        let mut c = hi - INV_PHI * (hi - lo);
        let mut d = lo + INV_PHI * (hi - lo);
        let mut at = |v: f64, x: &mut Vec<f64>, evals: &mut usize| -> f64 {
            let old = x[k];
            x[k] = v;
            *evals += 1;
            let f = eval(x, full);
            x[k] = old;
            f
        };
        let mut fc = at(c, &mut x, &mut evals);
        let mut fd = at(d, &mut x, &mut evals);
        while hi - lo > 1e-12 * (1.0 + x[k].abs()) {
            if fc > fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - INV_PHI * (hi - lo);
                fc = at(c, &mut x, &mut evals);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + INV_PHI * (hi - lo);
                fd = at(d, &mut x, &mut evals);
            }
        }
        let cand = 0.5 * (lo + hi);
        let fcand = at(cand, &mut x, &mut evals);
        if fcand > fx {
            x[k] = cand;
            fx = fcand;
        }
    }
    (x, fx, evals)
}

/// alpha_hat (unconstrained) or alpha_tilde (null-constrained) by maximizing
/// U1 over the alpha box.
pub fn fit_alpha(
    path: &SamplePath,
    model: &DiffusionModel,
    space: &ParameterSpace,
    hyp: Option<&Hypothesis>,
) -> Result<FitResult> {
    space.validate(model)?;
    let fixed: &[(usize, f64)] = hyp.map(|h| h.alpha_fixed.as_slice()).unwrap_or(&[]);
    let problem = BoxProblem::new(&space.alpha_lower, &space.alpha_upper, fixed);
    let mut obj = |alpha: &[f64]| quasilik::u1(path, model, alpha);
    maximize(&mut obj, &problem)
}

/// beta_hat or beta_tilde by maximizing U2(.|alpha_bar) over the beta box.
/// Both the constrained and unconstrained fits condition on the same
/// unconstrained alpha_hat.
pub fn fit_beta(
    path: &SamplePath,
    model: &DiffusionModel,
    space: &ParameterSpace,
    alpha_bar: &[f64],
    hyp: Option<&Hypothesis>,
) -> Result<FitResult> {
    space.validate(model)?;
    let fixed: &[(usize, f64)] = hyp.map(|h| h.beta_fixed.as_slice()).unwrap_or(&[]);
    let problem = BoxProblem::new(&space.beta_lower, &space.beta_upper, fixed);
    let stage = DriftObjective::new(path, model, alpha_bar)?;
    let mut obj = |beta: &[f64]| stage.u2(beta);
    maximize(&mut obj, &problem)
}
