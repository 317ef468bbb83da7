//! Monte Carlo experiment engine: case tables, empirical sizes and powers,
//! null and local-alternative sampling distributions, and the population
//! limit-criterion / noncentrality oracles computed by quadrature against
//! the invariant measure.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypotest::{self, StatKind, TestReport, STAT_KINDS};
use crate::model::{self, DiffusionModel, Hypothesis, ParameterSpace, Theta};
use crate::simulate::{self, SimConfig, StepRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    CaseTable,
    Size,
    Power,
    NullDist,
    LocalAlt,
}

fn default_x0() -> Vec<f64> {
    vec![1.0]
}

/// Default fine-grid substeps for data generation; keeps discretization bias
/// below the statistical noise at the n used here.
fn default_substeps() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    pub space: ParameterSpace,
    /// True parameter (the null point theta_0 in local_alt mode).
    pub truth: Theta,
    pub hyp1: Hypothesis,
    pub hyp2: Hypothesis,
    pub n_list: Vec<usize>,
    /// Explicit step size; omitted means the h_n = n^(-2/3) rule.
    #[serde(default)]
    pub h: Option<f64>,
    pub replications: usize,
    pub epsilon: f64,
    pub master_seed: u64,
    pub mode: Mode,
    #[serde(default)]
    pub u_alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub u_beta: Option<Vec<f64>>,
    #[serde(default = "default_x0")]
    pub x0: Vec<f64>,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Generate data with the exact OU transition instead of Euler. Defaults
    /// to true in local_alt mode on the OU model (avoids conflating
    /// discretization bias with the O(1/sqrt(n)) parameter drift).
    #[serde(default)]
    pub exact_ou: Option<bool>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<DiffusionModel> {
        let m = model::model_by_name(&self.model)
            .ok_or_else(|| Error::invalid("config", format!("unknown model {:?}", self.model)))?;
        self.space.validate(&m)?;
        self.hyp1.validate(&m, &self.space)?;
        self.hyp2.validate(&m, &self.space)?;
        if self.replications == 0 {
            return Err(Error::invalid("config", "replications must be >= 1"));
        }
        if !(0.0 < self.epsilon && self.epsilon < 1.0) {
            return Err(Error::invalid("config", "epsilon must be in (0,1)"));
        }
        if self.n_list.is_empty() {
            return Err(Error::invalid("config", "n_list must be non-empty"));
        }
        if self.truth.alpha.len() != m.alpha_dim || self.truth.beta.len() != m.beta_dim {
            return Err(Error::invalid("config", "truth dimension mismatch"));
        }
        if self.x0.len() != m.state_dim {
            return Err(Error::invalid("config", "x0 dimension mismatch"));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("config", "substeps must be >= 1"));
        }
        if self.mode == Mode::LocalAlt {
            let ua = self.u_alpha.as_ref().ok_or_else(|| {
                Error::invalid("config", "local_alt mode needs u_alpha")
            })?;
            let ub = self.u_beta.as_ref().ok_or_else(|| {
                Error::invalid("config", "local_alt mode needs u_beta")
            })?;
            if ua.len() != m.alpha_dim || ub.len() != m.beta_dim {
                return Err(Error::invalid("config", "u_alpha/u_beta dimension mismatch"));
            }
        }
        Ok(m)
    }

    pub fn step_rule(&self) -> StepRule {
        match self.h {
            Some(h) => StepRule::Explicit(h),
            None => StepRule::NPowMinusTwoThirds,
        }
    }

    fn use_exact_ou(&self) -> bool {
        self.exact_ou
            .unwrap_or(self.mode == Mode::LocalAlt && self.model == "ou")
    }

    /// Data-generating parameter for sample size n. In local_alt mode the
    /// truth drifts toward the null at the estimation rates.
    pub fn truth_for_n(&self, n: usize) -> Theta {
        if self.mode != Mode::LocalAlt {
            return self.truth.clone();
        }
        let h = self.step_rule().h(n);
        let sqrt_n = (n as f64).sqrt();
        let sqrt_nh = (n as f64 * h).sqrt();
        let ua = self.u_alpha.as_ref().unwrap();
        let ub = self.u_beta.as_ref().unwrap();
        Theta::new(
            self.truth
                .alpha
                .iter()
                .zip(ua)
                .map(|(a, u)| a + u / sqrt_n)
                .collect(),
            self.truth
                .beta
                .iter()
                .zip(ub)
                .map(|(b, u)| b + u / sqrt_nh)
                .collect(),
        )
    }
}

/// Aggregated outcome for one statistic type at one n.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StatSummary {
    pub kind: StatKind,
    pub case_counts: [usize; 4],
    pub reject1: usize,
    pub reject2: usize,
    pub rate1: f64,
    pub se1: f64,
    pub rate2: f64,
    pub se2: f64,
    /// Per-replication statistic values, replication order.
    pub samples1: Vec<f64>,
    pub samples2: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct NResult {
    pub n: usize,
    pub h: f64,
    pub truth: Theta,
    pub failures: usize,
    pub fallback1: usize,
    pub fallback2: usize,
    pub stats: Vec<StatSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub per_n: Vec<NResult>,
    pub wall_time_secs: f64,
}

fn simulate_rep(
    cfg: &ExperimentConfig,
    m: &DiffusionModel,
    truth: &Theta,
    n: usize,
    seed: u64,
) -> Result<crate::simulate::SamplePath> {
    let sim_cfg = SimConfig {
        n,
        h: cfg.step_rule(),
        x0: cfg.x0.clone(),
        substeps: cfg.substeps,
        seed,
    };
    if cfg.use_exact_ou() {
        simulate::ou_exact(truth, &sim_cfg)
    } else {
        simulate::euler_maruyama(m, truth, &sim_cfg)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with_progress(cfg, |_, _| {})
}

/// Runs all replications. Per-replication seeds derive from
/// (master_seed, n, replication index), so results are bit-identical for
/// any execution order or worker count.
pub fn run_experiment_with_progress(
    cfg: &ExperimentConfig,
    progress: impl Fn(usize, usize) + Sync,
) -> Result<ExperimentResult> {
    let m = cfg.validate()?;
    let started = Instant::now();
    let total = cfg.n_list.len() * cfg.replications;
    let done = AtomicUsize::new(0);
    let mut per_n = Vec::new();
    for (n_idx, &n) in cfg.n_list.iter().enumerate() {
        let truth = cfg.truth_for_n(n);
        let reports: Vec<std::result::Result<TestReport, String>> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let seed = simulate::derive_seed(
                    cfg.master_seed,
                    ((n_idx as u64) << 40) | rep as u64,
                );
                let out = simulate_rep(cfg, &m, &truth, n, seed)
                    .and_then(|path| {
                        hypotest::two_step_decision(
                            &path, &m, &cfg.space, &cfg.hyp1, &cfg.hyp2, cfg.epsilon,
                        )
                    })
                    .map_err(|e| e.to_string());
                let d = done.fetch_add(1, Ordering::Relaxed) + 1;
                progress(d, total);
                out
            })
            .collect();
        per_n.push(aggregate(cfg, n, &truth, &reports)?);
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        per_n,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

fn aggregate(
    cfg: &ExperimentConfig,
    n: usize,
    truth: &Theta,
    reports: &[std::result::Result<TestReport, String>],
) -> Result<NResult> {
    let total = reports.len();
    let failures = reports.iter().filter(|r| r.is_err()).count();
    if failures * 5 > total {
        return Err(Error::TooManyFailures {
            failed: failures,
            total,
        });
    }
    let ok = total - failures;
    let mut fallback1 = 0;
    let mut fallback2 = 0;
    let mut stats = Vec::with_capacity(3);
    for kind in STAT_KINDS {
        let mut s = StatSummary {
            kind,
            case_counts: [0; 4],
            reject1: 0,
            reject2: 0,
            rate1: 0.0,
            se1: 0.0,
            rate2: 0.0,
            se2: 0.0,
            samples1: Vec::with_capacity(ok),
            samples2: Vec::with_capacity(ok),
        };
        for r in reports.iter().flatten() {
            s.case_counts[(r.case(kind) - 1) as usize] += 1;
            if r.stage1.reject(kind) {
                s.reject1 += 1;
            }
            if r.stage2.reject(kind) {
                s.reject2 += 1;
            }
            s.samples1.push(r.stage1.statistic(kind));
            s.samples2.push(r.stage2.statistic(kind));
        }
        if ok > 0 {
            let okf = ok as f64;
            s.rate1 = s.reject1 as f64 / okf;
            s.se1 = (s.rate1 * (1.0 - s.rate1) / okf).sqrt();
            s.rate2 = s.reject2 as f64 / okf;
            s.se2 = (s.rate2 * (1.0 - s.rate2) / okf).sqrt();
        }
        stats.push(s);
    }
    for r in reports.iter().flatten() {
        if r.stage1.fallback_flag {
            fallback1 += 1;
        }
        if r.stage2.fallback_flag {
            fallback2 += 1;
        }
    }
    Ok(NResult {
        n,
        h: cfg.step_rule().h(n),
        truth: truth.clone(),
        failures,
        fallback1,
        fallback2,
        stats,
    })
}

/// Reference laws for goodness-of-fit checks.
#[derive(Debug, Clone, Copy)]
pub enum RefDist {
    Chi2 { df: usize },
    NoncentralChi2 { df: usize, c: f64 },
}

impl RefDist {
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            RefDist::Chi2 { df } => hypotest::chi2_cdf(x, *df),
            RefDist::NoncentralChi2 { df, c } => hypotest::noncentral_chi2_cdf(x, *df, *c),
        }
    }
}

/// Kolmogorov-Smirnov sup-distance between the empirical CDF of `samples`
/// and a reference law.
pub fn ks_distance(samples: &[f64], reference: RefDist) -> Result<f64> {
    if samples.len() < 100 {
        return Err(Error::invalid("ks_distance", "need at least 100 samples"));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let f = reference.cdf(*x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    Ok(d)
}

/// Equal-width histogram over [0, max], for plot-data output.
pub fn histogram(samples: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    let max = samples.iter().fold(0.0f64, |a, &b| a.max(b)).max(1e-12);
    let width = max / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in samples {
        let k = ((s / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let edges = (0..=bins).map(|i| i as f64 * width).collect();
    (edges, counts)
}

// Adaptive Simpson quadrature.
fn simpson_rule(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_rule(a, m, fa, flm, fm);
    let right = simpson_rule(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + adaptive_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// Adaptive Simpson integral of f over [a, b] to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson_rule(a, b, fa, fm, fb);
    adaptive_step(f, a, b, fa, fm, fb, whole, tol, 40)
}

const QUAD_TOL: f64 = 1e-8;

fn invariant_parts(model: &DiffusionModel, theta1: &Theta) -> Result<(f64, f64)> {
    if model.state_dim != 1 {
        return Err(Error::invalid(
            "limit criteria",
            "quadrature oracles support 1-dimensional state only",
        ));
    }
    let inv = model.invariant.as_ref().ok_or(Error::MissingInvariantDensity)?;
    Ok((inv.support)(theta1))
}

/// Limit criterion for the diffusion stage:
/// U1bar(alpha; alpha1*) = -1/2 int ( tr(S(x,alpha1*) S^{-1}(x,alpha)) + log det S(x,alpha) ) mu(dx),
/// with mu the invariant law at theta1*.
pub fn limit_u1(model: &DiffusionModel, alpha: &[f64], theta1: &Theta) -> Result<f64> {
    let (lo, hi) = invariant_parts(model, theta1)?;
    let density = model.invariant.as_ref().unwrap().density.clone();
    let mut a_buf = vec![0.0; model.noise_dim];
    let mut s_buf = [0.0];
    let mut eval = move |x: f64| -> f64 {
        let xs = [x];
        model.s_into(&xs, &theta1.alpha, &mut a_buf, &mut s_buf);
        let s_star = s_buf[0];
        model.s_into(&xs, alpha, &mut a_buf, &mut s_buf);
        let s = s_buf[0];
        -0.5 * (s_star / s + s.ln()) * density(&xs, theta1)
    };
    let f = std::cell::RefCell::new(&mut eval);
    Ok(integrate(&|x| (f.borrow_mut())(x), lo, hi, QUAD_TOL))
}

/// Limit criterion for the drift stage:
/// U2bar(alpha, beta; beta1*) = -1/2 int S^{-1}(x,alpha) (b(x,beta1*) - b(x,beta))^2 mu(dx).
pub fn limit_u2(model: &DiffusionModel, alpha: &[f64], beta: &[f64], theta1: &Theta) -> Result<f64> {
    let (lo, hi) = invariant_parts(model, theta1)?;
    let density = model.invariant.as_ref().unwrap().density.clone();
    let mut a_buf = vec![0.0; model.noise_dim];
    let mut s_buf = [0.0];
    let mut b_buf = [0.0];
    let mut eval = move |x: f64| -> f64 {
        let xs = [x];
        model.s_into(&xs, alpha, &mut a_buf, &mut s_buf);
        let s = s_buf[0];
        model.drift_into(&xs, &theta1.beta, &mut b_buf);
        let b_star = b_buf[0];
        model.drift_into(&xs, beta, &mut b_buf);
        let diff = b_star - b_buf[0];
        -0.5 * diff * diff / s * density(&xs, theta1)
    };
    let f = std::cell::RefCell::new(&mut eval);
    Ok(integrate(&|x| (f.borrow_mut())(x), lo, hi, QUAD_TOL))
}

/// Population information matrices at the null point theta_0, by quadrature:
/// I_a^{ij} = 1/2 int tr(S^{-1} dS_i S^{-1} dS_j) mu(dx),
/// I_b^{ij} = int (db_i)^T S^{-1} (db_j) mu(dx),
/// returning the noncentralities (u_a^T I_a u_a, u_b^T I_b u_b).
pub fn noncentrality(
    model: &DiffusionModel,
    theta0: &Theta,
    u_alpha: &[f64],
    u_beta: &[f64],
) -> Result<(f64, f64)> {
    let (ia, ib) = population_information(model, theta0)?;
    let p1 = model.alpha_dim;
    let p2 = model.beta_dim;
    let ca = crate::linalg::quad_form(&ia, p1, u_alpha);
    let cb = crate::linalg::quad_form(&ib, p2, u_beta);
    Ok((ca, cb))
}

/// I_a(alpha_0; alpha_0) and I_b(theta_0; theta_0) by quadrature against the
/// invariant density.
pub fn population_information(
    model: &DiffusionModel,
    theta0: &Theta,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (lo, hi) = invariant_parts(model, theta0)?;
    let density = model.invariant.as_ref().unwrap().density.clone();
    let p1 = model.alpha_dim;
    let p2 = model.beta_dim;

    let mut ia = vec![0.0; p1 * p1];
    for i in 0..p1 {
        for j in i..p1 {
            let mut a_buf = vec![0.0; model.noise_dim];
            let mut s_buf = [0.0];
            let mut g = vec![0.0; p1];
            let mut eval = |x: f64| -> f64 {
                let xs = [x];
                model.s_into(&xs, &theta0.alpha, &mut a_buf, &mut s_buf);
                let s = s_buf[0];
                model
                    .s_grad_into(&xs, &theta0.alpha, &mut g)
                    .expect("S derivative evaluation");
                0.5 * g[i] * g[j] / (s * s) * density(&xs, theta0)
            };
            let f = std::cell::RefCell::new(&mut eval);
            let v = integrate(&|x| (f.borrow_mut())(x), lo, hi, QUAD_TOL);
            ia[i * p1 + j] = v;
            ia[j * p1 + i] = v;
        }
    }

    let mut ib = vec![0.0; p2 * p2];
    for i in 0..p2 {
        for j in i..p2 {
            let mut a_buf = vec![0.0; model.noise_dim];
            let mut s_buf = [0.0];
            let mut jac = vec![0.0; p2];
            let mut b_buf = [0.0];
            let mut eval = |x: f64| -> f64 {
                let xs = [x];
                model.s_into(&xs, &theta0.alpha, &mut a_buf, &mut s_buf);
                let s = s_buf[0];
                match &model.drift_jacobian_beta {
                    Some(jb) => jb(&xs, &theta0.beta, &mut jac),
                    None => {
                        let grad = model::fd_gradient(
                            &mut |bt: &[f64]| {
                                model.drift_into(&xs, bt, &mut b_buf);
                                b_buf[0]
                            },
                            &theta0.beta,
                        )
                        .expect("drift jacobian by finite differences");
                        jac.copy_from_slice(&grad);
                    }
                }
                jac[i] * jac[j] / s * density(&xs, theta0)
            };
            let f = std::cell::RefCell::new(&mut eval);
            let v = integrate(&|x| (f.borrow_mut())(x), lo, hi, QUAD_TOL);
            ib[i * p2 + j] = v;
            ib[j * p2 + i] = v;
        }
    }
    Ok((ia, ib))
}
