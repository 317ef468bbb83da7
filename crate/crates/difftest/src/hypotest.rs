//! The six test statistics (likelihood-ratio, Wald, Rao score; one triple
//! per stage), chi-squared reference laws, and the two-step Case 1-4
//! decision.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{self, FitResult};
use crate::linalg;
use crate::model::{DiffusionModel, Hypothesis, ParameterSpace};
use crate::quasilik::{self, InfoMatrix, Stage};
use crate::simulate::SamplePath;

/// Statistics this far below zero are optimizer noise and clamp to 0; more
/// negative values mean a failed fit and raise OptimizerInconsistency.
pub const CLAMP_TOL: f64 = 2e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    Lambda,
    Wald,
    Rao,
}

pub const STAT_KINDS: [StatKind; 3] = [StatKind::Lambda, StatKind::Wald, StatKind::Rao];

impl StatKind {
    pub fn label(&self) -> &'static str {
        match self {
            StatKind::Lambda => "lambda",
            StatKind::Wald => "wald",
            StatKind::Rao => "rao",
        }
    }
}

/// One stage of the two-step test.
#[derive(Debug, Clone, Serialize)]
pub struct StageResult {
    pub stage: Stage,
    pub lambda: f64,
    pub wald: f64,
    pub rao: f64,
    pub df: usize,
    pub p_lambda: f64,
    pub p_wald: f64,
    pub p_rao: f64,
    pub reject_lambda: bool,
    pub reject_wald: bool,
    pub reject_rao: bool,
    /// The Rao weight fell back to the identity (singular information).
    pub fallback_flag: bool,
}

impl StageResult {
    pub fn statistic(&self, kind: StatKind) -> f64 {
        match kind {
            StatKind::Lambda => self.lambda,
            StatKind::Wald => self.wald,
            StatKind::Rao => self.rao,
        }
    }

    pub fn reject(&self, kind: StatKind) -> bool {
        match kind {
            StatKind::Lambda => self.reject_lambda,
            StatKind::Wald => self.reject_wald,
            StatKind::Rao => self.reject_rao,
        }
    }
}

/// Stage result together with the fits that produced it.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub result: StageResult,
    pub hat: FitResult,
    pub tilde: FitResult,
}

/// Full two-step report: per statistic type, Case 1-4 per the mapping
/// (reject1, reject2) = (F,F)->1, (F,T)->2, (T,F)->3, (T,T)->4.
#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub stage1: StageResult,
    pub stage2: StageResult,
    pub case_lambda: u8,
    pub case_wald: u8,
    pub case_rao: u8,
    pub alpha_hat: Vec<f64>,
    pub alpha_tilde: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub beta_tilde: Vec<f64>,
    pub level: f64,
}

impl TestReport {
    pub fn case(&self, kind: StatKind) -> u8 {
        match kind {
            StatKind::Lambda => self.case_lambda,
            StatKind::Wald => self.case_wald,
            StatKind::Rao => self.case_rao,
        }
    }
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Lower regularized incomplete gamma P(a, x).
fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series expansion
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        // continued fraction for Q(a, x)
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / 1e-300;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < 1e-300 {
                d = 1e-300;
            }
            c = b + an / c;
            if c.abs() < 1e-300 {
                c = 1e-300;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - (-x + a * x.ln() - ln_gamma(a)).exp() * h
    }
}

/// CDF of the chi-squared law with `df` degrees of freedom.
pub fn chi2_cdf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_p(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// Quantile (inverse CDF) by bisection.
pub fn chi2_quantile(q: f64, df: usize) -> f64 {
    assert!((0.0..1.0).contains(&q), "quantile level must be in (0,1)");
    if q == 0.0 {
        return 0.0;
    }
    let mut hi = df as f64 + 10.0;
    while chi2_cdf(hi, df) < q {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, df) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * (1.0 + hi) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Noncentral chi-squared CDF as the Poisson(c/2)-weighted mixture of
/// central CDFs, truncated when the remaining tail weight drops below 1e-12.
pub fn noncentral_chi2_cdf(x: f64, df: usize, c: f64) -> f64 {
    assert!(c >= 0.0, "noncentrality must be nonnegative");
    if x <= 0.0 {
        return 0.0;
    }
    if c == 0.0 {
        return chi2_cdf(x, df);
    }
    let half_c = c / 2.0;
    let mut weight = (-half_c).exp();
    let mut cum_weight = weight;
    let mut total = weight * chi2_cdf(x, df);
    let mut k = 0usize;
    while 1.0 - cum_weight > 1e-12 && k < 10_000 {
        k += 1;
        weight *= half_c / k as f64;
        cum_weight += weight;
        total += weight * chi2_cdf(x, df + 2 * k);
    }
    total.clamp(0.0, 1.0)
}

fn clamp_statistic(value: f64, name: &'static str) -> Result<f64> {
    if value < -CLAMP_TOL {
        return Err(Error::OptimizerInconsistency {
            statistic: name,
            value,
        });
    }
    Ok(value.max(0.0))
}

struct StatTriple {
    lambda: f64,
    wald: f64,
    rao: f64,
    fallback: bool,
}

/// Shared Lambda/Wald/Rao assembly for both stages. `rate` is n for the
/// alpha stage and n h for the beta stage; `scale_rao` divides the score
/// quadratic form by the same rate.
fn assemble(
    hat: &FitResult,
    tilde: &FitResult,
    raw_info: &[f64],
    info: &InfoMatrix,
    score_tilde: &[f64],
    rate: f64,
    dim: usize,
) -> Result<StatTriple> {
    let lambda = clamp_statistic(-2.0 * (tilde.objective - hat.objective), "lambda")?;
    let diff: Vec<f64> = hat
        .theta_hat
        .iter()
        .zip(&tilde.theta_hat)
        .map(|(a, b)| a - b)
        .collect();
    let wald = clamp_statistic(rate * linalg::quad_form(raw_info, dim, &diff), "wald")?;
    let weight = info.rao_weight();
    let rao = clamp_statistic(
        linalg::quad_form(&weight, dim, score_tilde) / rate,
        "rao",
    )?;
    Ok(StatTriple {
        lambda,
        wald,
        rao,
        fallback: info.singular_fallback_used,
    })
}

fn stage_result(stage: Stage, t: StatTriple, df: usize, level: f64) -> StageResult {
    let crit = chi2_quantile(1.0 - level, df);
    StageResult {
        stage,
        p_lambda: 1.0 - chi2_cdf(t.lambda, df),
        p_wald: 1.0 - chi2_cdf(t.wald, df),
        p_rao: 1.0 - chi2_cdf(t.rao, df),
        reject_lambda: t.lambda > crit,
        reject_wald: t.wald > crit,
        reject_rao: t.rao > crit,
        lambda: t.lambda,
        wald: t.wald,
        rao: t.rao,
        df,
        fallback_flag: t.fallback,
    }
}

/// Stage-1 statistics for H0 on alpha:
///   Lambda = -2(U1(alpha_tilde) - U1(alpha_hat)),
///   W = n (alpha_hat - alpha_tilde)^T I_{a,n}(alpha_hat) (alpha_hat - alpha_tilde),
///   R = n^{-1} score(alpha_tilde)^T Ibar_{a,n}(alpha_hat) score(alpha_tilde).
/// Wald uses the raw information matrix; only Rao applies the identity
/// fallback on the singular event.
pub fn stage1_statistics(
    path: &SamplePath,
    model: &DiffusionModel,
    space: &ParameterSpace,
    hyp: &Hypothesis,
    level: f64,
) -> Result<StageOutcome> {
    if hyp.r1() == 0 {
        return Err(Error::invalid("hypothesis", "stage 1 needs r1 >= 1 fixed alpha components"));
    }
    hyp.validate(model, space)?;
    let hat = estimate::fit_alpha(path, model, space, None)?;
    let tilde = estimate::fit_alpha(path, model, space, Some(hyp))?;
    let n = path.n() as f64;
    let p1 = model.alpha_dim;
    let mut raw = quasilik::hess_u1(path, model, &hat.theta_hat)?;
    raw.iter_mut().for_each(|v| *v *= -1.0 / n);
    let info = quasilik::info_a(path, model, &hat.theta_hat)?;
    let score = quasilik::score_u1(path, model, &tilde.theta_hat)?;
    let triple = assemble(&hat, &tilde, &raw, &info, &score, n, p1)?;
    let result = stage_result(Stage::Alpha, triple, hyp.r1(), level);
    Ok(StageOutcome { result, hat, tilde })
}

/// Stage-2 statistics for H0 on beta, conditioning on the stage-1
/// unconstrained alpha_hat (passed in, not refit). Scaling is n h and
/// df = r2.
pub fn stage2_statistics(
    path: &SamplePath,
    model: &DiffusionModel,
    space: &ParameterSpace,
    hyp: &Hypothesis,
    alpha_hat: &[f64],
    level: f64,
) -> Result<StageOutcome> {
    if hyp.r2() == 0 {
        return Err(Error::invalid("hypothesis", "stage 2 needs r2 >= 1 fixed beta components"));
    }
    hyp.validate(model, space)?;
    let hat = estimate::fit_beta(path, model, space, alpha_hat, None)?;
    let tilde = estimate::fit_beta(path, model, space, alpha_hat, Some(hyp))?;
    let nh = path.n() as f64 * path.h();
    let p2 = model.beta_dim;
    let stage = quasilik::DriftObjective::new(path, model, alpha_hat)?;
    let mut raw = stage.hess(&hat.theta_hat)?;
    raw.iter_mut().for_each(|v| *v *= -1.0 / nh);
    let info = quasilik::info_b(path, model, &hat.theta_hat, alpha_hat)?;
    let score = stage.score(&tilde.theta_hat)?;
    let triple = assemble(&hat, &tilde, &raw, &info, &score, nh, p2)?;
    let result = stage_result(Stage::Beta, triple, hyp.r2(), level);
    Ok(StageOutcome { result, hat, tilde })
}

fn case_of(reject1: bool, reject2: bool) -> u8 {
    match (reject1, reject2) {
        (false, false) => 1,
        (false, true) => 2,
        (true, false) => 3,
        (true, true) => 4,
    }
}

/// The two-stage procedure: test H0 on alpha, then test H0 on beta regardless
/// of the stage-1 outcome, and classify into Case 1-4 per statistic type.
pub fn two_step_decision(
    path: &SamplePath,
    model: &DiffusionModel,
    space: &ParameterSpace,
    hyp1: &Hypothesis,
    hyp2: &Hypothesis,
    level: f64,
) -> Result<TestReport> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::invalid("level", "significance level must be in (0,1)"));
    }
    let s1 = stage1_statistics(path, model, space, hyp1, level)?;
    let s2 = stage2_statistics(path, model, space, hyp2, &s1.hat.theta_hat, level)?;
    Ok(TestReport {
        case_lambda: case_of(s1.result.reject_lambda, s2.result.reject_lambda),
        case_wald: case_of(s1.result.reject_wald, s2.result.reject_wald),
        case_rao: case_of(s1.result.reject_rao, s2.result.reject_rao),
        alpha_hat: s1.hat.theta_hat.clone(),
        alpha_tilde: s1.tilde.theta_hat.clone(),
        beta_hat: s2.hat.theta_hat.clone(),
        beta_tilde: s2.tilde.theta_hat.clone(),
        stage1: s1.result,
        stage2: s2.result,
        level,
    })
}
