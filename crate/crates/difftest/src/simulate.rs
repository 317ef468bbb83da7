//! Sample-path generation at the high-frequency design (step h_n -> 0,
//! nh_n -> infinity) and CSV path files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{DiffusionModel, Theta};

/// Paths whose state magnitude exceeds this are treated as diverged.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Equally spaced observations (t_i, X_{t_i}), t_i = i h.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    h: f64,
    dim: usize,
    /// (n+1) x dim, row-major
    states: Vec<f64>,
    pub model_name: String,
}

impl SamplePath {
    pub fn new(h: f64, dim: usize, states: Vec<f64>, model_name: String) -> Result<Self> {
        if dim == 0 || states.len() % dim != 0 {
            return Err(Error::invalid("sample path", "state buffer not a multiple of dim"));
        }
        let rows = states.len() / dim;
        if rows < 3 {
            return Err(Error::invalid("sample path", "need n >= 2 observations"));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid("sample path", "step h must be positive and finite"));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample path states"));
        }
        Ok(SamplePath {
            h,
            dim,
            states,
            model_name,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of increments n (the path holds n+1 states).
    pub fn n(&self) -> usize {
        self.states.len() / self.dim - 1
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }
}

/// Step-size rule: explicit h or the standard h_n = n^(-2/3) schedule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum StepRule {
    #[serde(rename = "explicit")]
    Explicit(f64),
    #[serde(rename = "n^-2/3")]
    NPowMinusTwoThirds,
}

impl StepRule {
    pub fn h(&self, n: usize) -> f64 {
        match self {
            StepRule::Explicit(h) => *h,
            StepRule::NPowMinusTwoThirds => (n as f64).powf(-2.0 / 3.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub h: StepRule,
    pub x0: Vec<f64>,
    pub substeps: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("sim config", "n must be >= 2"));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("sim config", "substeps must be >= 1"));
        }
        let h = self.h.h(self.n);
        if !(h > 0.0) || !(h * self.n as f64).is_finite() {
            return Err(Error::invalid("sim config", "n*h must be positive and finite"));
        }
        Ok(())
    }
}

/// SplitMix64-style mix; per-replication seeds are hash(master, index) so
/// replications are order-independent.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Euler-Maruyama on the fine grid h/substeps, recording every substeps-th
/// point. The noise source fills a buffer of standard normal draws per fine
/// step; tests inject zeros through [`euler_maruyama_driven`].
pub fn euler_maruyama_driven(
    model: &DiffusionModel,
    theta: &Theta,
    cfg: &SimConfig,
    noise: &mut dyn FnMut(&mut [f64]),
) -> Result<SamplePath> {
    cfg.validate()?;
    let (d, r) = (model.state_dim, model.noise_dim);
    if cfg.x0.len() != d {
        return Err(Error::invalid("sim config", "x0 dimension mismatch"));
    }
    let h = cfg.h.h(cfg.n);
    let dt = h / cfg.substeps as f64;
    let sdt = dt.sqrt();
    let mut x = cfg.x0.clone();
    let mut b = vec![0.0; d];
    let mut a = vec![0.0; d * r];
    let mut z = vec![0.0; r];
    let mut states = Vec::with_capacity((cfg.n + 1) * d);
    states.extend_from_slice(&x);
    for _ in 0..cfg.n {
        for _ in 0..cfg.substeps {
            model.drift_into(&x, &theta.beta, &mut b);
            model.diffusion_into(&x, &theta.alpha, &mut a);
            noise(&mut z);
            for i in 0..d {
                let mut dw = 0.0;
                for k in 0..r {
                    dw += a[i * r + k] * z[k];
                }
                x[i] += dt * b[i] + sdt * dw;
                if !x[i].is_finite() || x[i].abs() > OVERFLOW_GUARD {
                    return Err(Error::NonFinite("euler_maruyama (path diverged)"));
                }
            }
        }
        states.extend_from_slice(&x);
    }
    SamplePath::new(h, d, states, model.name.clone())
}

/// Euler-Maruyama driven by a ChaCha stream; deterministic given cfg.seed.
pub fn euler_maruyama(model: &DiffusionModel, theta: &Theta, cfg: &SimConfig) -> Result<SamplePath> {
    // reject degenerate diffusion up front (A3 at the initial point)
    crate::model::eval_s(model, &cfg.x0, &theta.alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    euler_maruyama_driven(model, theta, cfg, &mut |z| {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    })
}

/// Exact Ornstein-Uhlenbeck transition sampler:
/// X_{t+h} = beta + (X_t - beta) e^{-h} + alpha sqrt((1 - e^{-2h})/2) Z.
/// Serves as the simulation oracle for Euler accuracy tests and as the
/// generator for local-alternative experiments.
pub fn ou_exact_driven(
    theta: &Theta,
    cfg: &SimConfig,
    noise: &mut dyn FnMut() -> f64,
) -> Result<SamplePath> {
    cfg.validate()?;
    if cfg.x0.len() != 1 || theta.alpha.len() != 1 || theta.beta.len() != 1 {
        return Err(Error::invalid("ou_exact", "OU is 1-dimensional with scalar parameters"));
    }
    let h = cfg.h.h(cfg.n);
    let (alpha, beta) = (theta.alpha[0], theta.beta[0]);
    let decay = (-h).exp();
    let sd = alpha * ((1.0 - (-2.0 * h).exp()) / 2.0).sqrt();
    let mut x = cfg.x0[0];
    let mut states = Vec::with_capacity(cfg.n + 1);
    states.push(x);
    for _ in 0..cfg.n {
        x = beta + (x - beta) * decay + sd * noise();
        if !x.is_finite() {
            return Err(Error::NonFinite("ou_exact"));
        }
        states.push(x);
    }
    SamplePath::new(h, 1, states, "ou".into())
}

pub fn ou_exact(theta: &Theta, cfg: &SimConfig) -> Result<SamplePath> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    ou_exact_driven(theta, cfg, &mut || StandardNormal.sample(&mut rng))
}

/// Write a path as CSV "t,x1[,x2,...]" with 17 significant digits; gzip
/// when the file name ends in ".csv.gz".
pub fn save_path(path: &SamplePath, file: &Path) -> Result<()> {
    let raw = File::create(file)?;
    let mut w: Box<dyn Write> = if is_gz(file) {
        Box::new(BufWriter::new(flate2::write::GzEncoder::new(
            raw,
            flate2::Compression::default(),
        )))
    } else {
        Box::new(BufWriter::new(raw))
    };
    let d = path.dim();
    let mut header = String::from("t");
    for j in 1..=d {
        header.push_str(&format!(",x{j}"));
    }
    writeln!(w, "{header}")?;
    for i in 0..=path.n() {
        let t = i as f64 * path.h();
        let mut line = format!("{:.16e}", t);
        for v in path.state(i) {
            line.push_str(&format!(",{:.16e}", v));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn is_gz(file: &Path) -> bool {
    file.to_string_lossy().ends_with(".gz")
}

pub fn load_path(file: &Path) -> Result<SamplePath> {
    let raw = File::open(file)?;
    let reader: Box<dyn Read> = if is_gz(file) {
        Box::new(flate2::read::GzDecoder::new(raw))
    } else {
        Box::new(raw)
    };
    let mut lines = BufReader::new(reader).lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::MalformedRow {
        row: 0,
        reason: "empty file".into(),
    })?;
    let header = header?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first() != Some(&"t") || cols.len() < 2 {
        return Err(Error::MalformedRow {
            row: 0,
            reason: format!("bad header {header:?}, expected t,x1[,x2,...]"),
        });
    }
    let dim = cols.len() - 1;
    let mut ts = Vec::new();
    let mut states = Vec::new();
    for (row, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected {} fields, got {}", dim + 1, fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::MalformedRow {
                row,
                reason: format!("{s:?}: {e}"),
            })
        };
        ts.push(parse(fields[0])?);
        for f in &fields[1..] {
            states.push(parse(f)?);
        }
    }
    if ts.len() < 3 {
        return Err(Error::MalformedRow {
            row: ts.len(),
            reason: "need at least 3 observations".into(),
        });
    }
    let h = ts[1] - ts[0];
    if !(h > 0.0) {
        return Err(Error::UnequalSpacing { row: 1 });
    }
    for i in 1..ts.len() {
        let dt = ts[i] - ts[i - 1];
        if ((dt - h) / h).abs() >= 1e-9 {
            return Err(Error::UnequalSpacing { row: i });
        }
    }
    SamplePath::new(h, dim, states, String::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_ou_model;

    fn ou_theta() -> Theta {
        Theta::new(vec![1.0], vec![2.0])
    }

    #[test]
    fn drift_only_euler_step() {
        // all Gaussian increments forced to zero: x + h*b = 1 + 0.1*1 = 1.1
        let model = make_ou_model();
        let cfg = SimConfig {
            n: 2,
            h: StepRule::Explicit(0.1),
            x0: vec![1.0],
            substeps: 1,
            seed: 0,
        };
        let p = euler_maruyama_driven(&model, &ou_theta(), &cfg, &mut |z| z.fill(0.0)).unwrap();
        assert!((p.state(1)[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn path_shape_and_determinism() {
        let model = make_ou_model();
        let cfg = SimConfig {
            n: 3,
            h: StepRule::Explicit(0.05),
            x0: vec![1.0],
            substeps: 4,
            seed: 12345,
        };
        let p1 = euler_maruyama(&model, &ou_theta(), &cfg).unwrap();
        let p2 = euler_maruyama(&model, &ou_theta(), &cfg).unwrap();
        assert_eq!(p1.n(), 3);
        assert_eq!(p1.states().len(), 4);
        assert_eq!(p1.states(), p2.states());
    }

    #[test]
    fn ou_exact_mean_reversion_without_noise() {
        let cfg = SimConfig {
            n: 2,
            h: StepRule::Explicit(std::f64::consts::LN_2),
            x0: vec![1.0],
            substeps: 1,
            seed: 0,
        };
        let p = ou_exact_driven(&ou_theta(), &cfg, &mut || 0.0).unwrap();
        assert!((p.state(1)[0] - 1.5).abs() < 1e-15);
        // alpha = 0: fully deterministic mean reversion toward beta
        let det = ou_exact(&Theta::new(vec![0.0], vec![2.0]), &cfg).unwrap();
        assert!((det.state(2)[0] - (2.0 - 0.25)).abs() < 1e-15);
    }

    #[test]
    fn ou_exact_stationary_moments() {
        // h large: draws are nearly independent samples of the invariant law
        let cfg = SimConfig {
            n: 100_000,
            h: StepRule::Explicit(10.0),
            x0: vec![1.0],
            substeps: 1,
            seed: 7,
        };
        let p = ou_exact(&ou_theta(), &cfg).unwrap();
        let n = p.n() as f64;
        let mean = p.states().iter().sum::<f64>() / (n + 1.0);
        let var = p.states().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!((mean - 2.0).abs() < 1e-2, "mean {mean}");
        assert!((var - 0.5).abs() < 1e-2, "var {var}");
    }

    #[test]
    fn increment_moments() {
        let cfg = SimConfig {
            n: 50_000,
            h: StepRule::Explicit(0.01),
            x0: vec![2.0],
            substeps: 1,
            seed: 42,
        };
        let p = ou_exact(&ou_theta(), &cfg).unwrap();
        let n = p.n();
        let mut m = 0.0;
        let mut m2 = 0.0;
        for i in 1..=n {
            let v = (p.state(i)[0] - p.state(i - 1)[0]).powi(2) / p.h();
            m += v;
            m2 += v * v;
        }
        m /= n as f64;
        m2 /= n as f64;
        let se = ((m2 - m * m) / n as f64).sqrt();
        assert!((m - 1.0).abs() < 3.0 * se + 2.0 * p.h(), "mean {m}, se {se}");
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = SimConfig {
            n: 100,
            h: StepRule::Explicit(0.01),
            x0: vec![1.0],
            substeps: 1,
            seed: 3,
        };
        let p = ou_exact(&ou_theta(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for name in ["p.csv", "p.csv.gz"] {
            let f = dir.path().join(name);
            save_path(&p, &f).unwrap();
            let q = load_path(&f).unwrap();
            assert_eq!(p.states(), q.states());
            assert!((p.h() - q.h()).abs() < 1e-15);
        }
    }

    #[test]
    fn unequal_spacing_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("bad.csv");
        std::fs::write(&f, "t,x1\n0.0,1.0\n0.1,1.0\n0.25,1.0\n").unwrap();
        assert!(matches!(load_path(&f), Err(Error::UnequalSpacing { .. })));
    }

    #[test]
    fn malformed_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(load_path(&empty), Err(Error::MalformedRow { .. })));
        let bad = dir.path().join("short.csv");
        std::fs::write(&bad, "t,x1\n0.0,1.0\n0.1\n").unwrap();
        assert!(matches!(load_path(&bad), Err(Error::MalformedRow { .. })));
    }

    #[test]
    fn divergent_path_detected() {
        // explosive drift via a huge beta pull reversed: use alpha large n steps
        let model = make_ou_model();
        let cfg = SimConfig {
            n: 10,
            h: StepRule::Explicit(1e30),
            x0: vec![1.0],
            substeps: 1,
            seed: 1,
        };
        assert!(euler_maruyama(&model, &ou_theta(), &cfg).is_err());
    }

    #[test]
    fn strong_order_one_for_additive_noise() {
        // Coupled Euler vs exact-transition reference driven by the same
        // per-step normals; for additive noise the mean absolute terminal
        // gap should roughly halve when h halves.
        let t_end = 5.0;
        let model = make_ou_model();
        let theta = ou_theta();
        let mut err = [0.0f64; 2];
        let paths = 2000;
        for (k, h) in [0.1f64, 0.05].iter().enumerate() {
            let n = (t_end / h).round() as usize;
            let mut total = 0.0;
            for rep in 0..paths {
                let seed = derive_seed(2024, (k * paths + rep) as u64);
                let cfg = SimConfig {
                    n,
                    h: StepRule::Explicit(*h),
                    x0: vec![1.0],
                    substeps: 1,
                    seed,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let zs: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mut i = 0;
                let pe = euler_maruyama_driven(&model, &theta, &cfg, &mut |z| {
                    z[0] = zs[i];
                    i += 1;
                })
                .unwrap();
                let mut j = 0;
                let px = ou_exact_driven(&theta, &cfg, &mut || {
                    let v = zs[j];
                    j += 1;
                    v
                })
                .unwrap();
                total += (pe.state(n)[0] - px.state(n)[0]).abs();
            }
            err[k] = total / paths as f64;
        }
        let ratio = err[0] / err[1];
        assert!(
            (1.6..=2.6).contains(&ratio),
            "strong-order ratio {ratio} outside [1.6, 2.6]"
        );
    }
}
