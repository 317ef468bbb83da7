//! Command-line interface: `simulate` writes a sample path to CSV,
//! `test` runs the two-stage test on an observed path, `experiment`
//! drives the Monte Carlo engine from a JSON config.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::hypotest::{self, STAT_KINDS};
use crate::mc::{self, ExperimentConfig, ExperimentResult, Mode};
use crate::model::{self, Hypothesis, ParameterSpace, Theta};
use crate::simulate::{self, SimConfig, StepRule};

#[derive(Parser, Debug)]
#[command(name = "difftest", version, about = "Two-stage hypothesis tests for ergodic diffusions")]
pub struct Cli {
    /// Worker threads for the experiment runner (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a discretely observed diffusion path and write it to CSV.
    Simulate(SimulateArgs),
    /// Run the two-stage test on a stored path.
    Test(TestArgs),
    /// Run a Monte Carlo experiment from a JSON config.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Built-in model name ("ou" or "model2").
    #[arg(long)]
    pub model: String,
    /// Diffusion parameters, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub alpha: Vec<f64>,
    /// Drift parameters, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub beta: Vec<f64>,
    #[arg(long)]
    pub n: usize,
    /// Step size; omitted means h = n^(-2/3).
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, default_value = "0")]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "1.0")]
    pub x0: Vec<f64>,
    #[arg(long, default_value = "10")]
    pub substeps: usize,
    /// Use the exact Ornstein-Uhlenbeck transition instead of Euler.
    #[arg(long)]
    pub exact_ou: bool,
    /// Output CSV path; a ".gz" suffix enables gzip compression.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    /// Input path CSV (as written by `simulate`).
    #[arg(long)]
    pub data: PathBuf,
    /// Built-in model name ("ou" or "model2").
    #[arg(long)]
    pub model: String,
    /// JSON file with the parameter space and the two null hypotheses.
    #[arg(long)]
    pub config: PathBuf,
    /// Significance level per stage.
    #[arg(long, default_value = "0.05")]
    pub level: f64,
    /// Emit the full report as JSON on stdout instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// Experiment config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for summary.json and CSV tables.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also print summary.json to stdout.
    #[arg(long)]
    pub json: bool,
    /// Suppress progress output.
    #[arg(long)]
    pub quiet: bool,
}

/// Hypothesis specification consumed by `difftest test`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    pub space: ParameterSpace,
    pub hyp1: Hypothesis,
    pub hyp2: Hypothesis,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::invalid("config file", format!("{}: {e}", path.display())))
}

/// DIFFTEST_SEED overrides any seed given on the command line or in a
/// config file.
fn seed_override() -> Result<Option<u64>> {
    match std::env::var("DIFFTEST_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::invalid("DIFFTEST_SEED", "must be an unsigned integer")),
        Err(_) => Ok(None),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::invalid("--threads", "must be >= 1"));
        }
        // Ignore the error if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Test(args) => cmd_test(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let m = model::model_by_name(&args.model)
        .ok_or_else(|| Error::invalid("--model", format!("unknown model {:?}", args.model)))?;
    let theta = Theta::new(args.alpha, args.beta);
    if theta.alpha.len() != m.alpha_dim || theta.beta.len() != m.beta_dim {
        return Err(Error::invalid(
            "--alpha/--beta",
            format!("model {:?} needs {} alpha and {} beta values", m.name, m.alpha_dim, m.beta_dim),
        ));
    }
    let seed = seed_override()?.unwrap_or(args.seed);
    let cfg = SimConfig {
        n: args.n,
        h: args.h.map(StepRule::Explicit).unwrap_or(StepRule::NPowMinusTwoThirds),
        x0: args.x0,
        substeps: args.substeps,
        seed,
    };
    let path = if args.exact_ou {
        if args.model != "ou" {
            return Err(Error::invalid("--exact-ou", "only supported for the ou model"));
        }
        simulate::ou_exact(&theta, &cfg)?
    } else {
        simulate::euler_maruyama(&m, &theta, &cfg)?
    };
    simulate::save_path(&path, &args.out)?;
    eprintln!(
        "wrote {} observations (h = {:.6e}) to {}",
        path.n() + 1,
        path.h(),
        args.out.display()
    );
    Ok(())
}

fn cmd_test(args: TestArgs) -> Result<()> {
    let m = model::model_by_name(&args.model)
        .ok_or_else(|| Error::invalid("--model", format!("unknown model {:?}", args.model)))?;
    let spec: TestSpec = read_json(&args.config)?;
    let path = simulate::load_path(&args.data)?;
    if path.dim() != m.state_dim {
        return Err(Error::invalid(
            "--data",
            format!("path dimension {} does not match model {:?}", path.dim(), m.name),
        ));
    }
    let report =
        hypotest::two_step_decision(&path, &m, &spec.space, &spec.hyp1, &spec.hyp2, args.level)?;
    let json = serde_json::to_string_pretty(&report).expect("report serialization");
    if let Some(out) = &args.out {
        fs::write(out, &json)?;
    }
    if args.json {
        println!("{json}");
    } else {
        print_report_table(&report);
    }
    Ok(())
}

fn print_report_table(report: &hypotest::TestReport) {
    println!("two-stage test at level {}", report.level);
    println!(
        "alpha_hat = {:?}  alpha_tilde = {:?}",
        report.alpha_hat, report.alpha_tilde
    );
    println!(
        "beta_hat  = {:?}  beta_tilde  = {:?}",
        report.beta_hat, report.beta_tilde
    );
    println!("{:<10} {:>12} {:>10} {:>8} {:>12} {:>10} {:>8} {:>6}",
        "statistic", "stage1", "p1", "rej1", "stage2", "p2", "rej2", "case");
    for kind in STAT_KINDS {
        let (s1, s2) = (&report.stage1, &report.stage2);
        let (v1, v2) = (s1.statistic(kind), s2.statistic(kind));
        let (p1, p2) = match kind {
            crate::hypotest::StatKind::Lambda => (s1.p_lambda, s2.p_lambda),
            crate::hypotest::StatKind::Wald => (s1.p_wald, s2.p_wald),
            crate::hypotest::StatKind::Rao => (s1.p_rao, s2.p_rao),
        };
        println!(
            "{:<10} {:>12.4} {:>10.4} {:>8} {:>12.4} {:>10.4} {:>8} {:>6}",
            kind.label(),
            v1,
            p1,
            s1.reject(kind),
            v2,
            p2,
            s2.reject(kind),
            report.case(kind)
        );
    }
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = read_json(&args.config)?;
    if let Some(seed) = seed_override()? {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    fs::create_dir_all(&args.out_dir)?;
    let deciles = AtomicUsize::new(0);
    let quiet = args.quiet;
    let result = mc::run_experiment_with_progress(&cfg, |done, total| {
        if quiet {
            return;
        }
        let decile = done * 10 / total;
        if decile > deciles.fetch_max(decile, Ordering::Relaxed) {
            eprintln!("progress: {}% ({done}/{total} replications)", decile * 10);
        }
    })?;
    write_experiment_outputs(&result, &args.out_dir)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&result).expect("result serialization"));
    } else if !quiet {
        print_experiment_summary(&result);
    }
    eprintln!("outputs written to {}", args.out_dir.display());
    Ok(())
}

fn print_experiment_summary(result: &ExperimentResult) {
    for nr in &result.per_n {
        println!("n = {}, h = {:.6e}, failures = {}", nr.n, nr.h, nr.failures);
        println!("{:<10} {:>6} {:>6} {:>6} {:>6} {:>8} {:>8}",
            "statistic", "case1", "case2", "case3", "case4", "rate1", "rate2");
        for s in &nr.stats {
            println!(
                "{:<10} {:>6} {:>6} {:>6} {:>6} {:>8.4} {:>8.4}",
                s.kind.label(),
                s.case_counts[0],
                s.case_counts[1],
                s.case_counts[2],
                s.case_counts[3],
                s.rate1,
                s.rate2
            );
        }
    }
}

/// Writes summary.json plus CSV tables: cases.csv and rates.csv always; for
/// the distribution modes, per-n sample and histogram files suitable for
/// ECDF/density plots.
pub fn write_experiment_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(result).expect("result serialization"),
    )?;

    let mut cases = String::from("n,statistic,case1,case2,case3,case4,failures\n");
    let mut rates = String::from("n,statistic,stage,reject_rate,std_err\n");
    for nr in &result.per_n {
        for s in &nr.stats {
            cases.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                nr.n,
                s.kind.label(),
                s.case_counts[0],
                s.case_counts[1],
                s.case_counts[2],
                s.case_counts[3],
                nr.failures
            ));
            rates.push_str(&format!("{},{},1,{},{}\n", nr.n, s.kind.label(), s.rate1, s.se1));
            rates.push_str(&format!("{},{},2,{},{}\n", nr.n, s.kind.label(), s.rate2, s.se2));
        }
    }
    fs::write(dir.join("cases.csv"), cases)?;
    fs::write(dir.join("rates.csv"), rates)?;

    if matches!(result.config.mode, Mode::NullDist | Mode::LocalAlt) {
        for nr in &result.per_n {
            let mut f = fs::File::create(dir.join(format!("samples_n{}.csv", nr.n)))?;
            writeln!(f, "rep,lambda1,wald1,rao1,lambda2,wald2,rao2")?;
            let rows = nr.stats[0].samples1.len();
            for i in 0..rows {
                writeln!(
                    f,
                    "{},{},{},{},{},{},{}",
                    i,
                    nr.stats[0].samples1[i],
                    nr.stats[1].samples1[i],
                    nr.stats[2].samples1[i],
                    nr.stats[0].samples2[i],
                    nr.stats[1].samples2[i],
                    nr.stats[2].samples2[i]
                )?;
            }
            for s in &nr.stats {
                for (stage, samples) in [(1, &s.samples1), (2, &s.samples2)] {
                    let (edges, counts) = mc::histogram(samples, 50);
                    let mut h = fs::File::create(dir.join(format!(
                        "hist_n{}_{}_stage{}.csv",
                        nr.n,
                        s.kind.label(),
                        stage
                    )))?;
                    writeln!(h, "bin_lo,bin_hi,count")?;
                    for (k, c) in counts.iter().enumerate() {
                        writeln!(h, "{},{},{}", edges[k], edges[k + 1], c)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Process exit code for an error, used by main: 2 invalid input or
/// configuration, 3 optimizer failure, 4 data or numerical failure, 5 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Invalid { .. } => 2,
        Error::AllStartsFailed | Error::OptimizerInconsistency { .. } | Error::TooManyFailures { .. } => 3,
        Error::NotPositiveDefinite { .. }
        | Error::NonFinite(_)
        | Error::UnequalSpacing { .. }
        | Error::MalformedRow { .. }
        | Error::MissingInvariantDensity => 4,
        Error::Io(_) => 5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_partition_error_space() {
        assert_eq!(exit_code(&Error::invalid("x", "y")), 2);
        assert_eq!(exit_code(&Error::AllStartsFailed), 3);
        assert_eq!(exit_code(&Error::MissingInvariantDensity), 4);
        assert_eq!(
            exit_code(&Error::Io(std::io::Error::new(std::io::ErrorKind::Other, "x"))),
            5
        );
    }

    #[test]
    fn seed_env_override_parses() {
        std::env::set_var("DIFFTEST_SEED", "123");
        assert_eq!(seed_override().unwrap(), Some(123));
        std::env::set_var("DIFFTEST_SEED", "abc");
        assert!(seed_override().is_err());
        std::env::remove_var("DIFFTEST_SEED");
        assert_eq!(seed_override().unwrap(), None);
    }
}
