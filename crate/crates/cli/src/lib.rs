//! Command-line front end: configuration files, presets, runs, batches and
//! oracle reports.

pub mod output;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use posesync::config::{InitialCondition, RotationSampling};
use posesync::montecarlo::{run_montecarlo, MonteCarloSpec};
use posesync::oracle::{self, OracleReport};
use posesync::potential::enumerate_critical;
use posesync::{simulate, Error, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "posesync", version, about = "Hybrid pose synchronization of rigid-body networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// TOML experiment file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in experiment.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Fig2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    Gradcheck,
    Rank,
    Gap,
    Exp,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report the weighting eigenstructure and the synergy parameters.
    CheckParams {
        #[command(flatten)]
        source: Source,
    },
    /// Simulate one experiment and write trace.csv, events.csv, inputs.csv,
    /// summary.txt and plot.gp.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        disable_jumps: bool,
        /// Seed for a random initial condition.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Batch of runs from random initial conditions.
    Montecarlo {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 50)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Translations are drawn from [-half_box, half_box]^3.
        #[arg(long, default_value_t = 5.0)]
        half_box: f64,
        /// Standard deviation of initial twist components.
        #[arg(long, default_value_t = 0.0)]
        twist_std: f64,
        /// Start every agent with the identity rotation.
        #[arg(long)]
        identity_rotations: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a numerical oracle.
    Oracle {
        #[command(flatten)]
        source: Source,
        #[arg(value_enum)]
        which: OracleKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample count for gradcheck and exp; trials per tree size for rank.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Print the experiment as TOML.
    PrintConfig {
        #[command(flatten)]
        source: Source,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("serializing config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("synergy parameters break strict inequalities: {0}")]
    Inequality(String),
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e {
                Error::CertificateViolation { .. } => 2,
                Error::NumericalDivergence { .. } => 3,
                Error::OracleFailure(_) => 4,
                _ => 1,
            },
            CliError::Io { .. }
            | CliError::Parse { .. }
            | CliError::Serialize(_)
            | CliError::Inequality(_) => 1,
            CliError::NotConverged(_) => 5,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_config(path: &Path) -> CliResult<SimConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_config(text: &str) -> Result<SimConfig, toml::de::Error> {
    toml::from_str(text)
}

pub fn config_to_toml(config: &SimConfig) -> CliResult<String> {
    Ok(toml::to_string(config)?)
}

pub fn save_config(config: &SimConfig, path: &Path) -> CliResult<()> {
    fs::write(path, config_to_toml(config)?).map_err(io_err(path))
}

/// Loads the experiment. Validation happens when a command builds it.
pub fn resolve(source: &Source) -> CliResult<SimConfig> {
    match (&source.config, source.preset) {
        (Some(path), _) => load_config(path),
        (None, Some(Preset::Fig2)) | (None, None) => Ok(SimConfig::fig2()),
    }
}

fn vec3(v: &nalgebra::Vector3<f64>) -> String {
    format!("[{:.6}, {:.6}, {:.6}]", v.x, v.y, v.z)
}

/// Text report of the synergy parameters. Fails when a user override breaks
/// one of the strict inequalities.
pub fn cmd_check_params(config: &SimConfig) -> CliResult<String> {
    let exp = config.build()?;
    let w = &exp.system.weight;
    let p = &exp.system.params;
    let mut out = String::new();
    let [l1, l2, l3] = w.eigenvalues();
    let _ = writeln!(out, "W eigenvalues: {l1:.6} {l2:.6} {l3:.6}");
    for (i, v) in w.eigenvectors().iter().enumerate() {
        let _ = writeln!(out, "v{}: {}", i + 1, vec3(v));
    }
    if w.has_repeated_eigenvalues() {
        let _ = writeln!(out, "repeated eigenvalues: the critical set contains a continuum");
    }
    let case = p
        .case
        .number()
        .map_or_else(|| "user-supplied direction".to_string(), |n| n.to_string());
    let _ = writeln!(out, "case: {case}");
    let _ = writeln!(out, "Delta_W*: {:.6}", p.delta_star);
    let _ = writeln!(out, "u_c1: {}", vec3(&p.u_c1));
    let _ = writeln!(out, "u_c2: {}", vec3(&p.u_c2));
    let theta: Vec<String> = p.theta_set.iter().map(|t| format!("{t:.6}")).collect();
    let _ = writeln!(out, "Theta: {{{}}}", theta.join(", "));
    let _ = writeln!(out, "gamma: {:.6} (bound {:.6})", p.gamma, p.gamma_bound());
    let _ = writeln!(out, "delta: {:.6} (bound {:.6})", p.delta, p.delta_bound());
    let crit = enumerate_critical(w);
    if crit.degenerate {
        let _ = writeln!(out, "critical enumeration is degenerate; listing computed eigenvectors only");
    }
    for entry in oracle::gap_entries(w, p) {
        let _ = writeln!(
            out,
            "critical point axis [{:.6}, {:.6}, {:.6}], theta' {:.6}: mu_U = {:.6}, mu_U - delta = {:.6}, chain residual {:.2e}",
            entry.axis[0],
            entry.axis[1],
            entry.axis[2],
            entry.theta_prime,
            entry.mu,
            entry.mu - entry.delta,
            entry.chain_residual
        );
    }
    if exp.warnings.is_empty() {
        let _ = writeln!(out, "all strict inequalities hold");
        Ok(out)
    } else {
        for w in &exp.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        print!("{out}");
        let joined: Vec<String> = exp.warnings.iter().map(|w| w.to_string()).collect();
        Err(CliError::Inequality(joined.join("; ")))
    }
}

/// Simulates `config` and writes the run files into `out`. Returns the summary text.
pub fn cmd_run(config: &SimConfig, out: &Path) -> CliResult<String> {
    let exp = config.build()?;
    let start = Instant::now();
    let trace = simulate(&exp.system, exp.initial, &exp.options)?;
    let wall = start.elapsed();
    fs::create_dir_all(out).map_err(io_err(out))?;
    let m = exp.system.topology.n_edges();
    let n = exp.system.topology.n_agents();
    let write = |name: &str, text: String| -> CliResult<()> {
        let path = out.join(name);
        fs::write(&path, text).map_err(io_err(&path))
    };
    write("trace.csv", output::trace_csv(&trace.records, m, n))?;
    write("events.csv", output::events_csv(&trace.events))?;
    write("inputs.csv", output::inputs_csv(&trace.records, n))?;
    write("plot.gp", output::plot_script(m, n))?;
    let summary = output::summary(
        &trace.outcome,
        trace.events.iter().map(|e| e.edges.len()).sum(),
        &exp.warnings,
        wall,
    );
    write("summary.txt", summary.clone())?;
    let o = &trace.outcome;
    if !o.converged {
        return Err(CliError::NotConverged(format!(
            "not synchronized by t = {} (see {})",
            o.final_time.t,
            out.join("summary.txt").display()
        )));
    }
    if !o.certificates_held() {
        return Err(CliError::Core(Error::CertificateViolation {
            t: o.final_time.t,
            j: o.final_time.j,
            detail: format!("{} violations recorded", o.certificate_violations),
        }));
    }
    Ok(summary)
}

/// Runs the batch and writes `runs.csv` and `aggregate.txt` into `out`.
pub fn cmd_montecarlo(config: &SimConfig, spec: &MonteCarloSpec, out: &Path) -> CliResult<String> {
    let start = Instant::now();
    let report = run_montecarlo(config, spec)?;
    let wall = start.elapsed();
    fs::create_dir_all(out).map_err(io_err(out))?;
    let runs_path = out.join("runs.csv");
    fs::write(&runs_path, output::runs_csv(&report.runs)).map_err(io_err(&runs_path))?;
    log::info!("montecarlo wall time {:.3} s", wall.as_secs_f64());
    let text = output::aggregate(&report.aggregate, spec);
    let agg_path = out.join("aggregate.txt");
    fs::write(&agg_path, &text).map_err(io_err(&agg_path))?;
    let agg = &report.aggregate;
    if agg.converged < agg.runs {
        print!("{text}");
        return Err(CliError::NotConverged(format!(
            "{} of {} runs did not converge with certificates intact",
            agg.runs - agg.converged,
            agg.runs
        )));
    }
    Ok(text)
}

pub fn cmd_oracle(
    config: &SimConfig,
    which: OracleKind,
    seed: u64,
    samples: Option<usize>,
) -> CliResult<OracleReport> {
    let exp = config.build()?;
    let (w, p) = (&exp.system.weight, &exp.system.params);
    let report = match which {
        OracleKind::Gradcheck => oracle::gradcheck(w, p, samples.unwrap_or(500), seed),
        OracleKind::Rank => oracle::rank_check(2..=8, samples.unwrap_or(50), seed),
        OracleKind::Gap => oracle::gap_check(w, p),
        OracleKind::Exp => oracle::exp_check(samples.unwrap_or(1000), seed),
    };
    Ok(report.into_result()?)
}

fn format_oracle(r: &OracleReport) -> String {
    format!(
        "{}: value {:.3e}, tolerance {:.1e}, samples {}, {}\n{}\n",
        r.name,
        r.value,
        r.tolerance,
        r.samples,
        if r.passed { "pass" } else { "fail" },
        r.detail
    )
}

/// Dispatches a parsed command line. Output for successful commands is
/// printed; errors are returned for the caller to map to an exit code.
pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::CheckParams { source } => {
            print!("{}", cmd_check_params(&resolve(&source)?)?);
        }
        Command::Run {
            source,
            disable_jumps,
            seed,
            out,
        } => {
            let mut config = resolve(&source)?;
            if disable_jumps {
                config.flags.disable_jumps = true;
            }
            if let Some(seed) = seed {
                match &mut config.initial {
                    InitialCondition::Random(spec) => spec.seed = seed,
                    _ => log::warn!("--seed ignored: the initial condition is not random"),
                }
            }
            let result = cmd_run(&config, &out);
            match &result {
                Ok(summary) => print!("{summary}"),
                Err(CliError::NotConverged(_)) | Err(CliError::Core(Error::CertificateViolation { .. })) => {
                    if let Ok(text) = fs::read_to_string(out.join("summary.txt")) {
                        print!("{text}");
                    }
                }
                Err(_) => {}
            }
            result?;
        }
        Command::Montecarlo {
            source,
            runs,
            seed,
            half_box,
            twist_std,
            identity_rotations,
            out,
        } => {
            let config = resolve(&source)?;
            let spec = MonteCarloSpec {
                runs,
                seed,
                half_box,
                twist_std,
                rotations: if identity_rotations {
                    RotationSampling::Identity
                } else {
                    RotationSampling::Haar
                },
            };
            print!("{}", cmd_montecarlo(&config, &spec, &out)?);
        }
        Command::Oracle {
            source,
            which,
            seed,
            samples,
        } => {
            let config = resolve(&source)?;
            print!("{}", format_oracle(&cmd_oracle(&config, which, seed, samples)?));
        }
        Command::PrintConfig { source } => {
            let config = resolve(&source)?;
            config.build()?;
            print!("{}", config_to_toml(&config)?);
        }
    }
    Ok(())
}
