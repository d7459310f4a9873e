use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sramdp::bitcodec::encode;
use sramdp::harness::{
    compare_rr, gen_gaussian, named_pattern, parse_values, perturb_dataset, records_csv,
    run_experiment, write_all_or_nothing, Epsilon, ExperimentConfig, PatternName,
};
use sramdp::mechanism::FailureProfile;
use sramdp::memmodel::{failure_rate_at, voltage_for_failure, CellSpec};
use sramdp::privacy::{epsilon_inf, f_for_epsilon, privacy_report};
use sramdp::recovery::{clr_recover, em_recover, CandidateSet, EmConfig, MomentConstraints};
use sramdp::utility::{delta_pmf, delta_pmf_bruteforce, expected_l1, ul_meter};
use sramdp::{Error, Word};

#[derive(Parser)]
#[command(
    name = "sramdp",
    version,
    about = "SRAM failure-based local differential privacy simulator"
)]
struct Cli {
    /// Master seed; overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Em,
    Clr,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a rounded, clipped Gaussian dataset.
    GenData {
        #[arg(long, default_value_t = 125.0)]
        mean: f64,
        #[arg(long, default_value_t = 20.0)]
        std: f64,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        width: u32,
        /// Clip range `lo:hi`; defaults to the full word range.
        #[arg(long)]
        clip: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Perturb one integer per line through the configured mechanism.
    Perturb {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct the input distribution from perturbed values.
    Recover {
        #[arg(long, value_enum)]
        algo: Algo,
        /// Failure profile JSON: `{"f": [...]}` or a bare array, MSB-first.
        #[arg(long)]
        f_profile: PathBuf,
        /// Observations CSV (`output` column if present, else the first column).
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        omega: Option<String>,
        #[arg(long, default_value_t = 1e-3)]
        delta: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iter: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PMF of the perturbation O - X for a failure profile.
    Pmf {
        /// Comma-separated failure rates, MSB-first.
        #[arg(long, value_delimiter = ',', required = true)]
        f: Vec<f64>,
        /// Enumerate outcomes instead of using the recursion.
        #[arg(long)]
        brute_force: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Failure rate for a privacy budget, and the matching operating voltage.
    Calibrate {
        #[arg(long)]
        epsilon: Epsilon,
        #[arg(long, default_value_t = 4)]
        cells: usize,
    },
    /// Privacy accounting for the configured mechanism.
    PrivacyReport {
        #[arg(long)]
        alpha: Option<f64>,
        /// Values to perturb for IA statistics; defaults to the config dataset.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Report unbounded ε when intact positions exist.
        #[arg(long)]
        strict: bool,
    },
    /// Full pipeline: data, perturbation, IA/UL, recovery, artifacts.
    RunExperiment,
    /// Run the mechanism and per-bit RR side by side.
    CompareRr,
    /// Utility loss of a named failure pattern.
    Ul {
        #[arg(long)]
        pattern: PatternName,
        #[arg(long)]
        epsilon: Epsilon,
        /// Input value; without it the mean over uniform inputs is reported.
        #[arg(long)]
        value: Option<u32>,
    },
}

enum Failure {
    Config(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ZeroEvidence | Error::Infeasible(_) | Error::UnboundedEpsilon(_) => {
                Failure::Numeric(e.to_string())
            }
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn output_path(cli: &Cli, explicit: Option<&PathBuf>) -> Option<PathBuf> {
    match (explicit, &cli.out_dir) {
        (Some(p), Some(dir)) if p.is_relative() => Some(dir.join(p)),
        (Some(p), _) => Some(p.clone()),
        (None, _) => None,
    }
}

fn emit(path: Option<PathBuf>, content: &str) -> CliResult<()> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(&p, content)?;
        }
        None => std::io::stdout().write_all(content.as_bytes())?,
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn parse_range(spec: &str) -> CliResult<(u32, u32)> {
    let (lo, hi) = spec
        .split_once(':')
        .ok_or_else(|| Failure::Config(format!("expected lo:hi, got {spec:?}")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<u32>()
            .map_err(|_| Failure::Config(format!("bad bound {s:?}")))
    };
    Ok((parse(lo)?, parse(hi)?))
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenData {
            mean,
            std,
            count,
            width,
            clip,
            out,
        } => {
            if *width == 0 || *width > 32 {
                return Err(Error::Width(*width).into());
            }
            let max = ((1u64 << width) - 1) as u32;
            let clip = clip
                .as_deref()
                .map(parse_range)
                .transpose()?
                .unwrap_or((0, max));
            let data = gen_gaussian(*mean, *std, *count, *width, clip, cli.seed.unwrap_or(0))?;
            let mut s = String::from("value\n");
            for v in data {
                s.push_str(&format!("{v}\n"));
            }
            emit(output_path(&cli, out.as_ref()), &s)
        }
        Command::Perturb { input, out } => {
            let cfg = load_config(&cli)?;
            let values = parse_values(&read_file(input)?, None)?;
            let mech = cfg.mechanism()?;
            let records = perturb_dataset(&mech, &values, cfg.seed)?;
            emit(output_path(&cli, out.as_ref()), &records_csv(&records))
        }
        Command::Recover {
            algo,
            f_profile,
            obs,
            omega,
            delta,
            max_iter,
            out,
        } => {
            let profile: FailureProfile = serde_json::from_str(&read_file(f_profile)?)
                .map_err(|e| Failure::Config(format!("{}: {e}", f_profile.display())))?;
            let width = profile.width() as u32;
            let omega = match omega {
                Some(spec) => CandidateSet::parse(spec, width)?,
                None => CandidateSet::full(width)?,
            };
            let observations = parse_values(&read_file(obs)?, Some("output"))?
                .into_iter()
                .map(|v| encode(v as u64, width))
                .collect::<Result<Vec<Word>, _>>()?;
            let (dist, converged, iterations) = match algo {
                Algo::Em => {
                    let r = em_recover(
                        &observations,
                        &profile,
                        &omega,
                        &EmConfig::new(*delta, *max_iter)?,
                    )?;
                    (r.distribution, r.converged, r.iterations)
                }
                Algo::Clr => {
                    let r =
                        clr_recover(&observations, &profile, &omega, &MomentConstraints::none())?;
                    (r.distribution, r.converged, r.iterations)
                }
            };
            let mut s = String::from("value,probability\n");
            for (v, p) in omega.values().iter().zip(dist.probs()) {
                s.push_str(&format!("{v},{p:.12}\n"));
            }
            emit(output_path(&cli, out.as_ref()), &s)?;
            if !converged {
                return Err(Failure::Numeric(format!(
                    "recovery did not converge in {iterations} iterations"
                )));
            }
            Ok(())
        }
        Command::Pmf {
            f,
            brute_force,
            out,
        } => {
            let profile = FailureProfile::new(f.clone())?;
            let pmf = if *brute_force {
                delta_pmf_bruteforce(&profile)?
            } else {
                delta_pmf(&profile)?
            };
            let mut s = String::from("a,probability\n");
            for (a, p) in pmf.iter() {
                s.push_str(&format!("{a},{p:e}\n"));
            }
            emit(output_path(&cli, out.as_ref()), &s)
        }
        Command::Calibrate { epsilon, cells } => {
            #[derive(Serialize)]
            struct Calibration {
                epsilon: f64,
                cells: usize,
                f: f64,
                nearest_voltage: Option<f64>,
                f_at_voltage: Option<f64>,
            }
            let f = f_for_epsilon(epsilon.0, *cells)?;
            let spec = CellSpec::six_t();
            let nearest_voltage = voltage_for_failure(&spec, f);
            let f_at_voltage = nearest_voltage
                .map(|v| failure_rate_at(&spec, v))
                .transpose()?;
            let report = Calibration {
                epsilon: epsilon.0,
                cells: *cells,
                f,
                nearest_voltage,
                f_at_voltage,
            };
            emit(None, &to_json(&report))
        }
        Command::PrivacyReport {
            alpha,
            input,
            strict,
        } => {
            let cfg = load_config(&cli)?;
            let mech = cfg.mechanism()?;
            let values = match input {
                Some(p) => parse_values(&read_file(p)?, None)?,
                None => cfg.load_dataset()?,
            };
            let observations = perturb_dataset(&mech, &values, cfg.seed)?
                .into_iter()
                .map(|r| encode(r.output as u64, cfg.width))
                .collect::<Result<Vec<_>, _>>()?;
            let report = privacy_report(mech.profile(), *alpha, Some(&observations), *strict)?;
            let content = to_json(&report);
            emit(
                cli.out_dir.as_ref().map(|d| d.join("privacy_report.json")),
                &content,
            )
        }
        Command::RunExperiment => {
            let cfg = load_config(&cli)?;
            let out = run_experiment(&cfg)?;
            if let Some(dir) = &cli.out_dir {
                out.write_artifacts(dir, "")?;
            }
            emit(None, &to_json(&out.record))
        }
        Command::CompareRr => {
            let cfg = load_config(&cli)?;
            let out = compare_rr(&cfg)?;
            let report = to_json(&out.report());
            if let Some(dir) = &cli.out_dir {
                let mut files = Vec::new();
                for (prefix, run) in [("sram_", &out.sram), ("rr_", &out.rr)] {
                    files.push((format!("{prefix}records.csv"), run.detail_csv()));
                    files.push((format!("{prefix}histogram.csv"), run.histogram_csv()));
                }
                files.push(("compare.json".to_string(), report.clone()));
                write_all_or_nothing(dir, &files)?;
            }
            emit(None, &report)
        }
        Command::Ul {
            pattern,
            epsilon,
            value,
        } => {
            #[derive(Serialize)]
            struct UlReport {
                pattern: String,
                epsilon: f64,
                epsilon_inf: f64,
                f: Vec<f64>,
                #[serde(skip_serializing_if = "Option::is_none")]
                value: Option<u32>,
                ul: f64,
            }
            let profile = named_pattern(*pattern, epsilon.0)?;
            let ul = match value {
                Some(v) => ul_meter(&encode(*v as u64, 8)?, &profile)?,
                None => expected_l1(&profile)?,
            };
            let report = UlReport {
                pattern: pattern.to_string(),
                epsilon: epsilon.0,
                epsilon_inf: epsilon_inf(&profile),
                f: profile.as_slice().to_vec(),
                value: *value,
                ul,
            };
            emit(None, &to_json(&report))
        }
    }
}
