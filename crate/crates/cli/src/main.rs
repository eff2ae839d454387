use std::path::PathBuf;
use std::process::ExitCode;

use cfisac_core::config::{parse_config, RunConfig};
use cfisac_core::experiments::{run_case1, run_case2, run_case3, run_detect};
use cfisac_core::report::{self, Stamp};
use cfisac_core::{ConfigError, Error};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cfisac", version, about = "Velocity-aware GLRT sensing experiments for cell-free ISAC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimator timing and per-axis velocity error.
    Case1(Common),
    /// Realized sensing SNR with and without Doppler compensation.
    Case2(Common),
    /// Sensing SNR across subcarrier counts.
    Case3(Common),
    /// Print the detection threshold for the configured false-alarm rate.
    Calibrate(Common),
    /// Run one end-to-end detection and print it as a CSV row.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Simulate the target-absent hypothesis.
        #[arg(long)]
        absent: bool,
        /// Print the column header before the row.
        #[arg(long)]
        header: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// `key=value` override; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    Config(ConfigError),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => Failure::Config(c),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load(c: &Common) -> Result<RunConfig, ConfigError> {
    let mut overrides = c.set.clone();
    if let Some(s) = c.seed {
        overrides.push(format!("run.seed={s}"));
    }
    if let Some(t) = c.trials {
        overrides.push(format!("run.trials={t}"));
    }
    if let Some(d) = &c.out_dir {
        overrides.push(format!("run.out_dir={}", d.display()));
    }
    if let Some(t) = c.threads {
        overrides.push(format!("run.threads={t}"));
    }
    parse_config(c.config.as_deref(), &overrides)
}

fn in_pool<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = match &cli.command {
        Command::Case1(c) | Command::Case2(c) | Command::Case3(c) | Command::Calibrate(c) => c,
        Command::Detect { common, .. } => common,
    };
    let cfg = load(common)?;
    let stamp = Stamp { seed: cfg.seed, config_hash: cfg.config_hash() };
    let sim = &cfg.sim;
    let out = &cfg.out_dir;
    match cli.command {
        Command::Case1(_) => {
            let r = in_pool(&cfg, || run_case1(sim, cfg.trials.unwrap_or(200), cfg.seed))??;
            report::write_file(out, report::CASE1_TIMING, &report::case1_timing_csv(&stamp, &r))?;
            report::write_file(out, report::CASE1_ERRORS, &report::case1_errors_csv(&stamp, &r))?;
        }
        Command::Case2(_) => {
            let rows = in_pool(&cfg, || run_case2(sim, cfg.trials.unwrap_or(300), cfg.seed, &sim.case2_nu_max))??;
            report::write_file(out, report::CASE2_SNR, &report::case2_csv(&stamp, &rows))?;
        }
        Command::Case3(_) => {
            let rows = in_pool(&cfg, || run_case3(sim, cfg.trials.unwrap_or(300), cfg.seed, &sim.case3_nc))??;
            report::write_file(out, report::CASE3_SNR, &report::case3_csv(&stamp, &rows))?;
        }
        Command::Calibrate(_) => {
            let rank = sim.nominal_rank();
            let delta = in_pool(&cfg, || sim.threshold(rank, cfg.seed))??;
            eprintln!("p_fa={} total_rank={rank} noise_var={:e}", sim.detector.p_fa, sim.noise_var());
            println!("{delta:e}");
        }
        Command::Detect { absent, header, .. } => {
            let r = in_pool(&cfg, || run_detect(sim, cfg.seed, !absent))??;
            if header {
                println!("{}", report::DETECT_HEADER);
            }
            println!("{}", report::detect_row(&r));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
