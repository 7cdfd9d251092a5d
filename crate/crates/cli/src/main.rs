use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use decayinv::experiments::{ExperimentConfig, ExperimentKind, OutputFormat};
use decayinv::Error;

/// Decay-of-inverse experiments on bi-infinite matrices.
#[derive(Parser, Debug)]
#[command(name = "decayinv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalized Toeplitz family: inverse norms and the asymptotic slope.
    ToeplitzSharpness(Common),
    /// Dales-Davie norms of the Toeplitz inverses against the Gevrey shape.
    DdSharpness(Common),
    /// Random and Toeplitz instances against the four decay bounds.
    JaffardCheck(Common),
    /// Iterated product and quotient rules on random instances.
    QuotientVerify(Common),
    /// Besov and hypersingular seminorms with calibration of inversion bounds.
    BesovReport(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format: csv or json.
    #[arg(long)]
    format: Option<OutputFormat>,
    #[arg(long)]
    seed: Option<u64>,
    /// Window size N.
    #[arg(long)]
    window: Option<usize>,
}

impl Command {
    fn split(&self) -> (ExperimentKind, &Common) {
        match self {
            Command::ToeplitzSharpness(c) => (ExperimentKind::ToeplitzSharpness, c),
            Command::DdSharpness(c) => (ExperimentKind::DdSharpness, c),
            Command::JaffardCheck(c) => (ExperimentKind::JaffardCheck, c),
            Command::QuotientVerify(c) => (ExperimentKind::QuotientVerify, c),
            Command::BesovReport(c) => (ExperimentKind::BesovReport, c),
        }
    }
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Parameter(_) | Error::Parse(_) | Error::Json(_))
}

fn load_config(kind: ExperimentKind, args: &Common) -> anyhow::Result<(ExperimentConfig, OutputFormat, Option<PathBuf>)> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg: ExperimentConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if cfg.experiment.parse::<ExperimentKind>().ok() != Some(kind) {
                log::warn!("config names experiment {:?}; running {}", cfg.experiment, kind.name());
            }
            cfg
        }
        None => kind.preset(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.window {
        cfg.window_n = n;
    }
    cfg.validate()?;
    let (file_format, file_path) = match &cfg.output {
        Some(o) => (Some(o.format), Some(o.path.clone())),
        None => (None, None),
    };
    let format = args.format.or(file_format).unwrap_or_default();
    Ok((cfg, format, args.out.clone().or(file_path)))
}

fn secondary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn run(cli: &Cli) -> Result<usize, Failure> {
    let (kind, args) = cli.command.split();
    let (cfg, format, out) = load_config(kind, args).map_err(Failure::Config)?;
    let output = kind.run(&cfg).map_err(|e| {
        if is_config_error(&e) {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    })?;
    let write = || -> anyhow::Result<()> {
        match &out {
            Some(path) => {
                let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                let mut w = BufWriter::new(f);
                output.write_main(format, &mut w)?;
                w.flush()?;
                if format == OutputFormat::Csv {
                    let side = secondary_path(path);
                    let mut buf = Vec::new();
                    if output.write_secondary_csv(&mut buf)? {
                        std::fs::write(&side, buf).with_context(|| format!("writing {}", side.display()))?;
                    }
                }
            }
            None => {
                let stdout = io::stdout();
                let mut w = stdout.lock();
                output.write_main(format, &mut w)?;
                if format == OutputFormat::Csv {
                    writeln!(w)?;
                    output.write_secondary_csv(&mut w)?;
                }
                w.flush()?;
            }
        }
        Ok(())
    };
    write().map_err(Failure::Runtime)?;
    let violations = output.violations(&cfg);
    for v in &violations {
        eprintln!("violation: {v}");
    }
    Ok(violations.len())
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("DECAYINV_THREADS") {
        let n: usize = v.parse().with_context(|| format!("DECAYINV_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
