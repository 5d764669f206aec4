//! Scenario runner. `run` executes one config and writes its tables plus a
//! manifest; `validate` checks a config without computing; `suite` runs the
//! release criteria.
//!
//! Exit codes: 0 success, 1 schema or I/O error (nothing written), 2 a
//! numerical guard tripped during computation.

mod config;
mod scenarios;
mod table;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};

use config::OutputFormat;

#[derive(Parser)]
#[command(name = "stinesim", version, about = "Dilated-measurement scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config and write its result tables
    Run {
        /// JSON scenario config
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output path
        #[arg(long)]
        output: Option<PathBuf>,
        /// Override the config's RNG seed
        #[arg(long)]
        seed: Option<u64>,
        /// Report each written file
        #[arg(long)]
        verbose: bool,
    },
    /// Check a scenario config without running it
    Validate {
        /// JSON scenario config
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the release criteria and print a PASS/FAIL line per criterion
    Suite,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version land here with exit code 0; usage errors are
            // schema-class failures
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run { config, output, seed, verbose } => {
            run(&config, output, seed, verbose).map(|()| ExitCode::SUCCESS)
        }
        Command::Validate { config } => validate(&config).map(|()| ExitCode::SUCCESS),
        Command::Suite => Ok(suite()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            classify(&e)
        }
    }
}

/// Guard-class failures (a quantity left its validated regime mid-run) exit
/// with 2; everything else is a config or I/O problem and exits with 1.
fn classify(e: &anyhow::Error) -> ExitCode {
    match e.downcast_ref::<stinesim::Error>() {
        Some(stinesim::Error::NumericalGuard(_)) | Some(stinesim::Error::InvariantViolation(_)) => {
            ExitCode::from(2)
        }
        _ => ExitCode::from(1),
    }
}

fn run(
    config_path: &Path,
    output: Option<PathBuf>,
    seed: Option<u64>,
    verbose: bool,
) -> anyhow::Result<()> {
    let mut cfg = config::load(config_path)?;
    if let Some(path) = output {
        cfg.output.path = path;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let prepared = scenarios::prepare(&cfg)?;

    let started = Instant::now();
    let tables = scenarios::execute(prepared, cfg.seed)?;
    let wall_time_s = started.elapsed().as_secs_f64();

    if let Some(dir) = cfg.output.path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    let mut outputs = Vec::new();
    for (suffix, table) in &tables {
        let path = table::derived_path(&cfg.output.path, suffix);
        let body = match cfg.output.format {
            OutputFormat::Csv => table.to_csv(),
            OutputFormat::Json => table.to_json(),
        };
        fs::write(&path, &body).with_context(|| format!("writing {}", path.display()))?;
        if verbose {
            eprintln!("wrote {} ({} rows)", path.display(), table.rows.len());
        }
        outputs.push(path.display().to_string());
    }

    // data files above are a pure function of (config, seed); only the
    // manifest carries timing
    let manifest = serde_json::json!({
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "config": cfg,
        "library_version": stinesim::VERSION,
        "wall_time_s": wall_time_s,
        "outputs": outputs,
    });
    let manifest_path = {
        let mut os = cfg.output.path.as_os_str().to_owned();
        os.push(".manifest.json");
        PathBuf::from(os)
    };
    fs::write(&manifest_path, format!("{manifest:#}\n"))
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    if verbose {
        eprintln!("wrote {}", manifest_path.display());
    }
    Ok(())
}

fn validate(config_path: &Path) -> anyhow::Result<()> {
    let cfg = config::load(config_path)?;
    scenarios::prepare(&cfg)?;
    println!("ok: {} config at {}", cfg.scenario, config_path.display());
    Ok(())
}

fn suite() -> ExitCode {
    let reports = stinesim::acceptance::run_all();
    for report in &reports {
        println!("{}", report.line());
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        println!("{} criteria passed", reports.len());
        ExitCode::SUCCESS
    } else {
        println!("{failed} of {} criteria failed", reports.len());
        ExitCode::from(1)
    }
}
