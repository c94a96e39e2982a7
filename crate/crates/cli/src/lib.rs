//! `sisgf` command-line front end: `run`, `verify` and `table`.

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sisgf_core::bench::{read_csv, render_pivot, run_experiment, write_csv, BenchError, Execution};
use sisgf_core::sisgf::{ScheduleError, SisgfError};
use sisgf_core::verify::{run_suites, Scope, VerifyOptions};

pub use config::{ConfigError, RunConfig, ValidatedRun};

/// Directory that replaces the config's output directory when set.
pub const OUTPUT_DIR_ENV: &str = "SISGF_OUTPUT_DIR";
pub const DEFAULT_OUTPUT: &str = "results.csv";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sisgf", version, about = "Sparsity-inducing zeroth-order optimization benchmarks")]
pub struct Cli {
    /// Worker threads for replications; 1 runs sequentially.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Run the self-check suites.
    Verify {
        #[arg(long, default_value = "all")]
        scope: Scope,
    },
    /// Merge result CSVs into one table.
    Table {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

/// Parse `args` (program name first) and dispatch. Returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return if code == 0 { EXIT_OK } else { EXIT_CONFIG };
        }
    };
    let exec = match cli.jobs {
        None => Execution::Parallel,
        Some(1) => Execution::Sequential,
        Some(n) => Execution::ParallelWith(n as usize),
    };
    match cli.command {
        Command::Run { config } => {
            let output_dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
            cmd_run(&config, cli.seed, exec, output_dir.as_deref(), out, err)
        }
        Command::Verify { scope } => {
            let opts = VerifyOptions {
                seed: cli.seed.unwrap_or(0),
                ..VerifyOptions::default()
            };
            cmd_verify(scope, &opts, out)
        }
        Command::Table { csv } => cmd_table(&csv, out, err),
    }
}

/// Where the CSV of a run goes.
pub fn output_path(configured: Option<&Path>, output_dir: Option<&Path>) -> PathBuf {
    let file = configured.unwrap_or(Path::new(DEFAULT_OUTPUT));
    match output_dir {
        Some(dir) => dir.join(file.file_name().unwrap_or(file.as_os_str())),
        None => file.to_path_buf(),
    }
}

pub fn cmd_run(
    config_path: &Path,
    seed: Option<u64>,
    exec: Execution,
    output_dir: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let text = match fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "{}: {e}", config_path.display());
            return EXIT_CONFIG;
        }
    };
    let validated = match RunConfig::parse(&text).and_then(|c| c.validate(&text)) {
        Ok(v) => v,
        Err(e) => {
            let _ = writeln!(err, "{}: {e}", config_path.display());
            return EXIT_CONFIG;
        }
    };
    let ValidatedRun {
        mut plan,
        key_label,
        output,
    } = validated;
    if let Some(s) = seed {
        plan.seed = s;
    }
    log::info!(
        "running {} cells x {} algorithms x {} replications",
        plan.sweep.cells().len(),
        plan.algorithms.len(),
        plan.replications
    );
    let table = match run_experiment(&plan, exec) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return bench_exit_code(&e);
        }
    };
    for cell in &table.cells {
        if let Some(o) = cell.outcomes.iter().find(|o| o.queries != o.expected_queries) {
            let _ = writeln!(
                err,
                "error: {} at {} used {} queries, expected {}",
                cell.algorithm, cell.key, o.queries, o.expected_queries
            );
            return EXIT_FAILURE;
        }
    }
    let rows = table.summary();
    let path = output_path(output.as_deref(), output_dir);
    if let Err(e) = File::create(&path)
        .map_err(|e| BenchError::Csv(e.into()))
        .and_then(|f| write_csv(&rows, BufWriter::new(f)))
    {
        let _ = writeln!(err, "error: writing {}: {e}", path.display());
        return EXIT_FAILURE;
    }
    let _ = write!(out, "{}", render_pivot(&rows, key_label));
    let _ = writeln!(err, "wrote {}", path.display());
    EXIT_OK
}

/// Exit status for a failed experiment.
pub fn bench_exit_code(e: &BenchError) -> i32 {
    match e {
        BenchError::Schedule(ScheduleError::BudgetTooSmall { .. })
        | BenchError::Sisgf {
            source: SisgfError::Schedule(ScheduleError::BudgetTooSmall { .. }),
            ..
        } => EXIT_BUDGET,
        BenchError::Config(_) | BenchError::Spec(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

pub fn cmd_verify(scope: Scope, opts: &VerifyOptions, out: &mut dyn Write) -> i32 {
    let reports = run_suites(scope, opts);
    let mut all_ok = true;
    for r in &reports {
        all_ok &= r.ok();
        let _ = writeln!(
            out,
            "{:<12} {:>6} passed {:>6} failed  {}",
            r.name,
            r.passed,
            r.failed,
            if r.ok() { "ok" } else { "FAIL" }
        );
        for f in &r.failures {
            let _ = writeln!(out, "    {f}");
        }
    }
    if all_ok {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

pub fn cmd_table(paths: &[PathBuf], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if paths.is_empty() {
        let _ = writeln!(err, "error: no CSV files given");
        return EXIT_CONFIG;
    }
    let mut rows = Vec::new();
    for p in paths {
        let parsed = File::open(p)
            .map_err(|e| BenchError::Csv(e.into()))
            .and_then(read_csv);
        match parsed {
            Ok(r) => rows.extend(r),
            Err(e) => {
                let _ = writeln!(err, "{}: {e}", p.display());
                return EXIT_CONFIG;
            }
        }
    }
    let _ = write!(out, "{}", render_pivot(&rows, "dim_or_budget"));
    EXIT_OK
}
