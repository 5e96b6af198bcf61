use std::path::PathBuf;
use std::process::ExitCode;

use cdm_distill_cli::run::{cmd_distill, cmd_eval, cmd_sweep};
use cdm_distill_cli::verify::{cmd_verify, run_verify, ClosedForm, VerifyReport, REPORT_FILE};
use cdm_distill_cli::{CliError, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cdmd",
    version,
    about = "Distribution matching distillation for tabular discrete diffusion"
)]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Distillation seed, overriding `distill.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the oracle identities at the configured size.
    Verify,
    /// Fit the teacher and distill a student.
    Distill,
    /// Exact KL of teacher and student samplers for every configured K.
    Eval {
        /// Also sample this many trajectories per cell and write histograms.
        #[arg(long)]
        histogram: Option<usize>,
    },
    /// Distill and evaluate over every (seed, K) pair.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long = "K", value_delimiter = ',', required = true)]
        steps: Vec<usize>,
    },
    /// Print the default config.
    DefaultConfig,
}

fn print_checks(report: &VerifyReport, say: &dyn Fn(String)) {
    for c in &report.check {
        say(format!(
            "{:<32} {:>10.3e} (tol {:.0e}) {}",
            c.name,
            c.max_deviation,
            c.tolerance,
            if c.passed { "pass" } else { "FAIL" }
        ));
    }
    say(format!(
        "jensen: teacher_mse {:.6e}, student_mse {:.6e}",
        report.jensen.teacher_mse, report.jensen.student_mse
    ));
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.output {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.distill.seed = seed;
    }
    let exp = config.build()?;
    let out = config.output_dir.clone();
    let say = |msg: String| {
        if !cli.quiet {
            eprintln!("{msg}");
        }
    };

    match cli.command {
        Command::Verify => {
            let report = match cmd_verify(&exp, &ClosedForm, &out) {
                Ok(report) => report,
                Err(e) => {
                    // The report is on disk; print what failed before exiting.
                    if let Ok(report) = run_verify(&exp, &ClosedForm) {
                        print_checks(&report, &say);
                    }
                    return Err(e);
                }
            };
            print_checks(&report, &say);
            say(format!("report written to {}", out.join(REPORT_FILE).display()));
        }
        Command::Distill => {
            let summary = cmd_distill(&config, &exp, &out)?;
            say(format!(
                "distilled {} iterations ({} skipped iterations, {} skipped items) into {}",
                exp.distill.iterations,
                summary.skipped_iterations,
                summary.skipped_items,
                out.display()
            ));
        }
        Command::Eval { histogram } => {
            for r in cmd_eval(&exp, &out, histogram)? {
                say(format!("{:<8} K={:<5} kl={:.6e}", r.model, r.steps, r.kl));
            }
        }
        Command::Sweep { seeds, steps } => {
            let path = cmd_sweep(&config, &seeds, &steps, &out)?;
            say(format!("sweep summary written to {}", path.display()));
        }
        Command::DefaultConfig => print!("{}", ExperimentConfig::default().to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap uses 2 for usage errors; here 2 means a numerical failure.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
