use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use obsgain_cli::commands::{self, Report, RunOptions};
use obsgain_cli::{load_scenario, CliError, CliResult};

#[derive(Parser)]
#[command(name = "obsgain", version, about = "Observability-aware piecewise-linear feedback synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML), or a manifest.json from an earlier run.
    scenario: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 4 when any segment optimization hits its iteration cap.
    #[arg(long)]
    require_convergence: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Empirical Gramian and observability index under a constant gain.
    Gramian(ScenarioArgs),
    /// Full segment-wise synthesis with monitors.
    Synthesize(ScenarioArgs),
    /// The same pipeline with the fixed starting gain on every segment.
    Baseline(ScenarioArgs),
    /// Synthesis and baseline side by side, with plots.
    Compare(ScenarioArgs),
    /// Sensitivity gradient against central finite differences.
    CheckGradient(ScenarioArgs),
    /// Built-in acceptance checks.
    Selftest {
        /// Run a single criterion (1-10).
        #[arg(long)]
        criterion: Option<u8>,
        /// Also write selftest.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn with_scenario(args: &ScenarioArgs, f: impl Fn(&obsgain_cli::Scenario, &RunOptions) -> CliResult<Report>) -> CliResult<Report> {
    let sc = load_scenario(&args.scenario)?;
    let opts = RunOptions {
        out_dir: args.out.clone(),
        require_convergence: args.require_convergence,
        scenario_path: args.scenario.display().to_string(),
    };
    f(&sc, &opts)
}

fn dispatch(cmd: &Cmd) -> CliResult<Report> {
    match cmd {
        Cmd::Gramian(a) => with_scenario(a, commands::run_gramian),
        Cmd::Synthesize(a) => with_scenario(a, |s, o| commands::run_single(s, o, true)),
        Cmd::Baseline(a) => with_scenario(a, |s, o| commands::run_single(s, o, false)),
        Cmd::Compare(a) => with_scenario(a, commands::run_compare),
        Cmd::CheckGradient(a) => with_scenario(a, commands::run_check_gradient),
        Cmd::Selftest { criterion, out } => commands::run_selftest(*criterion, out.as_deref()),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Validation(e.to_string().trim_end().to_string())),
    };
    match dispatch(&cli.command) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            match &report.error {
                Some(e) => fail(e),
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => fail(&e),
    }
}
