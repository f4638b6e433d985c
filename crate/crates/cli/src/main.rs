use clap::{Parser, Subcommand};
use deltaproj_cli::runconfig::{self, RunConfig};
use deltaproj_cli::{fixtures, project_cmd, sweep, verify, CliError};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "deltaproj",
    about = "Desk-scale visual projector: budget sweeps, invariant checks, fixture runs",
    version
)]
struct Cli {
    /// Config file; overrides the preset entirely when given.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Built-in configuration to start from.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,

    /// Override the config's RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cost rows across token budgets, with scaling self-checks.
    Sweep {
        /// Write <out> plus a JSON twin next to it; stdout stays quiet.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Stdout format when --out is not given.
        #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
        format: OutFormat,
        /// Price normalization, softmax, and activations alongside the MACs.
        #[arg(long)]
        strict_flops: bool,
        /// Measure desk wall times per row (indicative; breaks rerun identity).
        #[arg(long)]
        timing: bool,
        /// Comma-separated token budgets; defaults to the config's sweep list.
        #[arg(long, value_name = "LIST")]
        budgets: Option<String>,
    },
    /// Run invariant checks and print one line per check.
    Verify {
        /// Which suite to run.
        #[arg(value_enum, default_value_t = verify::Suite::All)]
        suite: verify::Suite,
        /// Add a per-check runtime column (breaks rerun identity).
        #[arg(long)]
        timing: bool,
        /// Debug hook: corrupt one attention input so the windowed-vs-global
        /// check must fail.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Project fixture tensors and write tokens plus a JSON sidecar.
    Project {
        /// Directory holding zpatch.dltn and summary.dltn (positions.dltn
        /// joins in when present).
        #[arg(long, value_name = "DIR", default_value = ".")]
        fixtures: PathBuf,
        /// Output tensor path; the sidecar lands next to it as .json.
        #[arg(long, value_name = "PATH", default_value = "tokens.dltn")]
        out: PathBuf,
        /// Override the config's downsampling scale.
        #[arg(long)]
        scale: Option<usize>,
        /// Record the forward wall time in the sidecar.
        #[arg(long)]
        timing: bool,
    },
    /// Synthesize deterministic fixture tensors for the active config.
    GenFixtures {
        /// Directory to write into (created if missing).
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
        /// Also write the memory centroid positions.
        #[arg(long)]
        with_positions: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            2
        }
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    runconfig::load(cli.config.as_deref(), &cli.preset, cli.seed)
}

/// Prints command output. A consumer that stops reading (`sweep | head`)
/// closes the pipe mid-write; that is a stop request, not a failure.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if out.write_all(text.as_bytes()).and_then(|()| out.flush()).is_err() {
        std::process::exit(0);
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Sweep {
            out,
            format,
            strict_flops,
            timing,
            budgets,
        } => {
            let list = match budgets {
                Some(text) => parse_budget_arg(text)?,
                None => cfg.sweep_budgets.clone(),
            };
            let opt = sweep::SweepOptions {
                strict_flops: *strict_flops,
                timing: *timing,
            };
            let artifact = sweep::run(&cfg, &list, &opt)?;
            match out {
                Some(path) => {
                    let csv = sweep::render_csv(&artifact, opt.timing);
                    std::fs::write(path, csv.as_bytes())
                        .map_err(|e| CliError::Failed(format!("write {}: {e}", path.display())))?;
                    let twin = path.with_extension("json");
                    let json = sweep::render_json(&artifact)?;
                    std::fs::write(&twin, json.as_bytes())
                        .map_err(|e| CliError::Failed(format!("write {}: {e}", twin.display())))?;
                }
                None => match format {
                    OutFormat::Csv => emit(&sweep::render_csv(&artifact, opt.timing)),
                    OutFormat::Json => emit(&format!("{}\n", sweep::render_json(&artifact)?)),
                },
            }
            Ok(0)
        }
        Command::Verify {
            suite,
            timing,
            corrupt,
        } => {
            let checks = verify::run_suite(&cfg, *suite, &verify::Options { corrupt: *corrupt });
            emit(&verify::render(&checks, *timing));
            Ok(if verify::all_pass(&checks) { 0 } else { 1 })
        }
        Command::Project {
            fixtures,
            out,
            scale,
            timing,
        } => {
            let run = match scale {
                Some(s) => {
                    let c = cfg.with_scale(*s);
                    c.validate()?;
                    c
                }
                None => cfg,
            };
            project_cmd::run(&run, fixtures, out, *timing)?;
            Ok(0)
        }
        Command::GenFixtures { out, with_positions } => {
            std::fs::create_dir_all(out)
                .map_err(|e| CliError::Failed(format!("create {}: {e}", out.display())))?;
            fixtures::write_all(&cfg, out, *with_positions)?;
            Ok(0)
        }
    }
}

fn parse_budget_arg(text: &str) -> Result<Vec<usize>, CliError> {
    if text.trim().is_empty() {
        return Err(CliError::Usage("--budgets list is empty".to_string()));
    }
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("bad budget '{}' in --budgets", p.trim())))
        })
        .collect()
}
