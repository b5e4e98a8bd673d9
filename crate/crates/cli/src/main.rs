use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use microgrid_risk_cli::{presets, run, CliError, ScenarioConfig, Scheme};

#[derive(Parser)]
#[command(name = "microgrid-risk", version, about = "Allocation, reserve planning and hedging for renewable microgrids")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; defaults to the scenario's `output_dir`, then `out/<name>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Minimum-variance allocation over generation units.
    Allocate,
    /// Battery reserve plan along a simulated generation path.
    PlanReserve,
    /// Hedge replay along one simulated path.
    SimulateHedge,
    /// Hedge replay over an ensemble of paths.
    MontecarloHedge,
    /// Runs a built-in scenario.
    Preset {
        /// fig2a, fig2b, fig3, fig4 or fig5.
        name: String,
        /// Print the scenario file instead of running it.
        #[arg(long)]
        print: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let Format::Csv = cli.format;
    let (mut cfg, default_dir) = match &cli.command {
        Command::Preset { name, print } => {
            if *print {
                print!("{}", presets::source(name)?);
                return Ok(());
            }
            (presets::load(name)?, Path::new("out").join(name))
        }
        verb => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| CliError::Config("--config <path> is required for this command".into()))?;
            let src = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: cannot read: {e}", path.display())))?;
            let mut cfg = ScenarioConfig::parse(&src, &path.display().to_string())?;
            cfg.scheme = scheme_for(verb, cfg.scheme)?;
            let dir = Path::new("out").join(cfg.scheme.name());
            (cfg, dir)
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    let out = cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or(default_dir);
    let summary = run(&cfg, &out)?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    println!("{json}");
    Ok(())
}

/// Scheme executed by `verb`; the two hedge verbs accept either hedge scheme.
fn scheme_for(verb: &Command, configured: Scheme) -> Result<Scheme, CliError> {
    let wanted = match verb {
        Command::Allocate => Scheme::Allocate,
        Command::PlanReserve => Scheme::Reserve,
        Command::SimulateHedge => Scheme::Hedge,
        Command::MontecarloHedge => Scheme::MontecarloHedge,
        Command::Preset { .. } => return Ok(configured),
    };
    let hedges = [Scheme::Hedge, Scheme::MontecarloHedge];
    if configured == wanted || (hedges.contains(&configured) && hedges.contains(&wanted)) {
        Ok(wanted)
    } else {
        Err(CliError::Config(format!("scenario scheme '{configured}' cannot be run with this command")))
    }
}
