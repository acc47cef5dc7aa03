use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use skillshap::commands::{
    explain_command, load_config, preprocess_command, report_command, run_command, synth_command, Overrides,
};
use skillshap::{render_svg_json, ExperimentName, PipelineError};

#[derive(Parser)]
#[command(name = "skillshap", version, about = "Skill-level classification experiments with Shapley explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the base seed and every experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Raw survey CSV to a labeled, encoded dataset.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Grid search, test evaluation and attribution for one or all experiments.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_experiment)]
        experiment: Option<ExperimentName>,
        /// Report test metrics on the undersampled test split.
        #[arg(long)]
        balanced_test: Option<bool>,
    },
    /// Decision plots for chosen rows from a finished run.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_experiment)]
        experiment: ExperimentName,
        #[arg(long, value_delimiter = ',', required = true)]
        rows: Vec<usize>,
    },
    /// Metric tables across finished experiments.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Renders a plot-data JSON document to SVG.
    Render {
        input: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Writes a planted-signal dataset in the preprocessed format.
    Synth {
        #[arg(long, default_value_t = 5000)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

fn parse_experiment(s: &str) -> Result<ExperimentName, String> {
    ExperimentName::parse(s).ok_or_else(|| format!("expected low-medium, high-medium or low-high, got `{s}`"))
}

fn overrides(c: &Common, balanced_test: Option<bool>) -> Overrides {
    Overrides {
        seed: c.seed,
        jobs: c.jobs,
        balanced_test,
    }
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Preprocess { common, input, output } => {
            let config = load_config(&common.config, &overrides(&common, None))?;
            let path = preprocess_command(&config, input.as_deref(), output.as_deref())?;
            println!("{}", path.display());
        }
        Command::Run {
            common,
            experiment,
            balanced_test,
        } => {
            let config = load_config(&common.config, &overrides(&common, balanced_test))?;
            for dir in run_command(&config, experiment)? {
                println!("{}", dir.display());
            }
        }
        Command::Explain { common, experiment, rows } => {
            let config = load_config(&common.config, &overrides(&common, None))?;
            for path in explain_command(&config, experiment, &rows)? {
                println!("{}", path.display());
            }
        }
        Command::Report { common } => {
            let config = load_config(&common.config, &overrides(&common, None))?;
            print!("{}", report_command(&config)?);
        }
        Command::Render { input, output } => {
            let text = std::fs::read_to_string(&input).map_err(PipelineError::io(&input))?;
            let svg = render_svg_json(&text)?;
            let output = output.unwrap_or_else(|| input.with_extension("svg"));
            std::fs::write(&output, svg).map_err(PipelineError::io(&output))?;
            println!("{}", output.display());
        }
        Command::Synth { rows, seed, output } => {
            synth_command(rows, seed, &output)?;
            println!("{}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
