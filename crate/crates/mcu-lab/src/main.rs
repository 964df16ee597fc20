//! Command-line entry point: run settings end-to-end or stage by stage.

use clap::{Args, Parser, Subcommand};
use mcu_lab::error::Result;
use mcu_lab::experiment::runner::{reevaluate, run_paths, run_setting_until, RunUntil};
use mcu_lab::experiment::{emit_plot, emit_report, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mcu-lab",
    version,
    about = "Mode connectivity in machine unlearning, at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (key = value sections); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the two unlearning seeds with (seed, seed+1)
    #[arg(long)]
    seed: Option<u64>,

    /// Override the output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seeds = (seed, seed.wrapping_add(1));
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the original model (and the shared teachers) only
    TrainBase(CommonArgs),
    /// Produce the two unlearned endpoint checkpoints
    Unlearn(CommonArgs),
    /// Additionally train the Bézier midpoint between the endpoints
    Curve(CommonArgs),
    /// Evaluate all curves and write the CSV/JSON reports and plots
    Eval(CommonArgs),
    /// Run the configured setting end-to-end
    Run(CommonArgs),
    /// Regenerate reports from the persisted checkpoints alone
    Report(CommonArgs),
    /// Render one metric panel as SVG
    Plot {
        #[command(flatten)]
        common: CommonArgs,

        /// Metric column to plot
        #[arg(long)]
        metric: String,

        /// Output file (defaults to the run's plots directory)
        #[arg(long)]
        out_file: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainBase(common) => {
            let cfg = common.load()?;
            let manifest = run_setting_until(&cfg, RunUntil::Base)?;
            print_checkpoints(&cfg, &manifest);
            Ok(())
        }
        Command::Unlearn(common) => {
            let cfg = common.load()?;
            let manifest = run_setting_until(&cfg, RunUntil::Endpoints)?;
            print_checkpoints(&cfg, &manifest);
            Ok(())
        }
        Command::Curve(common) => {
            let cfg = common.load()?;
            let manifest = run_setting_until(&cfg, RunUntil::Curves)?;
            print_checkpoints(&cfg, &manifest);
            Ok(())
        }
        Command::Eval(common) | Command::Run(common) => {
            let cfg = common.load()?;
            let manifest = run_setting_until(&cfg, RunUntil::Full)?;
            print_checkpoints(&cfg, &manifest);
            if let Some(csv) = &manifest.metrics_csv {
                println!("metrics: {}", cfg.out_dir.join(csv).display());
            }
            if let Some(json) = &manifest.report_json {
                println!("report:  {}", cfg.out_dir.join(json).display());
            }
            for plot in &manifest.plots {
                println!("plot:    {}", cfg.out_dir.join(plot).display());
            }
            Ok(())
        }
        Command::Report(common) => {
            let cfg = common.load()?;
            let (csv, json) = emit_report(&cfg)?;
            println!("metrics: {}", csv.display());
            println!("report:  {}", json.display());
            Ok(())
        }
        Command::Plot {
            common,
            metric,
            out_file,
        } => {
            let cfg = common.load()?;
            let (evaluations, _, _) = reevaluate(&cfg)?;
            let path = out_file.unwrap_or_else(|| {
                run_paths(&cfg)
                    .run_dir
                    .join("plots")
                    .join(format!("{metric}.svg"))
            });
            emit_plot(&evaluations, &metric, cfg.tau, &path)?;
            println!("plot:    {}", path.display());
            Ok(())
        }
    }
}

fn print_checkpoints(cfg: &ExperimentConfig, manifest: &mcu_lab::experiment::RunManifest) {
    for (name, rel) in &manifest.checkpoints {
        println!("{name}: {}", cfg.out_dir.join(rel).display());
    }
}
