use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphdefense::commands::{
    cmd_attack, cmd_convert, cmd_defend, cmd_sweep, cmd_synth, cmd_train,
};
use graphdefense::{ExperimentConfig, GeneratorKind, Result};

/// Adversarial training and evaluation for graph convolutional networks.
///
/// Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
/// failure.
#[derive(Parser, Debug)]
#[command(name = "graphdefense", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Replaces every run seed in the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    generator: Option<GeneratorKind>,
}

#[derive(Args, Debug)]
struct WithParams {
    #[command(flatten)]
    common: Common,
    /// Saved model parameters.
    #[arg(long, value_name = "PATH")]
    params: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a clean model and report its accuracy.
    Train(Common),
    /// Attack a saved model at the configured budgets.
    Attack(WithParams),
    /// Run a defense and evaluate it against the starting model.
    Defend(WithParams),
    /// Defend once per grid point and tabulate post-attack accuracy.
    Sweep(WithParams),
    /// Write the configured synthetic dataset.
    Synth(Common),
    /// Convert a LINQS citation dataset into the native text format.
    Convert(Common),
}

fn setup(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    cfg.apply_overrides(common.seed, common.generator);
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(c) => {
            let (cfg, out) = setup(&c)?;
            let s = cmd_train(&cfg, &out)?;
            println!(
                "clean accuracy {:.4}; parameters in {}",
                s.clean_accuracy,
                s.params_path.display()
            );
        }
        Command::Attack(a) => {
            let (cfg, out) = setup(&a.common)?;
            let params = a
                .params
                .ok_or_else(|| graphdefense::Error::Config("attack needs --params".into()))?;
            let r = cmd_attack(&cfg, &params, &out)?;
            println!(
                "clean accuracy {:.4}; post-attack accuracy {:.4}",
                r.clean_accuracy, r.post_attack_accuracy
            );
        }
        Command::Defend(a) => {
            let (cfg, out) = setup(&a.common)?;
            let r = cmd_defend(&cfg, a.params.as_deref(), &out)?;
            for (name, m) in &r.methods {
                println!(
                    "{name}: clean accuracy {:.4}; post-attack accuracy {:.4}",
                    m.clean_accuracy, m.post_attack_accuracy
                );
            }
        }
        Command::Sweep(a) => {
            let (cfg, out) = setup(&a.common)?;
            let rows = cmd_sweep(&cfg, a.params.as_deref(), &out)?;
            println!(
                "{} grid points written to {}",
                rows.len(),
                out.join("sweep.csv").display()
            );
        }
        Command::Synth(c) => {
            let (cfg, out) = setup(&c)?;
            let d = cmd_synth(&cfg, &out)?;
            report_dataset(&d, &out);
        }
        Command::Convert(c) => {
            let (cfg, out) = setup(&c)?;
            let d = cmd_convert(&cfg, &out)?;
            report_dataset(&d, &out);
        }
    }
    Ok(())
}

fn report_dataset(d: &graphdefense::io::Dataset, out: &Path) {
    let g = &d.graph;
    println!(
        "{} nodes, {} edges, {} features, {} classes written to {}",
        g.num_nodes(),
        g.num_edges(),
        g.num_features(),
        g.num_classes(),
        out.display()
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
