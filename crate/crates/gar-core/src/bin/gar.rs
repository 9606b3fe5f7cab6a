use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};

use gar_core::bench::{time_losses, timing_csv};
use gar_core::datasets::{self, DatasetPreset};
use gar_core::experiment::{
    run_ablation, run_experiment, run_sensitivity, save_selected_models, ExperimentConfig,
    PlotKind,
};
use gar_core::metrics::evaluate;
use gar_core::network::{load_checkpoint, predict};

#[derive(Parser)]
#[command(
    name = "gar",
    about = "Gradient-aligned regression: training, experiments and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as CSV.
    Synth {
        /// sine | sqsine
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment (grid x folds x seeds) from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Retrain the selected configuration per fold and save checkpoints.
        #[arg(long, default_value_t = false)]
        save_models: bool,
    },
    /// Run all seven sub-loss mask variants and rank them.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep alpha and batch size for GAR.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the linear-form losses against the quadratic definitional forms.
    Bench {
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 30)]
        repeats: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on a CSV dataset and print metrics as JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated target column names (default: last column).
        #[arg(long, value_delimiter = ',')]
        targets: Vec<String>,
        /// Column preset: concrete | wine_quality | parkinson_total | parkinson_motor
        #[arg(long)]
        preset: Option<String>,
    },
}

fn load_config(path: &PathBuf) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(cfg)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { kind, out } => {
            let data = match kind.as_str() {
                "sine" => datasets::gen_sine(),
                "sqsine" => datasets::gen_squared_sine(),
                other => bail!("unknown synthetic dataset '{other}' (use sine | sqsine)"),
            };
            datasets::write_csv(&data, &out)?;
            println!("wrote {} rows to {}", data.n(), out.display());
        }
        Command::Run {
            config,
            out,
            save_models,
        } => {
            let cfg = load_config(&config)?;
            let report = run_experiment(&cfg)?;
            let files = report.write_files(&out)?;
            if report.curves.is_some() {
                report.emit_plot_data(PlotKind::PredictionCurve, &out)?;
            }
            if !report.traces.is_empty() {
                report.emit_plot_data(PlotKind::Trace, &out)?;
            }
            if save_models {
                let models = save_selected_models(&cfg, &report, &out)?;
                println!("saved {} model checkpoint(s)", models.len());
            }
            for f in files {
                println!("wrote {}", f.display());
            }
            for ms in &report.primary.metrics {
                println!(
                    "{} {}: {:.6} ({:.6})",
                    report.primary.method,
                    ms.metric.name(),
                    ms.test_mean,
                    ms.test_std
                );
            }
        }
        Command::Ablate { config, out } => {
            let cfg = load_config(&config)?;
            let report = run_ablation(&cfg)?;
            report.write_files(&out)?;
            for (name, rank) in &report.mean_ranks {
                println!("{name}: mean rank {rank:.3}");
            }
        }
        Command::Sweep {
            config,
            alphas,
            batch_sizes,
            out,
        } => {
            if alphas.is_empty() && batch_sizes.is_empty() {
                bail!("provide --alphas and/or --batch-sizes");
            }
            let cfg = load_config(&config)?;
            let report = run_sensitivity(&cfg, &alphas, &batch_sizes)?;
            let files = report.write_files(&out)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Bench {
            sizes,
            repeats,
            out,
        } => {
            if sizes.is_empty() {
                bail!("provide --sizes, e.g. --sizes 256,1024,4096");
            }
            let rows = time_losses(&sizes, repeats, 0)?;
            std::fs::write(&out, timing_csv(&rows))?;
            println!("wrote {} timing rows to {}", rows.len(), out.display());
        }
        Command::Eval {
            model,
            data,
            targets,
            preset,
        } => {
            let (params, spec) = load_checkpoint(&model)?;
            let ds = if let Some(name) = preset {
                DatasetPreset::from_name(&name)
                    .ok_or_else(|| anyhow!("unknown preset '{name}'"))?
                    .load(&data)?
            } else if !targets.is_empty() {
                datasets::load_csv(&data, &targets)?
            } else {
                // default: last header column is the target
                let text = std::fs::read_to_string(&data)?;
                let header = text
                    .lines()
                    .next()
                    .ok_or_else(|| anyhow!("empty csv {}", data.display()))?;
                let last = header
                    .split(',')
                    .next_back()
                    .ok_or_else(|| anyhow!("empty header"))?
                    .trim()
                    .trim_matches('"')
                    .to_string();
                datasets::load_csv(&data, &[last])?
            };
            let pred = predict(&params, &spec, &ds.features)?;
            let report = evaluate(&pred, &ds.targets)?;
            println!("{}", report.to_json()?);
        }
    }
    Ok(())
}
