use std::fs;
use std::path::PathBuf;

use precipnet::dataio::load_dataset;
use precipnet::experiment::evaluate;
use precipnet::metrics::{render_comparison, TableFormat};
use precipnet::{EvalReport, Experiment};
use serde::{Deserialize, Serialize};

use super::load_checkpoint;
use crate::failure::{output_dir, write_json, Context, Failure};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Training output directory or checkpoint directory.
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Count negative predictions as zero precipitation.
    #[arg(long)]
    clamp: bool,
    /// Output directory (default `$PRECIPNET_OUT/eval`).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub label: String,
    pub experiment: Experiment,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub channels: usize,
    pub parameter_count: usize,
    pub clamp: bool,
    pub report: EvalReport,
}

pub fn run(args: Args) -> Result<(), Failure> {
    let out = output_dir(args.out, "eval")?;
    let checkpoint = load_checkpoint(&args.run)?;
    let dataset = load_dataset(&args.data).with(format!("cannot load dataset {}", args.data.display()))?;
    let evaluation = evaluate(&checkpoint, &dataset, args.clamp).with("evaluation failed")?;
    let meta = &checkpoint.meta;
    let file = ReportFile {
        label: meta.label.clone().unwrap_or_else(|| meta.experiment.variant.to_string()),
        experiment: meta.experiment.clone(),
        seed: meta.seed,
        best_epoch: meta.best_epoch,
        best_val_loss: meta.best_val_loss,
        channels: meta.channels,
        parameter_count: meta.parameter_count,
        clamp: args.clamp,
        report: evaluation.report,
    };
    fs::create_dir_all(&out).with(format!("cannot create {}", out.display()))?;
    write_json(&out.join(REPORT_FILE), &file)?;
    let table = render_comparison(&[(file.label.clone(), file.report)], TableFormat::Markdown)?;
    print!("{table}");
    Ok(())
}
