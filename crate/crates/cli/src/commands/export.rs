use std::fmt::Write as _;
use std::path::PathBuf;

use precipnet::dataio::{load_dataset, Period};
use precipnet::experiment::evaluate;

use super::load_checkpoint;
use crate::failure::{Context, Failure};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Training output directory or checkpoint directory.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// train, validation or test; all periods when omitted.
    #[arg(long)]
    period: Option<Period>,
    /// Floor predictions at zero.
    #[arg(long)]
    clamp: bool,
    /// CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<(), Failure> {
    let checkpoint = load_checkpoint(&args.run)?;
    let dataset = load_dataset(&args.data).with(format!("cannot load dataset {}", args.data.display()))?;
    let evaluation = evaluate(&checkpoint, &dataset, args.clamp).with("evaluation failed")?;
    let mut csv = String::from("date,obs_mm,pred_mm\n");
    for p in &evaluation.periods {
        if args.period.is_some_and(|want| want != p.period) {
            continue;
        }
        for ((date, obs), pred) in p.dates.iter().zip(&p.obs_mm).zip(&p.pred_mm) {
            let pred = if args.clamp { pred.max(0.0) } else { *pred };
            let _ = writeln!(csv, "{date},{obs},{pred}");
        }
    }
    match args.out {
        Some(out) => std::fs::write(&out, csv).with(format!("cannot write {}", out.display())),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
