use std::path::PathBuf;

use precipnet::metrics::{render_comparison, TableFormat};

use super::evaluate::{ReportFile, REPORT_FILE};
use crate::failure::{read_json, Context, Failure};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// `report.json` files or directories containing one, in row order.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// csv or markdown.
    #[arg(long, default_value = "csv")]
    format: TableFormat,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<(), Failure> {
    let mut rows = Vec::with_capacity(args.reports.len());
    for path in &args.reports {
        let file = if path.is_dir() { path.join(REPORT_FILE) } else { path.clone() };
        let report: ReportFile = read_json(&file)?;
        rows.push((report.label, report.report));
    }
    let table = render_comparison(&rows, args.format)?;
    match args.out {
        Some(out) => std::fs::write(&out, table).with(format!("cannot write {}", out.display())),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}
