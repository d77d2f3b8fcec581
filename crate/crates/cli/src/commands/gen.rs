use std::path::PathBuf;

use chrono::NaiveDate;
use precipnet::dataio::{generate_synthetic, save_dataset, Coefficients, SyntheticSpec, AR_COEFFICIENT, CELL_NOISE_STD};
use precipnet::{LevelSet, Precision};
use serde::Serialize;

use crate::failure::{output_dir, write_json, Context, Failure};

pub const GENERATION_FILE: &str = "generation.json";

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, default_value_t = 730)]
    days: usize,
    /// Grid as HxW.
    #[arg(long, default_value = "8x8", value_parser = parse_grid)]
    grid: (usize, usize),
    /// Preset (v1, v2, v3) or comma-separated hPa list.
    #[arg(long, default_value = "v1")]
    levels: LevelSet,
    #[arg(long, default_value_t = 4)]
    vars: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of additive target noise, mm/day.
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    #[arg(long, default_value = "1980-01-01")]
    start_date: NaiveDate,
    #[arg(long, default_value = "f64")]
    precision: Precision,
    /// Weight of the humidity term.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    coef_a: f64,
    /// Weight of the vertical humidity difference times temperature.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    coef_b: f64,
    /// Weight of the 03:00 to 15:00 humidity change.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    coef_c: f64,
    /// Output directory (default `$PRECIPNET_OUT/dataset`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW, e.g. 8x8")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(h)?, parse(w)?))
}

#[derive(Serialize)]
struct Generation<'a> {
    generator: String,
    spec: &'a SyntheticSpec,
    ar_coefficient: f64,
    cell_noise_std: f64,
}

pub fn run(args: Args) -> Result<(), Failure> {
    let out = output_dir(args.out, "dataset")?;
    let spec = SyntheticSpec {
        days: args.days,
        height: args.grid.0,
        width: args.grid.1,
        levels: args.levels,
        variables: args.vars,
        seed: args.seed,
        noise_std: args.noise_std,
        start_date: args.start_date,
        precision: args.precision,
        coefficients: Coefficients {
            a: args.coef_a,
            b: args.coef_b,
            c: args.coef_c,
        },
    };
    let dataset = generate_synthetic(&spec).with("cannot generate dataset")?;
    save_dataset(&dataset, &out).with(format!("cannot write dataset to {}", out.display()))?;
    write_json(
        &out.join(GENERATION_FILE),
        &Generation {
            generator: format!("precipnet {}", env!("CARGO_PKG_VERSION")),
            spec: &spec,
            ar_coefficient: AR_COEFFICIENT,
            cell_noise_std: CELL_NOISE_STD,
        },
    )?;
    eprintln!(
        "wrote {} days ({} .. {}) to {}",
        spec.days,
        dataset.start_date(),
        dataset.end_date(),
        out.display()
    );
    Ok(())
}
