use precipnet::gradcheck::{run_gradcheck, GradcheckOptions, DEFAULT_STEP, DEFAULT_TOLERANCE};

use crate::failure::Failure;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Random instances per check.
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
}

pub fn run(args: Args) -> Result<(), Failure> {
    let options = GradcheckOptions {
        instances: args.instances,
        step: args.step,
        tolerance: args.tolerance,
        seed: args.seed,
    };
    let results = run_gradcheck(&options)?;
    println!("{:<16} {:>9} {:>14}  result", "check", "instances", "max rel error");
    for r in &results {
        let verdict = if r.passed { "ok" } else { "FAIL" };
        println!("{:<16} {:>9} {:>14.3e}  {verdict}", r.name, r.instances, r.max_rel_error);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::training(format!(
            "gradient check above {:e}: {}",
            args.tolerance,
            failed.join(", ")
        )))
    }
}
