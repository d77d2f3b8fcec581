use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::ValueEnum;
use precipnet::channelizer::num_channels;
use precipnet::dataio::{load_dataset, DateRange};
use precipnet::experiment::{prepare, PreparedData};
use precipnet::layers::Activation;
use precipnet::network::{infer_shapes, DepthPooling, ShapePlan};
use precipnet::trainer::{multi_restart_fit, NetworkRunner, RunResult, RunSummary};
use precipnet::{Checkpoint, Experiment, LevelSet, Network, NetworkConfig, SplitSpec, TimeSteps, TrainConfig, Variant};
use serde::Serialize;

use crate::failure::{output_dir, write_json, Context, Failure};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ActivationArg {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DepthPoolingArg {
    Clamp,
    Strict,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// 2d, 3d-time or 3d-vert.
    #[arg(long)]
    variant: Variant,
    /// ts2, ts4 or ts6.
    #[arg(long, default_value = "ts6")]
    timesteps: TimeSteps,
    /// Preset (v1, v2, v3) or comma-separated hPa list; must be present in the dataset.
    #[arg(long, default_value = "v1")]
    levels: LevelSet,
    /// Case label used in comparison tables.
    #[arg(long)]
    label: Option<String>,

    /// Kernel counts of the two convolutions, e.g. 32,64.
    #[arg(long, value_parser = parse_pair)]
    conv_channels: Option<[usize; 2]>,
    #[arg(long)]
    fc_hidden: Option<usize>,
    #[arg(long)]
    kernel_size: Option<usize>,
    #[arg(long)]
    padding: Option<usize>,
    #[arg(long)]
    pool_kernel: Option<usize>,
    #[arg(long)]
    pool_stride: Option<usize>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    /// How pooling treats a depth axis shorter than the pool kernel.
    #[arg(long, value_enum)]
    depth_pooling: Option<DepthPoolingArg>,

    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs without a new validation minimum before stopping.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Base seed; restart i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for restarts.
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    /// Training period YYYY-MM-DD:YYYY-MM-DD (give all three ranges or none).
    #[arg(long)]
    train_range: Option<DateRange>,
    #[arg(long)]
    val_range: Option<DateRange>,
    #[arg(long)]
    test_range: Option<DateRange>,
    /// Without explicit ranges: leading fraction of days used for training.
    #[arg(long, default_value_t = 0.6)]
    train_frac: f64,
    /// Without explicit ranges: fraction of days used for validation.
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,

    /// Output directory (default `$PRECIPNET_OUT/run`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([
            a.parse().map_err(|e| format!("`{a}`: {e}"))?,
            b.parse().map_err(|e| format!("`{b}`: {e}"))?,
        ]),
        _ => Err("expected two comma-separated counts, e.g. 32,64".into()),
    }
}

impl Args {
    fn network_config(&self) -> NetworkConfig {
        let mut c = NetworkConfig::with_variant(self.variant);
        if let Some(v) = self.conv_channels {
            c.conv_channels = v;
        }
        if let Some(v) = self.fc_hidden {
            c.fc_hidden = v;
        }
        if let Some(v) = self.kernel_size {
            c.kernel_size = v;
        }
        if let Some(v) = self.padding {
            c.padding = v;
        }
        if let Some(v) = self.pool_kernel {
            c.pool_kernel = v;
        }
        if let Some(v) = self.pool_stride {
            c.pool_stride = v;
        }
        if let Some(a) = self.activation {
            c.activation = match a {
                ActivationArg::Relu => Activation::Relu,
                ActivationArg::None => Activation::None,
            };
        }
        if let Some(d) = self.depth_pooling {
            c.depth_pooling = match d {
                DepthPoolingArg::Clamp => DepthPooling::Clamp,
                DepthPoolingArg::Strict => DepthPooling::Strict,
            };
        }
        c
    }

    fn train_config(&self) -> TrainConfig {
        let mut c = TrainConfig::default();
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(v) = self.patience {
            c.patience_epochs = v;
        }
        if let Some(v) = self.max_epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.restarts {
            c.restarts = v;
        }
        if let Some(v) = self.seed {
            c.base_seed = v;
        }
        c
    }

    fn split(&self, start: chrono::NaiveDate, days: usize) -> Result<SplitSpec, Failure> {
        match (self.train_range, self.val_range, self.test_range) {
            (Some(t), Some(v), Some(s)) => Ok(SplitSpec::new(t, v, s)?),
            (None, None, None) => Ok(SplitSpec::by_fraction(start, days, self.train_frac, self.val_frac)?),
            _ => Err(Failure::usage(
                "--train-range, --val-range and --test-range must be given together",
            )),
        }
    }
}

fn default_label(variant: Variant, time_steps: TimeSteps, levels: &LevelSet) -> String {
    let preset = [("v1", LevelSet::v1()), ("v2", LevelSet::v2()), ("v3", LevelSet::v3())]
        .into_iter()
        .find(|(_, l)| l == levels)
        .map_or_else(|| format!("{}lev", levels.len()), |(n, _)| n.to_string());
    format!("{variant}-{time_steps}-{preset}")
}

#[derive(Serialize)]
struct RunEntry {
    index: usize,
    #[serde(flatten)]
    summary: RunSummary,
    /// Relative to the output directory; absent for failed runs.
    checkpoint: Option<String>,
}

#[derive(Serialize)]
struct Selected {
    index: usize,
    seed: u64,
    best_val_loss: f64,
    best_epoch: usize,
    checkpoint: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: Vec<String>,
    dataset: String,
    label: &'a str,
    experiment: &'a Experiment,
    network: &'a NetworkConfig,
    train: &'a TrainConfig,
    jobs: usize,
    /// Input channels of the first convolution.
    channels: usize,
    input_shape: Vec<usize>,
    parameter_count: usize,
    shapes: &'a ShapePlan,
    samples: [usize; 3],
    constant_channels: usize,
    selected: Selected,
    runs: Vec<RunEntry>,
}

fn curve_csv(run: &RunResult<Network>) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for (e, (t, v)) in run.train_losses.iter().zip(&run.val_losses).enumerate() {
        let _ = writeln!(s, "{e},{t},{v}");
    }
    s
}

fn checkpoint_of(
    run: &RunResult<Network>,
    label: &str,
    experiment: &Experiment,
    train: &TrainConfig,
    prepared: &PreparedData,
) -> Checkpoint {
    Checkpoint::new(
        Some(label.to_string()),
        experiment.clone(),
        train.clone(),
        run.snapshot.clone(),
        prepared.channel_stats.clone(),
        prepared.target_stats,
        run.seed,
        run.best_val_loss,
        run.best_epoch,
    )
}

pub fn run(args: Args) -> Result<(), Failure> {
    let out = output_dir(args.out.clone(), "run")?;
    let net_config = args.network_config();
    let train = args.train_config();
    train.validate()?;
    if args.jobs == 0 {
        return Err(Failure::usage("--jobs must be at least 1"));
    }

    let dataset = load_dataset(&args.data).with(format!("cannot load dataset {}", args.data.display()))?;
    let dims = dataset.dims();
    let experiment = Experiment {
        variant: args.variant,
        time_steps: args.timesteps,
        levels: args.levels.clone(),
        split: args.split(dataset.start_date(), dims.days)?,
    };
    let layout = experiment.layout(&dataset);
    let channels = num_channels(args.variant, dims.variables, args.levels.len(), args.timesteps.count());
    let plan = infer_shapes(&net_config, &layout.input_shape()).with("network does not fit the input")?;
    let prepared = prepare(&dataset, &experiment).with("cannot prepare training data")?;
    let label = args
        .label
        .clone()
        .unwrap_or_else(|| default_label(args.variant, args.timesteps, &args.levels));
    if plan.pool_depth_clamped {
        eprintln!(
            "note: depth axis of length {} is shorter than the pool kernel; pooling window {:?}",
            plan.pool_window[0], plan.pool_window
        );
    }
    eprintln!(
        "{label}: {} channels, input {:?}, {} train / {} validation / {} test samples, {} restarts",
        channels,
        layout.input_shape(),
        prepared.train.data.len(),
        prepared.validation.data.len(),
        prepared.test.data.len(),
        train.restarts
    );

    let build = |seed| NetworkRunner::new(&net_config, &prepared.train.data, &prepared.validation.data, &train, seed);
    let (best, runs) = multi_restart_fit(build, &train, args.jobs).with("training failed")?;

    fs::create_dir_all(&out).with(format!("cannot create {}", out.display()))?;
    let mut entries = Vec::with_capacity(runs.len());
    for (i, run) in runs.iter().enumerate() {
        let rel = format!("runs/run_{i:03}");
        let dir = out.join(&rel);
        fs::create_dir_all(&dir).with(format!("cannot create {}", dir.display()))?;
        let summary = run.summary();
        write_json(&dir.join("run.json"), &summary)?;
        fs::write(dir.join("curve.csv"), curve_csv(run)).with(format!("cannot write curve in {}", dir.display()))?;
        let checkpoint = if run.is_failed() {
            None
        } else {
            checkpoint_of(run, &label, &experiment, &train, &prepared).save(&dir.join("checkpoint"))?;
            Some(format!("{rel}/checkpoint"))
        };
        entries.push(RunEntry {
            index: i,
            summary,
            checkpoint,
        });
    }
    let chosen = &runs[best];
    let ck = checkpoint_of(chosen, &label, &experiment, &train, &prepared);
    ck.save(&out.join("checkpoint"))?;

    let manifest = Manifest {
        command: std::env::args().collect(),
        dataset: args.data.display().to_string(),
        label: &label,
        experiment: &experiment,
        network: &net_config,
        train: &train,
        jobs: args.jobs,
        channels,
        input_shape: layout.input_shape(),
        parameter_count: chosen.snapshot.parameter_count(),
        shapes: &plan,
        samples: [
            prepared.train.data.len(),
            prepared.validation.data.len(),
            prepared.test.data.len(),
        ],
        constant_channels: ck.meta.constant_channels.len(),
        selected: Selected {
            index: best,
            seed: chosen.seed,
            best_val_loss: chosen.best_val_loss,
            best_epoch: chosen.best_epoch,
            checkpoint: "checkpoint".into(),
        },
        runs: entries,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    let failed = runs.iter().filter(|r| r.is_failed()).count();
    eprintln!(
        "selected run {best} (seed {}), best validation loss {:.6} at epoch {}; {failed} failed runs; wrote {}",
        chosen.seed,
        chosen.best_val_loss,
        chosen.best_epoch,
        out.display()
    );
    Ok(())
}
