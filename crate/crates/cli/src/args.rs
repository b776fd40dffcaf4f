use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};
use polyreg_core::datagen::Precision;
use polyreg_core::motion::BorderPolicy;
use polyreg_core::{GridShape, ModelSpec};
use polyreg_net::{Arch, LossMode, LrDecay, Schedule};

#[derive(Debug, Parser)]
#[command(name = "polyreg", version, about = "Robust polynomial regression with classical and learned estimators")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dump seeded synthetic training pairs.
    Gen(GenArgs),
    /// Fit one dumped pair with a classical estimator or a checkpoint.
    Fit(FitArgs),
    /// Train an encoder and write its checkpoint.
    Train(TrainArgs),
    /// Sweep outlier ratios over several methods and write a CSV table.
    Bench(BenchArgs),
    /// Fit the dominant quadratic motion of a .flo file.
    MotionFit(MotionFitArgs),
    /// Stabilize a frame sequence given its consecutive flows.
    Stabilize(StabilizeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value file; flags given on the command line take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

/// Which estimator runs: a classical one by name, or a checkpoint.
#[derive(Debug, Args)]
pub struct MethodArgs {
    /// lse, ransac or irwls.
    #[arg(long, default_value = "lse")]
    pub method: String,
    /// Use a trained checkpoint instead of --method.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// RANSAC inlier threshold on the residual norm (default: 3 noise sigmas).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Noise level used to derive the RANSAC threshold.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub ransac_iterations: usize,
    #[arg(long, default_value_t = 4.685)]
    pub tukey_c: f64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "scalar")]
    pub spec: ModelSpec,
    /// N for a line, HxW for a lattice (default 64 or 32x32).
    #[arg(long)]
    pub grid: Option<GridShape>,
    /// data1, data2, mixed or eval.
    #[arg(long, default_value = "data1")]
    pub scheme: String,
    /// Fixed outlier ratio of the eval scheme.
    #[arg(long, default_value_t = 0.0)]
    pub ratio: f64,
    /// Override the scheme's noise level.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value = "f32")]
    pub precision: Precision,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Pair dump written by `gen`.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Pair within the dump.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "scalar")]
    pub spec: ModelSpec,
    #[arg(long)]
    pub grid: Option<GridShape>,
    #[arg(long, default_value = "full")]
    pub arch: Arch,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub stacks: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub head_planes: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// constant or cosine.
    #[arg(long, default_value = "constant")]
    pub lr_decay: LrDecay,
    /// data1, data1-then-data2 or data1+data2.
    #[arg(long, default_value = "data1+data2")]
    pub schedule: Schedule,
    /// decoded, coefficients or robust.
    #[arg(long, default_value = "decoded")]
    pub loss: LossMode,
    #[arg(long, default_value_t = 0.5)]
    pub phase_split: f64,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Validation trials per outlier ratio after training (0 skips it).
    #[arg(long, default_value_t = 0)]
    pub validate_trials: usize,
    /// Final checkpoint; the loss curve goes to <out>.loss.csv.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "scalar")]
    pub spec: ModelSpec,
    #[arg(long)]
    pub grid: Option<GridShape>,
    /// Comma-separated classical methods.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "lse,ransac,irwls")]
    pub methods: Vec<String>,
    /// Trained models to include (repeatable).
    #[arg(long = "checkpoint", value_name = "FILE", value_delimiter = ',')]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub ratios: Option<Vec<f64>>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MotionFitArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long, short)]
    pub input: PathBuf,
    /// Parametric flow output.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Per-pixel residual norms as CSV rows.
    #[arg(long)]
    pub residual: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StabilizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Directory of .pgm/.ppm frames, processed in name order.
    #[arg(long)]
    pub frames: PathBuf,
    /// Directory of .flo files, one per consecutive frame pair, in name order.
    #[arg(long)]
    pub flows: PathBuf,
    /// Odd moving-average window; 1 locks every frame to the first.
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    #[arg(long, default_value = "black")]
    pub border: BorderPolicy,
    #[arg(long, short)]
    pub out: PathBuf,
}

/// Manifest entries that describe an artifact rather than a flag.
const INFORMATIONAL: &[&str] = &["command", "name", "checksum", "input_scale", "motion_rescale", "artifact", "config"];

/// Splices the values of a `--config` file in front of the explicit flags,
/// so a flag given on the command line overrides the file. Keys that are
/// not flags of the subcommand are skipped with a warning.
pub fn expand_config(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let (Some(path), Some(sub)) = (path, strs.get(1)) else {
        return Ok(argv);
    };
    let root = Cli::command();
    let Some(cmd) = root.find_subcommand(sub) else {
        return Ok(argv);
    };
    let known: BTreeMap<String, bool> = cmd
        .get_arguments()
        .filter_map(|a| Some((a.get_long()?.to_string(), matches!(a.get_action(), ArgAction::SetTrue))))
        .collect();
    let entries = polyreg_net::manifest::read_kv(std::path::Path::new(&path))?;
    let mut out = argv[..2].to_vec();
    for (k, v) in entries {
        let long = k.replace('_', "-");
        match known.get(&long) {
            Some(true) => {
                if v == "true" {
                    out.push(format!("--{long}").into());
                }
            }
            Some(false) => {
                out.push(format!("--{long}").into());
                out.push(v.into());
            }
            None if INFORMATIONAL.contains(&k.as_str()) => {}
            None => eprintln!("warning: {path}: '{k}' is not an option of {sub}; ignored"),
        }
    }
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}
