use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hybridimp_core::denoiser::DenoiserConfig;
use hybridimp_core::encode::Routing;
use hybridimp_core::schedule::Spacing;
use hybridimp_core::{Mechanism, Supervision, Task, TrainConfig};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "hybridimp",
    version,
    about = "Two-channel diffusion imputation for mixed-type tables",
    args_override_self = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GlobalArgs {
    /// Master seed; every random choice of the command derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created when absent.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// TOML file whose keys are flag names; top-level keys apply to every
    /// command, `[train]`-style tables to one command. Explicit flags win.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic mixed-type dataset.
    Synth(SynthArgs),
    /// Generate a missingness mask for a complete table.
    Mask(MaskArgs),
    /// Train the two-channel imputer.
    Train(TrainArgs),
    /// Fill the missing cells of a table with a trained checkpoint.
    Impute(ImputeArgs),
    /// Score imputations against ground truth.
    Eval(EvalArgs),
    /// Run one of the ablation grids end to end.
    Ablate(AblateArgs),
}

impl Command {
    pub const NAMES: [&'static str; 6] = ["synth", "mask", "train", "impute", "eval", "ablate"];
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 15)]
    pub d_cont: usize,
    #[arg(long, default_value_t = 15)]
    pub d_cat: usize,
    #[arg(long, default_value_t = 15)]
    pub latent_dim: usize,
    /// Category counts drawn from, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    pub cat_levels: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma_cat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismArg {
    Mcar,
    Mar,
    Mnar,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Mcar => Mechanism::Mcar,
            MechanismArg::Mar => Mechanism::Mar,
            MechanismArg::Mnar => Mechanism::Mnar,
        }
    }
}

pub fn parse_rate(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("rate {v} must lie strictly between 0 and 1"))
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct MaskArgs {
    /// Complete data CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Schema JSON (column name, kind, K or R).
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long, value_enum, default_value_t = MechanismArg::Mcar)]
    pub mechanism: MechanismArg,
    #[arg(long, default_value_t = 0.3, value_parser = parse_rate)]
    pub rate: f64,
    /// MAR rule `target:driver[:rule]` with rule `above-mean`, `below-mean`
    /// or `pNN`; repeatable. `auto` targets every column, each driven by the
    /// next continuous column.
    #[arg(long)]
    pub driver: Vec<String>,
    /// MNAR tail quantile for continuous columns.
    #[arg(long, default_value_t = 0.1)]
    pub mnar_quantile: f64,
    /// MNAR categories masked first, `column:cat[+cat...]`; repeatable.
    #[arg(long)]
    pub mnar_category: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupervisionArg {
    SelfMask,
    ZeroFill,
    MeanFill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoutingArg {
    Hybrid,
    ContinuousOnly,
    DiscreteOnly,
}

impl From<RoutingArg> for Routing {
    fn from(r: RoutingArg) -> Self {
        match r {
            RoutingArg::Hybrid => Routing::Hybrid,
            RoutingArg::ContinuousOnly => Routing::ContinuousOnly,
            RoutingArg::DiscreteOnly => Routing::DiscreteOnly,
        }
    }
}

/// Model and optimizer flags shared by `train` and `ablate`.
#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainFlags {
    /// Diffusion steps T of both channels.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.3)]
    pub self_mask_ratio: f64,
    #[arg(long, value_enum, default_value_t = MechanismArg::Mcar)]
    pub self_mask_scheme: MechanismArg,
    #[arg(long, value_enum, default_value_t = SupervisionArg::SelfMask)]
    pub supervision: SupervisionArg,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
    /// Probability that a batch conditions on the other channel's estimates.
    #[arg(long, default_value_t = 0.5)]
    pub cross_prob: f64,
    #[arg(long, value_enum, default_value_t = RoutingArg::Hybrid)]
    pub routing: RoutingArg,
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 64)]
    pub time_dim: usize,
}

impl TrainFlags {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            epochs: self.epochs,
            patience: self.patience,
            self_mask_ratio: self.self_mask_ratio,
            self_mask_scheme: self.self_mask_scheme.into(),
            supervision: match self.supervision {
                SupervisionArg::SelfMask => Supervision::SelfMask,
                SupervisionArg::ZeroFill => Supervision::ZeroFill,
                SupervisionArg::MeanFill => Supervision::MeanFill,
            },
            lr: self.lr,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            seed,
            validation_fraction: self.validation_fraction,
            cross_prob: self.cross_prob,
            routing: self.routing.into(),
            denoiser: DenoiserConfig {
                hidden: self.hidden,
                depth: self.depth,
                time_dim: self.time_dim,
            },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    /// Data CSV; empty or `NA` cells are missing.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Optional 0/1 mask CSV applied on top of the data's own missing cells.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: TrainFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpacingArg {
    Uniform,
    Quadratic,
}

impl From<SpacingArg> for Spacing {
    fn from(s: SpacingArg) -> Self {
        match s {
            SpacingArg::Uniform => Spacing::Uniform,
            SpacingArg::Quadratic => Spacing::Quadratic,
        }
    }
}

/// Sampling flags shared by `impute` and `ablate`.
#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SampleFlags {
    /// 0 is deterministic DDIM, 1 matches ancestral sampling.
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,
    #[arg(long, value_enum, default_value_t = SpacingArg::Uniform)]
    pub spacing: SpacingArg,
    /// Skip the second pass that feeds each channel the other's output.
    #[arg(long)]
    pub no_refine: bool,
    /// Exchange channel estimates after every reverse step.
    #[arg(long)]
    pub exchange_every_step: bool,
    /// Disable the bound on predicted clean values.
    #[arg(long)]
    pub no_clip: bool,
}

impl SampleFlags {
    pub fn to_options(&self, steps: usize, seed: u64) -> hybridimp_core::ImputeOptions {
        hybridimp_core::ImputeOptions {
            steps,
            eta: self.eta,
            spacing: self.spacing.into(),
            seed,
            refine: !self.no_refine,
            exchange_every_step: self.exchange_every_step,
            clip_x0: if self.no_clip {
                None
            } else {
                hybridimp_core::ImputeOptions::default().clip_x0
            },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ImputeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Reverse steps actually taken (at most the trained T).
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub sample: SampleFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskArg {
    Classify,
    Regress,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Classify => Task::Classify,
            TaskArg::Regress => Task::Regress,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Complete ground-truth CSV.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub imputed: PathBuf,
    /// 0/1 CSV marking the cells that were imputed.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// CSV of per-row labels for the downstream check.
    #[arg(long, requires = "task")]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Column of the labels CSV to use (default: the first).
    #[arg(long)]
    pub label_column: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    TwoChannel,
    SelfMask,
    EtaSteps,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub study: Study,
    /// Complete data CSV; the synthetic generator is used when absent.
    #[arg(long, requires = "schema")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Rows of the synthetic dataset when no data is given.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Missing-data mechanisms of the grid, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mcar")]
    pub mechanisms: Vec<MechanismArg>,
    /// Missing rates of the grid, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.3", value_parser = parse_rate)]
    pub rates: Vec<f64>,
    /// Reverse steps used when imputing (the eta-steps study sets its own).
    #[arg(long, default_value_t = 20)]
    pub sample_steps: usize,
    /// Imputation runs per eta-steps cell.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: TrainFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub sample: SampleFlags,
}
