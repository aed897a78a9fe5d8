//! `ksplab` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on runtime
//! and file-format errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(
    name = "ksplab",
    version,
    about = "Undersampled multi-coil MRI simulation, reconstruction and evaluation"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a phantom and its fully sampled multi-coil k-space.
    Phantom(PhantomArgs),
    /// Build an undersampling mask and optionally apply it to k-space.
    Mask(MaskArgs),
    /// Reconstruct an image from masked k-space.
    Recon(ReconArgs),
    /// Compare reconstructions with ground truth and write a CSV report.
    Eval(EvalArgs),
    /// Evaluate every loss component and print them as JSON.
    Loss(LossArgs),
    /// Render high-pass filter responses as PGM images.
    FilterViz(FilterVizArgs),
    /// Check analytic loss gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Run the grouped phantom experiment.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "KSPLAB_OUT", default_value = "ksplab-out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PhantomKindArg {
    SheppLogan,
    ShortAxis,
}

#[derive(Debug, Args)]
struct PhantomArgs {
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 10)]
    coils: usize,
    #[arg(long, default_value_t = 1)]
    frames: usize,
    #[arg(long, value_enum, default_value_t = PhantomKindArg::ShortAxis)]
    kind: PhantomKindArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MaskKindArg {
    Uniform,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    Rows,
    Cols,
}

#[derive(Debug, Args)]
struct MaskArgs {
    /// Image height; taken from `--ksp` when given.
    #[arg(long, required_unless_present = "ksp")]
    height: Option<usize>,
    /// Image width; taken from `--ksp` when given.
    #[arg(long, required_unless_present = "ksp")]
    width: Option<usize>,
    #[arg(long, short = 'R', default_value_t = 8)]
    acceleration: usize,
    #[arg(long, default_value_t = 16)]
    acs: usize,
    #[arg(long, value_enum, default_value_t = MaskKindArg::Uniform)]
    kind: MaskKindArg,
    /// Phase-encode axis.
    #[arg(long, value_enum, default_value_t = AxisArg::Cols)]
    axis: AxisArg,
    /// First sampled line of a uniform mask.
    #[arg(long, default_value_t = 0)]
    offset: usize,
    /// Seed of a random mask.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Text mask to write.
    #[arg(long, default_value = "mask.txt")]
    output: PathBuf,
    /// Fully sampled container to undersample.
    #[arg(long)]
    ksp: Option<PathBuf>,
    /// Where to write the masked container; requires `--ksp`.
    #[arg(long, requires = "ksp")]
    masked: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    ZeroFilled,
    Gd,
}

#[derive(Debug, Args)]
struct WeightArgs {
    /// Fidelity weight.
    #[arg(long)]
    alpha1: Option<f64>,
    /// SSIM weight.
    #[arg(long)]
    alpha2: Option<f64>,
    /// Eagle weight.
    #[arg(long)]
    alpha3: Option<f64>,
    /// Perceptual weight.
    #[arg(long)]
    alpha4: Option<f64>,
    /// Regularizer weight.
    #[arg(long)]
    alpha5: Option<f64>,
    /// Regularizer k-space weighting exponent.
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Debug, Args)]
struct ReconArgs {
    /// Masked k-space container.
    #[arg(long)]
    input: PathBuf,
    /// Text mask; defaults to the mask stored in the container.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Gd)]
    method: MethodArg,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
    /// Probe steps `step * 2^k`, k = -4..=3, and keep the best.
    #[arg(long)]
    tune: bool,
    /// Add image-domain losses against `--truth`.
    #[arg(long, requires = "truth")]
    oracle: bool,
    /// Ground-truth image container.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Data-consistency period in iterations; 0 disables it.
    #[arg(long)]
    dc_every: Option<usize>,
    /// Seed of the reference feature extractor.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    weights: WeightArgs,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Reconstructed image container.
    #[arg(long)]
    recon: PathBuf,
    /// Ground-truth image container.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value = "eval")]
    group: String,
    /// Acceleration recorded in the report rows.
    #[arg(long, short = 'R')]
    acceleration: Option<usize>,
    /// Report path; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LossArgs {
    /// Predicted multi-coil k-space.
    #[arg(long)]
    pred: PathBuf,
    /// Fully sampled reference k-space.
    #[arg(long)]
    full: PathBuf,
    /// Ground-truth image container.
    #[arg(long)]
    truth: PathBuf,
    /// Image container to score; defaults to the RSS image of `--pred`.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Sum norms over elements instead of averaging.
    #[arg(long)]
    unnormalized: bool,
    /// Include the perceptual term with the reference extractor of this seed.
    #[arg(long)]
    extractor_seed: Option<u64>,
    #[command(flatten)]
    weights: WeightArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FilterKindArg {
    Butterworth,
    Gaussian,
}

#[derive(Debug, Args)]
struct FilterVizArgs {
    #[arg(long, value_enum, default_value_t = FilterKindArg::Butterworth)]
    kind: FilterKindArg,
    #[arg(long, default_value_t = 0.35)]
    cutoff: f64,
    #[arg(long, default_value_t = 4)]
    order: u32,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Render orders {1,2,4,8} x cutoffs {0.2,0.35,0.5} instead of one filter.
    #[arg(long)]
    sweep: bool,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// fidelity, ssim, eagle, vgg or reg.
    #[arg(long)]
    loss: String,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Finite-difference step; defaults per loss.
    #[arg(long)]
    eps: Option<f64>,
    /// Maximum relative error; defaults per loss.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Manifest JSON; the built-in 11-group manifest when absent.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Print the built-in manifest and exit.
    #[arg(long)]
    print_default: bool,
    /// Tune the descent step on the first group before running.
    #[arg(long)]
    tune_step: bool,
    /// Overrides the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the manifest and `KSPLAB_OUT`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
