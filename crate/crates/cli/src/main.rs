//! `classfuse`: category-wise fusion of segmentation probability maps with
//! dense-CRF refinement, as a batch pipeline.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 argument errors, 3
//! format/validation errors, 4 budget refusals.

mod commands;
mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use classfuse_core::Error;

#[derive(Parser)]
#[command(name = "classfuse", version, about)]
struct Cli {
    /// Master seed for every stochastic component.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Units of IoU CSV inputs: percent or fraction.
    #[arg(long, global = true, default_value = "percent")]
    units: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pick K expert networks from an IoU matrix by greedy oracle mIoU.
    Select(SelectArgs),
    /// Fuse per-network probability maps with IoU-derived weights.
    Fuse(FuseArgs),
    /// Refine a fused probability map with dense-CRF mean-field inference.
    Refine(RefineArgs),
    /// Score predicted label maps against ground truth (IoU / mIoU).
    Eval(EvalArgs),
    /// Tune CRF parameters against validation mIoU.
    Tune(TuneArgs),
    /// Generate a seeded synthetic benchmark directory.
    Synth(SynthArgs),
    /// Run select -> fuse -> refine -> eval end to end on a benchmark tree.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SelectArgs {
    /// IoU matrix CSV (header: network,<class>...).
    matrix: PathBuf,
    /// How many networks to select.
    #[arg(short, long, default_value_t = classfuse_core::selection::DEFAULT_K)]
    k: usize,
    /// Verify the greedy pick against exhaustive subset enumeration.
    #[arg(long)]
    verify: bool,
    /// Write the selection as JSON.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    /// IoU matrix CSV providing the per-class priors.
    #[arg(long)]
    matrix: PathBuf,
    /// Comma-separated network names (matrix rows) to fuse, in input
    /// order. Defaults to every row.
    #[arg(long, value_delimiter = ',')]
    networks: Vec<String>,
    /// Input CWT1 probability maps, one per selected network.
    #[arg(long, value_delimiter = ',', required = true)]
    inputs: Vec<PathBuf>,
    /// Output CWT1 path for the fused map.
    #[arg(long)]
    output: PathBuf,
    /// Weight amplification exponent (>= 1).
    #[arg(long, default_value_t = classfuse_core::fusion::DEFAULT_ALPHA)]
    alpha: f64,
    /// probability | binarized | uniform
    #[arg(long, default_value = "probability")]
    mode: String,
    /// Optionally export the computed weights as CSV.
    #[arg(long)]
    export_weights: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    /// Fused CWT1 probability map.
    #[arg(long)]
    input: PathBuf,
    /// Image (PPM/PGM) driving the bilateral kernel.
    #[arg(long)]
    image: PathBuf,
    /// Output PGM label map.
    #[arg(long)]
    output: PathBuf,
    /// CRF params JSON; defaults apply when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    /// exact | windowed
    #[arg(long, default_value = "windowed")]
    backend: String,
    /// Window radius multiplier for the windowed backend.
    #[arg(long, default_value_t = classfuse_core::crf::DEFAULT_TRUNCATION_MULTIPLIER)]
    truncation_multiplier: f64,
    /// Dump the final marginals as a CWT1 tensor.
    #[arg(long)]
    q_dump: Option<PathBuf>,
    /// Write a palette-colored overlay PPM of the refined labels.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted PGM label maps.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth PGM label maps (matched by file name).
    #[arg(long)]
    gt: PathBuf,
    /// Number of classes.
    #[arg(long)]
    classes: usize,
    /// Ground-truth label to skip (set 256 to disable).
    #[arg(long, default_value_t = classfuse_core::metrics::DEFAULT_IGNORE_LABEL as u16)]
    ignore_label: u16,
    /// Classes reported but excluded from the mean.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<usize>,
    /// Write the report as JSON.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    /// Benchmark directory (uses its validation split and IoU matrix).
    #[arg(long)]
    bench: PathBuf,
    #[arg(long, default_value_t = classfuse_core::tuner::DEFAULT_TRIALS)]
    trials: usize,
    /// random | smbo
    #[arg(long, default_value = "smbo")]
    strategy: String,
    /// Fusion exponent used to build the fused validation maps.
    #[arg(long, default_value_t = classfuse_core::fusion::DEFAULT_ALPHA)]
    alpha: f64,
    /// Search space JSON; defaults apply when omitted.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Write the best params JSON here.
    #[arg(long)]
    output: PathBuf,
    /// Write the per-trial JSONL log here.
    #[arg(long)]
    trial_log: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the benchmark tree.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 32)]
    val_height: usize,
    #[arg(long, default_value_t = 32)]
    val_width: usize,
    #[arg(long, default_value_t = 10)]
    regions: usize,
    #[arg(long, default_value_t = 5)]
    val_scenes: usize,
    #[arg(long, default_value_t = 10)]
    test_scenes: usize,
    /// Reliability profiles JSON (array); the default complementary trio
    /// applies when omitted.
    #[arg(long)]
    profiles: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline config JSON; flags override individual fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Benchmark-layout input directory.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// IoU matrix CSV; defaults to the benchmark's measured matrix.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    mode: Option<String>,
    /// CRF params JSON.
    #[arg(long)]
    params: Option<PathBuf>,
    /// exact | windowed
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    ignore_label: Option<u16>,
    #[arg(long, value_delimiter = ',')]
    exclude: Option<Vec<usize>>,
    /// Also write palette-colored overlay PPMs.
    #[arg(long)]
    overlay: bool,
}

fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Argument(_) | Error::Io { .. } => 2,
        Error::Format { .. } | Error::Validation(_) => 3,
        Error::Budget(_) => 4,
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: could not configure {} threads: {e}", cli.threads);
            std::process::exit(1);
        }
    }
    let result = match &cli.command {
        Command::Select(args) => commands::select(&cli, args),
        Command::Fuse(args) => commands::fuse(&cli, args),
        Command::Refine(args) => commands::refine(&cli, args),
        Command::Eval(args) => commands::eval(&cli, args),
        Command::Tune(args) => commands::tune(&cli, args),
        Command::Synth(args) => commands::synth(&cli, args),
        Command::Pipeline(args) => pipeline::run(&cli, args),
    };
    if let Err(error) = result {
        eprintln!("error: {error}");
        std::process::exit(exit_code(&error));
    }
}
