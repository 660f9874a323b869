//! Subcommand implementations (everything except the end-to-end pipeline).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use classfuse_core::crf::{mean_field_dense_exact, mean_field_windowed, CrfParams};
use classfuse_core::error::{Error, Result};
use classfuse_core::fusion::{
    compute_weights, fuse_binarized, fuse_probability_maps, FusionConfig, FusionMode,
    FusionWeights,
};
use classfuse_core::io;
use classfuse_core::metrics::{iou_report, ConfusionMatrix};
use classfuse_core::palette::colorize_labels;
use classfuse_core::selection::{brute_force_select, greedy_select, IouMatrix, Units};
use classfuse_core::synth;
use classfuse_core::tensor::{LabelMap, ProbabilityMap};
use classfuse_core::tuner::{self, Strategy, ValidationItem};

use crate::{Cli, EvalArgs, FuseArgs, RefineArgs, SelectArgs, SynthArgs, TuneArgs};

pub fn units(cli: &Cli) -> Result<Units> {
    Units::from_str(&cli.units)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::validation(format!("JSON encoding failed: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn select(cli: &Cli, args: &SelectArgs) -> Result<()> {
    let matrix = IouMatrix::from_csv_path(&args.matrix, units(cli)?)?;
    let result = greedy_select(&matrix, args.k)?;
    println!("step  network                     oracle mIoU");
    for (step, (idx, miou)) in result
        .ordered_indices
        .iter()
        .zip(&result.per_step_miou)
        .enumerate()
    {
        println!(
            "{:>4}  {:<26}  {:>10.2}",
            step + 1,
            matrix.network_names()[*idx],
            miou * 100.0
        );
    }
    if args.verify {
        let brute = brute_force_select(&matrix, args.k)?;
        println!(
            "exhaustive optimum: {:.4} (greedy {:.4}, gap {:.2e})",
            brute.oracle_miou * 100.0,
            result.oracle_miou * 100.0,
            brute.oracle_miou - result.oracle_miou
        );
    }
    if let Some(path) = &args.output {
        write_json(path, &result)?;
    }
    Ok(())
}

/// The fusion weights an invocation asked for: IoU-derived unless uniform
/// mode is selected.
pub fn resolve_weights(matrix: &IouMatrix, config: &FusionConfig) -> Result<FusionWeights> {
    match config.mode {
        FusionMode::Uniform => FusionWeights::uniform(matrix.networks(), matrix.classes()),
        _ => compute_weights(matrix, config.alpha),
    }
}

pub fn run_fusion(
    maps: &[ProbabilityMap],
    weights: &FusionWeights,
    mode: FusionMode,
) -> Result<ProbabilityMap> {
    match mode {
        FusionMode::Binarized => fuse_binarized(maps, weights),
        _ => fuse_probability_maps(maps, weights),
    }
}

pub fn fuse(cli: &Cli, args: &FuseArgs) -> Result<()> {
    let full = IouMatrix::from_csv_path(&args.matrix, units(cli)?)?;
    let matrix = if args.networks.is_empty() {
        full
    } else {
        let rows: Vec<usize> = args
            .networks
            .iter()
            .map(|name| {
                full.index_of(name)
                    .ok_or_else(|| Error::argument(format!("unknown network {name:?}")))
            })
            .collect::<Result<_>>()?;
        full.subset(&rows)?
    };
    if args.inputs.len() != matrix.networks() {
        return Err(Error::argument(format!(
            "{} inputs for {} networks",
            args.inputs.len(),
            matrix.networks()
        )));
    }
    let config = FusionConfig {
        alpha: args.alpha,
        mode: FusionMode::from_str(&args.mode)?,
    };
    config.validate()?;
    let maps: Vec<ProbabilityMap> = args
        .inputs
        .iter()
        .map(|p| io::read_probability_map(p))
        .collect::<Result<_>>()?;
    let weights = resolve_weights(&matrix, &config)?;
    if let Some(path) = &args.export_weights {
        weights.to_csv_path(path, Some(matrix.network_names()))?;
    }
    let fused = run_fusion(&maps, &weights, config.mode)?;
    io::write_probability_map(&args.output, &fused)?;
    println!(
        "fused {} maps ({}x{}x{}) -> {}",
        maps.len(),
        fused.classes(),
        fused.height(),
        fused.width(),
        args.output.display()
    );
    Ok(())
}

pub enum Backend {
    Exact,
    Windowed,
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(Backend::Exact),
            "windowed" => Ok(Backend::Windowed),
            other => Err(Error::argument(format!(
                "unknown backend {other:?}, expected exact or windowed"
            ))),
        }
    }
}

pub fn load_params(path: Option<&PathBuf>) -> Result<CrfParams> {
    match path {
        Some(p) => CrfParams::from_json_path(p),
        None => Ok(CrfParams::default()),
    }
}

pub fn refine(_cli: &Cli, args: &RefineArgs) -> Result<()> {
    let map = io::read_probability_map(&args.input)?;
    let image = io::read_pnm(&args.image)?;
    let params = load_params(args.params.as_ref())?;
    let backend = Backend::from_str(&args.backend)?;
    let (q, labels) = match backend {
        Backend::Exact => mean_field_dense_exact(&map, &image, &params)?,
        Backend::Windowed => {
            mean_field_windowed(&map, &image, &params, args.truncation_multiplier)?
        }
    };
    io::write_pgm_labels(&args.output, &labels)?;
    if let Some(path) = &args.q_dump {
        io::write_tensor(path, &q.to_tensor())?;
    }
    if let Some(path) = &args.overlay {
        io::write_ppm(path, &colorize_labels(&labels))?;
    }
    println!(
        "refined {}x{} ({} classes) -> {}",
        map.height(),
        map.width(),
        map.classes(),
        args.output.display()
    );
    Ok(())
}

fn sorted_pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "pgm").unwrap_or(false))
        .collect();
    files.sort();
    Ok(files)
}

pub fn ignore_label(raw: u16) -> Option<u8> {
    (raw <= 255).then_some(raw as u8)
}

pub fn eval(_cli: &Cli, args: &EvalArgs) -> Result<()> {
    let pred_files = sorted_pgm_files(&args.pred)?;
    if pred_files.is_empty() {
        return Err(Error::argument(format!(
            "no .pgm predictions in {}",
            args.pred.display()
        )));
    }
    let mut cm = ConfusionMatrix::new(args.classes)?;
    for pred_path in &pred_files {
        let name = pred_path.file_name().unwrap();
        let gt_path = args.gt.join(name);
        let pred = LabelMap::from_raster(&io::read_pnm(pred_path)?)?;
        let gt = LabelMap::from_raster(&io::read_pnm(&gt_path)?)?;
        cm.accumulate(&pred, &gt, ignore_label(args.ignore_label))?;
    }
    let report = iou_report(&cm, &args.exclude)?;
    print!("{}", report.render_table(None));
    if let Some(path) = &args.output {
        write_json(path, &report)?;
    }
    Ok(())
}

pub fn tune(cli: &Cli, args: &TuneArgs) -> Result<()> {
    let bench = synth::load_benchmark(&args.bench)?;
    let config = FusionConfig {
        alpha: args.alpha,
        mode: FusionMode::Probability,
    };
    config.validate()?;
    let weights = resolve_weights(&bench.iou_matrix, &config)?;
    let validation: Vec<ValidationItem> = bench
        .validation
        .iter()
        .map(|item| {
            Ok(ValidationItem {
                fused: fuse_probability_maps(&item.predictions, &weights)?,
                image: item.scene.image.clone(),
                ground_truth: item.scene.labels.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let space = match &args.space {
        Some(path) => tuner::SearchSpace::from_json_path(path)?,
        None => tuner::SearchSpace::default(),
    };
    let strategy = Strategy::from_str(&args.strategy)?;
    let outcome = tuner::tune(&space, args.trials, cli.seed, strategy, |params| {
        tuner::objective(params, &validation)
    })?;
    outcome.best.to_json_path(&args.output)?;
    if let Some(path) = &args.trial_log {
        tuner::write_trials_jsonl(path, &outcome.trials)?;
    }
    println!(
        "best validation mIoU {:.4} at sigma_g={:.3} sigma_b={:.3} sigma_c={:.3} w_g={:.3} w_b={:.3}",
        outcome.best_score,
        outcome.best.sigma_g,
        outcome.best.sigma_b,
        outcome.best.sigma_c,
        outcome.best.w_g,
        outcome.best.w_b
    );
    Ok(())
}

pub fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let profiles = match &args.profiles {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::format(0, format!("bad profiles JSON: {e}")))?
        }
        None => synth::BenchmarkConfig::default().profiles,
    };
    let config = synth::BenchmarkConfig {
        classes: args.classes,
        height: args.height,
        width: args.width,
        val_height: args.val_height,
        val_width: args.val_width,
        region_count: args.regions,
        validation_scenes: args.val_scenes,
        test_scenes: args.test_scenes,
        profiles,
    };
    let bench = synth::gen_benchmark(cli.seed, &config)?;
    synth::write_benchmark(&args.out, &bench)?;
    println!(
        "benchmark written to {} ({} val + {} test scenes, {} networks)",
        args.out.display(),
        bench.validation.len(),
        bench.test.len(),
        bench.config.profiles.len()
    );
    Ok(())
}
