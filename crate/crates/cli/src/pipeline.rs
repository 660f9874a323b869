//! End-to-end pipeline over a benchmark tree: per image, load the selected
//! networks' tensors, fuse, refine, write label maps, and aggregate
//! metrics and timing.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use classfuse_core::crf::{mean_field_dense_exact, mean_field_windowed, CrfParams};
use classfuse_core::error::{Error, Result};
use classfuse_core::fusion::{FusionConfig, FusionMode};
use classfuse_core::io;
use classfuse_core::metrics::{iou_report, ConfusionMatrix, DEFAULT_IGNORE_LABEL};
use classfuse_core::palette::colorize_labels;
use classfuse_core::selection::{greedy_select, IouMatrix, Units, DEFAULT_K};
use classfuse_core::synth::load_manifest;
use classfuse_core::tensor::LabelMap;

use crate::commands::{ignore_label, load_params, resolve_weights, run_fusion, Backend};
use crate::{Cli, PipelineArgs};

/// Pipeline configuration file; every CLI flag overrides its field.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// IoU matrix CSV; the benchmark's measured matrix when omitted.
    pub matrix: Option<PathBuf>,
    pub units: Option<String>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub mode: Option<String>,
    pub crf_params: Option<PathBuf>,
    pub backend: Option<String>,
    pub ignore_label: Option<u16>,
    pub excluded_classes: Option<Vec<usize>>,
    pub overlay: Option<bool>,
}

/// Wall-time accounting: per-network tensor load time stands in for the
/// per-network inference time; fusion covers weighting, fusion and CRF
/// refinement. The total is their sum by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    pub per_network: Vec<NetworkTiming>,
    pub fusion_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkTiming {
    pub name: String,
    pub seconds: f64,
}

fn load_config(path: Option<&PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::format(0, format!("bad pipeline config JSON: {e}")))
        }
        None => Ok(PipelineConfig::default()),
    }
}

struct Resolved {
    input: PathBuf,
    output: PathBuf,
    matrix: Option<PathBuf>,
    units: Units,
    k: Option<usize>,
    fusion: FusionConfig,
    params: CrfParams,
    backend: Backend,
    ignore_label: Option<u8>,
    excluded: Vec<usize>,
    overlay: bool,
}

fn resolve(cli: &Cli, args: &PipelineArgs) -> Result<Resolved> {
    let config = load_config(args.config.as_ref())?;
    let input = args
        .input
        .clone()
        .or(config.input)
        .ok_or_else(|| Error::argument("pipeline needs --input or config.input"))?;
    let output = args
        .output
        .clone()
        .or(config.output)
        .ok_or_else(|| Error::argument("pipeline needs --output or config.output"))?;
    let units_name = config.units.unwrap_or_else(|| cli.units.clone());
    let fusion = FusionConfig {
        alpha: args
            .alpha
            .or(config.alpha)
            .unwrap_or(classfuse_core::fusion::DEFAULT_ALPHA),
        mode: FusionMode::from_str(
            &args
                .mode
                .clone()
                .or(config.mode)
                .unwrap_or_else(|| "probability".to_owned()),
        )?,
    };
    fusion.validate()?;
    let params = load_params(args.params.as_ref().or(config.crf_params.as_ref()))?;
    params.validate()?;
    Ok(Resolved {
        input,
        output,
        matrix: args.matrix.clone().or(config.matrix),
        units: Units::from_str(&units_name)?,
        k: args.k.or(config.k),
        fusion,
        params,
        backend: Backend::from_str(
            &args
                .backend
                .clone()
                .or(config.backend)
                .unwrap_or_else(|| "windowed".to_owned()),
        )?,
        ignore_label: ignore_label(
            args.ignore_label
                .or(config.ignore_label)
                .unwrap_or(DEFAULT_IGNORE_LABEL as u16),
        ),
        excluded: args
            .exclude
            .clone()
            .or(config.excluded_classes)
            .unwrap_or_default(),
        overlay: args.overlay || config.overlay.unwrap_or(false),
    })
}

pub fn run(cli: &Cli, args: &PipelineArgs) -> Result<()> {
    let resolved = resolve(cli, args)?;
    let manifest = load_manifest(&resolved.input)?;

    let matrix = match &resolved.matrix {
        Some(path) => IouMatrix::from_csv_path(path, resolved.units)?,
        None => IouMatrix::from_csv_path(
            &resolved.input.join(&manifest.iou_matrix),
            manifest.iou_units,
        )?,
    };
    let k = resolved.k.unwrap_or(DEFAULT_K.min(matrix.networks()));
    let selection = greedy_select(&matrix, k)?;
    println!(
        "selected {} (oracle mIoU {:.2})",
        selection.ordered_names.join(", "),
        selection.oracle_miou * 100.0
    );

    // map selected networks onto the manifest's prediction files
    for name in &selection.ordered_names {
        if !manifest.networks.contains(name) {
            return Err(Error::argument(format!(
                "selected network {name:?} has no predictions in {}",
                resolved.input.display()
            )));
        }
    }
    let expert_matrix = matrix.subset(&selection.ordered_indices)?;
    let weights = resolve_weights(&expert_matrix, &resolved.fusion)?;

    std::fs::create_dir_all(resolved.output.join("labels"))
        .map_err(|e| Error::io(&resolved.output, e))?;
    if resolved.overlay {
        std::fs::create_dir_all(resolved.output.join("overlay"))
            .map_err(|e| Error::io(&resolved.output, e))?;
    }

    let mut net_seconds = vec![0.0f64; selection.ordered_names.len()];
    let mut fusion_seconds = 0.0f64;
    let mut cm: Option<ConfusionMatrix> = None;
    let mut scored = 0usize;
    let mut failures: Vec<String> = Vec::new();

    let test_dir = resolved.input.join("test");
    for index in 0..manifest.test_scenes {
        let scene = format!("{index:03}");
        match process_item(
            &test_dir.join(&scene),
            &scene,
            &resolved,
            &selection.ordered_names,
            &weights,
            &mut net_seconds,
            &mut fusion_seconds,
            &mut cm,
            &mut scored,
        ) {
            Ok(()) => {}
            Err(e) => {
                log::error!("scene {scene} failed: {e}");
                failures.push(scene);
            }
        }
    }

    let per_network: Vec<NetworkTiming> = selection
        .ordered_names
        .iter()
        .zip(&net_seconds)
        .map(|(name, seconds)| NetworkTiming {
            name: name.clone(),
            seconds: *seconds,
        })
        .collect();
    let total_seconds = per_network.iter().map(|n| n.seconds).sum::<f64>() + fusion_seconds;
    let timing = TimingReport {
        per_network,
        fusion_seconds,
        total_seconds,
    };
    write_json(&resolved.output.join("timing.json"), &timing)?;
    write_json(&resolved.output.join("selection.json"), &selection)?;

    if let Some(cm) = &cm {
        let report = iou_report(cm, &resolved.excluded)?;
        print!("{}", report.render_table(None));
        write_json(&resolved.output.join("report.json"), &report)?;
    } else {
        println!("no ground truth found; skipping metrics");
    }
    println!(
        "timing: nets {:.3}s + fusion {:.3}s = {:.3}s over {} scenes",
        timing.total_seconds - timing.fusion_seconds,
        timing.fusion_seconds,
        timing.total_seconds,
        manifest.test_scenes - failures.len(),
    );

    if !failures.is_empty() {
        eprintln!("{} scene(s) failed: {}", failures.len(), failures.join(", "));
        std::process::exit(1);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn process_item(
    scene_dir: &Path,
    scene: &str,
    resolved: &Resolved,
    networks: &[String],
    weights: &classfuse_core::fusion::FusionWeights,
    net_seconds: &mut [f64],
    fusion_seconds: &mut f64,
    cm: &mut Option<ConfusionMatrix>,
    scored: &mut usize,
) -> Result<()> {
    let mut maps = Vec::with_capacity(networks.len());
    for (slot, name) in networks.iter().enumerate() {
        let start = Instant::now();
        maps.push(io::read_probability_map(
            &scene_dir.join(format!("pred_{name}.cwt")),
        )?);
        net_seconds[slot] += start.elapsed().as_secs_f64();
    }
    let image = io::read_pnm(&scene_dir.join("image.ppm"))?;

    let start = Instant::now();
    let fused = run_fusion(&maps, weights, resolved.fusion.mode)?;
    let (_, labels) = match resolved.backend {
        Backend::Exact => mean_field_dense_exact(&fused, &image, &resolved.params)?,
        Backend::Windowed => mean_field_windowed(
            &fused,
            &image,
            &resolved.params,
            classfuse_core::crf::DEFAULT_TRUNCATION_MULTIPLIER,
        )?,
    };
    *fusion_seconds += start.elapsed().as_secs_f64();

    io::write_pgm_labels(
        &resolved.output.join("labels").join(format!("{scene}.pgm")),
        &labels,
    )?;
    if resolved.overlay {
        io::write_ppm(
            &resolved.output.join("overlay").join(format!("{scene}.ppm")),
            &colorize_labels(&labels),
        )?;
    }

    let gt_path = scene_dir.join("gt.pgm");
    if gt_path.exists() {
        let gt = LabelMap::from_raster(&io::read_pnm(&gt_path)?)?;
        let cm = cm.get_or_insert(ConfusionMatrix::new(fused.classes())?);
        cm.accumulate(&labels, &gt, resolved.ignore_label)?;
        *scored += 1;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::validation(format!("JSON encoding failed: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
