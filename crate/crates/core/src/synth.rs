//! Seeded synthetic scenes, per-network predictions with controllable
//! per-class reliability, and a packaged validation/test benchmark.
//!
//! Scenes are Voronoi partitions with palette base colors plus uniform
//! noise, so region boundaries are irregular and the bilateral kernel has
//! real edges to respect. Predictions flip each pixel's argmax away from
//! the ground truth with per-class probability `1 - reliability[class]`,
//! then emit a temperature-softened one-hot distribution for the chosen
//! mode.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{iou_report, ConfusionMatrix};
use crate::palette;
use crate::selection::{IouMatrix, Units};
use crate::tensor::{argmax_labels, LabelMap, ProbabilityMap, Raster};

/// Per-channel amplitude of the uniform image noise, in 8-bit units.
pub const IMAGE_NOISE_AMPLITUDE: i32 = 10;
/// Master seed used by the default benchmark.
pub const DEFAULT_BENCHMARK_SEED: u64 = 42;
/// Mistaken pixels are emitted this much softer than correct ones, so a
/// network's confidence carries real information: erasing it (binarized
/// fusion) costs accuracy.
pub const WRONG_MODE_TEMPERATURE_FACTOR: f64 = 2.5;
/// Error mass and softness decay away from region boundaries with this
/// length (pixels). Segmentation networks mostly fail near edges, in
/// spatially coherent bands, and are unsure there even when right.
pub const BOUNDARY_ERROR_DECAY: f64 = 2.0;
/// How much softer boundary pixels are emitted than interior ones.
pub const BOUNDARY_SOFTENING: f64 = 2.0;

/// Scene base colors. Classes 2/3 and 4/5 are near-neighbors in color
/// space (like vegetation vs. tree spectra), so edge-aware smoothing
/// cannot separate them on color alone and the per-class priors stay
/// decisive. Classes past 7 reuse the distinct overlay palette.
pub const SCENE_COLORS: [[u8; 3]; 8] = [
    [40, 90, 200],
    [230, 150, 40],
    [60, 160, 70],
    [70, 148, 62],
    [120, 120, 120],
    [132, 126, 114],
    [200, 60, 170],
    [90, 40, 120],
];

pub fn scene_color(class: usize) -> [u8; 3] {
    if class < SCENE_COLORS.len() {
        SCENE_COLORS[class]
    } else {
        palette::class_color(class)
    }
}

/// One simulated network: how often its argmax is correct per class, how
/// much uniform jitter perturbs its emitted distributions
/// (`confusion_spread`), and how soft its one-hot outputs are
/// (`temperature`; near zero means hard one-hot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityProfile {
    pub name: String,
    pub reliability: Vec<f64>,
    pub confusion_spread: f64,
    pub temperature: f64,
}

impl ReliabilityProfile {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.reliability.len() != classes {
            return Err(Error::argument(format!(
                "profile {:?} has {} reliabilities, expected {classes}",
                self.name,
                self.reliability.len()
            )));
        }
        if let Some(r) = self.reliability.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::argument(format!(
                "reliability {r} outside [0,1] in profile {:?}",
                self.name
            )));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::argument(format!(
                "temperature must be > 0 in profile {:?}",
                self.name
            )));
        }
        if !self.confusion_spread.is_finite() || self.confusion_spread < 0.0 {
            return Err(Error::argument(format!(
                "confusion spread must be >= 0 in profile {:?}",
                self.name
            )));
        }
        Ok(())
    }
}

/// Ground truth plus the derived image for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub labels: LabelMap,
    pub image: Raster,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    /// Validation scenes are smaller: tuning runs many CRF passes on them.
    pub val_height: usize,
    pub val_width: usize,
    pub region_count: usize,
    pub validation_scenes: usize,
    pub test_scenes: usize,
    pub profiles: Vec<ReliabilityProfile>,
}

impl Default for BenchmarkConfig {
    /// Three complementary networks on 4-class scenes: each network is the
    /// most reliable for at least one class.
    fn default() -> Self {
        let profile = |name: &str, reliability: [f64; 4]| ReliabilityProfile {
            name: name.to_owned(),
            reliability: reliability.to_vec(),
            confusion_spread: 0.05,
            temperature: 0.4,
        };
        Self {
            classes: 4,
            height: 64,
            width: 64,
            val_height: 32,
            val_width: 32,
            region_count: 10,
            validation_scenes: 5,
            test_scenes: 10,
            profiles: vec![
                profile("net-a", [0.93, 0.88, 0.55, 0.58]),
                profile("net-b", [0.56, 0.60, 0.92, 0.61]),
                profile("net-c", [0.60, 0.57, 0.58, 0.91]),
            ],
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 255 {
            return Err(Error::argument(format!(
                "classes must be in 2..=255, got {}",
                self.classes
            )));
        }
        if self.region_count == 0 {
            return Err(Error::argument("region_count must be >= 1"));
        }
        for (name, v) in [
            ("height", self.height),
            ("width", self.width),
            ("val_height", self.val_height),
            ("val_width", self.val_width),
        ] {
            if v == 0 {
                return Err(Error::argument(format!("{name} must be >= 1")));
            }
        }
        if self.profiles.is_empty() {
            return Err(Error::argument("need at least one network profile"));
        }
        let mut names: Vec<&str> = self.profiles.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.profiles.len() {
            return Err(Error::argument("profile names must be unique"));
        }
        for p in &self.profiles {
            p.validate(self.classes)?;
            if !p
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return Err(Error::argument(format!(
                    "profile name {:?} must be alphanumeric/dash/underscore",
                    p.name
                )));
            }
        }
        Ok(())
    }
}

/// One scene with the predictions of every configured network.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchItem {
    pub scene: SynthScene,
    pub predictions: Vec<ProbabilityMap>,
}

/// Disjoint validation/test splits plus the IoU matrix measured on the
/// validation split — the priors that drive selection and weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub seed: u64,
    pub config: BenchmarkConfig,
    pub validation: Vec<BenchItem>,
    pub test: Vec<BenchItem>,
    pub iou_matrix: IouMatrix,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derives a stream seed from the master seed and a (tag, index) pair; all
/// per-item randomness flows through this, never through scheduling.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(tag)) ^ index)
}

const TAG_VALIDATION: u64 = 1;
const TAG_TEST: u64 = 2;
const TAG_PREDICTION: u64 = 3;

/// Voronoi scene: `region_count` seeded sites, site `i` carrying class
/// `i % classes`; the image is the class base color plus uniform noise in
/// `[-10, 10]` per channel, clamped to `[0, 255]`.
pub fn gen_scene(
    seed: u64,
    height: usize,
    width: usize,
    classes: usize,
    region_count: usize,
) -> Result<SynthScene> {
    if classes < 2 || classes > 255 {
        return Err(Error::argument(format!(
            "classes must be in 2..=255, got {classes}"
        )));
    }
    if region_count == 0 {
        return Err(Error::argument("region_count must be >= 1"));
    }
    if height == 0 || width == 0 {
        return Err(Error::argument("scene dimensions must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites: Vec<(usize, usize, u8)> = (0..region_count)
        .map(|i| {
            (
                rng.random_range(0..height),
                rng.random_range(0..width),
                (i % classes) as u8,
            )
        })
        .collect();

    let mut labels = vec![0u8; height * width];
    for row in 0..height {
        for col in 0..width {
            let mut best = u64::MAX;
            let mut class = 0u8;
            for &(sr, sc, sclass) in &sites {
                let dr = row.abs_diff(sr) as u64;
                let dc = col.abs_diff(sc) as u64;
                let d2 = dr * dr + dc * dc;
                if d2 < best {
                    best = d2;
                    class = sclass;
                }
            }
            labels[row * width + col] = class;
        }
    }

    let mut samples = Vec::with_capacity(height * width * 3);
    for &label in &labels {
        let base = scene_color(label as usize);
        for channel in base {
            let noise = rng.random_range(-IMAGE_NOISE_AMPLITUDE..=IMAGE_NOISE_AMPLITUDE);
            samples.push((i32::from(channel) + noise).clamp(0, 255) as u8);
        }
    }

    Ok(SynthScene {
        labels: LabelMap::new(height, width, labels)?,
        image: Raster::new(height, width, 3, samples)?,
        seed,
    })
}

/// Manhattan distance from every pixel to the nearest pixel of a
/// different class (multi-source BFS; boundary pixels get 0).
fn boundary_distances(labels: &LabelMap) -> Vec<u32> {
    let (h, w) = (labels.height(), labels.width());
    let mut dist = vec![u32::MAX; h * w];
    let mut queue = std::collections::VecDeque::new();
    for row in 0..h {
        for col in 0..w {
            let own = labels.label(row, col);
            let mut boundary = false;
            if row > 0 && labels.label(row - 1, col) != own {
                boundary = true;
            }
            if !boundary && row + 1 < h && labels.label(row + 1, col) != own {
                boundary = true;
            }
            if !boundary && col > 0 && labels.label(row, col - 1) != own {
                boundary = true;
            }
            if !boundary && col + 1 < w && labels.label(row, col + 1) != own {
                boundary = true;
            }
            if boundary {
                dist[row * w + col] = 0;
                queue.push_back((row, col));
            }
        }
    }
    if queue.is_empty() {
        // single-region scene: treat everything as deep interior
        for d in dist.iter_mut() {
            *d = u32::MAX / 2;
        }
        return dist;
    }
    while let Some((row, col)) = queue.pop_front() {
        let d = dist[row * w + col];
        let mut push = |r: usize, c: usize| {
            if dist[r * w + c] == u32::MAX {
                dist[r * w + c] = d + 1;
                queue.push_back((r, c));
            }
        };
        if row > 0 {
            push(row - 1, col);
        }
        if row + 1 < h {
            push(row + 1, col);
        }
        if col > 0 {
            push(row, col - 1);
        }
        if col + 1 < w {
            push(row, col + 1);
        }
    }
    dist
}

/// Scales `weights` so they sum to `target` with every entry in [0,1],
/// spilling clamped mass onto the rest (a few fixed passes suffice).
fn error_probabilities(weights: &[f64], target: f64) -> Vec<f64> {
    let mut probs = vec![0.0f64; weights.len()];
    if weights.is_empty() || target <= 0.0 {
        return probs;
    }
    if target >= weights.len() as f64 - 1e-9 {
        probs.fill(1.0);
        return probs;
    }
    let mut remaining = target;
    for _ in 0..32 {
        let headroom: f64 = weights
            .iter()
            .zip(&probs)
            .filter(|(_, p)| **p < 1.0)
            .map(|(w, _)| *w)
            .sum();
        if headroom <= 0.0 || remaining <= 1e-12 {
            break;
        }
        let scale = remaining / headroom;
        remaining = 0.0;
        for (p, w) in probs.iter_mut().zip(weights) {
            if *p < 1.0 {
                let add = scale * w;
                let capped = (*p + add).min(1.0);
                remaining += (*p + add) - capped;
                *p = capped;
            }
        }
    }
    probs
}

/// Simulates one network's probability map for a scene.
///
/// Errors are spatially coherent: each pixel of true class `g` flips its
/// mode to a seeded uniform wrong class with a probability that decays
/// away from region boundaries ([`BOUNDARY_ERROR_DECAY`]) while averaging
/// exactly `1 - reliability[g]` over the class. The emitted distribution
/// is the temperature-softened one-hot of the chosen mode, softer near
/// boundaries and softer again on mistaken pixels, perturbed by uniform
/// jitter of amplitude `confusion_spread` and renormalized.
pub fn gen_prediction(
    scene: &SynthScene,
    profile: &ReliabilityProfile,
    seed: u64,
) -> Result<ProbabilityMap> {
    let (h, w) = (scene.labels.height(), scene.labels.width());
    let classes = profile.reliability.len();
    if classes < 2 {
        return Err(Error::argument("profiles need at least two classes"));
    }
    if let Some(&max_label) = scene.labels.labels().iter().max() {
        if max_label as usize >= classes {
            return Err(Error::argument(format!(
                "scene label {max_label} out of range for {classes} classes"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = h * w;
    let mut values = vec![0.0f32; classes * px];

    let proximity: Vec<f64> = boundary_distances(&scene.labels)
        .iter()
        .map(|&d| (-(d as f64) / BOUNDARY_ERROR_DECAY).exp())
        .collect();

    // per-class error probabilities: boundary-weighted, marginal-exact
    let mut error_prob = vec![0.0f64; px];
    for class in 0..classes {
        let members: Vec<usize> = (0..px)
            .filter(|&i| scene.labels.labels()[i] as usize == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        let weights: Vec<f64> = members.iter().map(|&i| proximity[i]).collect();
        let target = (1.0 - profile.reliability[class]) * members.len() as f64;
        for (&i, p) in members.iter().zip(error_probabilities(&weights, target)) {
            error_prob[i] = p;
        }
    }

    // softened one-hot written in the overflow-safe form
    let softened = |temperature: f64| {
        let t = (-1.0 / temperature).exp();
        let denom = 1.0 + (classes as f64 - 1.0) * t;
        (1.0 / denom, t / denom)
    };

    let mut dist = vec![0.0f64; classes];
    for i in 0..px {
        let truth = scene.labels.labels()[i] as usize;
        let softness = 1.0 + BOUNDARY_SOFTENING * proximity[i];
        let (mode, (p_mode, p_other)) = if rng.random::<f64>() < error_prob[i] {
            let pick = rng.random_range(0..classes - 1);
            (
                if pick >= truth { pick + 1 } else { pick },
                softened(profile.temperature * softness * WRONG_MODE_TEMPERATURE_FACTOR),
            )
        } else {
            (truth, softened(profile.temperature * softness))
        };
        for (class, slot) in dist.iter_mut().enumerate() {
            *slot = if class == mode { p_mode } else { p_other };
            if profile.confusion_spread > 0.0 {
                *slot += profile.confusion_spread * rng.random::<f64>();
            }
        }
        let sum: f64 = dist.iter().sum();
        for (class, slot) in dist.iter().enumerate() {
            values[class * px + i] = (slot / sum) as f32;
        }
    }
    Ok(ProbabilityMap::from_raw_unchecked(classes, h, w, values))
}

fn gen_split(
    master_seed: u64,
    tag: u64,
    count: usize,
    height: usize,
    width: usize,
    config: &BenchmarkConfig,
) -> Result<Vec<BenchItem>> {
    let mut items = Vec::with_capacity(count);
    for i in 0..count {
        let scene_seed = derive_seed(master_seed, tag, i as u64);
        let scene = gen_scene(
            scene_seed,
            height,
            width,
            config.classes,
            config.region_count,
        )?;
        let mut predictions = Vec::with_capacity(config.profiles.len());
        for (k, profile) in config.profiles.iter().enumerate() {
            let pred_seed = derive_seed(
                master_seed,
                TAG_PREDICTION ^ (tag << 8),
                (i * config.profiles.len() + k) as u64,
            );
            predictions.push(gen_prediction(&scene, profile, pred_seed)?);
        }
        items.push(BenchItem { scene, predictions });
    }
    Ok(items)
}

/// Generates both splits and measures the validation-split IoU matrix that
/// downstream selection and weighting consume.
pub fn gen_benchmark(seed: u64, config: &BenchmarkConfig) -> Result<Benchmark> {
    config.validate()?;
    let validation = gen_split(
        seed,
        TAG_VALIDATION,
        config.validation_scenes,
        config.val_height,
        config.val_width,
        config,
    )?;
    let test = gen_split(
        seed,
        TAG_TEST,
        config.test_scenes,
        config.height,
        config.width,
        config,
    )?;

    let mut values = Vec::with_capacity(config.profiles.len() * config.classes);
    for (k, profile) in config.profiles.iter().enumerate() {
        let mut cm = ConfusionMatrix::new(config.classes)?;
        for item in &validation {
            cm.accumulate(&argmax_labels(&item.predictions[k]), &item.scene.labels, None)?;
        }
        let report = iou_report(&cm, &[])?;
        for (class, iou) in report.per_class.iter().enumerate() {
            match iou {
                Some(v) => values.push(*v),
                None => {
                    log::warn!(
                        "class {class} never occurs in the validation split; \
                         recording 0 IoU for {}",
                        profile.name
                    );
                    values.push(0.0);
                }
            }
        }
    }
    let iou_matrix = IouMatrix::new(
        config.profiles.iter().map(|p| p.name.clone()).collect(),
        (0..config.classes).map(|c| format!("class_{c}")).collect(),
        values,
    )?;

    Ok(Benchmark {
        seed,
        config: config.clone(),
        validation,
        test,
        iou_matrix,
    })
}

// ---------------------------------------------------------------------------
// Directory layout
// ---------------------------------------------------------------------------

/// On-disk manifest; scenes live under `val/NNN/` and `test/NNN/` as
/// `gt.pgm` + `image.ppm` + `pred_<network>.cwt`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub seed: u64,
    pub config: BenchmarkConfig,
    pub networks: Vec<String>,
    pub validation_scenes: usize,
    pub test_scenes: usize,
    pub iou_matrix: String,
    pub iou_units: Units,
}

fn write_split(dir: &Path, items: &[BenchItem], networks: &[String]) -> Result<()> {
    for (i, item) in items.iter().enumerate() {
        let scene_dir = dir.join(format!("{i:03}"));
        std::fs::create_dir_all(&scene_dir).map_err(|e| Error::io(&scene_dir, e))?;
        io::write_pgm_labels(&scene_dir.join("gt.pgm"), &item.scene.labels)?;
        io::write_ppm(&scene_dir.join("image.ppm"), &item.scene.image)?;
        for (name, pred) in networks.iter().zip(&item.predictions) {
            io::write_probability_map(&scene_dir.join(format!("pred_{name}.cwt")), pred)?;
        }
    }
    Ok(())
}

fn load_split(
    dir: &Path,
    count: usize,
    networks: &[String],
    seed: u64,
) -> Result<Vec<BenchItem>> {
    let mut items = Vec::with_capacity(count);
    for i in 0..count {
        let scene_dir = dir.join(format!("{i:03}"));
        let labels = LabelMap::from_raster(&io::read_pnm(&scene_dir.join("gt.pgm"))?)?;
        let image = io::read_pnm(&scene_dir.join("image.ppm"))?;
        let predictions = networks
            .iter()
            .map(|name| io::read_probability_map(&scene_dir.join(format!("pred_{name}.cwt"))))
            .collect::<Result<Vec<_>>>()?;
        items.push(BenchItem {
            scene: SynthScene {
                labels,
                image,
                seed,
            },
            predictions,
        });
    }
    Ok(items)
}

/// Emits the benchmark directory tree: manifest JSON, measured IoU matrix
/// CSV (percent, the table convention), and both splits.
pub fn write_benchmark(dir: &Path, benchmark: &Benchmark) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let networks: Vec<String> = benchmark
        .config
        .profiles
        .iter()
        .map(|p| p.name.clone())
        .collect();
    write_split(&dir.join("val"), &benchmark.validation, &networks)?;
    write_split(&dir.join("test"), &benchmark.test, &networks)?;
    benchmark
        .iou_matrix
        .to_csv_path(&dir.join("iou_matrix.csv"), Units::Percent)?;
    let manifest = BenchmarkManifest {
        seed: benchmark.seed,
        config: benchmark.config.clone(),
        networks,
        validation_scenes: benchmark.validation.len(),
        test_scenes: benchmark.test.len(),
        iou_matrix: "iou_matrix.csv".to_owned(),
        iou_units: Units::Percent,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialize");
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<BenchmarkManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(0, format!("bad manifest JSON: {e}")))
}

/// Reads a benchmark tree back into memory.
pub fn load_benchmark(dir: &Path) -> Result<Benchmark> {
    let manifest = load_manifest(dir)?;
    let iou_matrix =
        IouMatrix::from_csv_path(&dir.join(&manifest.iou_matrix), manifest.iou_units)?;
    let validation = load_split(
        &dir.join("val"),
        manifest.validation_scenes,
        &manifest.networks,
        manifest.seed,
    )?;
    let test = load_split(
        &dir.join("test"),
        manifest.test_scenes,
        &manifest.networks,
        manifest.seed,
    )?;
    Ok(Benchmark {
        seed: manifest.seed,
        config: manifest.config,
        validation,
        test,
        iou_matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_region_gives_constant_labels() {
        let scene = gen_scene(7, 8, 8, 3, 1).unwrap();
        assert!(scene.labels.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn scenes_are_deterministic() {
        let a = gen_scene(99, 16, 16, 4, 6).unwrap();
        let b = gen_scene(99, 16, 16, 4, 6).unwrap();
        assert_eq!(a, b);
        let c = gen_scene(100, 16, 16, 4, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scene_labels_stay_in_range() {
        let scene = gen_scene(3, 32, 32, 4, 8).unwrap();
        assert!(scene.labels.labels().iter().all(|&l| l < 4));
    }

    #[test]
    fn perfect_profile_emits_one_hot_ground_truth() {
        let scene = gen_scene(5, 8, 8, 3, 4).unwrap();
        let profile = ReliabilityProfile {
            name: "perfect".into(),
            reliability: vec![1.0; 3],
            confusion_spread: 0.0,
            temperature: 1e-6,
        };
        let pred = gen_prediction(&scene, &profile, 17).unwrap();
        for row in 0..8 {
            for col in 0..8 {
                let truth = scene.labels.label(row, col) as usize;
                for class in 0..3 {
                    let expected = if class == truth { 1.0 } else { 0.0 };
                    assert_eq!(pred.value(class, row, col), expected);
                }
            }
        }
    }

    #[test]
    fn adversarial_profile_never_matches_on_two_classes() {
        let scene = gen_scene(5, 8, 8, 2, 4).unwrap();
        let profile = ReliabilityProfile {
            name: "adversarial".into(),
            reliability: vec![0.0; 2],
            confusion_spread: 0.0,
            temperature: 0.3,
        };
        let pred = gen_prediction(&scene, &profile, 17).unwrap();
        let labels = argmax_labels(&pred);
        for (p, g) in labels.labels().iter().zip(scene.labels.labels()) {
            assert_ne!(p, g);
        }
    }

    #[test]
    fn reliability_is_hit_within_tolerance() {
        let scene = gen_scene(13, 64, 64, 4, 12).unwrap();
        let profile = ReliabilityProfile {
            name: "mid".into(),
            reliability: vec![0.8; 4],
            confusion_spread: 0.05,
            temperature: 0.4,
        };
        let pred = gen_prediction(&scene, &profile, 29).unwrap();
        let labels = argmax_labels(&pred);
        let hits = labels
            .labels()
            .iter()
            .zip(scene.labels.labels())
            .filter(|(p, g)| p == g)
            .count();
        let accuracy = hits as f64 / labels.labels().len() as f64;
        assert!((accuracy - 0.8).abs() < 0.05, "accuracy {accuracy}");
    }

    #[test]
    fn single_network_benchmark() {
        let config = BenchmarkConfig {
            profiles: vec![ReliabilityProfile {
                name: "solo".into(),
                reliability: vec![0.8; 4],
                confusion_spread: 0.05,
                temperature: 0.4,
            }],
            validation_scenes: 2,
            test_scenes: 1,
            height: 16,
            width: 16,
            val_height: 16,
            val_width: 16,
            ..BenchmarkConfig::default()
        };
        let bench = gen_benchmark(7, &config).unwrap();
        assert_eq!(bench.iou_matrix.networks(), 1);
        assert_eq!(bench.validation[0].predictions.len(), 1);
    }

    #[test]
    fn benchmark_is_deterministic() {
        let config = BenchmarkConfig {
            validation_scenes: 2,
            test_scenes: 2,
            height: 16,
            width: 16,
            val_height: 16,
            val_width: 16,
            ..BenchmarkConfig::default()
        };
        let a = gen_benchmark(11, &config).unwrap();
        let b = gen_benchmark(11, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn splits_use_distinct_seeds() {
        let config = BenchmarkConfig {
            validation_scenes: 1,
            test_scenes: 1,
            height: 32,
            width: 32,
            val_height: 32,
            val_width: 32,
            ..BenchmarkConfig::default()
        };
        let bench = gen_benchmark(11, &config).unwrap();
        assert_ne!(
            bench.validation[0].scene.labels,
            bench.test[0].scene.labels
        );
    }

    #[test]
    fn benchmark_round_trips_through_directory() {
        let config = BenchmarkConfig {
            validation_scenes: 1,
            test_scenes: 1,
            height: 8,
            width: 8,
            val_height: 8,
            val_width: 8,
            ..BenchmarkConfig::default()
        };
        let bench = gen_benchmark(23, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_benchmark(dir.path(), &bench).unwrap();
        let loaded = load_benchmark(dir.path()).unwrap();
        assert_eq!(loaded.validation[0].scene.labels, bench.validation[0].scene.labels);
        assert_eq!(loaded.test[0].predictions, bench.test[0].predictions);
        // CSV percent round trip costs a few ulps at most
        for n in 0..bench.iou_matrix.networks() {
            for c in 0..bench.iou_matrix.classes() {
                let diff = (loaded.iou_matrix.value(n, c) - bench.iou_matrix.value(n, c)).abs();
                assert!(diff < 1e-12);
            }
        }
    }
}
