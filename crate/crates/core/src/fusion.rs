//! Category-specific fusion: exponential IoU weighting and weighted
//! probability-map combination.
//!
//! Weights amplify per-class performance differences: `w[k][c] =
//! iou[k][c]^alpha / sum_m iou[m][c]^alpha`, so each class column sums to
//! one. Fusion mixes the K maps per class with those weights and then
//! renormalizes every pixel back onto the simplex.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::IouMatrix;
use crate::tensor::{argmax_labels, ProbabilityMap};

/// Weight-amplification exponent giving the best overall score in the alpha
/// sweep.
pub const DEFAULT_ALPHA: f64 = 2.5;

/// How the per-network maps are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Weighted sum of the full confidence distributions.
    Probability,
    /// Each map is first collapsed to the one-hot encoding of its argmax
    /// labels, then fused identically (the ablation baseline).
    Binarized,
    /// Prior-free fusion: every weight is `1/K`, ignoring the IoU matrix.
    Uniform,
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "probability" => Ok(FusionMode::Probability),
            "binarized" => Ok(FusionMode::Binarized),
            "uniform" => Ok(FusionMode::Uniform),
            other => Err(Error::argument(format!(
                "unknown fusion mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_mode")]
    pub mode: FusionMode,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_mode() -> FusionMode {
    FusionMode::Probability
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            mode: FusionMode::Probability,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 1.0 {
            return Err(Error::argument(format!(
                "alpha must be finite and >= 1, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// `K x C` fusion weights; every class column sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    networks: usize,
    classes: usize,
    values: Vec<f64>,
}

impl FusionWeights {
    pub fn networks(&self) -> usize {
        self.networks
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn value(&self, network: usize, class: usize) -> f64 {
        self.values[network * self.classes + class]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Prior-free weights: `1/K` everywhere.
    pub fn uniform(networks: usize, classes: usize) -> Result<Self> {
        if networks == 0 || classes == 0 {
            return Err(Error::argument("weights need at least one network and class"));
        }
        Ok(Self {
            networks,
            classes,
            values: vec![1.0 / networks as f64; networks * classes],
        })
    }

    /// Exports as CSV (`network,<class>...` header, one row per network).
    pub fn to_csv_writer(&self, writer: impl Write, names: Option<&[String]>) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = vec!["network".to_owned()];
        header.extend((0..self.classes).map(|c| format!("class_{c}")));
        csv.write_record(&header)
            .map_err(|e| Error::format(0, format!("CSV write failed: {e}")))?;
        for k in 0..self.networks {
            let name = names
                .and_then(|n| n.get(k).cloned())
                .unwrap_or_else(|| format!("network_{k}"));
            let mut row = vec![name];
            for c in 0..self.classes {
                row.push(format!("{}", self.value(k, c)));
            }
            csv.write_record(&row)
                .map_err(|e| Error::format(0, format!("CSV write failed: {e}")))?;
        }
        csv.flush()
            .map_err(|e| Error::format(0, format!("CSV write failed: {e}")))?;
        Ok(())
    }

    pub fn to_csv_path(&self, path: &Path, names: Option<&[String]>) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_csv_writer(file, names)
    }

    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        // same table shape as an IoU matrix, always fractions
        let m = IouMatrix::from_csv_reader(reader, crate::selection::Units::Fraction)?;
        Ok(Self {
            networks: m.networks(),
            classes: m.classes(),
            values: (0..m.networks())
                .flat_map(|n| m.row(n).to_vec())
                .collect(),
        })
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }
}

/// Exponential weighting of the K selected networks' per-class IoU priors.
///
/// A class column whose IoUs are all zero falls back to uniform `1/K`
/// weights (logged); the ratio is otherwise well defined for any
/// `alpha >= 1`. `alpha == 1` reduces to exact linear weighting.
pub fn compute_weights(iou: &IouMatrix, alpha: f64) -> Result<FusionWeights> {
    if !alpha.is_finite() || alpha < 1.0 {
        return Err(Error::argument(format!(
            "alpha must be finite and >= 1, got {alpha}"
        )));
    }
    let (k, c) = (iou.networks(), iou.classes());
    let mut values = vec![0.0f64; k * c];
    for class in 0..c {
        let powered: Vec<f64> = (0..k)
            .map(|net| {
                let v = iou.value(net, class);
                if alpha == 1.0 {
                    v
                } else {
                    v.powf(alpha)
                }
            })
            .collect();
        let denom: f64 = powered.iter().sum();
        if denom <= 0.0 {
            log::warn!("class {class} has all-zero IoU; using uniform 1/{k} weights");
            for net in 0..k {
                values[net * c + class] = 1.0 / k as f64;
            }
        } else {
            for net in 0..k {
                values[net * c + class] = powered[net] / denom;
            }
        }
    }
    Ok(FusionWeights {
        networks: k,
        classes: c,
        values,
    })
}

fn check_fusion_shapes(maps: &[ProbabilityMap], weights: &FusionWeights) -> Result<()> {
    if maps.is_empty() {
        return Err(Error::argument("need at least one probability map"));
    }
    let (c, h, w) = (maps[0].classes(), maps[0].height(), maps[0].width());
    for (i, m) in maps.iter().enumerate() {
        if m.classes() != c || m.height() != h || m.width() != w {
            return Err(Error::argument(format!(
                "map {i} has shape ({},{},{}), expected ({c},{h},{w})",
                m.classes(),
                m.height(),
                m.width()
            )));
        }
    }
    if weights.networks() != maps.len() || weights.classes() != c {
        return Err(Error::argument(format!(
            "weights are {}x{}, expected {}x{c}",
            weights.networks(),
            weights.classes(),
            maps.len()
        )));
    }
    Ok(())
}

fn fuse_inner(
    maps: &[ProbabilityMap],
    weights: &FusionWeights,
    binarize: bool,
) -> Result<ProbabilityMap> {
    check_fusion_shapes(maps, weights)?;
    let (c, h, w) = (maps[0].classes(), maps[0].height(), maps[0].width());
    let one_hot: Option<Vec<crate::tensor::LabelMap>> =
        binarize.then(|| maps.iter().map(argmax_labels).collect());

    let plane = h * w;
    let mut out = vec![0.0f32; c * plane];
    let mut max_deviation = 0.0f64;
    let mut pre = vec![0.0f64; c];
    for row in 0..h {
        for col in 0..w {
            for (class, slot) in pre.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for (k, map) in maps.iter().enumerate() {
                    let p = match &one_hot {
                        Some(labels) => {
                            if labels[k].label(row, col) as usize == class {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        None => f64::from(map.value(class, row, col)),
                    };
                    acc += weights.value(k, class) * p;
                }
                *slot = acc;
            }
            let denom: f64 = pre.iter().sum();
            max_deviation = max_deviation.max((denom - 1.0).abs());
            for class in 0..c {
                let v = if denom > 0.0 {
                    pre[class] / denom
                } else {
                    // no mass anywhere: fall back to a flat distribution
                    1.0 / c as f64
                };
                out[class * plane + row * w + col] = v as f32;
            }
        }
    }
    log::debug!("fusion max per-pixel pre-normalization deviation: {max_deviation:.3e}");
    Ok(ProbabilityMap::from_raw_unchecked(c, h, w, out))
}

/// Weighted fusion of full probability maps followed by per-pixel
/// renormalization.
pub fn fuse_probability_maps(
    maps: &[ProbabilityMap],
    weights: &FusionWeights,
) -> Result<ProbabilityMap> {
    fuse_inner(maps, weights, false)
}

/// Ablation variant: each map is replaced by the one-hot encoding of its
/// argmax labels before the identical weighted fusion.
pub fn fuse_binarized(
    maps: &[ProbabilityMap],
    weights: &FusionWeights,
) -> Result<ProbabilityMap> {
    fuse_inner(maps, weights, true)
}
