//! In-memory tensor, probability-map, label-map and raster types.
//!
//! All types are immutable after construction and safe to share across
//! parallel workers.

use crate::error::{Error, Result};

/// Absolute tolerance on per-pixel probability sums.
pub const SIMPLEX_TOLERANCE: f64 = 1e-5;
/// Slack below zero (and above one) tolerated in 32-bit softmax outputs.
pub const VALUE_SLACK: f64 = 1e-6;

/// Dense row-major `f32` tensor (innermost dimension last).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorF32 {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl TensorF32 {
    /// Builds a tensor, checking the length and finiteness invariants.
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::argument(format!(
                "tensor data length {} does not match dims {:?} (expect {})",
                data.len(),
                dims,
                expected
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite tensor value at flat index {pos}"
            )));
        }
        Ok(Self { dims, data })
    }

    /// Constructs without checking invariants. The caller guarantees that
    /// `data.len()` equals the product of `dims` and that all values are
    /// finite.
    pub fn from_raw_unchecked(dims: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f32>) {
        (self.dims, self.data)
    }
}

/// Per-pixel class confidence field of shape `C x H x W`.
///
/// Every pixel's values sum to one within [`SIMPLEX_TOLERANCE`]; construct
/// via [`validate_probability_map`] unless the values are correct by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    classes: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ProbabilityMap {
    /// Constructs without validating the simplex invariant. The caller
    /// guarantees shape consistency and per-pixel normalization.
    pub fn from_raw_unchecked(
        classes: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(classes * height * width, values.len());
        Self {
            classes,
            height,
            width,
            values,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Confidence for `class` at pixel `(row, col)`.
    #[inline]
    pub fn value(&self, class: usize, row: usize, col: usize) -> f32 {
        self.values[(class * self.height + row) * self.width + col]
    }

    /// Raw class-major values (`C x H x W` row-major).
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_tensor(self) -> TensorF32 {
        TensorF32::from_raw_unchecked(
            vec![self.classes, self.height, self.width],
            self.values,
        )
    }

    pub fn to_tensor(&self) -> TensorF32 {
        self.clone().into_tensor()
    }
}

/// Per-pixel class indices of shape `H x W`.
///
/// Labels are stored as `u8`, which bounds the class count at 255 and leaves
/// 255 itself free as the conventional ignore label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height * width != labels.len() {
            return Err(Error::argument(format!(
                "label count {} does not match {height}x{width}",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Reinterprets a single-channel raster as a label map.
    pub fn from_raster(raster: &Raster) -> Result<Self> {
        if raster.channels() != 1 {
            return Err(Error::argument(format!(
                "label rasters must have 1 channel, got {}",
                raster.channels()
            )));
        }
        Ok(Self {
            height: raster.height(),
            width: raster.width(),
            labels: raster.samples().to_vec(),
        })
    }

    pub fn to_raster(&self) -> Raster {
        Raster::from_raw_unchecked(self.height, self.width, 1, self.labels.clone())
    }
}

/// 8-bit image with 1 (gray) or 3 (color) channels, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::argument(format!(
                "rasters must have 1 or 3 channels, got {channels}"
            )));
        }
        if height * width * channels != samples.len() {
            return Err(Error::argument(format!(
                "sample count {} does not match {height}x{width}x{channels}",
                samples.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            samples,
        })
    }

    pub fn from_raw_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        samples: Vec<u8>,
    ) -> Self {
        debug_assert_eq!(height * width * channels, samples.len());
        Self {
            height,
            width,
            channels,
            samples,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    /// Channel values of the pixel at `(row, col)`.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let start = (row * self.width + col) * self.channels;
        &self.samples[start..start + self.channels]
    }
}

/// Per-pixel argmax over classes; ties break to the lowest class index.
pub fn argmax_labels(map: &ProbabilityMap) -> LabelMap {
    let (h, w, c) = (map.height(), map.width(), map.classes());
    let mut labels = vec![0u8; h * w];
    for row in 0..h {
        for col in 0..w {
            let mut best_class = 0usize;
            let mut best = map.value(0, row, col);
            for class in 1..c {
                let v = map.value(class, row, col);
                if v > best {
                    best = v;
                    best_class = class;
                }
            }
            labels[row * w + col] = best_class as u8;
        }
    }
    LabelMap::from_raw_parts(h, w, labels)
}

impl LabelMap {
    pub(crate) fn from_raw_parts(height: usize, width: usize, labels: Vec<u8>) -> Self {
        debug_assert_eq!(height * width, labels.len());
        Self {
            height,
            width,
            labels,
        }
    }
}

/// Checks a `C x H x W` tensor against the per-pixel simplex invariant and
/// returns the typed map.
///
/// Negative values down to `-VALUE_SLACK` are clamped to zero (32-bit softmax
/// outputs routinely dip that far); anything lower, or a pixel sum further
/// than `SIMPLEX_TOLERANCE` from one, is a validation error naming the first
/// offending pixel.
pub fn validate_probability_map(tensor: TensorF32) -> Result<ProbabilityMap> {
    let dims = tensor.dims();
    if dims.len() != 3 {
        return Err(Error::argument(format!(
            "probability maps need 3 dims (C,H,W), got {:?}",
            dims
        )));
    }
    let (classes, height, width) = (dims[0], dims[1], dims[2]);
    if classes == 0 || height == 0 || width == 0 {
        return Err(Error::argument(format!(
            "probability map dims must be positive, got {:?}",
            dims
        )));
    }
    if classes > 255 {
        return Err(Error::argument(format!(
            "class count {classes} exceeds the 255 supported by u8 labels"
        )));
    }
    let (_, mut values) = tensor.into_parts();
    let plane = height * width;
    for row in 0..height {
        for col in 0..width {
            let mut sum = 0.0f64;
            for class in 0..classes {
                let idx = class * plane + row * width + col;
                let v = f64::from(values[idx]);
                if v < -VALUE_SLACK {
                    return Err(Error::validation(format!(
                        "negative probability {v:.3e} for class {class} at pixel ({row},{col})"
                    )));
                }
                if v > 1.0 + VALUE_SLACK {
                    return Err(Error::validation(format!(
                        "probability {v:.6} > 1 for class {class} at pixel ({row},{col})"
                    )));
                }
                if v < 0.0 {
                    values[idx] = 0.0;
                } else if v > 1.0 {
                    values[idx] = 1.0;
                }
                sum += f64::from(values[idx]);
            }
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::validation(format!(
                    "pixel ({row},{col}) sums to {sum:.7}, outside 1 +/- {SIMPLEX_TOLERANCE:e}"
                )));
            }
        }
    }
    Ok(ProbabilityMap {
        classes,
        height,
        width,
        values,
    })
}
