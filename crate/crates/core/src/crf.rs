//! Fully-connected CRF refinement of a fused probability map via mean-field
//! inference.
//!
//! The energy couples per-pixel unary costs `-log P` with a Potts pairwise
//! term over all unordered pixel pairs, weighted by a spatial Gaussian
//! kernel and an edge-aware bilateral kernel:
//!
//! `E(x) = sum_i -log P_{x_i}(i) + sum_{i<j} [x_i != x_j] (w_g k_g(i,j) + w_b k_b(i,j))`
//!
//! Three routes are provided: an exact all-pairs mean-field backend for
//! small images, a truncated-window backend that scales to full frames, and
//! an exhaustive enumeration oracle that finds the global energy minimum on
//! tiny instances.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, ProbabilityMap, Raster, TensorF32};

/// Floor applied to probabilities before the log (the unary cost is
/// undefined at zero).
pub const DEFAULT_EPSILON_PROB: f64 = 1e-12;
/// Mean-field pass count when the caller does not specify one.
pub const DEFAULT_ITERATIONS: usize = 5;
/// Pixel cap for the exact all-pairs backend (64 x 64).
pub const EXACT_PIXEL_BUDGET: usize = 4096;
/// Labeling cap for the exhaustive oracle.
pub const EXHAUSTIVE_LABELING_BUDGET: u128 = 1_000_000;
/// Window radius is `ceil(multiplier * max(sigma_g, sigma_b))`; at 3 the
/// neglected kernel mass per pair is below `exp(-4.5)`.
pub const DEFAULT_TRUNCATION_MULTIPLIER: f64 = 3.0;
/// Early stop once no Q entry moves more than this between iterations.
pub const MEAN_FIELD_CONVERGENCE_TOL: f64 = 1e-4;

/// Dense-CRF parameters: kernel bandwidths, kernel weights and the
/// mean-field iteration count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    /// Spatial stddev of the Gaussian kernel, in pixels.
    pub sigma_g: f64,
    /// Spatial stddev of the bilateral kernel, in pixels.
    pub sigma_b: f64,
    /// Color stddev of the bilateral kernel, in 8-bit intensity units.
    pub sigma_c: f64,
    /// Gaussian kernel weight.
    pub w_g: f64,
    /// Bilateral kernel weight.
    pub w_b: f64,
    /// Mean-field pass count (early stop may finish sooner).
    pub iterations: usize,
    #[serde(default = "default_epsilon_prob")]
    pub epsilon_prob: f64,
}

fn default_epsilon_prob() -> f64 {
    DEFAULT_EPSILON_PROB
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            sigma_g: 2.0,
            sigma_b: 2.0,
            sigma_c: 30.0,
            w_g: 1.0,
            w_b: 1.0,
            iterations: DEFAULT_ITERATIONS,
            epsilon_prob: DEFAULT_EPSILON_PROB,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_g", self.sigma_g),
            ("sigma_b", self.sigma_b),
            ("sigma_c", self.sigma_c),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::argument(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        for (name, v) in [("w_g", self.w_g), ("w_b", self.w_b)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::argument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !self.epsilon_prob.is_finite() || self.epsilon_prob <= 0.0 {
            return Err(Error::argument(format!(
                "epsilon_prob must be finite and > 0, got {}",
                self.epsilon_prob
            )));
        }
        Ok(())
    }

    pub fn from_json_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: CrfParams = serde_json::from_str(&text)
            .map_err(|e| Error::format(0, format!("bad params JSON: {e}")))?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_json_path(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("params serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// `C x H x W` non-negative unary costs.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField {
    classes: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl UnaryField {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn value(&self, class: usize, row: usize, col: usize) -> f64 {
        self.values[(class * self.height + row) * self.width + col]
    }
}

/// Mean-field marginals, simplex-normalized per pixel after every
/// iteration. Stored class-major (`C x H x W`) like the probability maps.
#[derive(Debug, Clone, PartialEq)]
pub struct QField {
    classes: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl QField {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn value(&self, class: usize, row: usize, col: usize) -> f64 {
        self.values[(class * self.height + row) * self.width + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Debug dump as an f32 tensor (CWT1-compatible).
    pub fn to_tensor(&self) -> TensorF32 {
        TensorF32::from_raw_unchecked(
            vec![self.classes, self.height, self.width],
            self.values.iter().map(|v| *v as f32).collect(),
        )
    }
}

/// `psi_u(c, i, j) = -log(max(P_c(i,j), epsilon_prob))`.
pub fn unary_potentials(map: &ProbabilityMap, epsilon_prob: f64) -> UnaryField {
    let (c, h, w) = (map.classes(), map.height(), map.width());
    let values = map
        .values()
        .iter()
        .map(|&p| -f64::from(p).max(epsilon_prob).ln())
        .collect();
    UnaryField {
        classes: c,
        height: h,
        width: w,
        values,
    }
}

#[inline]
fn spatial_half_term(p1: (usize, usize), p2: (usize, usize), sigma: f64) -> f64 {
    let di = p1.0 as f64 - p2.0 as f64;
    let dj = p1.1 as f64 - p2.1 as f64;
    (di * di + dj * dj) / (2.0 * sigma * sigma)
}

#[inline]
fn color_half_term(c1: &[u8], c2: &[u8], sigma: f64) -> f64 {
    let mut d2 = 0.0f64;
    for (a, b) in c1.iter().zip(c2) {
        let d = f64::from(*a) - f64::from(*b);
        d2 += d * d;
    }
    d2 / (2.0 * sigma * sigma)
}

/// Spatial Gaussian kernel `exp(-||p1-p2||^2 / (2 sigma_g^2))`, in (0, 1].
pub fn gaussian_kernel(p1: (usize, usize), p2: (usize, usize), sigma_g: f64) -> f64 {
    (-spatial_half_term(p1, p2, sigma_g)).exp()
}

/// Bilateral kernel
/// `exp(-||p1-p2||^2 / (2 sigma_b^2) - ||c1-c2||^2 / (2 sigma_c^2))`.
///
/// The color distance is the squared Euclidean distance over raw 8-bit
/// channel values, whatever the channel count.
pub fn bilateral_kernel(
    p1: (usize, usize),
    p2: (usize, usize),
    c1: &[u8],
    c2: &[u8],
    sigma_b: f64,
    sigma_c: f64,
) -> f64 {
    (-(spatial_half_term(p1, p2, sigma_b) + color_half_term(c1, c2, sigma_c))).exp()
}

fn check_refinement_inputs(
    map: &ProbabilityMap,
    image: &Raster,
    params: &CrfParams,
) -> Result<()> {
    params.validate()?;
    if image.height() != map.height() || image.width() != map.width() {
        return Err(Error::argument(format!(
            "image is {}x{}, probability map {}x{}",
            image.height(),
            image.width(),
            map.height(),
            map.width()
        )));
    }
    Ok(())
}

/// Potts energy of a labeling: unary costs plus the pairwise penalty over
/// every unordered pixel pair with differing labels.
pub fn total_energy(
    labels: &LabelMap,
    map: &ProbabilityMap,
    image: &Raster,
    params: &CrfParams,
) -> Result<f64> {
    check_refinement_inputs(map, image, params)?;
    if labels.height() != map.height() || labels.width() != map.width() {
        return Err(Error::argument(format!(
            "labels are {}x{}, probability map {}x{}",
            labels.height(),
            labels.width(),
            map.height(),
            map.width()
        )));
    }
    let (h, w, c) = (map.height(), map.width(), map.classes());
    let mut energy = 0.0f64;
    for row in 0..h {
        for col in 0..w {
            let x = labels.label(row, col) as usize;
            if x >= c {
                return Err(Error::argument(format!(
                    "label {x} at ({row},{col}) out of range for {c} classes"
                )));
            }
            energy += -f64::from(map.value(x, row, col)).max(params.epsilon_prob).ln();
        }
    }
    let px = h * w;
    for i in 0..px {
        let (ri, ci) = (i / w, i % w);
        let xi = labels.label(ri, ci);
        for j in (i + 1)..px {
            let (rj, cj) = (j / w, j % w);
            if xi == labels.label(rj, cj) {
                continue;
            }
            let kg = gaussian_kernel((ri, ci), (rj, cj), params.sigma_g);
            let kb = bilateral_kernel(
                (ri, ci),
                (rj, cj),
                image.pixel(ri, ci),
                image.pixel(rj, cj),
                params.sigma_b,
                params.sigma_c,
            );
            energy += params.w_g * kg + params.w_b * kb;
        }
    }
    Ok(energy)
}

/// Softmax of `-unary[c] - (msg_total - msg[c])` into `out`, with the usual
/// max subtraction for stability.
fn normalize_update(unary_px: &[f64], msg: &[f64], out: &mut [f64]) {
    let msg_total: f64 = msg.iter().sum();
    let mut max_logit = f64::NEG_INFINITY;
    for c in 0..unary_px.len() {
        let logit = -unary_px[c] - (msg_total - msg[c]);
        out[c] = logit;
        if logit > max_logit {
            max_logit = logit;
        }
    }
    let mut sum = 0.0f64;
    for v in out.iter_mut() {
        *v = (*v - max_logit).exp();
        sum += *v;
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
}

/// Converts pixel-major marginals plus the argmax labeling into the public
/// output pair.
fn finish_mean_field(
    q_pixel_major: Vec<f64>,
    classes: usize,
    height: usize,
    width: usize,
) -> (QField, LabelMap) {
    let px = height * width;
    let mut values = vec![0.0f64; classes * px];
    let mut labels = vec![0u8; px];
    for i in 0..px {
        let dist = &q_pixel_major[i * classes..(i + 1) * classes];
        let mut best = 0usize;
        for c in 1..classes {
            if dist[c] > dist[best] {
                best = c;
            }
        }
        labels[i] = best as u8;
        for c in 0..classes {
            values[c * px + i] = dist[c];
        }
    }
    (
        QField {
            classes,
            height,
            width,
            values,
        },
        LabelMap::from_raw_parts(height, width, labels),
    )
}

fn unary_pixel_major(map: &ProbabilityMap, epsilon_prob: f64) -> Vec<f64> {
    let (c, h, w) = (map.classes(), map.height(), map.width());
    let px = h * w;
    let mut unary = vec![0.0f64; px * c];
    for class in 0..c {
        for i in 0..px {
            unary[i * c + class] =
                -f64::from(map.values()[class * px + i]).max(epsilon_prob).ln();
        }
    }
    unary
}

fn q_init_pixel_major(map: &ProbabilityMap) -> Vec<f64> {
    let (c, h, w) = (map.classes(), map.height(), map.width());
    let px = h * w;
    let mut q = vec![0.0f64; px * c];
    for class in 0..c {
        for i in 0..px {
            q[i * c + class] = f64::from(map.values()[class * px + i]);
        }
    }
    q
}

/// Exact all-pairs mean-field inference.
///
/// Q starts at the fused map; each pass sweeps the pixels in row-major
/// order, computing the kernel-weighted message `m_i(c) = sum_{j != i}
/// (w_g k_g + w_b k_b) Q_j(c)` over every other pixel and renormalizing
/// `Q_i(c) <- softmax(-psi_u,i(c) - sum_{c' != c} m_i(c'))` in place, so
/// later pixels in the sweep see the fresh marginals (sequential
/// coordinate ascent; the parallel variant oscillates on strongly coupled
/// instances). Stops early when no entry moves more than
/// [`MEAN_FIELD_CONVERGENCE_TOL`]. Refuses images above
/// [`EXACT_PIXEL_BUDGET`] pixels; use [`mean_field_windowed`] there.
pub fn mean_field_dense_exact(
    map: &ProbabilityMap,
    image: &Raster,
    params: &CrfParams,
) -> Result<(QField, LabelMap)> {
    check_refinement_inputs(map, image, params)?;
    let (c, h, w) = (map.classes(), map.height(), map.width());
    let px = h * w;
    if px > EXACT_PIXEL_BUDGET {
        return Err(Error::budget(format!(
            "{px} pixels exceed the exact backend budget of {EXACT_PIXEL_BUDGET}; \
             use the windowed backend"
        )));
    }
    let unary = unary_pixel_major(map, params.epsilon_prob);
    let mut q = q_init_pixel_major(map);
    let mut msg = vec![0.0f64; c];
    let mut updated = vec![0.0f64; c];
    for _ in 0..params.iterations {
        let mut delta = 0.0f64;
        for i in 0..px {
            let (ri, ci) = (i / w, i % w);
            let color_i = image.pixel(ri, ci);
            msg.fill(0.0);
            for j in 0..px {
                if j == i {
                    continue;
                }
                let (rj, cj) = (j / w, j % w);
                let kg = gaussian_kernel((ri, ci), (rj, cj), params.sigma_g);
                let kb = bilateral_kernel(
                    (ri, ci),
                    (rj, cj),
                    color_i,
                    image.pixel(rj, cj),
                    params.sigma_b,
                    params.sigma_c,
                );
                let pair_weight = params.w_g * kg + params.w_b * kb;
                let qj = &q[j * c..(j + 1) * c];
                for (slot, v) in msg.iter_mut().zip(qj) {
                    *slot += pair_weight * v;
                }
            }
            normalize_update(&unary[i * c..(i + 1) * c], &msg, &mut updated);
            let qi = &mut q[i * c..(i + 1) * c];
            for (slot, v) in qi.iter_mut().zip(&updated) {
                delta = delta.max((*slot - v).abs());
                *slot = *v;
            }
        }
        if delta < MEAN_FIELD_CONVERGENCE_TOL {
            break;
        }
    }
    Ok(finish_mean_field(q, c, h, w))
}

/// Windowed mean-field inference: the identical update rule with message
/// sums truncated to a square window of radius
/// `ceil(truncation_multiplier * max(sigma_g, sigma_b))` around each pixel.
///
/// With a radius that covers the whole image this reproduces
/// [`mean_field_dense_exact`]; at the default multiplier the neglected
/// kernel mass per pair is below `exp(-multiplier^2 / 2)`.
pub fn mean_field_windowed(
    map: &ProbabilityMap,
    image: &Raster,
    params: &CrfParams,
    truncation_multiplier: f64,
) -> Result<(QField, LabelMap)> {
    check_refinement_inputs(map, image, params)?;
    if !truncation_multiplier.is_finite() || truncation_multiplier <= 0.0 {
        return Err(Error::argument(format!(
            "truncation multiplier must be finite and > 0, got {truncation_multiplier}"
        )));
    }
    let (c, h, w) = (map.classes(), map.height(), map.width());
    let sigma_max = params.sigma_g.max(params.sigma_b);
    let cover_all = h.max(w).saturating_sub(1);
    let radius = ((truncation_multiplier * sigma_max).ceil() as usize).min(cover_all);

    // spatial kernel values depend only on the pixel offset: precompute
    // them once per window cell
    let span = 2 * radius + 1;
    let mut gauss_table = vec![0.0f64; span * span];
    let mut bilateral_spatial = vec![0.0f64; span * span];
    for dy in 0..span {
        for dx in 0..span {
            let p1 = (radius, radius);
            let p2 = (dy, dx);
            gauss_table[dy * span + dx] = gaussian_kernel(p1, p2, params.sigma_g);
            bilateral_spatial[dy * span + dx] = spatial_half_term(p1, p2, params.sigma_b);
        }
    }

    let unary = unary_pixel_major(map, params.epsilon_prob);
    let mut q = q_init_pixel_major(map);
    let mut msg = vec![0.0f64; c];
    let mut updated = vec![0.0f64; c];
    for _ in 0..params.iterations {
        let mut delta = 0.0f64;
        for i in 0..h * w {
            let (ri, ci) = (i / w, i % w);
            let color_i = image.pixel(ri, ci);
            let row_lo = ri.saturating_sub(radius);
            let row_hi = (ri + radius).min(h - 1);
            let col_lo = ci.saturating_sub(radius);
            let col_hi = (ci + radius).min(w - 1);
            msg.fill(0.0);
            for rj in row_lo..=row_hi {
                for cj in col_lo..=col_hi {
                    if rj == ri && cj == ci {
                        continue;
                    }
                    let off = (rj + radius - ri) * span + (cj + radius - ci);
                    let kg = gauss_table[off];
                    let kb = (-(bilateral_spatial[off]
                        + color_half_term(color_i, image.pixel(rj, cj), params.sigma_c)))
                    .exp();
                    let pair_weight = params.w_g * kg + params.w_b * kb;
                    let j = rj * w + cj;
                    let qj = &q[j * c..(j + 1) * c];
                    for (slot, v) in msg.iter_mut().zip(qj) {
                        *slot += pair_weight * v;
                    }
                }
            }
            normalize_update(&unary[i * c..(i + 1) * c], &msg, &mut updated);
            let qi = &mut q[i * c..(i + 1) * c];
            for (slot, v) in qi.iter_mut().zip(&updated) {
                delta = delta.max((*slot - v).abs());
                *slot = *v;
            }
        }
        if delta < MEAN_FIELD_CONVERGENCE_TOL {
            break;
        }
    }
    Ok(finish_mean_field(q, c, h, w))
}

/// Exhaustive MAP oracle: enumerates all `C^(H*W)` labelings and returns
/// the global energy minimum. Ties resolve to the lexicographically
/// smallest labeling (strict improvement over lexicographic enumeration).
/// Refuses instances above [`EXHAUSTIVE_LABELING_BUDGET`].
pub fn exhaustive_map(
    map: &ProbabilityMap,
    image: &Raster,
    params: &CrfParams,
) -> Result<LabelMap> {
    check_refinement_inputs(map, image, params)?;
    let (c, h, w) = (map.classes(), map.height(), map.width());
    let px = h * w;
    let count = (c as u128)
        .checked_pow(px as u32)
        .ok_or_else(|| Error::budget(format!("{c}^{px} labelings overflow the budget")))?;
    if count > EXHAUSTIVE_LABELING_BUDGET {
        return Err(Error::budget(format!(
            "{c}^{px} = {count} labelings exceed the {EXHAUSTIVE_LABELING_BUDGET} budget"
        )));
    }

    // cache the exact terms total_energy would evaluate
    let mut unary = vec![0.0f64; px * c];
    for class in 0..c {
        for i in 0..px {
            unary[i * c + class] =
                -f64::from(map.values()[class * px + i]).max(params.epsilon_prob).ln();
        }
    }
    let mut pair_weights = Vec::with_capacity(px * (px.saturating_sub(1)) / 2);
    for i in 0..px {
        let (ri, ci) = (i / w, i % w);
        for j in (i + 1)..px {
            let (rj, cj) = (j / w, j % w);
            let kg = gaussian_kernel((ri, ci), (rj, cj), params.sigma_g);
            let kb = bilateral_kernel(
                (ri, ci),
                (rj, cj),
                image.pixel(ri, ci),
                image.pixel(rj, cj),
                params.sigma_b,
                params.sigma_c,
            );
            pair_weights.push(params.w_g * kg + params.w_b * kb);
        }
    }

    let mut labeling = vec![0usize; px];
    let mut best_labeling = labeling.clone();
    let mut best_energy = f64::INFINITY;
    loop {
        // energy in the same accumulation order as total_energy
        let mut energy = 0.0f64;
        for i in 0..px {
            energy += unary[i * c + labeling[i]];
        }
        let mut pair = 0usize;
        for i in 0..px {
            for j in (i + 1)..px {
                if labeling[i] != labeling[j] {
                    energy += pair_weights[pair];
                }
                pair += 1;
            }
        }
        if energy < best_energy {
            best_energy = energy;
            best_labeling.copy_from_slice(&labeling);
        }
        // lexicographic odometer: advance the last pixel fastest
        let mut pos = px;
        loop {
            if pos == 0 {
                return Ok(LabelMap::from_raw_parts(
                    h,
                    w,
                    best_labeling.iter().map(|&l| l as u8).collect(),
                ));
            }
            pos -= 1;
            labeling[pos] += 1;
            if labeling[pos] < c {
                break;
            }
            labeling[pos] = 0;
        }
    }
}
