//! Sequential model-based optimization of the CRF parameters against
//! validation-set mIoU.
//!
//! The `smbo` strategy warms up with `min(5, trials)` random samples, then
//! fits a Gaussian-process surrogate (squared-exponential kernel over the
//! bounds-normalized unit cube, observation noise 1e-6) and picks, per
//! step, the expected-improvement maximizer among 1024 seeded candidate
//! points. Everything derives from the master seed: reruns with the same
//! seed produce identical trial sequences.

use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crf::{mean_field_windowed, CrfParams, DEFAULT_TRUNCATION_MULTIPLIER};
use crate::error::{Error, Result};
use crate::metrics::{iou_report, ConfusionMatrix};
use crate::synth::derive_seed;
use crate::tensor::{LabelMap, ProbabilityMap, Raster};

/// Trial budget matching the reported tuning setup.
pub const DEFAULT_TRIALS: usize = 20;
/// Random warm-up trials before the surrogate takes over.
pub const WARMUP_TRIALS: usize = 5;
/// Candidate points scored by expected improvement per SMBO step.
pub const CANDIDATES_PER_STEP: usize = 1024;
/// GP observation noise on normalized scores.
pub const OBSERVATION_NOISE: f64 = 1e-6;
/// Isotropic squared-exponential lengthscale in unit-cube coordinates.
pub const GP_LENGTH_SCALE: f64 = 0.2;
/// Half of each step's candidates perturb the incumbent best by up to
/// this much per normalized coordinate; the rest sample the whole space.
/// Good settings often sit in narrow slivers (tiny kernel weights), which
/// global draws alone resolve poorly.
pub const LOCAL_CANDIDATE_JITTER: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
    pub scale: Scale,
}

impl ParamRange {
    pub fn linear(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            scale: Scale::Linear,
        }
    }

    pub fn log(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            scale: Scale::Log,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo >= self.hi {
            return Err(Error::argument(format!(
                "{name}: bounds must satisfy lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.scale == Scale::Log && self.lo <= 0.0 {
            return Err(Error::argument(format!(
                "{name}: log-scaled bounds must be positive, got lo = {}",
                self.lo
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        match self.scale {
            Scale::Linear => self.lo + u * (self.hi - self.lo),
            Scale::Log => (self.lo.ln() + u * (self.hi.ln() - self.lo.ln())).exp(),
        }
    }

    /// Maps a value into [0,1] according to the range's scale.
    fn normalize(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.lo) / (self.hi - self.lo),
            Scale::Log => (v.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln()),
        }
    }

    /// Maps a unit-interval coordinate back into the range.
    fn from_unit(&self, u: f64) -> f64 {
        match self.scale {
            Scale::Linear => self.lo + u * (self.hi - self.lo),
            Scale::Log => (self.lo.ln() + u * (self.hi.ln() - self.lo.ln())).exp(),
        }
    }
}

/// Bounds and scales for the five tuned CRF parameters. The mean-field
/// iteration count stays fixed so the search remains five-dimensional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub sigma_g: ParamRange,
    pub sigma_b: ParamRange,
    pub sigma_c: ParamRange,
    pub w_g: ParamRange,
    pub w_b: ParamRange,
}

impl Default for SearchSpace {
    /// Bounds bracketing typical dense-CRF settings at these image scales.
    fn default() -> Self {
        Self {
            sigma_g: ParamRange::log(1.0, 80.0),
            sigma_b: ParamRange::log(1.0, 80.0),
            sigma_c: ParamRange::log(1.0, 60.0),
            w_g: ParamRange::linear(0.0, 10.0),
            w_b: ParamRange::linear(0.0, 10.0),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        self.sigma_g.validate("sigma_g")?;
        self.sigma_b.validate("sigma_b")?;
        self.sigma_c.validate("sigma_c")?;
        self.w_g.validate("w_g")?;
        self.w_b.validate("w_b")?;
        Ok(())
    }

    fn ranges(&self) -> [ParamRange; 5] {
        [self.sigma_g, self.sigma_b, self.sigma_c, self.w_g, self.w_b]
    }

    /// Draws a full parameter set; the iteration count and probability
    /// floor keep their defaults.
    pub fn sample(&self, rng: &mut impl Rng) -> CrfParams {
        CrfParams {
            sigma_g: self.sigma_g.sample(rng),
            sigma_b: self.sigma_b.sample(rng),
            sigma_c: self.sigma_c.sample(rng),
            w_g: self.w_g.sample(rng),
            w_b: self.w_b.sample(rng),
            ..CrfParams::default()
        }
    }

    fn normalize(&self, params: &CrfParams) -> [f64; 5] {
        let ranges = self.ranges();
        let values = [
            params.sigma_g,
            params.sigma_b,
            params.sigma_c,
            params.w_g,
            params.w_b,
        ];
        let mut out = [0.0; 5];
        for i in 0..5 {
            out[i] = ranges[i].normalize(values[i]);
        }
        out
    }

    fn from_unit(&self, u: &[f64; 5]) -> CrfParams {
        let ranges = self.ranges();
        CrfParams {
            sigma_g: ranges[0].from_unit(u[0]),
            sigma_b: ranges[1].from_unit(u[1]),
            sigma_c: ranges[2].from_unit(u[2]),
            w_g: ranges[3].from_unit(u[3]),
            w_b: ranges[4].from_unit(u[4]),
            ..CrfParams::default()
        }
    }

    pub fn from_json_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let space: SearchSpace = serde_json::from_str(&text)
            .map_err(|e| Error::format(0, format!("bad search-space JSON: {e}")))?;
        space.validate()?;
        Ok(space)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Smbo,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Strategy::Random),
            "smbo" => Ok(Strategy::Smbo),
            other => Err(Error::argument(format!(
                "unknown strategy {other:?}, expected random or smbo"
            ))),
        }
    }
}

/// One evaluated trial. Wall time is informational and excluded from the
/// serialized log so reruns with the same seed produce byte-identical
/// JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub params: CrfParams,
    pub score: f64,
    pub seed: u64,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: CrfParams,
    pub best_score: f64,
    pub trials: Vec<TrialRecord>,
}

/// One validation item: the fused map to refine, the image driving the
/// bilateral kernel, and the ground truth to score against.
#[derive(Debug, Clone)]
pub struct ValidationItem {
    pub fused: ProbabilityMap,
    pub image: Raster,
    pub ground_truth: LabelMap,
}

/// Runs CRF refinement (windowed backend) over the validation set and
/// returns the resulting mIoU. Items are refined in parallel; the
/// confusion merge is commutative, so the result is order-independent.
pub fn objective(params: &CrfParams, validation: &[ValidationItem]) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::argument("validation set must be non-empty"));
    }
    let classes = validation[0].fused.classes();
    let per_item: Vec<ConfusionMatrix> = validation
        .par_iter()
        .map(|item| {
            let (_, labels) = mean_field_windowed(
                &item.fused,
                &item.image,
                params,
                DEFAULT_TRUNCATION_MULTIPLIER,
            )?;
            let mut cm = ConfusionMatrix::new(classes)?;
            cm.accumulate(&labels, &item.ground_truth, None)?;
            Ok(cm)
        })
        .collect::<Result<_>>()?;
    let mut cm = ConfusionMatrix::new(classes)?;
    for item_cm in &per_item {
        cm.merge(item_cm)?;
    }
    iou_report(&cm, &[])?
        .miou
        .ok_or_else(|| Error::validation("no class contributed to the validation mIoU"))
}

const TAG_TRIAL: u64 = 0x7472_6961;
const TAG_CANDIDATES: u64 = 0x6361_6e64;

/// Searches the space for `trials` evaluations of `objective` and returns
/// the best-scoring trial with the full log. Deterministic given the seed:
/// per-trial seeds derive from `(seed, trial index)`.
pub fn tune(
    space: &SearchSpace,
    trials: usize,
    seed: u64,
    strategy: Strategy,
    mut objective: impl FnMut(&CrfParams) -> Result<f64>,
) -> Result<TuneOutcome> {
    space.validate()?;
    if trials == 0 {
        return Err(Error::argument("trials must be >= 1"));
    }
    let mut records: Vec<TrialRecord> = Vec::with_capacity(trials);
    let warmup = match strategy {
        Strategy::Random => trials,
        Strategy::Smbo => WARMUP_TRIALS.min(trials),
    };
    for index in 0..trials {
        let trial_seed = derive_seed(seed, TAG_TRIAL, index as u64);
        let params = if index < warmup {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
            space.sample(&mut rng)
        } else {
            suggest_by_expected_improvement(space, &records, seed, index)?
        };
        let start = std::time::Instant::now();
        let score = objective(&params)?;
        if !score.is_finite() {
            return Err(Error::validation(format!(
                "objective returned non-finite score {score} at trial {index}"
            )));
        }
        records.push(TrialRecord {
            index,
            params,
            score,
            seed: trial_seed,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    let best = records
        .iter()
        .max_by(|a, b| {
            a.score
                .partial_cmp(&b.score)
                .unwrap()
                .then(b.index.cmp(&a.index)) // earliest trial wins ties
        })
        .unwrap();
    Ok(TuneOutcome {
        best: best.params,
        best_score: best.score,
        trials: records.clone(),
    })
}

/// Fits the GP on all observed trials and returns the EI-maximizing
/// candidate among [`CANDIDATES_PER_STEP`] seeded draws.
fn suggest_by_expected_improvement(
    space: &SearchSpace,
    records: &[TrialRecord],
    seed: u64,
    index: usize,
) -> Result<CrfParams> {
    let xs: Vec<[f64; 5]> = records.iter().map(|r| space.normalize(&r.params)).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.score).collect();
    let gp = GaussianProcess::fit(&xs, &ys)?;
    let best_y = gp.normalized_best();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_CANDIDATES, index as u64));
    let mut best_candidate = None;
    let mut best_ei = f64::NEG_INFINITY;
    for _ in 0..CANDIDATES_PER_STEP {
        let candidate = space.sample(&mut rng);
        let x = space.normalize(&candidate);
        let (mu, var) = gp.predict(&x);
        let ei = expected_improvement(mu, var.max(0.0).sqrt(), best_y);
        if ei > best_ei {
            best_ei = ei;
            best_candidate = Some(candidate);
        }
    }
    Ok(best_candidate.unwrap())
}

// ---------------------------------------------------------------------------
// Gaussian process on the unit cube
// ---------------------------------------------------------------------------

struct GaussianProcess {
    xs: Vec<[f64; 5]>,
    chol: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    y_norm_max: f64,
}

fn rbf(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    let mut d2 = 0.0;
    for i in 0..5 {
        let d = a[i] - b[i];
        d2 += d * d;
    }
    (-d2 / (2.0 * GP_LENGTH_SCALE * GP_LENGTH_SCALE)).exp()
}

impl GaussianProcess {
    fn fit(xs: &[[f64; 5]], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let variance = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if variance.sqrt() < 1e-12 {
            1.0
        } else {
            variance.sqrt()
        };
        let y_norm: Vec<f64> = ys.iter().map(|y| (y - y_mean) / y_std).collect();
        let y_norm_max = y_norm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let mut k = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..n {
                k[i][j] = rbf(&xs[i], &xs[j]);
            }
        }
        // deterministic jitter ladder in case the kernel matrix is nearly
        // singular (duplicate candidates)
        let mut noise = OBSERVATION_NOISE;
        let chol = loop {
            match cholesky(&k, noise) {
                Some(l) => break l,
                None if noise < 1e-2 => noise *= 10.0,
                None => {
                    return Err(Error::validation(
                        "GP kernel matrix is not positive definite",
                    ))
                }
            }
        };
        let alpha = chol_solve(&chol, &y_norm);
        Ok(Self {
            xs: xs.to_vec(),
            chol,
            alpha,
            y_mean,
            y_std,
            y_norm_max,
        })
    }

    fn normalized_best(&self) -> f64 {
        self.y_norm_max
    }

    /// Posterior mean and variance at `x`, in normalized-score units.
    fn predict(&self, x: &[f64; 5]) -> (f64, f64) {
        let n = self.xs.len();
        let kstar: Vec<f64> = (0..n).map(|i| rbf(&self.xs[i], x)).collect();
        let mu: f64 = kstar.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        // var = k(x,x) - k*^T K^-1 k*, via one triangular solve
        let v = forward_substitute(&self.chol, &kstar);
        let var = 1.0 - v.iter().map(|vi| vi * vi).sum::<f64>();
        (mu, var)
    }

    #[allow(dead_code)]
    fn denormalize(&self, y: f64) -> f64 {
        y * self.y_std + self.y_mean
    }
}

fn cholesky(k: &[Vec<f64>], noise: f64) -> Option<Vec<Vec<f64>>> {
    let n = k.len();
    let mut l = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = k[i][j] + if i == j { noise } else { 0.0 };
            for m in 0..j {
                sum -= l[i][m] * l[j][m];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

fn forward_substitute(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = b[i];
        for j in 0..i {
            sum -= l[i][j] * y[j];
        }
        y[i] = sum / l[i][i];
    }
    y
}

fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let y = forward_substitute(l, b);
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for j in (i + 1)..n {
            sum -= l[j][i] * x[j];
        }
        x[i] = sum / l[i][i];
    }
    x
}

/// Rational approximation of erf (max error ~1.5e-7), plenty for ranking
/// acquisition values.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement for maximization.
fn expected_improvement(mu: f64, sd: f64, best: f64) -> f64 {
    if sd < 1e-12 {
        return (mu - best).max(0.0);
    }
    let z = (mu - best) / sd;
    (mu - best) * normal_cdf(z) + sd * normal_pdf(z)
}

// ---------------------------------------------------------------------------
// Trial log
// ---------------------------------------------------------------------------

/// Writes one JSON record per line.
pub fn write_trials_jsonl(path: &Path, trials: &[TrialRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    for trial in trials {
        let line = serde_json::to_string(trial).expect("trial serialize");
        writeln!(writer, "{line}").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn load_trials_jsonl(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut trials = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        trials.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format(0, format!("bad trial record {i}: {e}")))?,
        );
    }
    Ok(trials)
}
