//! Greedy expert-network selection over an IoU prior matrix, with a
//! brute-force subset enumerator for verification.
//!
//! The selection objective (`oracle_miou`) is the mean over classes of the
//! best per-class IoU within the chosen subset: an upper-bound proxy for the
//! fused score. Greedy selection adds, at each of K steps, the network whose
//! inclusion maximizes that objective.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on the number of subsets `brute_force_select` will enumerate.
pub const BRUTE_FORCE_SUBSET_BUDGET: u128 = 1_000_000;
/// K used when the caller does not specify one.
pub const DEFAULT_K: usize = 3;

/// Units of the numeric values in an IoU CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// Values in 0..=100, divided by 100 on load (the table convention).
    Percent,
    /// Values already in 0..=1.
    Fraction,
}

impl Default for Units {
    fn default() -> Self {
        Units::Percent
    }
}

impl FromStr for Units {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "percent" => Ok(Units::Percent),
            "fraction" => Ok(Units::Fraction),
            other => Err(Error::argument(format!(
                "unknown units {other:?}, expected percent or fraction"
            ))),
        }
    }
}

/// `N x C` matrix of per-class IoU priors, stored as fractions in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct IouMatrix {
    network_names: Vec<String>,
    class_names: Vec<String>,
    values: Vec<f64>,
}

impl IouMatrix {
    pub fn new(
        network_names: Vec<String>,
        class_names: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let (n, c) = (network_names.len(), class_names.len());
        if values.len() != n * c {
            return Err(Error::argument(format!(
                "value count {} does not match {n} networks x {c} classes",
                values.len()
            )));
        }
        for names in [&network_names, &class_names] {
            if names.iter().duplicates().next().is_some() {
                return Err(Error::argument("matrix names must be unique"));
            }
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!(
                "IoU value {v} outside [0,1]; check the units flag"
            )));
        }
        Ok(Self {
            network_names,
            class_names,
            values,
        })
    }

    pub fn networks(&self) -> usize {
        self.network_names.len()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn network_names(&self) -> &[String] {
        &self.network_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn value(&self, network: usize, class: usize) -> f64 {
        self.values[network * self.classes() + class]
    }

    pub fn row(&self, network: usize) -> &[f64] {
        let c = self.classes();
        &self.values[network * c..(network + 1) * c]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.network_names.iter().position(|n| n == name)
    }

    /// New matrix containing only the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<IouMatrix> {
        let mut names = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * self.classes());
        for &r in rows {
            if r >= self.networks() {
                return Err(Error::argument(format!("row {r} out of range")));
            }
            names.push(self.network_names[r].clone());
            values.extend_from_slice(self.row(r));
        }
        IouMatrix::new(names, self.class_names.clone(), values)
    }

    /// Loads a matrix from CSV: header `network,<class>...`, one row per
    /// network. `units` declares how the numbers are scaled.
    pub fn from_csv_reader(reader: impl Read, units: Units) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = csv
            .headers()
            .map_err(|e| Error::format(0, format!("bad CSV header: {e}")))?
            .clone();
        if headers.len() < 2 {
            return Err(Error::format(0, "CSV needs a name column and classes"));
        }
        let class_names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
        let mut network_names = Vec::new();
        let mut values = Vec::new();
        for (i, record) in csv.records().enumerate() {
            let record =
                record.map_err(|e| Error::format(0, format!("bad CSV record {i}: {e}")))?;
            if record.len() != headers.len() {
                return Err(Error::format(
                    0,
                    format!("row {i} has {} fields, expected {}", record.len(), headers.len()),
                ));
            }
            network_names.push(record[0].to_owned());
            for field in record.iter().skip(1) {
                let raw: f64 = field.parse().map_err(|_| {
                    Error::format(0, format!("row {i}: {field:?} is not a number"))
                })?;
                values.push(match units {
                    Units::Percent => raw / 100.0,
                    Units::Fraction => raw,
                });
            }
        }
        IouMatrix::new(network_names, class_names, values)
    }

    pub fn from_csv_path(path: &Path, units: Units) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, units)
    }

    /// Writes the matrix as CSV in the requested units.
    pub fn to_csv_writer(&self, writer: impl Write, units: Units) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = vec!["network".to_owned()];
        header.extend(self.class_names.iter().cloned());
        csv.write_record(&header)
            .map_err(|e| Error::format(0, format!("CSV write failed: {e}")))?;
        for (n, name) in self.network_names.iter().enumerate() {
            let mut row = vec![name.clone()];
            for c in 0..self.classes() {
                let v = match units {
                    Units::Percent => self.value(n, c) * 100.0,
                    Units::Fraction => self.value(n, c),
                };
                row.push(format!("{v}"));
            }
            csv.write_record(&row)
                .map_err(|e| Error::format(0, format!("CSV write failed: {e}")))?;
        }
        csv.flush()
            .map_err(|e| Error::format(0, format!("CSV write failed: {e}")))?;
        Ok(())
    }

    pub fn to_csv_path(&self, path: &Path, units: Units) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_csv_writer(file, units)
    }
}

/// Outcome of a selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Chosen network indices, in pick order (greedy) or ascending
    /// (brute force).
    pub ordered_indices: Vec<usize>,
    /// Names matching `ordered_indices`.
    pub ordered_names: Vec<String>,
    /// Objective value of the full selection.
    pub oracle_miou: f64,
    /// Objective after each prefix of `ordered_indices`; non-decreasing.
    pub per_step_miou: Vec<f64>,
}

/// Mean over classes of the per-class maximum IoU within `subset`.
pub fn oracle_miou(matrix: &IouMatrix, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::argument("subset must be non-empty"));
    }
    for &i in subset {
        if i >= matrix.networks() {
            return Err(Error::argument(format!("network index {i} out of range")));
        }
    }
    let c = matrix.classes();
    let mut sum = 0.0;
    for class in 0..c {
        let mut best = f64::NEG_INFINITY;
        for &i in subset {
            best = best.max(matrix.value(i, class));
        }
        sum += best;
    }
    Ok(sum / c as f64)
}

/// Greedy K-step selection: each step adds the unselected network whose
/// inclusion maximizes `oracle_miou`. Ties keep the lowest candidate index
/// (strict improvement comparison).
pub fn greedy_select(matrix: &IouMatrix, k: usize) -> Result<SelectionResult> {
    let n = matrix.networks();
    if k == 0 || k > n {
        return Err(Error::argument(format!(
            "k must be in 1..={n}, got {k}"
        )));
    }
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut per_step = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best_miou = -1.0;
        let mut best_net = usize::MAX;
        for candidate in 0..n {
            if selected.contains(&candidate) {
                continue;
            }
            let mut trial = selected.clone();
            trial.push(candidate);
            let miou = oracle_miou(matrix, &trial)?;
            if miou > best_miou {
                best_miou = miou;
                best_net = candidate;
            }
        }
        selected.push(best_net);
        per_step.push(best_miou);
    }
    let names = selected
        .iter()
        .map(|&i| matrix.network_names()[i].clone())
        .collect();
    Ok(SelectionResult {
        oracle_miou: *per_step.last().unwrap(),
        ordered_indices: selected,
        ordered_names: names,
        per_step_miou: per_step,
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Enumerates every K-subset and returns the `oracle_miou` maximizer.
///
/// Subsets are visited in lexicographic order and compared with strict
/// improvement, so ties resolve to the lexicographically smallest subset.
/// Refuses when `C(N,K)` exceeds [`BRUTE_FORCE_SUBSET_BUDGET`].
pub fn brute_force_select(matrix: &IouMatrix, k: usize) -> Result<SelectionResult> {
    let n = matrix.networks();
    if k == 0 || k > n {
        return Err(Error::argument(format!("k must be in 1..={n}, got {k}")));
    }
    let count = binomial(n, k);
    if count > BRUTE_FORCE_SUBSET_BUDGET {
        return Err(Error::budget(format!(
            "C({n},{k}) = {count} subsets exceeds the {BRUTE_FORCE_SUBSET_BUDGET} budget"
        )));
    }
    let mut best_subset: Option<Vec<usize>> = None;
    let mut best_miou = -1.0;
    for subset in (0..n).combinations(k) {
        let miou = oracle_miou(matrix, &subset)?;
        if miou > best_miou {
            best_miou = miou;
            best_subset = Some(subset);
        }
    }
    let subset = best_subset.unwrap();
    let per_step: Vec<f64> = (1..=k)
        .map(|len| oracle_miou(matrix, &subset[..len]).unwrap())
        .collect();
    let names = subset
        .iter()
        .map(|&i| matrix.network_names()[i].clone())
        .collect();
    Ok(SelectionResult {
        ordered_indices: subset,
        ordered_names: names,
        oracle_miou: best_miou,
        per_step_miou: per_step,
    })
}
