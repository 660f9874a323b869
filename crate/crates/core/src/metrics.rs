//! Confusion-matrix accumulation and IoU/mIoU reporting.
//!
//! `IoU_c = TP_c / (TP_c + FP_c + FN_c)` per class; mIoU averages the
//! defined, non-excluded classes. Excluded classes (e.g. a clutter class)
//! are still reported per class but left out of the mean; classes that never
//! occur (zero union) are undefined and likewise dropped from the mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LabelMap;

/// Conventional ignore label sitting outside the class range.
pub const DEFAULT_IGNORE_LABEL: u8 = 255;

/// `C x C` pixel counts; entry `(gt, pred)` counts pixels of ground-truth
/// class `gt` predicted as `pred`. Counts are 64-bit so gigapixel
/// accumulation cannot overflow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<Self> {
        if classes == 0 || classes > 255 {
            return Err(Error::argument(format!(
                "class count must be in 1..=255, got {classes}"
            )));
        }
        Ok(Self {
            classes,
            counts: vec![0; classes * classes],
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    /// Total number of scored pixels.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Scores one image pair. Pixels whose ground truth equals
    /// `ignore_label` are skipped; any other label must be `< classes`.
    pub fn accumulate(
        &mut self,
        pred: &LabelMap,
        gt: &LabelMap,
        ignore_label: Option<u8>,
    ) -> Result<()> {
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::argument(format!(
                "prediction is {}x{}, ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let c = self.classes;
        for (p, g) in pred.labels().iter().zip(gt.labels()) {
            if Some(*g) == ignore_label {
                continue;
            }
            let (p, g) = (*p as usize, *g as usize);
            if g >= c {
                return Err(Error::argument(format!(
                    "ground-truth label {g} out of range for {c} classes"
                )));
            }
            if p >= c {
                return Err(Error::argument(format!(
                    "predicted label {p} out of range for {c} classes"
                )));
            }
            self.counts[g * c + p] += 1;
        }
        Ok(())
    }

    /// Adds another matrix; merging is commutative, so per-image matrices
    /// may be computed in parallel and combined in any order.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::argument(format!(
                "cannot merge {}-class into {}-class matrix",
                other.classes, self.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Per-class IoUs with the mean over included classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    /// IoU per class; `None` when the class never occurs (zero union).
    pub per_class: Vec<Option<f64>>,
    /// Mean of the defined, non-excluded per-class IoUs; `None` when no
    /// class contributes.
    pub miou: Option<f64>,
    /// Class indices reported but kept out of the mean.
    pub excluded: Vec<usize>,
}

impl IouReport {
    /// Plain-text table mirroring the per-class-columns-plus-mIoU layout.
    pub fn render_table(&self, class_names: Option<&[String]>) -> String {
        let names: Vec<String> = (0..self.per_class.len())
            .map(|c| {
                class_names
                    .and_then(|n| n.get(c).cloned())
                    .unwrap_or_else(|| format!("class_{c}"))
            })
            .collect();
        let cells: Vec<String> = self
            .per_class
            .iter()
            .map(|iou| match iou {
                Some(v) => format!("{:.2}", v * 100.0),
                None => "n/a".to_owned(),
            })
            .collect();
        let miou = match self.miou {
            Some(v) => format!("{:.2}", v * 100.0),
            None => "n/a".to_owned(),
        };
        let mut header = String::new();
        let mut row = String::new();
        for (name, cell) in names.iter().zip(&cells) {
            let width = name.len().max(cell.len());
            header.push_str(&format!("{name:>width$}  "));
            row.push_str(&format!("{cell:>width$}  "));
        }
        header.push_str("mIoU");
        row.push_str(&format!("{miou:>4}"));
        format!("{header}\n{row}\n")
    }
}

/// Computes per-class IoUs and the mean over included classes.
pub fn iou_report(cm: &ConfusionMatrix, excluded: &[usize]) -> Result<IouReport> {
    let c = cm.classes();
    for &e in excluded {
        if e >= c {
            return Err(Error::argument(format!(
                "excluded class {e} out of range for {c} classes"
            )));
        }
    }
    let mut per_class = Vec::with_capacity(c);
    let mut sum = 0.0;
    let mut included = 0usize;
    for class in 0..c {
        let tp = cm.count(class, class);
        let fp: u64 = (0..c)
            .filter(|&g| g != class)
            .map(|g| cm.count(g, class))
            .sum();
        let fn_: u64 = (0..c)
            .filter(|&p| p != class)
            .map(|p| cm.count(class, p))
            .sum();
        let union = tp + fp + fn_;
        if union == 0 {
            per_class.push(None);
            continue;
        }
        let iou = tp as f64 / union as f64;
        per_class.push(Some(iou));
        if !excluded.contains(&class) {
            sum += iou;
            included += 1;
        }
    }
    let miou = (included > 0).then(|| sum / included as f64);
    Ok(IouReport {
        per_class,
        miou,
        excluded: excluded.to_vec(),
    })
}
