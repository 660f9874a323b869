//! Fixed deterministic class palette used for synthetic imagery and label
//! overlays, so qualitative outputs are diffable. Mirrors
//! `fixtures/palette.csv`.

use crate::tensor::{LabelMap, Raster};

/// 16 well-separated RGB colors; class `c` uses entry `c % 16`.
pub const PALETTE: [[u8; 3]; 16] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [174, 199, 232],
    [255, 187, 120],
    [152, 223, 138],
    [255, 152, 150],
    [197, 176, 213],
    [196, 156, 148],
];

pub fn class_color(class: usize) -> [u8; 3] {
    PALETTE[class % PALETTE.len()]
}

/// Renders a label map as a 3-channel raster with the fixed palette.
pub fn colorize_labels(labels: &LabelMap) -> Raster {
    let mut samples = Vec::with_capacity(labels.labels().len() * 3);
    for &label in labels.labels() {
        samples.extend_from_slice(&class_color(label as usize));
    }
    Raster::from_raw_unchecked(labels.height(), labels.width(), 3, samples)
}
