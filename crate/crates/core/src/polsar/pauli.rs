//! Pauli RGB rendering and class-map colouring.

use super::{CovarianceImage, DataError, LabelMap, RgbImage};

/// Colours for class ids 1..=8 (cycled beyond); id 0 renders black.
pub const CLASS_PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

pub fn colorize_labels(map: &LabelMap) -> RgbImage {
    RgbImage {
        height: map.height(),
        width: map.width(),
        data: map
            .labels()
            .iter()
            .map(|&l| {
                if l == 0 {
                    [0, 0, 0]
                } else {
                    CLASS_PALETTE[(l as usize - 1) % CLASS_PALETTE.len()]
                }
            })
            .collect(),
    }
}

/// Pauli-basis composite from a 3×3 covariance raster.
///
/// With the lexicographic ordering (HH, √2·HV, VV), the coherency
/// diagonal is `|HH+VV|²/2 = (c11 + c33 + 2 Re c13)/2`,
/// `|HH−VV|²/2 = (c11 + c33 − 2 Re c13)/2` and `2|HV|² = c22`.
/// Red, green and blue carry the amplitudes of |HH−VV|, |HV| and |HH+VV|,
/// each linearly stretched between its 2nd and 98th percentile.
pub fn pauli_rgb(img: &CovarianceImage) -> Result<RgbImage, DataError> {
    if img.dim() != 3 {
        return Err(DataError::UnsupportedDim(img.dim()));
    }
    let mut channels = [
        Vec::with_capacity(img.len()),
        Vec::with_capacity(img.len()),
        Vec::with_capacity(img.len()),
    ];
    for p in img.pixels() {
        let c11 = p.get(0, 0).re;
        let c22 = p.get(1, 1).re;
        let c33 = p.get(2, 2).re;
        let c13 = p.get(0, 2).re;
        channels[0].push(((c11 + c33 - 2.0 * c13) / 2.0).max(0.0).sqrt());
        channels[1].push(c22.max(0.0).sqrt());
        channels[2].push(((c11 + c33 + 2.0 * c13) / 2.0).max(0.0).sqrt());
    }
    let scaled: Vec<Vec<u8>> = channels.iter().map(|ch| stretch(ch)).collect();
    Ok(RgbImage {
        height: img.height(),
        width: img.width(),
        data: (0..img.len())
            .map(|i| [scaled[0][i], scaled[1][i], scaled[2][i]])
            .collect(),
    })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx]
}

fn stretch(values: &[f64]) -> Vec<u8> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, 0.02);
    let hi = percentile(&sorted, 0.98);
    if !(hi > lo) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|&v| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}
