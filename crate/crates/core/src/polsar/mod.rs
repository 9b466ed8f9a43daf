//! Polarimetric SAR rasters: covariance images, label maps, RGB renders,
//! a complex-Wishart scene simulator and the binary/PPM file formats.

mod io;
mod pauli;
mod scene;

pub use io::{
    decode_covariance, decode_labels, encode_covariance, encode_labels, load_covariance,
    load_labels, save_covariance, save_labels, write_ppm, COVARIANCE_MAGIC, LABEL_MAGIC,
};
pub use pauli::{colorize_labels, pauli_rgb, CLASS_PALETTE};
pub use scene::{generate_wishart_scene, RegionLayout, SceneSpec};

use thiserror::Error;

use crate::hpd::{validate_hpd, CMatrix, HpdError, HpdMatrix};
use crate::FormatError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("unsupported matrix dimension {0} (expected 3)")]
    UnsupportedDim(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Hpd(#[from] HpdError),
}

/// Hermitian tolerance used when admitting raster pixels, scaled by the
/// pixel's Frobenius norm when that exceeds one.
pub const PIXEL_HERMITIAN_TOL: f64 = 1e-12;

/// An H×W raster of d×d covariance matrices.
///
/// Pixels are kept exactly as read or generated so that file round trips
/// are bit-exact; pixels failing HPD validation are flagged in a mask.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceImage {
    height: usize,
    width: usize,
    dim: usize,
    pixels: Vec<CMatrix>,
    valid: Vec<bool>,
}

impl CovarianceImage {
    pub fn new(height: usize, width: usize, pixels: Vec<CMatrix>) -> Result<Self, DataError> {
        if pixels.len() != height * width {
            return Err(DataError::DimensionMismatch(format!(
                "{} pixels for a {height}x{width} raster",
                pixels.len()
            )));
        }
        let dim = pixels.first().map_or(0, CMatrix::dim);
        if dim == 0 || pixels.iter().any(|p| p.dim() != dim) {
            return Err(DataError::DimensionMismatch(
                "pixels must share one non-zero matrix dimension".into(),
            ));
        }
        let valid = pixels.iter().map(|p| pixel_hpd(p).is_some()).collect();
        Ok(Self {
            height,
            width,
            dim,
            pixels,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Matrix dimension d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[CMatrix] {
        &self.pixels
    }

    pub fn pixel(&self, index: usize) -> &CMatrix {
        &self.pixels[index]
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    pub fn invalid_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    /// The pixel as a validated HPD matrix, `None` when masked.
    pub fn hpd_pixel(&self, index: usize) -> Option<HpdMatrix> {
        if self.valid[index] {
            pixel_hpd(&self.pixels[index])
        } else {
            None
        }
    }
}

fn pixel_hpd(m: &CMatrix) -> Option<HpdMatrix> {
    let tol = PIXEL_HERMITIAN_TOL * m.frobenius_norm().max(1.0);
    validate_hpd(m, tol).ok()
}

/// Row-major class ids; 0 marks unlabeled pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self, DataError> {
        if labels.len() != height * width {
            return Err(DataError::DimensionMismatch(format!(
                "{} labels for a {height}x{width} raster",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, id: u16) -> Self {
        Self {
            height,
            width,
            labels: vec![id; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    /// Largest class id present (C); 0 for an all-unlabeled map.
    pub fn num_classes(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Labeled-pixel count per class id, index 0 = unlabeled.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes() as usize + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn same_shape(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }
}

/// 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<[u8; 3]>,
}
