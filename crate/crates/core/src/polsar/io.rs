//! `PSARCOV1` covariance rasters, `PSARLAB1` label rasters and binary PPM.
//!
//! Both raster formats are little-endian: 8-byte magic, `u32` height and
//! width (plus `u32` d for covariances), then the row-major payload.
//! Covariance pixels store all d² entries as interleaved `f64` (re, im).

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use super::{CovarianceImage, DataError, LabelMap, RgbImage};
use crate::binio::{to_u32, Reader, Writer};
use crate::hpd::CMatrix;
use crate::FormatError;

pub const COVARIANCE_MAGIC: &[u8; 8] = b"PSARCOV1";
pub const LABEL_MAGIC: &[u8; 8] = b"PSARLAB1";

pub fn encode_covariance(img: &CovarianceImage) -> Result<Vec<u8>, FormatError> {
    let mut w = Writer::with_magic(COVARIANCE_MAGIC);
    w.u32(to_u32(img.height(), "height")?);
    w.u32(to_u32(img.width(), "width")?);
    w.u32(to_u32(img.dim(), "dim")?);
    for p in img.pixels() {
        for v in p.as_slice() {
            w.f64(v.re);
            w.f64(v.im);
        }
    }
    Ok(w.into_bytes())
}

pub fn decode_covariance(bytes: &[u8]) -> Result<CovarianceImage, DataError> {
    let mut r = Reader::new(bytes);
    r.magic(COVARIANCE_MAGIC)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let d = r.u32()? as usize;
    if d == 0 {
        return Err(FormatError::DimensionMismatch("matrix dimension 0".into()).into());
    }
    r.require(h * w * d * d * 16)?;
    let mut pixels = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        let mut data = Vec::with_capacity(d * d);
        for _ in 0..d * d {
            let re = r.f64()?;
            let im = r.f64()?;
            data.push(Complex64::new(re, im));
        }
        pixels.push(CMatrix::from_flat(d, data)?);
    }
    if r.remaining() != 0 {
        return Err(FormatError::DimensionMismatch(format!(
            "{} trailing bytes after {h}x{w}x{d} payload",
            r.remaining()
        ))
        .into());
    }
    CovarianceImage::new(h, w, pixels)
}

pub fn save_covariance(path: &Path, img: &CovarianceImage) -> Result<(), DataError> {
    fs::write(path, encode_covariance(img)?).map_err(FormatError::from)?;
    Ok(())
}

pub fn load_covariance(path: &Path) -> Result<CovarianceImage, DataError> {
    let bytes = fs::read(path).map_err(FormatError::from)?;
    decode_covariance(&bytes)
}

pub fn encode_labels(map: &LabelMap) -> Result<Vec<u8>, FormatError> {
    let mut w = Writer::with_magic(LABEL_MAGIC);
    w.u32(to_u32(map.height(), "height")?);
    w.u32(to_u32(map.width(), "width")?);
    for &l in map.labels() {
        w.u16(l);
    }
    Ok(w.into_bytes())
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap, DataError> {
    let mut r = Reader::new(bytes);
    r.magic(LABEL_MAGIC)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    r.require(h * w * 2)?;
    let labels = (0..h * w).map(|_| r.u16()).collect::<Result<Vec<_>, _>>()?;
    if r.remaining() != 0 {
        return Err(FormatError::DimensionMismatch(format!(
            "{} trailing bytes after {h}x{w} labels",
            r.remaining()
        ))
        .into());
    }
    LabelMap::new(h, w, labels)
}

pub fn save_labels(path: &Path, map: &LabelMap) -> Result<(), DataError> {
    fs::write(path, encode_labels(map)?).map_err(FormatError::from)?;
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<LabelMap, DataError> {
    let bytes = fs::read(path).map_err(FormatError::from)?;
    decode_labels(&bytes)
}

/// Binary PPM (P6, maxval 255).
pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<(), FormatError> {
    let mut out = Vec::with_capacity(img.data.len() * 3 + 32);
    write!(out, "P6\n{} {}\n255\n", img.width, img.height)?;
    for px in &img.data {
        out.extend_from_slice(px);
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polsar::{generate_wishart_scene, SceneSpec};

    #[test]
    fn covariance_round_trip_is_bit_exact() {
        let (img, labels) = generate_wishart_scene(&SceneSpec::three_class(9, 7, 5, 1)).unwrap();
        let back = decode_covariance(&encode_covariance(&img).unwrap()).unwrap();
        assert_eq!(back, img);
        let back = decode_labels(&encode_labels(&labels).unwrap()).unwrap();
        assert_eq!(back, labels);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let (img, _) = generate_wishart_scene(&SceneSpec::three_class(4, 4, 3, 1)).unwrap();
        let mut bytes = encode_covariance(&img).unwrap();
        bytes[..8].copy_from_slice(b"PSARLAB1");
        assert!(matches!(
            decode_covariance(&bytes),
            Err(DataError::Format(FormatError::BadMagic { .. }))
        ));
        assert!(matches!(
            decode_labels(b"nonsense"),
            Err(DataError::Format(FormatError::BadMagic { .. }))
        ));
    }

    #[test]
    fn short_payload_is_truncated() {
        let (img, _) = generate_wishart_scene(&SceneSpec::three_class(10, 10, 3, 2)).unwrap();
        let bytes = encode_covariance(&img).unwrap();
        // drop the last pixel: header still says 10x10
        let cut = &bytes[..bytes.len() - 9 * 16];
        assert!(matches!(
            decode_covariance(cut),
            Err(DataError::Format(FormatError::TruncatedFile { .. }))
        ));
    }

    #[test]
    fn ppm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let img = RgbImage {
            height: 2,
            width: 3,
            data: vec![[1, 2, 3]; 6],
        };
        write_ppm(&path, &img).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
    }
}
