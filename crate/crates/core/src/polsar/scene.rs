//! Synthetic multilook PolSAR scenes.
//!
//! Every pixel of a class-c region is an L-look sample covariance
//! `(1/L)·Σ z_k z_k^H` with `z_k = Chol(Σ_c)·g_k` and `g_k` a vector of unit
//! circular complex normals, i.e. a scaled complex Wishart draw around the
//! class prototype Σ_c.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{CovarianceImage, DataError, LabelMap};
use crate::hpd::{CMatrix, HpdMatrix};
use crate::sampling::complex_normal;

/// Spatial arrangement of class regions.
#[derive(Clone, Debug, PartialEq)]
pub enum RegionLayout {
    /// Equal-width vertical bands, class i in band i.
    Stripes,
    /// A rows×cols grid of rectangles, classes assigned round-robin.
    Blocks { rows: usize, cols: usize },
    /// Voronoi cells around sites on a jittered `rows×cols` grid, classes
    /// assigned round-robin then shuffled by the scene seed.
    Voronoi { rows: usize, cols: usize },
}

#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// One prototype covariance per class; class ids are 1..=len.
    pub prototypes: Vec<HpdMatrix>,
    pub looks: usize,
    pub layout: RegionLayout,
    pub seed: u64,
}

impl SceneSpec {
    /// Three well-separated 3×3 classes loosely modelled on surface,
    /// volume and double-bounce scattering.
    pub fn three_class(height: usize, width: usize, looks: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            prototypes: three_class_prototypes(),
            looks,
            layout: RegionLayout::Voronoi { rows: 4, cols: 4 },
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.height == 0 || self.width == 0 {
            return Err(DataError::InvalidSpec("empty raster".into()));
        }
        let c = self.prototypes.len();
        if c == 0 || c > u16::MAX as usize {
            return Err(DataError::InvalidSpec(format!("class count {c} out of range")));
        }
        let d = self.prototypes[0].dim();
        if self.prototypes.iter().any(|p| p.dim() != d) {
            return Err(DataError::InvalidSpec("prototypes differ in dimension".into()));
        }
        if self.looks < d {
            return Err(DataError::InvalidSpec(format!(
                "looks {} below matrix dimension {d}",
                self.looks
            )));
        }
        for p in &self.prototypes {
            p.cholesky()
                .map_err(|e| DataError::InvalidSpec(format!("prototype not HPD: {e}")))?;
        }
        match self.layout {
            RegionLayout::Blocks { rows, cols } | RegionLayout::Voronoi { rows, cols }
                if rows == 0 || cols == 0 =>
            {
                Err(DataError::InvalidSpec("layout grid must be non-empty".into()))
            }
            _ => Ok(()),
        }
    }
}

/// The preset used by the demo scene and the acceptance tests.
pub fn three_class_prototypes() -> Vec<HpdMatrix> {
    let c = Complex64::new;
    let z = c(0.0, 0.0);
    let raw = [
        // surface: strong co-pol, HH/VV in phase, weak cross-pol
        [[c(1.0, 0.0), z, c(0.55, 0.05)], [z, c(0.06, 0.0), z], [c(0.55, -0.05), z, c(0.7, 0.0)]],
        // volume: balanced, strong cross-pol, weak correlation
        [[c(0.45, 0.0), c(0.02, 0.01), c(0.12, 0.0)], [c(0.02, -0.01), c(0.35, 0.0), c(0.01, 0.02)], [c(0.12, 0.0), c(0.01, -0.02), c(0.45, 0.0)]],
        // double bounce: bright HH, HH/VV out of phase
        [[c(2.2, 0.0), z, c(-0.7, 0.35)], [z, c(0.12, 0.0), z], [c(-0.7, -0.35), z, c(0.6, 0.0)]],
    ];
    raw.iter()
        .map(|rows| {
            let m = CMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap();
            crate::hpd::validate_hpd(&m, 1e-12).expect("preset prototype is HPD")
        })
        .collect()
}

/// Draws the label layout and the Wishart pixels. Deterministic in
/// `spec.seed`; each row uses its own ChaCha stream so the output does not
/// depend on the worker count.
pub fn generate_wishart_scene(spec: &SceneSpec) -> Result<(CovarianceImage, LabelMap), DataError> {
    spec.validate()?;
    let labels = layout_labels(spec);
    let chols: Vec<CMatrix> = spec
        .prototypes
        .iter()
        .map(|p| p.cholesky())
        .collect::<Result<_, _>>()?;
    let d = spec.prototypes[0].dim();
    let looks = spec.looks;

    let rows: Vec<Vec<CMatrix>> = (0..spec.height)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(r as u64 + 1);
            let mut z = vec![Complex64::new(0.0, 0.0); d];
            (0..spec.width)
                .map(|c| {
                    let class = labels[r * spec.width + c] as usize;
                    let chol = &chols[class - 1];
                    let mut acc = CMatrix::zeros(d);
                    for _ in 0..looks {
                        let g: Vec<Complex64> = (0..d).map(|_| complex_normal(&mut rng)).collect();
                        for (i, zi) in z.iter_mut().enumerate() {
                            *zi = (0..=i).map(|k| chol.get(i, k) * g[k]).sum();
                        }
                        let data = acc.as_mut_slice();
                        for p in 0..d {
                            for q in 0..d {
                                data[p * d + q] += z[p] * z[q].conj();
                            }
                        }
                    }
                    acc.scale(1.0 / looks as f64)
                })
                .collect()
        })
        .collect();

    let image = CovarianceImage::new(spec.height, spec.width, rows.into_iter().flatten().collect())?;
    let labels = LabelMap::new(spec.height, spec.width, labels)?;
    Ok((image, labels))
}

fn layout_labels(spec: &SceneSpec) -> Vec<u16> {
    let (h, w) = (spec.height, spec.width);
    let classes = spec.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    match spec.layout {
        RegionLayout::Stripes => (0..h * w)
            .map(|i| {
                let c = i % w;
                ((c * classes) / w + 1) as u16
            })
            .collect(),
        RegionLayout::Blocks { rows, cols } => (0..h * w)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                let cell = (r * rows / h) * cols + c * cols / w;
                (cell % classes + 1) as u16
            })
            .collect(),
        RegionLayout::Voronoi { rows, cols } => {
            let cell_h = h as f64 / rows as f64;
            let cell_w = w as f64 / cols as f64;
            let mut sites = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    let jy: f64 = rng.random_range(-0.25..0.25);
                    let jx: f64 = rng.random_range(-0.25..0.25);
                    sites.push(((r as f64 + 0.5 + jy) * cell_h, (c as f64 + 0.5 + jx) * cell_w));
                }
            }
            let mut class_of: Vec<u16> = (0..sites.len()).map(|k| (k % classes + 1) as u16).collect();
            class_of.shuffle(&mut rng);
            (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
                    let mut best = (f64::INFINITY, 0);
                    for (k, (sy, sx)) in sites.iter().enumerate() {
                        let dist = (y - sy).powi(2) + (x - sx).powi(2);
                        if dist < best.0 {
                            best = (dist, k);
                        }
                    }
                    class_of[best.1]
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpd::validate_hpd;

    fn spec(looks: usize) -> SceneSpec {
        SceneSpec::three_class(32, 32, looks, 7)
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_wishart_scene(&spec(8)).unwrap();
        let b = generate_wishart_scene(&spec(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn looks_below_dimension_is_invalid() {
        assert!(matches!(
            generate_wishart_scene(&spec(2)),
            Err(DataError::InvalidSpec(_))
        ));
    }

    #[test]
    fn identity_prototype_gives_hpd_pixels() {
        let s = SceneSpec {
            prototypes: vec![HpdMatrix::identity(3)],
            layout: RegionLayout::Stripes,
            ..spec(3)
        };
        let (img, labels) = generate_wishart_scene(&s).unwrap();
        assert_eq!(labels.num_classes(), 1);
        for p in img.pixels() {
            validate_hpd(p, 1e-12).unwrap();
            for i in 0..3 {
                assert!(p.get(i, i).re > 0.0);
                assert_eq!(p.get(i, i).im, 0.0);
            }
        }
        assert_eq!(img.invalid_count(), 0);
    }

    #[test]
    fn every_layout_produces_all_classes() {
        for layout in [
            RegionLayout::Stripes,
            RegionLayout::Blocks { rows: 2, cols: 2 },
            RegionLayout::Voronoi { rows: 3, cols: 3 },
        ] {
            let s = SceneSpec { layout, ..spec(4) };
            let (_, labels) = generate_wishart_scene(&s).unwrap();
            let counts = labels.class_counts();
            assert_eq!(counts.len(), 4);
            assert_eq!(counts[0], 0);
            assert!(counts[1..].iter().all(|&n| n > 0));
        }
    }
}
