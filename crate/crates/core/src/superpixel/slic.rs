//! SLIC-style local k-means on log-covariance features.
//!
//! Each pixel is described by the real diagonal of `log X` and the
//! magnitudes of its upper off-diagonal entries (6 values for d = 3).
//! Clustering minimises `‖f − f_k‖² + (m/S)²·‖p − p_k‖²` over centres
//! within a 2S window, S = √δ, and finishes by merging every
//! non-principal connected fragment into an adjacent segment.

use std::collections::BTreeSet;

use rayon::prelude::*;

use super::components::connected_components;
use super::{SegmentError, SegmenterConfig, SuperpixelMap};
use crate::polsar::CovarianceImage;

const UNASSIGNED: u32 = u32::MAX;

/// Row-major per-pixel features, `feature_len(d)` values each. Masked
/// pixels get all-zero features.
pub fn log_features(img: &CovarianceImage) -> Vec<f64> {
    let d = img.dim();
    let len = d + d * (d - 1) / 2;
    (0..img.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut f = vec![0.0; len];
            if let Some(log) = img.hpd_pixel(i).and_then(|x| x.log().ok()) {
                let m = log.as_matrix();
                let mut k = 0;
                for r in 0..d {
                    f[k] = m.get(r, r).re;
                    k += 1;
                }
                for r in 0..d {
                    for c in (r + 1)..d {
                        f[k] = m.get(r, c).norm();
                        k += 1;
                    }
                }
            }
            f
        })
        .collect()
}

struct Center {
    y: f64,
    x: f64,
    feature: Vec<f64>,
}

pub fn segment(img: &CovarianceImage, cfg: &SegmenterConfig) -> Result<SuperpixelMap, SegmentError> {
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    let n = h * w;
    if n == 0 || (n as f64) < cfg.scale {
        return Err(SegmentError::ImageTooSmall {
            pixels: n,
            scale: cfg.scale,
        });
    }
    let feats = log_features(img);
    let flen = feats.len() / n;
    let fat = |i: usize| &feats[i * flen..(i + 1) * flen];

    let s = cfg.scale.sqrt();
    let ny = ((h as f64 / s).round() as usize).max(1);
    let nx = ((w as f64 / s).round() as usize).max(1);
    let (step_y, step_x) = (h as f64 / ny as f64, w as f64 / nx as f64);
    let reach = step_y.max(step_x);
    let spatial = (cfg.compactness / s).powi(2);

    let grad = |r: usize, c: usize| -> f64 {
        let (up, down) = (r.saturating_sub(1), (r + 1).min(h - 1));
        let (left, right) = (c.saturating_sub(1), (c + 1).min(w - 1));
        let dv: f64 = fat(down * w + c).iter().zip(fat(up * w + c)).map(|(a, b)| (a - b).powi(2)).sum();
        let dh: f64 = fat(r * w + right).iter().zip(fat(r * w + left)).map(|(a, b)| (a - b).powi(2)).sum();
        dv + dh
    };

    let mut centers: Vec<Center> = Vec::with_capacity(ny * nx);
    for gy in 0..ny {
        for gx in 0..nx {
            // continuous lattice position; snapped to a pixel only when the
            // 3×3 neighbourhood has a strictly lower gradient
            let y0 = (gy as f64 + 0.5) * step_y - 0.5;
            let x0 = (gx as f64 + 0.5) * step_x - 0.5;
            let r0 = (y0.round() as usize).min(h - 1);
            let c0 = (x0.round() as usize).min(w - 1);
            let mut best = (grad(r0, c0), r0, c0);
            for r in r0.saturating_sub(1)..=(r0 + 1).min(h - 1) {
                for c in c0.saturating_sub(1)..=(c0 + 1).min(w - 1) {
                    let g = grad(r, c);
                    if g < best.0 {
                        best = (g, r, c);
                    }
                }
            }
            let (_, r, c) = best;
            let (y, x) = if (r, c) == (r0, c0) {
                (y0, x0)
            } else {
                (r as f64, c as f64)
            };
            centers.push(Center {
                y,
                x,
                feature: fat(r * w + c).to_vec(),
            });
        }
    }

    let mut labels = vec![UNASSIGNED; n];
    for _ in 0..cfg.iterations {
        // Row-parallel assignment; within a pixel, centres are scanned in id
        // order and only strictly smaller distances win.
        labels = (0..h)
            .into_par_iter()
            .flat_map_iter(|r| {
                let centers = &centers;
                (0..w).map(move |c| {
                    let f = fat(r * w + c);
                    let (y, x) = (r as f64, c as f64);
                    let mut best = (f64::INFINITY, UNASSIGNED);
                    for (k, ctr) in centers.iter().enumerate() {
                        if (ctr.y - y).abs() > reach || (ctr.x - x).abs() > reach {
                            continue;
                        }
                        let df: f64 = f.iter().zip(&ctr.feature).map(|(a, b)| (a - b).powi(2)).sum();
                        let ds = (ctr.y - y).powi(2) + (ctr.x - x).powi(2);
                        let dist = df + spatial * ds;
                        if dist < best.0 {
                            best = (dist, k as u32);
                        }
                    }
                    best.1
                })
            })
            .collect();

        let mut sums = vec![(0.0, 0.0, vec![0.0; flen], 0usize); centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            if l == UNASSIGNED {
                continue;
            }
            let acc = &mut sums[l as usize];
            acc.0 += (i / w) as f64;
            acc.1 += (i % w) as f64;
            for (a, v) in acc.2.iter_mut().zip(fat(i)) {
                *a += v;
            }
            acc.3 += 1;
        }
        for (ctr, (sy, sx, sf, m)) in centers.iter_mut().zip(sums) {
            if m == 0 {
                continue;
            }
            let m = m as f64;
            ctr.y = sy / m;
            ctr.x = sx / m;
            ctr.feature = sf.into_iter().map(|v| v / m).collect();
        }
    }

    let merged = enforce_connectivity(h, w, &labels);
    Ok(SuperpixelMap::from_raw(h, w, &merged))
}

/// Keeps the largest fragment of every label and repeatedly merges the
/// remaining fragments (and unassigned pixels) into the adjacent anchored
/// segment with the most pixels, lowest label on ties.
fn enforce_connectivity(h: usize, w: usize, labels: &[u32]) -> Vec<u32> {
    let (comp, ncomp) = connected_components(h, w, labels);
    let mut comp_label = vec![UNASSIGNED; ncomp];
    let mut comp_size = vec![0usize; ncomp];
    for (i, &c) in comp.iter().enumerate() {
        comp_label[c as usize] = labels[i];
        comp_size[c as usize] += 1;
    }

    let mut adjacency: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); ncomp];
    for i in 0..h * w {
        let (r, c) = (i / w, i % w);
        let a = comp[i];
        if c + 1 < w && comp[i + 1] != a {
            adjacency[a as usize].insert(comp[i + 1]);
            adjacency[comp[i + 1] as usize].insert(a);
        }
        if r + 1 < h && comp[i + w] != a {
            adjacency[a as usize].insert(comp[i + w]);
            adjacency[comp[i + w] as usize].insert(a);
        }
    }

    // principal fragment per label
    let mut principal: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    for k in 0..ncomp {
        if comp_label[k] == UNASSIGNED {
            continue;
        }
        let e = principal.entry(comp_label[k]).or_insert(k);
        if comp_size[k] > comp_size[*e] {
            *e = k;
        }
    }
    let mut final_label = vec![UNASSIGNED; ncomp];
    let mut segment_size: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    for (&label, &k) in &principal {
        final_label[k] = label;
        segment_size.insert(label, comp_size[k]);
    }

    let mut pending: Vec<usize> = (0..ncomp).filter(|&k| final_label[k] == UNASSIGNED).collect();
    while !pending.is_empty() {
        let mut still = Vec::new();
        for &k in &pending {
            let target = adjacency[k]
                .iter()
                .filter_map(|&nb| {
                    let l = final_label[nb as usize];
                    (l != UNASSIGNED).then(|| (segment_size[&l], l))
                })
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
            match target {
                Some((_, l)) => {
                    final_label[k] = l;
                    *segment_size.get_mut(&l).unwrap() += comp_size[k];
                }
                None => still.push(k),
            }
        }
        if still.len() == pending.len() {
            // isolated fragments with no anchored neighbour keep their own id
            for &k in &still {
                final_label[k] = u32::MAX - 1 - k as u32;
            }
            break;
        }
        pending = still;
    }

    comp.iter().map(|&c| final_label[c as usize]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpd::{CMatrix, HpdMatrix};
    use crate::polsar::{generate_wishart_scene, RegionLayout, SceneSpec};

    fn is_four_connected(map: &SuperpixelMap) -> bool {
        let (_, n) = connected_components(map.height(), map.width(), map.ids());
        n == map.count()
    }

    #[test]
    fn constant_image_gives_regular_grid() {
        let img = CovarianceImage::new(64, 64, vec![CMatrix::identity(3); 64 * 64]).unwrap();
        let cfg = SegmenterConfig {
            scale: 64.0,
            ..Default::default()
        };
        let map = segment(&img, &cfg).unwrap();
        assert_eq!(map.count(), 64);
        assert!(map.sizes().iter().all(|&s| s == 64));
        assert!(is_four_connected(&map));
    }

    #[test]
    fn whole_image_scale_gives_one_segment() {
        let (img, _) = generate_wishart_scene(&SceneSpec::three_class(20, 20, 4, 1)).unwrap();
        let cfg = SegmenterConfig {
            scale: 400.0,
            ..Default::default()
        };
        assert_eq!(segment(&img, &cfg).unwrap().count(), 1);
    }

    #[test]
    fn too_small_image_is_rejected() {
        let img = CovarianceImage::new(3, 3, vec![CMatrix::identity(3); 9]).unwrap();
        assert!(matches!(
            segment(&img, &SegmenterConfig::default()),
            Err(SegmentError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn segments_respect_a_strong_boundary() {
        let spec = SceneSpec {
            height: 48,
            width: 48,
            prototypes: vec![
                HpdMatrix::from_diag(&[1.0, 0.1, 1.0]).unwrap(),
                HpdMatrix::from_diag(&[10.0, 5.0, 0.5]).unwrap(),
            ],
            looks: 16,
            layout: RegionLayout::Stripes,
            seed: 3,
        };
        let (img, truth) = generate_wishart_scene(&spec).unwrap();
        let cfg = SegmenterConfig {
            scale: 36.0,
            ..Default::default()
        };
        let map = segment(&img, &cfg).unwrap();
        assert!(is_four_connected(&map));
        let k = map.count() as f64;
        let target = 48.0 * 48.0 / 36.0;
        assert!((k - target).abs() <= 0.3 * target, "K = {k}");
        // pixels whose segment majority class differs from their own class
        let mut votes = vec![[0usize; 3]; map.count()];
        for (i, &l) in truth.labels().iter().enumerate() {
            votes[map.id(i)][l as usize] += 1;
        }
        let straddling: usize = votes.iter().map(|v| v[1].min(v[2])).sum();
        assert!(straddling <= 48, "straddling pixels: {straddling}");
    }
}
