//! 4-connected component labelling and external map ingestion.

use std::collections::VecDeque;
use std::path::Path;

use super::{SegmentError, SuperpixelMap};
use crate::polsar::{load_labels, LabelMap};

/// Labels the 4-connected components of equal-valued regions. Component
/// ids are assigned in raster order of each component's first pixel.
pub fn connected_components<T: PartialEq + Copy>(
    height: usize,
    width: usize,
    values: &[T],
) -> (Vec<u32>, usize) {
    const UNSET: u32 = u32::MAX;
    let mut out = vec![UNSET; values.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..values.len() {
        if out[start] != UNSET {
            continue;
        }
        let v = values[start];
        out[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / width, i % width);
            let mut visit = |j: usize| {
                if out[j] == UNSET && values[j] == v {
                    out[j] = next;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - width);
            }
            if r + 1 < height {
                visit(i + width);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < width {
                visit(i + 1);
            }
        }
        next += 1;
    }
    (out, next as usize)
}

impl SuperpixelMap {
    /// Builds a map from arbitrary ids: compacts them to `[0, K)` and
    /// splits ids shared by disconnected regions.
    pub fn from_raw<T: PartialEq + Copy>(height: usize, width: usize, raw: &[T]) -> Self {
        let (ids, count) = connected_components(height, width, raw);
        Self {
            height,
            width,
            ids,
            count,
        }
    }
}

/// Accepts an externally computed superpixel raster for an image of the
/// given size.
pub fn ingest_labels(
    raster: &LabelMap,
    height: usize,
    width: usize,
) -> Result<SuperpixelMap, SegmentError> {
    if !raster.same_shape(height, width) {
        return Err(SegmentError::DimensionMismatch(format!(
            "superpixel raster {}x{} vs image {height}x{width}",
            raster.height(),
            raster.width()
        )));
    }
    Ok(SuperpixelMap::from_raw(height, width, raster.labels()))
}

pub fn load_superpixels(path: &Path, height: usize, width: usize) -> Result<SuperpixelMap, SegmentError> {
    let raster = load_labels(path)?;
    ingest_labels(&raster, height, width)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_connected_map_is_preserved() {
        let raw = vec![0u16, 0, 1, 1, 0, 0, 1, 1, 2, 2, 2, 2];
        let map = ingest_labels(&LabelMap::new(3, 4, raw.clone()).unwrap(), 3, 4).unwrap();
        assert_eq!(map.count(), 3);
        let ids: Vec<u16> = map.ids().iter().map(|&i| i as u16).collect();
        assert_eq!(ids, raw);
    }

    #[test]
    fn gaps_in_id_range_are_compacted() {
        let raw = vec![0u16, 2, 5, 0, 2, 5];
        let map = ingest_labels(&LabelMap::new(2, 3, raw).unwrap(), 2, 3).unwrap();
        assert_eq!(map.ids(), &[0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn disconnected_blobs_are_split() {
        // id 7 appears in two blobs separated by a column of 1s
        let raw = vec![7u16, 1, 7, 7, 1, 7, 1, 1, 1];
        let map = ingest_labels(&LabelMap::new(3, 3, raw.clone()).unwrap(), 3, 3).unwrap();
        assert_eq!(map.count(), 3);
        // oracle: flood fill from each 7-pixel counts two distinct regions
        let sevens: Vec<usize> = (0..9).filter(|&i| raw[i] == 7).collect();
        let left: Vec<u32> = sevens.iter().filter(|&&i| i % 3 == 0).map(|&i| map.ids()[i]).collect();
        let right: Vec<u32> = sevens.iter().filter(|&&i| i % 3 == 2).map(|&i| map.ids()[i]).collect();
        assert!(left.iter().all(|&v| v == left[0]));
        assert!(right.iter().all(|&v| v == right[0]));
        assert_ne!(left[0], right[0]);
    }

    #[test]
    fn diagonal_touch_is_not_connected() {
        let raw = vec![1u16, 0, 0, 1];
        let map = SuperpixelMap::from_raw(2, 2, &raw);
        assert_eq!(map.count(), 4);
    }

    #[test]
    fn wrong_size_raster_is_rejected() {
        let raster = LabelMap::filled(2, 2, 0);
        assert!(matches!(
            ingest_labels(&raster, 2, 3),
            Err(SegmentError::DimensionMismatch(_))
        ));
    }
}
