//! Patch extraction, training loop and full-image inference.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{backward_and_step, forward, PatchBatch};
use super::{Adam, CnnError, CnnModel};
use crate::network::PixelFeatures;
use crate::polsar::LabelMap;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Odd patch side, at least 7.
    pub patch: usize,
    pub seed: u64,
    /// Fraction of each class's labeled pixels used for training.
    pub train_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 50,
            patch: 9,
            seed: 0,
            train_ratio: 0.10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        if self.patch < 7 || self.patch % 2 == 0 {
            return Err(CnnError::InvalidConfig(format!("patch size {} must be odd and >= 7", self.patch)));
        }
        if self.batch_size == 0 {
            return Err(CnnError::InvalidConfig("batch size 0".into()));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio <= 1.0) {
            return Err(CnnError::InvalidConfig(format!("train ratio {}", self.train_ratio)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CnnError::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Labeled pixels (row-major index and class id) used as patch centres.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PatchSet {
    pub centers: Vec<usize>,
    pub labels: Vec<u16>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Label map with only this set's pixels labeled.
    pub fn to_label_map(&self, height: usize, width: usize) -> LabelMap {
        let mut ids = vec![0u16; height * width];
        for (&c, &l) in self.centers.iter().zip(&self.labels) {
            ids[c] = l;
        }
        LabelMap::new(height, width, ids).expect("centres lie inside the raster")
    }
}

/// Mirror index without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

fn patch_indices(feat: &PixelFeatures, center: usize, patch: usize, out: &mut Vec<u32>) {
    let (h, w) = (feat.height(), feat.width());
    let (r, c) = ((center / w) as isize, (center % w) as isize);
    let half = (patch / 2) as isize;
    for dy in -half..=half {
        let y = reflect(r + dy, h);
        for dx in -half..=half {
            let x = reflect(c + dx, w);
            out.push(feat.index()[y * w + x]);
        }
    }
}

fn batch_for<'a>(feat: &'a PixelFeatures, centers: &[usize], patch: usize) -> Result<PatchBatch<'a>, CnnError> {
    let mut idx = Vec::with_capacity(centers.len() * patch * patch);
    for &c in centers {
        patch_indices(feat, c, patch, &mut idx);
    }
    PatchBatch::from_palette(feat.palette(), feat.channels(), patch, idx)
}

/// Stratified split of the labeled pixels: per class,
/// `max(1, round(ratio·count))` randomly chosen pixels train, the rest test.
pub fn extract_patches(labels: &LabelMap, cfg: &TrainConfig) -> Result<(PatchSet, PatchSet), CnnError> {
    cfg.validate()?;
    let classes = labels.num_classes();
    if classes == 0 {
        return Err(CnnError::EmptyTrainSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes as usize + 1];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l != 0 {
            by_class[l as usize].push(i);
        }
    }
    let (mut train, mut test) = (PatchSet::default(), PatchSet::default());
    for class in 1..=classes {
        let members = &mut by_class[class as usize];
        if members.is_empty() {
            return Err(CnnError::EmptyClass(class));
        }
        members.shuffle(&mut rng);
        let n_train = ((cfg.train_ratio * members.len() as f64).round() as usize).clamp(1, members.len());
        let (tr, te) = members.split_at(n_train);
        let mut tr = tr.to_vec();
        let mut te = te.to_vec();
        tr.sort_unstable();
        te.sort_unstable();
        train.labels.extend(std::iter::repeat_n(class, tr.len()));
        train.centers.extend(tr);
        test.labels.extend(std::iter::repeat_n(class, te.len()));
        test.centers.extend(te);
    }
    Ok((train, test))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean mini-batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch Adam on the training patches; deterministic given the seed.
pub fn train(
    model: &mut CnnModel,
    feat: &PixelFeatures,
    set: &PatchSet,
    cfg: &TrainConfig,
) -> Result<TrainReport, CnnError> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(CnnError::EmptyTrainSet);
    }
    if feat.channels() != model.inputs {
        return Err(CnnError::ShapeMismatch(format!(
            "features have {} channels, model expects {}",
            feat.channels(),
            model.inputs
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_cafe);
    let mut adam = Adam::new(model, cfg.learning_rate);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let centers: Vec<usize> = chunk.iter().map(|&i| set.centers[i]).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| set.labels[i] as usize - 1).collect();
            let batch = batch_for(feat, &centers, cfg.patch)?;
            total += backward_and_step(model, &mut adam, &batch, &targets)?;
            batches += 1;
        }
        let mean = total / batches as f64;
        debug!("epoch {}: loss {mean:.6}", epoch + 1);
        report.epoch_losses.push(mean);
    }
    if let Some(last) = report.epoch_losses.last() {
        info!("trained {} epochs on {} patches, final loss {last:.6}", cfg.epochs, set.len());
    }
    Ok(report)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn predict(model: &CnnModel, feat: &PixelFeatures, centers: &[usize], patch: usize) -> Result<Vec<u16>, CnnError> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(centers.len());
    for chunk in centers.chunks(CHUNK) {
        let probs = forward(model, &batch_for(feat, chunk, patch)?)?;
        out.extend(probs.chunks(model.classes).map(|row| argmax(row) as u16 + 1));
    }
    Ok(out)
}

/// Class map over every pixel; ties go to the lower class id.
pub fn classify_image(model: &CnnModel, feat: &PixelFeatures, patch: usize) -> Result<LabelMap, CnnError> {
    if feat.channels() != model.inputs {
        return Err(CnnError::ShapeMismatch(format!(
            "features have {} channels, model expects {}",
            feat.channels(),
            model.inputs
        )));
    }
    let centers: Vec<usize> = (0..feat.height() * feat.width()).collect();
    let ids = predict(model, feat, &centers, patch)?;
    Ok(LabelMap::new(feat.height(), feat.width(), ids).expect("one label per pixel"))
}

/// Fraction of `set` predicted correctly.
pub fn training_accuracy(model: &CnnModel, feat: &PixelFeatures, set: &PatchSet, patch: usize) -> Result<f64, CnnError> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let pred = predict(model, feat, &set.centers, patch)?;
    let hits = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stripes(h: usize, w: usize) -> (PixelFeatures, LabelMap) {
        // class 1 on the left half, class 2 on the right, one-hot features
        let mut values = Vec::new();
        let mut ids = Vec::new();
        for _ in 0..h {
            for c in 0..w {
                let left = c < w / 2;
                values.extend_from_slice(if left { &[1.0, 0.0] } else { &[0.0, 1.0] });
                ids.push(if left { 1 } else { 2 });
            }
        }
        (
            PixelFeatures::dense(h, w, 2, values).unwrap(),
            LabelMap::new(h, w, ids).unwrap(),
        )
    }

    #[test]
    fn reflect_mirrors_without_repeating_edges() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect(-2, 1), 0);
    }

    #[test]
    fn corner_patch_is_reflected() {
        let values: Vec<f64> = (0..100).map(f64::from).collect();
        let feat = PixelFeatures::dense(10, 10, 1, values).unwrap();
        let mut idx = Vec::new();
        patch_indices(&feat, 0, 9, &mut idx);
        assert_eq!(idx.len(), 81);
        assert_eq!(idx[40], 0);
        // top-left corner of the patch is pixel (4, 4)
        assert_eq!(idx[0], 44);
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let mut ids = vec![1u16; 600];
        ids.extend(vec![2u16; 400]);
        ids.extend(vec![0u16; 24]);
        let labels = LabelMap::new(32, 32, ids).unwrap();
        let cfg = TrainConfig::default();
        let (train, test) = extract_patches(&labels, &cfg).unwrap();
        assert_eq!((train.len(), test.len()), (100, 900));
        assert_eq!(train.labels.iter().filter(|&&l| l == 1).count(), 60);
        assert!(train.centers.iter().chain(&test.centers).all(|&c| c < 1000));
        assert_eq!(extract_patches(&labels, &cfg).unwrap().0, train);
        let other = TrainConfig { seed: 1, ..cfg };
        assert_ne!(extract_patches(&labels, &other).unwrap().0, train);
    }

    #[test]
    fn tiny_classes_keep_one_training_pixel() {
        let labels = LabelMap::new(1, 4, vec![1, 1, 1, 2]).unwrap();
        let (train, test) = extract_patches(&labels, &TrainConfig::default()).unwrap();
        assert_eq!(train.labels, vec![1, 2]);
        assert_eq!(test.len(), 2);
    }

    #[test]
    fn missing_class_is_an_error() {
        let labels = LabelMap::new(1, 3, vec![1, 3, 3]).unwrap();
        assert!(matches!(
            extract_patches(&labels, &TrainConfig::default()),
            Err(CnnError::EmptyClass(2))
        ));
    }

    #[test]
    fn zero_epochs_leave_the_model_alone() {
        let (feat, labels) = stripes(12, 12);
        let (train_set, _) = extract_patches(&labels, &TrainConfig::default()).unwrap();
        let mut model = CnnModel::new(2, 2, 3);
        let before = model.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        train(&mut model, &feat, &train_set, &cfg).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn separable_features_are_learned() {
        let (feat, labels) = stripes(16, 16);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 32,
            train_ratio: 0.5,
            ..TrainConfig::default()
        };
        let (train_set, _) = extract_patches(&labels, &cfg).unwrap();
        let mut model = CnnModel::new(2, 2, 4);
        let report = train(&mut model, &feat, &train_set, &cfg).unwrap();
        assert!(report.epoch_losses.last() < report.epoch_losses.first());
        assert!(training_accuracy(&model, &feat, &train_set, 9).unwrap() >= 0.99);

        let mut again = CnnModel::new(2, 2, 4);
        train(&mut again, &feat, &train_set, &cfg).unwrap();
        assert_eq!(again, model);
    }

    #[test]
    fn constant_features_give_a_constant_map() {
        let feat = PixelFeatures::dense(11, 13, 3, vec![0.5; 11 * 13 * 3]).unwrap();
        let map = classify_image(&CnnModel::new(3, 4, 1), &feat, 9).unwrap();
        assert_eq!((map.height(), map.width()), (11, 13));
        assert!(map.labels().iter().all(|&l| l == map.labels()[0]));
    }
}
