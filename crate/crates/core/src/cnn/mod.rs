//! Three-layer convolutional classifier on per-pixel feature patches.
//!
//! `conv 3×3 (N→32) → ReLU → conv 3×3 (32→64) → ReLU → conv 3×3 (64→C)
//! → global average pool → softmax`, all convolutions unpadded, trained
//! with mean cross-entropy and Adam.
//!
//! Inputs are addressed through a palette: a patch is a list of palette
//! indices, one per pixel. Superpixel features repeat the same vector over
//! many pixels, so the first convolution is evaluated once per distinct
//! vector and tap instead of once per pixel.

mod layers;
mod train;

pub use layers::{backward_and_step, forward, gradients, Gradients, PatchBatch};
pub use train::{
    classify_image, extract_patches, train, training_accuracy, PatchSet, TrainConfig, TrainReport,
};

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::binio::{to_u32, Reader, Writer};
use crate::FormatError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSARCNN1";
pub const HIDDEN1: usize = 32;
pub const HIDDEN2: usize = 64;
pub const TAPS: usize = 9;

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class {0} has no labeled pixels")]
    EmptyClass(u16),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Dense batch in (batch, channels, height, width) order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self, CnnError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(CnnError::ShapeMismatch(format!(
                "shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CnnError::ShapeMismatch("non-finite input".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, ch, h, w] = self.shape;
        self.data[((b * ch + c) * h + y) * w + x]
    }

    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: f64) {
        let [_, ch, h, w] = self.shape;
        self.data[((b * ch + c) * h + y) * w + x] = v;
    }
}

/// Model parameters.
///
/// Convolution weights are stored tap-major: `w1[ci][tap][co]`,
/// `w2[tap][ci][co]`, `w3[tap][ci][co]` with `tap = 3·ky + kx`.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    pub inputs: usize,
    pub classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl CnnModel {
    /// He-uniform weights (limit `√(6/fan_in)`), zero biases.
    pub fn new(inputs: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |fan_in: usize, len: usize| -> Vec<f64> {
            let limit = (6.0 / fan_in as f64).sqrt();
            (0..len).map(|_| rng.random_range(-limit..limit)).collect()
        };
        let w1 = he(TAPS * inputs, inputs * TAPS * HIDDEN1);
        let w2 = he(TAPS * HIDDEN1, TAPS * HIDDEN1 * HIDDEN2);
        let w3 = he(TAPS * HIDDEN2, TAPS * HIDDEN2 * classes);
        Self {
            inputs,
            classes,
            w1,
            b1: vec![0.0; HIDDEN1],
            w2,
            b2: vec![0.0; HIDDEN2],
            w3,
            b3: vec![0.0; classes],
        }
    }

    pub fn zeros(inputs: usize, classes: usize) -> Self {
        Self {
            inputs,
            classes,
            w1: vec![0.0; inputs * TAPS * HIDDEN1],
            b1: vec![0.0; HIDDEN1],
            w2: vec![0.0; TAPS * HIDDEN1 * HIDDEN2],
            b2: vec![0.0; HIDDEN2],
            w3: vec![0.0; TAPS * HIDDEN2 * classes],
            b3: vec![0.0; classes],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub(crate) fn tensors(&self) -> [&Vec<f64>; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    fn expected_lengths(inputs: usize, classes: usize) -> [usize; 6] {
        [
            inputs * TAPS * HIDDEN1,
            HIDDEN1,
            TAPS * HIDDEN1 * HIDDEN2,
            HIDDEN2,
            TAPS * HIDDEN2 * classes,
            classes,
        ]
    }

    /// `PSARCNN1`: u32 N, u32 C, u32 tensor count, then per tensor a u32
    /// length followed by its `f64` values, in the order w1 b1 w2 b2 w3 b3.
    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        let mut w = Writer::with_magic(CHECKPOINT_MAGIC);
        w.u32(to_u32(self.inputs, "inputs")?);
        w.u32(to_u32(self.classes, "classes")?);
        w.u32(6);
        for t in self.tensors() {
            w.u32(to_u32(t.len(), "tensor length")?);
            for &v in t.iter() {
                w.f64(v);
            }
        }
        Ok(w.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CnnError> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let inputs = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let count = r.u32()? as usize;
        let expected = Self::expected_lengths(inputs, classes);
        if count != expected.len() {
            return Err(FormatError::DimensionMismatch(format!("{count} tensors, expected 6")).into());
        }
        let mut model = Self::zeros(inputs, classes);
        for (t, want) in model.tensors_mut().into_iter().zip(expected) {
            let len = r.u32()? as usize;
            if len != want {
                return Err(FormatError::DimensionMismatch(format!("tensor of length {len}, expected {want}")).into());
            }
            r.require(len * 8)?;
            for v in t.iter_mut() {
                *v = r.f64()?;
            }
        }
        if r.remaining() != 0 {
            return Err(FormatError::DimensionMismatch(format!("{} trailing bytes", r.remaining())).into());
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), CnnError> {
        fs::write(path, self.encode()?).map_err(FormatError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CnnError> {
        let bytes = fs::read(path).map_err(FormatError::from)?;
        Self::decode(&bytes)
    }
}

/// Adam moments for every parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &CnnModel, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, model: &mut CnnModel, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in model.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_is_fixed_by_n_and_c() {
        let m = CnnModel::new(300, 3, 0);
        let expect = 300 * 9 * 32 + 32 + 32 * 9 * 64 + 64 + 64 * 9 * 3 + 3;
        assert_eq!(m.parameter_count(), expect);
    }

    #[test]
    fn initialisation_is_seeded_and_bounded() {
        let a = CnnModel::new(5, 2, 11);
        assert_eq!(a, CnnModel::new(5, 2, 11));
        assert_ne!(a, CnnModel::new(5, 2, 12));
        let limit = (6.0f64 / 45.0).sqrt();
        assert!(a.w1.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn checkpoint_round_trips() {
        let m = CnnModel::new(4, 3, 2);
        let bytes = m.encode().unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(CnnModel::decode(&bytes).unwrap(), m);
        assert!(CnnModel::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            CnnModel::decode(&bad),
            Err(CnnError::Format(FormatError::BadMagic { .. }))
        ));
    }

    #[test]
    fn tensor_shape_is_checked() {
        assert!(Tensor4::new([1, 2, 3, 3], vec![0.0; 17]).is_err());
        let t = Tensor4::new([1, 2, 3, 3], (0..18).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(0, 1, 2, 0), 15.0);
    }
}
