//! The unfolded sparse-representation network.
//!
//! Each layer updates the codes of every superpixel by one proximal
//! gradient step and then refines the shared dictionary on the whole
//! batch. The resulting codes are the superpixel features, broadcast back
//! to pixels for the convolutional stage.

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::Path;

use log::{debug, info};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::binio::{to_u32, Reader, Writer};
use crate::coding::{
    ista_solve, ista_step, objective_with_floor, spg_init, CodingError, Dictionary, EncodingProblem,
    SolveStop, SparseCode, SrsrConfig, StepStatus,
};
use crate::dictlearn::{dict_update, DictBatch, DictLearnConfig};
use crate::hpd::HpdMatrix;
use crate::polsar::{CovarianceImage, LabelMap};
use crate::superpixel::{Superpixel, SuperpixelMap};
use crate::FormatError;

pub const FEATURE_MAGIC: &[u8; 8] = b"PSARFEA1";

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("class {class} has {available} usable labeled pixels, {required} required")]
    InsufficientLabels {
        class: u16,
        available: usize,
        required: usize,
    },
    #[error("no labeled classes")]
    NoClasses,
    #[error("segment {0} has no feature")]
    MissingSegment(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Coding(#[from] CodingError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Clone, Debug)]
pub struct SrsrNet {
    pub dictionary: Dictionary,
    pub coding: SrsrConfig,
    pub dict_learning: DictLearnConfig,
    /// Replace the unfolded layers by the reference solver at a fixed
    /// dictionary.
    pub skip_unfolding: bool,
    /// Iteration budget of the reference solver.
    pub solve_stop: SolveStop,
}

impl SrsrNet {
    pub fn new(dictionary: Dictionary, coding: SrsrConfig, dict_learning: DictLearnConfig) -> Self {
        Self {
            dictionary,
            coding,
            dict_learning,
            skip_unfolding: false,
            solve_stop: SolveStop::default(),
        }
    }

    pub fn layers(&self) -> usize {
        self.coding.layers
    }

    pub fn feature_dim(&self) -> usize {
        self.dictionary.len()
    }
}

/// Dictionary of `atoms_per_class` randomly chosen labeled pixels per
/// class, ordered by class. Masked or non-HPD pixels are never chosen.
pub fn init_dictionary(
    labels: &LabelMap,
    img: &CovarianceImage,
    atoms_per_class: usize,
    seed: u64,
) -> Result<Dictionary, NetworkError> {
    if !labels.same_shape(img.height(), img.width()) {
        return Err(NetworkError::DimensionMismatch(format!(
            "labels {}x{} vs image {}x{}",
            labels.height(),
            labels.width(),
            img.height(),
            img.width()
        )));
    }
    let classes = labels.num_classes();
    if classes == 0 || atoms_per_class == 0 {
        return Err(NetworkError::NoClasses);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut atoms = Vec::with_capacity(classes as usize * atoms_per_class);
    let mut atom_labels = Vec::with_capacity(atoms.capacity());
    for class in 1..=classes {
        let candidates: Vec<HpdMatrix> = labels
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .filter_map(|(i, _)| img.hpd_pixel(i))
            .collect();
        if candidates.len() < atoms_per_class {
            return Err(NetworkError::InsufficientLabels {
                class,
                available: candidates.len(),
                required: atoms_per_class,
            });
        }
        let mut picks = sample(&mut rng, candidates.len(), atoms_per_class).into_vec();
        picks.sort_unstable();
        for i in picks {
            atoms.push(candidates[i].clone());
            atom_labels.push(class);
        }
    }
    Ok(Dictionary::new(atoms, atom_labels)?)
}

pub fn init_network(
    labels: &LabelMap,
    img: &CovarianceImage,
    atoms_per_class: usize,
    seed: u64,
    coding: SrsrConfig,
    dict_learning: DictLearnConfig,
) -> Result<SrsrNet, NetworkError> {
    let dictionary = init_dictionary(labels, img, atoms_per_class, seed)?;
    Ok(SrsrNet::new(dictionary, coding, dict_learning))
}

/// Hash of the atoms' bit patterns, for detecting dictionary changes
/// within one build of the library.
pub fn dictionary_hash(dict: &Dictionary) -> u64 {
    let mut h = DefaultHasher::new();
    for a in dict.atoms() {
        for v in a.as_matrix().as_slice() {
            v.re.to_bits().hash(&mut h);
            v.im.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// Per-layer record of a forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardDiagnostics {
    /// Mean over superpixels of the joint objective
    /// `f(α_j; D) + λ_B·ΣTr(D_i)/J` after initialisation and after each layer.
    pub layer_objectives: Vec<f64>,
    /// Frobenius norm of the dictionary change made by each layer.
    pub dictionary_changes: Vec<f64>,
    /// Superpixels whose coefficient step failed, per layer.
    pub step_failures: Vec<usize>,
    /// Dictionary line searches that found no admissible step.
    pub failed_line_searches: usize,
    pub dictionary_hash_before: u64,
    pub dictionary_hash_after: u64,
}

/// Final superpixel codes, indexed by segment id.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField {
    codes: Vec<SparseCode>,
    dim: usize,
}

impl FeatureField {
    pub fn new(codes: Vec<SparseCode>, dim: usize) -> Result<Self, NetworkError> {
        if let Some(c) = codes.iter().find(|c| c.len() != dim) {
            return Err(NetworkError::DimensionMismatch(format!(
                "code of length {} in a field of dimension {dim}",
                c.len()
            )));
        }
        Ok(Self { codes, dim })
    }

    pub fn codes(&self) -> &[SparseCode] {
        &self.codes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// `PSARFEA1`: u32 segment count, u32 N, then the codes row-major.
    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        let mut w = Writer::with_magic(FEATURE_MAGIC);
        w.u32(to_u32(self.codes.len(), "segment count")?);
        w.u32(to_u32(self.dim, "feature dim")?);
        for c in &self.codes {
            for &v in c.as_slice() {
                w.f64(v);
            }
        }
        Ok(w.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NetworkError> {
        let mut r = Reader::new(bytes);
        r.magic(FEATURE_MAGIC)?;
        let k = r.u32()? as usize;
        let n = r.u32()? as usize;
        r.require(k * n * 8)?;
        let mut codes = Vec::with_capacity(k);
        for _ in 0..k {
            let v = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            codes.push(SparseCode::new(v).map_err(|e| FormatError::Invalid(e.to_string()))?);
        }
        if r.remaining() != 0 {
            return Err(FormatError::DimensionMismatch(format!("{} trailing bytes", r.remaining())).into());
        }
        Self::new(codes, n)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        fs::write(path, self.encode()?).map_err(FormatError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let bytes = fs::read(path).map_err(FormatError::from)?;
        Self::decode(&bytes)
    }
}

fn mean_joint_objective(
    problems: &[EncodingProblem],
    codes: &[SparseCode],
    dict: &Dictionary,
    coding: &SrsrConfig,
    trace_weight: f64,
) -> f64 {
    let total: f64 = problems
        .par_iter()
        .zip(codes.par_iter())
        .map(|(p, c)| objective_with_floor(p, c, dict, coding.lambda, coding.pd_floor).unwrap_or(f64::NAN))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let trace: f64 = dict.atoms().iter().map(HpdMatrix::trace).sum();
    (total + trace_weight * trace) / problems.len() as f64
}

fn dictionary_distance(a: &Dictionary, b: &Dictionary) -> f64 {
    a.atoms()
        .iter()
        .zip(b.atoms())
        .map(|(x, y)| (x.as_matrix() - y.as_matrix()).frobenius_norm().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Encodes every superpixel mean and updates `net.dictionary` in place.
pub fn forward(
    net: &mut SrsrNet,
    superpixels: &[Superpixel],
) -> Result<(FeatureField, ForwardDiagnostics), NetworkError> {
    let problems: Vec<EncodingProblem> = superpixels
        .iter()
        .map(|s| EncodingProblem::new(s.mean.clone()))
        .collect::<Result<_, _>>()?;
    if let Some(p) = problems.iter().find(|p| p.dim() != net.dictionary.dim()) {
        return Err(NetworkError::DimensionMismatch(format!(
            "superpixel dimension {} vs dictionary dimension {}",
            p.dim(),
            net.dictionary.dim()
        )));
    }
    let cfg = net.coding.clone();
    cfg.validate()?;
    let trace_weight = net.dict_learning.trace_weight;
    let mut diag = ForwardDiagnostics {
        dictionary_hash_before: dictionary_hash(&net.dictionary),
        ..Default::default()
    };

    let dict = &net.dictionary;
    let mut codes: Vec<SparseCode> = problems.par_iter().map(|p| spg_init(p, dict, &cfg)).collect();
    diag.layer_objectives
        .push(mean_joint_objective(&problems, &codes, &net.dictionary, &cfg, trace_weight));

    if net.skip_unfolding {
        let dict = &net.dictionary;
        let stop = net.solve_stop;
        let solved: Vec<_> = problems
            .par_iter()
            .zip(codes.par_iter())
            .map(|(p, c)| ista_solve(p, c, dict, &cfg, &stop))
            .collect();
        diag.step_failures.push(solved.iter().filter(|s| s.failed).count());
        codes = solved.into_iter().map(|s| s.code).collect();
        diag.layer_objectives
            .push(mean_joint_objective(&problems, &codes, &net.dictionary, &cfg, trace_weight));
    } else {
        for layer in 0..cfg.layers {
            let dict = &net.dictionary;
            let steps: Vec<_> = problems
                .par_iter()
                .zip(codes.par_iter())
                .map(|(p, c)| ista_step(p, c, dict, &cfg))
                .collect();
            diag.step_failures
                .push(steps.iter().filter(|s| s.status == StepStatus::Failed).count());
            codes = steps.into_iter().map(|s| s.code).collect();

            let batch = DictBatch::new(&problems, &codes)?;
            let update = dict_update(&batch, &net.dictionary, &net.dict_learning)?;
            diag.failed_line_searches += update.failed_searches;
            diag.dictionary_changes
                .push(dictionary_distance(&net.dictionary, &update.dictionary));
            net.dictionary = update.dictionary;

            let obj = mean_joint_objective(&problems, &codes, &net.dictionary, &cfg, trace_weight);
            debug!(
                "layer {}: mean objective {obj:.6}, dictionary change {:.3e}, {} step failures",
                layer + 1,
                diag.dictionary_changes[layer],
                diag.step_failures[layer]
            );
            diag.layer_objectives.push(obj);
        }
    }
    diag.dictionary_hash_after = dictionary_hash(&net.dictionary);
    info!(
        "encoded {} superpixels into {} features, objective {:.6} -> {:.6}",
        problems.len(),
        net.feature_dim(),
        diag.layer_objectives[0],
        diag.layer_objectives.last().unwrap()
    );
    Ok((FeatureField::new(codes, net.feature_dim())?, diag))
}

/// Per-pixel features stored as a palette of distinct vectors plus a
/// per-pixel palette index. Superpixel features have one palette entry per
/// segment; raw per-pixel features have one per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelFeatures {
    height: usize,
    width: usize,
    channels: usize,
    palette: Vec<f64>,
    index: Vec<u32>,
}

impl PixelFeatures {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        palette: Vec<f64>,
        index: Vec<u32>,
    ) -> Result<Self, NetworkError> {
        if index.len() != height * width || channels == 0 || palette.len() % channels != 0 {
            return Err(NetworkError::DimensionMismatch(format!(
                "{height}x{width} features with {} indices, {} palette values, {channels} channels",
                index.len(),
                palette.len()
            )));
        }
        let entries = palette.len() / channels;
        if let Some(&bad) = index.iter().find(|&&i| i as usize >= entries) {
            return Err(NetworkError::MissingSegment(bad as usize));
        }
        Ok(Self {
            height,
            width,
            channels,
            palette,
            index,
        })
    }

    /// One palette entry per pixel.
    pub fn dense(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self, NetworkError> {
        let index = (0..(height * width) as u32).collect();
        Self::new(height, width, channels, values, index)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn palette_len(&self) -> usize {
        self.palette.len() / self.channels
    }

    /// All palette entries back to back.
    pub fn palette(&self) -> &[f64] {
        &self.palette
    }

    pub fn palette_entry(&self, entry: usize) -> &[f64] {
        &self.palette[entry * self.channels..(entry + 1) * self.channels]
    }

    pub fn index(&self) -> &[u32] {
        &self.index
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        self.palette_entry(self.index[row * self.width + col] as usize)
    }
}

/// Broadcasts each segment's code to its pixels.
pub fn project_to_pixels(field: &FeatureField, map: &SuperpixelMap) -> Result<PixelFeatures, NetworkError> {
    if map.count() > field.len() {
        return Err(NetworkError::MissingSegment(field.len()));
    }
    let palette = field.codes().iter().flat_map(|c| c.as_slice().iter().copied()).collect();
    PixelFeatures::new(map.height(), map.width(), field.dim(), palette, map.ids().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polsar::{generate_wishart_scene, SceneSpec};
    use crate::superpixel::{mean_covariance, segment, SegmenterConfig};
    use rand::Rng;

    fn scene() -> (CovarianceImage, LabelMap) {
        generate_wishart_scene(&SceneSpec::three_class(32, 32, 16, 5)).unwrap()
    }

    #[test]
    fn dictionary_has_m_atoms_per_class() {
        let (img, labels) = scene();
        let d = init_dictionary(&labels, &img, 10, 1).unwrap();
        assert_eq!(d.len(), 30);
        assert_eq!(d.atoms_per_class(), 10);
        for (i, &l) in d.labels().iter().enumerate() {
            assert_eq!(l as usize, i / 10 + 1);
        }
        assert_eq!(init_dictionary(&labels, &img, 10, 1).unwrap(), d);
        assert_ne!(init_dictionary(&labels, &img, 10, 2).unwrap(), d);
    }

    #[test]
    fn atoms_are_labeled_pixels_of_their_class() {
        let (img, labels) = scene();
        let d = init_dictionary(&labels, &img, 5, 3).unwrap();
        for (atom, &class) in d.atoms().iter().zip(d.labels()) {
            let found = (0..img.len()).any(|i| labels.labels()[i] == class && img.pixel(i) == atom.as_matrix());
            assert!(found);
        }
    }

    #[test]
    fn insufficient_labels_are_reported() {
        let (img, labels) = scene();
        let counts = labels.class_counts();
        let smallest = (1..counts.len()).map(|c| counts[c]).min().unwrap();
        assert!(matches!(
            init_dictionary(&labels, &img, smallest + 1, 0),
            Err(NetworkError::InsufficientLabels { .. })
        ));
        assert!(init_dictionary(&labels, &img, smallest, 0).is_ok());
    }

    fn encoded(layers: usize, freeze: bool) -> (SrsrNet, Vec<Superpixel>, FeatureField, ForwardDiagnostics) {
        let (img, labels) = scene();
        let map = segment(
            &img,
            &SegmenterConfig {
                scale: 64.0,
                ..Default::default()
            },
        )
        .unwrap();
        let sp = mean_covariance(&img, &map).unwrap();
        let coding = SrsrConfig {
            layers,
            step: 0.05,
            ..SrsrConfig::default()
        };
        let dict_learning = DictLearnConfig {
            freeze,
            ..DictLearnConfig::default()
        };
        let mut net = init_network(&labels, &img, 4, 7, coding, dict_learning).unwrap();
        let (field, diag) = forward(&mut net, &sp).unwrap();
        (net, sp, field, diag)
    }

    #[test]
    fn zero_layers_return_the_initial_codes() {
        let (net, sp, field, diag) = encoded(0, false);
        for (s, code) in sp.iter().zip(field.codes()) {
            let p = EncodingProblem::new(s.mean.clone()).unwrap();
            assert_eq!(&spg_init(&p, &net.dictionary, &net.coding), code);
        }
        assert_eq!(diag.dictionary_hash_before, diag.dictionary_hash_after);
    }

    #[test]
    fn layers_do_not_increase_the_objective() {
        let (_, _, field, diag) = encoded(4, false);
        assert_eq!(diag.layer_objectives.len(), 5);
        for w in diag.layer_objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", diag.layer_objectives);
        }
        assert!(diag.dictionary_changes.iter().any(|&c| c > 0.0));
        assert_eq!(field.dim(), 12);
        assert!(field.codes().iter().all(|c| c.as_slice().iter().all(|v| *v >= 0.0)));
    }

    #[test]
    fn frozen_dictionary_is_untouched() {
        let (img, labels) = scene();
        let before = init_dictionary(&labels, &img, 4, 7).unwrap();
        let (net, _, _, diag) = encoded(4, true);
        assert_eq!(net.dictionary, before);
        assert_eq!(diag.dictionary_hash_before, diag.dictionary_hash_after);
        assert!(diag.dictionary_changes.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn feature_field_round_trips() {
        let (_, _, field, _) = encoded(1, false);
        let bytes = field.encode().unwrap();
        assert_eq!(&bytes[..8], FEATURE_MAGIC);
        assert_eq!(FeatureField::decode(&bytes).unwrap(), field);
        assert!(matches!(
            FeatureField::decode(&bytes[..bytes.len() - 3]),
            Err(NetworkError::Format(FormatError::TruncatedFile { .. }))
        ));
    }

    #[test]
    fn projection_broadcasts_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let raw: Vec<u16> = (0..256).map(|_| rng.random_range(0..6)).collect();
        let map = SuperpixelMap::from_raw(16, 16, &raw);
        let codes: Vec<SparseCode> = (0..map.count())
            .map(|_| SparseCode::new((0..5).map(|_| rng.random::<f64>()).collect()).unwrap())
            .collect();
        let field = FeatureField::new(codes.clone(), 5).unwrap();
        let px = project_to_pixels(&field, &map).unwrap();
        assert_eq!((px.height(), px.width(), px.channels()), (16, 16, 5));
        for r in 0..16 {
            for c in 0..16 {
                assert_eq!(px.pixel(r, c), codes[map.id(r * 16 + c)].as_slice());
            }
        }
        let single = project_to_pixels(&field, &SuperpixelMap::single(16, 16)).unwrap();
        assert!((0..256).all(|i| single.pixel(i / 16, i % 16) == codes[0].as_slice()));

        let short = FeatureField::new(codes[..2].to_vec(), 5).unwrap();
        assert!(matches!(
            project_to_pixels(&short, &map),
            Err(NetworkError::MissingSegment(_))
        ));
    }
}
