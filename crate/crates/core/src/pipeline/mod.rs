//! Stage orchestration: segmentation, encoding, CNN training,
//! classification and evaluation, each re-runnable from files written by
//! the previous stage.

mod config;

pub use config::{Ablation, Paths, PipelineConfig};

use std::error::Error as StdError;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use thiserror::Error;

use crate::cnn::{classify_image, extract_patches, train, CnnModel, PatchSet, TrainReport};
use crate::metrics::{confusion, report, MetricsReport};
use crate::network::{forward, init_network, project_to_pixels, FeatureField, ForwardDiagnostics, PixelFeatures};
use crate::polsar::{
    colorize_labels, generate_wishart_scene, load_covariance, load_labels, pauli_rgb, save_covariance,
    save_labels, write_ppm, CovarianceImage, LabelMap, SceneSpec,
};
use crate::superpixel::{load_superpixels, mean_covariance, segment, SuperpixelMap};

pub const COVARIANCE_FILE: &str = "covariance.cov";
pub const LABELS_FILE: &str = "labels.lab";
pub const PAULI_FILE: &str = "pauli.ppm";
pub const SUPERPIXEL_FILE: &str = "superpixels.lab";
pub const FEATURE_FILE: &str = "features.fea";
pub const TRAIN_SPLIT_FILE: &str = "train.lab";
pub const TEST_SPLIT_FILE: &str = "test.lab";
pub const LAYER_FILE: &str = "layers.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";
pub const MODEL_FILE: &str = "model.cnn";
pub const LOSS_FILE: &str = "loss.csv";
pub const PREDICTION_FILE: &str = "prediction.lab";
pub const PREDICTION_PPM: &str = "prediction.ppm";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_TEXT: &str = "metrics.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Load,
    Generate,
    Segment,
    Encode,
    Train,
    Classify,
    Evaluate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Load => "load",
            Stage::Generate => "generate",
            Stage::Segment => "segment",
            Stage::Encode => "encode",
            Stage::Train => "train",
            Stage::Classify => "classify",
            Stage::Evaluate => "evaluate",
            Stage::Write => "write",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn StdError + Send + Sync>,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::Config(_) => None,
        }
    }
}

fn at<E: Into<Box<dyn StdError + Send + Sync>>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, PipelineError> {
    p.as_deref()
        .ok_or_else(|| PipelineError::Config(format!("missing path `{key}`")))
}

fn prepare_output(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(at(Stage::Write))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(at(Stage::Write))
}

#[derive(Clone, Debug)]
pub struct GeneratedScene {
    pub covariance: PathBuf,
    pub labels: PathBuf,
    pub pauli: PathBuf,
}

/// Simulates a scene and writes its covariance raster, reference labels
/// and Pauli render into `out`.
pub fn generate(spec: &SceneSpec, out: &Path) -> Result<GeneratedScene, PipelineError> {
    let (img, labels) = generate_wishart_scene(spec).map_err(at(Stage::Generate))?;
    prepare_output(out)?;
    let files = GeneratedScene {
        covariance: out.join(COVARIANCE_FILE),
        labels: out.join(LABELS_FILE),
        pauli: out.join(PAULI_FILE),
    };
    save_covariance(&files.covariance, &img).map_err(at(Stage::Write))?;
    save_labels(&files.labels, &labels).map_err(at(Stage::Write))?;
    let rgb = pauli_rgb(&img).map_err(at(Stage::Write))?;
    write_ppm(&files.pauli, &rgb).map_err(at(Stage::Write))?;
    Ok(files)
}

/// The configured external superpixel raster, or a fresh segmentation.
pub fn superpixels(img: &CovarianceImage, cfg: &PipelineConfig) -> Result<SuperpixelMap, PipelineError> {
    match &cfg.paths.superpixels {
        Some(p) => load_superpixels(p, img.height(), img.width()).map_err(at(Stage::Segment)),
        None => segment(img, &cfg.segmenter).map_err(at(Stage::Segment)),
    }
}

/// Stratified train/test split of the reference labels.
pub fn split(labels: &LabelMap, cfg: &PipelineConfig) -> Result<(PatchSet, PatchSet), PipelineError> {
    extract_patches(labels, &cfg.train).map_err(at(Stage::Train))
}

#[derive(Debug)]
pub struct Encoded {
    pub field: FeatureField,
    pub diagnostics: ForwardDiagnostics,
    pub superpixels: usize,
}

/// Builds the dictionary from `train_labels` and runs the network over
/// every superpixel.
pub fn encode(
    img: &CovarianceImage,
    map: &SuperpixelMap,
    train_labels: &LabelMap,
    cfg: &PipelineConfig,
) -> Result<Encoded, PipelineError> {
    let segments = mean_covariance(img, map).map_err(at(Stage::Encode))?;
    let mut dict_learning = cfg.dict_learning.clone();
    dict_learning.freeze |= cfg.ablation.freeze_dictionary;
    let mut net = init_network(
        train_labels,
        img,
        cfg.atoms_per_class,
        cfg.seed,
        cfg.coding.clone(),
        dict_learning,
    )
    .map_err(at(Stage::Encode))?;
    net.skip_unfolding = cfg.ablation.skip_unfolding;
    let (field, diagnostics) = forward(&mut net, &segments).map_err(at(Stage::Encode))?;
    info!(
        "encoded {} superpixels with {} atoms; mean objective {:?}",
        segments.len(),
        net.feature_dim(),
        diagnostics.layer_objectives
    );
    Ok(Encoded {
        field,
        diagnostics,
        superpixels: segments.len(),
    })
}

/// The 9 real channels `C11, C22, C33, Re/Im C12, Re/Im C13, Re/Im C23`,
/// each standardised to zero mean and unit variance over valid pixels.
/// Masked pixels are zero.
pub fn raw_features(img: &CovarianceImage) -> Result<PixelFeatures, PipelineError> {
    if img.dim() != 3 {
        return Err(at(Stage::Load)(format!("raw features need 3×3 covariances, got {}×{}", img.dim(), img.dim())));
    }
    const CH: usize = 9;
    let mut values = vec![0.0; img.len() * CH];
    for i in 0..img.len() {
        if !img.is_valid(i) {
            continue;
        }
        let m = img.pixel(i);
        let v = &mut values[i * CH..(i + 1) * CH];
        v[0] = m.get(0, 0).re;
        v[1] = m.get(1, 1).re;
        v[2] = m.get(2, 2).re;
        v[3] = m.get(0, 1).re;
        v[4] = m.get(0, 1).im;
        v[5] = m.get(0, 2).re;
        v[6] = m.get(0, 2).im;
        v[7] = m.get(1, 2).re;
        v[8] = m.get(1, 2).im;
    }
    let valid: Vec<usize> = (0..img.len()).filter(|&i| img.is_valid(i)).collect();
    if !valid.is_empty() {
        let n = valid.len() as f64;
        for ch in 0..CH {
            let mean = valid.iter().map(|&i| values[i * CH + ch]).sum::<f64>() / n;
            let var = valid.iter().map(|&i| (values[i * CH + ch] - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for &i in &valid {
                values[i * CH + ch] = (values[i * CH + ch] - mean) / sd;
            }
        }
    }
    PixelFeatures::dense(img.height(), img.width(), CH, values).map_err(at(Stage::Load))
}

pub fn train_model(
    feat: &PixelFeatures,
    train_set: &PatchSet,
    classes: usize,
    cfg: &PipelineConfig,
) -> Result<(CnnModel, TrainReport), PipelineError> {
    let mut model = CnnModel::new(feat.channels(), classes, cfg.seed);
    let report = train(&mut model, feat, train_set, &cfg.train).map_err(at(Stage::Train))?;
    Ok((model, report))
}

pub fn evaluate(pred: &LabelMap, truth: &LabelMap) -> Result<MetricsReport, PipelineError> {
    let cm = confusion(pred, truth).map_err(at(Stage::Evaluate))?;
    report(&cm).map_err(at(Stage::Evaluate))
}

/// Everything a full run produces, kept in memory.
#[derive(Debug)]
pub struct RunOutput {
    pub prediction: LabelMap,
    pub report: MetricsReport,
    /// Absent in the `cnn_only` ablation.
    pub encoded: Option<Encoded>,
    pub superpixel_map: Option<SuperpixelMap>,
    pub train_report: TrainReport,
    pub model: CnnModel,
    pub train_set: PatchSet,
    pub test_set: PatchSet,
}

/// Runs every stage on an in-memory scene. Metrics are computed on the
/// held-out test pixels.
pub fn execute(img: &CovarianceImage, labels: &LabelMap, cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    if !labels.same_shape(img.height(), img.width()) {
        return Err(at(Stage::Load)(format!(
            "labels {}x{} vs image {}x{}",
            labels.height(),
            labels.width(),
            img.height(),
            img.width()
        )));
    }
    let (train_set, test_set) = split(labels, cfg)?;
    let train_labels = train_set.to_label_map(img.height(), img.width());
    let (feat, encoded, superpixel_map) = if cfg.ablation.cnn_only {
        (raw_features(img)?, None, None)
    } else {
        let map = superpixels(img, cfg)?;
        info!("{} superpixels", map.count());
        let encoded = encode(img, &map, &train_labels, cfg)?;
        let feat = project_to_pixels(&encoded.field, &map).map_err(at(Stage::Encode))?;
        (feat, Some(encoded), Some(map))
    };
    let classes = labels.num_classes() as usize;
    let (model, train_report) = train_model(&feat, &train_set, classes, cfg)?;
    let prediction = classify_image(&model, &feat, cfg.train.patch).map_err(at(Stage::Classify))?;
    let report = evaluate(&prediction, &test_set.to_label_map(img.height(), img.width()))?;
    info!(
        "OA {:.4}, AA {:.4}, kappa {:.4}",
        report.overall_accuracy, report.average_accuracy, report.kappa
    );
    Ok(RunOutput {
        prediction,
        report,
        encoded,
        superpixel_map,
        train_report,
        model,
        train_set,
        test_set,
    })
}

pub fn layer_csv(diag: &ForwardDiagnostics) -> String {
    let mut s = String::from("layer,objective,dictionary_change,step_failures\n");
    for (k, obj) in diag.layer_objectives.iter().enumerate() {
        if k == 0 {
            let _ = writeln!(s, "0,{obj},0,0");
        } else {
            let change = diag.dictionary_changes.get(k - 1).copied().unwrap_or(0.0);
            let fails = diag.step_failures.get(k - 1).copied().unwrap_or(0);
            let _ = writeln!(s, "{k},{obj},{change},{fails}");
        }
    }
    s
}

pub fn diagnostics_text(enc: &Encoded) -> String {
    let d = &enc.diagnostics;
    format!(
        "superpixels={}\nfeature_dim={}\ndictionary_hash_before={:016x}\ndictionary_hash_after={:016x}\n\
         dictionary_unchanged={}\nfailed_line_searches={}\nstep_failures={}\n",
        enc.superpixels,
        enc.field.dim(),
        d.dictionary_hash_before,
        d.dictionary_hash_after,
        d.dictionary_hash_before == d.dictionary_hash_after,
        d.failed_line_searches,
        d.step_failures.iter().sum::<usize>()
    )
}

pub fn loss_csv(report: &TrainReport) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", e + 1);
    }
    s
}

fn write_prediction(dir: &Path, pred: &LabelMap) -> Result<(), PipelineError> {
    save_labels(&dir.join(PREDICTION_FILE), pred).map_err(at(Stage::Write))?;
    write_ppm(&dir.join(PREDICTION_PPM), &colorize_labels(pred)).map_err(at(Stage::Write))
}

fn write_metrics(dir: &Path, report: &MetricsReport) -> Result<(), PipelineError> {
    write_text(&dir.join(METRICS_CSV), &report.to_csv())?;
    write_text(&dir.join(METRICS_TEXT), &report.to_text())
}

fn write_encoded(dir: &Path, enc: &Encoded) -> Result<(), PipelineError> {
    enc.field.save(&dir.join(FEATURE_FILE)).map_err(at(Stage::Write))?;
    write_text(&dir.join(LAYER_FILE), &layer_csv(&enc.diagnostics))?;
    write_text(&dir.join(DIAGNOSTICS_FILE), &diagnostics_text(enc))
}

fn write_splits(dir: &Path, train: &PatchSet, test: &PatchSet, h: usize, w: usize) -> Result<(), PipelineError> {
    save_labels(&dir.join(TRAIN_SPLIT_FILE), &train.to_label_map(h, w)).map_err(at(Stage::Write))?;
    save_labels(&dir.join(TEST_SPLIT_FILE), &test.to_label_map(h, w)).map_err(at(Stage::Write))
}

fn load_inputs(cfg: &PipelineConfig) -> Result<(CovarianceImage, LabelMap), PipelineError> {
    let img = load_covariance(required(&cfg.paths.covariance, "covariance")?).map_err(at(Stage::Load))?;
    let labels = load_labels(required(&cfg.paths.labels, "labels")?).map_err(at(Stage::Load))?;
    Ok((img, labels))
}

/// Full run from files; writes every artifact into `cfg.paths.output`.
pub fn run(cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let (img, labels) = load_inputs(cfg)?;
    let dir = &cfg.paths.output;
    prepare_output(dir)?;
    let out = execute(&img, &labels, cfg)?;
    write_splits(dir, &out.train_set, &out.test_set, img.height(), img.width())?;
    if let (Some(map), Some(enc)) = (&out.superpixel_map, &out.encoded) {
        save_labels(&dir.join(SUPERPIXEL_FILE), &map.to_label_map().map_err(at(Stage::Write))?)
            .map_err(at(Stage::Write))?;
        write_encoded(dir, enc)?;
    }
    out.model.save(&dir.join(MODEL_FILE)).map_err(at(Stage::Write))?;
    write_text(&dir.join(LOSS_FILE), &loss_csv(&out.train_report))?;
    write_prediction(dir, &out.prediction)?;
    write_metrics(dir, &out.report)?;
    write_text(&dir.join("config.ini"), &cfg.to_ini())?;
    Ok(out)
}

/// Segments the configured covariance raster into `superpixels.lab`.
pub fn run_segment(cfg: &PipelineConfig) -> Result<SuperpixelMap, PipelineError> {
    cfg.validate()?;
    let img = load_covariance(required(&cfg.paths.covariance, "covariance")?).map_err(at(Stage::Load))?;
    prepare_output(&cfg.paths.output)?;
    let map = superpixels(&img, cfg)?;
    let raster = map.to_label_map().map_err(at(Stage::Write))?;
    save_labels(&cfg.paths.output.join(SUPERPIXEL_FILE), &raster).map_err(at(Stage::Write))?;
    Ok(map)
}

/// Encodes superpixels (segmenting first when no raster is configured);
/// writes features, layer trace, diagnostics and the label split.
pub fn run_encode(cfg: &PipelineConfig) -> Result<Encoded, PipelineError> {
    cfg.validate()?;
    let (img, labels) = load_inputs(cfg)?;
    let dir = &cfg.paths.output;
    prepare_output(dir)?;
    let (train_set, test_set) = split(&labels, cfg)?;
    write_splits(dir, &train_set, &test_set, img.height(), img.width())?;
    let map = superpixels(&img, cfg)?;
    let enc = encode(&img, &map, &train_set.to_label_map(img.height(), img.width()), cfg)?;
    write_encoded(dir, &enc)?;
    Ok(enc)
}

fn pixel_features(cfg: &PipelineConfig) -> Result<PixelFeatures, PipelineError> {
    if cfg.ablation.cnn_only {
        let img = load_covariance(required(&cfg.paths.covariance, "covariance")?).map_err(at(Stage::Load))?;
        return raw_features(&img);
    }
    let field = FeatureField::load(required(&cfg.paths.features, "features")?).map_err(at(Stage::Load))?;
    let sp = load_labels(required(&cfg.paths.superpixels, "superpixels")?).map_err(at(Stage::Load))?;
    let map = SuperpixelMap::from_raw(sp.height(), sp.width(), sp.labels());
    project_to_pixels(&field, &map).map_err(at(Stage::Load))
}

/// Trains the CNN on the training split of `labels`; writes the model
/// checkpoint and the loss curve.
pub fn run_train(cfg: &PipelineConfig) -> Result<(CnnModel, TrainReport), PipelineError> {
    cfg.validate()?;
    let labels = load_labels(required(&cfg.paths.labels, "labels")?).map_err(at(Stage::Load))?;
    let feat = pixel_features(cfg)?;
    if !labels.same_shape(feat.height(), feat.width()) {
        return Err(at(Stage::Load)("labels and features differ in size".to_string()));
    }
    prepare_output(&cfg.paths.output)?;
    let (train_set, _) = split(&labels, cfg)?;
    let (model, report) = train_model(&feat, &train_set, labels.num_classes() as usize, cfg)?;
    model.save(&cfg.paths.output.join(MODEL_FILE)).map_err(at(Stage::Write))?;
    write_text(&cfg.paths.output.join(LOSS_FILE), &loss_csv(&report))?;
    Ok((model, report))
}

/// Classifies every pixel with a saved model.
pub fn run_classify(cfg: &PipelineConfig) -> Result<LabelMap, PipelineError> {
    cfg.validate()?;
    let model = CnnModel::load(required(&cfg.paths.model, "model")?).map_err(at(Stage::Load))?;
    let feat = pixel_features(cfg)?;
    prepare_output(&cfg.paths.output)?;
    let pred = classify_image(&model, &feat, cfg.train.patch).map_err(at(Stage::Classify))?;
    write_prediction(&cfg.paths.output, &pred)?;
    Ok(pred)
}

/// Scores `prediction` against `labels`, every non-zero reference pixel
/// counted.
pub fn run_evaluate(cfg: &PipelineConfig) -> Result<MetricsReport, PipelineError> {
    let pred = load_labels(required(&cfg.paths.prediction, "prediction")?).map_err(at(Stage::Load))?;
    let truth = load_labels(required(&cfg.paths.labels, "labels")?).map_err(at(Stage::Load))?;
    let report = evaluate(&pred, &truth)?;
    prepare_output(&cfg.paths.output)?;
    write_metrics(&cfg.paths.output, &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_features_are_standardised() {
        let (img, _) = generate_wishart_scene(&SceneSpec::three_class(16, 16, 16, 1)).unwrap();
        let f = raw_features(&img).unwrap();
        assert_eq!(f.channels(), 9);
        for ch in 0..9 {
            let vals: Vec<f64> = (0..16).flat_map(|r| (0..16).map(move |c| (r, c))).map(|(r, c)| f.pixel(r, c)[ch]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn layer_csv_has_one_row_per_layer_plus_init() {
        let diag = ForwardDiagnostics {
            layer_objectives: vec![3.0, 2.0, 1.5],
            dictionary_changes: vec![0.1, 0.05],
            step_failures: vec![0, 1],
            ..Default::default()
        };
        let csv = layer_csv(&diag);
        assert_eq!(csv.lines().collect::<Vec<_>>(), ["layer,objective,dictionary_change,step_failures", "0,3,0,0", "1,2,0.1,0", "2,1.5,0.05,1"]);
    }

    #[test]
    fn stage_errors_carry_their_stage() {
        let mut cfg = PipelineConfig::default();
        cfg.paths.covariance = Some(PathBuf::from("/nonexistent/x.cov"));
        cfg.paths.labels = Some(PathBuf::from("/nonexistent/x.lab"));
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.stage(), Some(Stage::Load));
        assert!(err.to_string().starts_with("load stage failed"));
    }
}
