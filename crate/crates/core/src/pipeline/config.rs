//! Flat `key = value` configuration.

use std::fs;
use std::path::{Path, PathBuf};

use super::PipelineError;
use crate::cnn::TrainConfig;
use crate::coding::SrsrConfig;
use crate::dictlearn::DictLearnConfig;
use crate::superpixel::SegmenterConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub covariance: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Externally computed superpixel raster; segmentation is skipped when
    /// set.
    pub superpixels: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub prediction: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub freeze_dictionary: bool,
    pub skip_unfolding: bool,
    /// Bypass sparse coding and feed the 9 real covariance channels to the
    /// CNN.
    pub cnn_only: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub segmenter: SegmenterConfig,
    /// Dictionary atoms drawn per class (M).
    pub atoms_per_class: usize,
    pub coding: SrsrConfig,
    pub dict_learning: DictLearnConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub ablation: Ablation,
    /// Worker cap; `None` leaves the choice to rayon.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths {
                output: PathBuf::from("out"),
                ..Default::default()
            },
            segmenter: SegmenterConfig::default(),
            atoms_per_class: 100,
            coding: SrsrConfig::default(),
            dict_learning: DictLearnConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            ablation: Ablation::default(),
            threads: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, PipelineError> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(PipelineError::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "covariance",
        "labels",
        "superpixels",
        "features",
        "model",
        "prediction",
        "output",
        "scale",
        "compactness",
        "segment_iterations",
        "atoms_per_class",
        "lambda",
        "step",
        "layers",
        "init_iterations",
        "safeguard",
        "trace_weight",
        "dict_iterations",
        "learning_rate",
        "batch_size",
        "epochs",
        "patch",
        "train_ratio",
        "seed",
        "freeze_dictionary",
        "skip_unfolding",
        "cnn_only",
        "threads",
    ];

    /// Sets one key. `seed` also seeds the CNN.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let v = value.trim();
        let path = || Some(PathBuf::from(v));
        match key.trim() {
            "covariance" => self.paths.covariance = path(),
            "labels" => self.paths.labels = path(),
            "superpixels" => self.paths.superpixels = path(),
            "features" => self.paths.features = path(),
            "model" => self.paths.model = path(),
            "prediction" => self.paths.prediction = path(),
            "output" => self.paths.output = PathBuf::from(v),
            "scale" => self.segmenter.scale = parse(key, v)?,
            "compactness" => self.segmenter.compactness = parse(key, v)?,
            "segment_iterations" => self.segmenter.iterations = parse(key, v)?,
            "atoms_per_class" => self.atoms_per_class = parse(key, v)?,
            "lambda" => self.coding.lambda = parse(key, v)?,
            "step" => self.coding.step = parse(key, v)?,
            "layers" => self.coding.layers = parse(key, v)?,
            "init_iterations" => self.coding.init_iterations = parse(key, v)?,
            "safeguard" => self.coding.safeguard = parse_bool(key, v)?,
            "trace_weight" => self.dict_learning.trace_weight = parse(key, v)?,
            "dict_iterations" => self.dict_learning.max_iterations = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "patch" => self.train.patch = parse(key, v)?,
            "train_ratio" => self.train.train_ratio = parse(key, v)?,
            "seed" => {
                self.seed = parse(key, v)?;
                self.train.seed = self.seed;
            }
            "freeze_dictionary" => self.ablation.freeze_dictionary = parse_bool(key, v)?,
            "skip_unfolding" => self.ablation.skip_unfolding = parse_bool(key, v)?,
            "cnn_only" => self.ablation.cnn_only = parse_bool(key, v)?,
            "threads" => self.threads = Some(parse(key, v)?),
            other => return Err(PipelineError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines, `#`/`;`
    /// comments and `[section]` headers are ignored.
    pub fn apply_ini(&mut self, text: &str) -> Result<(), PipelineError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| PipelineError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_ini(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        cfg.apply_ini(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_ini(&text)
    }

    /// Every key with its current value, loadable by [`Self::from_ini`].
    pub fn to_ini(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut lines: Vec<(String, Option<String>)> = vec![
            ("covariance".into(), opt(&self.paths.covariance)),
            ("labels".into(), opt(&self.paths.labels)),
            ("superpixels".into(), opt(&self.paths.superpixels)),
            ("features".into(), opt(&self.paths.features)),
            ("model".into(), opt(&self.paths.model)),
            ("prediction".into(), opt(&self.paths.prediction)),
            ("output".into(), Some(self.paths.output.display().to_string())),
        ];
        let scalars = [
            ("scale", self.segmenter.scale.to_string()),
            ("compactness", self.segmenter.compactness.to_string()),
            ("segment_iterations", self.segmenter.iterations.to_string()),
            ("atoms_per_class", self.atoms_per_class.to_string()),
            ("lambda", self.coding.lambda.to_string()),
            ("step", self.coding.step.to_string()),
            ("layers", self.coding.layers.to_string()),
            ("init_iterations", self.coding.init_iterations.to_string()),
            ("safeguard", self.coding.safeguard.to_string()),
            ("trace_weight", self.dict_learning.trace_weight.to_string()),
            ("dict_iterations", self.dict_learning.max_iterations.to_string()),
            ("learning_rate", self.train.learning_rate.to_string()),
            ("batch_size", self.train.batch_size.to_string()),
            ("epochs", self.train.epochs.to_string()),
            ("patch", self.train.patch.to_string()),
            ("train_ratio", self.train.train_ratio.to_string()),
            ("seed", self.seed.to_string()),
            ("freeze_dictionary", self.ablation.freeze_dictionary.to_string()),
            ("skip_unfolding", self.ablation.skip_unfolding.to_string()),
            ("cnn_only", self.ablation.cnn_only.to_string()),
        ];
        lines.extend(scalars.into_iter().map(|(k, v)| (k.to_string(), Some(v))));
        lines.push(("threads".into(), self.threads.map(|t| t.to_string())));
        lines
            .into_iter()
            .map(|(k, v)| match v {
                Some(v) => format!("{k} = {v}\n"),
                None => format!("# {k} =\n"),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: String| PipelineError::Config(e);
        self.segmenter.validate().map_err(|e| cfg(e.to_string()))?;
        self.coding.validate().map_err(|e| cfg(e.to_string()))?;
        self.dict_learning.validate().map_err(|e| cfg(e.to_string()))?;
        self.train.validate().map_err(|e| cfg(e.to_string()))?;
        if self.atoms_per_class == 0 {
            return Err(cfg("atoms_per_class must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(cfg("threads must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = PipelineConfig::default();
        assert_eq!(c.segmenter.scale, 100.0);
        assert_eq!(c.atoms_per_class, 100);
        assert_eq!((c.coding.lambda, c.coding.step, c.coding.layers), (0.5, 1e-4, 4));
        assert_eq!(c.dict_learning.trace_weight, 1e-2);
        assert_eq!((c.train.patch, c.train.batch_size, c.train.epochs), (9, 128, 50));
        assert_eq!((c.train.learning_rate, c.train.train_ratio), (1e-3, 0.10));
    }

    #[test]
    fn ini_parses_with_comments_and_sections() {
        let c = PipelineConfig::from_ini(
            "# demo\n[coding]\nlambda = 0.25\n; note\nlayers=6\nseed = 9\ncnn_only = yes\n",
        )
        .unwrap();
        assert_eq!(c.coding.lambda, 0.25);
        assert_eq!(c.coding.layers, 6);
        assert_eq!((c.seed, c.train.seed), (9, 9));
        assert!(c.ablation.cnn_only);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(PipelineConfig::from_ini("lamda = 1").is_err());
        assert!(PipelineConfig::from_ini("layers = four").is_err());
        assert!(PipelineConfig::from_ini("no equals sign").is_err());
    }

    #[test]
    fn ini_round_trips() {
        let mut c = PipelineConfig::default();
        c.set("labels", "a/b.lab").unwrap();
        c.set("step", "0.003").unwrap();
        c.set("threads", "2").unwrap();
        assert_eq!(PipelineConfig::from_ini(&c.to_ini()).unwrap(), c);
    }

    #[test]
    fn every_listed_key_is_settable() {
        for key in PipelineConfig::KEYS {
            let mut c = PipelineConfig::default();
            let value = match *key {
                "safeguard" | "freeze_dictionary" | "skip_unfolding" | "cnn_only" => "true",
                _ => "3",
            };
            c.set(key, value).unwrap();
        }
    }
}
