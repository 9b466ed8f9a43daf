use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use srsr_core::pipeline::{self, PipelineConfig, PipelineError};
use srsr_core::polsar::{RegionLayout, SceneSpec};

/// PolSAR classification with Riemannian sparse codes and a small CNN.
#[derive(Parser)]
#[command(name = "srsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a 3-class Wishart scene.
    Generate(GenerateArgs),
    /// Segment a covariance raster into superpixels.
    Segment(Common),
    /// Encode superpixel means into sparse features.
    Encode(Common),
    /// Train the CNN on pixel features.
    Train(Common),
    /// Classify every pixel with a trained model.
    Classify(Common),
    /// Score a prediction against reference labels.
    Evaluate(Common),
    /// Run every stage end to end.
    Run(Common),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    /// Number of looks L.
    #[arg(long, default_value_t = 16)]
    looks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Voronoi cell grid (rows = cols); 0 selects vertical stripes.
    #[arg(long, default_value_t = 4)]
    cells: usize,
    #[arg(long, short, default_value = "scene")]
    output: PathBuf,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    covariance: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    superpixels: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    prediction: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    freeze_dictionary: bool,
    #[arg(long)]
    skip_unfolding: bool,
    #[arg(long)]
    cnn_only: bool,
}

impl Common {
    fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
            cfg.set(k, v)?;
        }
        let paths = [
            ("covariance", &self.covariance),
            ("labels", &self.labels),
            ("superpixels", &self.superpixels),
            ("features", &self.features),
            ("model", &self.model),
            ("prediction", &self.prediction),
            ("output", &self.output),
        ];
        for (k, p) in paths {
            if let Some(p) = p {
                cfg.set(k, &p.display().to_string())?;
            }
        }
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        cfg.ablation.freeze_dictionary |= self.freeze_dictionary;
        cfg.ablation.skip_unfolding |= self.skip_unfolding;
        cfg.ablation.cnn_only |= self.cnn_only;
        Ok(cfg)
    }
}

fn set_threads(n: Option<usize>) -> Result<(), PipelineError> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<(), PipelineError> {
    let (common, stage): (Common, fn(&PipelineConfig) -> Result<(), PipelineError>) = match command {
        Command::Generate(g) => {
            let layout = if g.cells == 0 {
                RegionLayout::Stripes
            } else {
                RegionLayout::Voronoi {
                    rows: g.cells,
                    cols: g.cells,
                }
            };
            let spec = SceneSpec {
                layout,
                ..SceneSpec::three_class(g.height, g.width, g.looks, g.seed)
            };
            let files = pipeline::generate(&spec, &g.output)?;
            println!("covariance={}", files.covariance.display());
            println!("labels={}", files.labels.display());
            println!("pauli={}", files.pauli.display());
            return Ok(());
        }
        Command::Segment(c) => (c, |cfg| {
            let map = pipeline::run_segment(cfg)?;
            println!("superpixels={}", map.count());
            Ok(())
        }),
        Command::Encode(c) => (c, |cfg| {
            let enc = pipeline::run_encode(cfg)?;
            print!("{}", pipeline::diagnostics_text(&enc));
            Ok(())
        }),
        Command::Train(c) => (c, |cfg| {
            let (_, report) = pipeline::run_train(cfg)?;
            if let Some(l) = report.epoch_losses.last() {
                println!("final_loss={l}");
            }
            Ok(())
        }),
        Command::Classify(c) => (c, |cfg| pipeline::run_classify(cfg).map(|_| ())),
        Command::Evaluate(c) => (c, |cfg| {
            print!("{}", pipeline::run_evaluate(cfg)?.to_text());
            Ok(())
        }),
        Command::Run(c) => (c, |cfg| {
            print!("{}", pipeline::run(cfg)?.report.to_text());
            Ok(())
        }),
    };
    let cfg = common.resolve()?;
    set_threads(cfg.threads)?;
    stage(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ PipelineError::Config(_)) => {
            error!("{e}");
            ExitCode::from(1)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}
