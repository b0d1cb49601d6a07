use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use vehiclescan::candidates::read_anchors_jsonl;
use vehiclescan::classifier::{read_samples, score_anchors, train, Architecture, MultiBranchModel, TrainConfig};
use vehiclescan::pipeline::{Pipeline, PipelineConfig, Stage};
use vehiclescan::postproc::write_jsonl;
use vehiclescan::raster::{load_raster, BandOrder, ImageStats};
use vehiclescan::study::{generate_study, StudyParams};
use vehiclescan::synth::{generate_scene, write_scene, SceneSpec};
use vehiclescan::Error;

/// Vehicle detection and traffic-change analysis for four-band imagery.
#[derive(Parser)]
#[command(name = "vehiclescan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline, or a single stage of it.
    Run {
        #[command(flatten)]
        common: Common,
        /// One of train, mask, candidates, classify, nms, shadow, counts, eval.
        #[arg(long)]
        stage: Option<String>,
    },
    /// Train the classifier. With `--samples`, trains from that directory and
    /// writes the checkpoint to `--out`; otherwise runs the pipeline's train stage.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score anchors with a checkpoint (`--model`, `--anchors`, `--raster`,
    /// `--out`), or run the mask through shadow stages of a configured pipeline.
    Predict {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[arg(long)]
        raster: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Counts, change ratios, density grids and the regression.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Score detections against the configured labels.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic study with scenes, labels, samples and a config.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Study parameters (TOML); flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Render a single scene description (TOML) instead of a study.
        #[arg(long, conflicts_with = "config")]
        scene: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        cities: Option<usize>,
        #[arg(long)]
        train_scenes: Option<usize>,
        /// Training epochs written into the generated configuration.
        #[arg(long)]
        epochs: Option<usize>,
    },
}

impl Common {
    fn from_parts(config: Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>) -> vehiclescan::Result<Self> {
        let config = config.ok_or_else(|| Error::Config("--config is required here".into()))?;
        Ok(Common { config, seed, out })
    }
}

/// The model-related tables of a pipeline file; other keys are ignored.
#[derive(Default, Deserialize)]
#[serde(default)]
struct ModelSettings {
    seed: u64,
    band_order: BandOrder,
    training: TrainConfig,
    architecture: Architecture,
}

fn model_settings(config: Option<&PathBuf>) -> vehiclescan::Result<ModelSettings> {
    let Some(path) = config else {
        return Ok(ModelSettings::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let m: ModelSettings = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    m.training.validate()?;
    Ok(m)
}

fn load(common: &Common) -> vehiclescan::Result<Pipeline> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Pipeline::new(cfg)
}

fn study_params(config: Option<&PathBuf>) -> vehiclescan::Result<StudyParams> {
    let Some(path) = config else {
        return Ok(StudyParams::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn execute(cmd: Command) -> vehiclescan::Result<()> {
    use Stage::*;
    match cmd {
        Command::Run { common, stage } => {
            let p = load(&common)?;
            match stage {
                Some(s) => p.run_stages(&[s.parse()?]),
                None => p.run_all(),
            }
        }
        Command::Train {
            config,
            samples: Some(dir),
            seed,
            out,
        } => {
            let m = model_settings(config.as_ref())?;
            let (samples, _) = read_samples(&dir)?;
            let (model, log) = train(&m.architecture, &samples, &m.training, seed.unwrap_or(m.seed))?;
            let out = out.unwrap_or_else(|| PathBuf::from("model.bin"));
            model.save(&out)?;
            let lp = out.with_extension("log.json");
            std::fs::write(&lp, serde_json::to_string_pretty(&log)?).map_err(|e| Error::Stage {
                stage: "train".into(),
                reason: format!("{}: {e}", lp.display()),
            })
        }
        Command::Train { config, seed, out, .. } => load(&Common::from_parts(config, seed, out)?)?.run_stages(&[Train]),
        Command::Predict {
            config,
            model: Some(model),
            anchors,
            raster,
            out,
            ..
        } => {
            let (Some(anchors), Some(raster), Some(out)) = (anchors, raster, out) else {
                return Err(Error::Config("--model needs --anchors, --raster and --out".into()));
            };
            let m = model_settings(config.as_ref())?;
            let net = MultiBranchModel::load(&model, &m.architecture)?;
            let r = load_raster(&raster, &m.band_order)?;
            let text = std::fs::read_to_string(&anchors).map_err(|e| Error::Config(format!("{}: {e}", anchors.display())))?;
            let scored = score_anchors(&net, &r, &ImageStats::from_raster(&r)?, &read_anchors_jsonl(&text)?)?;
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &scored)?;
            std::fs::write(&out, buf).map_err(|e| Error::Stage {
                stage: "classify".into(),
                reason: format!("{}: {e}", out.display()),
            })
        }
        Command::Predict { config, seed, out, .. } => {
            load(&Common::from_parts(config, seed, out)?)?.run_stages(&[Mask, Candidates, Classify, Nms, Shadow])
        }
        Command::Report { common } => load(&common)?.run_stages(&[Counts]),
        Command::Eval { common } => load(&common)?.run_stages(&[Eval]),
        Command::Synth { out, scene: Some(path), .. } => {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let spec = SceneSpec::from_toml(&text)?;
            let (r, net, truth) = generate_scene(&spec)?;
            let name = path.file_stem().map_or("scene".into(), |s| s.to_string_lossy().into_owned());
            write_scene(&out, &name, &r, &net, &truth)
        }
        Command::Synth {
            out,
            config,
            seed,
            cities,
            train_scenes,
            epochs,
            ..
        } => {
            let mut p = study_params(config.as_ref())?;
            p.seed = seed.unwrap_or(p.seed);
            p.n_cities = cities.unwrap_or(p.n_cities);
            p.n_train_scenes = train_scenes.unwrap_or(p.n_train_scenes);
            p.epochs = epochs.or(p.epochs);
            let path = generate_study(&out, &p)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
