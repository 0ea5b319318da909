use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gelforce::calib::{calibrate, load_presses, MlpConfig};
use gelforce::dataio::{read_split, split_by_indenter, write_split, FoldSplit, TactileSample};
use gelforce::depth::{DepthPipeline, ScaleRecord, DEFAULT_MASK_THRESHOLD};
use gelforce::experiment::{
    assemble, evaluate_fold, fit_fold, load_dataset, run_experiment, write_reports, summary_text, ExperimentConfig,
    FittedModel, Method, TrainSection,
};
use gelforce::forcereg::{predict_force, ForceNet, ModelKind};
use gelforce::image::{load_image, resize_bilinear, save_image, Image};
use gelforce::nn::{load_weights, save_weights, write_history_csv};
use gelforce::synth::{generate_dataset, synthetic_pipeline, write_calibration_presses, write_dataset, CalibrationSpec, SynthSpec};

#[derive(Parser)]
#[command(name = "gelforce", version, about = "Markerless visuotactile depth reconstruction and force estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the color-to-normal network on sphere presses.
    Calibrate(CalibrateArgs),
    /// Turn tactile frames into depth images.
    Reconstruct(ReconstructArgs),
    /// Generate a synthetic dataset in the session layout.
    Synth(SynthArgs),
    /// Train a force network on the training indenters of each fold.
    Train(TrainArgs),
    /// Evaluate trained fold models on their test indenters.
    Eval(EvalArgs),
    /// Fit and evaluate the cubic max-deformation baseline.
    Baseline(BaselineArgs),
    /// Predict forces for individual frames.
    Predict(PredictArgs),
    /// Run a full cross-validated experiment from a TOML config.
    Experiment(ExperimentArgs),
}

fn parse_resolution(s: &str) -> Result<[usize; 2], String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT, e.g. 160x120")?;
    let w = w.trim().parse().map_err(|_| format!("bad width {w:?}"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height {h:?}"))?;
    Ok([w, h])
}

/// Dataset selection shared by the training and evaluation commands.
#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset root containing `sessions/`.
    #[arg(long)]
    dataset: PathBuf,
    /// Split and training seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Folds to run, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2])]
    folds: Vec<usize>,
    /// Model input resolution.
    #[arg(long, value_parser = parse_resolution, default_value = "160x120")]
    resolution: [usize; 2],
    #[arg(long, default_value_t = 1.0)]
    force_min: f64,
    #[arg(long, default_value_t = 15.0)]
    force_max: f64,
}

impl DataArgs {
    fn config(&self, model: Method, output: &Path, train: TrainSection) -> Result<ExperimentConfig> {
        let cfg = ExperimentConfig {
            dataset: self.dataset.clone(),
            output: output.to_path_buf(),
            model,
            seed: self.seed,
            folds: self.folds.clone(),
            resolution: self.resolution,
            force_min: self.force_min,
            force_max: self.force_max,
            train,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct CalibrateArgs {
    /// Press records (JSON lines with frame, center_px, radius_px, press_depth_px).
    #[arg(long)]
    presses: PathBuf,
    /// No-contact frame; its pixels are added as flat-surface examples.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Output directory for `normal_mlp.bin`, `scale.json` and the history.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = MlpConfig::default().epochs)]
    epochs: usize,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Scale record written by `calibrate`.
    #[arg(long)]
    scale: PathBuf,
    /// No-contact reference frame for the contact mask.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MASK_THRESHOLD)]
    mask_threshold: f64,
    /// Output directory; depth images keep the frame file names.
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    frames: Vec<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Presses per indenter and press point (146 gives 13,140 samples).
    #[arg(long, default_value_t = 146)]
    presses_per_location: usize,
    /// Sensor resolution; the pixel pitch scales with the width.
    #[arg(long, value_parser = parse_resolution, default_value = "160x120")]
    resolution: [usize; 2],
    #[arg(long, default_value_t = 1.0)]
    force_min: f64,
    #[arg(long, default_value_t = 15.0)]
    force_max: f64,
    #[arg(long, default_value_t = DEFAULT_MASK_THRESHOLD)]
    mask_threshold: f64,
    /// Skip calibration and depth images.
    #[arg(long)]
    no_depth: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// rgbmod, d, dmod or rgbmod_d.
    #[arg(long)]
    model: ModelKind,
    /// Output directory for `model_fold<k>.bin`, histories and `split.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = TrainSection::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainSection::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainSection::default().batch_size)]
    batch_size: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Directory written by `train`.
    #[arg(long)]
    models: PathBuf,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Depth images, one per frame, for models that consume depth.
    #[arg(long, num_args = 1..)]
    depth: Vec<PathBuf>,
    #[arg(required = true)]
    frames: Vec<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    folds: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<[usize; 2]>,
    #[arg(long)]
    force_min: Option<f64>,
    #[arg(long)]
    force_max: Option<f64>,
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let presses = load_presses::<f32>(&a.presses)?;
    let reference = a.reference.as_ref().map(load_image::<f32>).transpose()?;
    let cfg = MlpConfig {
        seed: a.seed,
        epochs: a.epochs,
        ..MlpConfig::default()
    };
    let cal = calibrate(&presses, reference.as_ref(), &cfg)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_weights(&cal.mlp, a.out.join("normal_mlp.bin"))?;
    cal.scale_record("normal_mlp.bin").save(a.out.join("scale.json"))?;
    write_history_csv(&cal.history, a.out.join("calibration_history.csv"))?;
    println!(
        "calibrated on {} presses: max depth {:.3} px, final loss {:.5}",
        presses.len(),
        cal.max_depth,
        cal.history.last().map_or(f64::NAN, |h| h.train_loss)
    );
    Ok(())
}

fn load_pipeline(scale: &Path, reference: &Path, mask_threshold: f64) -> Result<DepthPipeline<f32>> {
    let record = ScaleRecord::load(scale)?;
    let weights = scale.parent().unwrap_or(Path::new("")).join(&record.mlp_weights);
    Ok(DepthPipeline {
        mlp: load_weights(&weights)?,
        scale: record,
        reference: load_image(reference)?,
        mask_threshold: mask_threshold as f32,
    })
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<()> {
    let pipeline = load_pipeline(&a.scale, &a.reference, a.mask_threshold)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for f in &a.frames {
        let frame: Image<f32> = load_image(f)?;
        let rec = pipeline.reconstruct(&frame)?;
        let name = f.file_name().context("frame path has no file name")?;
        save_image(&rec.image, a.out.join(name))?;
    }
    println!("reconstructed {} frames into {}", a.frames.len(), a.out.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::standard(a.presses_per_location, a.seed);
    spec.width = a.resolution[0];
    spec.height = a.resolution[1];
    spec.px_per_mm *= a.resolution[0] as f64 / 160.0;
    spec.force_min = a.force_min;
    spec.force_max = a.force_max;
    let ds = generate_dataset(&spec)?;
    let pipeline = if a.no_depth {
        None
    } else {
        let cal_spec = CalibrationSpec::default();
        let cal_dir = a.out.join("calibration");
        write_calibration_presses(&spec, &cal_spec, &cal_dir)?;
        let (mut pipeline, cal) = synthetic_pipeline(&spec, &cal_spec, &MlpConfig::default())?;
        pipeline.mask_threshold = a.mask_threshold as f32;
        save_weights(&cal.mlp, cal_dir.join("normal_mlp.bin"))?;
        pipeline.scale.save(cal_dir.join("scale.json"))?;
        Some(pipeline)
    };
    write_dataset(&ds, pipeline.as_ref(), &a.out)?;
    println!(
        "wrote {} samples of {} indenters to {}",
        ds.records.len(),
        spec.indenters.len(),
        a.out.display()
    );
    Ok(())
}

fn splits_for(data: &DataArgs, samples: &[TactileSample]) -> Result<Vec<FoldSplit>> {
    let ids: Vec<&str> = samples.iter().map(|s| s.indenter_id.as_str()).collect();
    let all = split_by_indenter(&ids, data.seed)?;
    Ok(data.folds.iter().map(|&k| all[k].clone()).collect())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let train = TrainSection {
        batch_size: a.batch_size,
        lr: a.lr,
        epochs: a.epochs,
    };
    let cfg = a.data.config(Method::Net(a.model), &a.out, train)?;
    let samples = load_dataset(&cfg)?;
    let splits = splits_for(&a.data, &samples)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_split(&splits, a.out.join("split.json"))?;
    for split in &splits {
        let (model, history) = fit_fold(cfg.model, &samples, split, &cfg.train_config())?;
        let FittedModel::Net(net) = model else { unreachable!("network method") };
        let k = split.fold;
        net.save(a.out.join(format!("model_fold{k}.bin")))?;
        write_history_csv(&history, a.out.join(format!("history_fold{k}.csv")))?;
        let best = history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        println!("fold {k}: best validation MSE {best:.4}");
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let splits = read_split(a.models.join("split.json"))?;
    let mut models = Vec::new();
    for split in splits.into_iter().filter(|s| a.data.folds.contains(&s.fold)) {
        let net = ForceNet::<f32>::load(a.models.join(format!("model_fold{}.bin", split.fold)))?;
        models.push((split, net));
    }
    let Some((_, first)) = models.first() else {
        bail!("none of folds {:?} has a model in {}", a.data.folds, a.models.display())
    };
    let (kind, width, height) = (first.kind, first.width, first.height);
    if models.iter().any(|(_, m)| (m.kind, m.width, m.height) != (kind, width, height)) {
        bail!("fold models in {} differ in kind or resolution", a.models.display());
    }
    let mut data = a.data.clone();
    data.resolution = [width, height];
    let cfg = data.config(Method::Net(kind), &a.out, TrainSection::default())?;
    let samples = load_dataset(&cfg)?;
    let folds = models
        .into_iter()
        .map(|(split, net)| evaluate_fold(FittedModel::Net(net), Vec::new(), &samples, &split))
        .collect::<gelforce::Result<Vec<_>>>()?;
    let res = assemble(Method::Net(kind), folds)?;
    write_reports(&res, &a.out)?;
    print!("{}", summary_text(&res));
    Ok(())
}

fn cmd_baseline(a: BaselineArgs) -> Result<()> {
    let cfg = a.data.config(Method::Poly, &a.out, TrainSection::default())?;
    let res = run_experiment(&cfg)?;
    print!("{}", summary_text(&res));
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let model = ForceNet::<f32>::load(&a.model)?;
    if model.kind.uses_depth() && a.depth.len() != a.frames.len() {
        bail!("{} needs one --depth image per frame", model.kind);
    }
    if !model.kind.uses_depth() && !a.depth.is_empty() {
        bail!("{} takes no depth images", model.kind);
    }
    let fit = |img: Image<f32>| -> Result<Image<f32>> {
        if img.width() == model.width && img.height() == model.height {
            Ok(img)
        } else {
            Ok(resize_bilinear(&img, model.width, model.height)?)
        }
    };
    println!("path,predicted_n");
    for (i, f) in a.frames.iter().enumerate() {
        let frame = fit(load_image(f)?)?;
        let depth = a.depth.get(i).map(|d| load_image(d).map_err(anyhow::Error::from).and_then(fit)).transpose()?;
        let force = predict_force(&model, &frame, depth.as_ref())?;
        println!("{},{force:?}", f.display());
    }
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(f) = a.folds {
        cfg.folds = f;
    }
    if let Some(r) = a.resolution {
        cfg.resolution = r;
    }
    if let Some(v) = a.force_min {
        cfg.force_min = v;
    }
    if let Some(v) = a.force_max {
        cfg.force_max = v;
    }
    let res = run_experiment(&cfg)?;
    print!("{}", summary_text(&res));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Experiment(a) => cmd_experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
