//! Cross-validated force-regression experiments and their report files.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::{
    ingest_dataset, load_samples, split_by_indenter, write_split, FoldSplit, IngestOptions, Partition, TactileSample,
};
use crate::error::{Error, Result};
use crate::forcereg::{build_model, fit_poly_baseline, train, ForceNet, ModelKind, PolyModel, TrainConfig};
use crate::metrics::MetricReport;
use crate::nn::{write_history_csv, EpochRecord};

/// A force estimator: one of the networks or the cubic baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Net(ModelKind),
    Poly,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Net(k) => write!(f, "{k}"),
            Method::Poly => f.write_str("poly"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "poly" {
            return Ok(Method::Poly);
        }
        s.parse().map(Method::Net).map_err(|_| {
            Error::Config(format!("unknown model kind {s:?} (expected rgbmod, d, dmod, rgbmod_d or poly)"))
        })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

fn default_batch() -> usize {
    TrainConfig::default().batch_size
}
fn default_lr() -> f64 {
    TrainConfig::default().lr
}
fn default_epochs() -> usize {
    TrainConfig::default().epochs
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            batch_size: default_batch(),
            lr: default_lr(),
            epochs: default_epochs(),
        }
    }
}

fn default_folds() -> Vec<usize> {
    vec![0, 1, 2]
}
fn default_resolution() -> [usize; 2] {
    [160, 120]
}
fn default_force_min() -> f64 {
    IngestOptions::default().force_min
}
fn default_force_max() -> f64 {
    IngestOptions::default().force_max
}

/// Experiment description, read from TOML. Relative paths are resolved
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub model: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: Vec<usize>,
    #[serde(default = "default_resolution")]
    pub resolution: [usize; 2],
    #[serde(default = "default_force_min")]
    pub force_min: f64,
    #[serde(default = "default_force_max")]
    pub force_max: f64,
    #[serde(default)]
    pub train: TrainSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset = base.join(&cfg.dataset);
        cfg.output = base.join(&cfg.output);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds.is_empty() || self.folds.iter().any(|&f| f > 2) {
            return Err(Error::Config(format!("folds {:?} must be a non-empty subset of 0, 1, 2", self.folds)));
        }
        if !(self.force_min > 0.0 && self.force_max > self.force_min) {
            return Err(Error::Config(format!(
                "force range [{}, {}] is invalid",
                self.force_min, self.force_max
            )));
        }
        self.train_config().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            epochs: self.train.epochs,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Index of the sample in the experiment's sample list.
    pub sample: usize,
    pub indenter_id: String,
    pub force_n: f64,
    pub predicted_n: f64,
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Net(ForceNet<f32>),
    Poly(PolyModel),
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub split: FoldSplit,
    pub report: MetricReport,
    pub predictions: Vec<Prediction>,
    pub history: Vec<EpochRecord>,
    pub model: FittedModel,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub method: Method,
    pub folds: Vec<FoldOutcome>,
    /// Metrics over the pooled test predictions of every fold.
    pub aggregate: MetricReport,
}

/// Points for the cubic baseline: (maximum depth byte, force).
pub fn poly_points(samples: &[&TactileSample]) -> Result<Vec<(f64, f64)>> {
    samples
        .iter()
        .map(|s| {
            s.max_deformation()
                .map(|m| (m as f64, s.force_n))
                .ok_or_else(|| Error::Modality("the polynomial baseline needs depth images".into()))
        })
        .collect()
}

fn partitions(samples: &[TactileSample], split: &FoldSplit) -> [Vec<usize>; 3] {
    let ids = samples.iter().map(|s| s.indenter_id.as_str());
    [Partition::Train, Partition::Val, Partition::Test].map(|p| split.select(ids.clone(), p))
}

fn refs<'a>(samples: &'a [TactileSample], idx: &[usize]) -> Vec<&'a TactileSample> {
    idx.iter().map(|&i| &samples[i]).collect()
}

/// Fits a model on a fold's training partition; networks select their best
/// epoch on the validation partition, the cubic is fitted to both. Networks
/// are seeded with `cfg.seed + fold`.
pub fn fit_fold(
    method: Method,
    samples: &[TactileSample],
    split: &FoldSplit,
    cfg: &TrainConfig,
) -> Result<(FittedModel, Vec<EpochRecord>)> {
    let [tr, va, _] = partitions(samples, split);
    if tr.is_empty() {
        return Err(Error::Dataset(format!("fold {} has no training samples", split.fold)));
    }
    let (train_set, val_set) = (refs(samples, &tr), refs(samples, &va));
    match method {
        Method::Net(kind) => {
            let (w, h) = (samples[0].width, samples[0].height);
            let seed = cfg.seed + split.fold as u64;
            let fold_cfg = TrainConfig { seed, ..cfg.clone() };
            let net = build_model::<f32>(kind, w, h, seed)?;
            let (net, history) = train(net, &train_set, &val_set, &fold_cfg)?;
            Ok((FittedModel::Net(net), history))
        }
        Method::Poly => {
            let fit_set: Vec<&TactileSample> = train_set.iter().chain(&val_set).copied().collect();
            Ok((FittedModel::Poly(fit_poly_baseline(&poly_points(&fit_set)?)?), Vec::new()))
        }
    }
}

/// Scores a fitted model on a fold's test partition.
pub fn evaluate_fold(
    model: FittedModel,
    history: Vec<EpochRecord>,
    samples: &[TactileSample],
    split: &FoldSplit,
) -> Result<FoldOutcome> {
    let [_, _, te] = partitions(samples, split);
    if te.is_empty() {
        return Err(Error::Dataset(format!("fold {} has no test samples", split.fold)));
    }
    let test_set = refs(samples, &te);
    let preds = match &model {
        FittedModel::Net(net) => net.predict_samples(&test_set, 64)?,
        FittedModel::Poly(poly) => poly_points(&test_set)?.iter().map(|&(m, _)| poly.eval(m)).collect(),
    };
    let gts: Vec<f64> = test_set.iter().map(|s| s.force_n).collect();
    let report = MetricReport::compute(&preds, &gts)?;
    let predictions = te
        .iter()
        .zip(&preds)
        .map(|(&i, &p)| Prediction {
            sample: i,
            indenter_id: samples[i].indenter_id.clone(),
            force_n: samples[i].force_n,
            predicted_n: p,
        })
        .collect();
    Ok(FoldOutcome {
        split: split.clone(),
        report,
        predictions,
        history,
        model,
    })
}

pub fn run_fold(method: Method, samples: &[TactileSample], split: &FoldSplit, cfg: &TrainConfig) -> Result<FoldOutcome> {
    let (model, history) = fit_fold(method, samples, split, cfg)?;
    evaluate_fold(model, history, samples, split)
}

/// Pools the folds' test predictions into the aggregate report.
pub fn assemble(method: Method, folds: Vec<FoldOutcome>) -> Result<ExperimentResult> {
    let (preds, gts): (Vec<f64>, Vec<f64>) = folds
        .iter()
        .flat_map(|f| f.predictions.iter().map(|p| (p.predicted_n, p.force_n)))
        .unzip();
    Ok(ExperimentResult {
        method,
        aggregate: MetricReport::compute(&preds, &gts)?,
        folds,
    })
}

pub fn run_folds(
    method: Method,
    samples: &[TactileSample],
    splits: &[FoldSplit],
    cfg: &TrainConfig,
) -> Result<ExperimentResult> {
    if samples.is_empty() || splits.is_empty() {
        return Err(Error::Dataset("an experiment needs samples and at least one fold".into()));
    }
    let folds = splits
        .iter()
        .map(|s| run_fold(method, samples, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    assemble(method, folds)
}

fn report_row(out: &mut String, label: &str, r: &MetricReport) {
    let _ = writeln!(
        out,
        "{label},{},{:?},{:?},{:?},{:?}",
        r.count, r.mae_n.mean, r.mae_n.std, r.re.mean, r.re.std
    );
}

/// `report.csv`: one row per fold plus an `all` row.
pub fn report_csv(res: &ExperimentResult) -> String {
    let mut out = String::from("fold,count,mae_mean_n,mae_std_n,re_mean,re_std\n");
    for f in &res.folds {
        report_row(&mut out, &f.split.fold.to_string(), &f.report);
    }
    report_row(&mut out, "all", &res.aggregate);
    out
}

/// `per_bin.csv`: relative error per 1 N interval, per fold and pooled.
/// Empty bins leave the statistics blank.
pub fn per_bin_csv(res: &ExperimentResult) -> String {
    let mut out = String::from("fold,lo_n,hi_n,count,re_mean,re_std\n");
    let labelled = res
        .folds
        .iter()
        .map(|f| (f.split.fold.to_string(), &f.report))
        .chain(std::iter::once(("all".to_string(), &res.aggregate)));
    for (label, r) in labelled {
        for b in &r.per_bin {
            let (m, s) = match b.re {
                Some(re) => (format!("{:?}", re.mean), format!("{:?}", re.std)),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(out, "{label},{:?},{:?},{},{m},{s}", b.lo, b.hi, b.count);
        }
    }
    out
}

pub fn predictions_csv(res: &ExperimentResult) -> String {
    let mut out = String::from("fold,sample,indenter_id,force_n,predicted_n\n");
    for f in &res.folds {
        for p in &f.predictions {
            let _ = writeln!(
                out,
                "{},{},{},{:?},{:?}",
                f.split.fold, p.sample, p.indenter_id, p.force_n, p.predicted_n
            );
        }
    }
    out
}

/// Human-readable summary, rounded to three decimals.
pub fn summary_text(res: &ExperimentResult) -> String {
    let mut out = format!("model: {}\n", res.method);
    let line = |out: &mut String, label: &str, r: &MetricReport| {
        let _ = writeln!(
            out,
            "{label}: RE {:.3} ± {:.3}, MAE {:.3} ± {:.3} N, n = {}",
            r.re.mean, r.re.std, r.mae_n.mean, r.mae_n.std, r.count
        );
    };
    for f in &res.folds {
        line(&mut out, &format!("fold {} (test: {})", f.split.fold, f.split.test.join(", ")), &f.report);
    }
    line(&mut out, "all folds", &res.aggregate);
    out
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the report files plus each fold's model and training history.
pub fn write_reports(res: &ExperimentResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("report.csv"), report_csv(res).as_bytes())?;
    write_file(&dir.join("per_bin.csv"), per_bin_csv(res).as_bytes())?;
    write_file(&dir.join("predictions.csv"), predictions_csv(res).as_bytes())?;
    write_file(&dir.join("summary.txt"), summary_text(res).as_bytes())?;
    for f in &res.folds {
        let k = f.split.fold;
        match &f.model {
            FittedModel::Net(net) => {
                net.save(dir.join(format!("model_fold{k}.bin")))?;
                write_history_csv(&f.history, dir.join(format!("history_fold{k}.csv")))?;
            }
            FittedModel::Poly(p) => {
                let text = serde_json::to_string_pretty(p).expect("poly model serializes");
                write_file(&dir.join(format!("poly_fold{k}.json")), text.as_bytes())?;
            }
        }
    }
    Ok(())
}

/// Loads every session of the dataset at the configured resolution.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Vec<TactileSample>> {
    let opts = IngestOptions {
        force_min: cfg.force_min,
        force_max: cfg.force_max,
        ..IngestOptions::default()
    };
    let report = ingest_dataset(&cfg.dataset, &opts)?;
    if report.samples.is_empty() {
        return Err(Error::Dataset(format!("no usable samples in {}", cfg.dataset.display())));
    }
    load_samples(&report.samples, cfg.resolution[0], cfg.resolution[1])
}

/// Ingests the dataset, splits it by indenter, runs the configured folds and
/// writes the reports (and `split.json`) to the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let samples = load_dataset(cfg)?;
    let ids: Vec<&str> = samples.iter().map(|s| s.indenter_id.as_str()).collect();
    let splits = split_by_indenter(&ids, cfg.seed)?;
    let chosen: Vec<FoldSplit> = cfg.folds.iter().map(|&k| splits[k].clone()).collect();
    let res = run_folds(cfg.model, &samples, &chosen, &cfg.train_config())?;
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    write_split(&splits, cfg.output.join("split.json"))?;
    write_reports(&res, &cfg.output)?;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "dataset = \"data\"\noutput = \"out\"\nmodel = \"rgbmod\"\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.model, Method::Net(ModelKind::Rgbmod));
        assert_eq!(cfg.folds, vec![0, 1, 2]);
        assert_eq!(cfg.resolution, [160, 120]);
        assert_eq!(cfg.train_config(), TrainConfig::default());
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = format!("{MINIMAL}\n[train]\nepochs = 3\nmomentum = 0.9\n");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("momentum") && err.contains("line 7"), "{err}");
    }

    #[test]
    fn unknown_model_is_rejected() {
        let err = ExperimentConfig::parse(&MINIMAL.replace("rgbmod", "resnet18")).unwrap_err();
        assert!(err.to_string().contains("resnet18"), "{err}");
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn folds_and_ranges_are_validated() {
        assert!(ExperimentConfig::parse(&format!("{MINIMAL}folds = [3]\n")).is_err());
        assert!(ExperimentConfig::parse(&format!("{MINIMAL}force_min = 5.0\nforce_max = 2.0\n")).is_err());
        assert_eq!(Method::from_str("poly").unwrap(), Method::Poly);
        assert_eq!(Method::from_str("rgbmod_d").unwrap().to_string(), "rgbmod_d");
    }

    fn sample(id: &str, force: f64, peak: u8) -> TactileSample {
        let mut depth = vec![0u8; 64];
        depth[10] = peak;
        TactileSample {
            width: 8,
            height: 8,
            frame: vec![peak; 192],
            depth: Some(depth),
            force_n: force,
            indenter_id: id.into(),
        }
    }

    #[test]
    fn poly_folds_report_every_test_sample() {
        let mut samples = Vec::new();
        for (k, id) in ["a", "b", "c", "d", "e", "f"].iter().enumerate() {
            for j in 0..10 {
                let m = 20 + 20 * j as u8 + k as u8;
                samples.push(sample(id, 1.0 + 0.05 * m as f64, m));
            }
        }
        let ids: Vec<&str> = samples.iter().map(|s| s.indenter_id.as_str()).collect();
        let splits = split_by_indenter(&ids, 1).unwrap();
        let res = run_folds(Method::Poly, &samples, &splits, &TrainConfig::default()).unwrap();
        assert_eq!(res.aggregate.count, 30);
        assert!(res.aggregate.re.mean < 0.01);
        let csv = report_csv(&res);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().last().unwrap().starts_with("all,30,"));
        assert_eq!(per_bin_csv(&res).lines().count(), 1 + 4 * 19);
        assert_eq!(predictions_csv(&res).lines().count(), 31);
        assert!(summary_text(&res).contains("all folds: RE 0.00"));
    }

    #[test]
    fn poly_needs_depth() {
        let mut samples: Vec<TactileSample> =
            (0..6).map(|i| sample(&format!("i{i}"), 2.0, 10 * i as u8 + 5)).collect();
        samples[0].depth = None;
        let ids: Vec<&str> = samples.iter().map(|s| s.indenter_id.as_str()).collect();
        let splits = split_by_indenter(&ids, 0).unwrap();
        let r = run_folds(Method::Poly, &samples, &splits, &TrainConfig::default());
        assert!(matches!(r, Err(Error::Modality(_))) || matches!(r, Err(Error::RankDeficient(_))));
    }
}
