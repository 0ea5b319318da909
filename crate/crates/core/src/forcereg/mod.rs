//! Normal-force regressors: the four convolutional variants and the cubic
//! max-deformation baseline.
//!
//! Every convolutional variant shares one residual backbone: a strided 3×3
//! stem with 2×2 max pooling, then four residual stages of 16/32/64/128
//! channels, the last three downsampling by two. `rgbmod` and `dmod` tap the
//! outputs of stages 2, 3 and 4 and concatenate their global averages
//! (32 + 64 + 128 = 224 features); `d` only pools the last stage. `rgbmod_d`
//! runs an RGB and a depth backbone side by side and fuses both tap sets in
//! one head.

mod poly;

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use poly::{fit_poly_baseline, poly_predict, PolyModel};

use crate::dataio::TactileSample;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{
    adam_step, mse_loss, read_weights, write_weights, AdamState, BranchSpec, EpochRecord, LayerSpec, Network,
    NetworkSpec, Tensor,
};
use crate::scalar::Real;

pub const STAGE_CHANNELS: [usize; 4] = [16, 32, 64, 128];
const HEAD_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Rgbmod,
    D,
    Dmod,
    RgbmodD,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Rgbmod, ModelKind::D, ModelKind::Dmod, ModelKind::RgbmodD];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rgbmod => "rgbmod",
            ModelKind::D => "d",
            ModelKind::Dmod => "dmod",
            ModelKind::RgbmodD => "rgbmod_d",
        }
    }

    pub fn uses_rgb(self) -> bool {
        matches!(self, ModelKind::Rgbmod | ModelKind::RgbmodD)
    }

    pub fn uses_depth(self) -> bool {
        !matches!(self, ModelKind::Rgbmod)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind {s:?} (expected rgbmod, d, dmod or rgbmod_d)")))
    }
}

/// The residual backbone over a `channels × height × width` input.
pub fn backbone(channels: usize, width: usize, height: usize, taps: bool) -> BranchSpec {
    let [c1, c2, c3, c4] = STAGE_CHANNELS;
    let mut layers = vec![
        LayerSpec::Conv2d {
            in_channels: channels,
            out_channels: c1,
            kernel: 3,
            stride: 2,
            padding: 1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2 },
        LayerSpec::Residual {
            in_channels: c1,
            out_channels: c1,
            stride: 1,
        },
    ];
    for (cin, cout) in [(c1, c2), (c2, c3), (c3, c4)] {
        layers.push(LayerSpec::Residual {
            in_channels: cin,
            out_channels: cout,
            stride: 2,
        });
        if taps {
            layers.push(LayerSpec::ConcatTap);
        }
    }
    if !taps {
        layers.push(LayerSpec::GlobalAvgPool);
    }
    BranchSpec {
        input_shape: vec![channels, height, width],
        layers,
    }
}

/// Architecture of a model kind at a given input resolution.
pub fn model_spec(kind: ModelKind, width: usize, height: usize) -> Result<NetworkSpec> {
    if width == 0 || height == 0 || width % 8 != 0 || height % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "model resolution {width}x{height} must be positive and divisible by 8"
        )));
    }
    let branches = match kind {
        ModelKind::Rgbmod => vec![backbone(3, width, height, true)],
        ModelKind::D => vec![backbone(1, width, height, false)],
        ModelKind::Dmod => vec![backbone(1, width, height, true)],
        ModelKind::RgbmodD => vec![backbone(3, width, height, true), backbone(1, width, height, true)],
    };
    let mut spec = NetworkSpec { branches, head: vec![] };
    let (layouts, _) = spec.layout()?;
    let features = layouts.iter().map(|l| l.feature_width).sum();
    spec.head = vec![
        LayerSpec::Dense {
            inputs: features,
            units: HEAD_HIDDEN,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: HEAD_HIDDEN,
            units: 1,
        },
    ];
    Ok(spec)
}

/// A force regressor with its kind and input resolution.
#[derive(Debug, Clone)]
pub struct ForceNet<T: Real> {
    pub kind: ModelKind,
    pub width: usize,
    pub height: usize,
    pub net: Network<T>,
}

pub fn build_model<T: Real>(kind: ModelKind, width: usize, height: usize, seed: u64) -> Result<ForceNet<T>> {
    Ok(ForceNet {
        kind,
        width,
        height,
        net: Network::new(model_spec(kind, width, height)?, seed)?,
    })
}

const MODEL_MAGIC: &[u8; 4] = b"GFFM";
const MODEL_VERSION: u32 = 1;

impl<T: Real> ForceNet<T> {
    /// Model file: magic, version, kind name, resolution, then the network
    /// weights.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let io = |e: std::io::Error| Error::Format(format!("model stream: {e}"));
        let name = self.kind.as_str().as_bytes();
        w.write_all(MODEL_MAGIC).map_err(io)?;
        w.write_all(&MODEL_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&[name.len() as u8]).map_err(io)?;
        w.write_all(name).map_err(io)?;
        w.write_all(&(self.width as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.height as u32).to_le_bytes()).map_err(io)?;
        write_weights(&self.net, w)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Format(format!("model stream: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a force model file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        if u32::from_le_bytes(b4) != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", u32::from_le_bytes(b4))));
        }
        let mut len = [0u8; 1];
        r.read_exact(&mut len).map_err(io)?;
        let mut name = vec![0u8; len[0] as usize];
        r.read_exact(&mut name).map_err(io)?;
        let kind: ModelKind = std::str::from_utf8(&name)
            .map_err(|_| Error::Format("model kind is not UTF-8".into()))?
            .parse()?;
        r.read_exact(&mut b4).map_err(io)?;
        let width = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(io)?;
        let height = u32::from_le_bytes(b4) as usize;
        let net = read_weights(r)?;
        if net.spec() != &model_spec(kind, width, height)? {
            return Err(Error::Format(format!(
                "weights do not match a {kind} model at {width}x{height}"
            )));
        }
        Ok(Self {
            kind,
            width,
            height,
            net,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut std::io::BufReader::new(f))
    }

    fn check_modality(&self, has_depth: bool) -> Result<()> {
        match (self.kind.uses_depth(), has_depth) {
            (true, false) => Err(Error::Modality(format!("{} needs a depth image", self.kind))),
            (false, true) => Err(Error::Modality(format!("{} takes no depth image", self.kind))),
            _ => Ok(()),
        }
    }

    /// Network inputs for a batch of samples.
    pub fn batch_inputs(&self, samples: &[&TactileSample]) -> Result<Vec<Tensor<T>>> {
        let (w, h) = (self.width, self.height);
        let n = w * h;
        let mut rgb: Vec<T> = Vec::new();
        let mut depth: Vec<T> = Vec::new();
        for s in samples {
            if s.width != w || s.height != h {
                return Err(Error::Dimension(format!(
                    "sample is {}x{}, model expects {w}x{h}",
                    s.width, s.height
                )));
            }
            if self.kind.uses_depth() && s.depth.is_none() {
                return Err(Error::Modality(format!("{} needs depth images", self.kind)));
            }
            if self.kind.uses_rgb() {
                let base = rgb.len();
                rgb.resize(base + 3 * n, T::zero());
                for (i, px) in s.frame.chunks_exact(3).enumerate() {
                    for c in 0..3 {
                        rgb[base + c * n + i] = rgb_value(px[c]);
                    }
                }
            }
            if self.kind.uses_depth() {
                let d = s.depth.as_ref().expect("modality checked");
                depth.extend(d.iter().map(|&b| depth_value::<T>(b)));
            }
        }
        let b = samples.len();
        let mut out = Vec::new();
        if self.kind.uses_rgb() {
            out.push(Tensor::new(vec![b, 3, h, w], rgb)?);
        }
        if self.kind.uses_depth() {
            out.push(Tensor::new(vec![b, 1, h, w], depth)?);
        }
        Ok(out)
    }

    /// Forces for many samples, evaluated in batches of `batch`.
    pub fn predict_samples(&self, samples: &[&TactileSample], batch: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(batch.max(1)) {
            let inputs = self.batch_inputs(chunk)?;
            let refs: Vec<&Tensor<T>> = inputs.iter().collect();
            out.extend(self.net.predict(&refs)?.data().iter().map(|v| v.as_f64()));
        }
        Ok(out)
    }
}

#[inline]
fn rgb_value<T: Real>(b: u8) -> T {
    T::lit(b as f64 / 255.0 - 0.5)
}

#[inline]
fn depth_value<T: Real>(b: u8) -> T {
    T::lit(b as f64 / 255.0)
}

/// Single-frame force estimate. The depth image must be given exactly when
/// the model consumes depth.
pub fn predict_force<T: Real>(model: &ForceNet<T>, frame: &Image<T>, depth: Option<&Image<T>>) -> Result<f64> {
    model.check_modality(depth.is_some())?;
    let (w, h) = (model.width, model.height);
    if frame.width() != w || frame.height() != h || frame.channels() != 3 {
        return Err(Error::Dimension(format!(
            "frame is {}x{}x{}, model expects {w}x{h}x3",
            frame.width(),
            frame.height(),
            frame.channels()
        )));
    }
    let mut inputs = Vec::new();
    if model.kind.uses_rgb() {
        let n = w * h;
        let mut rgb = vec![T::zero(); 3 * n];
        for (i, px) in frame.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                rgb[c * n + i] = px[c] - T::lit(0.5);
            }
        }
        inputs.push(Tensor::new(vec![1, 3, h, w], rgb)?);
    }
    if let Some(d) = depth {
        if d.width() != w || d.height() != h || d.channels() != 1 {
            return Err(Error::Dimension(format!(
                "depth image is {}x{}x{}, model expects {w}x{h}x1",
                d.width(),
                d.height(),
                d.channels()
            )));
        }
        inputs.push(Tensor::new(vec![1, 1, h, w], d.data().to_vec())?);
    }
    let refs: Vec<&Tensor<T>> = inputs.iter().collect();
    let y = model.net.predict(&refs)?;
    let f = y.data()[0].as_f64();
    if !f.is_finite() {
        return Err(Error::Training("model produced a non-finite force".into()));
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 4e-5,
            epochs: 25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || self.epochs == 0 {
            return Err(Error::InvalidArgument(format!(
                "batch size {}, learning rate {} and epochs {} must all be positive",
                self.batch_size, self.lr, self.epochs
            )));
        }
        Ok(())
    }
}

fn mse<T: Real>(model: &ForceNet<T>, samples: &[&TactileSample], batch: usize) -> Result<f64> {
    let preds = model.predict_samples(samples, batch)?;
    Ok(preds
        .iter()
        .zip(samples)
        .map(|(p, s)| (p - s.force_n).powi(2))
        .sum::<f64>()
        / samples.len() as f64)
}

/// Minimizes the force MSE with Adam. The weights of the epoch with the lowest validation MSE
/// are returned along with the full history.
pub fn train<T: Real>(
    mut model: ForceNet<T>,
    train: &[&TactileSample],
    val: &[&TactileSample],
    cfg: &TrainConfig,
) -> Result<(ForceNet<T>, Vec<EpochRecord>)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Training("training and validation sets must be non-empty".into()));
    }
    if let Some(s) = train.iter().chain(val).find(|s| !(s.force_n >= 0.5 && s.force_n <= 20.0)) {
        return Err(Error::Training(format!(
            "force {} N outside the supported [0.5, 20] N range",
            s.force_n
        )));
    }
    // Shift the output bias so the initial predictions average to the mean
    // training force.
    let mean = train.iter().map(|s| s.force_n).sum::<f64>() / train.len() as f64;
    let probe = &train[..train.len().min(256)];
    let initial = model.predict_samples(probe, cfg.batch_size)?;
    let offset = mean - initial.iter().sum::<f64>() / initial.len() as f64;
    if let Some(bias) = model.net.params_mut().last_mut() {
        bias[0] += T::lit(offset);
    }
    let mut adam = AdamState::new(&model.net, T::lit(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Network<T>)> = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&TactileSample> = idx.iter().map(|&i| train[i]).collect();
            let inputs = model.batch_inputs(&batch)?;
            let refs: Vec<&Tensor<T>> = inputs.iter().collect();
            let target = Tensor::new(
                vec![batch.len(), 1],
                batch.iter().map(|s| T::lit(s.force_n)).collect(),
            )?;
            let (pred, cache) = model.net.forward(&refs)?;
            let (loss, grad) = mse_loss(&pred, &target)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss in epoch {epoch}")));
            }
            total += loss.as_f64() * batch.len() as f64;
            let grads = model.net.backward(&cache, &grad)?;
            adam_step(&mut model.net, &grads, &mut adam)?;
        }
        let val_loss = mse(&model, val, cfg.batch_size)?;
        history.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
        });
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.net.clone()));
        }
    }
    if let Some((_, net)) = best {
        model.net = net;
    }
    Ok((model, history))
}
