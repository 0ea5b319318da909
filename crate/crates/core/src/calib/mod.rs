//! Color-to-normal calibration from presses of a sphere of known radius.
//!
//! Each press yields analytic cap normals over the contact disc; together
//! with the pixel colors and normalized positions they form the training
//! set of the color-to-normal MLP. The global depth scale is fixed here as
//! well, from reconstructions of the same presses.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depth::{integrate_normals, infer_normals, NormalMap, ScaleRecord};
use crate::error::{Error, Result};
use crate::image::{load_image, ContactMask, Image};
use crate::nn::{adam_step, mse_loss, AdamState, BranchSpec, EpochRecord, LayerSpec, Network, NetworkSpec, Tensor};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct SpherePress<T> {
    pub center_px: [f64; 2],
    pub radius_px: f64,
    pub press_depth_px: f64,
    pub frame: Image<T>,
}

impl<T: Real> SpherePress<T> {
    /// Radius of the contact circle, `sqrt(R² − (R − d)²)`.
    pub fn contact_radius(&self) -> f64 {
        let (r, d) = (self.radius_px, self.press_depth_px);
        (r * r - (r - d) * (r - d)).max(0.0).sqrt()
    }

    fn validate(&self) -> Result<()> {
        if !(self.press_depth_px > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "press depth {} px leaves no contact circle",
                self.press_depth_px
            )));
        }
        if self.press_depth_px > self.radius_px {
            return Err(Error::InvalidArgument(format!(
                "press depth {} px exceeds sphere radius {} px",
                self.press_depth_px, self.radius_px
            )));
        }
        let c = self.contact_radius();
        let (w, h) = (self.frame.width() as f64, self.frame.height() as f64);
        let [x, y] = self.center_px;
        if x - c < 0.0 || y - c < 0.0 || x + c > w - 1.0 || y + c > h - 1.0 {
            return Err(Error::InvalidArgument(format!(
                "contact circle of radius {c:.2} px at ({x:.1}, {y:.1}) leaves the {w}x{h} frame"
            )));
        }
        Ok(())
    }
}

/// Outward unit normals of the sphere cap over the contact circle and
/// `(0, 0, 1)` elsewhere.
///
/// A pixel at offset `(dx, dy)` from the centre touches the sphere at
/// `(dx, dy, sqrt(R² − dx² − dy²))` relative to the sphere centre, with z
/// pointing into the gel. In spherical coordinates this is
/// `(cos φ cos θ, cos φ sin θ, sin φ)` with azimuth θ and elevation φ.
pub fn sphere_normals<T: Real>(press: &SpherePress<T>) -> Result<(NormalMap<f64>, ContactMask)> {
    press.validate()?;
    let (w, h) = (press.frame.width(), press.frame.height());
    let r = press.radius_px;
    let c = press.contact_radius();
    let mut normals = NormalMap::flat(w, h);
    let mut mask = ContactMask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - press.center_px[0];
            let dy = y as f64 - press.center_px[1];
            let rho = dx.hypot(dy);
            if rho < c {
                normals.set(x, y, [dx / r, dy / r, (r * r - rho * rho).sqrt() / r]);
                mask.set(x, y, true);
            }
        }
    }
    Ok((normals, mask))
}

/// Pixel features and normal targets pooled over presses.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    /// `(r, g, b, x_norm, y_norm)` per record.
    pub inputs: Vec<[f64; 5]>,
    /// Unit normal per record.
    pub targets: Vec<[f64; 3]>,
    pub press_count: usize,
}

impl CalibrationSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// One record per in-mask pixel, in press order and then row-major order.
pub fn build_calibration_set<T: Real>(presses: &[SpherePress<T>]) -> Result<CalibrationSet> {
    let first = presses
        .first()
        .ok_or_else(|| Error::InvalidArgument("calibration needs at least one press".into()))?;
    let (w, h) = (first.frame.width(), first.frame.height());
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (i, p) in presses.iter().enumerate() {
        if !p.frame.same_dims(&first.frame) || p.frame.channels() != 3 {
            return Err(Error::Dimension(format!(
                "press {i} frame is {}x{}x{}, expected {w}x{h}x3",
                p.frame.width(),
                p.frame.height(),
                p.frame.channels()
            )));
        }
        let (normals, mask) = sphere_normals(p)?;
        let sx = 1.0 / (w.max(2) - 1) as f64;
        let sy = 1.0 / (h.max(2) - 1) as f64;
        for y in 0..h {
            for x in 0..w {
                if mask.get(x, y) {
                    let px = p.frame.pixel(x, y);
                    inputs.push([
                        px[0].as_f64(),
                        px[1].as_f64(),
                        px[2].as_f64(),
                        x as f64 * sx,
                        y as f64 * sy,
                    ]);
                    targets.push(normals.get(x, y));
                }
            }
        }
    }
    Ok(CalibrationSet {
        inputs,
        targets,
        press_count: presses.len(),
    })
}

impl CalibrationSet {
    /// Adds every pixel of a no-contact frame with target `(0, 0, 1)`.
    pub fn append_flat<T: Real>(&mut self, reference: &Image<T>) -> Result<()> {
        if reference.channels() != 3 {
            return Err(Error::Shape("reference frame must be RGB".into()));
        }
        let (w, h) = (reference.width(), reference.height());
        let sx = 1.0 / (w.max(2) - 1) as f64;
        let sy = 1.0 / (h.max(2) - 1) as f64;
        for y in 0..h {
            for x in 0..w {
                let px = reference.pixel(x, y);
                self.inputs.push([px[0].as_f64(), px[1].as_f64(), px[2].as_f64(), x as f64 * sx, y as f64 * sy]);
                self.targets.push([0.0, 0.0, 1.0]);
            }
        }
        Ok(())
    }
}

/// One line of a press record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressRecord {
    pub frame: PathBuf,
    pub center_px: [f64; 2],
    pub radius_px: f64,
    pub press_depth_px: f64,
}

/// Writes press records as JSON lines.
pub fn write_press_records(records: &[PressRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("press record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a press record file and loads every frame, resolving frame paths
/// relative to the record file.
pub fn load_presses<T: Real>(path: impl AsRef<Path>) -> Result<Vec<SpherePress<T>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PressRecord = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(SpherePress {
            center_px: rec.center_px,
            radius_px: rec.radius_px,
            press_depth_px: rec.press_depth_px,
            frame: load_image(base.join(&rec.frame))?,
        });
    }
    Ok(out)
}

/// Architecture and optimizer settings of the color-to-normal MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            hidden_layers: 2,
            epochs: 60,
            batch_size: 256,
            lr: 2e-3,
            seed: 7,
        }
    }
}

impl MlpConfig {
    /// `5 → hidden (tanh) → … → 3`.
    pub fn network_spec(&self) -> NetworkSpec {
        let mut head = Vec::new();
        let mut width = 5;
        for _ in 0..self.hidden_layers {
            head.push(LayerSpec::Dense {
                inputs: width,
                units: self.hidden,
            });
            head.push(LayerSpec::Tanh);
            width = self.hidden;
        }
        head.push(LayerSpec::Dense { inputs: width, units: 3 });
        NetworkSpec {
            branches: vec![BranchSpec {
                input_shape: vec![5],
                layers: vec![],
            }],
            head,
        }
    }
}

/// Fits the MLP to the calibration set with Adam on the mean squared
/// normal error. The learning rate drops tenfold for the last fifth of the
/// epochs. Returns the final network and the per-epoch training loss.
pub fn train_normal_mlp<T: Real>(set: &CalibrationSet, cfg: &MlpConfig) -> Result<(Network<T>, Vec<EpochRecord>)> {
    if set.is_empty() {
        return Err(Error::Training("calibration set is empty".into()));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("batch size and learning rate must be positive".into()));
    }
    let mut net = Network::new(cfg.network_spec(), cfg.seed)?;
    let mut adam = AdamState::new(&net, T::lit(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let decay_at = cfg.epochs - cfg.epochs / 5;
    for epoch in 0..cfg.epochs {
        if epoch == decay_at {
            adam.lr = T::lit(cfg.lr * 0.1);
        }
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut x = Vec::with_capacity(batch.len() * 5);
            let mut t = Vec::with_capacity(batch.len() * 3);
            for &i in batch {
                x.extend(set.inputs[i].iter().map(|&v| T::lit(v)));
                t.extend(set.targets[i].iter().map(|&v| T::lit(v)));
            }
            let x = Tensor::new(vec![batch.len(), 5], x)?;
            let t = Tensor::new(vec![batch.len(), 3], t)?;
            let (pred, cache) = net.forward(&[&x])?;
            let (loss, grad) = mse_loss(&pred, &t)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            total += loss.as_f64() * batch.len() as f64;
            let grads = net.backward(&cache, &grad)?;
            adam_step(&mut net, &grads, &mut adam)?;
        }
        let train_loss = total / set.len() as f64;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: train_loss,
        });
    }
    Ok((net, history))
}

/// Linear-interpolated percentile of unsorted values, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// The global depth scale: 99th percentile of reconstructed in-mask heights
/// over the calibration presses.
pub fn calibrate_scale<T: Real>(mlp: &Network<T>, presses: &[SpherePress<T>]) -> Result<f64> {
    let mut heights = Vec::new();
    for p in presses {
        let (_, mask) = sphere_normals(p)?;
        let depth = integrate_normals(&infer_normals(mlp, &p.frame)?)?;
        heights.extend(
            depth
                .data()
                .iter()
                .zip(mask.data())
                .filter(|(_, &m)| m)
                .map(|(v, _)| v.as_f64()),
        );
    }
    let max_depth = percentile(&heights, 99.0)
        .ok_or_else(|| Error::InvalidArgument("calibration presses have no contact pixels".into()))?;
    if !(max_depth > 0.0) {
        return Err(Error::Training(format!(
            "calibrated depth scale {max_depth} is not positive"
        )));
    }
    Ok(max_depth)
}

/// Result of a full calibration run.
#[derive(Debug, Clone)]
pub struct Calibration<T: Real> {
    pub mlp: Network<T>,
    pub max_depth: f64,
    pub history: Vec<EpochRecord>,
}

impl<T: Real> Calibration<T> {
    pub fn scale_record(&self, mlp_weights: impl Into<PathBuf>) -> ScaleRecord {
        ScaleRecord {
            max_depth: self.max_depth,
            calibrated_at: chrono::Utc::now().to_rfc3339(),
            mlp_weights: mlp_weights.into(),
        }
    }
}

/// Builds the calibration set, trains the MLP and fixes the depth scale.
///
/// When a no-contact reference frame is given, its pixels join the training
/// set as flat-surface examples, which anchors the network away from the
/// contact discs.
pub fn calibrate<T: Real>(
    presses: &[SpherePress<T>],
    reference: Option<&Image<T>>,
    cfg: &MlpConfig,
) -> Result<Calibration<T>> {
    let mut set = build_calibration_set(presses)?;
    if let Some(r) = reference {
        if !r.same_dims(&presses[0].frame) {
            return Err(Error::Dimension("reference frame differs from the press frames".into()));
        }
        set.append_flat(r)?;
    }
    let (mlp, history) = train_normal_mlp(&set, cfg)?;
    let max_depth = calibrate_scale(&mlp, presses)?;
    Ok(Calibration {
        mlp,
        max_depth,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn press(center: [f64; 2], radius: f64, depth: f64) -> SpherePress<f32> {
        SpherePress {
            center_px: center,
            radius_px: radius,
            press_depth_px: depth,
            frame: Image::filled(120, 100, 3, 0.5),
        }
    }

    /// Ray–sphere oracle: a vertical ray through the pixel meets the sphere
    /// centred at `(cx, cy, -(R - d))` (z into the gel) at its deepest point.
    fn ray_sphere_normal(px: [f64; 2], c: [f64; 2], r: f64, d: f64) -> Option<[f64; 3]> {
        let center = [c[0], c[1], -(r - d)];
        let (ox, oy) = (px[0] - center[0], px[1] - center[1]);
        let disc = r * r - ox * ox - oy * oy;
        if disc < 0.0 {
            return None;
        }
        let z = center[2] + disc.sqrt();
        if z <= 0.0 {
            return None;
        }
        let p = [px[0], px[1], z];
        let v = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        Some([v[0] / n, v[1] / n, v[2] / n])
    }

    #[test]
    fn apex_normal_points_straight() {
        let (n, m) = sphere_normals(&press([60.0, 50.0], 30.0, 8.0)).unwrap();
        assert_eq!(n.get(60, 50), [0.0, 0.0, 1.0]);
        assert!(m.get(60, 50));
    }

    #[test]
    fn matches_ray_sphere_oracle() {
        let (n, m) = sphere_normals(&press([60.0, 50.0], 50.0, 10.0)).unwrap();
        // A pixel 20 px from the centre.
        let got = n.get(72, 66);
        let want = ray_sphere_normal([72.0, 66.0], [60.0, 50.0], 50.0, 10.0).unwrap();
        assert!(m.get(72, 66));
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() < 1e-12);
        }
        for y in 0..100 {
            for x in 0..120 {
                let want = ray_sphere_normal([x as f64, y as f64], [60.0, 50.0], 50.0, 10.0);
                assert_eq!(m.get(x, y), want.is_some(), "({x}, {y})");
            }
        }
    }

    #[test]
    fn vanishing_press_has_empty_mask_and_zero_is_rejected() {
        let (_, m) = sphere_normals(&press([60.0, 50.0], 30.0, 1e-6)).unwrap();
        // The contact radius is below one pixel spacing; only the centre pixel can lie inside.
        assert!(m.count() <= 1);
        let (_, m) = sphere_normals(&press([60.5, 50.5], 30.0, 1e-6)).unwrap();
        assert_eq!(m.count(), 0);
        assert!(sphere_normals(&press([60.0, 50.0], 30.0, 0.0)).is_err());
        assert!(sphere_normals(&press([5.0, 50.0], 30.0, 10.0)).is_err());
    }

    #[test]
    fn one_record_per_masked_pixel_in_order() {
        let presses = vec![press([60.0, 50.0], 30.0, 5.0), press([40.0, 40.0], 20.0, 3.0)];
        let set = build_calibration_set(&presses).unwrap();
        let counts: usize = presses.iter().map(|p| sphere_normals(p).unwrap().1.count()).sum();
        assert_eq!(set.len(), counts);
        assert_eq!(set.press_count, 2);
        for (x, t) in set.inputs.iter().zip(&set.targets) {
            assert!(x[3] >= 0.0 && x[3] <= 1.0 && x[4] >= 0.0 && x[4] <= 1.0);
            assert!(((t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt() - 1.0).abs() < 1e-6);
        }
        // The first press's pixels come first, row by row.
        let first = sphere_normals(&presses[0]).unwrap().1.count();
        assert!(set.inputs[..first].windows(2).all(|w| (w[0][4], w[0][3]) < (w[1][4], w[1][3])));
    }

    #[test]
    fn hundred_pixel_press_gives_hundred_records() {
        // With this centre exactly 100 pixel centres lie within distance² 31.8.
        let p = press([60.25, 50.1], 20.0, 20.0 - (400.0f64 - 31.8).sqrt());
        assert_eq!(sphere_normals(&p).unwrap().1.count(), 100);
        assert_eq!(build_calibration_set(&[p]).unwrap().len(), 100);
    }

    #[test]
    fn mismatched_frames_are_rejected() {
        let mut b = press([40.0, 40.0], 20.0, 3.0);
        b.frame = Image::filled(100, 100, 3, 0.5);
        assert!(build_calibration_set(&[press([60.0, 50.0], 30.0, 5.0), b]).is_err());
        assert!(build_calibration_set::<f32>(&[]).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 50.0), Some(2.0));
        assert_eq!(percentile(&[0.0, 10.0], 99.0), Some(9.9));
        assert_eq!(percentile(&[], 99.0), None);
    }
}
