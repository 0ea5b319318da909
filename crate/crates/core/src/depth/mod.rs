//! Color frames to filtered depth images.
//!
//! The calibrated color-to-normal network gives per-pixel normals, which are
//! turned into depth gradients, integrated by a sine-transform Poisson
//! solver, scaled to an 8-bit range with a calibration-time global scale and
//! masked to the contact region.

mod poisson;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use poisson::{dense_poisson_solve, dst_poisson_solve, interior_divergence, DENSE_MAX_SIDE};

use crate::error::{Error, Result};
use crate::image::{ContactMask, Image};
use crate::nn::{Network, Tensor};
use crate::scalar::Real;

/// Lower bound on `n_z` before normalization and division.
pub const MIN_NORMAL_Z: f64 = 0.05;

/// Default channel-max difference threshold for contact segmentation.
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.04;

/// Per-pixel unit normals `(n_x, n_y, n_z)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> NormalMap<T> {
    /// Normalizes every triple; rejects zero-length or non-finite triples.
    pub fn from_raw(width: usize, height: usize, mut data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "normal map has {} values, expected {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        for n in data.chunks_mut(3) {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if !(len.is_finite() && len > T::zero()) {
                return Err(Error::InvalidArgument("normal of zero or non-finite length".into()));
            }
            for v in n.iter_mut() {
                *v /= len;
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn flat(width: usize, height: usize) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&[T::zero(), T::zero(), T::one()]);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub(crate) fn set(&mut self, x: usize, y: usize, n: [T; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&n);
    }
}

/// Depth gradients `∂H/∂x`, `∂H/∂y` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField<T> {
    width: usize,
    height: usize,
    gx: Vec<T>,
    gy: Vec<T>,
}

impl<T: Real> GradientField<T> {
    pub fn new(width: usize, height: usize, gx: Vec<T>, gy: Vec<T>) -> Result<Self> {
        if gx.len() != width * height || gy.len() != width * height {
            return Err(Error::Dimension(format!(
                "gradient components must have {}x{} values",
                width, height
            )));
        }
        Ok(Self {
            width,
            height,
            gx,
            gy,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            gx: vec![T::zero(); width * height],
            gy: vec![T::zero(); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn gx(&self, x: usize, y: usize) -> T {
        self.gx[y * self.width + x]
    }

    #[inline]
    pub fn gy(&self, x: usize, y: usize) -> T {
        self.gy[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, gx: T, gy: T) {
        let i = y * self.width + x;
        self.gx[i] = gx;
        self.gy[i] = gy;
    }

    pub fn gx_data(&self) -> &[T] {
        &self.gx
    }

    pub fn gy_data(&self) -> &[T] {
        &self.gy
    }

    pub fn is_finite(&self) -> bool {
        self.gx.iter().chain(&self.gy).all(|v| v.is_finite())
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: T, other: &GradientField<T>, b: T) -> Result<Self> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Dimension("gradient fields differ in size".into()));
        }
        let mix = |p: &[T], q: &[T]| p.iter().zip(q).map(|(&u, &v)| a * u + b * v).collect();
        Ok(Self {
            width: self.width,
            height: self.height,
            gx: mix(&self.gx, &other.gx),
            gy: mix(&self.gy, &other.gy),
        })
    }
}

/// Real-valued height field, positive into the gel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> DepthMap<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "depth map has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::zero(); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> T {
        self.data.iter().fold(T::neg_infinity(), |m, &v| m.max(v))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> DepthMap<U> {
        DepthMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Single-channel image whose values `[0, 1]` stand for bytes `0..=255`.
pub type DepthImage<T> = Image<T>;

/// Global depth scale fixed at calibration time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub max_depth: f64,
    pub calibrated_at: String,
    pub mlp_weights: PathBuf,
}

impl ScaleRecord {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("scale record serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rec: ScaleRecord = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if !(rec.max_depth > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{}: max_depth must be positive",
                path.display()
            )));
        }
        Ok(rec)
    }
}

fn check_mlp<T: Real>(mlp: &Network<T>) -> Result<()> {
    let spec = mlp.spec();
    if spec.branches.len() != 1 || spec.branches[0].input_shape != [5] || mlp.output_width() != 3 {
        return Err(Error::Shape(format!(
            "color-to-normal network must map 5 inputs (r, g, b, x, y) to 3 outputs, got {:?} -> {}",
            spec.branches.iter().map(|b| b.input_shape.clone()).collect::<Vec<_>>(),
            mlp.output_width()
        )));
    }
    Ok(())
}

/// Network inputs for every pixel: `(r, g, b, x / (w-1), y / (h-1))`.
pub fn pixel_features<T: Real>(frame: &Image<T>) -> Result<Vec<T>> {
    if frame.channels() != 3 {
        return Err(Error::Shape(format!(
            "normal inference needs an RGB frame, got {} channels",
            frame.channels()
        )));
    }
    let (w, h) = (frame.width(), frame.height());
    let sx = if w > 1 { T::one() / T::from_usize_lossy(w - 1) } else { T::zero() };
    let sy = if h > 1 { T::one() / T::from_usize_lossy(h - 1) } else { T::zero() };
    let mut out = Vec::with_capacity(w * h * 5);
    for y in 0..h {
        for x in 0..w {
            out.extend_from_slice(frame.pixel(x, y));
            out.push(T::from_usize_lossy(x) * sx);
            out.push(T::from_usize_lossy(y) * sy);
        }
    }
    Ok(out)
}

/// Evaluates the learned color-to-normal map on every pixel.
///
/// Raw outputs get `n_z` clamped to at least [`MIN_NORMAL_Z`] and are then
/// renormalized.
pub fn infer_normals<T: Real>(mlp: &Network<T>, frame: &Image<T>) -> Result<NormalMap<T>> {
    check_mlp(mlp)?;
    let feats = pixel_features(frame)?;
    let n = frame.width() * frame.height();
    const CHUNK: usize = 8192;
    let mut raw = Vec::with_capacity(n * 3);
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let x = Tensor::new(vec![end - start, 5], feats[start * 5..end * 5].to_vec())?;
        raw.extend_from_slice(mlp.predict(&[&x])?.data());
    }
    let zmin = T::lit(MIN_NORMAL_Z);
    for v in raw.chunks_mut(3) {
        v[2] = v[2].max(zmin);
    }
    NormalMap::from_raw(frame.width(), frame.height(), raw)
}

/// `∂H/∂x = n_x / n_z`, `∂H/∂y = n_y / n_z`.
pub fn normals_to_gradients<T: Real>(n: &NormalMap<T>) -> GradientField<T> {
    let mut gx = Vec::with_capacity(n.width * n.height);
    let mut gy = Vec::with_capacity(n.width * n.height);
    for t in n.data.chunks(3) {
        gx.push(t[0] / t[2]);
        gy.push(t[1] / t[2]);
    }
    GradientField {
        width: n.width,
        height: n.height,
        gx,
        gy,
    }
}

/// Integrates a normal map into an indentation depth map.
///
/// Normals face out of the gel toward the camera, so the integrated height
/// field is the negated indentation; the sign is flipped here so depth is
/// positive into the gel.
pub fn integrate_normals<T: Real>(n: &NormalMap<T>) -> Result<DepthMap<T>> {
    let solved = dst_poisson_solve(&normals_to_gradients(n))?;
    Ok(solved.map(|v| -v))
}

/// `d = clamp(h / max_depth, 0, 1)` as a one-channel image.
pub fn depth_to_image<T: Real>(h: &DepthMap<T>, scale: &ScaleRecord) -> Result<DepthImage<T>> {
    if !(scale.max_depth > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "depth scale must be positive, got {}",
            scale.max_depth
        )));
    }
    let inv = T::lit(1.0 / scale.max_depth);
    let data = h
        .data
        .iter()
        .map(|&v| (v * inv).max(T::zero()).min(T::one()))
        .collect();
    Image::new(h.width, h.height, 1, data)
}

/// Contact segmentation by reference-frame differencing: a pixel is set when
/// its largest per-channel absolute difference exceeds `threshold`; one 3×3
/// morphological opening then removes speckle.
pub fn contact_mask_from_diff<T: Real>(frame: &Image<T>, reference: &Image<T>, threshold: T) -> Result<ContactMask> {
    if !frame.same_dims(reference) {
        return Err(Error::Dimension(format!(
            "frame {}x{}x{} and reference {}x{}x{} differ",
            frame.width(),
            frame.height(),
            frame.channels(),
            reference.width(),
            reference.height(),
            reference.channels()
        )));
    }
    let ch = frame.channels();
    let raw = frame
        .data()
        .chunks(ch)
        .zip(reference.data().chunks(ch))
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&p, &q)| (p - q).abs())
                .fold(T::zero(), |m, v| m.max(v))
                > threshold
        })
        .collect();
    Ok(ContactMask::new(frame.width(), frame.height(), raw)?.open3())
}

/// Zeroes every value outside the mask.
pub fn apply_contact_mask<T: Real>(d: &DepthImage<T>, m: &ContactMask) -> Result<DepthImage<T>> {
    if d.width() != m.width() || d.height() != m.height() || d.channels() != 1 {
        return Err(Error::Dimension(format!(
            "depth image {}x{}x{} does not match mask {}x{}",
            d.width(),
            d.height(),
            d.channels(),
            m.width(),
            m.height()
        )));
    }
    let data = d
        .data()
        .iter()
        .zip(m.data())
        .map(|(&v, &keep)| if keep { v } else { T::zero() })
        .collect();
    Image::new(d.width(), d.height(), 1, data)
}

/// Output of [`DepthPipeline::reconstruct`].
#[derive(Debug, Clone)]
pub struct Reconstruction<T> {
    pub depth: DepthMap<T>,
    pub image: DepthImage<T>,
    pub mask: ContactMask,
}

/// Calibrated frame-to-depth-image pipeline.
#[derive(Debug, Clone)]
pub struct DepthPipeline<T: Real> {
    pub mlp: Network<T>,
    pub scale: ScaleRecord,
    pub reference: Image<T>,
    pub mask_threshold: T,
}

impl<T: Real> DepthPipeline<T> {
    pub fn reconstruct(&self, frame: &Image<T>) -> Result<Reconstruction<T>> {
        let normals = infer_normals(&self.mlp, frame)?;
        let depth = integrate_normals(&normals)?;
        let raw = depth_to_image(&depth, &self.scale)?;
        let mask = contact_mask_from_diff(frame, &self.reference, self.mask_threshold)?;
        let image = apply_contact_mask(&raw, &mask)?;
        Ok(Reconstruction { depth, image, mask })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BranchSpec, LayerSpec, NetworkSpec};
    use proptest::prelude::*;

    fn scale(max_depth: f64) -> ScaleRecord {
        ScaleRecord {
            max_depth,
            calibrated_at: "2026-01-01T00:00:00Z".into(),
            mlp_weights: "mlp.bin".into(),
        }
    }

    #[test]
    fn flat_normals_give_zero_gradients() {
        let g = normals_to_gradients(&NormalMap::<f64>::flat(4, 3));
        assert!(g.gx_data().iter().chain(g.gy_data()).all(|&v| v == 0.0));
    }

    #[test]
    fn tilted_normal_gradient_arithmetic() {
        let n = NormalMap::from_raw(1, 1, vec![0.6f64, 0.0, 0.8]).unwrap();
        let g = normals_to_gradients(&n);
        assert!((g.gx(0, 0) - 0.75).abs() < 1e-15);
        assert_eq!(g.gy(0, 0), 0.0);
    }

    #[test]
    fn constant_network_gives_flat_map() {
        let spec = NetworkSpec {
            branches: vec![BranchSpec {
                input_shape: vec![5],
                layers: vec![],
            }],
            head: vec![LayerSpec::Dense { inputs: 5, units: 3 }],
        };
        let mut mlp: Network<f32> = Network::zeros(spec).unwrap();
        mlp.params_mut()[1][2] = 1.0;
        let frame = Image::filled(6, 4, 3, 0.37f32);
        let n = infer_normals(&mlp, &frame).unwrap();
        assert_eq!(n, NormalMap::flat(6, 4));
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        let spec = NetworkSpec {
            branches: vec![BranchSpec {
                input_shape: vec![3],
                layers: vec![],
            }],
            head: vec![LayerSpec::Dense { inputs: 3, units: 3 }],
        };
        let mlp: Network<f32> = Network::zeros(spec).unwrap();
        assert!(infer_normals(&mlp, &Image::filled(2, 2, 3, 0.5f32)).is_err());
    }

    #[test]
    fn depth_image_endpoints_and_errors() {
        let zero = DepthMap::<f64>::zeros(3, 2);
        let img = depth_to_image(&zero, &scale(2.0)).unwrap();
        assert_eq!(img.channels(), 1);
        assert!(img.to_bytes().iter().all(|&b| b == 0));

        let mut peak = DepthMap::<f64>::zeros(3, 2);
        peak.data_mut()[4] = 2.0;
        let img = depth_to_image(&peak, &scale(2.0)).unwrap();
        assert_eq!(img.data()[4], 1.0);
        assert_eq!(img.to_bytes()[4], 255);

        assert!(depth_to_image(&zero, &scale(0.0)).is_err());
        assert!(depth_to_image(&zero, &scale(-1.0)).is_err());
    }

    #[test]
    fn mask_from_identical_frames_is_empty() {
        let f = Image::filled(8, 8, 3, 0.5f32);
        assert_eq!(contact_mask_from_diff(&f, &f, 0.04).unwrap().count(), 0);
        let g = Image::filled(8, 8, 3, 1.0f32);
        let z = Image::filled(8, 8, 3, 0.0f32);
        assert_eq!(contact_mask_from_diff(&g, &z, 1.0).unwrap().count(), 0);
        assert!(contact_mask_from_diff(&f, &Image::filled(4, 8, 3, 0.5f32), 0.04).is_err());
    }

    #[test]
    fn apply_mask_identity_and_blackout() {
        let d = Image::new(2, 2, 1, vec![0.1f32, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(apply_contact_mask(&d, &ContactMask::full(2, 2)).unwrap(), d);
        let black = apply_contact_mask(&d, &ContactMask::empty(2, 2)).unwrap();
        assert!(black.data().iter().all(|&v| v == 0.0));
        assert!(apply_contact_mask(&d, &ContactMask::empty(3, 2)).is_err());
    }

    #[test]
    fn scale_record_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scale.json");
        let rec = scale(3.25);
        rec.save(&p).unwrap();
        assert_eq!(ScaleRecord::load(&p).unwrap(), rec);
    }

    /// Gradient of `sin(a x) sin(b y)` whose central-difference divergence
    /// equals the 5-point Laplacian of the same surface exactly.
    fn eigen_field(w: usize, h: usize, discrete: bool) -> (GradientField<f64>, Vec<f64>) {
        let a = std::f64::consts::PI / (w - 1) as f64;
        let b = std::f64::consts::PI / (h - 1) as f64;
        let (ca, cb) = if discrete {
            (2.0 * (a / 2.0).tan(), 2.0 * (b / 2.0).tan())
        } else {
            (a, b)
        };
        let mut g = GradientField::zeros(w, h);
        let mut surf = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (xf, yf) = (x as f64, y as f64);
                g.set(
                    x,
                    y,
                    ca * (a * xf).cos() * (b * yf).sin(),
                    cb * (a * xf).sin() * (b * yf).cos(),
                );
                surf[y * w + x] = (a * xf).sin() * (b * yf).sin();
            }
        }
        (g, surf)
    }

    fn max_err(d: &DepthMap<f64>, surf: &[f64]) -> f64 {
        d.data().iter().zip(surf).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn eigenfunction_recovered_to_round_off() {
        let (g, surf) = eigen_field(64, 64, true);
        let d = dst_poisson_solve(&g).unwrap();
        assert!(max_err(&d, &surf) < 1e-6, "error {}", max_err(&d, &surf));
    }

    #[test]
    fn eigenfunction_from_continuous_gradient_within_truncation() {
        let (g, surf) = eigen_field(64, 64, false);
        let d = dst_poisson_solve(&g).unwrap();
        assert!(max_err(&d, &surf) < 1e-3, "error {}", max_err(&d, &surf));
    }

    #[test]
    fn integration_gives_positive_indentation() {
        // Normals of an indentation H face along (-H_x, -H_y, 1).
        let (g, surf) = eigen_field(32, 24, true);
        let mut raw = Vec::new();
        for y in 0..24 {
            for x in 0..32 {
                raw.extend_from_slice(&[-g.gx(x, y), -g.gy(x, y), 1.0]);
            }
        }
        let n = NormalMap::from_raw(32, 24, raw).unwrap();
        let d = integrate_normals(&n).unwrap();
        assert!(max_err(&d, &surf) < 1e-9);
    }

    proptest! {
        #[test]
        fn depth_to_image_is_monotone(
            base in proptest::collection::vec(-1.0f64..4.0, 12),
            bump in proptest::collection::vec(0.0f64..2.0, 12),
        ) {
            let h1 = DepthMap::new(4, 3, base.clone()).unwrap();
            let h2 = DepthMap::new(4, 3, base.iter().zip(&bump).map(|(a, b)| a + b).collect()).unwrap();
            let s = scale(3.0);
            let d1 = depth_to_image(&h1, &s).unwrap();
            let d2 = depth_to_image(&h2, &s).unwrap();
            for (a, b) in d1.data().iter().zip(d2.data()) {
                prop_assert!(a <= b);
            }
        }

        #[test]
        fn solver_is_linear(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            g1 in proptest::collection::vec(-1.0f64..1.0, 2 * 63),
            g2 in proptest::collection::vec(-1.0f64..1.0, 2 * 63),
        ) {
            let f1 = GradientField::new(9, 7, g1[..63].to_vec(), g1[63..].to_vec()).unwrap();
            let f2 = GradientField::new(9, 7, g2[..63].to_vec(), g2[63..].to_vec()).unwrap();
            let lhs = dst_poisson_solve(&f1.combine(a, &f2, b).unwrap()).unwrap();
            let s1 = dst_poisson_solve(&f1).unwrap();
            let s2 = dst_poisson_solve(&f2).unwrap();
            for i in 0..63 {
                let rhs = a * s1.data()[i] + b * s2.data()[i];
                prop_assert!((lhs.data()[i] - rhs).abs() < 1e-9);
            }
        }
    }
}
