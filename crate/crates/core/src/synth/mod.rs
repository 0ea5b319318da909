//! Synthetic markerless gel sensor.
//!
//! Rigid parametric indenters are pressed into a flat (or cylindrically
//! curved) gel, the resulting indentation field is shaded by three colored
//! directional lights, and a closed-form contact law gives the normal force.
//! Geometry is specified in millimetres and rasterized at `px_per_mm`.

mod export;
mod indenter;

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use export::{
    calibration_scenes, reference_frame, render_scenes, sphere_presses, synth_sample, synth_samples, synthetic_pipeline,
    write_calibration_presses, write_dataset,
};
pub use indenter::{standard_indenters, Indenter, Shape};

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Real;

/// One indenter pressed at one place and depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressScene {
    pub indenter: Indenter,
    pub center_px: [f64; 2],
    pub press_depth_px: f64,
    /// In-plane rotation of the indenter footprint, radians.
    #[serde(default)]
    pub rotation: f64,
    pub px_per_mm: f64,
    /// Radius of a gel surface curved along y; `None` for a flat gel.
    #[serde(default)]
    pub gel_curvature_px: Option<f64>,
    /// Indentation beyond this is clipped, emulating gel saturation.
    #[serde(default)]
    pub saturation_px: Option<f64>,
}

/// Height of a cylindrical gel surface below its crown at row `y`.
fn gel_sag(radius: f64, y: f64, crown: f64) -> f64 {
    let dy = (y - crown).abs().min(radius);
    radius - (radius * radius - dy * dy).sqrt()
}

/// Penetration of the indenter into the gel on a `width × height` grid.
pub fn press_depth_map(scene: &PressScene, width: usize, height: usize) -> Result<DepthMap<f64>> {
    if !(scene.press_depth_px >= 0.0 && scene.px_per_mm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "press depth {} px and scale {} px/mm must be non-negative and positive",
            scene.press_depth_px, scene.px_per_mm
        )));
    }
    let mut data = vec![0.0; width * height];
    if scene.press_depth_px == 0.0 {
        return DepthMap::new(width, height, data);
    }
    let ppm = scene.px_per_mm;
    let (cx, cy) = (scene.center_px[0], scene.center_px[1]);
    let (sin, cos) = scene.rotation.sin_cos();
    let crown = (height as f64 - 1.0) / 2.0;
    let reach = scene.indenter.contact_radius_mm(scene.press_depth_px / ppm) * ppm;
    let x0 = ((cx - reach).floor().max(0.0)) as usize;
    let x1 = ((cx + reach).ceil().min(width as f64 - 1.0)).max(0.0) as usize;
    let y0 = ((cy - reach).floor().max(0.0)) as usize;
    let y1 = ((cy + reach).ceil().min(height as f64 - 1.0)).max(0.0) as usize;
    for y in y0..=y1 {
        let drop = scene
            .gel_curvature_px
            .map_or(0.0, |r| gel_sag(r, y as f64, crown) - gel_sag(r, cy, crown));
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // Offsets in the indenter's own frame.
            let lx = cos * dx + sin * dy;
            let ly = -sin * dx + cos * dy;
            let s = scene.indenter.profile_mm(lx / ppm, ly / ppm) * ppm;
            let mut v = (scene.press_depth_px - s - drop).max(0.0);
            if let Some(sat) = scene.saturation_px {
                v = v.min(sat);
            }
            data[y * width + x] = v;
        }
    }
    let touches_border = (0..width).any(|x| data[x] > 0.0 || data[(height - 1) * width + x] > 0.0)
        || (0..height).any(|y| data[y * width] > 0.0 || data[y * width + width - 1] > 0.0);
    if touches_border {
        return Err(Error::InvalidArgument(format!(
            "indenter {} at ({cx:.1}, {cy:.1}) reaches outside the {width}x{height} frame",
            scene.indenter.id
        )));
    }
    DepthMap::new(width, height, data)
}

/// Normal force for a scene, in newtons.
pub fn contact_force(scene: &PressScene) -> f64 {
    scene.indenter.force(scene.press_depth_px / scene.px_per_mm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Light {
    /// Unit vector from the surface toward the light.
    pub direction: [f64; 3],
    pub intensity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightingModel {
    pub lights: Vec<Light>,
    pub ambient: [f64; 3],
}

impl LightingModel {
    /// Red, green and blue lights at azimuths 0°, 120° and 240°, all at 45°
    /// elevation, with a little cross-talk into the other channels.
    pub fn standard() -> Self {
        let el = PI / 4.0;
        let lights = (0..3)
            .map(|k| {
                let az = k as f64 * 2.0 * PI / 3.0;
                let mut intensity = [0.05; 3];
                intensity[k] = 0.6;
                Light {
                    direction: [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()],
                    intensity,
                }
            })
            .collect();
        Self {
            lights,
            ambient: [0.1; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.lights {
            let n = l.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "light direction {:?} is not unit length",
                    l.direction
                )));
            }
            if l.intensity.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidArgument("light intensity must be non-negative".into()));
            }
        }
        if self.ambient.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("ambient term must be non-negative".into()));
        }
        Ok(())
    }

    /// Lambertian shading of one unit normal, clamped to `[0, 1]`.
    pub fn shade(&self, n: [f64; 3]) -> [f64; 3] {
        let mut c = self.ambient;
        for l in &self.lights {
            let d = l.direction[0] * n[0] + l.direction[1] * n[1] + l.direction[2] * n[2];
            let d = d.max(0.0);
            for (ch, i) in c.iter_mut().zip(l.intensity) {
                *ch += i * d;
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }
}

/// Shades an indentation field. Normals come from central differences
/// (one-sided at the border) and face along `(-∂h/∂x, -∂h/∂y, 1)`.
pub fn render_tactile<T: Real>(h: &DepthMap<f64>, lights: &LightingModel) -> Result<Image<T>> {
    lights.validate()?;
    let (w, hgt) = (h.width(), h.height());
    let diff = |a: f64, b: f64, span: usize| if span == 0 { 0.0 } else { (a - b) / span as f64 };
    let mut data = Vec::with_capacity(w * hgt * 3);
    for y in 0..hgt {
        let (ya, yb) = (y.saturating_sub(1), (y + 1).min(hgt - 1));
        for x in 0..w {
            let (xa, xb) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let hx = diff(h.get(xb, y), h.get(xa, y), xb - xa);
            let hy = diff(h.get(x, yb), h.get(x, ya), yb - ya);
            let len = (hx * hx + hy * hy + 1.0).sqrt();
            let c = lights.shade([-hx / len, -hy / len, 1.0 / len]);
            data.extend(c.iter().map(|&v| T::lit(v)));
        }
    }
    Image::new(w, hgt, 3, data)
}

/// Adds zero-mean Gaussian noise and clamps back into `[0, 1]`.
pub fn add_noise<T: Real, R: Rng>(img: &Image<T>, sigma: f64, rng: &mut R) -> Result<Image<T>> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise sigma {sigma}: {e}")))?;
    let data = img
        .data()
        .iter()
        .map(|&v| v + T::lit(normal.sample(rng)))
        .collect();
    Image::from_clamped(img.width(), img.height(), img.channels(), data)
}

/// Counts, ranges and sensor parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub indenters: Vec<Indenter>,
    pub presses_per_location: usize,
    pub width: usize,
    pub height: usize,
    pub px_per_mm: f64,
    pub force_min: f64,
    pub force_max: f64,
    pub noise_sigma: f64,
    pub gel_curvature_mm: Option<f64>,
    pub saturation_mm: Option<f64>,
    pub lights: LightingModel,
    pub seed: u64,
}

impl SynthSpec {
    /// All 18 standard indenters at 160×120 and 8 px/mm, forces in
    /// `[1, 15]` N and 1 % pixel noise.
    pub fn standard(presses_per_location: usize, seed: u64) -> Self {
        Self {
            indenters: standard_indenters(),
            presses_per_location,
            width: 160,
            height: 120,
            px_per_mm: 8.0,
            force_min: 1.0,
            force_max: 15.0,
            noise_sigma: 0.01,
            gel_curvature_mm: None,
            saturation_mm: None,
            lights: LightingModel::standard(),
            seed,
        }
    }

    /// Press points: a 3×3 grid over the frame without its four corners.
    pub fn press_points(&self) -> Vec<[f64; 2]> {
        let (cx, cy) = ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0);
        let (dx, dy) = (0.2 * self.width as f64, 0.1 * self.height as f64);
        vec![[cx, cy - dy], [cx - dx, cy], [cx, cy], [cx + dx, cy], [cx, cy + dy]]
    }

    fn validate(&self) -> Result<()> {
        if self.indenters.is_empty() || self.presses_per_location == 0 {
            return Err(Error::InvalidArgument(
                "synthetic dataset needs at least one indenter and one press".into(),
            ));
        }
        if self.width < 8 || self.height < 8 || !(self.px_per_mm > 0.0) {
            return Err(Error::InvalidArgument("invalid synthetic sensor geometry".into()));
        }
        if !(self.force_min > 0.0 && self.force_max > self.force_min) {
            return Err(Error::InvalidArgument(format!(
                "force range [{}, {}] is invalid",
                self.force_min, self.force_max
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("noise sigma must be non-negative".into()));
        }
        self.lights.validate()
    }

    pub fn scene(&self, indenter: &Indenter, center_px: [f64; 2], depth_mm: f64, rotation: f64) -> PressScene {
        PressScene {
            indenter: indenter.clone(),
            center_px,
            press_depth_px: depth_mm * self.px_per_mm,
            rotation,
            px_per_mm: self.px_per_mm,
            gel_curvature_px: self.gel_curvature_mm.map(|r| r * self.px_per_mm),
            saturation_px: self.saturation_mm.map(|s| s * self.px_per_mm),
        }
    }

    /// Noise-free rendering of the undeformed gel.
    pub fn reference<T: Real>(&self) -> Result<Image<T>> {
        render_tactile(&DepthMap::zeros(self.width, self.height), &self.lights)
    }

    /// Renders one record: noisy frame and true indentation. Noise is drawn
    /// from a stream keyed by the record index, so any record can be
    /// rendered on its own.
    pub fn render<T: Real>(&self, rec: &SynthRecord) -> Result<(Image<T>, DepthMap<f64>)> {
        let h = press_depth_map(&rec.scene, self.width, self.height)?;
        let clean: Image<T> = render_tactile(&h, &self.lights)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rec.index as u64 + 1);
        Ok((add_noise(&clean, self.noise_sigma, &mut rng)?, h))
    }

    /// Noisy rendering of the undeformed gel, as a sensor would capture it.
    pub fn noisy_reference<T: Real>(&self) -> Result<Image<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0);
        add_noise(&self.reference::<T>()?, self.noise_sigma, &mut rng)
    }
}

/// Provenance of one synthetic sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub index: usize,
    pub location: usize,
    pub scene: PressScene,
    pub force_n: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub records: Vec<SynthRecord>,
}

/// Draws every press of the spec: indenter-major, then press point, then
/// repetition. Forces are uniform in the spec's range and inverted to
/// depths through each indenter's contact law; rotations are uniform.
pub fn generate_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points = spec.press_points();
    let mut records = Vec::with_capacity(spec.indenters.len() * points.len() * spec.presses_per_location);
    for ind in &spec.indenters {
        for (loc, &p) in points.iter().enumerate() {
            for _ in 0..spec.presses_per_location {
                let force = rng.gen_range(spec.force_min..spec.force_max);
                let rotation = rng.gen_range(0.0..2.0 * PI);
                let scene = spec.scene(ind, p, ind.depth_for_force(force), rotation);
                let reach = ind.contact_radius_mm(scene.press_depth_px / spec.px_per_mm) * spec.px_per_mm;
                if p[0] - reach < 1.0
                    || p[1] - reach < 1.0
                    || p[0] + reach > spec.width as f64 - 2.0
                    || p[1] + reach > spec.height as f64 - 2.0
                {
                    return Err(Error::InvalidArgument(format!(
                        "indenter {} at {:.1} N does not fit the {}x{} frame at ({:.1}, {:.1})",
                        ind.id, force, spec.width, spec.height, p[0], p[1]
                    )));
                }
                records.push(SynthRecord {
                    index: records.len(),
                    location: loc,
                    force_n: contact_force(&scene),
                    scene,
                });
            }
        }
    }
    Ok(SynthDataset {
        spec: spec.clone(),
        records,
    })
}

/// Sphere presses for calibration: sphere radius and depth range in mm,
/// centres uniform over positions where the contact fits inside the frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub count: usize,
    pub radius_mm: f64,
    pub depth_min_mm: f64,
    pub depth_max_mm: f64,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            count: 40,
            radius_mm: 4.0,
            depth_min_mm: 0.4,
            depth_max_mm: 1.5,
        }
    }
}

/// Scenes for held-out or calibration presses of an arbitrary indenter at
/// random positions that keep the contact inside the frame.
pub fn random_scenes(
    spec: &SynthSpec,
    indenter: &Indenter,
    count: usize,
    depth_mm: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PressScene>> {
    let mut out = Vec::with_capacity(count);
    let reach = indenter.contact_radius_mm(depth_mm.1) * spec.px_per_mm + 2.0;
    let (w, h) = (spec.width as f64, spec.height as f64);
    if 2.0 * reach >= w - 2.0 || 2.0 * reach >= h - 2.0 {
        return Err(Error::InvalidArgument(format!(
            "indenter {} does not fit the {}x{} frame",
            indenter.id, spec.width, spec.height
        )));
    }
    for _ in 0..count {
        let c = [rng.gen_range(reach..w - 1.0 - reach), rng.gen_range(reach..h - 1.0 - reach)];
        let d = rng.gen_range(depth_mm.0..=depth_mm.1);
        let rot = rng.gen_range(0.0..2.0 * PI);
        out.push(spec.scene(indenter, c, d, rot));
    }
    Ok(out)
}

/// Saves `spec.json` and one record per line to `scenes.jsonl`.
pub fn write_provenance(ds: &SynthDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec_path = dir.join("spec.json");
    let text = serde_json::to_string_pretty(&ds.spec).expect("spec serializes");
    std::fs::write(&spec_path, text).map_err(|e| Error::io(&spec_path, e))?;
    let rec_path = dir.join("scenes.jsonl");
    let mut out = String::new();
    for r in &ds.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(&rec_path, out).map_err(|e| Error::io(&rec_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(radius: f64) -> Indenter {
        Indenter::new("sphere", Shape::Sphere { radius })
    }

    fn scene(ind: Indenter, depth_px: f64) -> PressScene {
        PressScene {
            indenter: ind,
            center_px: [40.0, 30.0],
            press_depth_px: depth_px,
            rotation: 0.0,
            px_per_mm: 8.0,
            gel_curvature_px: None,
            saturation_px: None,
        }
    }

    #[test]
    fn zero_press_is_flat_and_renders_reference() {
        let s = scene(sphere(3.0), 0.0);
        let h = press_depth_map(&s, 80, 60).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        let lights = LightingModel::standard();
        let img: Image<f64> = render_tactile(&h, &lights).unwrap();
        let flat = lights.shade([0.0, 0.0, 1.0]);
        for p in img.data().chunks(3) {
            assert_eq!(p, &flat[..]);
        }
        assert_eq!(contact_force(&s), 0.0);
    }

    #[test]
    fn sphere_apex_equals_press_depth() {
        let h = press_depth_map(&scene(sphere(3.0), 6.0), 80, 60).unwrap();
        assert!((h.get(40, 30) - 6.0).abs() < 1e-12);
        assert!((h.max() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn box_has_plateau_over_footprint() {
        let ind = Indenter::new(
            "box",
            Shape::Box {
                width: 2.0,
                length: 3.0,
            },
        );
        let h = press_depth_map(&scene(ind, 4.0), 80, 60).unwrap();
        // Footprint is 16 x 24 px around (40, 30).
        for y in 19..=41 {
            for x in 33..=47 {
                assert_eq!(h.get(x, y), 4.0, "({x}, {y})");
            }
        }
        assert!(h.get(40, 45) < 4.0);
    }

    #[test]
    fn sphere_force_scales_with_three_halves_power() {
        let ind = sphere(4.0);
        let f1 = ind.force(0.25);
        let f4 = ind.force(1.0);
        assert!((f4 / f1 - 8.0).abs() < 1e-12);
    }

    #[test]
    fn saturation_caps_depth() {
        let mut s = scene(sphere(3.0), 6.0);
        s.saturation_px = Some(2.5);
        assert!((press_depth_map(&s, 80, 60).unwrap().max() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn curved_gel_reduces_contact_away_from_crown() {
        let ind = Indenter::new("cyl", Shape::Cylinder { radius: 2.0 });
        let mut s = scene(ind, 4.0);
        let flat = press_depth_map(&s, 80, 60).unwrap();
        s.gel_curvature_px = Some(100.0);
        let curved = press_depth_map(&s, 80, 60).unwrap();
        let count = |d: &DepthMap<f64>| d.data().iter().filter(|&&v| v > 0.0).count();
        assert!(count(&curved) < count(&flat));
    }

    #[test]
    fn outside_frame_is_rejected() {
        let mut s = scene(sphere(3.0), 6.0);
        s.center_px = [2.0, 30.0];
        assert!(press_depth_map(&s, 80, 60).is_err());
    }

    #[test]
    fn deeper_press_moves_image_further_from_reference() {
        let lights = LightingModel::standard();
        let reference: Image<f64> = render_tactile(&DepthMap::zeros(80, 60), &lights).unwrap();
        let mut last = 0.0;
        for d in [1.0, 2.0, 3.0, 4.0, 5.0] {
            let h = press_depth_map(&scene(sphere(3.0), d), 80, 60).unwrap();
            let img: Image<f64> = render_tactile(&h, &lights).unwrap();
            let l2: f64 = img.data().iter().zip(reference.data()).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(l2 > last);
            last = l2;
        }
    }

    #[test]
    fn dataset_is_seed_deterministic_and_in_range() {
        let mut spec = SynthSpec::standard(2, 5);
        spec.indenters.truncate(4);
        let a = generate_dataset(&spec).unwrap();
        let b = generate_dataset(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 4 * 5 * 2);
        for r in &a.records {
            assert!(r.force_n >= 1.0 - 1e-9 && r.force_n <= 15.0 + 1e-9);
            assert_eq!(contact_force(&r.scene), r.force_n);
        }
        let (f1, _) = spec.render::<f32>(&a.records[3]).unwrap();
        let (f2, _) = spec.render::<f32>(&a.records[3]).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn standard_indenters_fit_at_full_force() {
        let spec = SynthSpec::standard(1, 0);
        assert_eq!(spec.indenters.len(), 18);
        let ds = generate_dataset(&spec).unwrap();
        for r in &ds.records {
            let mut s = r.scene.clone();
            s.press_depth_px = s.indenter.depth_for_force(spec.force_max) * spec.px_per_mm;
            press_depth_map(&s, spec.width, spec.height).unwrap();
        }
    }
}
