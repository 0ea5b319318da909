//! Turning synthetic presses into calibration sets, training samples and
//! on-disk sessions.
//!
//! Frames are quantized to 8 bits before anything else touches them, so a
//! sample built in memory is byte-identical to the same sample written to
//! disk and read back.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{random_scenes, write_provenance, CalibrationSpec, Indenter, PressScene, Shape, SynthDataset, SynthRecord, SynthSpec};
use crate::calib::{calibrate, write_press_records, Calibration, MlpConfig, PressRecord, SpherePress};
use crate::dataio::{Manifest, TactileSample};
use crate::depth::{DepthPipeline, DEFAULT_MASK_THRESHOLD};
use crate::error::{Error, Result};
use crate::image::{save_image, Image};

/// Calibration frames draw noise from streams far above any dataset index.
const CALIBRATION_STREAM_BASE: usize = 1 << 40;
/// Session frame spacing: 60 frames per second.
const FRAME_PERIOD_NS: u64 = 16_666_667;

fn quantized(img: &Image<f32>) -> Result<Image<f32>> {
    Image::from_bytes(img.width(), img.height(), img.channels(), &img.to_bytes())
}

/// Sphere presses at random positions and depths, seeded by the spec.
pub fn calibration_scenes(spec: &SynthSpec, cal: &CalibrationSpec) -> Result<Vec<PressScene>> {
    let sphere = Indenter::new("calibration_sphere", Shape::Sphere { radius: cal.radius_mm });
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    random_scenes(spec, &sphere, cal.count, (cal.depth_min_mm, cal.depth_max_mm), &mut rng)
}

/// Renders (noisy, 8-bit) frames for presses outside the dataset proper.
/// `stream` offsets the noise streams so different press sets stay
/// independent.
pub fn render_scenes(spec: &SynthSpec, scenes: &[PressScene], stream: usize) -> Result<Vec<Image<f32>>> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let rec = SynthRecord {
                index: CALIBRATION_STREAM_BASE + stream * scenes.len().max(1) + i,
                location: 0,
                scene: s.clone(),
                force_n: 0.0,
            };
            quantized(&spec.render::<f32>(&rec)?.0)
        })
        .collect()
}

pub fn sphere_presses(scenes: &[PressScene], frames: Vec<Image<f32>>) -> Result<Vec<SpherePress<f32>>> {
    scenes
        .iter()
        .zip(frames)
        .map(|(s, frame)| match s.indenter.shape {
            Shape::Sphere { radius } => Ok(SpherePress {
                center_px: s.center_px,
                radius_px: radius * s.px_per_mm,
                press_depth_px: s.press_depth_px,
                frame,
            }),
            _ => Err(Error::InvalidArgument(format!("{} is not a sphere press", s.indenter.id))),
        })
        .collect()
}

/// The sensor's 8-bit capture of the undeformed gel.
pub fn reference_frame(spec: &SynthSpec) -> Result<Image<f32>> {
    quantized(&spec.noisy_reference::<f32>()?)
}

/// Calibrates on freshly rendered sphere presses and assembles the depth
/// pipeline.
pub fn synthetic_pipeline(
    spec: &SynthSpec,
    cal: &CalibrationSpec,
    mlp: &MlpConfig,
) -> Result<(DepthPipeline<f32>, Calibration<f32>)> {
    let scenes = calibration_scenes(spec, cal)?;
    let presses = sphere_presses(&scenes, render_scenes(spec, &scenes, 0)?)?;
    let reference = reference_frame(spec)?;
    let calibration = calibrate(&presses, Some(&reference), mlp)?;
    let pipeline = DepthPipeline {
        mlp: calibration.mlp.clone(),
        scale: calibration.scale_record("normal_mlp.bin"),
        reference,
        mask_threshold: DEFAULT_MASK_THRESHOLD as f32,
    };
    Ok((pipeline, calibration))
}

/// One training sample; the depth image is reconstructed from the frame
/// when a pipeline is given.
pub fn synth_sample(
    spec: &SynthSpec,
    rec: &SynthRecord,
    pipeline: Option<&DepthPipeline<f32>>,
) -> Result<TactileSample> {
    let frame = quantized(&spec.render::<f32>(rec)?.0)?;
    let depth = match pipeline {
        Some(p) => Some(p.reconstruct(&frame)?.image.to_bytes()),
        None => None,
    };
    Ok(TactileSample {
        width: spec.width,
        height: spec.height,
        frame: frame.to_bytes(),
        depth,
        force_n: rec.force_n,
        indenter_id: rec.scene.indenter.id.clone(),
    })
}

pub fn synth_samples(ds: &SynthDataset, pipeline: Option<&DepthPipeline<f32>>) -> Result<Vec<TactileSample>> {
    ds.records.iter().map(|r| synth_sample(&ds.spec, r, pipeline)).collect()
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes the dataset in the session layout: one session per indenter
/// under `root/sessions/`, frames 1/60 s apart, a force record at every
/// frame time, plus `reference.png` and provenance under `root/synth/`.
pub fn write_dataset(ds: &SynthDataset, pipeline: Option<&DepthPipeline<f32>>, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    create_dir(root)?;
    save_image(&reference_frame(&ds.spec)?, root.join("reference.png"))?;
    write_provenance(ds, root.join("synth"))?;
    for ind in &ds.spec.indenters {
        let dir = root.join("sessions").join(&ind.id);
        create_dir(&dir.join("frames"))?;
        if pipeline.is_some() {
            create_dir(&dir.join("depth"))?;
        }
        let manifest = Manifest {
            indenter_id: ind.id.clone(),
            sensor_id: "synthetic".into(),
            notes: format!("synthetic presses, seed {}", ds.spec.seed),
        };
        let mpath = dir.join("manifest.json");
        std::fs::write(&mpath, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
            .map_err(|e| Error::io(&mpath, e))?;
        let fpath = dir.join("forces.csv");
        let mut forces = std::io::BufWriter::new(std::fs::File::create(&fpath).map_err(|e| Error::io(&fpath, e))?);
        writeln!(forces, "timestamp_s,fz_n").map_err(|e| Error::io(&fpath, e))?;
        for (k, rec) in ds.records.iter().filter(|r| r.scene.indenter.id == ind.id).enumerate() {
            let t_ns = (k as u64 + 1) * FRAME_PERIOD_NS;
            let s = synth_sample(&ds.spec, rec, pipeline)?;
            let name = format!("{t_ns}.png");
            save_image(&s.frame_image(), dir.join("frames").join(&name))?;
            if let Some(d) = s.depth_image() {
                save_image(&d, dir.join("depth").join(&name))?;
            }
            writeln!(forces, "{},{}", t_ns as f64 * 1e-9, rec.force_n).map_err(|e| Error::io(&fpath, e))?;
        }
        forces.flush().map_err(|e| Error::io(&fpath, e))?;
    }
    Ok(())
}

/// Writes calibration presses as PNG frames plus a `presses.jsonl` record
/// file, and returns the record file's path.
pub fn write_calibration_presses(spec: &SynthSpec, cal: &CalibrationSpec, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let scenes = calibration_scenes(spec, cal)?;
    let presses = sphere_presses(&scenes, render_scenes(spec, &scenes, 0)?)?;
    let mut records = Vec::with_capacity(presses.len());
    for (i, p) in presses.iter().enumerate() {
        let name = format!("press_{i:03}.png");
        save_image(&p.frame, dir.join(&name))?;
        records.push(PressRecord {
            frame: PathBuf::from(name),
            center_px: p.center_px,
            radius_px: p.radius_px,
            press_depth_px: p.press_depth_px,
        });
    }
    save_image(&reference_frame(spec)?, dir.join("reference.png"))?;
    let path = dir.join("presses.jsonl");
    write_press_records(&records, &path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{ingest_session, load_samples, session_dirs, IngestOptions};
    use crate::synth::{generate_dataset, standard_indenters};

    fn small_spec() -> SynthSpec {
        let mut spec = SynthSpec::standard(2, 5);
        spec.indenters = standard_indenters().into_iter().take(2).collect();
        spec
    }

    #[test]
    fn calibration_scenes_are_spheres_within_range() {
        let spec = small_spec();
        let cal = CalibrationSpec::default();
        let scenes = calibration_scenes(&spec, &cal).unwrap();
        assert_eq!(scenes.len(), 40);
        for s in &scenes {
            let d = s.press_depth_px / spec.px_per_mm;
            assert!(d >= cal.depth_min_mm && d <= cal.depth_max_mm);
        }
        let frames = render_scenes(&spec, &scenes[..2], 0).unwrap();
        assert!(sphere_presses(&scenes[..2], frames).is_ok());
    }

    #[test]
    fn written_sessions_ingest_to_the_in_memory_samples() {
        let spec = small_spec();
        let ds = generate_dataset(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, None, dir.path()).unwrap();
        let sessions = session_dirs(dir.path()).unwrap();
        assert_eq!(sessions.len(), 2);
        let mut from_disk = Vec::new();
        for s in &sessions {
            let report = ingest_session(s, &IngestOptions::default()).unwrap();
            assert_eq!(report.dropped_gap + report.dropped_range, 0);
            from_disk.extend(load_samples(&report.samples, spec.width, spec.height).unwrap());
        }
        let mut in_memory = synth_samples(&ds, None).unwrap();
        let key = |s: &TactileSample| (s.indenter_id.clone(), s.force_n.to_bits());
        from_disk.sort_by_key(key);
        in_memory.sort_by_key(key);
        assert_eq!(from_disk, in_memory);
    }
}
