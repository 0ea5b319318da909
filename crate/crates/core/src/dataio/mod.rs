//! On-disk session layout, image/force synchronization and indenter-level
//! cross-validation splits.
//!
//! A session directory holds `frames/<t_ns>.png`, optionally
//! `depth/<t_ns>.png`, a `forces.csv` with header `timestamp_s,fz_n` and a
//! `manifest.json`. A dataset is a directory of sessions under `sessions/`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, resize_bilinear, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub indenter_id: String,
    pub sensor_id: String,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceSample {
    pub frame_path: PathBuf,
    pub depth_path: Option<PathBuf>,
    pub force_n: f64,
    pub indenter_id: String,
    pub timestamp_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub force_min: f64,
    pub force_max: f64,
    /// Largest accepted frame-to-force timestamp gap, seconds.
    pub max_gap_s: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            force_min: 1.0,
            force_max: 15.0,
            max_gap_s: 0.010,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestReport {
    pub samples: Vec<ForceSample>,
    /// Frames whose nearest force record was too far away in time.
    pub dropped_gap: usize,
    /// Frames whose matched force fell outside the accepted range.
    pub dropped_range: usize,
}

/// Session files are named by integer nanosecond timestamps.
fn timestamp_ns(path: &Path) -> Option<u64> {
    if path.extension()? != "png" {
        return None;
    }
    path.file_stem()?.to_str()?.parse().ok()
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads `timestamp_s,fz_n` rows, sorted by timestamp.
pub fn read_forces(path: &Path) -> Result<Vec<(f64, f64)>> {
    #[derive(Deserialize)]
    struct Row {
        timestamp_s: f64,
        fz_n: f64,
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for r in rdr.deserialize() {
        let r: Row = r.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        rows.push((r.timestamp_s, r.fz_n));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(rows)
}

/// Index of the record nearest in time; ties go to the earlier record.
fn nearest(forces: &[(f64, f64)], t: f64) -> usize {
    let i = forces.partition_point(|f| f.0 < t);
    if i == 0 {
        return 0;
    }
    if i == forces.len() {
        return i - 1;
    }
    if t - forces[i - 1].0 <= forces[i].0 - t {
        i - 1
    } else {
        i
    }
}

/// Pairs every frame with its nearest force record.
pub fn ingest_session(dir: impl AsRef<Path>, opts: &IngestOptions) -> Result<IngestReport> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let frames_dir = dir.join("frames");
    let mut frames: Vec<(u64, PathBuf)> = std::fs::read_dir(&frames_dir)
        .map_err(|e| Error::io(&frames_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| timestamp_ns(&p).map(|t| (t, p)))
        .collect();
    if frames.is_empty() {
        return Err(Error::Dataset(format!("session {} has no frames", dir.display())));
    }
    frames.sort();
    let forces = read_forces(&dir.join("forces.csv"))?;
    if forces.is_empty() {
        return Err(Error::Dataset(format!("session {} has no force records", dir.display())));
    }
    let mut report = IngestReport::default();
    for (t_ns, path) in frames {
        let t = t_ns as f64 * 1e-9;
        let (ft, f) = forces[nearest(&forces, t)];
        if (ft - t).abs() > opts.max_gap_s + 1e-12 {
            report.dropped_gap += 1;
            continue;
        }
        if !(f >= opts.force_min && f <= opts.force_max) {
            report.dropped_range += 1;
            continue;
        }
        let depth = dir.join("depth").join(format!("{t_ns}.png"));
        report.samples.push(ForceSample {
            frame_path: path,
            depth_path: depth.exists().then_some(depth),
            force_n: f,
            indenter_id: manifest.indenter_id.clone(),
            timestamp_s: t,
        });
    }
    Ok(report)
}

/// Session directories of a dataset root, in name order.
pub fn session_dirs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = root.as_ref().join("sessions");
    let mut out: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Ingests every session of a dataset root.
pub fn ingest_dataset(root: impl AsRef<Path>, opts: &IngestOptions) -> Result<IngestReport> {
    let mut all = IngestReport::default();
    for dir in session_dirs(root)? {
        let r = ingest_session(&dir, opts)?;
        all.samples.extend(r.samples);
        all.dropped_gap += r.dropped_gap;
        all.dropped_range += r.dropped_range;
    }
    Ok(all)
}

/// Indenter ids of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl FoldSplit {
    pub fn partition_of(&self, id: &str) -> Option<Partition> {
        if self.train.iter().any(|s| s == id) {
            Some(Partition::Train)
        } else if self.val.iter().any(|s| s == id) {
            Some(Partition::Val)
        } else if self.test.iter().any(|s| s == id) {
            Some(Partition::Test)
        } else {
            None
        }
    }

    /// Indices of the items whose indenter falls in `part`.
    pub fn select<'a>(&self, ids: impl IntoIterator<Item = &'a str>, part: Partition) -> Vec<usize> {
        ids.into_iter()
            .enumerate()
            .filter(|(_, id)| self.partition_of(id) == Some(part))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Number of held-out indenters per partition: 2 of every 18, at least 1.
pub fn holdout_count(n: usize) -> usize {
    ((n as f64 * 2.0 / 18.0).round() as usize).max(1)
}

/// Three folds over the distinct indenter ids. Ids are shuffled once; fold
/// `k` tests on the `k`-th block of the permutation and validates on the
/// block after it, so test sets are disjoint across folds whenever
/// `3 · holdout ≤ n`.
pub fn split_by_indenter<S: AsRef<str>>(ids: &[S], seed: u64) -> Result<Vec<FoldSplit>> {
    let unique: BTreeSet<&str> = ids.iter().map(|s| s.as_ref()).collect();
    let n = unique.len();
    if n < 3 {
        return Err(Error::Dataset(format!(
            "a 3-fold indenter split needs at least 3 indenters, got {n}"
        )));
    }
    let mut perm: Vec<&str> = unique.into_iter().collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = holdout_count(n).min((n - 1) / 2);
    let pick = |start: usize| -> Vec<String> { (0..k).map(|j| perm[(start + j) % n].to_string()).collect() };
    Ok((0..3)
        .map(|fold| {
            let test = pick(fold * k);
            let val = pick(fold * k + k);
            let mut train: Vec<String> = perm
                .iter()
                .filter(|id| !test.iter().any(|t| t == *id) && !val.iter().any(|v| v == *id))
                .map(|s| s.to_string())
                .collect();
            train.sort();
            FoldSplit { fold, train, val, test }
        })
        .collect())
}

pub fn write_split(splits: &[FoldSplit], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(splits).expect("split serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_split(path: impl AsRef<Path>) -> Result<Vec<FoldSplit>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// A sample held in memory as 8-bit rasters at the model resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileSample {
    pub width: usize,
    pub height: usize,
    /// Row-major interleaved RGB bytes.
    pub frame: Vec<u8>,
    /// Row-major depth-image bytes.
    pub depth: Option<Vec<u8>>,
    pub force_n: f64,
    pub indenter_id: String,
}

impl TactileSample {
    pub fn frame_image(&self) -> Image<f32> {
        Image::from_bytes(self.width, self.height, 3, &self.frame).expect("stored frame is valid")
    }

    pub fn depth_image(&self) -> Option<Image<f32>> {
        self.depth
            .as_ref()
            .map(|d| Image::from_bytes(self.width, self.height, 1, d).expect("stored depth is valid"))
    }

    /// Largest depth byte, the deformation value of the polynomial baseline.
    pub fn max_deformation(&self) -> Option<u8> {
        self.depth.as_ref().map(|d| d.iter().copied().max().unwrap_or(0))
    }
}

fn resized(img: Image<f32>, width: usize, height: usize) -> Result<Image<f32>> {
    if img.width() == width && img.height() == height {
        Ok(img)
    } else {
        resize_bilinear(&img, width, height)
    }
}

/// Loads frames (and depth images when present) resized to the model
/// resolution.
pub fn load_samples(samples: &[ForceSample], width: usize, height: usize) -> Result<Vec<TactileSample>> {
    samples
        .iter()
        .map(|s| {
            let frame: Image<f32> = load_image(&s.frame_path)?;
            if frame.channels() != 3 {
                return Err(Error::Shape(format!("{} is not an RGB frame", s.frame_path.display())));
            }
            let frame = resized(frame, width, height)?;
            let depth = match &s.depth_path {
                Some(p) => {
                    let d: Image<f32> = load_image(p)?;
                    if d.channels() != 1 {
                        return Err(Error::Shape(format!("{} is not a one-channel depth image", p.display())));
                    }
                    Some(resized(d, width, height)?.to_bytes())
                }
                None => None,
            };
            Ok(TactileSample {
                width,
                height,
                frame: frame.to_bytes(),
                depth,
                force_n: s.force_n,
                indenter_id: s.indenter_id.clone(),
            })
        })
        .collect()
}
