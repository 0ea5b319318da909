//! Force-estimation metrics: relative error, MAE and relative error per
//! 1 N force interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-bin statistics cover `[BIN_MIN, BIN_MAX)` newtons in 1 N steps.
pub const BIN_MIN: f64 = 1.0;
pub const BIN_MAX: f64 = 20.0;

/// `|pred − gt| / gt`.
pub fn relative_error(pred: f64, gt: f64) -> Result<f64> {
    if !(gt > 0.0) {
        return Err(Error::InvalidArgument(format!("ground-truth force {gt} must be positive")));
    }
    Ok((pred - gt).abs() / gt)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("statistics of an empty set".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt() })
    }
}

fn check_pairs(preds: &[f64], gts: &[f64]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} ground-truth forces",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    Ok(())
}

pub fn mae(preds: &[f64], gts: &[f64]) -> Result<MeanStd> {
    check_pairs(preds, gts)?;
    let abs: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| (p - g).abs()).collect();
    MeanStd::of(&abs)
}

pub fn relative_errors(preds: &[f64], gts: &[f64]) -> Result<Vec<f64>> {
    check_pairs(preds, gts)?;
    preds.iter().zip(gts).map(|(&p, &g)| relative_error(p, g)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub re: Option<MeanStd>,
}

fn bin_index(gt: f64) -> Result<usize> {
    if !(BIN_MIN..BIN_MAX).contains(&gt) {
        return Err(Error::InvalidArgument(format!(
            "force {gt} N outside the binned range [{BIN_MIN}, {BIN_MAX})"
        )));
    }
    Ok((gt - BIN_MIN).floor() as usize)
}

/// Relative error per half-open 1 N interval; every interval of the range is
/// listed, empty ones with count 0.
pub fn binned_re(preds: &[f64], gts: &[f64]) -> Result<Vec<BinStat>> {
    let re = relative_errors(preds, gts)?;
    let nbins = (BIN_MAX - BIN_MIN) as usize;
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); nbins];
    for (&g, r) in gts.iter().zip(re) {
        groups[bin_index(g)?].push(r);
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            Ok(BinStat {
                lo: BIN_MIN + i as f64,
                hi: BIN_MIN + i as f64 + 1.0,
                count: v.len(),
                re: if v.is_empty() { None } else { Some(MeanStd::of(&v)?) },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub mae_n: MeanStd,
    pub re: MeanStd,
    pub per_bin: Vec<BinStat>,
}

impl MetricReport {
    pub fn compute(preds: &[f64], gts: &[f64]) -> Result<Self> {
        Ok(Self {
            count: preds.len(),
            mae_n: mae(preds, gts)?,
            re: MeanStd::of(&relative_errors(preds, gts)?)?,
            per_bin: binned_re(preds, gts)?,
        })
    }

    /// Sample-weighted mean of the per-bin RE means over the bins
    /// `[lo, hi)` newtons.
    pub fn re_over(&self, lo: f64, hi: f64) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for b in self.per_bin.iter().filter(|b| b.lo >= lo && b.hi <= hi) {
            if let Some(re) = b.re {
                sum += re.mean * b.count as f64;
                n += b.count;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}
