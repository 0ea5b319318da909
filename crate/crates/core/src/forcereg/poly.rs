use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{quantize, Image};
use crate::scalar::Real;

/// `F = c0 + c1·m + c2·m² + c3·m³` with `m` the maximum depth byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    pub coeffs: [f64; 4],
    /// Root-mean-square residual on the fitted points, newtons.
    pub residual_rms: f64,
}

impl PolyModel {
    pub fn eval(&self, m: f64) -> f64 {
        let c = &self.coeffs;
        c[0] + m * (c[1] + m * (c[2] + m * c[3]))
    }
}

/// Least-squares cubic through `(max_deformation_byte, force_n)` pairs.
///
/// The abscissa is scaled to `m / 255` for conditioning and the coefficients
/// are mapped back afterwards.
pub fn fit_poly_baseline(points: &[(f64, f64)]) -> Result<PolyModel> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::RankDeficient(format!(
            "a cubic fit needs 4 distinct deformation values, got {}",
            distinct.len()
        )));
    }
    if points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(Error::InvalidArgument("non-finite fit point".into()));
    }
    const S: f64 = 255.0;
    let n = points.len();
    let a = DMatrix::from_fn(n, 4, |i, j| (points[i].0 / S).powi(j as i32));
    let b = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let svd = a.clone().svd(true, true);
    let u = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::RankDeficient(format!("cubic fit: {e}")))?;
    let coeffs = [u[0], u[1] / S, u[2] / (S * S), u[3] / (S * S * S)];
    let model = PolyModel {
        coeffs,
        residual_rms: 0.0,
    };
    let sse: f64 = points.iter().map(|&(m, f)| (model.eval(m) - f).powi(2)).sum();
    Ok(PolyModel {
        residual_rms: (sse / n as f64).sqrt(),
        ..model
    })
}

/// Evaluates the cubic at the largest byte value of a depth image.
pub fn poly_predict<T: Real>(model: &PolyModel, depth: &Image<T>) -> f64 {
    let m = depth.data().iter().map(|&v| quantize(v)).max().unwrap_or(0);
    model.eval(m as f64)
}
