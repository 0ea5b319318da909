//! Poisson integration of gradient fields with zero Dirichlet boundary.
//!
//! Unknowns are the interior pixels; border pixels stay at zero. The
//! right-hand side is the central-difference divergence of the gradient
//! field and the operator is the 5-point Laplacian on the unit grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DepthMap, GradientField};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest grid side accepted by [`dense_poisson_solve`].
pub const DENSE_MAX_SIDE: usize = 64;

/// Central-difference divergence at interior pixels, row-major `(w-2)×(h-2)`.
pub fn interior_divergence<T: Real>(g: &GradientField<T>) -> Vec<f64> {
    let (w, h) = (g.width(), g.height());
    let mut f = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let dx = g.gx(x + 1, y).as_f64() - g.gx(x - 1, y).as_f64();
            let dy = g.gy(x, y + 1).as_f64() - g.gy(x, y - 1).as_f64();
            f.push(0.5 * (dx + dy));
        }
    }
    f
}

fn check_grid<T: Real>(g: &GradientField<T>) -> Result<()> {
    if g.width() < 3 || g.height() < 3 {
        return Err(Error::DegenerateGrid(format!(
            "Poisson solve needs at least 3x3 pixels, got {}x{}",
            g.width(),
            g.height()
        )));
    }
    if !g.is_finite() {
        return Err(Error::InvalidArgument("gradient field contains non-finite values".into()));
    }
    Ok(())
}

fn embed<T: Real>(w: usize, h: usize, interior: &[f64]) -> DepthMap<T> {
    let mut out = vec![T::zero(); w * h];
    let iw = w - 2;
    for (i, &v) in interior.iter().enumerate() {
        let (x, y) = (i % iw + 1, i / iw + 1);
        out[y * w + x] = T::lit(v);
    }
    DepthMap::new(w, h, out).expect("embedded depth has grid dimensions")
}

/// Type-I discrete sine transform through a real-odd FFT extension:
/// `X_k = Σ_{j=1..n} x_j sin(π j k / (n + 1))`.
struct Dst1 {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
}

impl Dst1 {
    fn new(n: usize, planner: &mut FftPlanner<f64>) -> Self {
        let len = 2 * (n + 1);
        Self {
            n,
            fft: planner.plan_fft_forward(len),
            buf: vec![Complex::new(0.0, 0.0); len],
        }
    }

    /// In-place transform of a strided line.
    fn apply(&mut self, data: &mut [f64], start: usize, stride: usize) {
        let n = self.n;
        let zero = Complex::new(0.0, 0.0);
        self.buf[0] = zero;
        self.buf[n + 1] = zero;
        for j in 0..n {
            let v = data[start + j * stride];
            self.buf[j + 1] = Complex::new(v, 0.0);
            self.buf[2 * n + 1 - j] = Complex::new(-v, 0.0);
        }
        self.fft.process(&mut self.buf);
        for k in 0..n {
            data[start + k * stride] = -0.5 * self.buf[k + 1].im;
        }
    }
}

/// Spectral solve with type-I sine transforms along both axes.
///
/// Eigenvalues of the Dirichlet 5-point Laplacian on an `nx × ny` interior
/// are `2cos(πi/(nx+1)) + 2cos(πj/(ny+1)) − 4`. Runs in `O(N log N)`.
pub fn dst_poisson_solve<T: Real>(g: &GradientField<T>) -> Result<DepthMap<T>> {
    check_grid(g)?;
    let (w, h) = (g.width(), g.height());
    let (nx, ny) = (w - 2, h - 2);
    let mut f = interior_divergence(g);

    let mut planner = FftPlanner::new();
    let mut row_t = Dst1::new(nx, &mut planner);
    let mut col_t = Dst1::new(ny, &mut planner);
    for y in 0..ny {
        row_t.apply(&mut f, y * nx, 1);
    }
    for x in 0..nx {
        col_t.apply(&mut f, x, nx);
    }

    let cx: Vec<f64> = (1..=nx)
        .map(|i| 2.0 * (std::f64::consts::PI * i as f64 / (nx + 1) as f64).cos())
        .collect();
    let cy: Vec<f64> = (1..=ny)
        .map(|j| 2.0 * (std::f64::consts::PI * j as f64 / (ny + 1) as f64).cos())
        .collect();
    let norm = 4.0 / ((nx + 1) * (ny + 1)) as f64;
    for (j, row) in f.chunks_mut(nx).enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            *v *= norm / (cx[i] + cy[j] - 4.0);
        }
    }

    for y in 0..ny {
        row_t.apply(&mut f, y * nx, 1);
    }
    for x in 0..nx {
        col_t.apply(&mut f, x, nx);
    }
    Ok(embed(w, h, &f))
}

/// Direct solve of the explicitly assembled 5-point system (test oracle).
///
/// Uses a Cholesky factorization of the negated Laplacian, which is
/// symmetric positive definite.
pub fn dense_poisson_solve<T: Real>(g: &GradientField<T>) -> Result<DepthMap<T>> {
    check_grid(g)?;
    let (w, h) = (g.width(), g.height());
    if w > DENSE_MAX_SIDE || h > DENSE_MAX_SIDE {
        return Err(Error::InvalidArgument(format!(
            "dense Poisson solve limited to {DENSE_MAX_SIDE}x{DENSE_MAX_SIDE}, got {w}x{h}"
        )));
    }
    let (nx, ny) = (w - 2, h - 2);
    let n = nx * ny;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            a[(i, i)] = 4.0;
            if x > 0 {
                a[(i, i - 1)] = -1.0;
            }
            if x + 1 < nx {
                a[(i, i + 1)] = -1.0;
            }
            if y > 0 {
                a[(i, i - nx)] = -1.0;
            }
            if y + 1 < ny {
                a[(i, i + nx)] = -1.0;
            }
        }
    }
    let rhs = DVector::from_iterator(n, interior_divergence(g).into_iter().map(|v| -v));
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("Laplacian factorization failed".into()))?;
    let u = chol.solve(&rhs);
    Ok(embed(w, h, u.as_slice()))
}
