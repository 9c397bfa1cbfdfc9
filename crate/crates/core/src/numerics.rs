//! Complex linear algebra and transforms shared by the simulator.
//!
//! The DFT is unitary in both directions (`1/sqrt(n)` scaling), so per-bin
//! noise variance equals per-sample noise variance and channel powers do
//! not depend on the transform convention.

use std::cell::RefCell;

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Dense complex matrix used throughout the crate.
pub type CMatrix = DMatrix<Complex64>;

/// Random number generator used by every simulation stream (ChaCha with 8
/// rounds, portable and reproducible across platforms).
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Singular values below `PINV_RCOND * sigma_max` are treated as zero.
pub const PINV_RCOND: f64 = 1e-12;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transform(x: &[Complex64], n: usize, inverse: bool) -> Result<Vec<Complex64>> {
    if x.len() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            actual: x.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    let mut buf = x.to_vec();
    fft.process(&mut buf);
    let scale = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(buf)
}

/// Unitary forward DFT of length `n`.
pub fn dft(x: &[Complex64], n: usize) -> Result<Vec<Complex64>> {
    transform(x, n, false)
}

/// Unitary inverse DFT of length `n`.
pub fn idft(x: &[Complex64], n: usize) -> Result<Vec<Complex64>> {
    transform(x, n, true)
}

/// Moore-Penrose pseudoinverse together with the numerical rank used to
/// form it.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: CMatrix,
    pub rank: usize,
}

/// Pseudoinverse through the singular value decomposition.
pub fn pinv(a: &CMatrix) -> Result<CMatrix> {
    pinv_with_rank(a).map(|p| p.matrix)
}

pub fn pinv_with_rank(a: &CMatrix) -> Result<PseudoInverse> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::DimensionMismatch(format!(
            "pseudoinverse of an empty {rows}x{cols} matrix"
        )));
    }
    if a.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
        return Ok(PseudoInverse {
            matrix: CMatrix::zeros(cols, rows),
            rank: 0,
        });
    }
    let svd = a
        .clone()
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or(Error::SvdNoConvergence { rows, cols })?;
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::SvdNoConvergence { rows, cols }),
    };
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = PINV_RCOND * sigma_max;

    // A^+ = V diag(1/s) U^H, skipping singular values under the cutoff.
    let mut out = CMatrix::zeros(cols, rows);
    let mut rank = 0;
    for (i, &s) in sigma.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        rank += 1;
        let inv = 1.0 / s;
        let v_col = v_t.row(i).adjoint();
        let u_col = u.column(i);
        for c in 0..rows {
            let uc = u_col[c].conj() * inv;
            for r in 0..cols {
                out[(r, c)] += v_col[r] * uc;
            }
        }
    }
    Ok(PseudoInverse { matrix: out, rank })
}

/// Solves `a * x = b` for Hermitian positive-definite `a` by Cholesky
/// factorisation.
pub fn herm_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let (n, m) = a.shape();
    if n != m {
        return Err(Error::DimensionMismatch(format!(
            "herm_solve needs a square matrix, got {n}x{m}"
        )));
    }
    if b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "right-hand side has {} rows, system has {n}",
            b.nrows()
        )));
    }
    let chol = Cholesky::new(a.clone())
        .ok_or_else(|| Error::Singular("matrix is not Hermitian positive definite".into()))?;
    let x = chol.solve(b);
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Singular("non-finite solution".into()));
    }
    Ok(x)
}

/// Draws one circularly-symmetric complex Gaussian sample with total power
/// `variance` (each quadrature gets half).
pub fn sample_cgauss<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Result<Complex64> {
    if variance < 0.0 || variance.is_nan() {
        return Err(Error::NegativeVariance(variance));
    }
    if variance == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Ok(Complex64::new(re * s, im * s))
}

/// Squared Euclidean norm of a complex slice.
pub fn norm_sqr(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}
