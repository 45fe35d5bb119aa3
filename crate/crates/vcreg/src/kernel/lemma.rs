//! Numerical checks of the projector/covariance identities.
//!
//! For an elementwise scalar map `g` applied columnwise to `X` (giving `Z`),
//! the sum of pairwise HSIC values under the outer-product kernels
//! `K_i = g(x_i) g(x_i)^T` equals the sum of squared off-diagonal entries of
//! `Cov(Z)` — an algebraic identity at the estimator level (`lemma1_residual`).
//!
//! For a linear projector `Z = X W` with row-orthonormal `W` and equal column
//! variances `v` in `X`, the sum of pairwise linear-kernel HSIC values equals
//! `||Cov(XW) - v W^T W||_F^2` (`lemma2_residual`, exact mode). Note the
//! subtracted term: `v W^T W` is what `Cov(XW)` becomes once `X` is pairwise
//! decorrelated; for generic orthonormal `W` it is *not* the diagonal of
//! `Cov(XW)`, and replacing it by that diagonal breaks the identity. With raw
//! `W ~ U(-1/sqrt(D), 1/sqrt(D))` the identity holds only approximately and
//! the relative deviation shrinks as the output width grows, at the
//! central-limit rate `O(1/sqrt(P))`.

use super::{hsic_from_kernels, Normalization};
use crate::numerics::covariance;
use crate::{Error, Mat, Result};

/// Both sides of an identity check and their gap.
#[derive(Debug, Clone)]
pub struct LemmaResidual {
    pub kernel_side: f64,
    pub covariance_side: f64,
    /// |kernel_side - covariance_side| / (1 + max(|kernel_side|, |covariance_side|))
    pub relative: f64,
}

fn residual(kernel_side: f64, covariance_side: f64) -> LemmaResidual {
    let relative = (kernel_side - covariance_side).abs()
        / (1.0 + kernel_side.abs().max(covariance_side.abs()));
    LemmaResidual { kernel_side, covariance_side, relative }
}

/// Elementwise-projector identity check (L = 1 case).
///
/// Kernel side: sum over i != j of HSIC under rank-one kernels
/// `g(x_i) g(x_i)^T`, computed through the generic kernel-trace path.
/// Covariance side: sum over i != j of `Cov(g(X))^2[i,j]`.
pub fn lemma1_residual<F: Fn(f64) -> f64>(x: &Mat, g: F) -> Result<LemmaResidual> {
    let (n, d) = (x.nrows(), x.ncols());
    if n < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: n });
    }
    let z = x.map(&g);
    let cols: Vec<Mat> = (0..d)
        .map(|j| Mat::from_column_slice(n, 1, z.column(j).as_slice()))
        .collect();
    let kernels: Vec<Mat> = cols.iter().map(|c| c * c.transpose()).collect();

    let mut kernel_side = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                kernel_side += hsic_from_kernels(&kernels[i], &kernels[j], Normalization::Unbiased)?;
            }
        }
    }
    let cov = covariance(&z)?;
    let mut covariance_side = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                covariance_side += cov[(i, j)] * cov[(i, j)];
            }
        }
    }
    Ok(residual(kernel_side, covariance_side))
}

/// How the linear-projector check treats the weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lemma2Mode {
    /// Row-orthonormalize `W` by QR first; the identity is exact.
    Exact,
    /// Use `W` as given (raw random draws); reports the relative deviation.
    Random,
}

/// Linear-projector identity check.
///
/// Requires all columns of `x` to have (nearly) equal variance. In
/// [`Lemma2Mode::Exact`] the returned `relative` is a roundoff-level
/// residual; in [`Lemma2Mode::Random`] it is the relative deviation between
/// the scale-normalized covariance side and the kernel side, expected to
/// shrink like `1/sqrt(P)`.
pub fn lemma2_residual(x: &Mat, w: &Mat, mode: Lemma2Mode) -> Result<LemmaResidual> {
    let (n, d) = (x.nrows(), x.ncols());
    let p = w.ncols();
    if w.nrows() != d {
        return Err(Error::ShapeMismatch(format!(
            "W must be {d}xP, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: n });
    }
    let cov_x = covariance(x)?;
    let vars: Vec<f64> = (0..d).map(|i| cov_x[(i, i)]).collect();
    let mean_var = vars.iter().sum::<f64>() / d as f64;
    let spread = vars
        .iter()
        .map(|v| (v - mean_var).abs())
        .fold(0.0_f64, f64::max)
        / mean_var.max(f64::MIN_POSITIVE);
    if spread > 1e-6 {
        return Err(Error::LemmaPremiseViolated(spread));
    }

    let w_used = match mode {
        Lemma2Mode::Exact => {
            if p < d {
                return Err(Error::InvalidParameter(
                    "exact mode needs P >= D for row-orthonormal W".into(),
                ));
            }
            // orthonormalize the rows: QR on W^T, keep Q^T
            let q = w.transpose().qr().q();
            q.transpose()
        }
        Lemma2Mode::Random => w.clone(),
    };

    // kernel side: pairwise linear-kernel HSIC through the kernel-trace path
    let cols: Vec<Mat> = (0..d)
        .map(|j| Mat::from_column_slice(n, 1, x.column(j).as_slice()))
        .collect();
    let kernels: Vec<Mat> = cols.iter().map(|c| c * c.transpose()).collect();
    let mut kernel_side = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                kernel_side += hsic_from_kernels(&kernels[i], &kernels[j], Normalization::Unbiased)?;
            }
        }
    }

    // covariance side: ||Cov(XW) - v W^T W||_F^2
    let z = x * &w_used;
    let cov_z = covariance(&z)?;
    let target = w_used.transpose() * &w_used * mean_var;
    let mut covariance_side = (cov_z - target).norm_squared();

    if mode == Lemma2Mode::Random {
        // remove the expected scale (P/(3D))^2 of U(+-1/sqrt(D)) rows
        let c = p as f64 / (3.0 * d as f64);
        covariance_side /= c * c;
        let deviation = (covariance_side - kernel_side).abs() / kernel_side.abs().max(f64::MIN_POSITIVE);
        return Ok(LemmaResidual { kernel_side, covariance_side, relative: deviation });
    }
    Ok(residual(kernel_side, covariance_side))
}
