//! Dense-matrix statistics: covariance, centering, and ZCA whitening.

mod optim;
mod rng;

pub use optim::{Optimizer, OptimizerKind};
pub use rng::{SeedRng, RNG_ALGORITHM};

use crate::{Error, Mat, Result, Vec64};

/// Per-column means of `m` as a row-shaped vector.
pub fn column_means(m: &Mat) -> Vec64 {
    let n = m.nrows() as f64;
    Vec64::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Subtracts the column mean from every entry; rows keep their order.
pub fn center_columns(m: &Mat) -> Mat {
    let means = column_means(m);
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Sample covariance with the N-1 denominator, symmetrized exactly.
pub fn covariance(z: &Mat) -> Result<Mat> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: n });
    }
    let c = center_columns(z);
    let mut cov = c.transpose() * &c;
    cov.unscale_mut((n - 1) as f64);
    // force exact symmetry
    let t = cov.transpose();
    cov = (cov + t).unscale(2.0);
    Ok(cov)
}

/// ZCA whitening: centers `y` and applies the symmetric inverse square root
/// of `covariance(y) + eps * I`.
///
/// Returns `(whitened, transform, mean)` such that
/// `whitened = (y - mean) * transform` and, for `eps = 0`,
/// `covariance(whitened) = I` up to roundoff.
pub fn whiten(y: &Mat, eps: f64) -> Result<(Mat, Mat, Vec64)> {
    let (n, d) = (y.nrows(), y.ncols());
    if n <= d {
        return Err(Error::InsufficientSamples { need: d + 1, got: n });
    }
    if eps < 0.0 {
        return Err(Error::InvalidParameter("whitening eps must be >= 0".into()));
    }
    let cov = covariance(y)?;
    let eig = cov.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let floor = max_eig.max(1.0) * 1e-12;
    if eig.eigenvalues.iter().any(|&l| l + eps <= floor) {
        return Err(Error::RankDeficient);
    }
    // transform = V diag(1/sqrt(lambda + eps)) V^T
    let mut scaled = eig.eigenvectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col.scale_mut(1.0 / (eig.eigenvalues[j] + eps).sqrt());
    }
    let transform = &scaled * eig.eigenvectors.transpose();
    let mean = column_means(y);
    let white = center_columns(y) * &transform;
    Ok((white, transform, mean))
}
