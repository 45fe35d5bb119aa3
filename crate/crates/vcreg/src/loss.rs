//! The VCReg loss family with exact analytic gradients.
//!
//! `vc_loss` is the anti-collapse term: a hinge pushing every feature's
//! standard deviation up to one, plus `alpha` times the squared off-diagonal
//! covariance entries. `vicreg_loss` adds an invariance (MSE) term between
//! two branches, with the variance/covariance part evaluated on the stacked
//! `2N x P` embedding. `barlow_twins_loss` penalizes the deviation of the
//! branch cross-correlation matrix from identity.
//!
//! Gradients are computed in closed form and checked against central finite
//! differences in the tests. The hinge gradient clamps the per-feature
//! standard deviation at `STD_FLOOR` so degenerate (collapsed) features get a
//! finite push instead of the diverging derivative of `-sqrt(v)` at zero.

use crate::numerics::center_columns;
use crate::{Error, Mat, Result};

/// Floor on the standard deviation used in the hinge gradient path.
pub const STD_FLOOR: f64 = 1e-4;

/// Term weights for the VICReg composition.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct VcWeights {
    pub variance: f64,
    pub covariance: f64,
    pub invariance: f64,
}

impl VcWeights {
    pub fn new(variance: f64, covariance: f64, invariance: f64) -> Result<Self> {
        for (name, v) in [("variance", variance), ("covariance", covariance), ("invariance", invariance)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} weight must be finite and >= 0")));
            }
        }
        Ok(Self { variance, covariance, invariance })
    }
}

/// Named loss components; unused components stay at zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossTerms {
    pub variance: f64,
    pub covariance: f64,
    pub invariance: f64,
    pub reconstruction: f64,
}

/// A loss value with its decomposition and input gradient(s).
#[derive(Debug, Clone)]
pub struct LossValue {
    pub total: f64,
    pub terms: LossTerms,
    /// Gradient with respect to the (left) input.
    pub grad: Mat,
    /// Gradient with respect to the right input, for two-branch losses.
    pub grad_right: Option<Mat>,
}

/// Unweighted variance-hinge and covariance terms of Eq.-5 style VCReg,
/// with their separate gradients with respect to `z`.
struct VcParts {
    variance: f64,
    covariance: f64,
    grad_variance: Mat,
    grad_covariance: Mat,
}

/// Computes both VC terms. Uses the P x P covariance when P <= N and an
/// equivalent N x N Gram formulation when P > N (same math, cheaper for wide
/// embeddings).
fn vc_parts(z: &Mat) -> Result<VcParts> {
    let (n, p) = (z.nrows(), z.ncols());
    if n < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: n });
    }
    let nm1 = (n - 1) as f64;
    let zc = center_columns(z);

    let diag: Vec<f64> = (0..p).map(|k| zc.column(k).norm_squared() / nm1).collect();
    let mut variance = 0.0;
    // dL/dC_kk for the hinge, 0 when inactive
    let mut hinge_grad = vec![0.0; p];
    for k in 0..p {
        let std = diag[k].sqrt();
        if std < 1.0 {
            variance += 1.0 - std;
            hinge_grad[k] = -0.5 / std.max(STD_FLOOR);
        }
    }
    // grad of the hinge term: (2/(N-1)) Zc diag(hinge_grad)
    let mut grad_variance = zc.clone();
    for (k, mut col) in grad_variance.column_iter_mut().enumerate() {
        col.scale_mut(2.0 / nm1 * hinge_grad[k]);
    }

    let (covariance, grad_covariance) = if p <= n {
        let c = zc.transpose() * &zc / nm1;
        let mut cov = 0.0;
        for a in 0..p {
            for b in 0..p {
                if a != b {
                    cov += c[(a, b)] * c[(a, b)];
                }
            }
        }
        // G_kj = 2 C_kj off-diagonal; grad = (2/(N-1)) Zc G
        let mut g = c.clone();
        for k in 0..p {
            g[(k, k)] = 0.0;
        }
        (cov, &zc * g * (4.0 / nm1))
    } else {
        let gram = &zc * zc.transpose();
        let cov = gram.norm_squared() / (nm1 * nm1) - diag.iter().map(|d| d * d).sum::<f64>();
        // grad = (4/(N-1)) (Gram Zc / (N-1) - Zc diag(C))
        let mut zd = zc.clone();
        for (k, mut col) in zd.column_iter_mut().enumerate() {
            col.scale_mut(diag[k]);
        }
        let grad = (gram * &zc / nm1 - zd) * (4.0 / nm1);
        (cov, grad)
    };

    Ok(VcParts { variance, covariance, grad_variance, grad_covariance })
}

/// Eq.-5 VCReg loss: variance hinge + `alpha` * squared off-diagonal
/// covariance, with the analytic gradient with respect to `z`.
pub fn vc_loss(z: &Mat, alpha: f64) -> Result<LossValue> {
    let parts = vc_parts(z)?;
    let total = parts.variance + alpha * parts.covariance;
    let grad = parts.grad_variance + parts.grad_covariance * alpha;
    Ok(LossValue {
        total,
        terms: LossTerms { variance: parts.variance, covariance: parts.covariance, ..Default::default() },
        grad,
        grad_right: None,
    })
}

/// VC terms with independent weights on the variance hinge and the
/// covariance penalty (single branch, no invariance).
pub fn vc_loss_weighted(z: &Mat, var_weight: f64, cov_weight: f64) -> Result<LossValue> {
    let parts = vc_parts(z)?;
    let total = var_weight * parts.variance + cov_weight * parts.covariance;
    let grad = parts.grad_variance * var_weight + parts.grad_covariance * cov_weight;
    Ok(LossValue {
        total,
        terms: LossTerms { variance: parts.variance, covariance: parts.covariance, ..Default::default() },
        grad,
        grad_right: None,
    })
}

/// Pushes the sample covariance of the batch toward identity: with rows of
/// `z` as variables and features as observations, C = Zr·Zrᵀ/(P−1) where Zr
/// is `z` with row means removed. The diagonal term `Σₐ(Cₐₐ−1)²/N²` (weighted
/// by `var_weight`) drives every embedding to unit spread; the off-diagonal
/// term `Σ_{a≠b}C²ₐb/N²` (weighted by `cov_weight`) decorrelates distinct
/// samples' embeddings. With equal weights this is the mean squared
/// deviation of C from identity.
pub fn gram_identity_loss(z: &Mat, var_weight: f64, cov_weight: f64) -> Result<LossValue> {
    let (n, p) = z.shape();
    if n < 2 || p < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 samples and 2 features, got {n}x{p}"
        )));
    }
    if !(var_weight.is_finite() && cov_weight.is_finite()) || var_weight < 0.0 || cov_weight < 0.0
    {
        return Err(Error::InvalidParameter("loss weights must be finite and >= 0".into()));
    }
    let mut zr = z.clone();
    for i in 0..n {
        let mean = zr.row(i).sum() / p as f64;
        for j in 0..p {
            zr[(i, j)] -= mean;
        }
    }
    let c = &zr * zr.transpose() / (p as f64 - 1.0);
    let inv_n2 = 1.0 / (n * n) as f64;
    let mut variance = 0.0;
    let mut covariance = 0.0;
    // dL/dC, symmetric by construction.
    let mut dc = Mat::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            if a == b {
                let dev = c[(a, a)] - 1.0;
                variance += dev * dev;
                dc[(a, a)] = 2.0 * var_weight * inv_n2 * dev;
            } else {
                covariance += c[(a, b)] * c[(a, b)];
                dc[(a, b)] = 2.0 * cov_weight * inv_n2 * c[(a, b)];
            }
        }
    }
    variance *= var_weight * inv_n2;
    covariance *= cov_weight * inv_n2;
    // dL/dZr = (dC + dCᵀ)·Zr/(P−1) = 2·dC·Zr/(P−1), then back through the
    // row centering.
    let d_zr = &dc * &zr * (2.0 / (p as f64 - 1.0));
    let mut grad = d_zr.clone();
    for i in 0..n {
        let mean = d_zr.row(i).sum() / p as f64;
        for j in 0..p {
            grad[(i, j)] -= mean;
        }
    }
    Ok(LossValue {
        total: variance + covariance,
        terms: LossTerms { variance, covariance, ..Default::default() },
        grad,
        grad_right: None,
    })
}

/// Mean squared row distance between the two branches.
pub fn invariance_loss(z_left: &Mat, z_right: &Mat) -> Result<LossValue> {
    if z_left.shape() != z_right.shape() {
        return Err(Error::ShapeMismatch(format!(
            "branch shapes differ: {:?} vs {:?}",
            z_left.shape(),
            z_right.shape()
        )));
    }
    let n = z_left.nrows() as f64;
    let diff = z_left - z_right;
    let value = diff.norm_squared() / n;
    let grad = &diff * (2.0 / n);
    Ok(LossValue {
        total: value,
        terms: LossTerms { invariance: value, ..Default::default() },
        grad: grad.clone(),
        grad_right: Some(-grad),
    })
}

/// VICReg: weighted invariance term plus the VC terms evaluated on the
/// stacked `[Z_left; Z_right]` matrix.
pub fn vicreg_loss(z_left: &Mat, z_right: &Mat, weights: &VcWeights) -> Result<LossValue> {
    let inv = invariance_loss(z_left, z_right)?;
    let (n, p) = z_left.shape();
    let mut stacked = Mat::zeros(2 * n, p);
    stacked.rows_mut(0, n).copy_from(z_left);
    stacked.rows_mut(n, n).copy_from(z_right);
    let parts = vc_parts(&stacked)?;

    let total = weights.variance * parts.variance
        + weights.covariance * parts.covariance
        + weights.invariance * inv.total;
    let vc_grad = parts.grad_variance * weights.variance + parts.grad_covariance * weights.covariance;
    let grad = vc_grad.rows(0, n).clone_owned() + inv.grad * weights.invariance;
    let grad_right =
        vc_grad.rows(n, n).clone_owned() + inv.grad_right.unwrap() * weights.invariance;
    Ok(LossValue {
        total,
        terms: LossTerms {
            variance: parts.variance,
            covariance: parts.covariance,
            invariance: inv.total,
            reconstruction: 0.0,
        },
        grad,
        grad_right: Some(grad_right),
    })
}

/// Cosine-similarity cross-correlation between batch-centered columns of the
/// two branches: `C[i,j] = <a_i, b_j> / (|a_i| |b_j|)`.
pub fn cross_correlation(z_left: &Mat, z_right: &Mat) -> Result<Mat> {
    let (a_hat, _) = centered_unit_columns(z_left)?;
    let (b_hat, _) = centered_unit_columns(z_right)?;
    Ok(a_hat.transpose() * b_hat)
}

fn centered_unit_columns(z: &Mat) -> Result<(Mat, Vec<f64>)> {
    let mut c = center_columns(z);
    let mut norms = Vec::with_capacity(z.ncols());
    for (j, mut col) in c.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::ConstantColumn(j));
        }
        col.scale_mut(1.0 / norm);
        norms.push(norm);
    }
    Ok((c, norms))
}

/// BarlowTwins loss on the cross-correlation matrix:
/// `sum_k (C_kk - 1)^2 + alpha * sum_{k' != k} C_kk'^2`.
pub fn barlow_twins_loss(z_left: &Mat, z_right: &Mat, alpha: f64) -> Result<LossValue> {
    if z_left.shape() != z_right.shape() {
        return Err(Error::ShapeMismatch(format!(
            "branch shapes differ: {:?} vs {:?}",
            z_left.shape(),
            z_right.shape()
        )));
    }
    let p = z_left.ncols();
    let (a_hat, a_norms) = centered_unit_columns(z_left)?;
    let (b_hat, b_norms) = centered_unit_columns(z_right)?;
    let c = a_hat.transpose() * &b_hat;

    let mut diag_term = 0.0;
    let mut off_term = 0.0;
    let mut dc = Mat::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            if i == j {
                diag_term += (c[(i, i)] - 1.0).powi(2);
                dc[(i, i)] = 2.0 * (c[(i, i)] - 1.0);
            } else {
                off_term += c[(i, j)] * c[(i, j)];
                dc[(i, j)] = 2.0 * alpha * c[(i, j)];
            }
        }
    }
    let total = diag_term + alpha * off_term;

    // back through C = A_hat^T B_hat, the column normalization, and centering
    let d_a_hat = &b_hat * dc.transpose();
    let d_b_hat = &a_hat * &dc;
    let grad = grad_through_unit_columns(&a_hat, &a_norms, &d_a_hat);
    let grad_right = grad_through_unit_columns(&b_hat, &b_norms, &d_b_hat);

    Ok(LossValue {
        total,
        terms: LossTerms { variance: diag_term, covariance: off_term, ..Default::default() },
        grad,
        grad_right: Some(grad_right),
    })
}

/// Given unit columns `u = a/|a|` and `dL/du`, returns `dL/dZ` through the
/// normalization and the batch centering.
fn grad_through_unit_columns(unit: &Mat, norms: &[f64], d_unit: &Mat) -> Mat {
    let (n, p) = unit.shape();
    let mut grad = Mat::zeros(n, p);
    for j in 0..p {
        let u = unit.column(j);
        let du = d_unit.column(j);
        let proj = u.dot(&du);
        let g: Vec<f64> = (0..n).map(|i| (du[i] - proj * u[i]) / norms[j]).collect();
        let mean = g.iter().sum::<f64>() / n as f64;
        for (i, gi) in g.iter().enumerate() {
            grad[(i, j)] = gi - mean;
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{covariance, whiten, SeedRng};
    use approx::assert_relative_eq;

    fn randn(n: usize, p: usize, seed: u64) -> Mat {
        let mut rng = SeedRng::new(seed);
        Mat::from_fn(n, p, |_, _| rng.standard_normal())
    }

    /// Central finite differences of `f` at `points`, for gradient checks.
    fn finite_diff<F: Fn(&Mat) -> f64>(z: &Mat, f: F, step: f64) -> Mat {
        let mut g = Mat::zeros(z.nrows(), z.ncols());
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                let mut zp = z.clone();
                zp[(i, j)] += step;
                let mut zm = z.clone();
                zm[(i, j)] -= step;
                g[(i, j)] = (f(&zp) - f(&zm)) / (2.0 * step);
            }
        }
        g
    }

    fn max_rel_err(analytic: &Mat, numeric: &Mat) -> f64 {
        let scale = numeric.abs().max().max(1e-8);
        (analytic - numeric).abs().max() / scale
    }

    /// Data whose sample covariance is exactly the identity.
    fn whitened(n: usize, p: usize, seed: u64) -> Mat {
        let (w, _, _) = whiten(&randn(n, p, seed), 0.0).unwrap();
        w
    }

    #[test]
    fn vc_loss_zero_on_whitened_input() {
        let z = whitened(32, 4, 1);
        let l = vc_loss(&z, 1.0).unwrap();
        assert!(l.total.abs() < 1e-10, "total {}", l.total);
        // the hinge sits exactly at its kink here, so only the covariance
        // part of the gradient is constrained
        let cov_grad = vc_loss(&(&z * 1.5), 1.0).unwrap(); // vars > 1: hinge off
        assert_eq!(cov_grad.terms.variance, 0.0);
    }

    #[test]
    fn vc_loss_constant_input_costs_one_per_feature() {
        let z = Mat::from_element(16, 5, 2.0);
        let l = vc_loss(&z, 1.0).unwrap();
        assert_relative_eq!(l.total, 5.0, epsilon = 1e-12);
        assert_relative_eq!(l.terms.variance, 5.0, epsilon = 1e-12);
        assert_eq!(l.terms.covariance, 0.0);
    }

    #[test]
    fn vc_loss_gradient_matches_finite_differences() {
        let z = randn(32, 4, 2);
        let l = vc_loss(&z, 1.0).unwrap();
        let fd = finite_diff(&z, |m| vc_loss(m, 1.0).unwrap().total, 1e-5);
        assert!(max_rel_err(&l.grad, &fd) < 1e-5, "err {}", max_rel_err(&l.grad, &fd));
    }

    #[test]
    fn vc_loss_gram_and_covariance_paths_agree() {
        // P > N triggers the Gram path; compare against a tall copy
        let wide = randn(8, 20, 3);
        let l_wide = vc_loss(&wide, 0.7).unwrap();
        // force the covariance path by transposing the decision: evaluate the
        // same matrix through vc_parts with P <= N via padding rows
        // (instead, recompute covariance-path quantities directly)
        let nm1 = 7.0;
        let zc = center_columns(&wide);
        let c = zc.transpose() * &zc / nm1;
        let mut cov = 0.0;
        for a in 0..20 {
            for b in 0..20 {
                if a != b {
                    cov += c[(a, b)] * c[(a, b)];
                }
            }
        }
        assert_relative_eq!(l_wide.terms.covariance, cov, max_relative = 1e-12);
        let mut g = c.clone();
        for k in 0..20 {
            g[(k, k)] = 0.0;
        }
        let grad_cov = &zc * g * (4.0 / nm1);
        let mut hinge = Mat::zeros(8, 20);
        for k in 0..20 {
            let std = c[(k, k)].sqrt();
            if std < 1.0 {
                let mut col = zc.column(k).clone_owned();
                col.scale_mut(2.0 / nm1 * (-0.5 / std.max(STD_FLOOR)));
                hinge.column_mut(k).copy_from(&col);
            }
        }
        let expected = hinge + grad_cov * 0.7;
        assert!((l_wide.grad.clone() - expected).abs().max() < 1e-12);
    }

    #[test]
    fn vc_loss_is_row_permutation_invariant() {
        let z = randn(24, 5, 4);
        let l = vc_loss(&z, 1.3).unwrap();
        let mut rng = SeedRng::new(9);
        let mut idx: Vec<usize> = (0..24).collect();
        rng.shuffle(&mut idx);
        let zp = Mat::from_fn(24, 5, |i, j| z[(idx[i], j)]);
        let lp = vc_loss(&zp, 1.3).unwrap();
        assert_relative_eq!(l.total, lp.total, max_relative = 1e-12);
    }

    #[test]
    fn vc_covariance_term_is_mean_invariant() {
        let z = randn(24, 4, 5);
        let a = vc_loss(&z, 1.0).unwrap().terms.covariance;
        let mut shifted = z.clone();
        for (j, mut col) in shifted.column_iter_mut().enumerate() {
            col.add_scalar_mut(10.0 * (j as f64 + 1.0));
        }
        let b = vc_loss(&shifted, 1.0).unwrap().terms.covariance;
        assert!((a - b).abs() < 1e-10 * a.max(1.0));
    }

    #[test]
    fn gram_identity_loss_gradient_matches_finite_differences() {
        let z = randn(6, 24, 11);
        let l = gram_identity_loss(&z, 1.3, 0.6).unwrap();
        let fd = finite_diff(&z, |m| gram_identity_loss(m, 1.3, 0.6).unwrap().total, 1e-5);
        assert!(max_rel_err(&l.grad, &fd) < 1e-6, "err {}", max_rel_err(&l.grad, &fd));
    }

    #[test]
    fn gram_identity_loss_zero_on_orthonormal_rows() {
        // rows with zero mean, unit sample variance across features, and
        // orthogonal to each other: C is exactly the identity
        let p = 8;
        let mut z = Mat::zeros(2, p);
        let s = ((p - 1) as f64 / p as f64).sqrt();
        for j in 0..p {
            z[(0, j)] = if j % 2 == 0 { s } else { -s };
            z[(1, j)] = if (j / 2) % 2 == 0 { s } else { -s };
        }
        // make the rows orthogonal: pattern above has dot = 0 by construction
        let l = gram_identity_loss(&z, 1.0, 1.0).unwrap();
        assert!(l.total < 1e-20, "total {}", l.total);
    }

    #[test]
    fn gram_identity_loss_equal_weights_is_mse_to_identity() {
        let z = randn(5, 16, 13);
        let l = gram_identity_loss(&z, 1.0, 1.0).unwrap();
        // oracle: build C by hand and take the mean squared deviation
        let n = 5;
        let p = 16.0;
        let mut zr = z.clone();
        for i in 0..n {
            let mean = zr.row(i).sum() / p;
            for j in 0..16 {
                zr[(i, j)] -= mean;
            }
        }
        let c = &zr * zr.transpose() / (p - 1.0);
        let mut mse = 0.0;
        for a in 0..n {
            for b in 0..n {
                let t = if a == b { 1.0 } else { 0.0 };
                mse += (c[(a, b)] - t).powi(2);
            }
        }
        mse /= (n * n) as f64;
        assert_relative_eq!(l.total, mse, epsilon = 1e-12);
    }

    #[test]
    fn invariance_loss_zero_on_equal_branches() {
        let z = randn(16, 3, 6);
        let l = invariance_loss(&z, &z).unwrap();
        assert_eq!(l.total, 0.0);
        assert_eq!(l.grad.abs().max(), 0.0);
        assert_eq!(l.grad_right.unwrap().abs().max(), 0.0);
    }

    #[test]
    fn invariance_loss_all_ones_difference() {
        let zl = randn(8, 5, 7);
        let zr = &zl - Mat::from_element(8, 5, 1.0);
        let l = invariance_loss(&zl, &zr).unwrap();
        assert_relative_eq!(l.total, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn invariance_loss_gradients_match_finite_differences() {
        let zl = randn(12, 3, 8);
        let zr = randn(12, 3, 9);
        let l = invariance_loss(&zl, &zr).unwrap();
        let fd_l = finite_diff(&zl, |m| invariance_loss(m, &zr).unwrap().total, 1e-6);
        let fd_r = finite_diff(&zr, |m| invariance_loss(&zl, m).unwrap().total, 1e-6);
        assert!(max_rel_err(&l.grad, &fd_l) < 1e-6);
        assert!(max_rel_err(l.grad_right.as_ref().unwrap(), &fd_r) < 1e-6);
    }

    #[test]
    fn vicreg_zero_on_identical_whitened_branches() {
        // stacked [Z; Z] has the same covariance as Z
        let z = whitened(32, 4, 10);
        let w = VcWeights::new(1.0, 1.0, 1.0).unwrap();
        let l = vicreg_loss(&z, &z, &w).unwrap();
        // stacking duplicates rows: Cov doubles slightly via the (2N-1) denominator
        assert!(l.terms.invariance == 0.0);
        assert!(l.total < 0.05, "total {}", l.total);
    }

    #[test]
    fn vicreg_with_only_invariance_weight_reduces_to_invariance() {
        let zl = randn(16, 4, 11);
        let zr = randn(16, 4, 12);
        let w = VcWeights::new(0.0, 0.0, 1.0).unwrap();
        let v = vicreg_loss(&zl, &zr, &w).unwrap();
        let i = invariance_loss(&zl, &zr).unwrap();
        assert_eq!(v.total, i.total);
        assert_eq!(v.grad, i.grad);
        assert_eq!(v.grad_right.unwrap(), i.grad_right.unwrap());
    }

    #[test]
    fn vicreg_gradients_match_finite_differences() {
        let zl = randn(16, 4, 13);
        let zr = randn(16, 4, 14);
        let w = VcWeights::new(1.0, 0.5, 2.0).unwrap();
        let l = vicreg_loss(&zl, &zr, &w).unwrap();
        let fd_l = finite_diff(&zl, |m| vicreg_loss(m, &zr, &w).unwrap().total, 1e-5);
        let fd_r = finite_diff(&zr, |m| vicreg_loss(&zl, m, &w).unwrap().total, 1e-5);
        assert!(max_rel_err(&l.grad, &fd_l) < 1e-5);
        assert!(max_rel_err(l.grad_right.as_ref().unwrap(), &fd_r) < 1e-5);
        // total equals the weighted term sum
        let t = l.terms;
        assert_relative_eq!(
            l.total,
            1.0 * t.variance + 0.5 * t.covariance + 2.0 * t.invariance,
            max_relative = 1e-12
        );
    }

    #[test]
    fn cross_correlation_identity_for_decorrelated_self() {
        let z = whitened(64, 4, 15);
        let c = cross_correlation(&z, &z).unwrap();
        assert!((c - Mat::identity(4, 4)).abs().max() < 1e-10);
    }

    #[test]
    fn cross_correlation_sign_flip() {
        let z = randn(32, 3, 16);
        let c = cross_correlation(&z, &(-&z)).unwrap();
        let c_self = cross_correlation(&z, &z).unwrap();
        assert!((&c + c_self).abs().max() < 1e-12);
        for k in 0..3 {
            assert_relative_eq!(c[(k, k)], -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cross_correlation_matches_double_loop_oracle() {
        let zl = randn(24, 4, 17);
        let zr = randn(24, 4, 18);
        let c = cross_correlation(&zl, &zr).unwrap();
        let al = center_columns(&zl);
        let br = center_columns(&zr);
        for i in 0..4 {
            for j in 0..4 {
                let mut dot = 0.0;
                let mut na = 0.0;
                let mut nb = 0.0;
                for r in 0..24 {
                    dot += al[(r, i)] * br[(r, j)];
                    na += al[(r, i)] * al[(r, i)];
                    nb += br[(r, j)] * br[(r, j)];
                }
                assert_relative_eq!(c[(i, j)], dot / (na.sqrt() * nb.sqrt()), max_relative = 1e-12);
                assert!(c[(i, j)].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn cross_correlation_names_constant_column() {
        let mut z = randn(16, 3, 19);
        for i in 0..16 {
            z[(i, 2)] = 1.0;
        }
        match cross_correlation(&z, &z) {
            Err(Error::ConstantColumn(2)) => {}
            other => panic!("expected ConstantColumn(2), got {other:?}"),
        }
    }

    #[test]
    fn barlow_twins_zero_on_decorrelated_identical_branches() {
        let z = whitened(64, 4, 20);
        let l = barlow_twins_loss(&z, &z, 1.0).unwrap();
        assert!(l.total < 1e-10, "total {}", l.total);
    }

    #[test]
    fn barlow_twins_gradients_match_finite_differences() {
        let zl = randn(16, 4, 21);
        let zr = randn(16, 4, 22);
        let l = barlow_twins_loss(&zl, &zr, 0.8).unwrap();
        let fd_l = finite_diff(&zl, |m| barlow_twins_loss(m, &zr, 0.8).unwrap().total, 1e-5);
        let fd_r = finite_diff(&zr, |m| barlow_twins_loss(&zl, m, 0.8).unwrap().total, 1e-5);
        assert!(max_rel_err(&l.grad, &fd_l) < 1e-4, "left err {}", max_rel_err(&l.grad, &fd_l));
        assert!(max_rel_err(l.grad_right.as_ref().unwrap(), &fd_r) < 1e-4);
    }

    #[test]
    fn barlow_twins_is_invariant_under_shared_row_permutation() {
        let zl = randn(20, 3, 23);
        let zr = randn(20, 3, 24);
        let l = barlow_twins_loss(&zl, &zr, 1.0).unwrap();
        let mut rng = SeedRng::new(25);
        let mut idx: Vec<usize> = (0..20).collect();
        rng.shuffle(&mut idx);
        let pl = Mat::from_fn(20, 3, |i, j| zl[(idx[i], j)]);
        let pr = Mat::from_fn(20, 3, |i, j| zr[(idx[i], j)]);
        let lp = barlow_twins_loss(&pl, &pr, 1.0).unwrap();
        assert_relative_eq!(l.total, lp.total, max_relative = 1e-12);
    }

    #[test]
    fn barlow_twins_diag_term_co_orders_with_invariance_on_whitened_branches() {
        // exactly-whitened branches: as the branch gap grows along a
        // 1-parameter family, the BT diagonal term grows with the invariance loss
        let base = randn(64, 4, 26);
        let noise = randn(64, 4, 27);
        let (zl, _, _) = whiten(&base, 0.0).unwrap();
        let mut pairs = Vec::new();
        for step in 0..8 {
            let t = step as f64 * 0.25;
            let (zr, _, _) = whiten(&(&base + &noise * t), 0.0).unwrap();
            let inv = invariance_loss(&zl, &zr).unwrap().total;
            let bt = barlow_twins_loss(&zl, &zr, 1.0).unwrap().terms.variance;
            pairs.push((inv, bt));
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-12, "not co-ordered: {pairs:?}");
        }
    }

    #[test]
    fn gradient_suite_away_from_hinge_kinks() {
        // 50 random points per loss, rejecting draws near the hinge kink
        let mut accepted = 0;
        let mut seed = 1000;
        while accepted < 50 {
            seed += 1;
            let z = randn(16, 3, seed) * 1.7;
            let c = covariance(&z).unwrap();
            if (0..3).any(|k| (c[(k, k)].sqrt() - 1.0).abs() < 1e-3) {
                continue;
            }
            let l = vc_loss(&z, 1.0).unwrap();
            let fd = finite_diff(&z, |m| vc_loss(m, 1.0).unwrap().total, 1e-5);
            assert!(max_rel_err(&l.grad, &fd) < 1e-4, "seed {seed}");
            accepted += 1;
        }
    }
}
