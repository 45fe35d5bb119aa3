//! HSIC and dHSIC estimators, bandwidth selection, and independence tests.
//!
//! HSIC is estimated as `Tr(K1 H K2 H) / (N-1)^2` with `H = I - 11^T/N`;
//! the biased variant divides by `N^2` instead. The Gaussian kernel uses the
//! *unsquared* euclidean distance in the exponent,
//! `K[i,j] = exp(-d(x_i, x_j) / (2 sigma^2))`, and the median-heuristic
//! bandwidth is the median of the `N(N-1)/2` pairwise distances.

pub mod lemma;

use crate::numerics::SeedRng;
use crate::{Error, Mat, Result};

/// Bandwidth choice for the Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median of pairwise euclidean distances, resolved per input.
    Median,
    Fixed(f64),
}

/// Kernel choice for HSIC/dHSIC.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    Gaussian(Bandwidth),
    Linear,
    Precomputed(Mat),
}

impl KernelSpec {
    pub fn gaussian_median() -> Self {
        KernelSpec::Gaussian(Bandwidth::Median)
    }
}

/// HSIC trace normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Divide by (N-1)^2.
    Unbiased,
    /// Divide by N^2; matches the first dHSIC term for d = 2.
    Biased,
}

impl Normalization {
    fn factor(self, n: usize) -> f64 {
        match self {
            Normalization::Unbiased => ((n - 1) as f64).powi(2),
            Normalization::Biased => (n as f64).powi(2),
        }
    }
}

/// HSIC value plus the bandwidths that were actually used.
#[derive(Debug, Clone)]
pub struct HsicResult {
    pub value: f64,
    pub normalization: Normalization,
    /// Resolved Gaussian bandwidths, when applicable (x1, x2).
    pub bandwidths: (Option<f64>, Option<f64>),
}

/// Outcome of the permutation independence test.
#[derive(Debug, Clone)]
pub struct PermutationTestResult {
    pub p_value: f64,
    pub reject: bool,
    pub statistic: f64,
}

/// dHSIC values on sampled column subsets, recorded for reproducibility.
#[derive(Debug, Clone)]
pub struct SubsetDhsic {
    pub subsets: Vec<Vec<usize>>,
    pub values: Vec<f64>,
}

fn check_finite(x: &Mat, what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

/// All pairwise euclidean distances (unsquared), N x N.
pub fn pairwise_distances(x: &Mat) -> Mat {
    let n = x.nrows();
    let mut d = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = (x.row(i) - x.row(j)).norm();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    d
}

/// Gaussian kernel with the unsquared-distance exponent.
pub fn gaussian_kernel_matrix(x: &Mat, sigma: f64) -> Result<Mat> {
    if sigma <= 0.0 {
        return Err(Error::InvalidParameter("gaussian bandwidth must be > 0".into()));
    }
    check_finite(x, "gaussian kernel input")?;
    let mut k = pairwise_distances(x);
    let denom = 2.0 * sigma * sigma;
    k.apply(|v| *v = (-*v / denom).exp());
    Ok(k)
}

/// Median of the pairwise euclidean distances over i < j.
pub fn median_bandwidth(x: &Mat) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: n });
    }
    check_finite(x, "median bandwidth input")?;
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push((x.row(i) - x.row(j)).norm());
        }
    }
    if dists.iter().all(|&d| d == 0.0) {
        return Err(Error::DegenerateBandwidth);
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    let median = if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) };
    if median > 0.0 {
        return Ok(median);
    }
    // Discrete-valued data (e.g. a square wave) can repeat rows so often
    // that the median distance is zero even though the data is not
    // degenerate; resolve to the median of the strictly positive distances
    // so the bandwidth stays positive.
    let pos: Vec<f64> = dists.into_iter().filter(|&d| d > 0.0).collect();
    let m = pos.len();
    Ok(if m % 2 == 1 { pos[m / 2] } else { 0.5 * (pos[m / 2 - 1] + pos[m / 2]) })
}

/// Resolves a kernel spec against data; returns the kernel matrix and the
/// Gaussian bandwidth used, if any.
///
/// A degenerate median bandwidth (all rows identical) yields the all-ones
/// kernel, which every Gaussian bandwidth produces on such data.
pub fn resolve_kernel(spec: &KernelSpec, x: &Mat) -> Result<(Mat, Option<f64>)> {
    match spec {
        KernelSpec::Gaussian(bw) => {
            let sigma = match bw {
                Bandwidth::Fixed(s) => *s,
                Bandwidth::Median => match median_bandwidth(x) {
                    Ok(s) => s,
                    Err(Error::DegenerateBandwidth) => {
                        return Ok((Mat::from_element(x.nrows(), x.nrows(), 1.0), None));
                    }
                    Err(e) => return Err(e),
                },
            };
            Ok((gaussian_kernel_matrix(x, sigma)?, Some(sigma)))
        }
        KernelSpec::Linear => {
            check_finite(x, "linear kernel input")?;
            Ok((x * x.transpose(), None))
        }
        KernelSpec::Precomputed(k) => {
            if k.nrows() != x.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "precomputed kernel is {}x{}, data has {} rows",
                    k.nrows(),
                    k.ncols(),
                    x.nrows()
                )));
            }
            check_symmetric(k, 1e-10)?;
            Ok((k.clone(), None))
        }
    }
}

fn check_symmetric(k: &Mat, tol: f64) -> Result<()> {
    if k.nrows() != k.ncols() {
        return Err(Error::ShapeMismatch(format!("kernel is {}x{}", k.nrows(), k.ncols())));
    }
    let mut worst = 0.0_f64;
    for i in 0..k.nrows() {
        for j in (i + 1)..k.ncols() {
            worst = worst.max((k[(i, j)] - k[(j, i)]).abs());
        }
    }
    if worst > tol {
        return Err(Error::AsymmetricKernel(worst));
    }
    Ok(())
}

/// Double-centers a symmetric kernel matrix: H K H.
fn center_gram(k: &Mat) -> Mat {
    let n = k.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    Mat::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - row_means[j] + grand)
}

/// Raw (unnormalized) HSIC trace, Tr(K1 H K2 H), via the expanded form
/// `sum(K1∘K2) + sum(K1)·sum(K2)/n² − (2/n)·Σ_i rowsum_i(K1)·rowsum_i(K2)`.
/// This avoids materializing the centered kernel and keeps the arithmetic
/// aligned with the d-variable estimator, so the two agree to roundoff.
fn hsic_trace(k1: &Mat, k2: &Mat) -> f64 {
    let n = k1.nrows();
    let nf = n as f64;
    let hadamard: f64 = k1.iter().zip(k2.iter()).map(|(a, b)| a * b).sum();
    let r1: Vec<f64> = (0..n).map(|i| k1.row(i).sum()).collect();
    let r2: Vec<f64> = (0..n).map(|i| k2.row(i).sum()).collect();
    let s1: f64 = r1.iter().sum();
    let s2: f64 = r2.iter().sum();
    let cross: f64 = r1.iter().zip(&r2).map(|(a, b)| a * b).sum();
    hadamard + s1 * s2 / (nf * nf) - 2.0 / nf * cross
}

/// Biased HSIC of a kernel pair with the divisions placed exactly as in the
/// d-variable estimator, so `dhsic` at d = 2 and biased HSIC agree to the
/// last bit instead of merely to O(eps) after cancellation.
fn hsic_biased_pair(k1: &Mat, k2: &Mat) -> f64 {
    let n = k1.nrows();
    let nf = n as f64;
    let term1 = k1.component_mul(k2).sum() / (nf * nf);
    let term2 = (k1.sum() / (nf * nf)) * (k2.sum() / (nf * nf));
    let term3 = 2.0 / nf
        * (0..n)
            .map(|i| (k1.row(i).sum() / nf) * (k2.row(i).sum() / nf))
            .sum::<f64>();
    term1 + term2 - term3
}

/// HSIC from precomputed symmetric kernel matrices.
pub fn hsic_from_kernels(k1: &Mat, k2: &Mat, normalization: Normalization) -> Result<f64> {
    check_symmetric(k1, 1e-8)?;
    check_symmetric(k2, 1e-8)?;
    if k1.nrows() != k2.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "kernel sizes differ: {} vs {}",
            k1.nrows(),
            k2.nrows()
        )));
    }
    let n = k1.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: n });
    }
    Ok(match normalization {
        Normalization::Biased => hsic_biased_pair(k1, k2),
        Normalization::Unbiased => hsic_trace(k1, k2) / normalization.factor(n),
    })
}

/// HSIC between two sample matrices.
pub fn hsic(
    x1: &Mat,
    x2: &Mat,
    k1: &KernelSpec,
    k2: &KernelSpec,
    normalization: Normalization,
) -> Result<HsicResult> {
    if x1.nrows() != x2.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "sample counts differ: {} vs {}",
            x1.nrows(),
            x2.nrows()
        )));
    }
    let n = x1.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: n });
    }
    let (km1, bw1) = resolve_kernel(k1, x1)?;
    let (km2, bw2) = resolve_kernel(k2, x2)?;
    let value = match normalization {
        Normalization::Biased => hsic_biased_pair(&km1, &km2),
        Normalization::Unbiased => hsic_trace(&km1, &km2) / normalization.factor(n),
    };
    Ok(HsicResult { value, normalization, bandwidths: (bw1, bw2) })
}

/// dHSIC over d variables with Gaussian median-heuristic kernels.
///
/// Three-term estimator:
/// `(1/N^2) sum_ij prod_k K_k  +  prod_k (sum_ij K_k / N^2)
///  -  (2/N) sum_i prod_k (rowsum_i K_k / N)`.
pub fn dhsic(xs: &[Mat]) -> Result<f64> {
    dhsic_with(xs, &KernelSpec::gaussian_median())
}

/// dHSIC with an explicit kernel spec shared across variables.
pub fn dhsic_with(xs: &[Mat], kernel: &KernelSpec) -> Result<f64> {
    let d = xs.len();
    if d < 2 {
        return Err(Error::InvalidParameter("dhsic needs at least 2 variables".into()));
    }
    let n = xs[0].nrows();
    if xs.iter().any(|x| x.nrows() != n) {
        return Err(Error::ShapeMismatch("dhsic inputs must share the sample count".into()));
    }
    if n < 2 * d {
        return Err(Error::SampleSizeBelowTwiceD { n, d });
    }
    let nf = n as f64;
    let mut had_prod = Mat::from_element(n, n, 1.0); // elementwise product of kernels
    let mut term2 = 1.0;
    let mut row_prod = vec![1.0; n];
    for x in xs {
        let (k, _) = resolve_kernel(kernel, x)?;
        term2 *= k.sum() / (nf * nf);
        for i in 0..n {
            row_prod[i] *= k.row(i).sum() / nf;
        }
        had_prod.component_mul_assign(&k);
    }
    let term1 = had_prod.sum() / (nf * nf);
    let term3 = 2.0 / nf * row_prod.iter().sum::<f64>();
    Ok(term1 + term2 - term3)
}

/// Permutation-based HSIC independence test.
///
/// Permutes the rows of `x2` only; bandwidths are resolved once on the
/// unpermuted data. The p-value uses the +1 smoothing convention.
pub fn permutation_test(
    x1: &Mat,
    x2: &Mat,
    k1: &KernelSpec,
    k2: &KernelSpec,
    num_permutations: usize,
    alpha: f64,
    rng: &mut SeedRng,
) -> Result<PermutationTestResult> {
    if num_permutations < 50 {
        return Err(Error::InvalidParameter("need at least 50 permutations".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter("alpha must be in (0, 1]".into()));
    }
    // a degenerate median bandwidth makes the test meaningless
    for (spec, x) in [(k1, x1), (k2, x2)] {
        if matches!(spec, KernelSpec::Gaussian(Bandwidth::Median)) {
            median_bandwidth(x)?;
        }
    }
    let n = x1.nrows();
    if n != x2.nrows() {
        return Err(Error::ShapeMismatch("sample counts differ".into()));
    }
    let (km1, _) = resolve_kernel(k1, x1)?;
    let (km2, _) = resolve_kernel(k2, x2)?;
    let k1c = center_gram(&km1);
    let norm = Normalization::Unbiased.factor(n);
    let statistic = k1c.iter().zip(km2.iter()).map(|(a, b)| a * b).sum::<f64>() / norm;

    let mut perm: Vec<usize> = (0..n).collect();
    let mut at_least = 0usize;
    for _ in 0..num_permutations {
        rng.shuffle(&mut perm);
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += k1c[(i, j)] * km2[(perm[i], perm[j])];
            }
        }
        if s / norm >= statistic {
            at_least += 1;
        }
    }
    let p_value = (1 + at_least) as f64 / (1 + num_permutations) as f64;
    Ok(PermutationTestResult { p_value, reject: p_value <= alpha, statistic })
}

/// Mean HSIC over all pairs among the first `n` columns of `r`, each column
/// treated as a scalar variable with its own median bandwidth.
pub fn mean_pairwise_hsic(r: &Mat, n: usize, kernel: &KernelSpec) -> Result<f64> {
    if n < 2 || n > r.ncols() {
        return Err(Error::InvalidParameter(format!(
            "n must be in 2..={}, got {n}",
            r.ncols()
        )));
    }
    let mut kernels = Vec::with_capacity(n);
    for j in 0..n {
        let col = Mat::from_column_slice(r.nrows(), 1, r.column(j).as_slice());
        if matches!(kernel, KernelSpec::Gaussian(Bandwidth::Median)) {
            median_bandwidth(&col).map_err(|e| match e {
                Error::DegenerateBandwidth => Error::ConstantColumn(j),
                other => other,
            })?;
        }
        let (k, _) = resolve_kernel(kernel, &col)?;
        kernels.push(k);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..n {
        for b in (a + 1)..n {
            total += hsic_from_kernels(&kernels[a], &kernels[b], Normalization::Unbiased)?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// dHSIC on `num_sets` uniformly sampled n-column subsets of `r`.
pub fn dhsic_subsets(r: &Mat, n: usize, num_sets: usize, rng: &mut SeedRng) -> Result<SubsetDhsic> {
    let d = r.ncols();
    if n > d {
        return Err(Error::InvalidParameter(format!("subset size {n} exceeds {d} columns")));
    }
    if r.nrows() < 2 * n {
        return Err(Error::SampleSizeBelowTwiceD { n: r.nrows(), d: n });
    }
    let sets = if n == d { 1 } else { num_sets };
    let mut subsets = Vec::with_capacity(sets);
    let mut values = Vec::with_capacity(sets);
    for _ in 0..sets {
        let mut idx = rng.sample_without_replacement(d, n);
        idx.sort_unstable();
        let cols: Vec<Mat> = idx
            .iter()
            .map(|&j| Mat::from_column_slice(r.nrows(), 1, r.column(j).as_slice()))
            .collect();
        values.push(dhsic(&cols)?);
        subsets.push(idx);
    }
    Ok(SubsetDhsic { subsets, values })
}

/// Convenience: dHSIC over all columns of a matrix, each as a scalar variable.
pub fn dhsic_columns(r: &Mat) -> Result<f64> {
    let cols: Vec<Mat> = (0..r.ncols())
        .map(|j| Mat::from_column_slice(r.nrows(), 1, r.column(j).as_slice()))
        .collect();
    dhsic(&cols)
}

#[cfg(test)]
mod tests;
