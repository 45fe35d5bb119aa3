use super::*;
use approx::assert_relative_eq;
use proptest::prelude::*;

fn randn(n: usize, m: usize, seed: u64) -> Mat {
    let mut rng = SeedRng::new(seed);
    Mat::from_fn(n, m, |_, _| rng.standard_normal())
}

/// Dense four-matrix-product oracle for Tr(K1 H K2 H).
fn hsic_trace_oracle(k1: &Mat, k2: &Mat) -> f64 {
    let n = k1.nrows();
    let h = Mat::identity(n, n) - Mat::from_element(n, n, 1.0 / n as f64);
    (k1 * &h * k2 * &h).trace()
}

#[test]
fn gaussian_kernel_identical_rows_all_ones() {
    let x = Mat::from_element(4, 2, 3.7);
    let k = gaussian_kernel_matrix(&x, 1.0).unwrap();
    assert_eq!(k, Mat::from_element(4, 4, 1.0));
}

#[test]
fn gaussian_kernel_hand_value_uses_unsquared_distance() {
    let x = Mat::from_column_slice(2, 1, &[0.0, 2.0]);
    let k = gaussian_kernel_matrix(&x, 1.0).unwrap();
    // d = 2, exp(-2/2) = exp(-1)
    assert_relative_eq!(k[(0, 1)], (-1.0_f64).exp(), epsilon = 1e-12);
    assert_eq!(k[(0, 0)], 1.0);
    assert_eq!(k[(1, 1)], 1.0);
}

#[test]
fn gaussian_kernel_saturates_for_huge_bandwidth() {
    let x = randn(10, 3, 1);
    let k = gaussian_kernel_matrix(&x, 1e6).unwrap();
    for v in k.iter() {
        assert!((v - 1.0).abs() < 1e-6);
    }
}

#[test]
fn gaussian_kernel_rejects_bad_inputs() {
    let x = randn(4, 2, 2);
    assert!(gaussian_kernel_matrix(&x, 0.0).is_err());
    let mut bad = x.clone();
    bad[(0, 0)] = f64::NAN;
    assert!(gaussian_kernel_matrix(&bad, 1.0).is_err());
}

#[test]
fn median_bandwidth_single_pair() {
    let x = Mat::from_column_slice(2, 1, &[0.0, 2.0]);
    assert_relative_eq!(median_bandwidth(&x).unwrap(), 2.0);
}

#[test]
fn median_bandwidth_three_points() {
    let x = Mat::from_column_slice(3, 1, &[0.0, 1.0, 3.0]);
    // pairwise distances {1, 3, 2}, median 2
    assert_relative_eq!(median_bandwidth(&x).unwrap(), 2.0);
}

#[test]
fn median_bandwidth_is_homogeneous() {
    let x = randn(12, 3, 3);
    let m = median_bandwidth(&x).unwrap();
    let scaled = &x * 2.5;
    assert_relative_eq!(median_bandwidth(&scaled).unwrap(), 2.5 * m, epsilon = 1e-12);
}

#[test]
fn median_bandwidth_degenerate_errors() {
    let x = Mat::from_element(5, 2, 1.0);
    assert!(matches!(median_bandwidth(&x), Err(Error::DegenerateBandwidth)));
}

#[test]
fn hsic_constant_x2_is_zero() {
    let x1 = randn(32, 2, 4);
    let x2 = Mat::from_element(32, 1, 7.0);
    let spec = KernelSpec::gaussian_median();
    let r = hsic(&x1, &x2, &spec, &spec, Normalization::Unbiased).unwrap();
    assert!(r.value.abs() < 1e-12, "got {}", r.value);
}

#[test]
fn hsic_matches_dense_trace_oracle() {
    let x = randn(256, 1, 5);
    let spec = KernelSpec::gaussian_median();
    let r = hsic(&x, &x, &spec, &spec, Normalization::Unbiased).unwrap();
    assert!(r.value > 0.0);
    let sigma = r.bandwidths.0.unwrap();
    let k = gaussian_kernel_matrix(&x, sigma).unwrap();
    let expected = hsic_trace_oracle(&k, &k) / 255.0_f64.powi(2);
    assert_relative_eq!(r.value, expected, max_relative = 1e-12);
}

#[test]
fn hsic_mismatched_sample_counts_error() {
    let x1 = randn(10, 1, 6);
    let x2 = randn(11, 1, 7);
    let spec = KernelSpec::gaussian_median();
    assert!(hsic(&x1, &x2, &spec, &spec, Normalization::Unbiased).is_err());
}

#[test]
fn hsic_from_kernels_all_ones_is_zero() {
    let k1 = randn(8, 8, 8);
    let k1 = &k1 * k1.transpose(); // symmetric psd
    let ones = Mat::from_element(8, 8, 1.0);
    let v = hsic_from_kernels(&k1, &ones, Normalization::Unbiased).unwrap();
    assert!(v.abs() < 1e-12);
}

#[test]
fn hsic_from_kernels_identity_two_by_two() {
    let i2 = Mat::identity(2, 2);
    // H = [[.5,-.5],[-.5,.5]] idempotent, Tr(H^2)/(N-1)^2 = Tr(H) = 1
    let v = hsic_from_kernels(&i2, &i2, Normalization::Unbiased).unwrap();
    assert_relative_eq!(v, 1.0, epsilon = 1e-14);
}

#[test]
fn hsic_from_kernels_rank_one_matches_centered_dot_product() {
    let n = 16;
    let mut rng = SeedRng::new(9);
    let v = Mat::from_fn(n, 1, |_, _| rng.standard_normal());
    let w = Mat::from_fn(n, 1, |_, _| rng.standard_normal());
    let kv = &v * v.transpose();
    let kw = &w * w.transpose();
    let got = hsic_from_kernels(&kv, &kw, Normalization::Unbiased).unwrap();
    let h = Mat::identity(n, n) - Mat::from_element(n, n, 1.0 / n as f64);
    let dot = (v.transpose() * &h * &w)[(0, 0)];
    assert_relative_eq!(got, dot * dot / ((n - 1) as f64).powi(2), max_relative = 1e-12);
}

#[test]
fn hsic_from_kernels_rejects_asymmetry() {
    let mut k = Mat::identity(4, 4);
    k[(0, 1)] = 0.5;
    assert!(matches!(
        hsic_from_kernels(&k, &Mat::identity(4, 4), Normalization::Unbiased),
        Err(Error::AsymmetricKernel(_))
    ));
}

#[test]
fn dhsic_two_variables_equals_biased_hsic() {
    for seed in 0..5 {
        let x1 = randn(32, 1, 100 + seed);
        let x2 = randn(32, 1, 200 + seed);
        let d = dhsic(&[x1.clone(), x2.clone()]).unwrap();
        let spec = KernelSpec::gaussian_median();
        let h = hsic(&x1, &x2, &spec, &spec, Normalization::Biased).unwrap();
        assert_relative_eq!(d, h.value, max_relative = 1e-12);
    }
}

#[test]
fn dhsic_constant_variable_is_zero_for_two_variables() {
    let x1 = randn(16, 1, 10);
    let x2 = Mat::from_element(16, 1, -3.0);
    let v = dhsic(&[x1, x2]).unwrap();
    assert!(v.abs() < 1e-12, "got {v}");
}

#[test]
fn dhsic_constant_variable_drops_out_of_the_estimator() {
    // a constant factor contributes an all-ones kernel which cancels across
    // the three terms, reducing dhsic to the estimator without that variable
    let x1 = randn(16, 1, 10);
    let x2 = Mat::from_element(16, 1, -3.0);
    let x3 = randn(16, 1, 11);
    let with_const = dhsic(&[x1.clone(), x2, x3.clone()]).unwrap();
    let without = dhsic(&[x1, x3]).unwrap();
    assert_relative_eq!(with_const, without, max_relative = 1e-12);
}

/// Naive triple-sum dHSIC oracle, d = 3.
fn dhsic3_oracle(ks: [&Mat; 3]) -> f64 {
    let n = ks[0].nrows();
    let nf = n as f64;
    let mut t1 = 0.0;
    let mut t3 = 0.0;
    for i in 0..n {
        let mut rp = 1.0;
        for k in ks {
            let mut rs = 0.0;
            for j in 0..n {
                rs += k[(i, j)];
            }
            rp *= rs;
        }
        t3 += rp;
        for j in 0..n {
            t1 += ks[0][(i, j)] * ks[1][(i, j)] * ks[2][(i, j)];
        }
    }
    let mut t2 = 1.0;
    for k in ks {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += k[(i, j)];
            }
        }
        t2 *= s;
    }
    t1 / nf.powi(2) + t2 / nf.powi(6) - 2.0 * t3 / nf.powi(4)
}

#[test]
fn dhsic_three_variables_matches_naive_oracle() {
    let xs = [randn(64, 1, 20), randn(64, 1, 21), randn(64, 1, 22)];
    let got = dhsic(&xs).unwrap();
    let ks: Vec<Mat> = xs
        .iter()
        .map(|x| gaussian_kernel_matrix(x, median_bandwidth(x).unwrap()).unwrap())
        .collect();
    let expected = dhsic3_oracle([&ks[0], &ks[1], &ks[2]]);
    assert_relative_eq!(got, expected, max_relative = 1e-12);
}

#[test]
fn dhsic_sample_size_guard() {
    let xs = [randn(5, 1, 30), randn(5, 1, 31), randn(5, 1, 32)];
    assert!(matches!(dhsic(&xs), Err(Error::SampleSizeBelowTwiceD { .. })));
}

#[test]
fn permutation_test_detects_perfect_dependence() {
    let spec = KernelSpec::gaussian_median();
    let mut rejected = 0;
    for seed in 0..10 {
        let x = randn(128, 1, 300 + seed);
        let mut rng = SeedRng::new(seed);
        let r = permutation_test(&x, &x, &spec, &spec, 200, 0.05, &mut rng).unwrap();
        if r.reject {
            rejected += 1;
        }
    }
    assert_eq!(rejected, 10);
}

#[test]
fn permutation_test_alpha_one_always_rejects() {
    let x1 = randn(64, 1, 40);
    let x2 = randn(64, 1, 41);
    let spec = KernelSpec::gaussian_median();
    let mut rng = SeedRng::new(0);
    let r = permutation_test(&x1, &x2, &spec, &spec, 100, 1.0, &mut rng).unwrap();
    assert!(r.reject);
}

#[test]
fn permutation_test_guards() {
    let x = randn(32, 1, 42);
    let spec = KernelSpec::gaussian_median();
    let mut rng = SeedRng::new(0);
    assert!(permutation_test(&x, &x, &spec, &spec, 10, 0.05, &mut rng).is_err());
    let constant = Mat::from_element(32, 1, 1.0);
    assert!(matches!(
        permutation_test(&x, &constant, &spec, &spec, 100, 0.05, &mut rng),
        Err(Error::DegenerateBandwidth)
    ));
}

#[test]
fn mean_pairwise_hsic_two_columns_equals_single_pair() {
    let r = randn(64, 3, 50);
    let spec = KernelSpec::gaussian_median();
    let m = mean_pairwise_hsic(&r, 2, &spec).unwrap();
    let c0 = Mat::from_column_slice(64, 1, r.column(0).as_slice());
    let c1 = Mat::from_column_slice(64, 1, r.column(1).as_slice());
    let h = hsic(&c0, &c1, &spec, &spec, Normalization::Unbiased).unwrap();
    assert_relative_eq!(m, h.value, max_relative = 1e-12);
}

#[test]
fn mean_pairwise_hsic_is_column_permutation_symmetric() {
    let r = randn(48, 4, 51);
    let spec = KernelSpec::gaussian_median();
    let m = mean_pairwise_hsic(&r, 4, &spec).unwrap();
    let permuted = Mat::from_fn(48, 4, |i, j| r[(i, [2, 0, 3, 1][j])]);
    let mp = mean_pairwise_hsic(&permuted, 4, &spec).unwrap();
    assert_relative_eq!(m, mp, max_relative = 1e-12);
}

#[test]
fn mean_pairwise_hsic_duplicated_columns_score_higher() {
    let indep = randn(512, 4, 52);
    let mut dup = indep.clone();
    for i in 0..512 {
        dup[(i, 1)] = dup[(i, 0)];
        dup[(i, 3)] = dup[(i, 2)];
    }
    let spec = KernelSpec::gaussian_median();
    let a = mean_pairwise_hsic(&indep, 4, &spec).unwrap();
    let b = mean_pairwise_hsic(&dup, 4, &spec).unwrap();
    assert!(b > a, "dup {b} <= indep {a}");
}

#[test]
fn mean_pairwise_hsic_names_constant_column() {
    let mut r = randn(32, 3, 53);
    for i in 0..32 {
        r[(i, 1)] = 4.0;
    }
    match mean_pairwise_hsic(&r, 3, &KernelSpec::gaussian_median()) {
        Err(Error::ConstantColumn(1)) => {}
        other => panic!("expected ConstantColumn(1), got {other:?}"),
    }
}

#[test]
fn dhsic_subsets_full_width_is_deterministic() {
    let r = randn(32, 2, 60);
    let mut rng = SeedRng::new(1);
    let s = dhsic_subsets(&r, 2, 5, &mut rng).unwrap();
    assert_eq!(s.subsets, vec![vec![0, 1]]);
    let c0 = Mat::from_column_slice(32, 1, r.column(0).as_slice());
    let c1 = Mat::from_column_slice(32, 1, r.column(1).as_slice());
    assert_relative_eq!(s.values[0], dhsic(&[c0, c1]).unwrap(), max_relative = 1e-12);
}

#[test]
fn dhsic_subsets_same_seed_same_result() {
    let r = randn(64, 6, 61);
    let run = || {
        let mut rng = SeedRng::new(99);
        dhsic_subsets(&r, 3, 8, &mut rng).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.subsets, b.subsets);
    assert_eq!(a.values, b.values);
}

#[test]
fn dhsic_subsets_duplicated_columns_score_higher() {
    let indep = randn(256, 4, 62);
    let mut dup = indep.clone();
    for i in 0..256 {
        dup[(i, 1)] = dup[(i, 0)];
        dup[(i, 3)] = dup[(i, 2)];
    }
    let mean = |r: &Mat| {
        let mut rng = SeedRng::new(5);
        let s = dhsic_subsets(r, 2, 20, &mut rng).unwrap();
        s.values.iter().sum::<f64>() / s.values.len() as f64
    };
    assert!(mean(&dup) > mean(&indep));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hsic_is_symmetric_in_its_arguments(seed in 0u64..500) {
        let x1 = randn(24, 1, seed);
        let x2 = randn(24, 1, seed + 1000);
        let spec = KernelSpec::gaussian_median();
        let a = hsic(&x1, &x2, &spec, &spec, Normalization::Unbiased).unwrap().value;
        let b = hsic(&x2, &x1, &spec, &spec, Normalization::Unbiased).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300));
    }

    #[test]
    fn hsic_is_invariant_under_shared_row_permutation(seed in 0u64..500) {
        let x1 = randn(20, 2, seed);
        let x2 = randn(20, 1, seed + 2000);
        let mut rng = SeedRng::new(seed + 4000);
        let mut idx: Vec<usize> = (0..20).collect();
        rng.shuffle(&mut idx);
        let p1 = Mat::from_fn(20, 2, |i, j| x1[(idx[i], j)]);
        let p2 = Mat::from_fn(20, 1, |i, j| x2[(idx[i], j)]);
        let spec = KernelSpec::gaussian_median();
        let a = hsic(&x1, &x2, &spec, &spec, Normalization::Unbiased).unwrap().value;
        let b = hsic(&p1, &p2, &spec, &spec, Normalization::Unbiased).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn hsic_is_nonnegative_for_gaussian_kernels(seed in 0u64..500) {
        let x1 = randn(16, 1, seed);
        let x2 = randn(16, 1, seed + 3000);
        let spec = KernelSpec::gaussian_median();
        let v = hsic(&x1, &x2, &spec, &spec, Normalization::Unbiased).unwrap().value;
        prop_assert!(v >= -1e-12);
    }
}
