mod common;

use proptest::prelude::*;

use rbsc::datasets::Dataset;
use rbsc::rb_features::{bin_index, estimate_kappa, generate_rb_features, generate_rff_features, GridParams, KernelParams};
use rbsc::sparse::FeatureOperator;

use common::*;

fn small_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..40, 1usize..4).prop_flat_map(|(n, d)| {
        prop::collection::vec(-5.0f64..5.0, n * d)
            .prop_map(move |data| Dataset::new("p", n, d, data, None).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rows_have_r_equal_entries_and_unit_norm(
        ds in small_dataset(),
        r in 1usize..24,
        sigma in 0.2f64..3.0,
        seed in any::<u64>(),
    ) {
        let (z, grids) = generate_rb_features(&ds, r, &KernelParams::laplacian(sigma), seed).unwrap();
        prop_assert_eq!(grids.len(), r);
        prop_assert_eq!(z.nnz(), ds.n_rows() * r);
        prop_assert_eq!(z.value(), 1.0 / (r as f64).sqrt());
        let d = z.to_dense();
        for i in 0..ds.n_rows() {
            let row = d.row(i);
            prop_assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), r);
            prop_assert!((row.norm_squared() - 1.0).abs() < 1e-12);
        }
        // every column is observed, and each grid's occupancies sum to N
        let occ: usize = (0..z.n_cols()).map(|c| z.column_occupancy(c)).sum();
        prop_assert_eq!(occ, ds.n_rows() * r);
        prop_assert!((0..z.n_cols()).all(|c| z.column_occupancy(c) > 0));
    }

    #[test]
    fn kappa_between_one_and_n(ds in small_dataset(), r in 1usize..16, seed in any::<u64>()) {
        let (z, grids) = generate_rb_features(&ds, r, &KernelParams::laplacian(0.7), seed).unwrap();
        let k = estimate_kappa(&z, &grids);
        prop_assert!(k >= 1.0 && k <= ds.n_rows() as f64);
    }

    #[test]
    fn coarser_integer_grids_never_lower_max_occupancy(
        mut xs in prop::collection::vec(-20.0f64..20.0, 1..60),
        width in 0.1f64..3.0,
        factor in 2usize..5,
    ) {
        xs.sort_by(f64::total_cmp);
        let max_occupancy = |w: f64| {
            let grid = GridParams { widths: vec![w], biases: vec![0.0] };
            let mut counts = std::collections::HashMap::new();
            for &x in &xs {
                *counts.entry(bin_index(&[x], &grid)[0]).or_insert(0usize) += 1;
            }
            *counts.values().max().unwrap()
        };
        prop_assert!(max_occupancy(width * factor as f64) >= max_occupancy(width));
    }
}

#[test]
fn identical_rows_share_every_bin() {
    let ds = Dataset::from_rows("dup", &[vec![0.3, -1.2], vec![0.3, -1.2], vec![4.0, 1.0]], None).unwrap();
    let (z, _) = generate_rb_features(&ds, 64, &KernelParams::laplacian(1.0), 5).unwrap();
    assert_eq!(z.row(0), z.row(1));
    let w = rb_gram(&z);
    assert!((w[(0, 1)] - 1.0).abs() < 1e-12);
}

#[test]
fn rb_matrix_is_reproducible_and_thread_count_independent() {
    let ds = gaussian_data(500, 3, 1);
    let k = KernelParams::laplacian(1.0);
    let a = with_threads(1, || generate_rb_features(&ds, 64, &k, 9).unwrap());
    let b = with_threads(4, || generate_rb_features(&ds, 64, &k, 9).unwrap());
    let c = generate_rb_features(&ds, 64, &k, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_ne!(a.0, generate_rb_features(&ds, 64, &k, 10).unwrap().0);
}

#[test]
fn rb_gram_is_unbiased_per_pair() {
    // 200 independent seeds at R=64; each pair's mean must sit within four
    // standard errors of the exact kernel value
    let ds = Dataset::from_rows(
        "pairs",
        &[vec![0.0, 0.0], vec![0.3, -0.2], vec![1.0, 0.5], vec![-0.4, 1.1]],
        None,
    )
    .unwrap();
    let exact = laplacian_kernel(&ds, 1.0);
    let samples: Vec<_> = (0..200)
        .map(|s| rb_gram(&generate_rb_features(&ds, 64, &KernelParams::laplacian(1.0), s).unwrap().0))
        .collect();
    for i in 0..4 {
        for j in i + 1..4 {
            let v: Vec<f64> = samples.iter().map(|w| w[(i, j)]).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            let se = (var / v.len() as f64).sqrt();
            assert!(
                (mean - exact[(i, j)]).abs() <= 4.0 * se,
                "pair ({i},{j}): mean {mean} exact {} se {se}",
                exact[(i, j)]
            );
        }
    }
}

fn mean_abs_offdiag(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (a[(i, j)] - b[(i, j)]).abs();
        }
    }
    s / (n * (n - 1) / 2) as f64
}

#[test]
fn rb_kernel_error_at_4096_grids() {
    let ds = gaussian_data(100, 5, 3);
    let (z, _) = generate_rb_features(&ds, 4096, &KernelParams::laplacian(1.0), 0).unwrap();
    let err = mean_abs_offdiag(&rb_gram(&z), &laplacian_kernel(&ds, 1.0));
    assert!(err <= 0.02, "{err}");
}

#[test]
fn rff_kernel_error_at_4096_features() {
    let ds = gaussian_data(100, 5, 3);
    let z = generate_rff_features(&ds, 4096, &KernelParams::laplacian(1.0), 0).unwrap();
    let zd = z.to_dense();
    let err = mean_abs_offdiag(&(&zd * zd.transpose()), &laplacian_kernel(&ds, 1.0));
    assert!(err <= 0.02, "{err}");
}

#[test]
fn rff_is_reproducible_and_thread_count_independent() {
    let ds = gaussian_data(300, 4, 2);
    let k = KernelParams::gaussian(1.5);
    let a = with_threads(1, || generate_rff_features(&ds, 128, &k, 4).unwrap());
    let b = with_threads(4, || generate_rff_features(&ds, 128, &k, 4).unwrap());
    assert_eq!(a, b);
}
