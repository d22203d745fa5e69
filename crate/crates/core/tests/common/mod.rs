//! Helpers and independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rbsc::datasets::{standardize, Dataset};
use rbsc::sparse::{FeatureOperator, SparseFeatureMatrix};

/// Standardized `n × d` standard-normal data.
pub fn gaussian_data(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    standardize(&Dataset::new("gauss", n, d, data, None).unwrap()).unwrap()
}

/// `exp(−‖x−y‖₁/σ)` for every pair, written out directly.
pub fn laplacian_kernel(ds: &Dataset, sigma: f64) -> DMatrix<f64> {
    let n = ds.n_rows();
    DMatrix::from_fn(n, n, |i, j| {
        let mut l1 = 0.0;
        for (a, b) in ds.row(i).iter().zip(ds.row(j)) {
            l1 += (a - b).abs();
        }
        (-l1 / sigma).exp()
    })
}

/// `Z Zᵀ` of an RB matrix by counting shared bins: row pair `(i, j)` scores
/// `1/R` for every grid where both rows hit the same column.
pub fn rb_gram(z: &SparseFeatureMatrix) -> DMatrix<f64> {
    let n = z.n_rows();
    let r = z.n_grids() as f64;
    DMatrix::from_fn(n, n, |i, j| {
        let shared = z
            .row(i)
            .iter()
            .zip(z.row(j))
            .filter(|(a, b)| a == b)
            .count();
        shared as f64 / r
    })
}

/// `I − D^{−1/2} W D^{−1/2}` with `D = diag(W 1)`.
pub fn dense_normalized_laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let d: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        let a = w[(i, j)] / (d[i] * d[j]).sqrt();
        if i == j {
            1.0 - a
        } else {
            -a
        }
    })
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Largest principal angle (radians) between the column spaces of two
/// matrices with orthonormal columns.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let m = a.transpose() * b;
    let s = m.svd(false, false).singular_values;
    let smallest = s.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);
    smallest.acos()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Runs `f` inside a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

// Brute-force metric oracles, computed from sets and pairs rather than from
// a contingency table.

fn clusters(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.iter()
        .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect()
}

fn intersect(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|x| b.contains(x)).count()
}

pub fn oracle_nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let cp = clusters(pred);
    let ct = clusters(truth);
    let h = |cs: &[Vec<usize>]| -> f64 {
        cs.iter()
            .map(|c| {
                let p = c.len() as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (hp, ht) = (h(&cp), h(&ct));
    if hp == 0.0 && ht == 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    for a in &cp {
        for b in &ct {
            let c = intersect(a, b) as f64;
            if c > 0.0 {
                let pab = c / n;
                mi += pab * (pab / ((a.len() as f64 / n) * (b.len() as f64 / n))).ln();
            }
        }
    }
    2.0 * mi / (hp + ht)
}

pub fn oracle_rand_index(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let (mut agree, mut total) = (0usize, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            if (pred[i] == pred[j]) == (truth[i] == truth[j]) {
                agree += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        agree as f64 / total as f64
    }
}

pub fn oracle_f_measure(pred: &[usize], truth: &[usize]) -> f64 {
    let cp = clusters(pred);
    let ct = clusters(truth);
    let mut sum = 0.0;
    for t in &ct {
        let mut best: f64 = 0.0;
        for p in &cp {
            let c = intersect(p, t) as f64;
            let prec = c / p.len() as f64;
            let rec = c / t.len() as f64;
            if prec + rec > 0.0 {
                best = best.max(2.0 * prec * rec / (prec + rec));
            }
        }
        sum += best;
    }
    sum / ct.len() as f64
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Best accuracy over every bijection of `0..k` applied to the predicted
/// ids, where `k` exceeds every id on both sides.
pub fn oracle_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let k = pred.iter().chain(truth).max().unwrap() + 1;
    let mut best = 0;
    for perm in permutations(k) {
        let hits = pred.iter().zip(truth).filter(|(p, t)| perm[**p] == **t).count();
        best = best.max(hits);
    }
    best as f64 / pred.len() as f64
}

/// Every vector in `{0..k}^n`.
pub fn all_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..k).map(move |c| {
                    let mut w = v.clone();
                    w.push(c);
                    w
                })
            })
            .collect();
    }
    out
}

/// Labelings in first-appearance form (`0` first, each new id one above the
/// previous maximum) with at most `k` clusters: one per partition.
pub fn canonical_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    all_labelings(n, k)
        .into_iter()
        .filter(|v| {
            let mut next = 0;
            v.iter().all(|&c| {
                if c < next {
                    true
                } else if c == next {
                    next += 1;
                    true
                } else {
                    false
                }
            })
        })
        .collect()
}
