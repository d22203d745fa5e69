//! K-means with k-means++ seeding, Lloyd iterations and independent
//! replicates.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rb_features::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub replicates: usize,
    pub max_iters: usize,
    /// Stop when `‖C_new − C_old‖_F ≤ tol · ‖C_old‖_F`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self::new(2)
    }
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            replicates: 10,
            max_iters: 300,
            tol: 1e-6,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// `k` centroids, each of the point dimension.
    pub centroids: Vec<Vec<f64>>,
    pub iterations_used: usize,
    pub replicate_chosen: usize,
    /// Inertia after each assignment step of the chosen replicate.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lower
/// index.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

struct Points<'a> {
    data: &'a [f64],
    dim: usize,
}

impl Points<'_> {
    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn plus_plus_seeds<R: Rng>(pts: &Points, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = pts.len();
    let mut centroids = vec![pts.row(rng.gen_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(pts.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = pts.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(pts.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Moves the point farthest from its own centroid (taken from a cluster with
/// more than one member) into each empty cluster.
fn repair_empty(pts: &Points, labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &l) in labels.iter().enumerate() {
            if sizes[l] > 1 {
                let d = sq_dist(pts.row(i), &centroids[l]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
        }
        let Some(i) = far else { return };
        sizes[labels[i]] -= 1;
        labels[i] = j;
        sizes[j] = 1;
        centroids[j] = pts.row(i).to_vec();
    }
}

fn run_replicate(pts: &Points, cfg: &KMeansConfig, replicate: usize) -> ClusterAssignment {
    let n = pts.len();
    let k = cfg.k;
    let dim = pts.dim;
    let mut rng = stream_rng(cfg.seed, replicate as u64);
    let mut centroids = plus_plus_seeds(pts, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        iterations += 1;
        for (i, l) in labels.iter_mut().enumerate() {
            *l = nearest(pts.row(i), &centroids).0;
        }
        repair_empty(pts, &mut labels, &mut centroids);
        history.push(
            (0..n)
                .map(|i| sq_dist(pts.row(i), &centroids[labels[i]]))
                .sum(),
        );

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(pts.row(i)) {
                *s += x;
            }
        }
        let mut shift = 0.0;
        let mut scale = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            for (c, s) in centroids[j].iter_mut().zip(&sums[j]) {
                let new = s * inv;
                shift += (new - *c) * (new - *c);
                scale += *c * *c;
                *c = new;
            }
        }
        if shift.sqrt() <= cfg.tol * scale.sqrt() || shift == 0.0 {
            break;
        }
    }

    let mut inertia = 0.0;
    for (i, l) in labels.iter_mut().enumerate() {
        let (j, d) = nearest(pts.row(i), &centroids);
        *l = j;
        inertia += d;
    }
    history.push(inertia);
    ClusterAssignment {
        labels,
        inertia,
        centroids,
        iterations_used: iterations,
        replicate_chosen: replicate,
        inertia_history: history,
    }
}

/// Clusters `n = data.len() / dim` row-major points. Returns the replicate
/// with the lowest inertia (lowest replicate index on ties).
pub fn kmeans(data: &[f64], dim: usize, cfg: &KMeansConfig) -> Result<ClusterAssignment> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::InvalidConfig(format!(
            "{} values do not form rows of dimension {dim}",
            data.len()
        )));
    }
    if cfg.k == 0 || cfg.replicates == 0 || cfg.max_iters == 0 {
        return Err(Error::InvalidConfig(
            "k, replicates and max_iters must be at least 1".into(),
        ));
    }
    let pts = Points { data, dim };
    let n = pts.len();
    if n < cfg.k {
        return Err(Error::TooFewPoints {
            needed: cfg.k,
            k: cfg.k,
            got: n,
        });
    }
    if let Some(p) = data.iter().position(|v| v.is_nan()) {
        return Err(Error::NaN {
            row: p / dim,
            col: p % dim,
        });
    }
    let runs: Vec<ClusterAssignment> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(&pts, cfg, r))
        .collect();
    let best = runs
        .into_iter()
        .min_by(|a, b| {
            a.inertia
                .total_cmp(&b.inertia)
                .then(a.replicate_chosen.cmp(&b.replicate_chosen))
        })
        .expect("at least one replicate");
    Ok(best)
}

/// [`kmeans`] on the rows of a matrix.
pub fn kmeans_rows(m: &DMatrix<f64>, cfg: &KMeansConfig) -> Result<ClusterAssignment> {
    let (n, dim) = m.shape();
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        data.extend(m.row(i).iter());
    }
    kmeans(&data, dim, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_two_clusters() {
        let res = kmeans(&[0.0, 0.0, 5.0, 1.0], 2, &KMeansConfig::new(2)).unwrap();
        assert_ne!(res.labels[0], res.labels[1]);
        assert_eq!(res.inertia, 0.0);
    }

    #[test]
    fn long_rectangle_splits_the_long_axis() {
        // 10 x 1 rectangle: optimum pairs the short sides
        let pts = [0.0, 0.0, 0.0, 1.0, 10.0, 0.0, 10.0, 1.0];
        let res = kmeans(&pts, 2, &KMeansConfig::new(2)).unwrap();
        assert_eq!(res.labels[0], res.labels[1]);
        assert_eq!(res.labels[2], res.labels[3]);
        assert_ne!(res.labels[0], res.labels[2]);
        let half_short: f64 = 0.5;
        assert!((res.inertia - 2.0 * half_short.powi(2) * 2.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            kmeans(&[1.0, 2.0], 1, &KMeansConfig::new(3)),
            Err(Error::TooFewPoints { .. })
        ));
        assert!(matches!(
            kmeans(&[1.0, f64::NAN, 0.0, 0.0], 2, &KMeansConfig::new(1)),
            Err(Error::NaN { row: 0, col: 1 })
        ));
        assert!(kmeans(&[1.0, 2.0, 3.0], 2, &KMeansConfig::new(1)).is_err());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = vec![1.0; 6];
        let res = kmeans(&pts, 1, &KMeansConfig::new(3)).unwrap();
        let mut seen = [false; 3];
        for &l in &res.labels {
            seen[l] = true;
        }
        assert!(res.labels.iter().all(|&l| l < 3));
        assert_eq!(res.inertia, 0.0);
        assert!(seen[0]);
    }

    #[test]
    fn repair_moves_farthest_point() {
        let data = [0.0, 1.0, 9.0];
        let pts = Points { data: &data, dim: 1 };
        let mut labels = vec![0, 0, 0];
        let mut centroids = vec![vec![1.0], vec![100.0]];
        repair_empty(&pts, &mut labels, &mut centroids);
        assert_eq!(labels, vec![0, 0, 1]);
        assert_eq!(centroids[1], vec![9.0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let c = vec![vec![1.0], vec![-1.0]];
        assert_eq!(nearest(&[0.0], &c).0, 0);
    }

    #[test]
    fn labels_follow_nearest_centroid_and_inertia_is_consistent() {
        let mut rng = stream_rng(2, 0);
        let data: Vec<f64> = (0..600).map(|_| rng.gen::<f64>()).collect();
        let res = kmeans(&data, 3, &KMeansConfig::new(4)).unwrap();
        let mut inertia = 0.0;
        for i in 0..200 {
            let x = &data[i * 3..i * 3 + 3];
            let (j, d) = nearest(x, &res.centroids);
            assert_eq!(res.labels[i], j);
            inertia += d;
        }
        assert!((inertia - res.inertia).abs() < 1e-12);
        assert_eq!(*res.inertia_history.last().unwrap(), res.inertia);
    }

    #[test]
    fn replicate_choice_is_thread_count_independent() {
        let mut rng = stream_rng(3, 0);
        let data: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>()).collect();
        let run = |t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| kmeans(&data, 2, &KMeansConfig::new(5)).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
