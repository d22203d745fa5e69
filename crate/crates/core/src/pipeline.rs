//! End-to-end clustering pipelines.
//!
//! `spectral_cluster_rb` is the scalable path: RB features, degrees by two
//! products, row weighting, top-k left singular vectors, row normalization
//! and K-means. `spectral_cluster_rf` swaps in random Fourier features.
//! `exact_spectral_cluster` builds the dense kernel and Laplacian and is the
//! reference for small `N`.

use std::io::Write;
use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::eigensolver::{row_normalize, top_k_left_singular_vectors, Embedding, SvdConfig, SvdResult};
use crate::error::{Error, Result};
use crate::graph::{compute_degrees, compute_degrees_with_self_floor, weight_rows, DegreeVector};
use crate::kmeans::{kmeans, kmeans_rows, ClusterAssignment, KMeansConfig};
use crate::rb_features::{estimate_kappa, generate_rb_features, generate_rff_features, KernelParams};
use crate::sparse::FeatureOperator;

/// Largest `N` for which the dense `N × N` reference is attempted.
pub const EXACT_LIMIT: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ScRb,
    ScRf,
    ExactSc,
    KmeansRaw,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ScRb => "sc_rb",
            Method::ScRf => "sc_rf",
            Method::ExactSc => "exact_sc",
            Method::KmeansRaw => "kmeans_raw",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sc_rb" => Ok(Method::ScRb),
            "sc_rf" => Ok(Method::ScRf),
            "exact_sc" => Ok(Method::ExactSc),
            "kmeans_raw" => Ok(Method::KmeansRaw),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// Independent seeds for the three randomized stages, derived from one
/// master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub features: u64,
    pub solver: u64,
    pub kmeans: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Self {
            features: seed,
            solver: seed ^ 0x9E37_79B9_7F4A_7C15,
            kmeans: seed ^ 0xD1B5_4A32_D192_ED03,
        }
    }
}

/// Settings shared by all methods. `svd.k`, `svd.seed`, `kmeans.k` and
/// `kmeans.seed` are overridden from `k` and `seed` when a pipeline runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k: usize,
    /// Grid count for RB, feature count for RF.
    pub r: usize,
    pub kernel: KernelParams,
    pub seed: u64,
    pub svd: SvdConfig,
    pub kmeans: KMeansConfig,
}

impl PipelineConfig {
    pub fn new(k: usize, r: usize, kernel: KernelParams, seed: u64) -> Self {
        Self {
            k,
            r,
            kernel,
            seed,
            svd: SvdConfig::new(k),
            kmeans: KMeansConfig::new(k),
        }
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    fn svd_config(&self) -> SvdConfig {
        let mut svd = SvdConfig {
            k: self.k,
            seed: self.seeds().solver,
            ..self.svd.clone()
        };
        if svd.restart_dim < (4 * svd.k).max(svd.k + 2 * svd.block_size + 1) {
            svd.restart_dim = (4 * svd.k).max(32);
            svd.block_size = svd.block_size.min(svd.k.max(1));
        }
        svd
    }

    fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            seed: self.seeds().kmeans,
            ..self.kmeans.clone()
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub features: f64,
    pub degrees: f64,
    pub svd: f64,
    pub kmeans: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub dataset: String,
    pub k: usize,
    pub r: Option<usize>,
    pub seed: u64,
    pub kappa: Option<f64>,
    /// Feature dimension `D` (RB: number of non-empty bins).
    pub n_features: usize,
    pub matvecs: usize,
    pub svd_converged: bool,
    pub worst_residual: Option<f64>,
    pub zero_rows: usize,
    pub degenerate_gap: bool,
    pub warnings: Vec<String>,
    pub timings: StageTimings,
}

impl Provenance {
    fn new(method: Method, ds: &Dataset, k: usize, seed: u64) -> Self {
        Self {
            method,
            dataset: ds.name.clone(),
            k,
            r: None,
            seed,
            kappa: None,
            n_features: ds.n_cols(),
            matvecs: 0,
            svd_converged: true,
            worst_residual: None,
            zero_rows: 0,
            degenerate_gap: false,
            warnings: Vec::new(),
            timings: StageTimings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusteringOutput {
    pub assignment: ClusterAssignment,
    pub provenance: Provenance,
    /// Orthonormal spectral embedding before row normalization (absent for
    /// plain K-means).
    pub embedding: Option<Embedding>,
    /// Singular values of `Ẑ` (approximate methods) or `1 − λ` for the
    /// exact Laplacian eigenvalues `λ`.
    pub spectrum: Vec<f64>,
}

impl ClusteringOutput {
    pub fn labels(&self) -> &[usize] {
        &self.assignment.labels
    }

    /// `index,label` rows.
    pub fn write_labels_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "label"])?;
        for (i, l) in self.assignment.labels.iter().enumerate() {
            out.write_record([i.to_string(), l.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Labels plus the full provenance block.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "labels": self.assignment.labels,
            "inertia": self.assignment.inertia,
            "iterations_used": self.assignment.iterations_used,
            "replicate_chosen": self.assignment.replicate_chosen,
            "spectrum": self.spectrum,
            "provenance": self.provenance,
        })
    }
}

fn check_k(ds: &Dataset, k: usize) -> Result<()> {
    if k == 0 || k > ds.n_rows() {
        return Err(Error::TooFewPoints {
            needed: k.max(1),
            k,
            got: ds.n_rows(),
        });
    }
    Ok(())
}

/// Row-normalizes an embedding and runs K-means with the configuration's
/// K-means seed. Also returns the number of zero rows.
pub fn cluster_embedding(u: &Embedding, cfg: &PipelineConfig) -> Result<(ClusterAssignment, usize)> {
    let normalized = row_normalize(u);
    let assignment = kmeans_rows(&normalized.rows, &cfg.kmeans_config())?;
    Ok((assignment, normalized.zero_rows))
}

/// Shared tail of the approximate pipelines: degrees, weighting, SVD, row
/// normalization, K-means.
fn spectral_from_features<A: FeatureOperator>(
    features: A,
    degrees: impl FnOnce(&A) -> DegreeVector,
    cfg: &PipelineConfig,
    prov: &mut Provenance,
    start: Instant,
) -> Result<(ClusterAssignment, SvdResult)> {
    let t = Instant::now();
    let deg = degrees(&features);
    let zhat = weight_rows(features, &deg)?;
    prov.timings.degrees = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let svd_cfg = cfg.svd_config();
    let svd = top_k_left_singular_vectors(&zhat, &svd_cfg)?;
    prov.timings.svd = t.elapsed().as_secs_f64();
    prov.matvecs = svd.matvec_count;
    prov.svd_converged = svd.all_converged();
    prov.worst_residual = Some(svd.worst_residual());
    prov.degenerate_gap = svd.degenerate_gap;
    if svd.degenerate_gap {
        prov.warnings
            .push("sigma_k / sigma_k+1 is within 1e-6 of 1; embedding is subspace-determined".into());
    }
    if !svd.all_converged() {
        let worst = svd.worst_residual();
        if worst <= 10.0 * svd_cfg.tol {
            let msg = format!(
                "eigensolver stopped at relative residual {worst:.3e} after {} matvecs",
                svd.matvec_count
            );
            warn!("{msg}");
            prov.warnings.push(msg);
        } else {
            return Err(Error::NotConverged {
                worst,
                matvecs: svd.matvec_count,
            });
        }
    }

    let t = Instant::now();
    let (assignment, zero_rows) = cluster_embedding(&svd.u, cfg)?;
    prov.zero_rows = zero_rows;
    if zero_rows > 0 {
        prov.warnings
            .push(format!("{zero_rows} embedding rows had zero norm"));
    }
    prov.timings.kmeans = t.elapsed().as_secs_f64();
    prov.timings.total = start.elapsed().as_secs_f64();
    Ok((assignment, svd))
}

/// Spectral clustering with random binning features.
pub fn spectral_cluster_rb(ds: &Dataset, cfg: &PipelineConfig) -> Result<ClusteringOutput> {
    check_k(ds, cfg.k)?;
    let start = Instant::now();
    let mut prov = Provenance::new(Method::ScRb, ds, cfg.k, cfg.seed);
    prov.r = Some(cfg.r);

    let (z, grids) = generate_rb_features(ds, cfg.r, &cfg.kernel, cfg.seeds().features)?;
    prov.kappa = Some(estimate_kappa(&z, &grids));
    prov.n_features = z.n_cols();
    prov.timings.features = start.elapsed().as_secs_f64();

    let (assignment, svd) = spectral_from_features(&z, |z| compute_degrees(z), cfg, &mut prov, start)?;
    info!(
        "sc_rb N={} R={} D={} kappa={:.2} matvecs={} total={:.3}s",
        ds.n_rows(),
        cfg.r,
        prov.n_features,
        prov.kappa.unwrap_or(0.0),
        prov.matvecs,
        prov.timings.total
    );
    Ok(ClusteringOutput {
        assignment,
        provenance: prov,
        embedding: Some(svd.u),
        spectrum: svd.singular_values,
    })
}

/// Spectral clustering with random Fourier features and the same implicit
/// degree computation. Degrees are floored at each row's self term because
/// RF affinity estimates can be negative.
pub fn spectral_cluster_rf(ds: &Dataset, cfg: &PipelineConfig) -> Result<ClusteringOutput> {
    check_k(ds, cfg.k)?;
    let start = Instant::now();
    let mut prov = Provenance::new(Method::ScRf, ds, cfg.k, cfg.seed);
    prov.r = Some(cfg.r);

    let z = generate_rff_features(ds, cfg.r, &cfg.kernel, cfg.seeds().features)?;
    prov.n_features = z.n_cols();
    prov.timings.features = start.elapsed().as_secs_f64();

    let (assignment, svd) =
        spectral_from_features(&z, |z| compute_degrees_with_self_floor(z), cfg, &mut prov, start)?;
    Ok(ClusteringOutput {
        assignment,
        provenance: prov,
        embedding: Some(svd.u),
        spectrum: svd.singular_values,
    })
}

/// Dense kernel matrix, diagonal included.
pub fn kernel_matrix(ds: &Dataset, kernel: &KernelParams) -> Result<DMatrix<f64>> {
    kernel.validate()?;
    let n = ds.n_rows();
    if n > EXACT_LIMIT {
        return Err(Error::DenseLimit {
            n,
            limit: EXACT_LIMIT,
        });
    }
    let mut data = vec![0.0; n * n];
    // column-major; the matrix is symmetric so column j is row j
    data.par_chunks_mut(n).enumerate().for_each(|(j, col)| {
        let xj = ds.row(j);
        for (i, v) in col.iter_mut().enumerate() {
            *v = kernel.evaluate(ds.row(i), xj);
        }
    });
    Ok(DMatrix::from_vec(n, n, data))
}

/// Dense normalized Laplacian `I − D^{−1/2} W D^{−1/2}` of the exact kernel.
pub fn exact_laplacian(ds: &Dataset, kernel: &KernelParams) -> Result<DMatrix<f64>> {
    let w = kernel_matrix(ds, kernel)?;
    Ok(laplacian_from_affinity(&w))
}

/// `I − D^{−1/2} W D^{−1/2}` with the same degree floor as the implicit path.
pub fn laplacian_from_affinity(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / w.row(i).sum().max(crate::graph::DEGREE_FLOOR).sqrt())
        .collect();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let a = inv_sqrt[i] * w[(i, j)] * inv_sqrt[j];
            l[(i, j)] = if i == j { 1.0 - a } else { -a };
        }
    }
    l
}

/// The `k` smallest eigenpairs of a dense symmetric matrix, ascending, each
/// eigenvector with its largest-magnitude entry positive.
pub fn smallest_eigenpairs(m: &DMatrix<f64>, k: usize) -> (Vec<f64>, Embedding) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let mut u = DMatrix::zeros(m.nrows(), k);
    let mut values = Vec::with_capacity(k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        u.set_column(dst, &col);
        values.push(eig.eigenvalues[src]);
    }
    (values, u)
}

/// Exact spectral clustering: dense kernel (Laplacian or Gaussian), dense
/// normalized Laplacian, `k` smallest eigenvectors, row normalization and
/// K-means. Refuses `N > EXACT_LIMIT`.
pub fn exact_spectral_cluster(ds: &Dataset, cfg: &PipelineConfig) -> Result<ClusteringOutput> {
    check_k(ds, cfg.k)?;
    if ds.n_rows() > EXACT_LIMIT {
        return Err(Error::DenseLimit {
            n: ds.n_rows(),
            limit: EXACT_LIMIT,
        });
    }
    let start = Instant::now();
    let mut prov = Provenance::new(Method::ExactSc, ds, cfg.k, cfg.seed);
    let w = kernel_matrix(ds, &cfg.kernel)?;
    prov.n_features = ds.n_rows();
    prov.timings.features = start.elapsed().as_secs_f64();

    let t = Instant::now();
    let l = laplacian_from_affinity(&w);
    drop(w);
    prov.timings.degrees = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (lambda, u) = smallest_eigenpairs(&l, cfg.k);
    prov.timings.svd = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (assignment, zero_rows) = cluster_embedding(&u, cfg)?;
    prov.zero_rows = zero_rows;
    prov.timings.kmeans = t.elapsed().as_secs_f64();
    prov.timings.total = start.elapsed().as_secs_f64();
    Ok(ClusteringOutput {
        assignment,
        provenance: prov,
        embedding: Some(u),
        spectrum: lambda.iter().map(|l| 1.0 - l).collect(),
    })
}

/// K-means directly on the raw features.
pub fn kmeans_raw(ds: &Dataset, cfg: &PipelineConfig) -> Result<ClusteringOutput> {
    check_k(ds, cfg.k)?;
    let start = Instant::now();
    let mut prov = Provenance::new(Method::KmeansRaw, ds, cfg.k, cfg.seed);
    let assignment = kmeans(ds.as_slice(), ds.n_cols(), &cfg.kmeans_config())?;
    prov.timings.kmeans = start.elapsed().as_secs_f64();
    prov.timings.total = prov.timings.kmeans;
    Ok(ClusteringOutput {
        assignment,
        provenance: prov,
        embedding: None,
        spectrum: Vec::new(),
    })
}

pub fn run_method(method: Method, ds: &Dataset, cfg: &PipelineConfig) -> Result<ClusteringOutput> {
    match method {
        Method::ScRb => spectral_cluster_rb(ds, cfg),
        Method::ScRf => spectral_cluster_rf(ds, cfg),
        Method::ExactSc => exact_spectral_cluster(ds, cfg),
        Method::KmeansRaw => kmeans_raw(ds, cfg),
    }
}

/// `trace(Uᵀ L U)` for a dense `L`.
pub fn dense_trace_objective(l: &DMatrix<f64>, u: &Embedding) -> f64 {
    (u.transpose() * l * u).trace()
}
