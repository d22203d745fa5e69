//! Random binning (RB) features and, for comparison, random Fourier features.
//!
//! A random grid is a per-dimension width `ω_l` and shift `u_l`; a point
//! falls in bin `⌊(x_l − u_l)/ω_l⌋` along each dimension. Two points share
//! a feature of that grid exactly when they share the bin, and with widths
//! drawn from `p(ω) ∝ ω k''(ω)` the collision probability equals the kernel
//! value. Averaging `R` grids and scaling by `1/√R` gives a sparse `Z` with
//! `Z Zᵀ ≈ K`.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Exp1, Normal};
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::sparse::{DenseFeatureMatrix, FeatureOperator, SparseFeatureMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// `exp(−‖x − y‖₁ / σ)`, a product of one-dimensional Laplacian kernels.
    Laplacian,
    /// `exp(−‖x − y‖² / (2σ²))`.
    Gaussian,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Laplacian => "laplacian",
            KernelFamily::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub family: KernelFamily,
    pub sigma: f64,
}

impl KernelParams {
    pub fn laplacian(sigma: f64) -> Self {
        Self {
            family: KernelFamily::Laplacian,
            sigma,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self {
            family: KernelFamily::Gaussian,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma > 0.0 && self.sigma.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "kernel bandwidth must be positive, got {}",
                self.sigma
            )))
        }
    }

    /// Exact kernel value between two points.
    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Laplacian => {
                let l1: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
                (-l1 / self.sigma).exp()
            }
            KernelFamily::Gaussian => {
                let l2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
                (-l2 / (2.0 * self.sigma * self.sigma)).exp()
            }
        }
    }
}

/// One random grid: bin widths and shifts per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub widths: Vec<f64>,
    pub biases: Vec<f64>,
}

impl GridParams {
    pub fn dim(&self) -> usize {
        self.widths.len()
    }
}

/// RNG stream for grid (or feature) `index`. ChaCha is counter based, so
/// each stream is independent of how many others were drawn before it.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws a bin width from `p(ω) ∝ ω k''(ω)`.
///
/// For the one-dimensional Laplacian kernel this is `(ω/σ²) e^{−ω/σ}`, a
/// Gamma(2, σ) law, sampled as the sum of two exponentials with scale `σ`.
/// The Gaussian kernel's `ω k''(ω)` changes sign and is rejected.
pub fn sample_width<R: Rng + ?Sized>(kernel: &KernelParams, rng: &mut R) -> Result<f64> {
    kernel.validate()?;
    if kernel.family != KernelFamily::Laplacian {
        return Err(Error::UnsupportedKernel(kernel.family.name()));
    }
    loop {
        let a: f64 = Exp1.sample(rng);
        let b: f64 = Exp1.sample(rng);
        let w = kernel.sigma * (a + b);
        // a zero width would make the bin index undefined
        if w > 0.0 && w.is_finite() {
            return Ok(w);
        }
    }
}

/// Draws one grid: independent widths and, per dimension, a shift uniform on
/// `[0, ω_l]`.
pub fn sample_grid<R: Rng + ?Sized>(
    kernel: &KernelParams,
    dim: usize,
    rng: &mut R,
) -> Result<GridParams> {
    if dim == 0 {
        return Err(Error::InvalidConfig("grid dimension must be at least 1".into()));
    }
    let mut widths = Vec::with_capacity(dim);
    let mut biases = Vec::with_capacity(dim);
    for _ in 0..dim {
        let w = sample_width(kernel, rng)?;
        widths.push(w);
        biases.push(rng.gen::<f64>() * w);
    }
    Ok(GridParams { widths, biases })
}

/// Integer bin coordinates of `x` in `grid` (floor toward −∞).
pub fn bin_index(x: &[f64], grid: &GridParams) -> Vec<i64> {
    let mut out = vec![0; x.len()];
    bin_index_into(x, grid, &mut out);
    out
}

fn bin_index_into(x: &[f64], grid: &GridParams, out: &mut [i64]) {
    debug_assert_eq!(x.len(), grid.dim());
    for (l, o) in out.iter_mut().enumerate() {
        *o = ((x[l] - grid.biases[l]) / grid.widths[l]).floor() as i64;
    }
}

/// Bins every row of `ds` in one grid. Returns the local bin id of each row
/// (ids in first-appearance order over rows) and the number of bins used.
fn bin_rows(ds: &Dataset, grid: &GridParams) -> (Vec<u32>, usize) {
    let (n, d) = (ds.n_rows(), ds.n_cols());
    let mut coords = vec![0i64; n * d];
    for (i, c) in coords.chunks_exact_mut(d).enumerate() {
        bin_index_into(ds.row(i), grid, c);
    }
    let mut ids: FxHashMap<&[i64], u32> = FxHashMap::default();
    let local = coords
        .chunks_exact(d)
        .map(|key| {
            let next = ids.len() as u32;
            *ids.entry(key).or_insert(next)
        })
        .collect();
    (local, ids.len())
}

/// Generates the RB feature matrix with `n_grids` grids.
///
/// Columns are numbered by first appearance of their `(grid, bin)` key when
/// scanning grid by grid and, inside a grid, row by row. Grid `j` draws from
/// [`stream_rng`]`(seed, j)`, so the output is bit-identical for any thread
/// count.
pub fn generate_rb_features(
    ds: &Dataset,
    n_grids: usize,
    kernel: &KernelParams,
    seed: u64,
) -> Result<(SparseFeatureMatrix, Vec<GridParams>)> {
    if n_grids == 0 {
        return Err(Error::InvalidConfig("grid count R must be at least 1".into()));
    }
    kernel.validate()?;
    if kernel.family != KernelFamily::Laplacian {
        return Err(Error::UnsupportedKernel(kernel.family.name()));
    }
    let d = ds.n_cols();
    let per_grid: Vec<(GridParams, Vec<u32>, usize)> = (0..n_grids)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(seed, j as u64);
            let grid = sample_grid(kernel, d, &mut rng)?;
            let (local, count) = bin_rows(ds, &grid);
            Ok((grid, local, count))
        })
        .collect::<Result<_>>()?;

    let mut offsets = Vec::with_capacity(n_grids);
    let mut n_cols = 0usize;
    for (_, _, count) in &per_grid {
        offsets.push(n_cols as u32);
        n_cols += count;
    }
    if n_cols > u32::MAX as usize {
        return Err(Error::InvalidConfig(format!(
            "{n_cols} features exceed the 32-bit column index range"
        )));
    }
    let n = ds.n_rows();
    let mut indices = vec![0u32; n * n_grids];
    indices
        .par_chunks_mut(n_grids)
        .enumerate()
        .for_each(|(i, row)| {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = offsets[j] + per_grid[j].1[i];
            }
        });
    let grids = per_grid.into_iter().map(|(g, _, _)| g).collect();
    let z = SparseFeatureMatrix::from_row_indices(n, n_cols, n_grids, indices)?;
    Ok((z, grids))
}

/// Expected number of non-empty bins per grid, estimated as the mean over
/// grids of `1 / ν`, where `ν` is the largest fraction of points sharing one
/// bin of that grid.
pub fn estimate_kappa(z: &SparseFeatureMatrix, grids: &[GridParams]) -> f64 {
    let r = z.n_grids();
    debug_assert!(grids.is_empty() || grids.len() == r);
    let n = z.n_rows() as f64;
    let mut total = 0.0;
    for j in 0..r {
        let max_occ = (0..z.n_rows())
            .map(|i| z.column_occupancy(z.row(i)[j] as usize))
            .max()
            .unwrap_or(1);
        total += n / max_occ as f64;
    }
    total / r as f64
}

/// Random Fourier features `√(2/R) cos(wᵀx + b)`, with `w` drawn from the
/// kernel's spectral density (Cauchy with scale `1/σ` per dimension for the
/// Laplacian kernel, normal with standard deviation `1/σ` for the Gaussian)
/// and `b` uniform on `[0, 2π)`.
pub fn generate_rff_features(
    ds: &Dataset,
    n_features: usize,
    kernel: &KernelParams,
    seed: u64,
) -> Result<DenseFeatureMatrix> {
    if n_features == 0 {
        return Err(Error::InvalidConfig("feature count R must be at least 1".into()));
    }
    kernel.validate()?;
    let d = ds.n_cols();
    let scale = 1.0 / kernel.sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut freqs = Vec::with_capacity(n_features * d);
    let mut phases = Vec::with_capacity(n_features);
    match kernel.family {
        KernelFamily::Laplacian => {
            let dist = Cauchy::new(0.0, scale).expect("scale is positive");
            for _ in 0..n_features {
                freqs.extend((0..d).map(|_| dist.sample(&mut rng)));
                phases.push(rng.gen::<f64>() * std::f64::consts::TAU);
            }
        }
        KernelFamily::Gaussian => {
            let dist = Normal::new(0.0, scale).expect("scale is positive");
            for _ in 0..n_features {
                freqs.extend((0..d).map(|_| dist.sample(&mut rng)));
                phases.push(rng.gen::<f64>() * std::f64::consts::TAU);
            }
        }
    }
    let amp = (2.0 / n_features as f64).sqrt();
    let n = ds.n_rows();
    let mut data = vec![0.0; n * n_features];
    data.par_chunks_mut(n_features)
        .enumerate()
        .for_each(|(i, row)| {
            let x = ds.row(i);
            for (r, out) in row.iter_mut().enumerate() {
                let w = &freqs[r * d..(r + 1) * d];
                let arg: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + phases[r];
                *out = amp * arg.cos();
            }
        });
    DenseFeatureMatrix::from_row_major(n, n_features, data)
}

/// Writes `Z` as little-endian binary: `N`, `D`, `R` as `u64`, then for
/// each row its `R` column indices as `u32`.
pub fn write_binary<W: Write>(z: &SparseFeatureMatrix, mut w: W) -> Result<()> {
    for v in [z.n_rows(), z.n_cols(), z.n_grids()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for i in 0..z.n_rows() {
        for &c in z.row(i) {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<SparseFeatureMatrix> {
    let mut header = [0u8; 24];
    r.read_exact(&mut header)?;
    let field = |k: usize| u64::from_le_bytes(header[8 * k..8 * k + 8].try_into().unwrap()) as usize;
    let (n, d, grids) = (field(0), field(1), field(2));
    let mut buf = vec![0u8; n * grids * 4];
    r.read_exact(&mut buf)?;
    let indices = buf
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    SparseFeatureMatrix::from_row_indices(n, d, grids, indices)
}

/// MatrixMarket coordinate text (1-based), for inspection with other tools.
pub fn write_matrix_market<W: Write>(z: &SparseFeatureMatrix, mut w: W) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", z.n_rows(), z.n_cols(), z.nnz())?;
    let v = z.value();
    for i in 0..z.n_rows() {
        let mut cols: Vec<u32> = z.row(i).to_vec();
        cols.sort_unstable();
        for c in cols {
            writeln!(w, "{} {} {:e}", i + 1, c + 1, v)?;
        }
    }
    w.flush()?;
    Ok(())
}
