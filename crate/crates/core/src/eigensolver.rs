//! Top-k left singular vectors of a feature operator through products only.
//!
//! The solver works on the Gram operator `G = A Aᵀ` (size `N`), applying it
//! as `A (Aᵀ x)`. It is a block Davidson iteration without preconditioning:
//! Rayleigh-Ritz on an orthonormal basis, expansion by the residuals of the
//! unconverged Ritz pairs, and thick restart (keep the leading Ritz vectors)
//! when the basis reaches `restart_dim`. With identity preconditioning the
//! expansion spans the same space as block Lanczos.
//!
//! A Ritz pair `(θ, u)` is accepted when `‖G u − θ u‖ ≤ tol · σ_max · max(σ, tol · σ_max)`
//! with `σ = √θ`. Since `A v − σ u = (G u − θ u)/σ` for `v = Aᵀu/σ`, this
//! is a relative tolerance of `tol` on the singular triplet residuals.

use log::{debug, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::sparse::FeatureOperator;

/// `N × k` matrix whose columns are the leading left singular vectors.
pub type Embedding = DMatrix<f64>;

/// Singular values with `σ_k/σ_{k+1}` below this are reported as a
/// degenerate gap.
pub const DEGENERATE_GAP: f64 = 1.0 + 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvdConfig {
    pub k: usize,
    pub tol: f64,
    pub max_matvecs: usize,
    pub block_size: usize,
    pub restart_dim: usize,
    pub seed: u64,
}

impl Default for SvdConfig {
    fn default() -> Self {
        Self::new(2)
    }
}

impl SvdConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            tol: 1e-5,
            max_matvecs: 20_000,
            block_size: k.clamp(1, 4),
            restart_dim: (4 * k).max(32),
            seed: 0,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, n_rows: usize, n_cols: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k == 0 || self.k > n_rows.min(n_cols) {
            return bad(format!(
                "k = {} must lie in 1..={} for a {}x{} operator",
                self.k,
                n_rows.min(n_cols),
                n_rows,
                n_cols
            ));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.block_size == 0 {
            return bad("block_size must be at least 1".into());
        }
        if self.restart_dim <= 2 * self.k || self.restart_dim < self.k + 2 * self.block_size {
            return bad(format!(
                "restart_dim = {} must exceed 2k and hold k + 2*block_size",
                self.restart_dim
            ));
        }
        Ok(())
    }
}

/// One line of the solver trace, recorded per outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub basis_dim: usize,
    pub matvecs: usize,
    pub restarts: usize,
    /// Relative residual of each wanted Ritz pair.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Embedding,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub matvec_count: usize,
    pub converged: Vec<bool>,
    /// `‖G u − θ u‖ / (σ_max · max(σ, tol σ_max))` per triplet.
    pub residuals: Vec<f64>,
    /// Triplets whose singular value is numerically zero (`k > rank`).
    pub rank_deficient: Vec<bool>,
    /// `σ_k / σ_{k+1} < DEGENERATE_GAP`; only the subspace is meaningful.
    pub degenerate_gap: bool,
    pub trace: Vec<TraceEntry>,
}

impl SvdResult {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    pub fn worst_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

struct Basis {
    n: usize,
    v: Vec<Vec<f64>>,
    gv: Vec<Vec<f64>>,
    h: DMatrix<f64>,
    matvecs: usize,
}

impl Basis {
    fn dim(&self) -> usize {
        self.v.len()
    }

    fn apply_gram<A: FeatureOperator + ?Sized>(&mut self, op: &A, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; op.n_cols()];
        op.apply_transpose(x, &mut t);
        let mut y = vec![0.0; self.n];
        op.apply(&t, &mut y);
        self.matvecs += 2;
        y
    }

    /// Orthogonalizes `x` against the basis (two passes of classical
    /// Gram-Schmidt) and normalizes it. Returns false if `x` is numerically
    /// inside the span.
    fn orthonormalize(&self, x: &mut [f64]) -> bool {
        let before = linalg::norm(x);
        if before == 0.0 || !before.is_finite() {
            return false;
        }
        let mut proj = vec![0.0; self.n];
        for _ in 0..2 {
            if self.v.is_empty() {
                break;
            }
            let coeffs: Vec<f64> = self.v.iter().map(|b| linalg::dot(b, x)).collect();
            linalg::combine(&self.v, &coeffs, &mut proj);
            linalg::axpy(-1.0, &proj, x);
        }
        let after = linalg::norm(x);
        if after <= 1e-10 * before {
            return false;
        }
        linalg::scale(1.0 / after, x);
        true
    }

    /// Appends `x` (already orthonormal to the basis) and extends `H`.
    fn push<A: FeatureOperator + ?Sized>(&mut self, op: &A, x: Vec<f64>) {
        let gx = self.apply_gram(op, &x);
        let m = self.dim();
        let mut h = DMatrix::zeros(m + 1, m + 1);
        h.view_mut((0, 0), (m, m)).copy_from(&self.h);
        for i in 0..m {
            let hij = linalg::dot(&self.v[i], &gx);
            h[(i, m)] = hij;
            h[(m, i)] = hij;
        }
        h[(m, m)] = linalg::dot(&x, &gx);
        self.h = h;
        self.v.push(x);
        self.gv.push(gx);
    }

    fn random_vector(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.n).map(|_| rng.sample(StandardNormal)).collect()
    }
}

/// Rayleigh-Ritz pairs of the current basis, descending by value; ties keep
/// the lower index.
fn ritz(h: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let m = h.nrows();
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(m, m);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Flips `x` so its largest-magnitude entry (first one on ties) is positive.
fn fix_sign(x: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in x.iter().enumerate() {
        if v.abs() > x[best].abs() {
            best = i;
        }
    }
    if x.get(best).is_some_and(|&v| v < 0.0) {
        for v in x.iter_mut() {
            *v = -*v;
        }
    }
}

/// Computes the `cfg.k` largest singular values of `op` and their left
/// singular vectors.
///
/// Running out of `max_matvecs` is not an error: the best available Ritz
/// pairs are returned with `converged` cleared for the unfinished ones.
pub fn top_k_left_singular_vectors<A: FeatureOperator + ?Sized>(
    op: &A,
    cfg: &SvdConfig,
) -> Result<SvdResult> {
    let (n, d) = (op.n_rows(), op.n_cols());
    cfg.validate(n, d)?;
    let k = cfg.k;
    let block = cfg.block_size;
    let max_dim = cfg.restart_dim.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut basis = Basis {
        n,
        v: Vec::new(),
        gv: Vec::new(),
        h: DMatrix::zeros(0, 0),
        matvecs: 0,
    };

    let initial = k.max(block).min(max_dim);
    while basis.dim() < initial {
        let mut x = basis.random_vector(&mut rng);
        if basis.orthonormalize(&mut x) {
            basis.push(op, x);
        }
    }

    let mut trace = Vec::new();
    let mut restarts = 0usize;
    let mut iteration = 0usize;
    loop {
        iteration += 1;
        let m = basis.dim();
        let (theta, y) = ritz(&basis.h);
        let wanted = (k + block).min(m);
        let sigma_max = theta[0].max(0.0).sqrt();

        let mut ritz_vecs = Vec::with_capacity(wanted);
        let mut resid_vecs = Vec::with_capacity(wanted);
        let mut rel = Vec::with_capacity(wanted);
        for i in 0..wanted {
            let coeffs: Vec<f64> = y.column(i).iter().copied().collect();
            let mut x = vec![0.0; n];
            let mut gx = vec![0.0; n];
            linalg::combine(&basis.v, &coeffs, &mut x);
            linalg::combine(&basis.gv, &coeffs, &mut gx);
            linalg::axpy(-theta[i], &x, &mut gx);
            let s = theta[i].max(0.0).sqrt();
            let scale = sigma_max * s.max(cfg.tol * sigma_max);
            let r = linalg::norm(&gx);
            rel.push(if scale > 0.0 { r / scale } else if r == 0.0 { 0.0 } else { f64::INFINITY });
            ritz_vecs.push(x);
            resid_vecs.push(gx);
        }
        let converged: Vec<bool> = rel[..k].iter().map(|&r| r <= cfg.tol).collect();
        let entry = TraceEntry {
            iteration,
            basis_dim: m,
            matvecs: basis.matvecs,
            restarts,
            residuals: rel[..k].to_vec(),
        };
        debug!(
            "svd_trace iteration={} basis_dim={} matvecs={} restarts={} residuals={:?}",
            entry.iteration, entry.basis_dim, entry.matvecs, entry.restarts, entry.residuals
        );
        trace.push(entry);

        let done = converged.iter().all(|&c| c);
        let exhausted = basis.matvecs >= cfg.max_matvecs;
        if done || exhausted || m == n {
            return Ok(finish(
                ritz_vecs, &theta, &rel, converged, basis.matvecs, k, cfg.tol, trace,
            ));
        }

        // expand with residuals of unconverged wanted pairs, then with the
        // next Ritz pairs beyond k
        let mut picks: Vec<usize> = (0..k).filter(|&i| !converged[i]).collect();
        picks.extend(k..wanted);
        picks.truncate(block);

        if m + picks.len() > max_dim {
            let keep = (max_dim / 2).max(k + block).min(m);
            if keep < m {
                let mut v = Vec::with_capacity(keep);
                let mut gv = Vec::with_capacity(keep);
                for i in 0..keep {
                    let coeffs: Vec<f64> = y.column(i).iter().copied().collect();
                    let mut x = vec![0.0; n];
                    let mut gx = vec![0.0; n];
                    linalg::combine(&basis.v, &coeffs, &mut x);
                    linalg::combine(&basis.gv, &coeffs, &mut gx);
                    v.push(x);
                    gv.push(gx);
                }
                basis.v = v;
                basis.gv = gv;
                basis.h = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&theta[..keep]));
                restarts += 1;
            }
            picks.truncate(max_dim - basis.dim());
        }

        let mut added = 0;
        for i in picks {
            let mut r = resid_vecs[i].clone();
            if basis.dim() < max_dim && basis.orthonormalize(&mut r) {
                basis.push(op, r);
                added += 1;
            }
        }
        let mut attempts = 0;
        while added == 0 && basis.dim() < max_dim && attempts < 8 {
            let mut x = basis.random_vector(&mut rng);
            if basis.orthonormalize(&mut x) {
                basis.push(op, x);
                added += 1;
            }
            attempts += 1;
        }
        if added == 0 {
            // the basis spans an invariant subspace; nothing left to add
            return Ok(finish(
                ritz_vecs, &theta, &rel, converged, basis.matvecs, k, cfg.tol, trace,
            ));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    mut ritz_vecs: Vec<Vec<f64>>,
    theta: &[f64],
    rel: &[f64],
    converged: Vec<bool>,
    matvecs: usize,
    k: usize,
    tol: f64,
    trace: Vec<TraceEntry>,
) -> SvdResult {
    let n = ritz_vecs[0].len();
    let theta_max = theta[0].max(0.0);
    let mut u = DMatrix::zeros(n, k);
    let mut singular_values = Vec::with_capacity(k);
    let mut rank_deficient = Vec::with_capacity(k);
    for i in 0..k {
        fix_sign(&mut ritz_vecs[i]);
        u.set_column(i, &nalgebra::DVector::from_column_slice(&ritz_vecs[i]));
        let zero = theta[i] <= 1e-14 * theta_max;
        rank_deficient.push(zero);
        singular_values.push(if zero { 0.0 } else { theta[i].sqrt() });
    }
    let degenerate_gap = theta.len() > k
        && theta[k] > 0.0
        && theta[k - 1].sqrt() / theta[k].sqrt() < DEGENERATE_GAP;
    if degenerate_gap {
        warn!(
            "degenerate singular gap: sigma_k = {:.6e}, sigma_k+1 = {:.6e}; only the subspace is determined",
            theta[k - 1].max(0.0).sqrt(),
            theta[k].max(0.0).sqrt()
        );
    }
    if rank_deficient.iter().any(|&z| z) {
        warn!("k = {k} exceeds the numerical rank; trailing singular values are zero");
    }
    if !converged.iter().all(|&c| c) {
        warn!(
            "eigensolver stopped after {matvecs} matvecs with worst relative residual {:.3e} (tol {tol:.1e})",
            rel[..k].iter().copied().fold(0.0, f64::max)
        );
    }
    SvdResult {
        u,
        singular_values,
        matvec_count: matvecs,
        converged,
        residuals: rel[..k].to_vec(),
        rank_deficient,
        degenerate_gap,
        trace,
    }
}

/// Explicit residuals of a computed triplet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    /// `‖A v − σ u‖` with `v = Aᵀu / ‖Aᵀu‖`.
    pub left: f64,
    /// `‖Aᵀ u − σ v‖`.
    pub right: f64,
}

/// Recomputes both singular-triplet residuals from scratch.
pub fn residual_certificates<A: FeatureOperator + ?Sized>(
    op: &A,
    result: &SvdResult,
) -> Vec<Certificate> {
    let (n, d) = (op.n_rows(), op.n_cols());
    let mut out = Vec::with_capacity(result.singular_values.len());
    let mut atu = vec![0.0; d];
    let mut av = vec![0.0; n];
    for (i, &sigma) in result.singular_values.iter().enumerate() {
        let u: Vec<f64> = result.u.column(i).iter().copied().collect();
        op.apply_transpose(&u, &mut atu);
        let norm = linalg::norm(&atu);
        let v: Vec<f64> = if norm > 0.0 {
            atu.iter().map(|x| x / norm).collect()
        } else {
            vec![0.0; d]
        };
        let right = atu
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - sigma * b).powi(2))
            .sum::<f64>()
            .sqrt();
        op.apply(&v, &mut av);
        let left = av
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - sigma * b).powi(2))
            .sum::<f64>()
            .sqrt();
        out.push(Certificate { left, right });
    }
    out
}

/// Rows scaled to unit Euclidean norm.
#[derive(Debug, Clone)]
pub struct RowNormalized {
    pub rows: Embedding,
    /// Rows with norm below `1e-14`, left as zeros.
    pub zero_rows: usize,
}

pub const ZERO_ROW_NORM: f64 = 1e-14;

pub fn row_normalize(u: &Embedding) -> RowNormalized {
    let mut rows = u.clone();
    let mut zero_rows = 0;
    for i in 0..rows.nrows() {
        let norm = rows.row(i).norm();
        if norm < ZERO_ROW_NORM {
            rows.row_mut(i).fill(0.0);
            zero_rows += 1;
        } else {
            rows.row_mut(i).scale_mut(1.0 / norm);
        }
    }
    RowNormalized { rows, zero_rows }
}
