//! Vector kernels shared by the graph and solver code.
//!
//! Reductions split their input into fixed-length chunks, reduce each chunk
//! sequentially and then add the partial sums in chunk order. The result is
//! therefore bit-identical no matter how many worker threads rayon uses.

use rayon::prelude::*;

/// Chunk length for parallel reductions and element-wise kernels.
pub const CHUNK: usize = 4096;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= CHUNK {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let partials: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    partials.iter().sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    y.par_chunks_mut(CHUNK)
        .zip(x.par_chunks(CHUNK))
        .for_each(|(cy, cx)| {
            for (yi, xi) in cy.iter_mut().zip(cx) {
                *yi += alpha * xi;
            }
        });
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    x.par_chunks_mut(CHUNK).for_each(|c| {
        for v in c {
            *v *= alpha;
        }
    });
}

/// `out = Σ_j coeffs[j] * basis[j]`, summed in basis order for every entry.
pub fn combine(basis: &[Vec<f64>], coeffs: &[f64], out: &mut [f64]) {
    debug_assert_eq!(basis.len(), coeffs.len());
    out.par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(chunk, co)| {
            let start = chunk * CHUNK;
            let len = co.len();
            co.fill(0.0);
            for (b, &c) in basis.iter().zip(coeffs) {
                if c == 0.0 {
                    continue;
                }
                for (o, v) in co.iter_mut().zip(&b[start..start + len]) {
                    *o += c * v;
                }
            }
        });
}
