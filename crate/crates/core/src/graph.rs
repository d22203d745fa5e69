//! Implicit normalized Laplacian `L̂ = I − Ẑ Ẑᵀ` with `Ẑ = D̂^{−1/2} Z`.
//!
//! The affinity `Ŵ = Z Zᵀ` is never formed. Degrees come from two products,
//! `Z (Zᵀ 1)`, and every later use of `L̂` goes through products with `Ẑ`.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::sparse::{DenseFeatureMatrix, FeatureOperator};

/// Degrees below this are clamped so `D̂^{−1/2}` stays finite.
pub const DEGREE_FLOOR: f64 = 1e-12;

/// Diagonal of `D̂`, one positive entry per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeVector(Vec<f64>);

impl DegreeVector {
    /// Wraps raw degrees, applying the floor.
    pub fn new(mut values: Vec<f64>) -> Self {
        for v in &mut values {
            if !(*v >= DEGREE_FLOOR) {
                *v = DEGREE_FLOOR;
            }
        }
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Writes `index,degree` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "degree"])?;
        for (i, d) in self.0.iter().enumerate() {
            out.write_record([i.to_string(), d.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `D̂ = diag(Z (Zᵀ 1))`, floored at [`DEGREE_FLOOR`].
pub fn compute_degrees<A: FeatureOperator + ?Sized>(z: &A) -> DegreeVector {
    let ones = vec![1.0; z.n_rows()];
    let mut col_sums = vec![0.0; z.n_cols()];
    z.apply_transpose(&ones, &mut col_sums);
    let mut deg = vec![0.0; z.n_rows()];
    z.apply(&col_sums, &mut deg);
    DegreeVector::new(deg)
}

/// Degrees for features whose pairwise estimates can be negative (random
/// Fourier features). Each degree is raised to at least the row's own term
/// `‖z_i‖²`, which every true degree contains.
pub fn compute_degrees_with_self_floor(z: &DenseFeatureMatrix) -> DegreeVector {
    let mut deg = compute_degrees(z).0;
    for (i, d) in deg.iter_mut().enumerate() {
        let own = linalg::dot(z.row(i), z.row(i));
        if *d < own {
            *d = own;
        }
    }
    DegreeVector::new(deg)
}

/// `Ẑ = D̂^{−1/2} Z`, stored as the original operator plus a row scale.
#[derive(Debug, Clone)]
pub struct WeightedFeatureMatrix<A> {
    inner: A,
    row_scale: Vec<f64>,
}

impl<A> WeightedFeatureMatrix<A> {
    pub fn inner(&self) -> &A {
        &self.inner
    }

    /// `D̂_ii^{−1/2}` per row.
    pub fn row_scale(&self) -> &[f64] {
        &self.row_scale
    }
}

/// Scales row `i` of `z` by `deg_i^{−1/2}`.
pub fn weight_rows<A: FeatureOperator>(z: A, deg: &DegreeVector) -> Result<WeightedFeatureMatrix<A>> {
    if deg.len() != z.n_rows() {
        return Err(Error::LengthMismatch {
            left: deg.len(),
            right: z.n_rows(),
        });
    }
    let row_scale = deg
        .values()
        .iter()
        .enumerate()
        .map(|(row, &d)| {
            if d > 0.0 && d.is_finite() {
                Ok(1.0 / d.sqrt())
            } else {
                Err(Error::NonPositiveDegree { row, value: d })
            }
        })
        .collect::<Result<_>>()?;
    Ok(WeightedFeatureMatrix { inner: z, row_scale })
}

impl<A: FeatureOperator> FeatureOperator for WeightedFeatureMatrix<A> {
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    fn n_cols(&self) -> usize {
        self.inner.n_cols()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.inner.apply(x, y);
        for (yi, s) in y.iter_mut().zip(&self.row_scale) {
            *yi *= s;
        }
    }

    fn apply_transpose(&self, u: &[f64], v: &mut [f64]) {
        let scaled: Vec<f64> = u.iter().zip(&self.row_scale).map(|(a, s)| a * s).collect();
        self.inner.apply_transpose(&scaled, v);
    }
}

/// `trace(Uᵀ L̂ U) = K − ‖Ẑᵀ U‖_F²` for `U` with orthonormal columns.
pub fn laplacian_quadratic_form<A: FeatureOperator + ?Sized>(zhat: &A, u: &DMatrix<f64>) -> f64 {
    let mut proj = vec![0.0; zhat.n_cols()];
    let mut captured = 0.0;
    for col in u.column_iter() {
        let col: Vec<f64> = col.iter().copied().collect();
        zhat.apply_transpose(&col, &mut proj);
        captured += linalg::dot(&proj, &proj);
    }
    u.ncols() as f64 - captured
}
