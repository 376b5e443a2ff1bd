//! Cubic B-spline bases on equally spaced knots with difference penalties.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::DesignError;

pub const DEGREE: usize = 3;

/// Cubic B-spline basis of dimension `dim` over `[lo, hi]`.
///
/// The `dim + 4` knots are equally spaced with spacing `(hi - lo) / (dim - 3)`,
/// three of them lying outside the interval on each side. Inputs outside the
/// interval are clamped to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSpline {
    pub lo: f64,
    pub hi: f64,
    pub dim: usize,
}

impl BSpline {
    pub fn new(lo: f64, hi: f64, dim: usize) -> Result<Self, DesignError> {
        if dim < DEGREE + 1 {
            return Err(DesignError::DegenerateKnots(format!(
                "a cubic basis needs at least {} functions, got {dim}",
                DEGREE + 1
            )));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(DesignError::DegenerateKnots(format!("empty knot range [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi, dim })
    }

    pub fn knots(&self) -> Vec<f64> {
        let h = (self.hi - self.lo) / (self.dim - DEGREE) as f64;
        (0..self.dim + DEGREE + 1)
            .map(|i| self.lo + (i as f64 - DEGREE as f64) * h)
            .collect()
    }

    /// Index of the first nonzero function and the `DEGREE + 1` nonzero values at `x`.
    pub fn eval_nonzero(&self, x: f64) -> (usize, [f64; DEGREE + 1]) {
        let knots = self.knots();
        let x = x.clamp(self.lo, self.hi);
        let h = (self.hi - self.lo) / (self.dim - DEGREE) as f64;
        let span = (DEGREE + ((x - self.lo) / h).floor() as usize).min(self.dim - 1);

        // de Boor's triangular scheme
        let mut values = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        values[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - knots[span + 1 - j];
            right[j] = knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        (span - DEGREE, values)
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let (first, vals) = self.eval_nonzero(x);
        out[first..first + DEGREE + 1].copy_from_slice(&vals);
        out
    }
}

/// `D'D` for the `order`-th difference matrix `D` on `dim` coefficients.
pub fn difference_penalty(dim: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(dim, dim);
    for _ in 0..order {
        let rows = d.nrows();
        if rows < 2 {
            return DMatrix::zeros(dim, dim);
        }
        d = DMatrix::from_fn(rows - 1, dim, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    d.transpose() * d
}

/// Time basis evaluated at `t_values` over their range, with penalty.
pub fn time_basis(t_values: &[f64], dim: usize, order: usize) -> Result<(DMatrix<f64>, DMatrix<f64>), DesignError> {
    if dim < order + 1 {
        return Err(DesignError::InvalidSpec(format!("basis dimension {dim} below penalty order + 1")));
    }
    let mut distinct: Vec<f64> = t_values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < dim.max(2) {
        return Err(DesignError::DegenerateKnots(format!(
            "{} distinct days cannot support a basis of dimension {dim}",
            distinct.len()
        )));
    }
    let spline = BSpline::new(distinct[0], distinct[distinct.len() - 1], dim)?;
    let basis = DMatrix::from_fn(t_values.len(), dim, |i, j| spline.eval(t_values[i])[j]);
    Ok((basis, difference_penalty(dim, order)))
}

/// Marginal splines for a tensor-product surface over a coordinate bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpline {
    pub x: BSpline,
    pub y: BSpline,
}

impl TensorSpline {
    pub fn from_coords(coords: &[(f64, f64)], dim_per_axis: usize) -> Result<Self, DesignError> {
        let distinct = |f: fn(&(f64, f64)) -> f64| {
            let mut v: Vec<f64> = coords.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let xs = distinct(|c| c.0);
        let ys = distinct(|c| c.1);
        if xs.len() < 2 || ys.len() < 2 {
            return Err(DesignError::DegenerateKnots(
                "spatial basis needs at least two distinct coordinates per axis".into(),
            ));
        }
        Ok(Self {
            x: BSpline::new(xs[0], xs[xs.len() - 1], dim_per_axis)?,
            y: BSpline::new(ys[0], ys[ys.len() - 1], dim_per_axis)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.dim * self.y.dim
    }

    /// Row-major Kronecker product `Bx(x) ⊗ By(y)`.
    pub fn eval(&self, x: f64, y: f64) -> Vec<f64> {
        let bx = self.x.eval(x);
        let by = self.y.eval(y);
        bx.iter().flat_map(|a| by.iter().map(move |b| a * b)).collect()
    }

    /// Kronecker sum `Sx ⊗ I + I ⊗ Sy` of marginal difference penalties.
    pub fn penalty(&self, order: usize) -> DMatrix<f64> {
        let sx = difference_penalty(self.x.dim, order);
        let sy = difference_penalty(self.y.dim, order);
        let ix = DMatrix::<f64>::identity(self.x.dim, self.x.dim);
        let iy = DMatrix::<f64>::identity(self.y.dim, self.y.dim);
        sx.kronecker(&iy) + ix.kronecker(&sy)
    }
}

/// Tensor-product basis with one row per coordinate, plus its penalty.
pub fn spatial_basis(
    coords: &[(f64, f64)],
    dim_per_axis: usize,
    order: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>), DesignError> {
    let ts = TensorSpline::from_coords(coords, dim_per_axis)?;
    let dim = ts.dim();
    let mut basis = DMatrix::zeros(coords.len(), dim);
    for (i, &(x, y)) in coords.iter().enumerate() {
        for (j, v) in ts.eval(x, y).into_iter().enumerate() {
            basis[(i, j)] = v;
        }
    }
    Ok((basis, ts.penalty(order)))
}

/// Orthonormal basis `Z` (k x k-1) of the complement of `c`, so that
/// coefficients `Z b` satisfy `c' Z b = 0`. Built from one Householder
/// reflection.
pub fn sum_to_zero_constraint(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let vv = v.dot(&v);
    let mut h = DMatrix::<f64>::identity(k, k);
    if vv > 0.0 {
        h -= (&v * v.transpose()) * (2.0 / vv);
    }
    h.columns(1, k - 1).into_owned()
}

/// Raises zero eigenvalues of a PSD penalty to a fraction of the smallest
/// positive one, so the penalty shrinks its null space as well.
pub fn shrink_null_space(s: &DMatrix<f64>, fraction: f64) -> DMatrix<f64> {
    let eig = s.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = max * 1e-9;
    let min_pos = eig
        .eigenvalues
        .iter()
        .cloned()
        .filter(|&v| v > tol)
        .fold(f64::INFINITY, f64::min);
    if !min_pos.is_finite() {
        return s.clone();
    }
    let vals = eig.eigenvalues.map(|v| if v > tol { v } else { fraction * min_pos });
    let u = &eig.eigenvectors;
    let out = u * DMatrix::from_diagonal(&vals) * u.transpose();
    (&out + out.transpose()) * 0.5
}

/// Null space directions of a PSD matrix (eigenvectors with eigenvalue below
/// `1e-9` of the largest).
pub fn null_space(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = s.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let idx: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] <= max * 1e-9)
        .collect();
    DMatrix::from_fn(s.nrows(), idx.len(), |i, j| eig.eigenvectors[(i, idx[j])])
}
