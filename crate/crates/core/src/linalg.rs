//! Small dense-matrix helpers shared across modules.

use faer::linalg::matmul::matmul;
use faer::{c64, Accum, Mat, MatRef};

/// A square matrix stored as real or complex entries.
#[derive(Clone, Debug)]
pub enum DenseMatrix {
    Real(Mat<f64>),
    Complex(Mat<c64>),
}

impl DenseMatrix {
    pub fn dim(&self) -> usize {
        match self {
            DenseMatrix::Real(m) => m.nrows(),
            DenseMatrix::Complex(m) => m.nrows(),
        }
    }

    pub fn is_real(&self) -> bool {
        matches!(self, DenseMatrix::Real(_))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> c64 {
        match self {
            DenseMatrix::Real(m) => c64::new(m[(i, j)], 0.0),
            DenseMatrix::Complex(m) => m[(i, j)],
        }
    }

    #[inline]
    pub fn abs2(&self, i: usize, j: usize) -> f64 {
        match self {
            DenseMatrix::Real(m) => m[(i, j)] * m[(i, j)],
            DenseMatrix::Complex(m) => m[(i, j)].norm_sqr(),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i).re).collect()
    }

    pub fn to_complex(&self) -> Mat<c64> {
        match self {
            DenseMatrix::Real(m) => real_to_complex(m.as_ref()),
            DenseMatrix::Complex(m) => m.clone(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            DenseMatrix::Real(m) => m.norm_l2(),
            DenseMatrix::Complex(m) => m.norm_l2(),
        }
    }

    pub fn trace(&self) -> c64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    /// `max |M - M†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// `M v`.
    pub fn apply(&self, v: &[c64]) -> Vec<c64> {
        let n = self.dim();
        assert_eq!(v.len(), n, "vector length must match matrix dimension");
        let mut out = vec![c64::new(0.0, 0.0); n];
        match self {
            DenseMatrix::Real(m) => {
                for (j, &vj) in v.iter().enumerate() {
                    if vj.re == 0.0 && vj.im == 0.0 {
                        continue;
                    }
                    for (o, &mij) in out.iter_mut().zip(m.col(j).iter()) {
                        *o += vj * mij;
                    }
                }
            }
            DenseMatrix::Complex(m) => {
                for (j, &vj) in v.iter().enumerate() {
                    if vj.re == 0.0 && vj.im == 0.0 {
                        continue;
                    }
                    for (o, &mij) in out.iter_mut().zip(m.col(j).iter()) {
                        *o += mij * vj;
                    }
                }
            }
        }
        out
    }

    /// Replaces `M` by `(M + M†)/2`.
    pub fn hermitize(&mut self) {
        match self {
            DenseMatrix::Real(m) => {
                let n = m.nrows();
                for j in 0..n {
                    for i in (j + 1)..n {
                        let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
            }
            DenseMatrix::Complex(m) => {
                let n = m.nrows();
                for j in 0..n {
                    m[(j, j)] = c64::new(m[(j, j)].re, 0.0);
                    for i in (j + 1)..n {
                        let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                        m[(i, j)] = v;
                        m[(j, i)] = v.conj();
                    }
                }
            }
        }
    }
}

pub fn real_to_complex(m: MatRef<'_, f64>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| c64::new(m[(i, j)], 0.0))
}

/// `A B` for real matrices.
pub fn mul_real(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::<f64>::zeros(a.nrows(), b.ncols());
    matmul(
        out.as_mut(),
        Accum::Replace,
        a,
        b,
        1.0,
        faer::get_global_parallelism(),
    );
    out
}

/// `A B` for complex matrices.
pub fn mul_complex(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Mat<c64> {
    let mut out = Mat::<c64>::zeros(a.nrows(), b.ncols());
    matmul(
        out.as_mut(),
        Accum::Replace,
        a,
        b,
        c64::new(1.0, 0.0),
        faer::get_global_parallelism(),
    );
    out
}

/// `A† B` for complex matrices.
pub fn mul_adjoint_complex(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Mat<c64> {
    let mut out = Mat::<c64>::zeros(a.ncols(), b.ncols());
    matmul(
        out.as_mut(),
        Accum::Replace,
        a.adjoint(),
        b,
        c64::new(1.0, 0.0),
        faer::get_global_parallelism(),
    );
    out
}

/// Trapezoidal integral of samples `y` on abscissae `x`.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Piecewise-linear interpolation on a sorted grid; `None` outside it.
pub fn interpolate(x: &[f64], y: &[f64], at: f64) -> Option<f64> {
    let n = x.len();
    if n == 0 || at < x[0] || at > x[n - 1] || at.is_nan() {
        return None;
    }
    if n == 1 {
        return Some(y[0]);
    }
    let k = match x.partition_point(|&v| v <= at) {
        0 => 0,
        p if p >= n => n - 2,
        p => p - 1,
    };
    let t = (at - x[k]) / (x[k + 1] - x[k]);
    Some(y[k] + t * (y[k + 1] - y[k]))
}

pub fn norm(v: &[c64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn dot(a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_of_linear_function_is_exact() {
        let x: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        assert!((trapezoid(&x, &y) - 2.5).abs() < 1e-14);
    }

    #[test]
    fn interpolation_hits_nodes_and_midpoints() {
        let x = [-1.0, 0.0, 2.0];
        let y = [1.0, 3.0, 7.0];
        assert_eq!(interpolate(&x, &y, -1.0), Some(1.0));
        assert_eq!(interpolate(&x, &y, 2.0), Some(7.0));
        assert_eq!(interpolate(&x, &y, 1.0), Some(5.0));
        assert_eq!(interpolate(&x, &y, 2.5), None);
        assert_eq!(interpolate(&x, &y, -1.5), None);
    }
}
