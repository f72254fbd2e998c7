//! Dense extended-precision linear algebra: row-major matrices over MPFR
//! floats, LU factorization with partial pivoting, and solves with one step
//! of iterative refinement (residual accumulated at doubled precision).
//!
//! State spaces are desk-scale, so dense direct methods are the simplest
//! robust choice; the refinement step recovers most of the bits that extreme
//! rate ratios (entries spanning hundreds of orders of magnitude) cost the
//! plain factorization.

use rug::Float;

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub(crate) struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub prec: u32,
    data: Vec<Float>,
}

impl Mat {
    pub fn zeros(prec: u32, rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, prec, data: vec![Float::with_val(prec, 0); rows * cols] }
    }

    pub fn identity(prec: u32, n: usize) -> Mat {
        let mut m = Mat::zeros(prec, n, n);
        for i in 0..n {
            *m.at_mut(i, i) = Float::with_val(prec, 1);
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &Float {
        &self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut Float {
        &mut self.data[i * self.cols + j]
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = Mat::zeros(self.prec, self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if *a == 0 {
                    continue;
                }
                for j in 0..other.cols {
                    let p = Float::with_val(self.prec, a * other.at(k, j));
                    *out.at_mut(i, j) += p;
                }
            }
        }
        out
    }

    /// self + s·other, in place.
    pub fn add_scaled(&mut self, other: &Mat, s: &Float) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (d, o) in self.data.iter_mut().zip(&other.data) {
            *d += Float::with_val(self.prec, o * s);
        }
    }

    pub fn scaled(&self, s: &Float) -> Mat {
        let mut out = self.clone();
        for d in out.data.iter_mut() {
            *d *= s;
        }
        out
    }

    pub fn max_abs(&self) -> Float {
        let mut m = Float::with_val(self.prec, 0);
        for d in &self.data {
            let a = d.clone().abs();
            if a > m {
                m = a;
            }
        }
        m
    }

    pub fn to_rows(&self) -> Vec<Vec<Float>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.at(i, j).clone()).collect())
            .collect()
    }
}

pub(crate) struct Lu {
    lu: Mat,
    piv: Vec<usize>,
}

/// LU factorization with partial pivoting. A vanishing pivot means the matrix
/// is numerically singular.
pub(crate) fn lu_factor(a: &Mat) -> Result<Lu> {
    assert_eq!(a.rows, a.cols, "LU needs a square matrix");
    let n = a.rows;
    let prec = a.prec;
    let mut lu = a.clone();
    let mut piv: Vec<usize> = (0..n).collect();
    for col in 0..n {
        // Pivot search.
        let mut best = col;
        let mut best_abs = lu.at(col, col).clone().abs();
        for r in col + 1..n {
            let v = lu.at(r, col).clone().abs();
            if v > best_abs {
                best_abs = v;
                best = r;
            }
        }
        if best_abs == 0 {
            return Err(Error::Conditioning { residual: f64::INFINITY });
        }
        if best != col {
            for j in 0..n {
                let tmp = lu.at(col, j).clone();
                *lu.at_mut(col, j) = lu.at(best, j).clone();
                *lu.at_mut(best, j) = tmp;
            }
            piv.swap(col, best);
        }
        let pivot = lu.at(col, col).clone();
        for r in col + 1..n {
            let factor = Float::with_val(prec, lu.at(r, col) / &pivot);
            *lu.at_mut(r, col) = factor.clone();
            if factor == 0 {
                continue;
            }
            for j in col + 1..n {
                let delta = Float::with_val(prec, &factor * lu.at(col, j));
                *lu.at_mut(r, j) -= delta;
            }
        }
    }
    Ok(Lu { lu, piv })
}

impl Lu {
    pub fn solve(&self, b: &[Float]) -> Vec<Float> {
        let n = self.lu.rows;
        let prec = self.lu.prec;
        assert_eq!(b.len(), n);
        // Apply permutation, then forward/back substitution.
        let mut x: Vec<Float> =
            self.piv.iter().map(|&p| Float::with_val(prec, &b[p])).collect();
        for i in 1..n {
            for j in 0..i {
                let d = Float::with_val(prec, self.lu.at(i, j) * &x[j]);
                x[i] -= d;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let d = Float::with_val(prec, self.lu.at(i, j) * &x[j]);
                x[i] -= d;
            }
            x[i] /= self.lu.at(i, i);
        }
        x
    }
}

/// Residual b − A·x computed at doubled precision, rounded back.
fn residual(a: &Mat, x: &[Float], b: &[Float]) -> Vec<Float> {
    let hp = 2 * a.prec;
    (0..a.rows)
        .map(|i| {
            let mut acc = Float::with_val(hp, &b[i]);
            for j in 0..a.cols {
                acc -= Float::with_val(hp, a.at(i, j) * &x[j]);
            }
            Float::with_val(a.prec, acc)
        })
        .collect()
}

fn max_abs_vec(v: &[Float], prec: u32) -> Float {
    let mut m = Float::with_val(prec, 0);
    for x in v {
        let a = x.clone().abs();
        if a > m {
            m = a;
        }
    }
    m
}

/// Solves A·x = b with one refinement step and a posteriori validation: the
/// scaled residual ‖b − A·x‖ / (‖A‖‖x‖ + ‖b‖) must stay below 2^(−prec/4),
/// otherwise the system is reported as too ill-conditioned for the working
/// precision.
pub(crate) fn solve_refined(a: &Mat, b: &[Float]) -> Result<Vec<Float>> {
    Ok(solve_refined_multi(a, std::slice::from_ref(&b.to_vec()))?.pop().unwrap())
}

/// [`solve_refined`] for several right-hand sides sharing one factorization.
pub(crate) fn solve_refined_multi(a: &Mat, bs: &[Vec<Float>]) -> Result<Vec<Vec<Float>>> {
    let prec = a.prec;
    let lu = lu_factor(a)?;
    let a_norm = a.max_abs();
    let gate = Float::with_val(prec, 1) >> (prec / 4);
    let mut out = Vec::with_capacity(bs.len());
    for b in bs {
        let mut x = lu.solve(b);
        let r = residual(a, &x, b);
        let d = lu.solve(&r);
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += di;
        }
        let r2 = residual(a, &x, b);
        let scale = Float::with_val(prec, &a_norm * &max_abs_vec(&x, prec))
            + max_abs_vec(b, prec);
        if scale != 0 {
            let rel = Float::with_val(prec, max_abs_vec(&r2, prec) / &scale);
            if rel > gate {
                return Err(Error::Conditioning { residual: rel.to_f64() });
            }
        }
        out.push(x);
    }
    Ok(out)
}
