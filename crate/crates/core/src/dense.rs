//! Minimal dense linear algebra: row-major matrices and an LU factorization
//! with partial pivoting. Network Newton systems and simplex bases at the
//! scales this crate targets stay small enough that dense kernels win on
//! simplicity.

#[derive(Debug, Clone)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }
}

/// LU factorization with partial pivoting, `P·A = L·U`.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

#[derive(Debug, thiserror::Error)]
#[error("singular matrix (pivot {pivot:.3e} at column {col})")]
pub struct SingularMatrix {
    pub col: usize,
    pub pivot: f64,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Lu, SingularMatrix> {
        assert_eq!(a.rows, a.cols);
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_val = lu[col * n + col].abs();
            for r in col + 1..n {
                let v = lu[r * n + col].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = r;
                }
            }
            if pivot_val < 1e-13 {
                return Err(SingularMatrix { col, pivot: pivot_val });
            }
            if pivot_row != col {
                perm.swap(col, pivot_row);
                for c in 0..n {
                    lu.swap(col * n + c, pivot_row * n + c);
                }
            }
            let diag = lu[col * n + col];
            for r in col + 1..n {
                let factor = lu[r * n + col] / diag;
                lu[r * n + col] = factor;
                if factor != 0.0 {
                    for c in col + 1..n {
                        lu[r * n + c] -= factor * lu[col * n + c];
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        for r in 1..n {
            let mut acc = x[r];
            for c in 0..r {
                acc -= self.lu[r * n + c] * x[c];
            }
            x[r] = acc;
        }
        for r in (0..n).rev() {
            let mut acc = x[r];
            for c in r + 1..n {
                acc -= self.lu[r * n + c] * x[c];
            }
            x[r] = acc / self.lu[r * n + r];
        }
        x
    }

    /// Solves `Aᵀ y = c`.
    pub fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n;
        // Uᵀ w = c (forward), then Lᵀ v = w (backward), then undo the permutation.
        let mut w = c.to_vec();
        for r in 0..n {
            let mut acc = w[r];
            for k in 0..r {
                acc -= self.lu[k * n + r] * w[k];
            }
            w[r] = acc / self.lu[r * n + r];
        }
        for r in (0..n).rev() {
            let mut acc = w[r];
            for k in r + 1..n {
                acc -= self.lu[k * n + r] * w[k];
            }
            w[r] = acc;
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[self.perm[i]] = w[i];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_small_system() {
        let mut a = Matrix::zeros(3, 3);
        let vals = [[2.0, 1.0, -1.0], [-3.0, -1.0, 2.0], [-2.0, 1.0, 2.0]];
        for r in 0..3 {
            for c in 0..3 {
                a.set(r, c, vals[r][c]);
            }
        }
        let lu = Lu::factor(&a).unwrap();
        let x = lu.solve(&[8.0, -11.0, -3.0]);
        let expect = [2.0, 3.0, -1.0];
        for i in 0..3 {
            assert!((x[i] - expect[i]).abs() < 1e-10, "x = {x:?}");
        }

        // transpose solve consistency: Aᵀ y = c  =>  A x = c with x = yᵀ path
        let y = lu.solve_transpose(&[1.0, 2.0, 3.0]);
        let mut atc = [0.0; 3];
        for r in 0..3 {
            for c in 0..3 {
                atc[c] += vals[r][c] * y[r];
            }
        }
        for (i, &v) in atc.iter().enumerate() {
            assert!((v - (i as f64 + 1.0)).abs() < 1e-10, "AtY = {atc:?}");
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut a = Matrix::zeros(2, 2);
        a.set(0, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 4.0);
        assert!(Lu::factor(&a).is_err());
    }
}
