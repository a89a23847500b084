//! Self-contained dense linear algebra used only as an independent oracle:
//! LU with implicitly scaled partial pivoting, and a cyclic Jacobi
//! eigenvalue solver for symmetric matrices. Deliberately shares nothing
//! with the sparse solver path it cross-checks.

use crate::error::{Error, Result};
use crate::fvm::BlockSystem;

/// Row-major dense matrix.
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn from_sparse(m: &crate::linalg::SparseMatrix) -> Self {
        assert_eq!(m.rows(), m.cols());
        let mut d = DenseMatrix::zeros(m.rows());
        for (i, j, v) in m.iter() {
            d.add(i, j, v);
        }
        d
    }

    /// Solves A x = b by LU with implicitly scaled partial pivoting,
    /// consuming the matrix.
    pub fn solve(mut self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let scales: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| self.get(i, j).abs())
                    .fold(0.0f64, f64::max)
            })
            .collect();
        if scales.iter().any(|&s| s == 0.0) {
            return Err(Error::LinearSolverFailure {
                context: "dense oracle".into(),
                diagnostic: "matrix has an identically zero row".into(),
            });
        }

        for col in 0..n {
            // Pivot by the largest entry relative to its row scale.
            let mut best = col;
            let mut best_mag = 0.0;
            for row in col..n {
                let mag = self.get(perm[row], col).abs() / scales[perm[row]];
                if mag > best_mag {
                    best_mag = mag;
                    best = row;
                }
            }
            if best_mag == 0.0 {
                return Err(Error::LinearSolverFailure {
                    context: "dense oracle".into(),
                    diagnostic: format!("structurally singular at column {col}"),
                });
            }
            perm.swap(col, best);
            let p = perm[col];
            let pivot = self.get(p, col);
            for row in col + 1..n {
                let r = perm[row];
                let factor = self.get(r, col) / pivot;
                if factor == 0.0 {
                    continue;
                }
                self.data[r * n + col] = factor;
                for j in col + 1..n {
                    self.data[r * n + j] -= factor * self.get(p, j);
                }
                x[r] -= factor * x[p];
            }
        }

        // Back substitution in permuted order.
        let mut out = vec![0.0; n];
        for col in (0..n).rev() {
            let p = perm[col];
            let mut v = x[p];
            for j in col + 1..n {
                v -= self.get(p, j) * out[j];
            }
            out[col] = v / self.get(p, col);
        }
        Ok(out)
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = self.data.clone();
        let at = |a: &[f64], i: usize, j: usize| a[i * n + j];
        let off_norm = |a: &[f64]| -> f64 {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        s += at(a, i, j) * at(a, i, j);
                    }
                }
            }
            s.sqrt()
        };
        let frobenius = {
            let mut s = 0.0;
            for v in &a {
                s += v * v;
            }
            s.sqrt().max(1e-300)
        };
        for _sweep in 0..100 {
            if off_norm(&a) <= 1e-13 * frobenius {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = at(&a, p, q);
                    if apq.abs() <= 1e-300 {
                        continue;
                    }
                    let app = at(&a, p, p);
                    let aqq = at(&a, q, q);
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = at(&a, k, p);
                        let akq = at(&a, k, q);
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = at(&a, p, k);
                        let aqk = at(&a, q, k);
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| at(&a, i, i)).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eig
    }
}

/// Dense solve of the stabilized saddle system [[A, -B^T], [B, C+S]]
/// [du; dp] = [Q_u; Q_p].
pub fn solve_saddle(system: &BlockSystem) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_u = system.n_mech();
    let n_p = system.n_pressure();
    let mut m = DenseMatrix::zeros(n_u + n_p);
    for (i, j, v) in system.a.iter() {
        m.add(i, j, v);
    }
    for (k, j, v) in system.b.iter() {
        m.add(j, n_u + k, -v);
        m.add(n_u + k, j, v);
    }
    for (k, l, v) in system.c_plus_s().iter() {
        m.add(n_u + k, n_u + l, v);
    }
    let mut rhs = Vec::with_capacity(n_u + n_p);
    rhs.extend_from_slice(&system.q_u);
    rhs.extend_from_slice(&system.q_p);
    let x = m.solve(&rhs)?;
    Ok((x[..n_u].to_vec(), x[n_u..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_lu_solves_poorly_scaled_system() {
        // Rows spanning 12 orders of magnitude.
        let mut m = DenseMatrix::zeros(3);
        m.add(0, 0, 1.0e8);
        m.add(0, 1, 2.0e8);
        m.add(1, 0, 3.0);
        m.add(1, 1, -1.0);
        m.add(1, 2, 0.5);
        m.add(2, 1, 4.0e-4);
        m.add(2, 2, 1.0e-4);
        let x_true = [1.0, -2.0, 3.0];
        let b: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| m.get(i, j) * x_true[j]).sum())
            .collect();
        let x = m.solve(&b).unwrap();
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_eigenvalues_of_known_matrix() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
        let mut m = DenseMatrix::zeros(2);
        m.add(0, 0, 2.0);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 2.0);
        let e = m.sym_eigenvalues();
        assert!((e[0] - 1.0).abs() < 1e-12);
        assert!((e[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_rejected() {
        let mut m = DenseMatrix::zeros(2);
        m.add(0, 0, 1.0);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 1.0);
        assert!(m.solve(&[1.0, 2.0]).is_err());
    }
}
