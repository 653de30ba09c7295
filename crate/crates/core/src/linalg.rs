//! Small dense linear algebra: packed symmetric matrices, a cyclic Jacobi
//! eigensolver, Gram–Schmidt orthonormalization and least squares with an
//! intercept. Problem sizes here are latent-dimension sized (n <= 64).

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Symmetric matrix stored as the packed lower triangle, so symmetry is
/// exact by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        r * (r + 1) / 2 + c
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// Symmetrize a dense square matrix by averaging mirrored entries.
    pub fn from_dense(t: &Tensor) -> Self {
        assert_eq!(t.rows(), t.cols(), "symmetric matrix must be square");
        let n = t.rows();
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                m.set(i, j, 0.5 * (t.get(i, j) + t.get(j, i)));
            }
        }
        m
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(i, j, self.get(i, j));
            }
        }
        t
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors
/// as columns. Stops when the off-diagonal Frobenius norm drops below
/// 1e-12, and errors after 100 sweeps without convergence.
pub fn sym_eigendecompose(m: &SymMatrix) -> Result<(Vec<f64>, Tensor)> {
    const OFF_TOL: f64 = 1e-12;
    const MAX_SWEEPS: usize = 100;
    let n = m.n();
    if n == 0 {
        return Err(Error::LinAlg("empty matrix".to_string()));
    }
    let mut a = m.to_dense();
    let mut v = Tensor::eye(n);
    let scale = a.max_abs().max(1.0);

    let off_norm = |a: &Tensor| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..i {
                s += 2.0 * a.get(i, j) * a.get(i, j);
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_norm(&a) <= OFF_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                // Smaller-magnitude root keeps rotations below 45 degrees.
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged && off_norm(&a) > OFF_TOL * scale {
        return Err(Error::LinAlg(format!(
            "jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).partial_cmp(&a.get(i, i)).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let eigenvectors = v.select_cols(&order);
    Ok((eigenvalues, eigenvectors))
}

/// Orthonormalize the columns of a d x k matrix (d >= k) by modified
/// Gram–Schmidt with a reorthogonalization pass. The column span is
/// preserved; a pivot below 1e-12 reports rank deficiency.
pub fn orthonormalize_columns(a: &Tensor) -> Result<Tensor> {
    let (d, k) = (a.rows(), a.cols());
    if d < k {
        return Err(Error::Shape(format!(
            "orthonormalize_columns requires d >= k, got {d} x {k}"
        )));
    }
    let mut cols: Vec<Vec<f64>> = (0..k).map(|c| a.col_vec(c)).collect();
    for j in 0..k {
        for _pass in 0..2 {
            for i in 0..j {
                let dot: f64 = cols[j].iter().zip(cols[i].iter()).map(|(x, y)| x * y).sum();
                for r in 0..d {
                    cols[j][r] -= dot * cols[i][r];
                }
            }
        }
        let norm: f64 = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::LinAlg(format!(
                "rank deficiency at column {j}: pivot {norm:e}"
            )));
        }
        for r in 0..d {
            cols[j][r] /= norm;
        }
    }
    let mut out = Tensor::zeros(d, k);
    for (j, col) in cols.iter().enumerate() {
        for r in 0..d {
            out.set(r, j, col[r]);
        }
    }
    Ok(out)
}

/// Cholesky solve of an SPD system for multiple right-hand sides.
fn cholesky_solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(b.rows(), n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::LinAlg(format!(
                        "matrix not positive definite at pivot {i} ({s:e})"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let m = b.cols();
    let mut x = b.clone();
    // forward: L y = b
    for c in 0..m {
        for i in 0..n {
            let mut s = x.get(i, c);
            for k in 0..i {
                s -= l[i * n + k] * x.get(k, c);
            }
            x.set(i, c, s / l[i * n + i]);
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for k in (i + 1)..n {
                s -= l[k * n + i] * x.get(k, c);
            }
            x.set(i, c, s / l[i * n + i]);
        }
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    /// (k+1) x m coefficients; the last row is the intercept.
    pub coefficients: Tensor,
    /// Set when collinear predictors forced the ridge fallback
    /// (diagonal jitter 1e-8).
    pub ridge_fallback: bool,
}

impl LeastSquaresFit {
    /// Apply the fitted map to an n x k predictor matrix.
    pub fn predict(&self, a: &Tensor) -> Tensor {
        let k = self.coefficients.rows() - 1;
        assert_eq!(a.cols(), k, "predictor width mismatch");
        let ones = Tensor::full(a.rows(), 1, 1.0);
        let design = Tensor::hcat(&[a, &ones]);
        design.matmul(&self.coefficients)
    }
}

/// Ordinary least squares of `b` on `[a, 1]` via the normal equations,
/// with a ridge fallback on collinear predictors.
pub fn least_squares(a: &Tensor, b: &Tensor) -> Result<LeastSquaresFit> {
    let (n, k) = (a.rows(), a.cols());
    if b.rows() != n {
        return Err(Error::Shape(format!(
            "least_squares rows mismatch: {n} predictors vs {} targets",
            b.rows()
        )));
    }
    if n <= k + 1 {
        return Err(Error::Shape(format!(
            "least_squares requires n > k+1, got n = {n}, k = {k}"
        )));
    }
    let ones = Tensor::full(n, 1, 1.0);
    let design = Tensor::hcat(&[a, &ones]);
    let xtx = design.transpose().matmul(&design);
    let xtb = design.transpose().matmul(b);
    match cholesky_solve(&xtx, &xtb) {
        Ok(coefficients) => Ok(LeastSquaresFit {
            coefficients,
            ridge_fallback: false,
        }),
        Err(_) => {
            let mut jittered = xtx.clone();
            for i in 0..jittered.rows() {
                let v = jittered.get(i, i) + 1e-8;
                jittered.set(i, i, v);
            }
            let coefficients = cholesky_solve(&jittered, &xtb)?;
            Ok(LeastSquaresFit {
                coefficients,
                ridge_fallback: true,
            })
        }
    }
}

/// Moore–Penrose pseudo-inverse of a full-column-rank matrix,
/// `(A^T A)^{-1} A^T`.
pub fn pseudo_inverse(a: &Tensor) -> Result<Tensor> {
    let ata = a.transpose().matmul(a);
    let at = a.transpose();
    cholesky_solve(&ata, &at)
}

/// Column covariance matrix (denominator n-1).
pub fn covariance(x: &Tensor) -> SymMatrix {
    let (n, d) = (x.rows(), x.cols());
    assert!(n >= 2, "covariance needs at least two rows");
    let mut means = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            means[c] += x.get(r, c);
        }
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = SymMatrix::zeros(d);
    for i in 0..d {
        for j in 0..=i {
            let mut s = 0.0;
            for r in 0..n {
                s += (x.get(r, i) - means[i]) * (x.get(r, j) - means[j]);
            }
            cov.set(i, j, s / (n as f64 - 1.0));
        }
    }
    cov
}
