//! Small dense linear algebra kernels: pivoted Gaussian elimination and a
//! cyclic Jacobi eigensolver for symmetric matrices.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Solves `A X = B` for square `A` by Gaussian elimination with partial pivoting.
pub fn solve<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension(format!("solve: A is {}x{}, B has {} rows", a.nrows(), a.ncols(), b.nrows())));
    }
    let m = b.ncols();
    let mut a = a.to_owned();
    let mut x = b.to_owned();
    let scale = a.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tiny = scale * T::epsilon() * T::lit(n.max(1) as f64);
    for col in 0..n {
        let (pivot, pmax) =
            (col..n).map(|r| (r, a[[r, col]].abs())).fold((col, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax <= tiny || pmax == T::zero() {
            return Err(Error::Degenerate(format!("singular matrix at column {col}")));
        }
        if pivot != col {
            for j in 0..n {
                a.swap([col, j], [pivot, j]);
            }
            for j in 0..m {
                x.swap([col, j], [pivot, j]);
            }
        }
        let d = a[[col, col]];
        for r in (col + 1)..n {
            let f = a[[r, col]] / d;
            if f == T::zero() {
                continue;
            }
            for j in col..n {
                let v = a[[col, j]];
                a[[r, j]] -= f * v;
            }
            for j in 0..m {
                let v = x[[col, j]];
                x[[r, j]] -= f * v;
            }
        }
    }
    for col in (0..n).rev() {
        let d = a[[col, col]];
        for j in 0..m {
            let mut s = x[[col, j]];
            for k in (col + 1)..n {
                s -= a[[col, k]] * x[[k, j]];
            }
            x[[col, j]] = s / d;
        }
    }
    Ok(x)
}

pub fn inverse<T: Real>(a: ArrayView2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    solve(a, Array2::eye(n).view())
}

/// Eigen-decomposition of a symmetric matrix.
///
/// Returns eigenvalues in non-increasing order and the matching
/// eigenvectors as columns.
pub fn symmetric_eigen<T: Real>(a: ArrayView2<T>) -> Result<(Array1<T>, Array2<T>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!("eigen: matrix is {}x{}", a.nrows(), a.ncols())));
    }
    let mut m: Vec<T> = a.iter().copied().collect();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let frob: T = m.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if frob == T::zero() {
        return Ok((Array1::zeros(n), Array2::eye(n)));
    }
    let eps = T::epsilon();
    let mut converged = false;
    for _sweep in 0..64 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= eps * frob {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= eps * eps * frob {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let kp = m[k * n + p];
                    let kq = m[k * n + q];
                    m[k * n + p] = c * kp - s * kq;
                    m[k * n + q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let pk = m[p * n + k];
                    let qk = m[q * n + k];
                    m[p * n + k] = c * pk - s * qk;
                    m[q * n + k] = s * pk + c * qk;
                }
                for k in 0..n {
                    let kp = v[k * n + p];
                    let kq = v[k * n + q];
                    v[k * n + p] = c * kp - s * kq;
                    v[k * n + q] = s * kp + c * kq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Degenerate("Jacobi eigensolver did not converge".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].partial_cmp(&m[i * n + i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&i| m[i * n + i]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[[k, dst]] = v[k * n + src];
        }
    }
    Ok((values, vectors))
}

/// `trace(C)`, `trace(C²)`, `trace(C³)` of a symmetric matrix, i.e. the first
/// three power sums of its eigenvalues.
pub fn power_traces<T: Real>(c: ArrayView2<T>) -> [T; 3] {
    let c2 = c.dot(&c);
    let t1 = c.diag().sum();
    let t2 = c.iter().map(|v| *v * *v).sum();
    let t3 = c2.iter().zip(c.t().iter()).map(|(a, b)| *a * *b).sum();
    [t1, t2, t3]
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solve_recovers_known_solution() {
        let a: Array2<f64> = array![[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let x = array![[1.0], [-2.0], [0.5]];
        let b = a.dot(&x);
        let got = solve(a.view(), b.view()).unwrap();
        for (g, e) in got.iter().zip(x.iter()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(inverse(a.view()).is_err());
    }

    #[test]
    fn jacobi_matches_nalgebra() {
        let n = 9;
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                a[[i, j]] = ((i * 7 + j * 3) % 11) as f64 + if i == j { 5.0 } else { 0.0 };
            }
        }
        let a = &a + &a.t();
        let (vals, vecs) = symmetric_eigen(a.view()).unwrap();
        let na = nalgebra::DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
        let mut expected: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
        expected.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (g, e) in vals.iter().zip(expected.iter()) {
            assert!((g - e).abs() < 1e-9 * e.abs().max(1.0), "{g} vs {e}");
        }
        let recon = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        for (r, o) in recon.iter().zip(a.iter()) {
            assert!((r - o).abs() < 1e-9);
        }
    }

    #[test]
    fn power_traces_are_eigenvalue_power_sums() {
        let a: Array2<f64> = array![[2.0, 1.0], [1.0, 2.0]];
        let [t1, t2, t3] = power_traces(a.view());
        assert!((t1 - 4.0).abs() < 1e-12);
        assert!((t2 - 10.0).abs() < 1e-12);
        assert!((t3 - 28.0).abs() < 1e-12);
    }
}
