//! Small dense linear algebra on row-major `&[f64]` buffers.
//!
//! Every matrix in this crate is tiny (state dimension d and parameter
//! dimensions p are at most a handful), so hand-rolled O(n^3) routines beat
//! pulling in a matrix library and keep the hot loops allocation-free.

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, ascending.
pub fn sym_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    if n == 1 {
        return vec![a[0]];
    }
    let mut m = a.to_vec();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(&m, n)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

fn frobenius(m: &[f64], n: usize) -> f64 {
    m.iter().take(n * n).map(|v| v * v).sum::<f64>().sqrt()
}

/// In-place Cholesky factorization (lower triangle). Returns false when a
/// pivot falls at or below `pivot_floor` (matrix not positive definite).
pub fn cholesky_in_place(a: &mut [f64], n: usize, pivot_floor: f64) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > pivot_floor) {
            return false;
        }
        let ljj = d.sqrt();
        a[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / ljj;
        }
    }
    // zero the strict upper triangle so the buffer is a clean L
    for i in 0..n {
        for j in (i + 1)..n {
            a[i * n + j] = 0.0;
        }
    }
    true
}

/// Solve L y = b in place given the lower Cholesky factor.
pub fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solve L L^T x = b in place given the lower Cholesky factor.
pub fn chol_solve(l: &[f64], n: usize, b: &mut [f64]) {
    forward_solve(l, n, b);
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// log det(S) from the lower Cholesky factor of S.
pub fn chol_logdet(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| l[i * n + i].ln()).sum::<f64>() * 2.0
}

/// Quadratic form v^T S^{-1} v via the Cholesky factor: |L^{-1} v|^2.
pub fn chol_quad_form(l: &[f64], n: usize, v: &[f64], scratch: &mut [f64]) -> f64 {
    scratch[..n].copy_from_slice(v);
    forward_solve(l, n, scratch);
    scratch[..n].iter().map(|y| y * y).sum()
}

/// General small-matrix inverse by Gauss-Jordan with partial pivoting.
/// Returns None when the matrix is numerically singular.
pub fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if m[r * n + col].abs() > m[piv * n + col].abs() {
                piv = r;
            }
        }
        let p = m[piv * n + col];
        if p.abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
                inv.swap(col * n + k, piv * n + k);
            }
        }
        let p = m[col * n + col];
        for k in 0..n {
            m[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r * n + col];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                m[r * n + k] -= f * m[col * n + k];
                inv[r * n + k] -= f * inv[col * n + k];
            }
        }
    }
    Some(inv)
}

/// v^T M v for a dense square M.
pub fn quad_form(m: &[f64], n: usize, v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[i * n + j] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

/// Matrix-vector product y = M v.
pub fn mat_vec(m: &[f64], rows: usize, cols: usize, v: &[f64], y: &mut [f64]) {
    for i in 0..rows {
        let mut s = 0.0;
        for j in 0..cols {
            s += m[i * cols + j] * v[j];
        }
        y[i] = s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_matches_known_eigenvalues() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let eig = sym_eigenvalues(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((eig[0] - 1.0).abs() < 1e-12);
        assert!((eig[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_solve_and_logdet() {
        let a = vec![4.0, 2.0, 2.0, 3.0];
        let mut l = a.clone();
        assert!(cholesky_in_place(&mut l, 2, 0.0));
        assert!((chol_logdet(&l, 2) - (8.0f64).ln()).abs() < 1e-12);
        // v^T A^{-1} v with v=(1,1): A^{-1} = 1/8 [[3,-2],[-2,4]] -> 3/8
        let mut scratch = [0.0; 2];
        let q = chol_quad_form(&l, 2, &[1.0, 1.0], &mut scratch);
        assert!((q - 3.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = vec![1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky_in_place(&mut a, 2, 0.0));
    }

    #[test]
    fn invert_round_trip() {
        let a = vec![4.0, 2.0, 2.0, 3.0];
        let inv = invert(&a, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..2 {
                    s += a[i * 2 + k] * inv[k * 2 + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-12);
            }
        }
        assert!(invert(&[1.0, 1.0, 1.0, 1.0], 2).is_none());
    }
}
