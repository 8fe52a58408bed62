//! Small dense vector helpers. Dimensions here are tiny (tens), so everything
//! is plain slices and `Vec<f64>`.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

/// Orthonormal basis of `span(vectors)` by modified Gram-Schmidt with one
/// re-orthogonalization pass. A vector whose residual norm is at most
/// `tol * (1 + original norm)` is treated as linearly dependent and dropped.
pub fn orthonormal_basis(vectors: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let n0 = norm(v);
        if n0 <= tol {
            continue;
        }
        let mut r = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&r, b);
                axpy(-c, b, &mut r);
            }
        }
        let n = norm(&r);
        if n > tol * (1.0 + n0) {
            for x in r.iter_mut() {
                *x /= n;
            }
            basis.push(r);
        }
    }
    basis
}

/// Coordinates of `v` in the row basis: `(basis[0]·v, basis[1]·v, ...)`.
pub fn into_basis(basis: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    basis.iter().map(|b| dot(b, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_schmidt_rank() {
        let vs = vec![
            vec![1.0, 1.0, 0.0],
            vec![2.0, 2.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ];
        let basis = orthonormal_basis(&vs, 1e-9);
        assert_eq!(basis.len(), 2);
        for b in &basis {
            assert!((norm(b) - 1.0).abs() < 1e-12);
            assert!(b[2].abs() < 1e-12);
        }
        assert!(dot(&basis[0], &basis[1]).abs() < 1e-12);
    }

    #[test]
    fn dependent_vectors_dropped() {
        let vs = vec![vec![1.0, 0.0], vec![1.0, 1e-14]];
        let basis = orthonormal_basis(&vs, 1e-9);
        assert_eq!(basis.len(), 1);
    }
}
