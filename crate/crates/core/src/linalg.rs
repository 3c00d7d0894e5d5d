//! Small dense-vector helpers plus SVD-backed span utilities.

use nalgebra::DMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// Cosine similarity, or `None` when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Stacks equal-length vectors as the columns of a matrix.
pub fn columns(vectors: &[&[f64]]) -> DMatrix<f64> {
    let dim = vectors.first().map_or(0, |v| v.len());
    DMatrix::from_fn(dim, vectors.len(), |r, c| vectors[c][r])
}

/// Singular values in descending order.
pub fn singular_values(vectors: &[&[f64]]) -> Vec<f64> {
    if vectors.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = columns(vectors).singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Count of singular values at least `rel_tol` times the largest.
pub fn numerical_rank(vectors: &[&[f64]], rel_tol: f64) -> usize {
    let sv = singular_values(vectors);
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s >= rel_tol * top).count(),
        _ => 0,
    }
}

/// Orthonormal basis of the span of `vectors`, keeping left singular
/// vectors whose singular value is at least `rel_cutoff` times the largest.
pub fn orthonormal_basis(vectors: &[&[f64]], rel_cutoff: f64) -> Vec<Vec<f64>> {
    if vectors.is_empty() {
        return Vec::new();
    }
    let a = columns(vectors);
    // The left singular vectors of A are the eigenvectors of A Aᵀ, but the
    // SVD keeps full precision on small singular values.
    let svd = a.svd(true, false);
    let u = svd.u.expect("requested U");
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return Vec::new();
    }
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= rel_cutoff * top)
        .map(|(k, _)| u.column(k).iter().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), Some(0.0));
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), None);
    }

    #[test]
    fn rank_and_basis() {
        let a = [1.0, 0.0];
        let b = [2.0, 0.0];
        let c = [0.0, 1.0];
        assert_eq!(numerical_rank(&[&a, &b], 0.05), 1);
        assert_eq!(numerical_rank(&[&a, &c], 0.05), 2);
        let basis = orthonormal_basis(&[&a, &b], 1e-10);
        assert_eq!(basis.len(), 1);
        assert!((basis[0][0].abs() - 1.0).abs() < 1e-12);
    }
}
