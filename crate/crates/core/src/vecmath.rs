//! Small helpers for flat `f64` vectors.

/// Dot product. Panics on length mismatch (programmer error).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `out = a + scale * b`, freshly allocated.
pub fn add_scaled(a: &[f64], b: &[f64], scale: f64) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "add_scaled: length mismatch");
    a.iter().zip(b).map(|(x, y)| x + scale * y).collect()
}

/// Elementwise `a - b`, freshly allocated.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "sub: length mismatch");
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// True when every entry is finite.
pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Indices of the `k` largest entries of `v` by absolute value.
///
/// Ties at the keep-threshold resolve to the lower flat index, so the
/// selection is a deterministic total order.
pub fn top_k_by_magnitude(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| {
        v[b].abs()
            .partial_cmp(&v[a].abs())
            .expect("non-finite magnitude in top-k selection")
            .then(a.cmp(&b))
    });
    idx.truncate(k.min(v.len()));
    idx
}
