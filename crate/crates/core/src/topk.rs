//! Exact brute-force similarity search over unit vectors.

use std::cmp::Ordering;

use crate::par::{self, Execution};

/// Dot product with f64 accumulation in index order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

pub fn l2_norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

/// Unit-length copy of `v`; `None` for zero or non-finite input.
pub fn normalized(v: &[f32]) -> Option<Vec<f32>> {
    let n = l2_norm(v);
    if !n.is_finite() || n == 0.0 {
        return None;
    }
    Some(v.iter().map(|x| (f64::from(*x) / n) as f32).collect())
}

pub fn is_unit(v: &[f32], tol: f64) -> bool {
    (l2_norm(v) - 1.0).abs() <= tol
}

/// Cosine similarity of two arbitrary vectors.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let d = dot(a, b);
    let n = l2_norm(a) * l2_norm(b);
    if n == 0.0 {
        0.0
    } else {
        d / n
    }
}

/// Ranking order: higher score first, then lower index first.
#[inline]
pub fn rank_cmp(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Keeps the best `k` of `scored` under [`rank_cmp`], sorted.
pub fn select_top_k(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_cmp);
    scored
}

/// Scores every index in `0..n` and returns the top `k`.
pub fn scan_top_k<F>(n: usize, k: usize, exec: Execution, score: F) -> Vec<(usize, f64)>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let scored = par::map_range(n, exec, |i| (i, score(i)));
    select_top_k(scored, k)
}

/// Top-`k` rows of a row-major matrix of `dim`-wide vectors by dot product with `query`.
pub fn top_k_rows(
    matrix: &[f32],
    dim: usize,
    query: &[f32],
    k: usize,
    exec: Execution,
) -> Vec<(usize, f64)> {
    debug_assert_eq!(query.len(), dim);
    let n = matrix.len().checked_div(dim).unwrap_or(0);
    scan_top_k(n, k, exec, |i| dot(&matrix[i * dim..(i + 1) * dim], query))
}
