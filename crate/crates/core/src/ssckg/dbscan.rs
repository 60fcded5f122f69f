//! Density clustering with a fixed input-order expansion rule.
//!
//! A point is core when at least `min_samples` points (itself included) lie
//! within `eps`, inclusive. Points are visited in index order; the first
//! unassigned core point opens a new cluster, which is expanded breadth-first
//! before the scan resumes. A border point within reach of several clusters
//! therefore belongs to the one discovered first.

use std::collections::VecDeque;

use crate::embedding::{cosine, EmbeddingVector};

pub const NOISE: i32 = -1;

/// `1 - cos(a, b)`; a pair involving a zero vector is treated as orthogonal.
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    1.0 - cosine(a, b).unwrap_or(0.0)
}

/// Clusters embedding vectors under cosine distance. Returns one cluster id
/// per point, numbered from 0 in discovery order, or [`NOISE`].
pub fn dbscan(points: &[EmbeddingVector], eps: f64, min_samples: usize) -> Vec<i32> {
    dbscan_with(points.len(), eps, min_samples, |i, j| {
        cosine_distance(&points[i], &points[j])
    })
}

/// DBSCAN over an arbitrary symmetric distance.
pub fn dbscan_with<F>(n: usize, eps: f64, min_samples: usize, distance: F) -> Vec<i32>
where
    F: Fn(usize, usize) -> f64,
{
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| i == j || distance(i, j) <= eps).collect())
        .collect();
    let is_core = |i: usize| neighbors[i].len() >= min_samples;

    const UNVISITED: i32 = i32::MIN;
    let mut labels = vec![UNVISITED; n];
    let mut next = 0i32;
    let mut queue = VecDeque::new();
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        if !is_core(i) {
            labels[i] = NOISE;
            continue;
        }
        let cluster = next;
        next += 1;
        labels[i] = cluster;
        queue.clear();
        queue.push_back(i);
        while let Some(p) = queue.pop_front() {
            if !is_core(p) {
                continue;
            }
            for &q in &neighbors[p] {
                if labels[q] == UNVISITED || labels[q] == NOISE {
                    labels[q] = cluster;
                    queue.push_back(q);
                }
            }
        }
    }
    labels
}
