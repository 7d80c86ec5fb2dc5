//! Particle-based state-entropy reward for unsupervised pretraining.

use alloc::vec::Vec;

use num_traits::Float;

/// Lower clamp on neighbor distances before taking the log.
pub const DISTANCE_FLOOR: f64 = 1e-6;

/// For each of the `n = points.len() / dim` points, the log distance to its
/// `k`-th nearest neighbor among the other points, floored at
/// [`DISTANCE_FLOOR`]. With fewer than `k` other points the farthest
/// neighbor is used.
pub fn knn_log_distances(points: &[f32], dim: usize, k: usize) -> Vec<f32> {
    let n = points.len() / dim;
    let k = k.max(1);
    let mut dists = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let p = &points[i * dim..(i + 1) * dim];
        dists.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            let q = &points[j * dim..(j + 1) * dim];
            let d2: f64 = p.iter().zip(q).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
            dists.push(d2);
        }
        if dists.is_empty() {
            out.push(Float::ln(DISTANCE_FLOOR) as f32);
            continue;
        }
        let kk = k.min(dists.len()) - 1;
        let (_, kth, _) = dists.select_nth_unstable_by(kk, |a, b| a.total_cmp(b));
        out.push(Float::ln(kth.sqrt().max(DISTANCE_FLOOR)) as f32);
    }
    out
}
