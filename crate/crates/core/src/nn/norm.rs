use alloc::vec::Vec;

use num_traits::Float;

/// Variance floor added before the square root in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Normalizes `x` to zero mean and unit variance, then applies an optional
/// per-feature gain and offset.
///
/// A constant input maps to all zeros (before gain/offset).
pub fn layer_norm<T: Float>(x: &[T], gain: Option<&[T]>, offset: Option<&[T]>) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    let (mean, inv_std) = moments(x);
    for (k, &v) in x.iter().enumerate() {
        let mut y = (v - mean) * inv_std;
        if let Some(g) = gain {
            y = y * g[k];
        }
        if let Some(o) = offset {
            y = y + o[k];
        }
        out.push(y);
    }
    out
}

/// Returns `(mean, 1/sqrt(var + eps))` of a row.
pub(crate) fn moments<T: Float>(x: &[T]) -> (T, T) {
    let n = T::from(x.len()).unwrap();
    let mean = x.iter().fold(T::zero(), |a, &v| a + v) / n;
    let var = x.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
    let eps = T::from(LAYER_NORM_EPS).unwrap();
    (mean, (var + eps).sqrt().recip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_vector_normalizes_to_zero() {
        let y = layer_norm(&[3.5f64; 6], None, None);
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_pair_is_preserved() {
        let y = layer_norm(&[1.0f64, -1.0], Some(&[1.0, 1.0]), Some(&[0.0, 0.0]));
        assert!((y[0] - 1.0).abs() < 1e-6);
        assert!((y[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn random_vector_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.random_range(8..64);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0) + 10.0).collect();
            let y = layer_norm(&x, None, None);
            let mean = y.iter().sum::<f64>() / n as f64;
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-7, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }
}
