use serde::{Deserialize, Serialize};

use super::{FeatureVector, FEATURE_COUNT};
use crate::error::{Error, Result};

/// Per-coordinate mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

pub fn fit_normalizer(rows: &[FeatureVector]) -> Result<FeatureStats> {
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "normalizer needs at least 2 vectors, got {}",
            rows.len()
        )));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; FEATURE_COUNT];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; FEATURE_COUNT];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let stddev = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok(FeatureStats { mean, stddev })
}

/// z-scores `x`; zero-variance coordinates are only centred.
pub fn normalize(x: &FeatureVector, stats: &FeatureStats) -> FeatureVector {
    let mut out = [0.0; FEATURE_COUNT];
    for i in 0..FEATURE_COUNT {
        let centred = x[i] - stats.mean[i];
        out[i] = if stats.stddev[i] > 0.0 {
            centred / stats.stddev[i]
        } else {
            centred
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn too_few_rows() {
        assert!(matches!(fit_normalizer(&[[0.0; FEATURE_COUNT]]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn constant_and_two_point_columns() {
        let mut a = [3.0; FEATURE_COUNT];
        let mut b = [3.0; FEATURE_COUNT];
        a[1] = 0.0;
        b[1] = 2.0;
        let stats = fit_normalizer(&[a, b]).unwrap();
        assert_eq!(stats.mean[1], 1.0);
        assert_eq!(stats.stddev[1], 1.0);
        assert_eq!(normalize(&a, &stats)[1], -1.0);
        assert_eq!(normalize(&b, &stats)[1], 1.0);
        assert_eq!(normalize(&a, &stats)[0], 0.0);
        assert_eq!(stats.stddev[0], 0.0);
    }

    #[test]
    fn random_matrix_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<FeatureVector> = (0..100)
            .map(|_| std::array::from_fn(|j| rng.random_range(-5.0..5.0) * (j + 1) as f64 + j as f64))
            .collect();
        let stats = fit_normalizer(&rows).unwrap();
        let z: Vec<_> = rows.iter().map(|r| normalize(r, &stats)).collect();
        for j in 0..FEATURE_COUNT {
            // moments recomputed independently of the normalizer
            let mean = z.iter().map(|r| r[j]).sum::<f64>() / 100.0;
            let var = z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 100.0;
            assert!(mean.abs() < 1e-9);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }
}
