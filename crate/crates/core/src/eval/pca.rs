//! Two-dimensional PCA by power iteration with deflation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const POWER_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    /// Covariance eigenvalues of the two axes, largest first.
    pub eigenvalues: [f64; 2],
    pub axes: [Vec<f64>; 2],
}

impl Projection {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for c in &self.coords {
            s.push_str(&format!("{},{}\n", c[0], c[1]));
        }
        s
    }
}

/// Projects mean-centred vectors onto the top two covariance eigenvectors.
pub fn project_embeddings_2d(vectors: &[Vec<f64>], seed: u64) -> Result<Projection> {
    if vectors.len() < 3 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 3 vectors, got {}", vectors.len())));
    }
    let d = vectors[0].len();
    if d < 2 || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidArgument("vectors must share a dimension of at least 2".into()));
    }
    let n = vectors.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    let centred: Vec<Vec<f64>> = vectors.iter().map(|v| v.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
    let mut cov = vec![0.0; d * d];
    for v in &centred {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += v[i] * v[j] / n;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(2);
    let mut eigenvalues = [0.0; 2];
    for k in 0..2 {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut lambda = 0.0;
        for _ in 0..POWER_ITERS {
            for a in &axes {
                let p: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(a).for_each(|(x, y)| *x -= p * y);
            }
            let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| cov[i * d + j] * v[j]).sum()).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                lambda = 0.0;
                break;
            }
            lambda = norm;
            v = w.into_iter().map(|x| x / norm).collect();
        }
        // deflation residue: keep the axis orthogonal to the previous ones
        for a in &axes {
            let p: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(a).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        eigenvalues[k] = lambda;
        axes.push(v);
    }
    let coords = centred
        .iter()
        .map(|v| {
            let p = |a: &Vec<f64>| v.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect();
    let [a0, a1]: [Vec<f64>; 2] = axes.try_into().unwrap();
    Ok(Projection {
        coords,
        eigenvalues,
        axes: [a0, a1],
    })
}
