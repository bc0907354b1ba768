//! Seeded randomness and weight initialisers.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Matrix;

/// Deterministic random stream. Identical seeds give identical draws.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on `[lo, hi]`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| self.normal()).collect();
        Matrix::from_vec(rows, cols, data).expect("shape is consistent")
    }
}

/// Mixes a master seed with a path of indices (grid point, fold, draw, ...)
/// into an independent child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = splitmix(master ^ 0x5851_f42d_4c95_7f2d);
    for &p in path {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    state
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Glorot/Bengio uniform initialisation on `±sqrt(6 / (rows + cols))`.
pub fn glorot_uniform(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape is consistent")
}

/// Orthogonal `n x n` matrix from Gram-Schmidt on a Gaussian sample.
///
/// Each column is orthogonalised twice against its predecessors so that
/// `Q^T Q = I` holds to round-off.
pub fn orthogonal_init(rng: &mut Rng, n: usize) -> Matrix {
    loop {
        let sample = rng.normal_matrix(n, n);
        if let Some(q) = gram_schmidt(&sample) {
            return q;
        }
    }
}

fn gram_schmidt(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut v = a.column_values(j);
        for _ in 0..2 {
            for q in &cols {
                let dot: f64 = q.iter().zip(&v).map(|(x, y)| x * y).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= dot * qi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return None;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        cols.push(v);
    }
    let mut q = Matrix::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            q.set(i, j, v);
        }
    }
    Some(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        assert_eq!(
            glorot_uniform(&mut Rng::new(3), 4, 5),
            glorot_uniform(&mut Rng::new(3), 4, 5)
        );
    }

    #[test]
    fn derived_seeds_differ() {
        let s = derive_seed(1, &[0, 0]);
        assert_ne!(s, derive_seed(1, &[0, 1]));
        assert_ne!(s, derive_seed(1, &[1, 0]));
        assert_ne!(s, derive_seed(2, &[0, 0]));
        assert_eq!(s, derive_seed(1, &[0, 0]));
    }

    #[test]
    fn glorot_bounds_and_mean() {
        let mut rng = Rng::new(11);
        let (rows, cols) = (250, 400);
        let m = glorot_uniform(&mut rng, rows, cols);
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        assert!(m.data().iter().all(|v| v.abs() <= bound));
        // Monte Carlo oracle: uniform on [-b, b] has std b / sqrt(3).
        let n = m.len() as f64;
        let mean = m.sum() / n;
        let se = bound / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3se {}", 3.0 * se);
    }

    #[test]
    fn orthogonal_scalar_is_unit() {
        for seed in 0..5 {
            let q = orthogonal_init(&mut Rng::new(seed), 1);
            assert!((q.get(0, 0).abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn orthogonal_columns() {
        for n in [2, 5, 20, 64] {
            let q = orthogonal_init(&mut Rng::new(n as u64), n);
            let qtq = q.transposed_matmul(&q).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((qtq.get(i, j) - expect).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn orthogonal_singular_values_by_power_iteration() {
        // Oracle independent of Gram-Schmidt: the extreme eigenvalues of Q^T Q
        // found by power iteration (and on I*c - Q^T Q for the smallest) are 1.
        let n = 12;
        let q = orthogonal_init(&mut Rng::new(99), n);
        let g = q.transposed_matmul(&q).unwrap();
        let power = |m: &Matrix| {
            let mut v = Matrix::column((0..n).map(|i| 1.0 + i as f64 * 0.1).collect());
            let mut lambda = 0.0;
            for _ in 0..200 {
                let w = m.matmul(&v).unwrap();
                lambda = w.squared_norm().sqrt() / v.squared_norm().sqrt();
                v = w.scale(1.0 / w.squared_norm().sqrt());
            }
            lambda
        };
        let largest = power(&g);
        let shifted = Matrix::identity(n)
            .scale(2.0)
            .zip_map(&g, |a, b| a - b)
            .unwrap();
        let smallest = 2.0 - power(&shifted);
        assert!((largest.sqrt() - 1.0).abs() < 1e-8);
        assert!((smallest.sqrt() - 1.0).abs() < 1e-8);
    }
}
