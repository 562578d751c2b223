#![allow(dead_code)]

use coag_core::{pgf, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn single() -> ModelSpec {
    ModelSpec::new(vec![vec![1.0]], vec![1.0]).unwrap()
}

pub fn bipartite() -> ModelSpec {
    ModelSpec::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0.5, 0.5]).unwrap()
}

pub fn three_component() -> ModelSpec {
    ModelSpec::new(
        vec![vec![1.0, 2.0, 0.0], vec![2.0, 1.0, 1.0], vec![0.0, 1.0, 1.0]],
        vec![0.3, 0.3, 0.4],
    )
    .unwrap()
}

pub fn stochastic() -> ModelSpec {
    ModelSpec::new(vec![vec![0.0, 2.0], vec![2.0, 0.0]], vec![0.5, 0.5]).unwrap()
}

pub fn asymmetric_p() -> ModelSpec {
    ModelSpec::new(vec![vec![1.0, 2.0], vec![2.0, 1.0]], vec![0.7, 0.3]).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random irreducible instance with full support: positive diagonal-dominant
/// entries plus random zeros off the diagonal that keep the graph connected.
pub fn random_spec<R: Rng>(rng: &mut R, m: usize) -> ModelSpec {
    loop {
        let mut a = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in i..m {
                let v = if rng.random::<f64>() < 0.25 && i != j { 0.0 } else { rng.random_range(0.1..2.0) };
                a[i][j] = v;
                a[j][i] = v;
            }
        }
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        if let Ok(spec) = ModelSpec::new(a, p) {
            if spec.report().irreducible && pgf::critical_time(&spec).is_ok() {
                return spec;
            }
        }
    }
}

/// Uniform random interior point of the simplex.
pub fn random_simplex<R: Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..m).map(|_| -rng.random_range(1e-3..1.0f64).ln()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}
