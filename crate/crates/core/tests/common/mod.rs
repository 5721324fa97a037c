#![allow(dead_code)]

use aelab_core::network::init;
use aelab_core::rng::CounterRng;
use aelab_core::{parse_arch, Activation, Autoencoder, LatentRule, Matrix, Net};

/// Small tanh/softplus net with every parameter drawn from N(0, 0.5²).
pub fn random_net(spec: &str, input_dim: usize, activation: Activation, seed: u64) -> Net {
    let arch = parse_arch(spec, input_dim, LatentRule::Auto)
        .unwrap()
        .with_activation(activation);
    let net = init(&arch, seed);
    let mut rng = CounterRng::new(seed ^ 0xabc);
    let params = (0..net.params().len()).map(|_| 0.5 * rng.normal()).collect();
    net.with_params(params).unwrap()
}

pub fn random_batch(dim: usize, n: usize, seed: u64) -> Matrix {
    let mut rng = CounterRng::new(seed);
    let data = (0..dim * n).map(|_| rng.normal()).collect();
    Matrix::from_vec(dim, n, data)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|b|, floor)` in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(floor)
}

/// Central finite-difference Jacobian (`rows = outputs`) of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let m = f(x).len();
    let mut jac = vec![vec![0.0; x.len()]; m];
    let mut p = x.to_vec();
    for j in 0..x.len() {
        p[j] = x[j] + h;
        let up = f(&p);
        p[j] = x[j] - h;
        let down = f(&p);
        p[j] = x[j];
        for i in 0..m {
            jac[i][j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}
