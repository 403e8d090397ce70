//! Inputs shared by the criterion benchmarks in `benches/`.

use partmc::rng::chain_rng;
use partmc::target::benchmark_target;
use partmc::{SampleMatrix, Target};

pub fn target(name: &str) -> Target {
    benchmark_target(name).expect("built-in target")
}

/// `n` exact draws from a built-in target.
pub fn draws(name: &str, n: usize, seed: u64) -> SampleMatrix {
    target(name)
        .sample_iid(n, &mut chain_rng(seed))
        .expect("built-in targets have an oracle")
}

/// AR(1) series `x_t = rho x_{t-1} + e_t` driven by the first column of a
/// standard normal draw.
pub fn ar1(n: usize, rho: f64, seed: u64) -> Vec<f64> {
    let noise = draws("mix2d", n, seed);
    let mut x = 0.0;
    (0..n)
        .map(|i| {
            x = rho * x + noise.row(i)[0];
            x
        })
        .collect()
}
