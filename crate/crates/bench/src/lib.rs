//! Fixtures shared by the benchmarks.

use nalgebra::DMatrix;
use stalevol::sim::{simulate_world, Panel, SimConfig};

/// Simulated panel with `d` assets and `n` increments over the default horizon.
pub fn panel(d: usize, n: usize) -> Panel {
    let cfg = SimConfig {
        d,
        ..SimConfig::default()
    }
    .with_increments(n);
    simulate_world(&cfg, 0).expect("default simulation").0
}

/// Well-conditioned covariance matrix of size `d`.
pub fn covariance(d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d + 5, |i, k| (((i * 31 + k * 17) % 23) as f64 - 11.0) / 11.0);
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1
}
