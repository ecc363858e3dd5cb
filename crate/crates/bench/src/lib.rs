//! Shared inputs for the benchmarks in `benches/`.

use memip_core::simulate::simulate_dataset;
use memip_core::{Dataset, ExpSumModel};

/// A stable `d`-type model: constant backgrounds `0.5`, self-exciting
/// kernels `0.3 exp(-t)` and weak cross-inhibition `-0.05 exp(-2t)`.
pub fn bench_model(d: usize) -> ExpSumModel {
    let mut m = ExpSumModel::zeros(d, 2, 1.0).expect("valid shape");
    for v in 0..d {
        m.set(v, 0, 0, 0.5);
        for u in 0..d {
            if u == v {
                m.set(v, u + 1, 0, 0.3);
            } else {
                m.set(v, u + 1, 1, -0.05);
            }
        }
    }
    m
}

/// About `events` events of [`bench_model`] on windows of length 50.
pub fn bench_dataset(d: usize, events: usize, seed: u64) -> Dataset {
    let m = bench_model(d);
    // stationary rate per type is roughly 0.5 / (1 - 0.3) less the inhibition
    let per_window = 50.0 * d as f64 * 0.6;
    let n = ((events as f64 / per_window).ceil() as usize).max(1);
    simulate_dataset(&m, n, 0.0, 50.0, seed).expect("stable model")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_size_is_close_to_request() {
        let ds = bench_dataset(3, 5_000, 1);
        let n = ds.total_events() as f64;
        assert!((n / 5_000.0 - 1.0).abs() < 0.5, "{n}");
    }
}
