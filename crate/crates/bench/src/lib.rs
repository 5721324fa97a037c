//! Shared fixtures for the benchmarks.

use aelab_core::data::{Dataset, DatasetMeta};
use aelab_core::network::init;
use aelab_core::{parse_arch, LatentRule, Matrix, Net};

/// Architectures of the three deep-bottleneck spiral fits, smallest last.
pub const SPIRAL_ARCHS: [&str; 3] = ["50-100-200-100-50-1-50-100-200-100-50", "50-100-50-1-50-100-50", "200-1-200"];

pub fn spiral_batch(n: usize) -> Matrix {
    let data = Dataset::generate(&DatasetMeta::spiral_default(0)).expect("default spiral");
    data.points.select_columns(&(0..n).collect::<Vec<_>>())
}

pub fn net(spec: &str) -> Net {
    init(&parse_arch(spec, 2, LatentRule::Auto).expect("valid arch"), 0)
}
