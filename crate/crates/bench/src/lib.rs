//! Shared inputs for the benchmarks.

use moeplan_core::{ModelShape, SyntheticSpec};

/// Block-structured trace parameters for a model preset.
pub fn workload(preset: &str, num_tokens: usize, seed: u64) -> SyntheticSpec {
    let shape = ModelShape::preset(preset).expect("known preset");
    SyntheticSpec {
        shape,
        num_tokens,
        num_blocks: (shape.num_experts / 16).max(1),
        within_block_prob: 0.9,
        popularity_skew: 0.8,
        seed,
    }
}
