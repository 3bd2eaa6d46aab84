//! Shared input builders for the benchmark targets.

use gc_core::rng::SplitMix64;
use gc_core::synth::{generate_scene, SceneSpec, SceneTruth};
use gc_core::tensor::FeatureMap;

/// Uniform random cost matrix entries in `[0, 1)`.
pub fn random_costs(k: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..k * k).map(|_| rng.next_f64()).collect()
}

/// Random feature map with values in `[-1.5, 1.5]`.
pub fn random_map(height: usize, width: usize, dim: usize, seed: u64) -> FeatureMap {
    let mut rng = SplitMix64::new(seed);
    let data: Vec<f32> = (0..height * width * dim)
        .map(|_| rng.next_range(-1.5, 1.5) as f32)
        .collect();
    FeatureMap::new(height, width, dim, data).expect("valid shape")
}

/// Mid-sized noisy scene for pipeline benchmarks.
pub fn bench_scene(seed: u64) -> SceneTruth {
    generate_scene(&SceneSpec {
        height: 24,
        width: 24,
        dim: 32,
        num_objects: 5,
        frames: 8,
        object_radius_range: (2.5, 3.5),
        noise_sigma: 0.05,
        seed,
        ..Default::default()
    })
    .expect("bench scene generation")
}
