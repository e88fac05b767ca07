//! Fixtures shared by the benchmarks.

use gan_sentinel_core::metrics::{embed, FeatureExtractor};
use gan_sentinel_core::simulator::{simulate_images, simulate_losses, ImageDistribution, Scenario, ScenarioKind};
use gan_sentinel_core::{ImageSet, LossSeries};
use nalgebra::DMatrix;

/// `n` blob images of `side × side` pixels spread over 16 modes.
pub fn image_set(side: usize, n: usize, seed: u64) -> ImageSet {
    simulate_images(&ImageDistribution::grid(16, side, 0.0).with_noise(0.02), n, seed).expect("valid distribution")
}

/// Default random-projection features of a blob set.
pub fn features(side: usize, n: usize, seed: u64) -> DMatrix<f64> {
    embed(&image_set(side, n, seed), &FeatureExtractor::default()).expect("embeddable set")
}

pub fn losses(kind: ScenarioKind, epochs: u64, seed: u64) -> LossSeries {
    simulate_losses(&Scenario::new(kind, epochs, seed)).expect("valid scenario")
}
