//! Small end-to-end demonstration: synthetic scenes with image-level labels,
//! a three-layer fully convolutional network with hand-written backprop, and
//! training with or without the projection loss.

mod metrics;
mod model;
mod scene;
mod train;

pub use metrics::{accumulate_counts, evaluate_miou, evaluate_miou_with, Evaluation};
pub use model::{Cache, Gradients, Image, ToyModel};
pub use scene::{generate_scene, generate_scenes, Scene, ShapeKind, Split};
pub use train::{seed_pixels, train, train_step, EpochMetrics, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{Reduction, TargetMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SizeSource {
    /// Exact pixel counts from the ground-truth mask.
    #[default]
    Oracle,
    /// Counts from noisy synthetic saliency, thresholded at `tau`.
    Saliency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of classes including background.
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub max_shapes: usize,
    pub features: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub size_source: SizeSource,
    pub tau: f64,
    pub saliency_sigma: f64,
    pub projection_loss: bool,
    pub seed_loss: bool,
    pub soft_target: bool,
    pub loss_sum: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            height: 32,
            width: 32,
            train_scenes: 200,
            val_scenes: 50,
            max_shapes: 3,
            features: 8,
            learning_rate: 0.05,
            epochs: 5,
            seed: 42,
            size_source: SizeSource::Oracle,
            tau: crate::sizes::DEFAULT_TAU,
            saliency_sigma: 0.15,
            projection_loss: true,
            seed_loss: true,
            soft_target: false,
            loss_sum: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_classes < 2 || self.num_classes > 256 {
            return fail("num_classes must be in 2..=256");
        }
        if self.height < 8 || self.width < 8 {
            return fail("images must be at least 8x8");
        }
        if self.train_scenes == 0 || self.val_scenes == 0 {
            return fail("dataset sizes must be positive");
        }
        if self.max_shapes == 0 || self.max_shapes > self.num_classes - 1 {
            return fail("max_shapes must be in 1..num_classes");
        }
        if self.features == 0 {
            return fail("features must be positive");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return fail("learning rate must be finite and nonnegative");
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::NonPositiveThreshold);
        }
        if self.saliency_sigma.is_nan() || self.saliency_sigma < 0.0 {
            return fail("saliency sigma must be nonnegative");
        }
        if !self.projection_loss && !self.seed_loss {
            return fail("at least one loss term must be enabled");
        }
        Ok(())
    }

    pub fn reduction(&self) -> Reduction {
        if self.loss_sum {
            Reduction::Sum
        } else {
            Reduction::Mean
        }
    }

    pub fn target_mode(&self) -> TargetMode {
        if self.soft_target {
            TargetMode::Soft
        } else {
            TargetMode::Argmax
        }
    }
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub(crate) fn mix_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
