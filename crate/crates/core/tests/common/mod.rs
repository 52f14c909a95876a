//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use cspn::layer::{projection_loss, projection_loss_grad, softmax_channels, Reduction};
use cspn::toy::{Image, ToyModel};
use cspn::{ChannelStack, ClassId, LabelMask};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor, so entries that are zero up to
/// rounding do not dominate.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst elementwise relative error between `projection_loss_grad` and
/// central differences of `projection_loss(softmax(.))` on a random instance.
pub fn layer_grad_error(rng: &mut ChaCha8Rng, reduction: Reduction) -> f64 {
    let c = rng.random_range(2..=5);
    let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
    let data: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = (0..h * w).map(|_| rng.random_range(0..c) as ClassId).collect();
    let target = LabelMask::new(h, w, labels).unwrap();
    let logits = ChannelStack::from_dense(c, h, w, data.clone()).unwrap();
    let grad = projection_loss_grad(&logits, &target, reduction).unwrap();
    let loss_at = |d: Vec<f64>| {
        let l = ChannelStack::from_dense(c, h, w, d).unwrap();
        projection_loss(&softmax_channels(&l), &target, reduction).unwrap()
    };
    let mut worst: f64 = 0.0;
    for i in 0..data.len() {
        let mut plus = data.clone();
        let mut minus = data.clone();
        plus[i] += FD_STEP;
        minus[i] -= FD_STEP;
        let numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grad.data()[i], numeric, 1e-12));
    }
    worst
}

/// A random model, 6x6 image and fixed target for the backward check.
pub fn toy_instance(seed: u64) -> (ToyModel, Image, LabelMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ToyModel::new(4, 3, &mut rng);
    let image = Image::new(6, 6, (0..3 * 36).map(|_| rng.random::<f64>()).collect()).unwrap();
    let labels = (0..36).map(|_| rng.random_range(0..3u8)).collect();
    (model, image, LabelMask::new(6, 6, labels).unwrap())
}

pub fn toy_loss(model: &ToyModel, image: &Image, target: &LabelMask) -> f64 {
    let logits = model.forward(image).unwrap();
    projection_loss(&softmax_channels(&logits), target, Reduction::Mean).unwrap()
}

/// Backprop gradient of the pixel-averaged loss, flattened like the params.
pub fn toy_analytic_grad(model: &ToyModel, image: &Image, target: &LabelMask) -> Vec<f64> {
    let (logits, cache) = model.forward_cached(image).unwrap();
    let g = projection_loss_grad(&logits, target, Reduction::Mean).unwrap();
    model.backward(&cache, &g).unwrap().flatten()
}

/// Worst elementwise relative error of the full backward pass against
/// central differences. The floor is relative to the largest gradient entry.
pub fn toy_grad_error(seed: u64) -> f64 {
    let (model, image, target) = toy_instance(seed);
    let analytic = toy_analytic_grad(&model, &image, &target);
    let base = model.flat_params();
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + FD_STEP;
        probe.set_flat_params(&p).unwrap();
        let up = toy_loss(&probe, &image, &target);
        p[i] = base[i] - FD_STEP;
        probe.set_flat_params(&p).unwrap();
        let down = toy_loss(&probe, &image, &target);
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[i], numeric, 1e-6 * scale));
    }
    worst
}
