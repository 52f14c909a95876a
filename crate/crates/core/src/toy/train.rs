use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::{evaluate_miou, Evaluation};
use super::model::ToyModel;
use super::scene::{generate_scenes, Scene, Split};
use super::{mix_seed, SizeSource, TrainConfig};
use crate::error::{Error, Result};
use crate::layer::{self, LayerOptions, SizeConstraints, LOG_FLOOR};
use crate::par::Execution;
use crate::sizes;
use crate::tensor::ChannelStack;
use crate::ClassId;

const INIT_STREAM: u64 = 10;
const SHUFFLE_STREAM: u64 = 11;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_miou: f64,
    pub val_iou: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyModel,
    /// Validation score of the freshly initialized model.
    pub initial: Evaluation,
    pub history: Vec<EpochMetrics>,
}

/// Localization cues: for each present class, the pixel where its saliency
/// peaks.
pub fn seed_pixels(scene: &Scene) -> Vec<(usize, ClassId)> {
    let sal = &scene.saliency;
    sal.classes()
        .iter()
        .enumerate()
        .map(|(c, &k)| (sal.argmax(c), k))
        .collect()
}

/// Mean cross-entropy on the seed pixels, with its gradient added into `grad`.
fn seed_loss(
    logits: &ChannelStack,
    probs: &ChannelStack,
    seeds: &[(usize, ClassId)],
    grad: &mut ChannelStack,
) -> Result<f64> {
    let n = logits.pixels();
    let c = logits.channels();
    let weight = 1.0 / seeds.len() as f64;
    let mut loss = 0.0;
    let g = grad.data_mut();
    for &(p, k) in seeds {
        let target = logits.channel_index(k).ok_or(Error::InvalidLabel(k))?;
        loss -= probs.data()[target * n + p].max(LOG_FLOOR).ln() * weight;
        for ch in 0..c {
            let onehot = if ch == target { 1.0 } else { 0.0 };
            g[ch * n + p] += (probs.data()[ch * n + p] - onehot) * weight;
        }
    }
    Ok(loss)
}

/// Constraints the projection arm uses for `scene` under `config`.
pub(crate) fn scene_constraints(scene: &Scene, config: &TrainConfig) -> Result<SizeConstraints> {
    match config.size_source {
        SizeSource::Oracle => scene.oracle_constraints(config.num_classes),
        SizeSource::Saliency => sizes::estimate_sizes_for(&scene.saliency, config.tau, config.num_classes),
    }
}

/// Loss of `model` on `scene` and its gradient with respect to the logits.
pub(crate) fn loss_and_logit_grad(
    logits: &ChannelStack,
    scene: &Scene,
    constraints: &SizeConstraints,
    config: &TrainConfig,
) -> Result<(f64, ChannelStack)> {
    let mut loss = 0.0;
    let mut grad = ChannelStack::zeros(logits.class_ids().to_vec(), logits.height(), logits.width())?;
    let probs = if config.projection_loss {
        let opts = LayerOptions {
            target: config.target_mode(),
            reduction: config.reduction(),
            ..Default::default()
        };
        let r = layer::refine(logits, constraints, &opts)?;
        loss += r.loss;
        for (g, d) in grad.data_mut().iter_mut().zip(r.grad.data()) {
            *g += d;
        }
        r.probs
    } else {
        layer::softmax_channels(logits)
    };
    if config.seed_loss {
        loss += seed_loss(logits, &probs, &seed_pixels(scene), &mut grad)?;
    }
    Ok((loss, grad))
}

/// One SGD step on one scene. Returns the loss before the update.
pub fn train_step(
    model: &mut ToyModel,
    scene: &Scene,
    constraints: &SizeConstraints,
    config: &TrainConfig,
) -> Result<f64> {
    let (logits, cache) = model.forward_cached(&scene.image)?;
    let (loss, grad) = loss_and_logit_grad(&logits, scene, constraints, config)?;
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("loss is {loss}")));
    }
    let grads = model.backward(&cache, &grad)?;
    model.sgd_step(&grads, config.learning_rate);
    if !model.params().is_finite() {
        return Err(Error::Diverged("non-finite parameters after update".into()));
    }
    Ok(loss)
}

pub(crate) fn init_model(config: &TrainConfig) -> ToyModel {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, INIT_STREAM, 0));
    ToyModel::new(config.features, config.num_classes, &mut rng)
}

/// Train on a generated dataset, evaluating on the validation split after
/// every epoch. Deterministic in `config`.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let exec = Execution::default();
    let train_set = generate_scenes(config, Split::Train, exec)?;
    let val_set = generate_scenes(config, Split::Val, exec)?;
    let constraints = train_set
        .iter()
        .map(|s| scene_constraints(s, config))
        .collect::<Result<Vec<_>>>()?;

    let mut model = init_model(config);
    let initial = evaluate_miou(&model, &val_set)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, SHUFFLE_STREAM, epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            total += train_step(&mut model, &train_set[i], &constraints[i], config)?;
        }
        let eval = evaluate_miou(&model, &val_set)?;
        history.push(EpochMetrics {
            epoch,
            mean_loss: total / order.len() as f64,
            val_miou: eval.mean,
            val_iou: eval.per_class,
        });
    }
    Ok(TrainOutcome {
        model,
        initial,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::generate_scene;

    fn small() -> TrainConfig {
        TrainConfig {
            height: 12,
            width: 12,
            train_scenes: 4,
            val_scenes: 2,
            max_shapes: 1,
            epochs: 1,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small()
        };
        let scene = generate_scene(1, &cfg).unwrap();
        let mut model = init_model(&cfg);
        let before = model.clone();
        let c = scene_constraints(&scene, &cfg).unwrap();
        train_step(&mut model, &scene, &c, &cfg).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn absent_sizes_push_background_up() {
        let cfg = TrainConfig {
            seed_loss: false,
            ..small()
        };
        let scene = generate_scene(2, &cfg).unwrap();
        let model = init_model(&cfg);
        let logits = model.forward(&scene.image).unwrap();
        let zero = SizeConstraints::for_foreground(cfg.num_classes, &Default::default()).unwrap();
        let (_, grad) = loss_and_logit_grad(&logits, &scene, &zero, &cfg).unwrap();
        // descent direction is -grad: background logit rises, the rest fall
        let n = logits.pixels();
        for p in [0, n / 2, n - 1] {
            assert!(grad.data()[p] < 0.0);
            for c in 1..cfg.num_classes {
                assert!(grad.data()[c * n + p] > 0.0);
            }
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let cfg = TrainConfig { epochs: 0, ..small() };
        let out = train(&cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.model, init_model(&cfg));
    }

    #[test]
    fn seeds_cover_present_classes() {
        let cfg = TrainConfig::default();
        let scene = generate_scene(5, &cfg).unwrap();
        let seeds = seed_pixels(&scene);
        assert_eq!(seeds.len(), scene.labels.len());
        for &(p, k) in &seeds {
            assert_eq!(scene.true_mask.labels()[p], k, "seed should land inside its object");
        }
    }
}
