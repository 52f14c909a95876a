use serde::Serialize;

use super::model::ToyModel;
use super::scene::Scene;
use crate::error::{Error, Result};
use crate::layer::{argmax_target, softmax_channels};
use crate::par::{self, Execution};
use crate::tensor::LabelMask;

/// Per-class IoU over a scene set; `None` where prediction and truth are both empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

impl Evaluation {
    /// IoU from accumulated `(intersection, union)` pixel counts per class.
    pub fn from_counts(counts: &[(u64, u64)]) -> Self {
        let per_class: Vec<Option<f64>> = counts
            .iter()
            .map(|&(i, u)| (u > 0).then(|| i as f64 / u as f64))
            .collect();
        let included: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = if included.is_empty() {
            0.0
        } else {
            included.iter().sum::<f64>() / included.len() as f64
        };
        Self { per_class, mean }
    }
}

/// Add the intersection/union counts of one prediction into `counts`.
pub fn accumulate_counts(pred: &LabelMask, truth: &LabelMask, counts: &mut [(u64, u64)]) {
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        let (p, t) = (usize::from(p), usize::from(t));
        if p == t {
            counts[p].0 += 1;
            counts[p].1 += 1;
        } else {
            counts[p].1 += 1;
            counts[t].1 += 1;
        }
    }
}

/// mIoU of `argmax(softmax(forward(image)))` against the true masks.
pub fn evaluate_miou(model: &ToyModel, scenes: &[Scene]) -> Result<Evaluation> {
    evaluate_miou_with(model, scenes, Execution::default())
}

pub fn evaluate_miou_with(model: &ToyModel, scenes: &[Scene], exec: Execution) -> Result<Evaluation> {
    if scenes.is_empty() {
        return Err(Error::EmptyScenes);
    }
    let classes = model.classes();
    let per_scene = par::map_collect(scenes.iter().collect(), exec, |scene: &Scene| {
        let logits = model.forward(&scene.image)?;
        let pred = argmax_target(&softmax_channels(&logits));
        let mut counts = vec![(0u64, 0u64); classes];
        if scene.true_mask.labels().iter().any(|&k| usize::from(k) >= classes) {
            return Err(Error::Shape("true mask has a class the model does not predict".into()));
        }
        accumulate_counts(&pred, &scene.true_mask, &mut counts);
        Ok(counts)
    });
    let mut totals = vec![(0u64, 0u64); classes];
    for counts in per_scene {
        for (t, c) in totals.iter_mut().zip(counts?) {
            t.0 += c.0;
            t.1 += c.1;
        }
    }
    Ok(Evaluation::from_counts(&totals))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(labels: &[u8]) -> LabelMask {
        LabelMask::new(2, 2, labels.to_vec()).unwrap()
    }

    fn score(pred: &[u8], truth: &[u8], classes: usize) -> Evaluation {
        let mut counts = vec![(0, 0); classes];
        accumulate_counts(&mask(pred), &mask(truth), &mut counts);
        Evaluation::from_counts(&counts)
    }

    #[test]
    fn perfect_prediction() {
        let e = score(&[0, 1, 2, 1], &[0, 1, 2, 1], 4);
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.per_class[3], None);
    }

    #[test]
    fn disjoint_prediction() {
        let e = score(&[1, 1, 0, 0], &[0, 0, 1, 1], 2);
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn one_third_overlap() {
        // class 1: pred {0, 1}, truth {1, 2}
        let e = score(&[1, 1, 0, 0], &[0, 1, 1, 0], 2);
        assert!((e.per_class[1].unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_scene_list() {
        let m = ToyModel::zeros(2, 2);
        assert!(matches!(evaluate_miou(&m, &[]), Err(Error::EmptyScenes)));
    }
}
