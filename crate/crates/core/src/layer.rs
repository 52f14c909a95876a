//! The size-constrained projection layer and its loss.
//!
//! Pipeline: logits → [`softmax_channels`] → [`project_heatmaps`] →
//! [`argmax_target`] → cross-entropy against the softmax probabilities.
//! The target is a constant with respect to the logits, so the gradient is
//! the usual `softmax - onehot`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::projection::{self, Algorithm, DEFAULT_PIVOT_SEED};
use crate::tensor::{ChannelStack, LabelMask};
use crate::ClassId;

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Per-class pixel-count constraints.
///
/// Only classes listed here are projected; every other channel passes
/// through the layer unchanged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SizeConstraints {
    sizes: BTreeMap<ClassId, f64>,
}

impl SizeConstraints {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class: ClassId, size: f64) -> Result<()> {
        if !size.is_finite() {
            return Err(Error::NonFinite);
        }
        if size < 0.0 {
            return Err(Error::NegativeConstraint);
        }
        self.sizes.insert(class, size);
        Ok(())
    }

    pub fn with(mut self, class: ClassId, size: f64) -> Result<Self> {
        self.insert(class, size)?;
        Ok(self)
    }

    /// Constraints for foreground classes `1..num_classes`; classes missing
    /// from `present` are absent from the image and get size zero.
    pub fn for_foreground(num_classes: usize, present: &BTreeMap<ClassId, f64>) -> Result<Self> {
        let mut out = Self::new();
        for k in 1..num_classes {
            let k = ClassId::try_from(k).map_err(|_| Error::Shape("too many classes".into()))?;
            out.insert(k, present.get(&k).copied().unwrap_or(0.0))?;
        }
        Ok(out)
    }

    pub fn get(&self, class: ClassId) -> Option<f64> {
        self.sizes.get(&class).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, f64)> + '_ {
        self.sizes.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.sizes.values().sum()
    }

    /// Every constrained class must exist in the stack and fit in `H * W`.
    pub fn check_against(&self, stack: &ChannelStack) -> Result<()> {
        let capacity = stack.pixels();
        for (class, size) in self.iter() {
            if stack.channel_index(class).is_none() {
                return Err(Error::MissingClass(class));
            }
            if size > capacity as f64 {
                return Err(Error::InfeasibleConstraint { class, size, capacity });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl Reduction {
    fn scale(self, pixels: usize) -> f64 {
        match self {
            Reduction::Mean => 1.0 / pixels as f64,
            Reduction::Sum => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetMode {
    /// Hard labels from the per-pixel argmax of the projected maps.
    #[default]
    Argmax,
    /// Per-pixel softmax of the projected maps used as a soft target.
    Soft,
}

/// What the projection is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionInput {
    #[default]
    Probabilities,
    /// Raw network scores, before the softmax.
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectOptions {
    pub algorithm: Algorithm,
    pub pivot_seed: u64,
    pub exec: Execution,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Linear,
            pivot_seed: DEFAULT_PIVOT_SEED,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LayerOptions {
    pub project: ProjectOptions,
    pub target: TargetMode,
    pub reduction: Reduction,
    pub input: ProjectionInput,
}

/// Per-channel summary of one projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelProjection {
    pub class: ClassId,
    pub size: f64,
    pub sum_before: f64,
    pub sum_after: f64,
    pub theta: f64,
    pub support_size: usize,
}

/// Per-pixel softmax across channels, stabilized by subtracting the pixel max.
pub fn softmax_channels(logits: &ChannelStack) -> ChannelStack {
    let c = logits.channels();
    let n = logits.pixels();
    let src = logits.data();
    let mut out = vec![0.0; c * n];
    for p in 0..n {
        let max = (0..c).map(|k| src[k * n + p]).fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for k in 0..c {
            let e = (src[k * n + p] - max).exp();
            out[k * n + p] = e;
            denom += e;
        }
        for k in 0..c {
            out[k * n + p] /= denom;
        }
    }
    ChannelStack::from_parts_unchecked(logits.class_ids().to_vec(), logits.height(), logits.width(), out)
}

/// Project every constrained channel onto `{q >= 0, sum(q) = size_k}`.
pub fn project_heatmaps(probs: &ChannelStack, constraints: &SizeConstraints) -> Result<ChannelStack> {
    project_heatmaps_with(probs, constraints, &ProjectOptions::default()).map(|(s, _)| s)
}

/// Like [`project_heatmaps`], also reporting the threshold and support of
/// each projected channel. Channels are processed independently; the result
/// does not depend on `opts.exec`.
pub fn project_heatmaps_with(
    probs: &ChannelStack,
    constraints: &SizeConstraints,
    opts: &ProjectOptions,
) -> Result<(ChannelStack, Vec<ChannelProjection>)> {
    constraints.check_against(probs)?;
    let n = probs.pixels();
    let mut out = probs.clone();
    let jobs: Vec<(usize, ClassId, f64)> = constraints
        .iter()
        .map(|(k, size)| (probs.channel_index(k).expect("checked above"), k, size))
        .collect();

    let results = par::map_collect(jobs, opts.exec, |(c, class, size)| {
        let channel = probs.channel(c);
        let seed = opts.pivot_seed.wrapping_add(u64::from(class));
        projection::project_simplex(channel, size, opts.algorithm, seed).map(|r| (c, class, size, r))
    });

    let mut report = Vec::with_capacity(results.len());
    for r in results {
        let (c, class, size, r) = r?;
        let sum_before = projection::compensated_sum(probs.channel(c));
        let sum_after = projection::compensated_sum(&r.projected);
        out.channel_mut(c).copy_from_slice(&r.projected);
        report.push(ChannelProjection {
            class,
            size,
            sum_before,
            sum_after,
            theta: r.theta,
            support_size: r.support_size,
        });
    }
    debug_assert_eq!(out.data().len(), n * probs.channels());
    Ok((out, report))
}

/// Per-pixel argmax over channels; ties go to the lowest class id.
pub fn argmax_target(projected: &ChannelStack) -> LabelMask {
    let ids = projected.class_ids();
    let n = projected.pixels();
    let data = projected.data();
    let labels = (0..n)
        .map(|p| {
            let mut best = 0;
            for c in 1..ids.len() {
                let (v, b) = (data[c * n + p], data[best * n + p]);
                if v > b || (v == b && ids[c] < ids[best]) {
                    best = c;
                }
            }
            ids[best]
        })
        .collect();
    LabelMask::new(projected.height(), projected.width(), labels).expect("shape matches")
}

/// Per-pixel softmax of the projected maps, used as a soft target.
pub fn soft_target(projected: &ChannelStack) -> ChannelStack {
    softmax_channels(projected)
}

fn channel_lookup(stack: &ChannelStack) -> [Option<usize>; 256] {
    let mut table = [None; 256];
    for (c, &k) in stack.class_ids().iter().enumerate() {
        table[usize::from(k)] = Some(c);
    }
    table
}

fn check_target(stack: &ChannelStack, target: &LabelMask) -> Result<Vec<usize>> {
    if target.height() != stack.height() || target.width() != stack.width() {
        return Err(Error::Shape(format!(
            "target is {}x{}, stack is {}x{}",
            target.height(),
            target.width(),
            stack.height(),
            stack.width()
        )));
    }
    let table = channel_lookup(stack);
    target
        .labels()
        .iter()
        .map(|&k| table[usize::from(k)].ok_or(Error::InvalidLabel(k)))
        .collect()
}

/// Cross-entropy of `probs` against hard labels.
pub fn projection_loss(probs: &ChannelStack, target: &LabelMask, reduction: Reduction) -> Result<f64> {
    let channels = check_target(probs, target)?;
    let n = probs.pixels();
    let data = probs.data();
    let mut acc = projection::CompensatedSum::default();
    for (p, &c) in channels.iter().enumerate() {
        acc.add(-data[c * n + p].max(LOG_FLOOR).ln());
    }
    Ok(acc.value() * reduction.scale(n))
}

/// Gradient of [`projection_loss`] of `softmax(logits)` with respect to the logits.
pub fn projection_loss_grad(logits: &ChannelStack, target: &LabelMask, reduction: Reduction) -> Result<ChannelStack> {
    let channels = check_target(logits, target)?;
    let n = logits.pixels();
    let scale = reduction.scale(n);
    let mut grad = softmax_channels(logits);
    let data = grad.data_mut();
    for (p, &c) in channels.iter().enumerate() {
        data[c * n + p] -= 1.0;
    }
    data.iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}

/// Cross-entropy of `probs` against a per-pixel target distribution.
pub fn soft_target_loss(probs: &ChannelStack, target: &ChannelStack, reduction: Reduction) -> Result<f64> {
    if !probs.same_shape(target) {
        return Err(Error::Shape("soft target shape differs from probabilities".into()));
    }
    let mut acc = projection::CompensatedSum::default();
    for (&q, &t) in probs.data().iter().zip(target.data()) {
        acc.add(-t * q.max(LOG_FLOOR).ln());
    }
    Ok(acc.value() * reduction.scale(probs.pixels()))
}

/// Gradient of [`soft_target_loss`] of `softmax(logits)`; the target rows sum to one.
pub fn soft_target_loss_grad(
    logits: &ChannelStack,
    target: &ChannelStack,
    reduction: Reduction,
) -> Result<ChannelStack> {
    if !logits.same_shape(target) {
        return Err(Error::Shape("soft target shape differs from logits".into()));
    }
    let scale = reduction.scale(logits.pixels());
    let mut grad = softmax_channels(logits);
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        *g = (*g - t) * scale;
    }
    Ok(grad)
}

/// Output of one pass through the layer.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub probs: ChannelStack,
    pub projected: ChannelStack,
    /// Hard target; in soft mode this is still the argmax, for reporting.
    pub target: LabelMask,
    pub loss: f64,
    pub grad: ChannelStack,
}

/// softmax → projection → target → loss and gradient, in one call.
pub fn refine(logits: &ChannelStack, constraints: &SizeConstraints, opts: &LayerOptions) -> Result<Refinement> {
    let probs = softmax_channels(logits);
    let source = match opts.input {
        ProjectionInput::Probabilities => &probs,
        ProjectionInput::Logits => logits,
    };
    let (projected, _) = project_heatmaps_with(source, constraints, &opts.project)?;
    let target = argmax_target(&projected);
    let (loss, grad) = match opts.target {
        TargetMode::Argmax => (
            projection_loss(&probs, &target, opts.reduction)?,
            projection_loss_grad(logits, &target, opts.reduction)?,
        ),
        TargetMode::Soft => {
            let soft = soft_target(&projected);
            (
                soft_target_loss(&probs, &soft, opts.reduction)?,
                soft_target_loss_grad(logits, &soft, opts.reduction)?,
            )
        }
    };
    Ok(Refinement {
        probs,
        projected,
        target,
        loss,
        grad,
    })
}
