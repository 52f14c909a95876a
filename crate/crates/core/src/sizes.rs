//! Size estimates from class-specific saliency maps.
//!
//! A pixel counts towards class `k` when its saliency for `k` is at least
//! `tau` and no other class scores higher there, so no pixel is counted twice.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::layer::SizeConstraints;
use crate::morph;
use crate::tensor::{ChannelStack, LabelMask};
use crate::{ClassId, BACKGROUND};

/// Default saliency threshold (1/8).
pub const DEFAULT_TAU: f64 = 0.125;

/// One saliency map per foreground class present in the image.
///
/// Positive values mark likely object pixels; negative values mark
/// non-salient regions. The class list may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyStack {
    classes: Vec<ClassId>,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SaliencyStack {
    pub fn new(classes: Vec<ClassId>, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("saliency map must be non-empty".into()));
        }
        if classes.contains(&BACKGROUND) {
            return Err(Error::Shape(
                "saliency stack cannot contain the background class".into(),
            ));
        }
        let mut uniq = classes.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != classes.len() {
            return Err(Error::Shape("duplicate class id in saliency stack".into()));
        }
        let expected = classes.len() * height * width;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            classes,
            height,
            width,
            data,
        })
    }

    pub fn from_stack(stack: ChannelStack) -> Result<Self> {
        let (ids, h, w) = (stack.class_ids().to_vec(), stack.height(), stack.width());
        Self::new(ids, h, w, stack.into_data())
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Pixel index of the maximum saliency of channel `c` (first on ties).
    pub fn argmax(&self, c: usize) -> usize {
        let ch = self.channel(c);
        let mut best = 0;
        for (i, &v) in ch.iter().enumerate() {
            if v > ch[best] {
                best = i;
            }
        }
        best
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::NonPositiveThreshold);
    }
    Ok(())
}

/// Label each pixel with the most salient class whose score is `>= tau`,
/// or background if none qualifies. Ties go to the lowest class id.
pub fn assign_salient_pixels(saliency: &SaliencyStack, tau: f64) -> Result<LabelMask> {
    check_tau(tau)?;
    let n = saliency.height * saliency.width;
    let labels = (0..n)
        .map(|p| {
            let mut best: Option<(ClassId, f64)> = None;
            for (c, &k) in saliency.classes.iter().enumerate() {
                let v = saliency.data[c * n + p];
                if v < tau {
                    continue;
                }
                best = match best {
                    Some((bk, bv)) if bv > v || (bv == v && bk < k) => Some((bk, bv)),
                    _ => Some((k, v)),
                };
            }
            best.map_or(BACKGROUND, |(k, _)| k)
        })
        .collect();
    LabelMask::new(saliency.height, saliency.width, labels)
}

/// Per-class pixel counts from [`assign_salient_pixels`], for the classes in the stack.
pub fn estimate_sizes(saliency: &SaliencyStack, tau: f64, image_area: usize) -> Result<SizeConstraints> {
    let area = saliency.height * saliency.width;
    if image_area != area {
        return Err(Error::Shape(format!(
            "saliency covers {area} pixels but the image has {image_area}"
        )));
    }
    let mask = assign_salient_pixels(saliency, tau)?;
    let mut out = SizeConstraints::new();
    for &k in &saliency.classes {
        out.insert(k, mask.count(k) as f64)?;
    }
    Ok(out)
}

/// Like [`estimate_sizes`], but also lists every foreground class in
/// `1..num_classes` that is absent from the stack, with size zero.
pub fn estimate_sizes_for(saliency: &SaliencyStack, tau: f64, num_classes: usize) -> Result<SizeConstraints> {
    let found = estimate_sizes(saliency, tau, saliency.height * saliency.width)?;
    let present: BTreeMap<ClassId, f64> = found.iter().collect();
    SizeConstraints::for_foreground(num_classes, &present)
}

/// Stand-in for a saliency network: a depth-shaped copy of each true object
/// mask, randomly grown or shrunk by one pixel, plus Gaussian noise.
///
/// The clean signal is `0.5 + 0.5 * min(depth, 3) / 3` on the (perturbed)
/// object and `-0.5` off it, so the noise-free map is positive exactly on
/// the object and peaks in its interior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSaliency {
    pub sigma: f64,
    pub off_object: f64,
    /// Apply a random one-pixel dilation or erosion per class.
    pub morph: bool,
}

impl Default for SyntheticSaliency {
    fn default() -> Self {
        Self {
            sigma: 0.15,
            off_object: -0.5,
            morph: true,
        }
    }
}

const DEPTH_CAP: u8 = 4;

impl SyntheticSaliency {
    pub fn generate<R: Rng + ?Sized>(
        &self,
        mask: &LabelMask,
        classes: &[ClassId],
        rng: &mut R,
    ) -> Result<SaliencyStack> {
        let (h, w) = (mask.height(), mask.width());
        let n = h * w;
        let noise = Normal::new(0.0, self.sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut data = Vec::with_capacity(classes.len() * n);
        for &k in classes {
            let mut object: Vec<bool> = mask.labels().iter().map(|&l| l == k).collect();
            if self.morph {
                match rng.random_range(0..3u8) {
                    0 => object = morph::erode(&object, h, w),
                    2 => object = morph::dilate(&object, h, w),
                    _ => {}
                }
            }
            let depth = morph::depth(&object, h, w, DEPTH_CAP);
            for &d in &depth {
                let clean = if d == 0 {
                    self.off_object
                } else {
                    f64::from(d) / f64::from(DEPTH_CAP)
                };
                data.push(clean + noise.sample(rng));
            }
        }
        SaliencyStack::new(classes.to_vec(), h, w, data)
    }
}
