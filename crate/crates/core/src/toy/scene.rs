use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::model::Image;
use super::{mix_seed, TrainConfig};
use crate::error::{Error, Result};
use crate::layer::SizeConstraints;
use crate::morph;
use crate::par::{self, Execution};
use crate::sizes::{SaliencyStack, SyntheticSaliency};
use crate::tensor::LabelMask;
use crate::{ClassId, BACKGROUND};

const MAX_PLACEMENT_TRIES: usize = 200;

const CLUTTER_STROKES: std::ops::RangeInclusive<usize> = 6..=12;

const PALETTE: [[f64; 3]; 7] = [
    [0.85, 0.20, 0.20],
    [0.20, 0.80, 0.25],
    [0.20, 0.30, 0.90],
    [0.90, 0.80, 0.15],
    [0.80, 0.25, 0.85],
    [0.15, 0.80, 0.85],
    [0.95, 0.55, 0.10],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Disk,
    Triangle,
}

impl ShapeKind {
    /// Foreground class `k` is drawn as shape `(k - 1) % 3`.
    pub fn for_class(class: ClassId) -> Self {
        match (class.saturating_sub(1)) % 3 {
            0 => ShapeKind::Rectangle,
            1 => ShapeKind::Disk,
            _ => ShapeKind::Triangle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
        }
    }
}

/// A synthetic image with its ground truth and weak labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub true_mask: LabelMask,
    /// Foreground classes present, ascending.
    pub labels: Vec<ClassId>,
    /// Exact pixel count of every present class.
    pub true_sizes: SizeConstraints,
    /// Noisy class-specific saliency for the present classes.
    pub saliency: SaliencyStack,
}

/// Shape extents are tuned for 32x32 images and scale with the smaller side.
const REFERENCE_SIDE: f64 = 32.0;

fn rasterize(kind: ShapeKind, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut m = vec![false; h * w];
    let fh = h as f64;
    let fw = w as f64;
    let scale = fh.min(fw) / REFERENCE_SIDE;
    let side = |v: f64| ((v * scale).round() as usize).max(2);
    match kind {
        ShapeKind::Rectangle => {
            let (lo, hi) = (side(5.0), side(13.0));
            let rh = rng.random_range(lo.min(h - 2)..=hi.min(h - 2));
            let rw = rng.random_range(lo.min(w - 2)..=hi.min(w - 2));
            let y0 = rng.random_range(1..=h - 1 - rh);
            let x0 = rng.random_range(1..=w - 1 - rw);
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    m[y * w + x] = true;
                }
            }
        }
        ShapeKind::Disk => {
            let r: f64 = rng.random_range(3.0 * scale..6.5 * scale).min((fh.min(fw) - 3.0) / 2.0);
            let cy = rng.random_range(r + 1.0..fh - 1.0 - r);
            let cx = rng.random_range(r + 1.0..fw - 1.0 - r);
            for y in 0..h {
                for x in 0..w {
                    let dy = y as f64 + 0.5 - cy;
                    let dx = x as f64 + 0.5 - cx;
                    m[y * w + x] = dy * dy + dx * dx <= r * r;
                }
            }
        }
        ShapeKind::Triangle => {
            let base = rng.random_range(8.0 * scale..15.0 * scale).min(fw - 3.0);
            let height = rng.random_range(7.0 * scale..13.0 * scale).min(fh - 3.0);
            let top = rng.random_range(1.0..fh - 1.0 - height);
            let left = rng.random_range(1.0..fw - 1.0 - base);
            let apex_up = rng.random_bool(0.5);
            for y in 0..h {
                let t = (y as f64 + 0.5 - top) / height;
                if !(0.0..=1.0).contains(&t) {
                    continue;
                }
                let frac = if apex_up { t } else { 1.0 - t };
                let half = 0.5 * base * frac;
                let mid = left + 0.5 * base;
                for x in 0..w {
                    let xc = x as f64 + 0.5;
                    m[y * w + x] = (xc - mid).abs() <= half;
                }
            }
        }
    }
    m
}

fn background(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base: f64 = rng.random_range(0.35..0.55);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.05..0.05));
    let freq: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.15..0.6));
    let phase: [f64; 2] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let grain = Normal::new(0.0, 0.03).expect("valid sigma");
    let mut out = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f64, x as f64);
            let texture = 0.05 * (freq[0] * fy + freq[1] * fx + phase[0]).sin()
                + 0.04 * (freq[2] * fx - freq[3] * fy + phase[1]).sin();
            for c in 0..3 {
                out[(c * h + y) * w + x] = base + tint[c] + texture + grain.sample(rng);
            }
        }
    }
    out
}

/// Thin background strokes painted in foreground class colours. They belong
/// to the background, so only negative evidence (absent classes) tells them
/// apart from objects of the same colour.
fn draw_clutter(pixels: &mut [f64], h: usize, w: usize, foreground: usize, rng: &mut ChaCha8Rng) {
    const DIRS: [(i64, i64); 8] = [(0, 1), (1, 0), (1, 1), (1, -1), (0, -1), (-1, 0), (-1, -1), (-1, 1)];
    let n = h * w;
    let strokes = rng.random_range(CLUTTER_STROKES);
    for _ in 0..strokes {
        let class = rng.random_range(0..foreground);
        let palette = PALETTE[class % PALETTE.len()];
        let color: [f64; 3] = std::array::from_fn(|c| palette[c] + rng.random_range(-0.08..0.08));
        let (dy, dx) = DIRS[rng.random_range(0..DIRS.len())];
        let len = rng.random_range(4..=10u32);
        let (mut y, mut x) = (rng.random_range(0..h) as i64, rng.random_range(0..w) as i64);
        for _ in 0..len {
            if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                break;
            }
            let p = y as usize * w + x as usize;
            for (c, &col) in color.iter().enumerate() {
                pixels[c * n + p] = 0.1 * pixels[c * n + p] + 0.9 * col;
            }
            y += dy;
            x += dx;
        }
    }
}

/// Generate one scene; deterministic in `seed`.
pub fn generate_scene(seed: u64, config: &TrainConfig) -> Result<Scene> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let n = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut pixels = background(h, w, &mut rng);
    let foreground = config.num_classes - 1;
    let shapes = rng.random_range(1..=config.max_shapes);
    let mut classes: Vec<ClassId> = sample(&mut rng, foreground, shapes)
        .into_iter()
        .map(|i| (i + 1) as ClassId)
        .collect();
    classes.sort_unstable();

    draw_clutter(&mut pixels, h, w, foreground, &mut rng);

    let mut labels = vec![BACKGROUND; n];
    let mut occupied = vec![false; n];
    let grain = Normal::new(0.0, 0.03).expect("valid sigma");
    for &class in &classes {
        let kind = ShapeKind::for_class(class);
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let m = rasterize(kind, h, w, &mut rng);
            let margin = morph::dilate(&m, h, w);
            if m.iter().any(|&b| b) && !margin.iter().zip(&occupied).any(|(&a, &b)| a && b) {
                placed = Some(m);
                break;
            }
        }
        let m = placed.ok_or_else(|| {
            Error::SceneGeneration(format!(
                "could not place class {class} after {MAX_PLACEMENT_TRIES} tries"
            ))
        })?;

        let palette = PALETTE[(usize::from(class) - 1) % PALETTE.len()];
        let color: [f64; 3] = std::array::from_fn(|c| palette[c] + rng.random_range(-0.08..0.08));
        for p in (0..n).filter(|&p| m[p]) {
            labels[p] = class;
            occupied[p] = true;
            for (c, &col) in color.iter().enumerate() {
                pixels[c * n + p] = col + grain.sample(&mut rng);
            }
        }
    }
    pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    let true_mask = LabelMask::new(h, w, labels)?;
    let mut true_sizes = SizeConstraints::new();
    for &k in &classes {
        true_sizes.insert(k, true_mask.count(k) as f64)?;
    }
    let saliency = SyntheticSaliency {
        sigma: config.saliency_sigma,
        ..Default::default()
    }
    .generate(&true_mask, &classes, &mut rng)?;

    Ok(Scene {
        image: Image::new(h, w, pixels)?,
        true_mask,
        labels: classes,
        true_sizes,
        saliency,
    })
}

/// The scene list of one split. Each scene has its own derived seed, so
/// generation order does not matter.
pub fn generate_scenes(config: &TrainConfig, split: Split, exec: Execution) -> Result<Vec<Scene>> {
    let count = match split {
        Split::Train => config.train_scenes,
        Split::Val => config.val_scenes,
    };
    let seeds: Vec<u64> = (0..count as u64)
        .map(|i| mix_seed(config.seed, split.stream(), i))
        .collect();
    par::map_collect(seeds, exec, |s| generate_scene(s, config))
        .into_iter()
        .collect()
}

impl Scene {
    /// Sizes for every foreground class, zero for absent ones.
    pub fn oracle_constraints(&self, num_classes: usize) -> Result<SizeConstraints> {
        let present: BTreeMap<ClassId, f64> = self.true_sizes.iter().collect();
        SizeConstraints::for_foreground(num_classes, &present)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = TrainConfig::default();
        assert_eq!(generate_scene(7, &cfg).unwrap(), generate_scene(7, &cfg).unwrap());
        assert_ne!(
            generate_scene(7, &cfg).unwrap().image,
            generate_scene(8, &cfg).unwrap().image
        );
    }

    #[test]
    fn scene_invariants() {
        let cfg = TrainConfig::default();
        for seed in 0..100 {
            let s = generate_scene(seed, &cfg).unwrap();
            let mut present: Vec<ClassId> = s.true_mask.labels().iter().copied().filter(|&k| k != 0).collect();
            present.sort_unstable();
            present.dedup();
            assert_eq!(present, s.labels);
            for k in 1..cfg.num_classes as ClassId {
                let expected = s.true_mask.count(k) as f64;
                assert_eq!(s.true_sizes.get(k).unwrap_or(0.0), expected);
            }
            let fg = s.true_mask.labels().iter().filter(|&&k| k != 0).count() as f64;
            assert_eq!(s.true_sizes.total(), fg);
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(s.saliency.classes(), s.labels.as_slice());
        }
    }

    #[test]
    fn max_one_shape() {
        let cfg = TrainConfig {
            max_shapes: 1,
            ..Default::default()
        };
        for seed in 0..30 {
            assert_eq!(generate_scene(seed, &cfg).unwrap().labels.len(), 1);
        }
    }

    #[test]
    fn parallel_generation_matches_sequential() {
        let cfg = TrainConfig {
            train_scenes: 12,
            ..Default::default()
        };
        let a = generate_scenes(&cfg, Split::Train, Execution::Sequential).unwrap();
        let b = generate_scenes(&cfg, Split::Train, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
