use crate::error::{Error, Result};
use crate::ClassId;

/// A `C x H x W` stack of per-class maps, channel-major.
///
/// Channel `c` holds the map for class `class_ids[c]`. The same type carries
/// logits, probabilities, projected maps, and saliency.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    class_ids: Vec<ClassId>,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ChannelStack {
    pub fn new(class_ids: Vec<ClassId>, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if class_ids.is_empty() || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "stack dimensions must be positive (C={}, H={height}, W={width})",
                class_ids.len()
            )));
        }
        let mut seen = class_ids.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != class_ids.len() {
            return Err(Error::Shape("duplicate class id in stack".into()));
        }
        let expected = class_ids.len() * height * width;
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
            class_ids,
            height,
            width,
            data,
        })
    }

    pub fn zeros(class_ids: Vec<ClassId>, height: usize, width: usize) -> Result<Self> {
        let n = class_ids.len() * height * width;
        Self::new(class_ids, height, width, vec![0.0; n])
    }

    /// Stack with class ids `0..channels`.
    pub fn from_dense(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let ids = (0..channels)
            .map(|c| ClassId::try_from(c).map_err(|_| Error::Shape("too many channels".into())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ids, height, width, data)
    }

    pub(crate) fn from_parts_unchecked(class_ids: Vec<ClassId>, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), class_ids.len() * height * width);
        Self {
            class_ids,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.class_ids.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel_index(&self, class: ClassId) -> Option<usize> {
        self.class_ids.iter().position(|&k| k == class)
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &ChannelStack) -> bool {
        self.class_ids == other.class_ids && self.height == other.height && self.width == other.width
    }

    /// Sum of every channel.
    pub fn channel_sums(&self) -> Vec<f64> {
        (0..self.channels())
            .map(|c| crate::projection::compensated_sum(self.channel(c)))
            .collect()
    }
}

/// An `H x W` grid of class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<ClassId>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: labels.len(),
            });
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, class: ClassId) -> Self {
        Self {
            height,
            width,
            labels: vec![class; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [ClassId] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> ClassId {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, class: ClassId) -> usize {
        self.labels.iter().filter(|&&k| k == class).count()
    }
}
