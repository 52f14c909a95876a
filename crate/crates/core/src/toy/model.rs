use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::ChannelStack;

pub const IMAGE_CHANNELS: usize = 3;

/// Subtracted from every pixel before the first convolution.
const INPUT_CENTER: f64 = 0.5;

/// An `H x W` RGB image stored channel-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let expected = IMAGE_CHANNELS * height * width;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { height, width, data })
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
}

/// Weights and biases of the three layers. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `[F][3][3][3]`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `[F][F][3][3]`
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// `[C][F]`
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl Params {
    fn zeros(features: usize, classes: usize) -> Self {
        Self {
            w1: vec![0.0; features * IMAGE_CHANNELS * 9],
            b1: vec![0.0; features],
            w2: vec![0.0; features * features * 9],
            b2: vec![0.0; features],
            w3: vec![0.0; classes * features],
            b3: vec![0.0; classes],
        }
    }

    fn tensors(&self) -> [&Vec<f64>; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

pub type Gradients = Params;

/// conv3x3 (3→F) → ReLU → conv3x3 (F→F) → ReLU → conv1x1 (F→C), all with
/// zero padding so the output has the input's spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    features: usize,
    classes: usize,
    params: Params,
}

/// Activations kept from the forward pass for backprop.
#[derive(Debug, Clone)]
pub struct Cache {
    height: usize,
    width: usize,
    input: Vec<f64>,
    hidden1: Vec<f64>,
    hidden2: Vec<f64>,
}

fn conv3x3_forward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let n = h * w;
    let mut out = vec![0.0; cout * n];
    for o in 0..cout {
        let dst = &mut out[o * n..(o + 1) * n];
        dst.fill(bias[o]);
        for i in 0..cin {
            let src = &input[i * n..(i + 1) * n];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[((o * cin + i) * 3 + ky) * 3 + kx];
                    let (y0, y1, x0, x1) = valid_range(h, w, ky, kx);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let drow = &mut dst[y * w + x0..y * w + x1];
                        let srow = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; also the input gradient when asked.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    grad_out: &[f64],
    cout: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let n = h * w;
    for o in 0..cout {
        let go = &grad_out[o * n..(o + 1) * n];
        grad_b[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let src = &input[i * n..(i + 1) * n];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                    let wv = weight[widx];
                    let (y0, y1, x0, x1) = valid_range(h, w, ky, kx);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let grow = &go[y * w + x0..y * w + x1];
                        let srow = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        acc += grow.iter().zip(srow).map(|(g, s)| g * s).sum::<f64>();
                    }
                    grad_w[widx] += acc;
                    if let Some(gi) = grad_in.as_deref_mut() {
                        let gi = &mut gi[i * n..(i + 1) * n];
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let grow = &go[y * w + x0..y * w + x1];
                            let irow = &mut gi[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            for (d, g) in irow.iter_mut().zip(grow) {
                                *d += wv * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output rows/cols `[y0, y1) x [x0, x1)` whose tap `(ky, kx)` lands inside the input.
#[inline]
fn valid_range(h: usize, w: usize, ky: usize, kx: usize) -> (usize, usize, usize, usize) {
    let y0 = usize::from(ky == 0);
    let y1 = if ky == 2 { h - 1 } else { h };
    let x0 = usize::from(kx == 0);
    let x1 = if kx == 2 { w - 1 } else { w };
    (y0, y1, x0, x1)
}

impl ToyModel {
    /// Uniform initialization in `±sqrt(3 / fan_in)` with zero biases.
    pub fn new<R: Rng + ?Sized>(features: usize, classes: usize, rng: &mut R) -> Self {
        let mut params = Params::zeros(features, classes);
        let fans = [IMAGE_CHANNELS * 9, features * 9, features];
        for (t, fan_in) in [&mut params.w1, &mut params.w2, &mut params.w3].into_iter().zip(fans) {
            let bound = (3.0 / fan_in as f64).sqrt();
            t.iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
        }
        Self {
            features,
            classes,
            params,
        }
    }

    pub fn zeros(features: usize, classes: usize) -> Self {
        Self {
            features,
            classes,
            params: Params::zeros(features, classes),
        }
    }

    pub fn from_params(features: usize, classes: usize, params: Params) -> Result<Self> {
        let expected = Params::zeros(features, classes);
        for (a, b) in expected.tensors().iter().zip(params.tensors()) {
            if a.len() != b.len() {
                return Err(Error::LengthMismatch {
                    expected: a.len(),
                    actual: b.len(),
                });
            }
        }
        Ok(Self {
            features,
            classes,
            params,
        })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.flatten()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut off = 0;
        for t in self.params.tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }

    pub fn forward(&self, image: &Image) -> Result<ChannelStack> {
        self.forward_cached(image).map(|(logits, _)| logits)
    }

    pub fn forward_cached(&self, image: &Image) -> Result<(ChannelStack, Cache)> {
        if !self.params.is_finite() {
            return Err(Error::Diverged("non-finite model parameters".into()));
        }
        let (h, w) = (image.height, image.width);
        let f = self.features;
        let p = &self.params;
        let input: Vec<f64> = image.data.iter().map(|v| v - INPUT_CENTER).collect();
        let mut hidden1 = conv3x3_forward(&input, IMAGE_CHANNELS, h, w, &p.w1, &p.b1, f);
        hidden1.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut hidden2 = conv3x3_forward(&hidden1, f, h, w, &p.w2, &p.b2, f);
        hidden2.iter_mut().for_each(|v| *v = v.max(0.0));

        let n = h * w;
        let mut logits = vec![0.0; self.classes * n];
        for c in 0..self.classes {
            let dst = &mut logits[c * n..(c + 1) * n];
            dst.fill(p.b3[c]);
            for j in 0..f {
                let wv = p.w3[c * f + j];
                for (d, s) in dst.iter_mut().zip(&hidden2[j * n..(j + 1) * n]) {
                    *d += wv * s;
                }
            }
        }
        let logits = ChannelStack::from_dense(self.classes, h, w, logits)?;
        Ok((
            logits,
            Cache {
                height: h,
                width: w,
                input,
                hidden1,
                hidden2,
            },
        ))
    }

    /// Backprop `grad_logits` (dL/dlogits) to parameter gradients.
    pub fn backward(&self, cache: &Cache, grad_logits: &ChannelStack) -> Result<Gradients> {
        let (h, w) = (cache.height, cache.width);
        if grad_logits.height() != h || grad_logits.width() != w || grad_logits.channels() != self.classes {
            return Err(Error::Shape("gradient does not match the model output".into()));
        }
        let n = h * w;
        let f = self.features;
        let p = &self.params;
        let gl = grad_logits.data();
        let mut g = Params::zeros(f, self.classes);

        let mut grad_h2 = vec![0.0; f * n];
        for c in 0..self.classes {
            let go = &gl[c * n..(c + 1) * n];
            g.b3[c] = go.iter().sum();
            for j in 0..f {
                let h2 = &cache.hidden2[j * n..(j + 1) * n];
                g.w3[c * f + j] = go.iter().zip(h2).map(|(a, b)| a * b).sum();
                let wv = p.w3[c * f + j];
                for (d, &gv) in grad_h2[j * n..(j + 1) * n].iter_mut().zip(go) {
                    *d += wv * gv;
                }
            }
        }
        mask_relu(&mut grad_h2, &cache.hidden2);

        let mut grad_h1 = vec![0.0; f * n];
        conv3x3_backward(
            &cache.hidden1,
            f,
            h,
            w,
            &p.w2,
            &grad_h2,
            f,
            &mut g.w2,
            &mut g.b2,
            Some(&mut grad_h1),
        );
        mask_relu(&mut grad_h1, &cache.hidden1);

        conv3x3_backward(
            &cache.input,
            IMAGE_CHANNELS,
            h,
            w,
            &p.w1,
            &grad_h1,
            f,
            &mut g.w1,
            &mut g.b1,
            None,
        );
        Ok(g)
    }

    /// Plain SGD: `params -= lr * grads`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (t, g) in self.params.tensors_mut().into_iter().zip(grads.tensors()) {
            for (v, d) in t.iter_mut().zip(g.iter()) {
                *v -= lr * d;
            }
        }
    }
}

fn mask_relu(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}
