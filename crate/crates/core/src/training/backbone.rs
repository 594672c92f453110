//! Differentiable backbones: the trait the trainer drives and a small
//! reference convolutional network.

use std::ops::Range;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hloss::{Logits3, Prob3};
use crate::pipelines::Classifier;
use crate::scalar::Scalar;

/// Channel-major image, values scaled to [-0.5, 0.5].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ImageTensor<T> {
    pub fn from_rgb(image: &RgbImage) -> Result<Self> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::input("empty image"));
        }
        let plane = w * h;
        let mut data = vec![T::zero(); 3 * plane];
        let scale = T::lit(1.0 / 255.0);
        let half = T::lit(0.5);
        for (i, p) in image.pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + i] = T::lit(p.0[c] as f64) * scale - half;
            }
        }
        Ok(ImageTensor {
            width: w,
            height: h,
            data,
        })
    }
}

/// What the trainer needs from a model. Forward passes must be deterministic
/// and free of interior mutation so samples can be processed concurrently.
pub trait Backbone<T: Scalar>: Send + Sync {
    fn forward(&self, x: &ImageTensor<T>) -> Result<Logits3<T>>;

    /// Runs a forward pass, asks `dloss` for the gradient with respect to the
    /// raw logits and returns them together with the parameter gradient (same
    /// layout as [`Backbone::params`]). The logits are not checked for
    /// finiteness; `dloss` decides.
    fn gradient(
        &self,
        x: &ImageTensor<T>,
        dloss: &dyn Fn(&[T; 3]) -> Result<[T; 3]>,
    ) -> Result<([T; 3], Vec<T>)>;

    fn params(&self) -> &[T];
    fn params_mut(&mut self) -> &mut [T];

    /// Parameters of the classification head; everything else is backbone.
    fn head_range(&self) -> Range<usize>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvNetConfig {
    pub filters: usize,
}

impl Default for ConvNetConfig {
    fn default() -> Self {
        ConvNetConfig { filters: 8 }
    }
}

impl ConvNetConfig {
    pub fn param_count(&self) -> usize {
        let f = self.filters;
        f * 27 + f + 3 * 2 * f + 3
    }
}

/// One 3x3 convolution (zero padding) with ReLU, global max and mean pooling
/// per filter, and a linear head to the three logits. Works on any image
/// size.
///
/// Parameter layout: conv weights `[f][c][ky][kx]`, conv biases `[f]`, head
/// weights `[k][2f]` (max features then mean features), head biases `[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet<T> {
    config: ConvNetConfig,
    params: Vec<T>,
}

struct Activations<T> {
    pre: Vec<T>,
    max_idx: Vec<usize>,
    features: Vec<T>,
    logits: [T; 3],
}

impl<T: Scalar> ConvNet<T> {
    /// He-uniform conv weights and a scaled-down uniform head, zero biases.
    pub fn new(config: ConvNetConfig, seed: u64) -> Result<Self> {
        if config.filters == 0 {
            return Err(Error::param("filters must be at least 1"));
        }
        let f = config.filters;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(config.param_count());
        let conv_lim = (6.0f64 / 27.0).sqrt();
        params.extend((0..f * 27).map(|_| T::lit(rng.random_range(-conv_lim..conv_lim))));
        params.extend((0..f).map(|_| T::zero()));
        let head_lim = 0.5 * (6.0 / (2.0 * f as f64)).sqrt();
        params.extend((0..6 * f).map(|_| T::lit(rng.random_range(-head_lim..head_lim))));
        params.extend((0..3).map(|_| T::zero()));
        Ok(ConvNet { config, params })
    }

    pub fn from_params(config: ConvNetConfig, params: Vec<T>) -> Result<Self> {
        if config.filters == 0 {
            return Err(Error::param("filters must be at least 1"));
        }
        if params.len() != config.param_count() {
            return Err(Error::LengthMismatch {
                expected: config.param_count(),
                found: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::input("non-finite parameter"));
        }
        Ok(ConvNet { config, params })
    }

    pub fn config(&self) -> ConvNetConfig {
        self.config
    }

    fn conv_w(&self) -> &[T] {
        &self.params[..self.config.filters * 27]
    }

    fn conv_b(&self) -> &[T] {
        let f = self.config.filters;
        &self.params[f * 27..f * 28]
    }

    fn head_w(&self) -> &[T] {
        let f = self.config.filters;
        &self.params[f * 28..f * 34]
    }

    fn head_b(&self) -> &[T] {
        let f = self.config.filters;
        &self.params[f * 34..]
    }

    fn activations(&self, x: &ImageTensor<T>) -> Result<Activations<T>> {
        let (w, h) = (x.width, x.height);
        let plane = w * h;
        if plane == 0 || x.data.len() != 3 * plane {
            return Err(Error::input(format!(
                "tensor of {} values does not match {w}x{h}x3",
                x.data.len()
            )));
        }
        let f = self.config.filters;
        let (cw, cb) = (self.conv_w(), self.conv_b());
        let mut pre = vec![T::zero(); f * plane];
        for fi in 0..f {
            let out = &mut pre[fi * plane..(fi + 1) * plane];
            out.iter_mut().for_each(|v| *v = cb[fi]);
            for c in 0..3 {
                let src = &x.data[c * plane..(c + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = cw[((fi * 3 + c) * 3 + ky) * 3 + kx];
                        // output (y, x) reads input (y + ky - 1, x + kx - 1)
                        let y_lo = 1usize.saturating_sub(ky);
                        let y_hi = (h + 1 - ky).min(h);
                        let x_lo = 1usize.saturating_sub(kx);
                        let x_hi = (w + 1 - kx).min(w);
                        for y in y_lo..y_hi {
                            let sy = y + ky - 1;
                            let orow = &mut out[y * w..(y + 1) * w];
                            let irow = &src[sy * w..(sy + 1) * w];
                            for xx in x_lo..x_hi {
                                orow[xx] = orow[xx] + wv * irow[xx + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        let inv_n = T::one() / T::lit(plane as f64);
        let mut features = vec![T::zero(); 2 * f];
        let mut max_idx = vec![0usize; f];
        for fi in 0..f {
            let a = &pre[fi * plane..(fi + 1) * plane];
            let mut best = T::zero();
            let mut best_i = 0;
            let mut sum = T::zero();
            for (i, v) in a.iter().enumerate() {
                let r = v.max(T::zero());
                if i == 0 || r > best {
                    best = r;
                    best_i = i;
                }
                sum = sum + r;
            }
            features[fi] = best;
            max_idx[fi] = best_i;
            features[f + fi] = sum * inv_n;
        }
        let (hw, hb) = (self.head_w(), self.head_b());
        let mut logits = [T::zero(); 3];
        for (k, l) in logits.iter_mut().enumerate() {
            *l = hb[k]
                + hw[k * 2 * f..(k + 1) * 2 * f]
                    .iter()
                    .zip(&features)
                    .fold(T::zero(), |a, (w, x)| a + *w * *x);
        }
        Ok(Activations {
            pre,
            max_idx,
            features,
            logits,
        })
    }
}

impl<T: Scalar> Backbone<T> for ConvNet<T> {
    fn forward(&self, x: &ImageTensor<T>) -> Result<Logits3<T>> {
        Logits3::from_array(self.activations(x)?.logits)
    }

    fn gradient(
        &self,
        x: &ImageTensor<T>,
        dloss: &dyn Fn(&[T; 3]) -> Result<[T; 3]>,
    ) -> Result<([T; 3], Vec<T>)> {
        let act = self.activations(x)?;
        let g = dloss(&act.logits)?;
        let f = self.config.filters;
        let (w, h) = (x.width, x.height);
        let plane = w * h;
        let mut grad = vec![T::zero(); self.params.len()];

        let hw = self.head_w();
        let mut dfeat = vec![T::zero(); 2 * f];
        {
            let (_, rest) = grad.split_at_mut(f * 28);
            let (dhw, dhb) = rest.split_at_mut(6 * f);
            for k in 0..3 {
                dhb[k] = g[k];
                for j in 0..2 * f {
                    dhw[k * 2 * f + j] = g[k] * act.features[j];
                    dfeat[j] = dfeat[j] + g[k] * hw[k * 2 * f + j];
                }
            }
        }

        let inv_n = T::one() / T::lit(plane as f64);
        let (dcw, rest) = grad.split_at_mut(f * 27);
        let dcb = &mut rest[..f];
        let mut dpre = vec![T::zero(); plane];
        for fi in 0..f {
            let a = &act.pre[fi * plane..(fi + 1) * plane];
            let dmean = dfeat[f + fi] * inv_n;
            let mut bias = T::zero();
            for (i, d) in dpre.iter_mut().enumerate() {
                let mut v = if a[i] > T::zero() { dmean } else { T::zero() };
                if i == act.max_idx[fi] && a[i] > T::zero() {
                    v = v + dfeat[fi];
                }
                *d = v;
                bias = bias + v;
            }
            dcb[fi] = bias;
            for c in 0..3 {
                let src = &x.data[c * plane..(c + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let y_lo = 1usize.saturating_sub(ky);
                        let y_hi = (h + 1 - ky).min(h);
                        let x_lo = 1usize.saturating_sub(kx);
                        let x_hi = (w + 1 - kx).min(w);
                        let mut acc = T::zero();
                        for y in y_lo..y_hi {
                            let sy = y + ky - 1;
                            let drow = &dpre[y * w..(y + 1) * w];
                            let irow = &src[sy * w..(sy + 1) * w];
                            for xx in x_lo..x_hi {
                                acc = acc + drow[xx] * irow[xx + kx - 1];
                            }
                        }
                        dcw[((fi * 3 + c) * 3 + ky) * 3 + kx] = acc;
                    }
                }
            }
        }
        Ok((act.logits, grad))
    }

    fn params(&self) -> &[T] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn head_range(&self) -> Range<usize> {
        self.config.filters * 28..self.params.len()
    }
}

/// Adapts a backbone to the pipelines' classifier interface.
pub struct BackboneClassifier<B> {
    pub backbone: B,
}

impl<T: Scalar, B: Backbone<T>> Classifier<T> for BackboneClassifier<B> {
    fn classify(&self, image: &RgbImage) -> Result<Prob3<T>> {
        let x = ImageTensor::from_rgb(image)?;
        Ok(self.backbone.forward(&x)?.softmax())
    }

    fn concurrent(&self) -> bool {
        true
    }
}
