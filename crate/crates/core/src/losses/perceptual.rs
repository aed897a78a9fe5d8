//! Feature-space loss over a stack of 3x3 convolution layers.
//!
//! No pretrained weights are shipped. [`ConvStack::reference`] builds a
//! fixed, seeded random extractor; any other stack can be supplied through
//! [`ConvStack::new`] or by implementing [`FeatureExtractor`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::transforms::RealImage;

use super::{Evaluated, Normalization};

/// A `channels x height x width` activation volume.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }
}

pub trait FeatureExtractor: Send + Sync {
    /// Activations after every layer, in order.
    fn features(&self, img: &RealImage) -> Result<Vec<FeatureMap>>;

    /// Given `dL/dfeatures[l]` for every layer, returns `dL/dimg`.
    fn backward(&self, img: &RealImage, upstream: &[FeatureMap]) -> Result<RealImage>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

/// 3x3 convolution with zero "same" padding, followed by an activation.
/// Kernel layout is `[out][in][3][3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl ConvLayer {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid("convolution layer needs at least one channel"));
        }
        if kernel.len() != out_channels * in_channels * 9 || bias.len() != out_channels {
            return Err(Error::invalid(
                "convolution parameter sizes do not match channel counts",
            ));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            bias,
            activation,
        })
    }

    #[inline]
    fn weight(&self, o: usize, i: usize, di: usize, dj: usize) -> f64 {
        self.kernel[((o * self.in_channels + i) * 3 + di) * 3 + dj]
    }

    fn forward(&self, input: &FeatureMap) -> FeatureMap {
        let (h, w) = (input.height, input.width);
        let mut out = FeatureMap::zeros(self.out_channels, h, w);
        for o in 0..self.out_channels {
            for r in 0..h {
                for c in 0..w {
                    let mut acc = self.bias[o];
                    for i in 0..self.in_channels {
                        let plane = &input.data[i * h * w..(i + 1) * h * w];
                        for di in 0..3 {
                            let rr = r as isize + di as isize - 1;
                            if rr < 0 || rr >= h as isize {
                                continue;
                            }
                            for dj in 0..3 {
                                let cc = c as isize + dj as isize - 1;
                                if cc < 0 || cc >= w as isize {
                                    continue;
                                }
                                acc += self.weight(o, i, di, dj) * plane[rr as usize * w + cc as usize];
                            }
                        }
                    }
                    out.data[(o * h + r) * w + c] = match self.activation {
                        Activation::Identity => acc,
                        Activation::Tanh => acc.tanh(),
                    };
                }
            }
        }
        out
    }

    /// Gradient with respect to the layer input, given the layer output and
    /// the gradient with respect to that output.
    fn backward(&self, output: &FeatureMap, d_out: &FeatureMap) -> FeatureMap {
        let (h, w) = (output.height, output.width);
        let mut d_in = FeatureMap::zeros(self.in_channels, h, w);
        for o in 0..self.out_channels {
            for r in 0..h {
                for c in 0..w {
                    let idx = (o * h + r) * w + c;
                    let d_pre = match self.activation {
                        Activation::Identity => d_out.data[idx],
                        Activation::Tanh => d_out.data[idx] * (1.0 - output.data[idx] * output.data[idx]),
                    };
                    if d_pre == 0.0 {
                        continue;
                    }
                    for i in 0..self.in_channels {
                        for di in 0..3 {
                            let rr = r as isize + di as isize - 1;
                            if rr < 0 || rr >= h as isize {
                                continue;
                            }
                            for dj in 0..3 {
                                let cc = c as isize + dj as isize - 1;
                                if cc < 0 || cc >= w as isize {
                                    continue;
                                }
                                d_in.data[(i * h + rr as usize) * w + cc as usize] += self.weight(o, i, di, dj) * d_pre;
                            }
                        }
                    }
                }
            }
        }
        d_in
    }
}

/// Sequential convolution layers; every layer's activation is a feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    layers: Vec<ConvLayer>,
}

impl ConvStack {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::invalid("feature extractor needs at least one layer"))?;
        if first.in_channels != 1 {
            return Err(Error::invalid("first layer must take a single input channel"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::invalid("consecutive layers disagree on channel count"));
            }
        }
        Ok(Self { layers })
    }

    /// Two tanh layers (1 -> 4 -> 8 channels) with weights drawn from
    /// `U(-1, 1) / sqrt(9 * in_channels)` and biases from `U(-0.1, 0.1)`.
    pub fn reference(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |cin: usize, cout: usize| {
            let bound = 1.0 / ((9 * cin) as f64).sqrt();
            let kernel = (0..cout * cin * 9).map(|_| rng.gen_range(-1.0..1.0) * bound).collect();
            let bias = (0..cout).map(|_| rng.gen_range(-0.1..0.1)).collect();
            ConvLayer::new(cin, cout, kernel, bias, Activation::Tanh).expect("consistent sizes")
        };
        let l1 = layer(1, 4);
        let l2 = layer(4, 8);
        Self { layers: vec![l1, l2] }
    }

    /// A single layer that returns its input unchanged.
    pub fn identity() -> Self {
        let mut kernel = vec![0.0; 9];
        kernel[4] = 1.0;
        Self {
            layers: vec![ConvLayer::new(1, 1, kernel, vec![0.0], Activation::Identity).expect("1x1x3x3")],
        }
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }
}

fn as_feature(img: &RealImage) -> FeatureMap {
    FeatureMap {
        channels: 1,
        height: img.height(),
        width: img.width(),
        data: img.data().to_vec(),
    }
}

impl FeatureExtractor for ConvStack {
    fn features(&self, img: &RealImage) -> Result<Vec<FeatureMap>> {
        let mut current = as_feature(img);
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            current = layer.forward(&current);
            out.push(current.clone());
        }
        Ok(out)
    }

    fn backward(&self, img: &RealImage, upstream: &[FeatureMap]) -> Result<RealImage> {
        if upstream.len() != self.layers.len() {
            return Err(Error::invalid("one upstream gradient per layer is required"));
        }
        let acts = self.features(img)?;
        let mut carry: Option<FeatureMap> = None;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let mut d_out = upstream[l].clone();
            if let Some(c) = carry.take() {
                for (a, b) in d_out.data.iter_mut().zip(&c.data) {
                    *a += b;
                }
            }
            carry = Some(layer.backward(&acts[l], &d_out));
        }
        let d_img = carry.expect("at least one layer");
        RealImage::new(img.height(), img.width(), d_img.data)
    }
}

/// `sum_l mean((phi_l(img) - phi_l(ref))^2)`. Returns `None` when no
/// extractor is supplied, which disables the component.
pub fn perceptual_loss(
    img: &RealImage,
    reference: &RealImage,
    extractor: Option<&dyn FeatureExtractor>,
    norm: Normalization,
    with_grad: bool,
) -> Result<Option<Evaluated<RealImage>>> {
    let Some(extractor) = extractor else {
        return Ok(None);
    };
    img.same_shape(reference, "perceptual_loss")?;
    let fa = extractor.features(img)?;
    let fb = extractor.features(reference)?;
    let mut value = 0.0;
    let mut upstream = Vec::with_capacity(fa.len());
    for (a, b) in fa.iter().zip(&fb) {
        let scale = norm.factor(a.data.len());
        let mut d = FeatureMap::zeros(a.channels, a.height, a.width);
        for ((g, x), y) in d.data.iter_mut().zip(&a.data).zip(&b.data) {
            let diff = x - y;
            value += scale * diff * diff;
            *g = 2.0 * scale * diff;
        }
        upstream.push(d);
    }
    let grad = if with_grad {
        Some(extractor.backward(img, &upstream)?)
    } else {
        None
    };
    Ok(Some(Evaluated { value, grad }))
}
