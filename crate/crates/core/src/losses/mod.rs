//! The five reconstruction losses and their weighted total.
//!
//! | component | domain  | value                                   |
//! |-----------|---------|-----------------------------------------|
//! | fidelity  | k-space | `||k_pred - k_full||^2`                 |
//! | ssim      | image   | `1 - SSIM(img, ref)`                    |
//! | eagle     | image   | high-passed variance-spectrum L1        |
//! | vgg       | image   | `sum_l ||phi_l(img) - phi_l(ref)||^2`   |
//! | reg       | k-space | `||k||_1 + beta ||k||_2`                |
//!
//! Norms are divided by their element count unless
//! [`Normalization::Sum`] is selected. Every component comes with an
//! analytic gradient; complex gradients are packed as `d/dre + i d/dim`.

mod eagle;
pub mod gradcheck;
mod kspace;
mod perceptual;
mod ssim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{apply_mask, SamplingMask};
use crate::transforms::{
    fft2c_coils, ifft2c_coils, rss_backward, rss_combine, sense_combine, sense_expand, CoilStack, ComplexImage,
    RealImage, SensitivityMaps,
};

pub(crate) use eagle::eagle_detailed;
pub use eagle::{eagle_loss, EagleOutput, EagleSpec, NEAR_ZERO_BIN};
pub use kspace::{fidelity_loss, reg_loss, L1_ZERO};
pub use perceptual::{perceptual_loss, Activation, ConvLayer, ConvStack, FeatureExtractor, FeatureMap};
pub use ssim::{ssim, ssim_loss, DynamicRange, SsimConfig};

/// Whether norms are averaged over elements or summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Mean,
    Sum,
}

impl Normalization {
    pub(crate) fn factor(self, count: usize) -> f64 {
        match self {
            Normalization::Mean if count > 0 => 1.0 / count as f64,
            _ => 1.0,
        }
    }
}

/// A loss value with an optional gradient of the same shape as the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated<G> {
    pub value: f64,
    pub grad: Option<G>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub alpha5: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 0.05,
            alpha4: 0.1,
            alpha5: 0.01,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            alpha1: 0.0,
            alpha2: 0.0,
            alpha3: 0.0,
            alpha4: 0.0,
            alpha5: 0.0,
            beta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha1,
            self.alpha2,
            self.alpha3,
            self.alpha4,
            self.alpha5,
            self.beta,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossConfig {
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub eagle: EagleSpec,
    #[serde(default)]
    pub ssim: SsimConfig,
    #[serde(default)]
    pub normalization: Normalization,
}

/// Gradient of the weighted total with respect to the chosen variable.
#[derive(Debug, Clone, PartialEq)]
pub enum LossGradient {
    KSpace(CoilStack),
    Image(ComplexImage),
}

/// Per-component values and the weighted total. A component is `None` when
/// its inputs were not available (no reference image, no extractor).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    pub fidelity: Option<f64>,
    pub ssim: Option<f64>,
    pub eagle: Option<f64>,
    pub vgg: Option<f64>,
    pub reg: Option<f64>,
    pub total: f64,
    pub grad: Option<LossGradient>,
}

impl LossReport {
    /// `sum_i alpha_i * component_i` over the components present.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        [
            (w.alpha1, self.fidelity),
            (w.alpha2, self.ssim),
            (w.alpha3, self.eagle),
            (w.alpha4, self.vgg),
            (w.alpha5, self.reg),
        ]
        .iter()
        .filter_map(|(a, v)| v.map(|v| a * v))
        .sum()
    }
}

struct ImageTerms {
    ssim: f64,
    eagle: f64,
    vgg: Option<f64>,
    grad: Option<RealImage>,
}

fn add_scaled(acc: &mut Option<RealImage>, g: Option<RealImage>, weight: f64) {
    if let (Some(acc), Some(g)) = (acc.as_mut(), g) {
        for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
            *a += weight * v;
        }
    }
}

fn image_terms(
    img: &RealImage,
    reference: &RealImage,
    cfg: &LossConfig,
    extractor: Option<&dyn FeatureExtractor>,
    with_grad: bool,
) -> Result<ImageTerms> {
    let w = &cfg.weights;
    let mut grad = with_grad.then(|| RealImage::zeros(img.height(), img.width()));
    let s = ssim_loss(img, reference, &cfg.ssim, with_grad && w.alpha2 > 0.0)?;
    add_scaled(&mut grad, s.grad, w.alpha2);
    let e = eagle_loss(
        img,
        reference,
        &cfg.eagle,
        cfg.normalization,
        with_grad && w.alpha3 > 0.0,
    )?;
    add_scaled(&mut grad, e.grad, w.alpha3);
    let p = perceptual_loss(
        img,
        reference,
        extractor,
        cfg.normalization,
        with_grad && w.alpha4 > 0.0,
    )?;
    let vgg = p.as_ref().map(|p| p.value);
    add_scaled(&mut grad, p.and_then(|p| p.grad), w.alpha4);
    Ok(ImageTerms {
        ssim: s.value,
        eagle: e.value,
        vgg,
        grad,
    })
}

/// Evaluates every component on explicit inputs, without gradients.
pub fn total_loss(
    k_pred: &CoilStack,
    k_full: &CoilStack,
    img: &RealImage,
    reference: &RealImage,
    cfg: &LossConfig,
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<LossReport> {
    cfg.weights.validate()?;
    let fid = fidelity_loss(k_pred, k_full, cfg.normalization, false)?;
    let reg = reg_loss(k_pred, cfg.weights.beta, cfg.normalization, false)?;
    let terms = image_terms(img, reference, cfg, extractor, false)?;
    let mut report = LossReport {
        fidelity: Some(fid.value),
        ssim: Some(terms.ssim),
        eagle: Some(terms.eagle),
        vgg: terms.vgg,
        reg: Some(reg.value),
        total: 0.0,
        grad: None,
    };
    report.total = report.weighted_sum(&cfg.weights);
    Ok(report)
}

/// The weighted objective against fixed targets, differentiable with
/// respect to either k-space or a complex image.
///
/// The fidelity target is `k_target`; when `sampled` is set, only the
/// entries it samples are compared (blind reconstruction). Image-domain
/// components are active only when `reference` is set.
pub struct Objective<'a> {
    pub cfg: &'a LossConfig,
    pub k_target: &'a CoilStack,
    pub sampled: Option<&'a SamplingMask>,
    pub reference: Option<&'a RealImage>,
    pub extractor: Option<&'a dyn FeatureExtractor>,
}

struct Evaluation {
    report: LossReport,
    grad_k: Option<CoilStack>,
    grad_img: Option<RealImage>,
}

impl<'a> Objective<'a> {
    fn evaluate(&self, k_pred: &CoilStack, img: &RealImage, with_grad: bool) -> Result<Evaluation> {
        let w = &self.cfg.weights;
        w.validate()?;
        let norm = self.cfg.normalization;

        let masked;
        let compared = match self.sampled {
            Some(mask) => {
                masked = apply_mask(k_pred, mask)?;
                &masked
            }
            None => k_pred,
        };
        let fid = fidelity_loss(compared, self.k_target, norm, with_grad && w.alpha1 > 0.0)?;
        let reg = reg_loss(k_pred, w.beta, norm, with_grad && w.alpha5 > 0.0)?;

        let mut grad_k = with_grad.then(|| CoilStack::zeros(k_pred.coils(), k_pred.height(), k_pred.width()));
        if let Some(acc) = grad_k.as_mut() {
            let fid_grad = match (fid.grad, self.sampled) {
                (Some(g), Some(mask)) => Some(apply_mask(&g, mask)?),
                (g, _) => g,
            };
            for (g, weight) in [(fid_grad, w.alpha1), (reg.grad, w.alpha5)] {
                if let Some(g) = g {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v * weight;
                    }
                }
            }
        }

        let mut report = LossReport {
            fidelity: Some(fid.value),
            reg: Some(reg.value),
            ..Default::default()
        };
        let mut grad_img = None;
        if let Some(reference) = self.reference {
            let terms = image_terms(img, reference, self.cfg, self.extractor, with_grad)?;
            report.ssim = Some(terms.ssim);
            report.eagle = Some(terms.eagle);
            report.vgg = terms.vgg;
            grad_img = terms.grad;
        }
        report.total = report.weighted_sum(w);
        Ok(Evaluation {
            report,
            grad_k,
            grad_img,
        })
    }

    /// Differentiates with respect to `k_pred`; the image is
    /// `rss(ifft2c(k_pred))`.
    pub fn eval_kspace(&self, k_pred: &CoilStack, with_grad: bool) -> Result<LossReport> {
        let coil_imgs = ifft2c_coils(k_pred)?;
        let img = rss_combine(&coil_imgs);
        let mut ev = self.evaluate(k_pred, &img, with_grad)?;
        if let Some(mut grad_k) = ev.grad_k.take() {
            if let Some(g_img) = ev.grad_img.take() {
                let g_coils = rss_backward(&coil_imgs, &img, &g_img);
                let pushed = fft2c_coils(&g_coils)?;
                for (a, v) in grad_k.data_mut().iter_mut().zip(pushed.data()) {
                    *a += v;
                }
            }
            ev.report.grad = Some(LossGradient::KSpace(grad_k));
        }
        Ok(ev.report)
    }

    /// Differentiates with respect to a complex image `x` under the model
    /// `k_pred = fft2c(S x)`, `img = rss(S x)`.
    pub fn eval_image(&self, x: &ComplexImage, maps: &SensitivityMaps, with_grad: bool) -> Result<LossReport> {
        let coil_imgs = sense_expand(x, maps)?;
        let k_pred = fft2c_coils(&coil_imgs)?;
        let img = rss_combine(&coil_imgs);
        let mut ev = self.evaluate(&k_pred, &img, with_grad)?;
        if let Some(grad_k) = ev.grad_k.take() {
            let mut g_coils = ifft2c_coils(&grad_k)?;
            if let Some(g_img) = ev.grad_img.take() {
                let extra = rss_backward(&coil_imgs, &img, &g_img);
                for (a, v) in g_coils.data_mut().iter_mut().zip(extra.data()) {
                    *a += v;
                }
            }
            ev.report.grad = Some(LossGradient::Image(sense_combine(&g_coils, maps)?));
        }
        Ok(ev.report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(c: usize, h: usize, w: usize, seed: u64) -> CoilStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = (0..c * h * w)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        CoilStack::new(c, h, w, d).unwrap()
    }

    fn random_image(h: usize, w: usize, seed: u64) -> RealImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealImage::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn perfect_reconstruction_leaves_only_regularizer() {
        let k = random_stack(2, 16, 16, 1);
        let img = rss_combine(&ifft2c_coils(&k).unwrap());
        let cfg = LossConfig::default();
        let stack = ConvStack::reference(0);
        let r = total_loss(&k, &k, &img, &img, &cfg, Some(&stack)).unwrap();
        let reg = reg_loss(&k, 1.0, Normalization::Mean, false).unwrap().value;
        assert!((r.total - 0.01 * reg).abs() < 1e-12 * r.total);
        assert_eq!(r.fidelity, Some(0.0));
        assert_eq!(r.vgg, Some(0.0));
    }

    #[test]
    fn zero_weights_give_zero_total() {
        let k = random_stack(1, 12, 12, 2);
        let j = random_stack(1, 12, 12, 3);
        let cfg = LossConfig {
            weights: LossWeights::zero(),
            ..Default::default()
        };
        let r = total_loss(&k, &j, &random_image(12, 12, 4), &random_image(12, 12, 5), &cfg, None).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(r.vgg.is_none());
        assert!(r.eagle.unwrap() > 0.0);
    }

    #[test]
    fn total_is_weighted_sum() {
        let k = random_stack(2, 14, 14, 6);
        let j = random_stack(2, 14, 14, 7);
        let cfg = LossConfig::default();
        let stack = ConvStack::reference(1);
        let r = total_loss(
            &k,
            &j,
            &random_image(14, 14, 8),
            &random_image(14, 14, 9),
            &cfg,
            Some(&stack),
        )
        .unwrap();
        let w = cfg.weights;
        let manual = w.alpha1 * r.fidelity.unwrap()
            + w.alpha2 * r.ssim.unwrap()
            + w.alpha3 * r.eagle.unwrap()
            + w.alpha4 * r.vgg.unwrap()
            + w.alpha5 * r.reg.unwrap();
        assert!((r.total - manual).abs() <= 1e-12 * manual.abs());
    }

    #[test]
    fn negative_weight_rejected() {
        let cfg = LossConfig {
            weights: LossWeights {
                alpha3: -0.1,
                ..Default::default()
            },
            ..Default::default()
        };
        let k = random_stack(1, 12, 12, 1);
        let img = random_image(12, 12, 1);
        assert!(total_loss(&k, &k, &img, &img, &cfg, None).is_err());
    }
}
