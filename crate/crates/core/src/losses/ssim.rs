//! Gaussian-window SSIM with its gradient with respect to the first image.
//!
//! Local statistics use an 11x11 Gaussian window (sigma 1.5) in "valid"
//! mode, so the SSIM map is `(h - 10) x (w - 10)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::RealImage;

use super::Evaluated;

/// Source of the dynamic range `L` in `C1 = (K1 L)^2`, `C2 = (K2 L)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DynamicRange {
    /// `max(reference)`.
    #[default]
    FromReference,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    #[serde(default)]
    pub range: DynamicRange,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: DynamicRange::FromReference,
        }
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable valid-mode correlation.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = k.iter().enumerate().map(|(j, kv)| kv * x[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = k.iter().enumerate().map(|(i, kv)| kv * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`].
fn filter_valid_adjoint(y: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for r in 0..oh {
        for c in 0..ow {
            let v = y[r * ow + c];
            for (i, kv) in k.iter().enumerate() {
                rows[(r + i) * ow + c] += kv * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..ow {
            let v = rows[r * ow + c];
            for (j, kv) in k.iter().enumerate() {
                out[r * w + c + j] += kv * v;
            }
        }
    }
    out
}

impl SsimConfig {
    fn dynamic_range(&self, reference: &RealImage) -> Result<f64> {
        let l = match self.range {
            DynamicRange::FromReference => reference.max(),
            DynamicRange::Fixed(l) => l,
        };
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::invalid(format!(
                "SSIM dynamic range must be positive, got {l} (all-zero reference?)"
            )));
        }
        Ok(l)
    }
}

/// Mean SSIM and, optionally, its gradient with respect to `img`.
pub(crate) fn ssim_with_grad(
    img: &RealImage,
    reference: &RealImage,
    cfg: &SsimConfig,
    with_grad: bool,
) -> Result<Evaluated<RealImage>> {
    img.same_shape(reference, "ssim")?;
    let (h, w) = img.shape();
    if h < cfg.window || w < cfg.window {
        return Err(Error::invalid(format!(
            "image {h}x{w} is smaller than the {0}x{0} SSIM window",
            cfg.window
        )));
    }
    let l = cfg.dynamic_range(reference)?;
    let c1 = (cfg.k1 * l).powi(2);
    let c2 = (cfg.k2 * l).powi(2);
    let k = gaussian_kernel(cfg.window, cfg.sigma);

    let x = img.data();
    let y = reference.data();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();

    let mx = filter_valid(x, h, w, &k);
    let my = filter_valid(y, h, w, &k);
    let exx = filter_valid(&xx, h, w, &k);
    let eyy = filter_valid(&yy, h, w, &k);
    let exy = filter_valid(&xy, h, w, &k);

    let m = mx.len();
    let mut total = 0.0;
    let (mut d1, mut d2, mut d3) = if with_grad {
        (vec![0.0; m], vec![0.0; m], vec![0.0; m])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for q in 0..m {
        let (m1, m2) = (mx[q], my[q]);
        let sxx = exx[q] - m1 * m1;
        let syy = eyy[q] - m2 * m2;
        let sxy = exy[q] - m1 * m2;
        let a1 = 2.0 * m1 * m2 + c1;
        let a2 = 2.0 * sxy + c2;
        let b1 = m1 * m1 + m2 * m2 + c1;
        let b2 = sxx + syy + c2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if with_grad {
            d1[q] = 2.0 * m2 * (a2 - a1) / (b1 * b2) - 2.0 * m1 * s * (1.0 / b1 - 1.0 / b2);
            d2[q] = -s / b2;
            d3[q] = 2.0 * a1 / (b1 * b2);
        }
    }
    let value = total / m as f64;

    let grad = with_grad.then(|| {
        let g1 = filter_valid_adjoint(&d1, h, w, &k);
        let g2 = filter_valid_adjoint(&d2, h, w, &k);
        let g3 = filter_valid_adjoint(&d3, h, w, &k);
        let inv = 1.0 / m as f64;
        let data = (0..h * w)
            .map(|p| (g1[p] + 2.0 * x[p] * g2[p] + y[p] * g3[p]) * inv)
            .collect();
        RealImage::new(h, w, data).expect("finite gradient")
    });
    Ok(Evaluated { value, grad })
}

/// Mean SSIM in `[-1, 1]`.
pub fn ssim(img: &RealImage, reference: &RealImage, cfg: &SsimConfig) -> Result<f64> {
    Ok(ssim_with_grad(img, reference, cfg, false)?.value)
}

/// `1 - SSIM(img, reference)` with gradient with respect to `img`.
pub fn ssim_loss(
    img: &RealImage,
    reference: &RealImage,
    cfg: &SsimConfig,
    with_grad: bool,
) -> Result<Evaluated<RealImage>> {
    let e = ssim_with_grad(img, reference, cfg, with_grad)?;
    Ok(Evaluated {
        value: 1.0 - e.value,
        grad: e.grad.map(|g| g.map(|v| -v)),
    })
}
