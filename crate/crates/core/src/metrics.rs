//! Image quality metrics on magnitude images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{highpass_filter, HighPassSpec};
use crate::losses::{DynamicRange, SsimConfig};
use crate::transforms::{fft2c, ComplexImage, RealImage};

pub use crate::losses::ssim;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsConfig {
    #[serde(default)]
    pub ssim: SsimConfig,
    /// Band used by [`hf_nmse`].
    #[serde(default)]
    pub highpass: HighPassSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ssim: f64,
    /// `f64::INFINITY` when the images are identical.
    pub psnr: f64,
    pub nmse: f64,
    pub hf_nmse: f64,
}

/// `10 log10(L^2 / MSE)` with `L = max(reference)`. Identical images give
/// `f64::INFINITY`.
pub fn psnr(img: &RealImage, reference: &RealImage) -> Result<f64> {
    psnr_with_range(img, reference, DynamicRange::FromReference)
}

pub fn psnr_with_range(img: &RealImage, reference: &RealImage, range: DynamicRange) -> Result<f64> {
    img.same_shape(reference, "psnr")?;
    let l = match range {
        DynamicRange::FromReference => reference.max(),
        DynamicRange::Fixed(l) => l,
    };
    if !(l > 0.0) {
        return Err(Error::invalid(format!("PSNR peak must be positive, got {l}")));
    }
    let sse: f64 = img
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / img.len() as f64;
    Ok(10.0 * (l * l / mse).log10())
}

/// `||img - ref||^2 / ||ref||^2`.
pub fn nmse(img: &RealImage, reference: &RealImage) -> Result<f64> {
    img.same_shape(reference, "nmse")?;
    let den: f64 = reference.data().iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::invalid("NMSE reference has zero norm"));
    }
    let num: f64 = img
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(num / den)
}

/// NMSE between the high-passed centered spectra of `img` and `reference`.
pub fn hf_nmse(img: &RealImage, reference: &RealImage, spec: &HighPassSpec) -> Result<f64> {
    img.same_shape(reference, "hf_nmse")?;
    let (h, w) = img.shape();
    let filter = highpass_filter(h, w, spec)?;
    let fi = fft2c(&ComplexImage::from_real(img))?;
    let fr = fft2c(&ComplexImage::from_real(reference))?;
    let mut num = 0.0;
    let mut den = 0.0;
    for ((a, b), &hv) in fi.data().iter().zip(fr.data()).zip(filter.data()) {
        num += (hv * (a - b)).norm_sqr();
        den += (hv * b).norm_sqr();
    }
    if den == 0.0 {
        return Err(Error::invalid("reference has no energy in the high-pass band"));
    }
    Ok(num / den)
}

pub fn evaluate(img: &RealImage, reference: &RealImage, cfg: &MetricsConfig) -> Result<Metrics> {
    Ok(Metrics {
        ssim: ssim(img, reference, &cfg.ssim)?,
        psnr: psnr_with_range(img, reference, cfg.ssim.range)?,
        nmse: nmse(img, reference)?,
        hf_nmse: hf_nmse(img, reference, &cfg.highpass)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ssim_loss;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> RealImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealImage::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn ssim_is_one_minus_loss() {
        let (a, b) = (random(16, 16, 1), random(16, 16, 2));
        let cfg = SsimConfig::default();
        assert_eq!(ssim(&a, &a, &cfg).unwrap(), 1.0);
        let l = ssim_loss(&a, &b, &cfg, false).unwrap().value;
        assert_eq!(ssim(&a, &b, &cfg).unwrap(), 1.0 - l);
        assert!(ssim(&a.map(|v| -v), &a, &cfg).unwrap() < 1.0);
    }

    #[test]
    fn psnr_examples() {
        let a = random(8, 8, 3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);

        let mut reference = RealImage::zeros(10, 10);
        reference.data_mut()[0] = 1.0;
        // Every pixel off by 0.01 gives MSE 1e-4.
        let img = reference.map(|v| v + 0.01);
        assert!((psnr(&img, &reference).unwrap() - 40.0).abs() < 1e-10);

        assert!(psnr(&a, &RealImage::zeros(8, 8)).is_err());
    }

    #[test]
    fn psnr_matches_scalar_loop() {
        let (a, b) = (random(9, 13, 4), random(9, 13, 5));
        let mut peak = f64::MIN;
        let mut sse = 0.0;
        for i in 0..a.len() {
            peak = peak.max(b.data()[i]);
            let d = a.data()[i] - b.data()[i];
            sse += d * d;
        }
        let expected = 20.0 * peak.log10() - 10.0 * (sse / a.len() as f64).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn nmse_examples() {
        let r = random(8, 8, 6);
        assert_eq!(nmse(&RealImage::zeros(8, 8), &r).unwrap(), 1.0);
        assert_eq!(nmse(&r, &r).unwrap(), 0.0);
        assert!((nmse(&r.map(|v| 2.0 * v), &r).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&r, &RealImage::zeros(8, 8)).is_err());
    }

    #[test]
    fn hf_nmse_ignores_constant_offset() {
        let r = random(16, 16, 7);
        let spec = HighPassSpec::default();
        assert_eq!(hf_nmse(&r, &r, &spec).unwrap(), 0.0);
        assert!(hf_nmse(&r.map(|v| v + 0.3), &r, &spec).unwrap() < 1e-24);
        assert!(hf_nmse(&r, &RealImage::filled(16, 16, 1.0), &spec).is_err());
    }

    #[test]
    fn smoothing_error_concentrates_in_high_band() {
        let r = random(24, 24, 8);
        let (h, w) = r.shape();
        // 3x3 box blur with wrap-around.
        let blurred = RealImage::from_fn(h, w, |i, j| {
            let mut acc = 0.0;
            for di in [h - 1, 0, 1] {
                for dj in [w - 1, 0, 1] {
                    acc += r.get((i + di) % h, (j + dj) % w);
                }
            }
            acc / 9.0
        });
        let spec = HighPassSpec::default();
        assert!(hf_nmse(&blurred, &r, &spec).unwrap() > nmse(&blurred, &r).unwrap());
    }
}
