//! Edge-spectrum loss: for each gradient direction, compare high-passed
//! FFT magnitudes of patch-variance maps of Scharr gradients under L1,
//! then sum the two directions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{
    highpass_filter, patch_variance, patch_variance_backward, scharr_backward, scharr_gradient, GradientAxis,
    HighPassSpec,
};
use crate::transforms::{fft2c, ifft2c, ComplexImage, RealImage};

use super::{Evaluated, Normalization};

/// Spectra with magnitude below this are treated as kinks of `|z|`.
pub const NEAR_ZERO_BIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EagleSpec {
    pub patch: usize,
    pub filter: HighPassSpec,
    /// Positive factor applied to the Scharr kernels. Scales the loss by
    /// `gradient_scale^2` and nothing else.
    #[serde(default = "unit_scale")]
    pub gradient_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl Default for EagleSpec {
    fn default() -> Self {
        Self {
            patch: 5,
            filter: HighPassSpec::butterworth(0.35, 4),
            gradient_scale: 1.0,
        }
    }
}

impl EagleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 {
            return Err(Error::invalid("eagle patch size must be at least 1"));
        }
        if !(self.gradient_scale > 0.0) {
            return Err(Error::invalid("gradient scale must be positive"));
        }
        self.filter.validate()
    }
}

/// Intermediates of one direction, kept for the backward pass.
struct Branch {
    gradient: RealImage,
    spectrum: ComplexImage,
    filtered: RealImage,
}

fn forward(img: &RealImage, axis: GradientAxis, spec: &EagleSpec, filter: &RealImage) -> Result<Branch> {
    let gradient = scharr_gradient(img, axis, spec.gradient_scale)?;
    let variance = patch_variance(&gradient, spec.patch)?;
    let spectrum = fft2c(&ComplexImage::from_real(variance.values()))?;
    let mut filtered = spectrum.magnitude();
    for (m, f) in filtered.data_mut().iter_mut().zip(filter.data()) {
        *m *= f;
    }
    Ok(Branch {
        gradient,
        spectrum,
        filtered,
    })
}

/// Loss value, optional gradient, and the number of filtered bins whose
/// spectrum magnitude fell below [`NEAR_ZERO_BIN`].
pub struct EagleOutput {
    pub value: f64,
    pub grad: Option<RealImage>,
    pub near_zero_bins: usize,
}

pub(crate) fn eagle_detailed(
    img: &RealImage,
    reference: &RealImage,
    spec: &EagleSpec,
    norm: Normalization,
    with_grad: bool,
) -> Result<EagleOutput> {
    spec.validate()?;
    img.same_shape(reference, "eagle_loss")?;
    let (h, w) = img.shape();
    if h < spec.patch.max(3) || w < spec.patch.max(3) {
        return Err(Error::invalid(format!(
            "image {h}x{w} too small for patch {} and the 3x3 gradient kernel",
            spec.patch
        )));
    }
    let (ph, pw) = (h.div_ceil(spec.patch), w.div_ceil(spec.patch));
    let filter = highpass_filter(ph, pw, &spec.filter)?;
    let scale = norm.factor(ph * pw);

    let mut value = 0.0;
    let mut near_zero_bins = 0;
    let mut grad = with_grad.then(|| RealImage::zeros(h, w));
    for axis in [GradientAxis::X, GradientAxis::Y] {
        let a = forward(img, axis, spec, &filter)?;
        let b = forward(reference, axis, spec, &filter)?;
        let diffs: Vec<f64> = a
            .filtered
            .data()
            .iter()
            .zip(b.filtered.data())
            .map(|(x, y)| x - y)
            .collect();
        value += scale * diffs.iter().map(|d| d.abs()).sum::<f64>();
        near_zero_bins += a
            .spectrum
            .data()
            .iter()
            .zip(filter.data())
            .filter(|(z, &f)| f > 0.0 && z.norm() < NEAR_ZERO_BIN)
            .count();

        if let Some(acc) = grad.as_mut() {
            let mut d_spec = ComplexImage::zeros(ph, pw);
            for (i, dz) in d_spec.data_mut().iter_mut().enumerate() {
                let z = a.spectrum.data()[i];
                let mag = z.norm();
                if diffs[i] != 0.0 && mag > 0.0 {
                    *dz = z * (scale * diffs[i].signum() * filter.data()[i] / mag);
                }
            }
            // Variance maps are real, so only the real part of the adjoint survives.
            let d_var = ifft2c(&d_spec)?.real_part();
            let d_grad = patch_variance_backward(&a.gradient, spec.patch, &d_var);
            let d_img = scharr_backward(&d_grad, axis, spec.gradient_scale);
            for (g, d) in acc.data_mut().iter_mut().zip(d_img.data()) {
                *g += d;
            }
        }
    }
    Ok(EagleOutput {
        value,
        grad,
        near_zero_bins,
    })
}

pub fn eagle_loss(
    img: &RealImage,
    reference: &RealImage,
    spec: &EagleSpec,
    norm: Normalization,
    with_grad: bool,
) -> Result<Evaluated<RealImage>> {
    let out = eagle_detailed(img, reference, spec, norm, with_grad)?;
    Ok(Evaluated {
        value: out.value,
        grad: out.grad,
    })
}
