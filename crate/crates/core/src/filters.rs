//! Building blocks for the edge-spectrum loss: Scharr gradients, patch
//! variance maps, centered frequency grids and radial high-pass filters.
//!
//! Frequencies are in cycles/sample per axis, so each axis spans
//! `[-0.5, 0.5)` and the radius reaches about `0.707` in the corners.
//! Filters are laid out to match the centered spectra returned by
//! [`fft2c`](crate::transforms::fft2c).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{fft2c, ComplexImage, RealImage};

/// Scharr x-kernel, row-major, before the `1/32` scaling.
const SCHARR_X: [[f64; 3]; 3] = [[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]];

/// `1/32` gives a unit response to a unit-slope ramp: the central
/// difference spans two pixels and the kernel weights sum to 16 per side.
pub const SCHARR_NORM: f64 = 1.0 / 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientAxis {
    X,
    Y,
}

/// Reflect-101 index (`-1 -> 1`, `n -> n - 2`), valid for any offset.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn kernel(axis: GradientAxis, scale: f64) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = match axis {
                GradientAxis::X => SCHARR_X[i][j],
                GradientAxis::Y => SCHARR_X[j][i],
            } * SCHARR_NORM
                * scale;
        }
    }
    k
}

fn check_gradient_input(img: &RealImage) -> Result<()> {
    if img.height() < 3 || img.width() < 3 {
        return Err(Error::invalid(format!(
            "image {}x{} is smaller than the 3x3 gradient kernel",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Correlation with one scaled Scharr kernel, reflect-padded to keep size.
pub fn scharr_gradient(img: &RealImage, axis: GradientAxis, scale: f64) -> Result<RealImage> {
    check_gradient_input(img)?;
    let k = kernel(axis, scale);
    let (h, w) = img.shape();
    let src = img.data();
    Ok(RealImage::from_fn(h, w, |r, c| {
        let mut acc = 0.0;
        for (i, row) in k.iter().enumerate() {
            let rr = reflect(r as isize + i as isize - 1, h);
            for (j, &kv) in row.iter().enumerate() {
                if kv != 0.0 {
                    acc += kv * src[rr * w + reflect(c as isize + j as isize - 1, w)];
                }
            }
        }
        acc
    }))
}

/// `(gx, gy)` with the unit-ramp normalization.
pub fn scharr_gradients(img: &RealImage) -> Result<(RealImage, RealImage)> {
    Ok((
        scharr_gradient(img, GradientAxis::X, 1.0)?,
        scharr_gradient(img, GradientAxis::Y, 1.0)?,
    ))
}

/// Adjoint of [`scharr_gradient`]: scatters `upstream` back through the
/// kernel and the reflect padding.
pub fn scharr_backward(upstream: &RealImage, axis: GradientAxis, scale: f64) -> RealImage {
    let k = kernel(axis, scale);
    let (h, w) = upstream.shape();
    let mut out = RealImage::zeros(h, w);
    let dst = out.data_mut();
    for r in 0..h {
        for c in 0..w {
            let g = upstream.get(r, c);
            if g == 0.0 {
                continue;
            }
            for (i, row) in k.iter().enumerate() {
                let rr = reflect(r as isize + i as isize - 1, h);
                for (j, &kv) in row.iter().enumerate() {
                    if kv != 0.0 {
                        dst[rr * w + reflect(c as isize + j as isize - 1, w)] += kv * g;
                    }
                }
            }
        }
    }
    out
}

/// Per-patch population variances over non-overlapping `patch x patch`
/// tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMap {
    patch: usize,
    values: RealImage,
}

impl VarianceMap {
    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn patch_rows(&self) -> usize {
        self.values.height()
    }

    pub fn patch_cols(&self) -> usize {
        self.values.width()
    }

    pub fn values(&self) -> &RealImage {
        &self.values
    }

    pub fn into_values(self) -> RealImage {
        self.values
    }
}

fn padded_len(n: usize, p: usize) -> usize {
    n.div_ceil(p) * p
}

/// Reflect-pads bottom/right to a multiple of `patch`, then takes the
/// population variance (divide by `patch^2`) of every tile.
pub fn patch_variance(g: &RealImage, patch: usize) -> Result<VarianceMap> {
    if patch == 0 {
        return Err(Error::invalid("patch size must be at least 1"));
    }
    if g.is_empty() {
        return Err(Error::invalid("patch variance of an empty image"));
    }
    let (h, w) = g.shape();
    let (ph, pw) = (padded_len(h, patch) / patch, padded_len(w, patch) / patch);
    let area = (patch * patch) as f64;
    let values = RealImage::from_fn(ph, pw, |pr, pc| {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..patch {
            let r = reflect((pr * patch + i) as isize, h);
            for j in 0..patch {
                let v = g.get(r, reflect((pc * patch + j) as isize, w));
                sum += v;
                sum_sq += v * v;
            }
        }
        let mean = sum / area;
        (sum_sq / area - mean * mean).max(0.0)
    });
    Ok(VarianceMap { patch, values })
}

/// Vector-Jacobian product of [`patch_variance`] with respect to `g`.
pub fn patch_variance_backward(g: &RealImage, patch: usize, upstream: &RealImage) -> RealImage {
    let (h, w) = g.shape();
    let area = (patch * patch) as f64;
    let mut out = RealImage::zeros(h, w);
    let dst = out.data_mut();
    for pr in 0..upstream.height() {
        for pc in 0..upstream.width() {
            let up = upstream.get(pr, pc);
            if up == 0.0 {
                continue;
            }
            let mut sum = 0.0;
            for i in 0..patch {
                let r = reflect((pr * patch + i) as isize, h);
                for j in 0..patch {
                    sum += g.get(r, reflect((pc * patch + j) as isize, w));
                }
            }
            let mean = sum / area;
            for i in 0..patch {
                let r = reflect((pr * patch + i) as isize, h);
                for j in 0..patch {
                    let c = reflect((pc * patch + j) as isize, w);
                    dst[r * w + c] += up * 2.0 * (g.get(r, c) - mean) / area;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Butterworth,
    Gaussian,
}

/// Radial high-pass filter description. `cutoff` is in cycles/sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighPassSpec {
    pub kind: FilterKind,
    pub cutoff: f64,
    /// Butterworth order; ignored by the Gaussian filter.
    pub order: u32,
}

impl Default for HighPassSpec {
    fn default() -> Self {
        Self::butterworth(0.35, 4)
    }
}

impl HighPassSpec {
    pub fn butterworth(cutoff: f64, order: u32) -> Self {
        Self {
            kind: FilterKind::Butterworth,
            cutoff,
            order,
        }
    }

    pub fn gaussian(cutoff: f64) -> Self {
        Self {
            kind: FilterKind::Gaussian,
            cutoff,
            order: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff <= 0.5) {
            return Err(Error::invalid(format!("cutoff {} outside (0, 0.5]", self.cutoff)));
        }
        if self.order == 0 {
            return Err(Error::invalid("filter order must be at least 1"));
        }
        Ok(())
    }

    /// Filter gain at radial frequency `d`.
    pub fn response(&self, d: f64) -> f64 {
        match self.kind {
            FilterKind::Butterworth => butterworth_response(d, self.cutoff, self.order),
            FilterKind::Gaussian => gaussian_response(d, self.cutoff),
        }
    }
}

/// `1 / (1 + (cutoff / d)^(2 order))`, with `H(0) = 0`.
pub fn butterworth_response(d: f64, cutoff: f64, order: u32) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    1.0 / (1.0 + (cutoff / d).powi(2 * order as i32))
}

/// `1 - exp(-d^2 / (2 cutoff^2))`.
pub fn gaussian_response(d: f64, cutoff: f64) -> f64 {
    1.0 - (-(d * d) / (2.0 * cutoff * cutoff)).exp()
}

/// Centered frequency of index `i` on an axis of length `n`.
#[inline]
pub fn centered_frequency(i: usize, n: usize) -> f64 {
    (i as f64 - (n / 2) as f64) / n as f64
}

/// Radius `sqrt(fu^2 + fv^2)` for every bin of a centered `h x w` grid.
pub fn frequency_radius(h: usize, w: usize) -> RealImage {
    RealImage::from_fn(h, w, |r, c| centered_frequency(r, h).hypot(centered_frequency(c, w)))
}

pub fn highpass_filter(h: usize, w: usize, spec: &HighPassSpec) -> Result<RealImage> {
    spec.validate()?;
    Ok(frequency_radius(h, w).map(|d| spec.response(d)))
}

/// `H * |fft2c(v)|` for a variance map.
pub fn filtered_magnitude(v: &VarianceMap, spec: &HighPassSpec) -> Result<RealImage> {
    let spectrum = fft2c(&ComplexImage::from_real(v.values()))?;
    let filter = highpass_filter(v.patch_rows(), v.patch_cols(), spec)?;
    let mut out = spectrum.magnitude();
    for (m, f) in out.data_mut().iter_mut().zip(filter.data()) {
        *m *= f;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> RealImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealImage::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(-2, 3), 2);
        assert_eq!(reflect(4, 3), 0);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn constant_image_has_no_gradient() {
        let (gx, gy) = scharr_gradients(&RealImage::filled(6, 7, 2.5)).unwrap();
        assert!(gx.data().iter().chain(gy.data()).all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn unit_ramp_gives_unit_gradient() {
        let ramp = RealImage::from_fn(8, 9, |_, c| c as f64);
        let (gx, gy) = scharr_gradients(&ramp).unwrap();
        for r in 0..8 {
            for c in 1..8 {
                assert!((gx.get(r, c) - 1.0).abs() < 1e-14);
                assert!(gy.get(r, c).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn transpose_relation() {
        let img = random(7, 5, 1);
        let gx_t = scharr_gradient(&img.transpose(), GradientAxis::X, 1.0).unwrap();
        let gy = scharr_gradient(&img, GradientAxis::Y, 1.0).unwrap();
        let gy_t = gy.transpose();
        assert_eq!(gx_t.shape(), gy_t.shape());
        for (a, b) in gx_t.data().iter().zip(gy_t.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn too_small_for_kernel() {
        assert!(matches!(
            scharr_gradients(&RealImage::zeros(2, 5)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn scharr_backward_is_adjoint() {
        let x = random(6, 8, 2);
        let y = random(6, 8, 3);
        for axis in [GradientAxis::X, GradientAxis::Y] {
            let ax = scharr_gradient(&x, axis, 1.7).unwrap();
            let aty = scharr_backward(&y, axis, 1.7);
            let lhs: f64 = ax.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn patch_variance_examples() {
        let g = RealImage::new(2, 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let v = patch_variance(&g, 2).unwrap();
        assert_eq!(v.values().data(), &[5.0]);

        let v = patch_variance(&RealImage::filled(4, 4, 3.0), 2).unwrap();
        assert!(v.values().data().iter().all(|&x| x == 0.0));

        let v = patch_variance(&random(5, 5, 4), 2).unwrap();
        assert_eq!((v.patch_rows(), v.patch_cols()), (3, 3));
        assert!(patch_variance(&g, 0).is_err());
    }

    #[test]
    fn padded_patch_uses_reflection() {
        // 3x3 with p=2 pads row/col 3 with row/col 1.
        let g = RealImage::from_fn(3, 3, |r, c| (r * 3 + c) as f64);
        let v = patch_variance(&g, 2).unwrap();
        let tile = [g.get(2, 2), g.get(2, 1), g.get(1, 2), g.get(1, 1)];
        let mean = tile.iter().sum::<f64>() / 4.0;
        let var = tile.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((v.values().get(1, 1) - var).abs() < 1e-14);
    }

    #[test]
    fn filter_definitions() {
        assert_eq!(butterworth_response(0.35, 0.35, 4), 0.5);
        assert_eq!(butterworth_response(0.0, 0.35, 4), 0.0);
        assert_eq!(gaussian_response(0.0, 0.35), 0.0);

        let spec = HighPassSpec::butterworth(0.35, 4);
        let f = highpass_filter(16, 16, &spec).unwrap();
        assert_eq!(f.get(8, 8), 0.0);
        let d = (0.5f64 * 0.5 + 0.5 * 0.5).sqrt();
        let expect = 1.0 / (1.0 + (0.35 / d).powi(8));
        assert!((f.get(0, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn spec_validation() {
        assert!(HighPassSpec::butterworth(0.0, 4).validate().is_err());
        assert!(HighPassSpec::butterworth(0.51, 4).validate().is_err());
        assert!(HighPassSpec::butterworth(0.5, 0).validate().is_err());
        assert!(HighPassSpec::gaussian(0.5).validate().is_ok());
    }

    #[test]
    fn filtered_magnitude_trivial_cases() {
        let spec = HighPassSpec::default();
        let zero = patch_variance(&RealImage::zeros(10, 10), 5).unwrap();
        assert!(filtered_magnitude(&zero, &spec)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));

        let constant = VarianceMap {
            patch: 5,
            values: RealImage::filled(4, 4, 0.7),
        };
        assert!(filtered_magnitude(&constant, &spec)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn filtered_magnitude_matches_naive_dft() {
        let values = random(6, 6, 5);
        let v = VarianceMap {
            patch: 1,
            values: values.clone(),
        };
        let spec = HighPassSpec::butterworth(0.35, 4);
        let fast = filtered_magnitude(&v, &spec).unwrap();
        for u in 0..6 {
            for k in 0..6 {
                let (fu, fk) = (centered_frequency(u, 6), centered_frequency(k, 6));
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..6 {
                    for c in 0..6 {
                        let (xr, xc) = (r as f64 - 3.0, c as f64 - 3.0);
                        let phase = -2.0 * std::f64::consts::PI * (fu * xr + fk * xc);
                        acc += values.get(r, c) * Complex64::from_polar(1.0, phase);
                    }
                }
                let d = (fu * fu + fk * fk).sqrt();
                let h = if d == 0.0 {
                    0.0
                } else {
                    1.0 / (1.0 + (0.35 / d).powi(8))
                };
                let expect = h * acc.norm() / 6.0;
                assert!((fast.get(u, k) - expect).abs() < 1e-10);
            }
        }
    }
}
