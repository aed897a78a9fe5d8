//! Coil sensitivity estimation from the fully sampled ACS block.
//!
//! Each coil's ACS lines are windowed with a raised-cosine edge, taken back
//! to image space, and divided by the RSS over coils. The result is a
//! low-resolution estimate with unit RSS wherever any coil has signal.

use crate::error::{Error, Result};
use crate::sampling::SamplingMask;
use crate::transforms::{ifft2c_coils, CoilStack, SensitivityMaps};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    /// Number of lines at each edge of the ACS block that are tapered.
    pub taper_lines: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { taper_lines: 2 }
    }
}

/// Weight applied to each of the `acs` lines. The outermost `taper` lines on
/// each side rise as `0.5 * (1 - cos(pi * (j + 1) / (taper + 1)))`.
pub fn acs_window(acs: usize, taper: usize) -> Vec<f64> {
    let taper = taper.min(acs / 2);
    (0..acs)
        .map(|i| {
            let from_edge = i.min(acs - 1 - i);
            if from_edge < taper {
                let t = (from_edge + 1) as f64 / (taper + 1) as f64;
                0.5 * (1.0 - (std::f64::consts::PI * t).cos())
            } else {
                1.0
            }
        })
        .collect()
}

pub fn estimate_sens_maps(masked_ksp: &CoilStack, mask: &SamplingMask) -> Result<SensitivityMaps> {
    estimate_sens_maps_with(masked_ksp, mask, &CalibrationConfig::default())
}

pub fn estimate_sens_maps_with(
    masked_ksp: &CoilStack,
    mask: &SamplingMask,
    cfg: &CalibrationConfig,
) -> Result<SensitivityMaps> {
    if mask.acs_lines() < 2 {
        return Err(Error::invalid(format!(
            "sensitivity estimation needs at least 2 ACS lines, mask has {}",
            mask.acs_lines()
        )));
    }
    mask.check_stack(masked_ksp)?;

    let range = mask.acs_range();
    let window = acs_window(mask.acs_lines(), cfg.taper_lines);
    let (h, w) = (masked_ksp.height(), masked_ksp.width());
    let mut acs_only = CoilStack::zeros(masked_ksp.coils(), h, w);
    for c in 0..masked_ksp.coils() {
        let src = masked_ksp.coil(c);
        let dst = acs_only.coil_mut(c);
        for r in 0..h {
            for col in 0..w {
                let line = mask.line_of(r, col);
                if range.contains(&line) {
                    let p = r * w + col;
                    dst[p] = src[p] * window[line - range.start];
                }
            }
        }
    }
    let low_res = ifft2c_coils(&acs_only)?;
    Ok(SensitivityMaps::normalize(low_res))
}

/// Mean absolute difference of map magnitudes over pixels where `support`
/// is true. Used to compare estimates against known coil profiles.
pub fn map_magnitude_error(a: &SensitivityMaps, b: &SensitivityMaps, support: &[bool]) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::invalid("sensitivity map shapes differ"));
    }
    let n = a.stack().pixels();
    if support.len() != n {
        return Err(Error::invalid("support mask does not match map size"));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for c in 0..a.coils() {
        for p in (0..n).filter(|&p| support[p]) {
            acc += (a.coil(c)[p].norm() - b.coil(c)[p].norm()).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("support mask is empty"));
    }
    Ok(acc / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{apply_mask, make_uniform_mask, PhaseAxis};
    use crate::transforms::{fft2c_coils, ComplexImage};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kspace(coils: usize, h: usize, w: usize, seed: u64) -> CoilStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let imgs: Vec<_> = (0..coils)
            .map(|_| {
                let d = (0..h * w)
                    .map(|_| Complex64::new(rng.gen_range(0.1..1.0), rng.gen_range(-0.5..0.5)))
                    .collect();
                ComplexImage::new(h, w, d).unwrap()
            })
            .collect();
        fft2c_coils(&CoilStack::from_images(&imgs).unwrap()).unwrap()
    }

    #[test]
    fn window_shape() {
        let w = acs_window(16, 2);
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
        assert!((w[15] - 0.25).abs() < 1e-15 && (w[14] - 0.75).abs() < 1e-15);
        assert!(w[2..14].iter().all(|&v| v == 1.0));
        assert_eq!(acs_window(4, 0), vec![1.0; 4]);
    }

    #[test]
    fn single_coil_maps_have_unit_magnitude() {
        let k = random_kspace(1, 16, 16, 1);
        let mask = make_uniform_mask(16, 16, 4, 8, PhaseAxis::Cols, 0).unwrap();
        let maps = estimate_sens_maps(&apply_mask(&k, &mask).unwrap(), &mask).unwrap();
        for z in maps.coil(0) {
            assert!(*z == Complex64::new(0.0, 0.0) || (z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_coils_split_evenly() {
        let one = random_kspace(1, 12, 12, 2);
        let two = CoilStack::new(2, 12, 12, one.data().iter().chain(one.data()).copied().collect()).unwrap();
        let mask = make_uniform_mask(12, 12, 3, 6, PhaseAxis::Rows, 0).unwrap();
        let maps = estimate_sens_maps(&two, &mask).unwrap();
        for c in 0..2 {
            for z in maps.coil(c) {
                if z.norm() > 0.0 {
                    assert!((z.norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn unit_rss_and_scale_invariance() {
        let k = random_kspace(4, 16, 20, 3);
        let mask = make_uniform_mask(16, 20, 4, 8, PhaseAxis::Cols, 0).unwrap();
        let masked = apply_mask(&k, &mask).unwrap();
        let maps = estimate_sens_maps(&masked, &mask).unwrap();
        for &ss in maps.rss_sqr().data() {
            assert!(ss == 0.0 || (ss - 1.0).abs() < 1e-6);
        }
        let scaled = estimate_sens_maps(&masked.scale(Complex64::new(-3.0, 7.5)), &mask).unwrap();
        for (a, b) in maps.stack().data().iter().zip(scaled.stack().data()) {
            assert!((a.norm() - b.norm()).abs() < 1e-8);
        }
    }

    #[test]
    fn too_few_acs_lines() {
        let k = random_kspace(2, 8, 8, 4);
        let mask = make_uniform_mask(8, 8, 2, 1, PhaseAxis::Cols, 0).unwrap();
        assert!(matches!(estimate_sens_maps(&k, &mask), Err(Error::InvalidArgument(_))));
    }
}
