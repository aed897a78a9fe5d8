//! Central finite-difference checks of the analytic loss gradients.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::transforms::{CoilStack, RealImage};

use super::{
    eagle_detailed, fidelity_loss, perceptual_loss, reg_loss, ssim_loss, ConvStack, EagleSpec, Normalization,
    SsimConfig,
};

/// Minimum number of coordinates compared per check.
pub const MIN_COORDINATES: usize = 64;

/// Entries of the regularizer input closer than this to zero are skipped.
pub const REG_KINK_RADIUS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Fidelity,
    Ssim,
    Eagle,
    Perceptual,
    Reg,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Fidelity,
        LossKind::Ssim,
        LossKind::Eagle,
        LossKind::Perceptual,
        LossKind::Reg,
    ];

    /// Central differences of a quadratic have no truncation error, so the
    /// fidelity step only trades against rounding and can be large. SSIM
    /// truncation stays below rounding up to `1e-3` on unit-range inputs.
    pub fn default_epsilon(self) -> f64 {
        match self {
            LossKind::Fidelity | LossKind::Ssim => 1e-3,
            LossKind::Eagle => 1e-4,
            LossKind::Reg | LossKind::Perceptual => 1e-5,
        }
    }

    pub fn default_tolerance(self) -> f64 {
        match self {
            LossKind::Fidelity | LossKind::Reg => 1e-6,
            LossKind::Ssim => 1e-4,
            LossKind::Eagle => 1e-3,
            LossKind::Perceptual => 1e-5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Fidelity => "fidelity",
            LossKind::Ssim => "ssim",
            LossKind::Eagle => "eagle",
            LossKind::Perceptual => "vgg",
            LossKind::Reg => "reg",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fidelity" => Ok(LossKind::Fidelity),
            "ssim" => Ok(LossKind::Ssim),
            "eagle" => Ok(LossKind::Eagle),
            "vgg" | "perceptual" => Ok(LossKind::Perceptual),
            "reg" => Ok(LossKind::Reg),
            other => Err(Error::invalid(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: LossKind,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    /// Coordinates excluded because they sit on a kink of `|z|`.
    pub skipped: usize,
    /// Filtered spectrum bins below the near-zero threshold (eagle only).
    pub near_zero_bins: usize,
    pub passed: bool,
}

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, eps: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += eps;
    let fp = f(&xp);
    xp[i] = x[i] - eps;
    let fm = f(&xp);
    (fp - fm) / (2.0 * eps)
}

/// `|a - n| / max(|a|, |n|)`, or 0 when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Largest relative error between `analytic` and central differences of
/// `f` over `coords`.
pub fn max_relative_error(f: &dyn Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], coords: &[usize], eps: f64) -> f64 {
    coords
        .iter()
        .map(|&i| relative_error(analytic[i], central_difference(f, x, i, eps)))
        .fold(0.0, f64::max)
}

fn flatten(stack: &CoilStack) -> Vec<f64> {
    stack.data().iter().flat_map(|z| [z.re, z.im]).collect()
}

fn unflatten(x: &[f64], c: usize, h: usize, w: usize) -> CoilStack {
    let data = x.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
    CoilStack::new(c, h, w, data).expect("shape preserved")
}

fn random_stack(rng: &mut ChaCha8Rng, h: usize, w: usize) -> CoilStack {
    let data = (0..h * w)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    CoilStack::new(1, h, w, data).expect("finite")
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RealImage {
    RealImage::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0))
}

fn sample_coords(rng: &mut ChaCha8Rng, eligible: Vec<usize>) -> Vec<usize> {
    if eligible.len() <= MIN_COORDINATES {
        return eligible;
    }
    let mut picked: Vec<usize> = index::sample(rng, eligible.len(), MIN_COORDINATES)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    picked
}

type ScalarFn = Box<dyn Fn(&[f64]) -> f64>;

/// Runs one check of `loss` on random `size x size` inputs drawn from
/// `seed`.
pub fn grad_check(loss: LossKind, size: usize, seed: u64, epsilon: f64, tolerance: f64) -> Result<GradCheckReport> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if size == 0 {
        return Err(Error::invalid("size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = Normalization::Mean;
    let (h, w) = (size, size);

    let mut near_zero_bins = 0;
    let (x, analytic, f, eligible): (Vec<f64>, Vec<f64>, ScalarFn, Vec<usize>) = match loss {
        LossKind::Fidelity => {
            let pred = random_stack(&mut rng, h, w);
            let full = random_stack(&mut rng, h, w);
            let g = fidelity_loss(&pred, &full, norm, true)?.grad.expect("requested");
            let x = flatten(&pred);
            let n = x.len();
            let f = move |v: &[f64]| fidelity_loss(&unflatten(v, 1, h, w), &full, norm, false).unwrap().value;
            (x, flatten(&g), Box::new(f), (0..n).collect())
        }
        LossKind::Reg => {
            let k = random_stack(&mut rng, h, w);
            let beta = 0.5;
            let g = reg_loss(&k, beta, norm, true)?.grad.expect("requested");
            let eligible = k
                .data()
                .iter()
                .enumerate()
                .filter(|(_, z)| z.norm() >= REG_KINK_RADIUS)
                .flat_map(|(i, _)| [2 * i, 2 * i + 1])
                .collect();
            let f = move |v: &[f64]| reg_loss(&unflatten(v, 1, h, w), beta, norm, false).unwrap().value;
            (flatten(&k), flatten(&g), Box::new(f), eligible)
        }
        LossKind::Ssim => {
            let img = random_image(&mut rng, h, w);
            let reference = random_image(&mut rng, h, w);
            let cfg = SsimConfig::default();
            let g = ssim_loss(&img, &reference, &cfg, true)?.grad.expect("requested");
            let f = move |v: &[f64]| {
                let img = RealImage::new(h, w, v.to_vec()).unwrap();
                ssim_loss(&img, &reference, &cfg, false).unwrap().value
            };
            (img.into_data(), g.into_data(), Box::new(f), (0..h * w).collect())
        }
        LossKind::Eagle => {
            let img = random_image(&mut rng, h, w);
            let reference = random_image(&mut rng, h, w);
            let spec = EagleSpec::default();
            let out = eagle_detailed(&img, &reference, &spec, norm, true)?;
            near_zero_bins = out.near_zero_bins;
            let f = move |v: &[f64]| {
                let img = RealImage::new(h, w, v.to_vec()).unwrap();
                eagle_detailed(&img, &reference, &spec, norm, false).unwrap().value
            };
            (
                img.into_data(),
                out.grad.expect("requested").into_data(),
                Box::new(f),
                (0..h * w).collect(),
            )
        }
        LossKind::Perceptual => {
            let img = random_image(&mut rng, h, w);
            let reference = random_image(&mut rng, h, w);
            let stack = ConvStack::reference(seed);
            let g = perceptual_loss(&img, &reference, Some(&stack), norm, true)?
                .and_then(|e| e.grad)
                .expect("extractor supplied");
            let f = move |v: &[f64]| {
                let img = RealImage::new(h, w, v.to_vec()).unwrap();
                perceptual_loss(&img, &reference, Some(&stack), norm, false)
                    .unwrap()
                    .unwrap()
                    .value
            };
            (img.into_data(), g.into_data(), Box::new(f), (0..h * w).collect())
        }
    };

    let total = x.len();
    let skipped = total - eligible.len();
    let coords = sample_coords(&mut rng, eligible);
    let max_rel_error = max_relative_error(f.as_ref(), &x, &analytic, &coords, epsilon);
    Ok(GradCheckReport {
        loss,
        max_rel_error,
        tolerance,
        checked: coords.len(),
        skipped,
        near_zero_bins,
        passed: max_rel_error < tolerance,
    })
}
