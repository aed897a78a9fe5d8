//! Zero-filled and gradient-descent reconstruction.
//!
//! The descent variable is a single complex image `x` with forward model
//! `k = fft2c(S x)`. Blind mode minimizes fidelity to the measured lines
//! plus the k-space regularizer. Oracle mode additionally enables the
//! image-domain terms against a supplied ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    ConvStack, EagleSpec, FeatureExtractor, LossConfig, LossGradient, LossReport, LossWeights, Normalization,
    Objective, SsimConfig,
};
use crate::sampling::SamplingMask;
use crate::transforms::{
    ifft2c_coils, rss_combine, sense_combine, CoilStack, ComplexImage, RealImage, SensitivityMaps,
};

/// Total loss above `DIVERGENCE_FACTOR * initial` aborts the descent.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Default regularizer weight for reconstruction. The k-space L1 term is
/// linear in the data scale while fidelity is quadratic, and at unit image
/// scale `0.01` makes the descent shrink the image instead of unaliasing it.
pub const RECON_ALPHA5: f64 = 1e-4;

/// Stable step for oracle mode. SSIM curvature on the magnitude image grows
/// like `1 / C1`, so the image-domain terms need a far smaller step than
/// fidelity alone.
pub const ORACLE_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReconMethod {
    ZeroFilled,
    #[default]
    Gd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub method: ReconMethod,
    pub iterations: usize,
    /// Dimensionless step. Under mean normalization the raw gradient is
    /// rescaled by the k-space element count, so `0.5` is one exact
    /// projection for the fully sampled fidelity term.
    pub step: f64,
    pub weights: LossWeights,
    pub eagle: EagleSpec,
    pub ssim: SsimConfig,
    pub use_ground_truth_losses: bool,
    /// Data-consistency period in iterations; 0 disables it.
    pub dc_every: usize,
    pub normalization: Normalization,
    /// Seed of the reference feature extractor used in oracle mode.
    pub extractor_seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            method: ReconMethod::Gd,
            iterations: 200,
            step: 0.25,
            weights: LossWeights {
                alpha5: RECON_ALPHA5,
                ..LossWeights::default()
            },
            eagle: EagleSpec::default(),
            ssim: SsimConfig::default(),
            use_ground_truth_losses: false,
            dc_every: 0,
            normalization: Normalization::Mean,
            extractor_seed: 0,
        }
    }
}

impl ReconConfig {
    /// Ground-truth image terms enabled, with [`ORACLE_STEP`].
    pub fn oracle() -> Self {
        Self {
            step: ORACLE_STEP,
            use_ground_truth_losses: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::invalid(format!("step must be positive, got {}", self.step)));
        }
        self.weights.validate()?;
        self.eagle.validate()
    }

    fn loss_config(&self) -> LossConfig {
        LossConfig {
            weights: self.weights,
            eagle: self.eagle,
            ssim: self.ssim,
            normalization: self.normalization,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconOutput {
    pub image: RealImage,
    /// Complex estimate; `None` for zero-filled output.
    pub estimate: Option<ComplexImage>,
    /// Loss at the initial point followed by one entry per iteration.
    pub trace: Vec<LossReport>,
    /// Index into `trace` of the returned iterate.
    pub best: usize,
}

/// Per-coil inverse transform followed by RSS.
pub fn zero_filled(masked_ksp: &CoilStack) -> Result<RealImage> {
    Ok(rss_combine(&ifft2c_coils(masked_ksp)?))
}

/// Replaces sampled entries of `k_est` by the measurements.
pub fn data_consistency(k_est: &CoilStack, masked_ksp: &CoilStack, mask: &SamplingMask) -> Result<CoilStack> {
    k_est.same_shape(masked_ksp, "data consistency")?;
    mask.check_stack(k_est)?;
    let (h, w) = (k_est.height(), k_est.width());
    let mut out = k_est.clone();
    for c in 0..k_est.coils() {
        let src = masked_ksp.coil(c);
        let dst = out.coil_mut(c);
        for r in 0..h {
            for col in 0..w {
                if mask.is_sampled(r, col) {
                    dst[r * w + col] = src[r * w + col];
                }
            }
        }
    }
    Ok(out)
}

fn project_dc(
    x: &ComplexImage,
    masked_ksp: &CoilStack,
    mask: &SamplingMask,
    maps: &SensitivityMaps,
) -> Result<ComplexImage> {
    let k = crate::phantom::simulate_kspace(x, maps)?;
    let k = data_consistency(&k, masked_ksp, mask)?;
    sense_combine(&ifft2c_coils(&k)?, maps)
}

fn strip(mut r: LossReport) -> LossReport {
    r.grad = None;
    r
}

/// Fixed-step descent on the weighted objective. The lowest-loss iterate is
/// returned, so its total never exceeds the initial total.
pub fn gd_reconstruct(
    masked_ksp: &CoilStack,
    mask: &SamplingMask,
    maps: &SensitivityMaps,
    cfg: &ReconConfig,
    ground_truth: Option<&RealImage>,
) -> Result<ReconOutput> {
    cfg.validate()?;
    masked_ksp.same_shape(maps.stack(), "reconstruction")?;
    mask.check_stack(masked_ksp)?;
    let reference = if cfg.use_ground_truth_losses {
        let gt =
            ground_truth.ok_or_else(|| Error::invalid("ground-truth losses requested but no ground truth supplied"))?;
        gt.same_shape(
            &RealImage::zeros(masked_ksp.height(), masked_ksp.width()),
            "ground truth",
        )?;
        Some(gt)
    } else {
        None
    };

    if cfg.method == ReconMethod::ZeroFilled || cfg.iterations == 0 {
        return Ok(ReconOutput {
            image: zero_filled(masked_ksp)?,
            estimate: None,
            trace: Vec::new(),
            best: 0,
        });
    }

    let loss_cfg = cfg.loss_config();
    let stack;
    let extractor: Option<&dyn FeatureExtractor> = if reference.is_some() && cfg.weights.alpha4 > 0.0 {
        stack = ConvStack::reference(cfg.extractor_seed);
        Some(&stack)
    } else {
        None
    };
    let objective = Objective {
        cfg: &loss_cfg,
        k_target: masked_ksp,
        sampled: Some(mask),
        reference,
        extractor,
    };
    let scale = 1.0 / cfg.normalization.factor(masked_ksp.len());
    let step = cfg.step * scale;

    let mut x = sense_combine(&ifft2c_coils(masked_ksp)?, maps)?;
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let mut best = (0, x.clone());
    let mut best_total = f64::INFINITY;
    let mut initial = 0.0;

    for it in 0..=cfg.iterations {
        let last = it == cfg.iterations;
        let mut report = objective.eval_image(&x, maps, !last)?;
        if it == 0 {
            initial = report.total;
        } else if report.total > DIVERGENCE_FACTOR * initial {
            return Err(Error::Diverged {
                iteration: it,
                total: report.total,
                initial,
            });
        }
        if report.total < best_total {
            best_total = report.total;
            best = (it, x.clone());
        }
        let grad = report.grad.take();
        trace.push(strip(report));
        if last {
            break;
        }
        let Some(LossGradient::Image(g)) = grad else {
            unreachable!("image objective returns an image gradient")
        };
        for (v, d) in x.data_mut().iter_mut().zip(g.data()) {
            *v -= step * d;
        }
        if cfg.dc_every > 0 && (it + 1) % cfg.dc_every == 0 {
            x = project_dc(&x, masked_ksp, mask, maps)?;
        }
    }

    let (best_it, x) = best;
    let image = rss_combine(&crate::transforms::sense_expand(&x, maps)?);
    Ok(ReconOutput {
        image,
        estimate: Some(x),
        trace,
        best: best_it,
    })
}

/// Dispatches on `cfg.method`.
pub fn reconstruct(
    masked_ksp: &CoilStack,
    mask: &SamplingMask,
    maps: &SensitivityMaps,
    cfg: &ReconConfig,
    ground_truth: Option<&RealImage>,
) -> Result<ReconOutput> {
    gd_reconstruct(masked_ksp, mask, maps, cfg, ground_truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepProbe {
    pub step: f64,
    /// Final total loss, or `None` if the run diverged.
    pub final_total: Option<f64>,
}

/// Exponents of the probe grid `base * 2^k`.
pub const STEP_EXPONENTS: std::ops::RangeInclusive<i32> = -4..=3;

/// Runs the reconstruction with each of the eight steps `base * 2^k`,
/// `k = -4..=3`, and returns the one with the lowest final total loss.
pub fn tune_step(
    masked_ksp: &CoilStack,
    mask: &SamplingMask,
    maps: &SensitivityMaps,
    cfg: &ReconConfig,
    ground_truth: Option<&RealImage>,
    base: f64,
) -> Result<(f64, Vec<StepProbe>)> {
    let mut probes = Vec::new();
    for k in STEP_EXPONENTS {
        let step = base * 2f64.powi(k);
        let trial = ReconConfig { step, ..*cfg };
        let final_total = match gd_reconstruct(masked_ksp, mask, maps, &trial, ground_truth) {
            Ok(out) => out.trace.last().map(|r| r.total),
            Err(Error::Diverged { .. }) => None,
            Err(e) => return Err(e),
        };
        probes.push(StepProbe { step, final_total });
    }
    let best = probes
        .iter()
        .filter_map(|p| p.final_total.filter(|t| t.is_finite()).map(|t| (p.step, t)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(s, _)| s)
        .ok_or_else(|| Error::invalid("every candidate step diverged"))?;
    Ok((best, probes))
}
