//! Line-based undersampling masks over the phase-encode axis.
//!
//! A mask is a 0/1 vector over phase-encode lines, broadcast along the
//! readout axis. Every mask keeps the `acs` centermost lines, which for a
//! line count `n` are `n/2 - acs/2 .. n/2 - acs/2 + acs`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::CoilStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Uniform,
    Random,
}

/// Which image axis carries the phase-encode direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseAxis {
    Rows,
    #[default]
    Cols,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    kind: MaskKind,
    acceleration: usize,
    acs_lines: usize,
    phase_axis: PhaseAxis,
    offset: usize,
    seed: Option<u64>,
    pattern: Vec<u8>,
}

/// First index of the `acs` centermost lines out of `n`.
pub fn acs_start(n: usize, acs: usize) -> usize {
    n / 2 - acs / 2
}

fn axis_len(height: usize, width: usize, axis: PhaseAxis) -> usize {
    match axis {
        PhaseAxis::Rows => height,
        PhaseAxis::Cols => width,
    }
}

fn validate(n: usize, acceleration: usize, acs: usize) -> Result<()> {
    if acceleration == 0 {
        return Err(Error::invalid("acceleration must be at least 1"));
    }
    if n == 0 {
        return Err(Error::invalid("phase-encode axis has zero length"));
    }
    if acs > n {
        return Err(Error::invalid(format!("{acs} ACS lines exceed axis length {n}")));
    }
    Ok(())
}

/// Every `acceleration`-th line starting at `offset`, plus the ACS block.
pub fn make_uniform_mask(
    height: usize,
    width: usize,
    acceleration: usize,
    acs: usize,
    phase_axis: PhaseAxis,
    offset: usize,
) -> Result<SamplingMask> {
    let n = axis_len(height, width, phase_axis);
    validate(n, acceleration, acs)?;
    let mut pattern: Vec<u8> = (0..n)
        .map(|i| u8::from(i >= offset && (i - offset).is_multiple_of(acceleration)))
        .collect();
    let start = acs_start(n, acs);
    pattern[start..start + acs].fill(1);
    Ok(SamplingMask {
        height,
        width,
        kind: MaskKind::Uniform,
        acceleration,
        acs_lines: acs,
        phase_axis,
        offset,
        seed: None,
        pattern,
    })
}

/// ACS block plus lines drawn uniformly without replacement until
/// `max(round(n / acceleration), acs)` lines are sampled.
pub fn make_random_mask(
    height: usize,
    width: usize,
    acceleration: usize,
    acs: usize,
    seed: u64,
    phase_axis: PhaseAxis,
) -> Result<SamplingMask> {
    let n = axis_len(height, width, phase_axis);
    validate(n, acceleration, acs)?;
    let target = ((n as f64 / acceleration as f64).round() as usize).max(acs).min(n);

    let mut pattern = vec![0u8; n];
    let start = acs_start(n, acs);
    pattern[start..start + acs].fill(1);
    let candidates: Vec<usize> = (0..n).filter(|&i| pattern[i] == 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pick in index::sample(&mut rng, candidates.len(), target - acs) {
        pattern[candidates[pick]] = 1;
    }
    Ok(SamplingMask {
        height,
        width,
        kind: MaskKind::Random,
        acceleration,
        acs_lines: acs,
        phase_axis,
        offset: 0,
        seed: Some(seed),
        pattern,
    })
}

impl SamplingMask {
    /// Rebuilds a mask from stored fields, re-checking every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        height: usize,
        width: usize,
        kind: MaskKind,
        acceleration: usize,
        acs_lines: usize,
        phase_axis: PhaseAxis,
        offset: usize,
        seed: Option<u64>,
        pattern: Vec<u8>,
    ) -> Result<Self> {
        let n = axis_len(height, width, phase_axis);
        validate(n, acceleration, acs_lines)?;
        if pattern.len() != n {
            return Err(Error::invalid(format!(
                "mask pattern has {} entries, phase axis has {n}",
                pattern.len()
            )));
        }
        if pattern.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask pattern entries must be 0 or 1"));
        }
        let start = acs_start(n, acs_lines);
        if pattern[start..start + acs_lines].contains(&0) {
            return Err(Error::invalid("mask pattern does not sample every ACS line"));
        }
        Ok(SamplingMask {
            height,
            width,
            kind,
            acceleration,
            acs_lines,
            phase_axis,
            offset,
            seed,
            pattern,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn acceleration(&self) -> usize {
        self.acceleration
    }

    pub fn acs_lines(&self) -> usize {
        self.acs_lines
    }

    pub fn phase_axis(&self) -> PhaseAxis {
        self.phase_axis
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn pattern(&self) -> &[u8] {
        &self.pattern
    }

    pub fn sampled_lines(&self) -> usize {
        self.pattern.iter().map(|&v| v as usize).sum()
    }

    pub fn sampling_fraction(&self) -> f64 {
        self.sampled_lines() as f64 / self.pattern.len() as f64
    }

    /// Indices of the ACS lines along the phase-encode axis.
    pub fn acs_range(&self) -> std::ops::Range<usize> {
        let start = acs_start(self.pattern.len(), self.acs_lines);
        start..start + self.acs_lines
    }

    /// Phase-encode line index of a pixel.
    #[inline]
    pub fn line_of(&self, row: usize, col: usize) -> usize {
        match self.phase_axis {
            PhaseAxis::Rows => row,
            PhaseAxis::Cols => col,
        }
    }

    #[inline]
    pub fn is_sampled(&self, row: usize, col: usize) -> bool {
        self.pattern[self.line_of(row, col)] == 1
    }

    /// Full `height x width` 0/1 map.
    pub fn to_dense(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.height * self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(self.pattern[self.line_of(r, c)]);
            }
        }
        out
    }

    pub(crate) fn check_stack(&self, ksp: &CoilStack) -> Result<()> {
        if (ksp.height(), ksp.width()) != (self.height, self.width) {
            return Err(Error::invalid(format!(
                "mask {}x{} does not match k-space {}x{}",
                self.height,
                self.width,
                ksp.height(),
                ksp.width()
            )));
        }
        Ok(())
    }
}

/// Zeroes every unsampled entry; sampled entries are copied unchanged.
pub fn apply_mask(ksp: &CoilStack, mask: &SamplingMask) -> Result<CoilStack> {
    mask.check_stack(ksp)?;
    let dense = mask.to_dense();
    let mut out = ksp.clone();
    for c in 0..out.coils() {
        for (z, &m) in out.coil_mut(c).iter_mut().zip(&dense) {
            if m == 0 {
                *z = num_complex::Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(out)
}
