//! Grouped evaluation harness.
//!
//! Every group x acceleration job runs phantom -> simulate -> mask ->
//! calibrate -> zero-filled and configured reconstruction -> metrics and
//! losses. Jobs run in parallel and rows are assembled in manifest order.
//! A failing job removes its whole group from the report and is listed in
//! the error rows instead.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::estimate_sens_maps;
use crate::error::{Error, Result};
use crate::io::{aggregate_row, write_report, ReportRow};
use crate::losses::{total_loss, EagleSpec, LossConfig, LossWeights};
use crate::metrics::{evaluate, Metrics, MetricsConfig};
use crate::phantom::{make_phantom, simulate_kspace, PhantomKind, PhantomSpec};
use crate::recon::{gd_reconstruct, tune_step, zero_filled, ReconConfig, ReconMethod, StepProbe};
use crate::sampling::{apply_mask, make_random_mask, make_uniform_mask, MaskKind, PhaseAxis, SamplingMask};
use crate::transforms::{ComplexImage, RealImage};

pub const ALLOWED_ACCELERATIONS: [usize; 3] = [4, 8, 10];
pub const TOTAL_LABEL: &str = "total";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub phantom: PhantomSpec,
    pub accelerations: Vec<usize>,
    #[serde(default = "default_mask")]
    pub mask: MaskKind,
    #[serde(default = "default_acs")]
    pub acs: usize,
    /// Provenance only; has no effect on evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

fn default_mask() -> MaskKind {
    MaskKind::Uniform
}

/// Eight lines keep the calibration block near the same fraction of a
/// 64-line desk matrix that sixteen lines are of a full-size acquisition;
/// sixteen would leave 8x and 10x with identical line counts.
fn default_acs() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub recon: ReconConfig,
    /// Weights of the reported loss columns.
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub eagle: EagleSpec,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Probe eight steps around `recon.step` on the first job before the
    /// run; the chosen step is written into the resolved manifest.
    #[serde(default)]
    pub tune_step: bool,
    /// Filled in by a run that tuned its step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_probes: Option<Vec<StepProbe>>,
}

impl ExperimentManifest {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::invalid("manifest needs at least one group"));
        }
        for g in &self.groups {
            if g.accelerations.is_empty() {
                return Err(Error::invalid(format!("group '{}' has no accelerations", g.name)));
            }
            if let Some(r) = g.accelerations.iter().find(|r| !ALLOWED_ACCELERATIONS.contains(r)) {
                return Err(Error::invalid(format!(
                    "group '{}': acceleration {r} is not one of {ALLOWED_ACCELERATIONS:?}",
                    g.name
                )));
            }
            g.phantom.validate()?;
        }
        self.recon.validate()?;
        self.weights.validate()?;
        self.eagle.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// The eleven acquisition groups at roughly one eighth of their matrix
/// size, all at 8x. Groups without a known matrix use 32x64.
pub fn default_manifest() -> ExperimentManifest {
    let groups = [
        ("aorta_sag", 32, 64, 2),
        ("aorta_tra", 32, 64, 2),
        ("cine_lax204", 26, 56, 2),
        ("cine_lax168", 21, 56, 2),
        ("cine_sax246", 31, 64, 2),
        ("cine_sax162", 20, 64, 1),
        ("cine_sax204", 26, 64, 1),
        ("cine_lvot", 32, 64, 2),
        ("T1map", 32, 64, 2),
        ("T2map", 32, 64, 4),
        ("tagging", 32, 64, 2),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (name, h, w, batch))| GroupSpec {
        name: name.to_string(),
        phantom: PhantomSpec {
            height: h,
            width: w,
            coils: 10,
            seed: i as u64,
            kind: PhantomKind::ShortAxis,
            frames: 1,
        },
        accelerations: vec![8],
        mask: MaskKind::Uniform,
        acs: default_acs(),
        batch_size: Some(batch),
    })
    .collect();
    ExperimentManifest {
        groups,
        recon: ReconConfig::default(),
        weights: LossWeights::default(),
        eagle: EagleSpec::default(),
        metrics: MetricsConfig::default(),
        output_dir: None,
        seed: 0,
        tune_step: false,
        step_probes: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub group: String,
    pub acceleration: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    /// Configured reconstruction: one row per group, acceleration and
    /// slice, then the totals row.
    pub rows: Vec<ReportRow>,
    /// Zero-filled baseline in the same layout.
    pub zero_filled_rows: Vec<ReportRow>,
    pub errors: Vec<ErrorRow>,
    pub resolved: ExperimentManifest,
}

/// SplitMix64 finalizer; decorrelates seeds derived from small integers.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    mix(mix(base ^ mix(a)) ^ b)
}

/// Simulated inputs of one group x acceleration job.
pub struct Job {
    pub frames: Vec<RealImage>,
    pub full: Vec<crate::transforms::CoilStack>,
    pub masked: Vec<crate::transforms::CoilStack>,
    pub mask: SamplingMask,
}

pub fn prepare_job(manifest: &ExperimentManifest, gi: usize, acceleration: usize) -> Result<Job> {
    let g = &manifest.groups[gi];
    let spec = PhantomSpec {
        seed: derive_seed(manifest.seed, gi as u64, g.phantom.seed),
        ..g.phantom
    };
    let phantom = make_phantom(&spec)?;
    let (h, w) = (spec.height, spec.width);
    let mask = match g.mask {
        MaskKind::Uniform => make_uniform_mask(h, w, acceleration, g.acs, PhaseAxis::Cols, 0)?,
        MaskKind::Random => make_random_mask(
            h,
            w,
            acceleration,
            g.acs,
            derive_seed(manifest.seed, gi as u64, 1000 + acceleration as u64),
            PhaseAxis::Cols,
        )?,
    };
    let mut full = Vec::new();
    let mut masked = Vec::new();
    for frame in &phantom.frames {
        let k = simulate_kspace(&ComplexImage::from_real(frame), &phantom.maps)?;
        masked.push(apply_mask(&k, &mask)?);
        full.push(k);
    }
    Ok(Job {
        frames: phantom.frames,
        full,
        masked,
        mask,
    })
}

struct JobRows {
    recon: Vec<ReportRow>,
    zero_filled: Vec<ReportRow>,
}

fn row(group: &str, acceleration: usize, slice: usize, m: &Metrics) -> ReportRow {
    ReportRow {
        group: group.to_string(),
        acceleration: Some(acceleration),
        slice: Some(slice),
        ssim: m.ssim,
        psnr: m.psnr,
        nmse: m.nmse,
        hf_nmse: m.hf_nmse,
        eagle: None,
        fidelity: None,
        reg: None,
        total: None,
    }
}

fn run_job(manifest: &ExperimentManifest, gi: usize, acceleration: usize) -> Result<JobRows> {
    let name = &manifest.groups[gi].name;
    let job = prepare_job(manifest, gi, acceleration)?;
    let loss_cfg = LossConfig {
        weights: manifest.weights,
        eagle: manifest.eagle,
        ssim: manifest.metrics.ssim,
        normalization: manifest.recon.normalization,
    };
    let mut out = JobRows {
        recon: Vec::new(),
        zero_filled: Vec::new(),
    };
    for (slice, gt) in job.frames.iter().enumerate() {
        let masked = &job.masked[slice];
        let full = &job.full[slice];

        let zf = zero_filled(masked)?;
        let zf_losses = total_loss(masked, full, &zf, gt, &loss_cfg, None)?;
        let mut zf_row = row(name, acceleration, slice, &evaluate(&zf, gt, &manifest.metrics)?);
        fill_losses(&mut zf_row, &zf_losses);
        out.zero_filled.push(zf_row);

        let maps = estimate_sens_maps(masked, &job.mask)?;
        let rec = gd_reconstruct(masked, &job.mask, &maps, &manifest.recon, Some(gt))?;
        let k_pred = match &rec.estimate {
            Some(x) => simulate_kspace(x, &maps)?,
            None => masked.clone(),
        };
        let losses = total_loss(&k_pred, full, &rec.image, gt, &loss_cfg, None)?;
        let mut r = row(name, acceleration, slice, &evaluate(&rec.image, gt, &manifest.metrics)?);
        fill_losses(&mut r, &losses);
        out.recon.push(r);
    }
    Ok(out)
}

fn fill_losses(row: &mut ReportRow, l: &crate::losses::LossReport) {
    row.eagle = l.eagle;
    row.fidelity = l.fidelity;
    row.reg = l.reg;
    row.total = Some(l.total);
}

pub fn run_experiment(manifest: &ExperimentManifest) -> Result<ExperimentOutcome> {
    manifest.validate()?;
    let mut resolved = manifest.clone();
    if manifest.tune_step && manifest.recon.method == ReconMethod::Gd {
        let acceleration = manifest.groups[0].accelerations[0];
        let job = prepare_job(manifest, 0, acceleration)?;
        let maps = estimate_sens_maps(&job.masked[0], &job.mask)?;
        let (step, probes) = tune_step(
            &job.masked[0],
            &job.mask,
            &maps,
            &manifest.recon,
            Some(&job.frames[0]),
            manifest.recon.step,
        )?;
        resolved.recon.step = step;
        resolved.step_probes = Some(probes);
        resolved.tune_step = false;
    }

    let jobs: Vec<(usize, usize)> = resolved
        .groups
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| g.accelerations.iter().map(move |&r| (gi, r)))
        .collect();
    let results: Vec<Result<JobRows>> = jobs.par_iter().map(|&(gi, r)| run_job(&resolved, gi, r)).collect();

    let mut rows = Vec::new();
    let mut zf_rows = Vec::new();
    let mut errors = Vec::new();
    for (gi, g) in resolved.groups.iter().enumerate() {
        let mine: Vec<_> = jobs
            .iter()
            .zip(&results)
            .filter(|((j, _), _)| *j == gi)
            .map(|((_, r), res)| (*r, res))
            .collect();
        let failed: Vec<_> = mine
            .iter()
            .filter_map(|(r, res)| res.as_ref().err().map(|e| (*r, e)))
            .collect();
        if failed.is_empty() {
            for (_, res) in mine {
                let jr = res.as_ref().expect("checked");
                rows.extend(jr.recon.iter().cloned());
                zf_rows.extend(jr.zero_filled.iter().cloned());
            }
        } else {
            errors.extend(failed.into_iter().map(|(r, e)| ErrorRow {
                group: g.name.clone(),
                acceleration: r,
                message: e.to_string(),
            }));
        }
    }
    if !rows.is_empty() {
        let t = aggregate_row(&rows, TOTAL_LABEL);
        rows.push(t);
        let t = aggregate_row(&zf_rows, TOTAL_LABEL);
        zf_rows.push(t);
    }
    Ok(ExperimentOutcome {
        rows,
        zero_filled_rows: zf_rows,
        errors,
        resolved,
    })
}

/// File names written by [`write_outcome`].
pub const REPORT_FILE: &str = "report.csv";
pub const ZERO_FILLED_FILE: &str = "zero_filled.csv";
pub const ERRORS_FILE: &str = "errors.csv";
pub const RESOLVED_FILE: &str = "manifest.resolved.json";

pub fn write_outcome(outcome: &ExperimentOutcome, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_report(&outcome.rows, dir.join(REPORT_FILE))?;
    write_report(&outcome.zero_filled_rows, dir.join(ZERO_FILLED_FILE))?;
    let mut w = csv::Writer::from_path(dir.join(ERRORS_FILE))?;
    w.write_record(["group", "acceleration", "message"])?;
    for e in &outcome.errors {
        w.write_record([e.group.as_str(), &e.acceleration.to_string(), e.message.as_str()])?;
    }
    w.flush()?;
    let mut json = serde_json::to_string_pretty(&outcome.resolved)?;
    json.push('\n');
    fs::write(dir.join(RESOLVED_FILE), json)?;
    Ok(())
}
