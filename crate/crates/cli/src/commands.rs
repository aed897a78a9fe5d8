use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ksplab::calibration::estimate_sens_maps;
use ksplab::experiment::{default_manifest, run_experiment, write_outcome, ExperimentManifest, REPORT_FILE};
use ksplab::filters::{highpass_filter, HighPassSpec};
use ksplab::io::{
    aggregate_row, images_to_ksp, ksp_to_images, read_ksp, read_ksp_header, read_mask_text, write_ksp, write_mask_text,
    write_pgm, write_report, write_report_to, write_trace, KspData, PgmNormalization, ReportRow,
};
use ksplab::losses::gradcheck::{grad_check, LossKind};
use ksplab::losses::{total_loss, ConvStack, FeatureExtractor, LossConfig, LossWeights, Normalization};
use ksplab::metrics::{evaluate, MetricsConfig};
use ksplab::phantom::{make_phantom, simulate_kspace, PhantomKind, PhantomSpec};
use ksplab::recon::{gd_reconstruct, tune_step, ReconConfig, ReconMethod};
use ksplab::sampling::{apply_mask, make_random_mask, make_uniform_mask, PhaseAxis, SamplingMask};
use ksplab::transforms::{ifft2c_coils, rss_combine, CoilStack, RealImage};
use ksplab::{Error, Result};

use crate::{
    AxisArg, Command, EvalArgs, ExperimentArgs, FilterKindArg, FilterVizArgs, GradcheckArgs, LossArgs, MaskArgs,
    MaskKindArg, MethodArg, PhantomArgs, PhantomKindArg, ReconArgs, WeightArgs,
};

const SWEEP_ORDERS: [u32; 4] = [1, 2, 4, 8];
const SWEEP_CUTOFFS: [f64; 3] = [0.2, 0.35, 0.5];

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Phantom(a) => phantom(a),
        Command::Mask(a) => mask(a),
        Command::Recon(a) => recon(a),
        Command::Eval(a) => eval(a),
        Command::Loss(a) => loss(a),
        Command::FilterViz(a) => filter_viz(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Experiment(a) => experiment(a),
    }
    .map(|()| ExitCode::SUCCESS)
    .or_else(|e| match e {
        Failure::Check => Ok(ExitCode::from(2)),
        Failure::Error(e) => Err(e),
    })
}

/// A command either fails with an error or completes a check that did not
/// pass.
enum Failure {
    Error(Error),
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Error(Error::InvalidArgument(msg.into()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Multi-frame containers get one preview per frame.
fn frame_name(stem: &str, frame: usize, frames: usize, ext: &str) -> String {
    if frames == 1 {
        format!("{stem}.{ext}")
    } else {
        format!("{stem}_f{frame}.{ext}")
    }
}

fn write_previews(images: &[RealImage], dir: &Path, stem: &str) -> Result<()> {
    for (i, img) in images.iter().enumerate() {
        write_pgm(
            img,
            dir.join(frame_name(stem, i, images.len(), "pgm")),
            PgmNormalization::MinMax,
        )?;
    }
    Ok(())
}

fn phantom(a: PhantomArgs) -> Outcome {
    let spec = PhantomSpec {
        height: a.height,
        width: a.width,
        coils: a.coils,
        seed: a.seed,
        kind: match a.kind {
            PhantomKindArg::SheppLogan => PhantomKind::SheppLogan,
            PhantomKindArg::ShortAxis => PhantomKind::ShortAxis,
        },
        frames: a.frames,
    };
    let phantom = make_phantom(&spec)?;
    let kspace = phantom
        .frames
        .iter()
        .map(|f| simulate_kspace(&ksplab::transforms::ComplexImage::from_real(f), &phantom.maps))
        .collect::<Result<Vec<_>>>()?;
    let dir = &a.out.out;
    create_dir(dir)?;
    let meta = serde_json::to_value(spec).map_err(Error::from)?;
    write_ksp(
        &KspData {
            framed: kspace.len() > 1,
            frames: kspace,
            dtype: Default::default(),
            mask: None,
            meta: serde_json::json!({ "phantom": meta }),
        },
        dir.join("kspace.ksp"),
    )?;
    let mut truth = images_to_ksp(&phantom.frames)?;
    truth.meta = serde_json::json!({ "phantom": meta });
    write_ksp(&truth, dir.join("truth.ksp"))?;
    write_previews(&phantom.frames, dir, "truth")?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn mask(a: MaskArgs) -> Outcome {
    let input = a.ksp.as_deref().map(read_ksp).transpose()?;
    let (h, w) = match &input {
        Some(d) => {
            let (_, h, w) = d.frames[0].shape();
            (h, w)
        }
        None => (a.height.unwrap_or(0), a.width.unwrap_or(0)),
    };
    let axis = match a.axis {
        AxisArg::Rows => PhaseAxis::Rows,
        AxisArg::Cols => PhaseAxis::Cols,
    };
    let mask = match a.kind {
        MaskKindArg::Uniform => make_uniform_mask(h, w, a.acceleration, a.acs, axis, a.offset)?,
        MaskKindArg::Random => make_random_mask(h, w, a.acceleration, a.acs, a.seed, axis)?,
    };
    write_mask_text(&mask, &a.output)?;
    println!(
        "{} of {} lines sampled ({:.4})",
        mask.sampled_lines(),
        mask.pattern().len(),
        mask.sampling_fraction()
    );
    if let (Some(mut data), Some(path)) = (input, a.masked) {
        data.frames = data
            .frames
            .iter()
            .map(|f| apply_mask(f, &mask))
            .collect::<Result<Vec<_>>>()?;
        data.mask = Some(mask);
        write_ksp(&data, path)?;
    }
    Ok(())
}

fn apply_weights(base: LossWeights, a: &WeightArgs) -> LossWeights {
    LossWeights {
        alpha1: a.alpha1.unwrap_or(base.alpha1),
        alpha2: a.alpha2.unwrap_or(base.alpha2),
        alpha3: a.alpha3.unwrap_or(base.alpha3),
        alpha4: a.alpha4.unwrap_or(base.alpha4),
        alpha5: a.alpha5.unwrap_or(base.alpha5),
        beta: a.beta.unwrap_or(base.beta),
    }
}

fn read_images(path: &Path) -> Result<Vec<RealImage>> {
    ksp_to_images(&read_ksp(path)?)
}

fn recon(a: ReconArgs) -> Outcome {
    // Header first so a bad file is rejected before the payload is read.
    read_ksp_header(&a.input)?;
    let data = read_ksp(&a.input)?;
    let mask: SamplingMask = match (&a.mask, &data.mask) {
        (Some(path), _) => read_mask_text(path)?,
        (None, Some(m)) => m.clone(),
        (None, None) => return Err(invalid("container has no mask; pass --mask")),
    };
    let truth = a.truth.as_deref().map(read_images).transpose()?;
    if let Some(t) = &truth {
        if t.len() != data.frames.len() {
            return Err(invalid(format!(
                "truth has {} frames, k-space has {}",
                t.len(),
                data.frames.len()
            )));
        }
    }

    let base = if a.oracle {
        ReconConfig::oracle()
    } else {
        ReconConfig::default()
    };
    let mut cfg = ReconConfig {
        method: match a.method {
            MethodArg::ZeroFilled => ReconMethod::ZeroFilled,
            MethodArg::Gd => ReconMethod::Gd,
        },
        iterations: a.iterations.unwrap_or(base.iterations),
        step: a.step.unwrap_or(base.step),
        weights: apply_weights(base.weights, &a.weights),
        dc_every: a.dc_every.unwrap_or(base.dc_every),
        extractor_seed: a.seed,
        ..base
    };
    cfg.validate()?;

    let dir = &a.out.out;
    create_dir(dir)?;
    let frames = data.frames.len();
    let mut images = Vec::with_capacity(frames);
    let mut predicted = Vec::with_capacity(frames);
    for (i, masked) in data.frames.iter().enumerate() {
        let gt = truth.as_ref().map(|t| &t[i]);
        let maps = estimate_sens_maps(masked, &mask)?;
        if a.tune && cfg.method == ReconMethod::Gd && i == 0 {
            let (step, probes) = tune_step(masked, &mask, &maps, &cfg, gt, cfg.step)?;
            for p in &probes {
                match p.final_total {
                    Some(t) => println!("step {:.3e}: final total {t:.6e}", p.step),
                    None => println!("step {:.3e}: diverged", p.step),
                }
            }
            println!("selected step {step:.3e}");
            cfg.step = step;
        }
        let out = gd_reconstruct(masked, &mask, &maps, &cfg, gt)?;
        if !out.trace.is_empty() {
            write_trace(&out.trace, dir.join(frame_name("trace", i, frames, "csv")))?;
        }
        predicted.push(match &out.estimate {
            Some(x) => simulate_kspace(x, &maps)?,
            None => masked.clone(),
        });
        images.push(out.image);
    }

    let mut image_data = images_to_ksp(&images)?;
    image_data.meta = serde_json::json!({ "recon": serde_json::to_value(cfg).map_err(Error::from)? });
    write_ksp(&image_data, dir.join("recon.ksp"))?;
    write_ksp(
        &KspData {
            framed: data.framed,
            frames: predicted,
            dtype: Default::default(),
            mask: None,
            meta: serde_json::Value::Null,
        },
        dir.join("predicted.ksp"),
    )?;
    write_previews(&images, dir, "recon")?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let recon = read_images(&a.recon)?;
    let truth = read_images(&a.truth)?;
    if recon.len() != truth.len() {
        return Err(invalid(format!(
            "recon has {} frames, truth has {}",
            recon.len(),
            truth.len()
        )));
    }
    let cfg = MetricsConfig::default();
    let mut rows = Vec::with_capacity(recon.len() + 1);
    for (slice, (img, gt)) in recon.iter().zip(&truth).enumerate() {
        let m = evaluate(img, gt, &cfg)?;
        rows.push(ReportRow {
            group: a.group.clone(),
            acceleration: a.acceleration,
            slice: Some(slice),
            ssim: m.ssim,
            psnr: m.psnr,
            nmse: m.nmse,
            hf_nmse: m.hf_nmse,
            eagle: None,
            fidelity: None,
            reg: None,
            total: None,
        });
    }
    rows.push(aggregate_row(&rows, ksplab::experiment::TOTAL_LABEL));
    match &a.output {
        Some(path) => write_report(&rows, path)?,
        None => write_report_to(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

fn single_frame(path: &Path) -> Result<CoilStack> {
    let mut data = read_ksp(path)?;
    if data.frames.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "{} has {} frames; loss expects one",
            path.display(),
            data.frames.len()
        )));
    }
    Ok(data.frames.remove(0))
}

fn single_image(path: &Path) -> Result<RealImage> {
    let mut images = read_images(path)?;
    if images.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "{} has {} frames; loss expects one",
            path.display(),
            images.len()
        )));
    }
    Ok(images.remove(0))
}

fn loss(a: LossArgs) -> Outcome {
    let pred = single_frame(&a.pred)?;
    let full = single_frame(&a.full)?;
    let truth = single_image(&a.truth)?;
    let image = match &a.image {
        Some(p) => single_image(p)?,
        None => rss_combine(&ifft2c_coils(&pred)?),
    };
    let cfg = LossConfig {
        weights: apply_weights(LossWeights::default(), &a.weights),
        normalization: if a.unnormalized {
            Normalization::Sum
        } else {
            Normalization::Mean
        },
        ..LossConfig::default()
    };
    let stack = a.extractor_seed.map(ConvStack::reference);
    let extractor = stack.as_ref().map(|s| s as &dyn FeatureExtractor);
    let r = total_loss(&pred, &full, &image, &truth, &cfg, extractor)?;
    let json = serde_json::json!({
        "fidelity": r.fidelity,
        "ssim": r.ssim,
        "eagle": r.eagle,
        "vgg": r.vgg,
        "reg": r.reg,
        "total": r.total,
        "weights": cfg.weights,
        "normalization": cfg.normalization,
    });
    println!("{}", serde_json::to_string_pretty(&json).map_err(Error::from)?);
    Ok(())
}

fn filter_spec(kind: FilterKindArg, cutoff: f64, order: u32) -> HighPassSpec {
    match kind {
        FilterKindArg::Butterworth => HighPassSpec::butterworth(cutoff, order),
        FilterKindArg::Gaussian => HighPassSpec::gaussian(cutoff),
    }
}

fn render(spec: &HighPassSpec, size: usize, path: &Path) -> Result<()> {
    let h = highpass_filter(size, size, spec)?;
    write_pgm(&h, path, PgmNormalization::Fixed { lo: 0.0, hi: 1.0 })?;
    println!(
        "{}: H(center) = {}, H(cutoff) = {:.6}",
        path.display(),
        h.get(size / 2, size / 2),
        spec.response(spec.cutoff)
    );
    Ok(())
}

fn filter_viz(a: FilterVizArgs) -> Outcome {
    if a.size < 2 {
        return Err(invalid("size must be at least 2"));
    }
    let dir = &a.out.out;
    create_dir(dir)?;
    if a.sweep {
        let orders: &[u32] = match a.kind {
            FilterKindArg::Butterworth => &SWEEP_ORDERS,
            FilterKindArg::Gaussian => &[1],
        };
        for &order in orders {
            for cutoff in SWEEP_CUTOFFS {
                let spec = filter_spec(a.kind, cutoff, order);
                let name = match a.kind {
                    FilterKindArg::Butterworth => format!("butterworth_o{order}_c{cutoff}.pgm"),
                    FilterKindArg::Gaussian => format!("gaussian_c{cutoff}.pgm"),
                };
                render(&spec, a.size, &dir.join(name))?;
            }
        }
    } else {
        let spec = filter_spec(a.kind, a.cutoff, a.order);
        let name = match a.kind {
            FilterKindArg::Butterworth => "butterworth.pgm",
            FilterKindArg::Gaussian => "gaussian.pgm",
        };
        render(&spec, a.size, &dir.join(name))?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    let kind: LossKind = a.loss.parse()?;
    let eps = a.eps.unwrap_or(kind.default_epsilon());
    let tol = a.tol.unwrap_or(kind.default_tolerance());
    let r = grad_check(kind, a.size, a.seed, eps, tol)?;
    println!(
        "{} seed {}: max relative error {:.3e} (tolerance {:.0e}, {} coordinates, {} skipped, {} near-zero bins) {}",
        r.loss,
        a.seed,
        r.max_rel_error,
        r.tolerance,
        r.checked,
        r.skipped,
        r.near_zero_bins,
        if r.passed { "PASS" } else { "FAIL" }
    );
    if r.passed {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn experiment(a: ExperimentArgs) -> Outcome {
    if a.print_default {
        let mut out = std::io::stdout().lock();
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&default_manifest()).map_err(Error::from)?
        )?;
        return Ok(());
    }
    let mut manifest = match &a.manifest {
        Some(path) => ExperimentManifest::load(path)?,
        None => default_manifest(),
    };
    if let Some(seed) = a.seed {
        manifest.seed = seed;
    }
    manifest.tune_step |= a.tune_step;
    let dir: PathBuf = a
        .out
        .or_else(|| manifest.output_dir.clone())
        .or_else(|| std::env::var_os("KSPLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("ksplab-out"));
    let outcome = run_experiment(&manifest)?;
    write_outcome(&outcome, &dir)?;
    for e in &outcome.errors {
        eprintln!("group {} at {}x failed: {}", e.group, e.acceleration, e.message);
    }
    if let Some(total) = outcome.rows.last() {
        println!(
            "{} rows; totals: ssim {:.4}, psnr {:.2}, nmse {:.4e}, hf_nmse {:.4e}",
            outcome.rows.len(),
            total.ssim,
            total.psnr,
            total.nmse,
            total.hf_nmse
        );
    }
    println!("wrote {}", dir.join(REPORT_FILE).display());
    Ok(())
}
