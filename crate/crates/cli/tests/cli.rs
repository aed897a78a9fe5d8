use std::path::Path;
use std::process::{Command, Output};

use ksplab::io::{ksp_to_images, read_ksp, read_pgm, read_report};

fn ksplab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ksplab"))
        .args(args)
        .current_dir(dir)
        .env_remove("KSPLAB_OUT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = ksplab(&[], dir.path());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ksplab(&["frobnicate"], dir.path())), 1);
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [
        "phantom",
        "mask",
        "recon",
        "eval",
        "loss",
        "filter-viz",
        "gradcheck",
        "experiment",
    ] {
        let out = ksplab(&[sub, "--help"], dir.path());
        assert_eq!(code(&out), 0, "{sub}");
        assert!(stdout(&out).contains("Usage"), "{sub}");
    }
}

#[test]
fn gradcheck_passes_and_fails_with_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let pass = ksplab(
        &["gradcheck", "--loss", "eagle", "--size", "20", "--seed", "3"],
        dir.path(),
    );
    assert_eq!(code(&pass), 0);
    assert!(stdout(&pass).contains("max relative error"));

    let fail = ksplab(
        &[
            "gradcheck",
            "--loss",
            "eagle",
            "--size",
            "20",
            "--seed",
            "3",
            "--tol",
            "1e-300",
        ],
        dir.path(),
    );
    assert_eq!(code(&fail), 2);
    assert!(stdout(&fail).contains("FAIL"));

    assert_eq!(code(&ksplab(&["gradcheck", "--loss", "nope"], dir.path())), 1);
}

#[test]
fn filter_viz_has_zero_at_center() {
    let dir = tempfile::tempdir().unwrap();
    let out = ksplab(
        &[
            "filter-viz",
            "--kind",
            "butterworth",
            "--cutoff",
            "0.35",
            "--order",
            "4",
            "--size",
            "64",
            "--out",
            "f",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let pgm = read_pgm(dir.path().join("f/butterworth.pgm")).unwrap();
    assert_eq!((pgm.width, pgm.height), (64, 64));
    assert_eq!(pgm.pixels[32 * 64 + 32], 0);
    assert_eq!(pgm.pixels[0], *pgm.pixels.iter().max().unwrap());
}

#[test]
fn filter_viz_sweep_writes_twelve_filters() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ksplab(&["filter-viz", "--sweep", "--out", "s"], dir.path())), 0);
    assert_eq!(
        std::fs::read_dir(dir.path().join("s"))
            .unwrap()
            .filter(|e| { e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm") })
            .count(),
        12
    );
}

#[test]
fn bad_cutoff_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ksplab(&["filter-viz", "--cutoff", "0.9"], dir.path())), 1);
}

#[test]
fn pipeline_from_phantom_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&ksplab(
            &["phantom", "--height", "24", "--width", "32", "--coils", "4", "--seed", "2", "--out", "p"],
            d
        )),
        0
    );
    assert_eq!(
        code(&ksplab(
            &[
                "mask",
                "--ksp",
                "p/kspace.ksp",
                "-R",
                "4",
                "--acs",
                "8",
                "--output",
                "m.txt",
                "--masked",
                "p/masked.ksp"
            ],
            d
        )),
        0
    );
    let masked = read_ksp(d.join("p/masked.ksp")).unwrap();
    assert!(masked.mask.is_some());

    assert_eq!(
        code(&ksplab(
            &["recon", "--input", "p/masked.ksp", "--iterations", "20", "--out", "r"],
            d
        )),
        0
    );
    let trace = std::fs::read_to_string(d.join("r/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 22);
    let recon = ksp_to_images(&read_ksp(d.join("r/recon.ksp")).unwrap()).unwrap();
    assert_eq!(recon[0].shape(), (24, 32));

    let eval = ksplab(
        &[
            "eval",
            "--recon",
            "r/recon.ksp",
            "--truth",
            "p/truth.ksp",
            "--output",
            "e.csv",
        ],
        d,
    );
    assert_eq!(code(&eval), 0);
    let rows = read_report(d.join("e.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].ssim > 0.5 && rows[0].ssim <= 1.0);

    let loss = ksplab(
        &[
            "loss",
            "--pred",
            "r/predicted.ksp",
            "--full",
            "p/kspace.ksp",
            "--truth",
            "p/truth.ksp",
        ],
        d,
    );
    assert_eq!(code(&loss), 0);
    let json: serde_json::Value = serde_json::from_slice(&loss.stdout).unwrap();
    assert!(json["total"].as_f64().unwrap() > 0.0);
    assert!(json["vgg"].is_null());

    let unnorm = ksplab(
        &[
            "loss",
            "--pred",
            "r/predicted.ksp",
            "--full",
            "p/kspace.ksp",
            "--truth",
            "p/truth.ksp",
            "--unnormalized",
        ],
        d,
    );
    let json_sum: serde_json::Value = serde_json::from_slice(&unnorm.stdout).unwrap();
    assert!(json_sum["fidelity"].as_f64().unwrap() > json["fidelity"].as_f64().unwrap());
}

#[test]
fn out_dir_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ksplab"))
        .args(["phantom", "--height", "8", "--width", "8", "--coils", "2"])
        .current_dir(dir.path())
        .env("KSPLAB_OUT", "from_env")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("from_env/truth.ksp").exists());
}

#[test]
fn phantom_seed_controls_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (seed, out) in [("5", "a"), ("5", "b"), ("6", "c")] {
        let args = [
            "phantom", "--height", "16", "--width", "16", "--coils", "2", "--seed", seed, "--out", out,
        ];
        assert_eq!(code(&ksplab(&args, d)), 0);
    }
    let read = |p: &str| std::fs::read(d.join(p).join("kspace.ksp")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn corrupt_containers_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&ksplab(
            &["phantom", "--height", "16", "--width", "16", "--coils", "2", "--out", "p"],
            d
        )),
        0
    );
    assert_eq!(
        code(&ksplab(
            &["mask", "--height", "16", "--width", "16", "-R", "4", "--acs", "4"],
            d
        )),
        0
    );
    let full = std::fs::read(d.join("p/kspace.ksp")).unwrap();
    std::fs::write(d.join("short.ksp"), &full[..full.len() - 3]).unwrap();
    let mut magic = full.clone();
    magic[0] = b'X';
    std::fs::write(d.join("magic.ksp"), magic).unwrap();
    for file in ["short.ksp", "magic.ksp"] {
        let out = ksplab(&["recon", "--input", file, "--mask", "mask.txt", "--out", "r"], d);
        assert_eq!(code(&out), 2, "{file}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("format error"));
    }
    assert_eq!(
        code(&ksplab(&["recon", "--input", "missing.ksp", "--mask", "mask.txt"], d)),
        2
    );
}

#[test]
fn recon_without_mask_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ksplab(
        &[
            "phantom", "--height", "16", "--width", "16", "--coils", "2", "--out", "p",
        ],
        d,
    );
    assert_eq!(code(&ksplab(&["recon", "--input", "p/kspace.ksp", "--out", "r"], d)), 1);
}

#[test]
fn experiment_runs_a_small_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let printed = ksplab(&["experiment", "--print-default"], d);
    assert_eq!(code(&printed), 0);
    let mut manifest: serde_json::Value = serde_json::from_slice(&printed.stdout).unwrap();
    assert_eq!(manifest["groups"].as_array().unwrap().len(), 11);

    manifest["groups"].as_array_mut().unwrap().truncate(2);
    manifest["recon"]["iterations"] = 5.into();
    std::fs::write(d.join("m.json"), manifest.to_string()).unwrap();
    let out = ksplab(&["experiment", "--manifest", "m.json", "--out", "x"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_report(d.join("x/report.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].group, "total");

    manifest["groups"][0]["accelerations"] = serde_json::json!([]);
    std::fs::write(d.join("bad.json"), manifest.to_string()).unwrap();
    assert_eq!(code(&ksplab(&["experiment", "--manifest", "bad.json"], d)), 1);
}
