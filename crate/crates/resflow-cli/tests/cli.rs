//! End-to-end checks of the command surface: the real binary for flag
//! parsing and exit codes, the in-process API for file-level contracts.

use resflow_cli::checkpoint::{self, Checkpoint};
use resflow_cli::config::{RunConfig, Variant};
use resflow_cli::run::{self, GridSpec, Product};
use resflow_core::{ClassifierHead, Flow, Scheme, StepMode, VelocityField};
use std::path::Path;
use std::process::Output;
use tempfile::tempdir;

fn resflow(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_resflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_config() -> RunConfig {
    RunConfig {
        layers: 3,
        hidden: 3,
        n_per_class: 15,
        batch_size: 10,
        epochs: 2,
        domain_samples_per_batch: 8,
        ..RunConfig::default()
    }
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, tiny_config().to_toml()).unwrap();
    path
}

#[test]
fn train_writes_the_run_directory() {
    let dir = tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out_dir = dir.path().join("run");
    let output = resflow(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("train variant=shared"), "{stdout}");
    for file in [
        run::MANIFEST_FILE,
        run::DATASET_FILE,
        run::LOG_FILE,
        run::CHECKPOINT_FILE,
    ] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }
    // The manifest is itself a loadable config equal to the resolved one.
    let manifest = RunConfig::from_file(&out_dir.join(run::MANIFEST_FILE)).unwrap();
    assert_eq!(manifest, tiny_config());
    // Log has a header plus one row per epoch.
    let log = std::fs::read_to_string(out_dir.join(run::LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,bce,wd_term,ic_term,total,train_accuracy\n"));
}

#[test]
fn unknown_config_key_exits_2_with_the_key_named() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "variant = \"shared\"\nlayerz = 4\n").unwrap();
    let output = resflow(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("layerz"), "{stderr}");
}

#[test]
fn invalid_config_value_exits_2_with_field_message() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "batch_size = 0\n").unwrap();
    let output = resflow(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8(output.stderr).unwrap().contains("batch_size"));
}

#[test]
fn zero_epochs_checkpoint_equals_initialization() {
    let dir = tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.epochs = 0;
    run::cmd_train(&cfg, dir.path()).unwrap();
    let ckpt = checkpoint::load(&dir.path().join(run::CHECKPOINT_FILE)).unwrap();

    use resflow_core::SeedableRng;
    let mut rng = resflow_core::ChaCha8Rng::seed_from_u64(cfg.seed);
    let (model, head) = resflow_core::init_model(&cfg.model_config(), &mut rng);
    assert_eq!(ckpt.model, model);
    assert_eq!(ckpt.head, head);
}

#[test]
fn identical_configs_produce_byte_identical_outputs() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run::cmd_train(&cfg, &a).unwrap();
    run::cmd_train(&cfg, &b).unwrap();
    for file in [
        run::MANIFEST_FILE,
        run::DATASET_FILE,
        run::LOG_FILE,
        run::CHECKPOINT_FILE,
    ] {
        let bytes_a = std::fs::read(a.join(file)).unwrap();
        let bytes_b = std::fs::read(b.join(file)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{file} differs");
    }
}

#[test]
fn manifest_alone_regenerates_every_output_bitwise() {
    let dir = tempdir().unwrap();
    let original = dir.path().join("orig");
    let mut cfg = tiny_config();
    cfg.variant = Variant::SharedIcDomain;
    run::cmd_train(&cfg, &original).unwrap();

    // Rerun from the written manifest only.
    let manifest = RunConfig::from_file(&original.join(run::MANIFEST_FILE)).unwrap();
    let regen = dir.path().join("regen");
    run::cmd_train(&manifest, &regen).unwrap();
    for file in [
        run::MANIFEST_FILE,
        run::DATASET_FILE,
        run::LOG_FILE,
        run::CHECKPOINT_FILE,
    ] {
        assert_eq!(
            std::fs::read(original.join(file)).unwrap(),
            std::fs::read(regen.join(file)).unwrap(),
            "{file} not regenerable from the manifest"
        );
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempdir().unwrap();
    let cfg_path = write_tiny_config(dir.path());
    let out1 = dir.path().join("s1");
    let out2 = dir.path().join("s2");
    for (out, seed) in [(&out1, "901"), (&out2, "902")] {
        let output = resflow(&[
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(output.status.success());
    }
    let m1 = RunConfig::from_file(&out1.join(run::MANIFEST_FILE)).unwrap();
    assert_eq!(m1.seed, 901);
    assert_ne!(
        std::fs::read(out1.join(run::CHECKPOINT_FILE)).unwrap(),
        std::fs::read(out2.join(run::CHECKPOINT_FILE)).unwrap()
    );
}

#[test]
fn divergence_exits_3_and_keeps_the_last_good_checkpoint() {
    let dir = tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.step_mode = resflow_cli::StepModeOpt::Absorbed;
    cfg.lr = 1e9;
    let cfg_path = dir.path().join("diverge.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let out_dir = dir.path().join("run");
    let output = resflow(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3), "{output:?}");
    assert!(out_dir.join(run::CHECKPOINT_FILE).exists());
    assert!(checkpoint::load(&out_dir.join(run::CHECKPOINT_FILE)).is_ok());
}

#[test]
fn analyze_missing_checkpoint_exits_2() {
    let output = resflow(&["analyze", "/nonexistent/checkpoint.bin"]);
    assert_eq!(output.status.code(), Some(2));
}

fn identity_checkpoint(dir: &Path, layers: usize) -> std::path::PathBuf {
    let model = Flow::shared(
        VelocityField::zeros(2, 3, true),
        layers,
        Scheme::Euler,
        StepMode::Normalized,
    )
    .unwrap();
    let ckpt = Checkpoint {
        model,
        head: ClassifierHead::zeros(2),
        variant: Variant::Shared,
    };
    let path = dir.join("identity.bin");
    checkpoint::save(&path, &ckpt).unwrap();
    path
}

#[test]
fn analyze_identity_checkpoint_prints_unit_jacobian() {
    let dir = tempdir().unwrap();
    let ckpt = identity_checkpoint(dir.path(), 4);
    let output = resflow(&[
        "analyze",
        ckpt.to_str().unwrap(),
        "--products",
        "jacobian",
        "--grid",
        "16,16",
    ]);
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(
        stdout.contains("jacobian j_min=1.0000000000000000e0 j_max=1.0000000000000000e0"),
        "{stdout}"
    );
    assert!(stdout.contains("negative_fraction=0.0000000000000000e0"));
    assert!(dir.path().join("jacobian.csv").exists());
    assert!(dir.path().join("jacobian.ppm").exists());
}

#[test]
fn analyze_writes_all_products_of_a_trained_run() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config();
    run::cmd_train(&cfg, dir.path()).unwrap();
    let ckpt_path = dir.path().join(run::CHECKPOINT_FILE);
    let output = resflow(&[
        "analyze",
        ckpt_path.to_str().unwrap(),
        "--grid",
        "12,12",
        "--box",
        "-5,5,-5,5",
    ]);
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("jacobian "));
    assert!(stdout.contains("boundary edge_count="));
    assert!(stdout.contains("trajectories snapshots=4"));
    for file in ["jacobian.csv", "jacobian.ppm", "boundary.csv", "boundary.pgm"] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
    // layers=3 → 4 snapshots, zero-padded names.
    for step in 0..4 {
        assert!(dir.path().join(format!("trajectory_{step:03}.csv")).exists());
    }
    assert!(!dir.path().join("trajectory_004.csv").exists());
}

#[test]
fn analyze_determinism_of_csv_outputs() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config();
    run::cmd_train(&cfg, dir.path()).unwrap();
    let ckpt_path = dir.path().join(run::CHECKPOINT_FILE);
    let grid = GridSpec {
        nx: 10,
        ny: 10,
        domain: resflow_core::DomainBox::default(),
    };
    let (o1, o2) = (dir.path().join("a1"), dir.path().join("a2"));
    for out in [&o1, &o2] {
        run::cmd_analyze(
            &ckpt_path,
            out,
            &[Product::Jacobian, Product::Boundary],
            &grid,
            None,
        )
        .unwrap();
    }
    for file in ["jacobian.csv", "boundary.csv"] {
        assert_eq!(
            std::fs::read(o1.join(file)).unwrap(),
            std::fs::read(o2.join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn compare_summarizes_four_runs_and_validates_seeds() {
    let dir = tempdir().unwrap();
    let mut run_dirs = Vec::new();
    for variant in Variant::ALL {
        let mut cfg = tiny_config();
        cfg.variant = variant;
        let out = dir.path().join(variant.as_str());
        run::cmd_train(&cfg, &out).unwrap();
        run_dirs.push(out);
    }
    let grid = GridSpec {
        nx: 10,
        ny: 10,
        domain: resflow_core::DomainBox::default(),
    };
    let rows = run::cmd_compare(&run_dirs, dir.path(), &grid).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].variant, "unshared");
    assert_eq!(rows[3].variant, "shared_ic_domain");
    let summary = std::fs::read_to_string(dir.path().join(run::SUMMARY_FILE)).unwrap();
    assert_eq!(summary.lines().count(), 5);

    // A run on a different dataset seed invalidates the comparison.
    let mut cfg = tiny_config();
    cfg.data_seed += 1;
    let odd = dir.path().join("odd");
    run::cmd_train(&cfg, &odd).unwrap();
    let mut mismatched = run_dirs.clone();
    mismatched[1] = odd;
    let err = run::cmd_compare(&mismatched, dir.path(), &grid).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("data_seed"));
}

#[test]
fn compare_missing_run_dir_exits_2() {
    let output = resflow(&["compare", "/nonexistent/run1", "/nonexistent/run2"]);
    assert_eq!(output.status.code(), Some(2));
    let output = resflow(&["compare"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn identical_identity_checkpoints_compare_identically() {
    let dir = tempdir().unwrap();
    let mut run_dirs = Vec::new();
    let cfg = tiny_config();
    for name in ["r1", "r2", "r3", "r4"] {
        let out = dir.path().join(name);
        std::fs::create_dir_all(&out).unwrap();
        std::fs::write(out.join(run::MANIFEST_FILE), cfg.to_toml()).unwrap();
        let dataset = resflow_core::make_spiral(&cfg.spiral_config());
        resflow_cli::csvio::write_dataset(&out.join(run::DATASET_FILE), &dataset).unwrap();
        identity_checkpoint(&out, 3);
        std::fs::rename(out.join("identity.bin"), out.join(run::CHECKPOINT_FILE)).unwrap();
        run_dirs.push(out);
    }
    let grid = GridSpec {
        nx: 8,
        ny: 8,
        domain: resflow_core::DomainBox::default(),
    };
    let rows = run::cmd_compare(&run_dirs, dir.path(), &grid).unwrap();
    for r in &rows[1..] {
        assert_eq!(r.accuracy, rows[0].accuracy);
        assert_eq!(r.j_min, rows[0].j_min);
        assert_eq!(r.j_max, rows[0].j_max);
        assert_eq!(r.mean_roundtrip_error, 0.0);
    }
}

#[test]
fn bad_grid_and_box_flags_exit_2() {
    let dir = tempdir().unwrap();
    let ckpt = identity_checkpoint(dir.path(), 3);
    for args in [
        vec!["analyze", ckpt.to_str().unwrap(), "--grid", "200"],
        vec!["analyze", ckpt.to_str().unwrap(), "--grid", "a,b"],
        vec!["analyze", ckpt.to_str().unwrap(), "--box", "1,2,3"],
        vec!["analyze", ckpt.to_str().unwrap(), "--box", "6,-6,0,1"],
        vec!["analyze", ckpt.to_str().unwrap(), "--products", "heatmap"],
    ] {
        let output = resflow(&args);
        assert_eq!(output.status.code(), Some(2), "args {args:?}");
    }
}

#[test]
fn unknown_subcommand_exits_2() {
    let output = resflow(&["frobnicate"]);
    assert_eq!(output.status.code(), Some(2));
}
