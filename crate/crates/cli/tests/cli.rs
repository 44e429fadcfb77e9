use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sardine_core::dataset::{read_raster, synthetic_scene, write_raster};
use sardine_core::model::{load_checkpoint, save_checkpoint};
use sardine_core::speckle::simulate_speckle;
use sardine_core::{SarCnnModel, SpeckleConfig};

fn sardine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sardine"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn clean_dir(root: &Path, n: u64, size: usize) -> PathBuf {
    let dir = root.join("clean");
    fs::create_dir_all(&dir).unwrap();
    for i in 0..n {
        write_raster(&synthetic_scene(size, size, i), dir.join(format!("scene{i}.sarf"))).unwrap();
    }
    dir
}

fn patch_set(root: &Path) -> PathBuf {
    let clean = clean_dir(root, 2, 64);
    let out = root.join("set.sarp");
    let r = sardine(&["build-dataset", "--mode", "synthetic", "--input", p(&clean), "--output", p(&out), "--count", "6"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    out
}

#[test]
fn simulate_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let clean = clean_dir(dir.path(), 3, 48);
    let out = dir.path().join("noisy");
    let r = sardine(&["simulate", "--input-dir", p(&clean), "--output-dir", p(&out), "--seed", "5"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let manifest = fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
    assert!(manifest.starts_with("file,seed_offset\n"));
    for i in 0..3 {
        let noisy = read_raster(out.join(format!("scene{i}.sarf"))).unwrap();
        assert_eq!(noisy.dims(), (48, 48));
    }
    assert!(fs::read_to_string(dir.path().join("noisy.config")).unwrap().contains("seed=5"));

    fs::create_dir_all(dir.path().join("empty")).unwrap();
    let r = sardine(&["simulate", "--input-dir", p(&dir.path().join("empty")), "--output-dir", p(&out)]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("no input rasters"));

    fs::write(clean.join("broken.sarf"), b"SARF junk").unwrap();
    let r = sardine(&["simulate", "--input-dir", p(&clean), "--output-dir", p(&out)]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("broken.sarf"));
}

#[test]
fn build_dataset_reports() {
    let dir = tempfile::tempdir().unwrap();
    let set = patch_set(dir.path());
    let report = fs::read_to_string(dir.path().join("set.sarp.report")).unwrap();
    for key in ["mode=synthetic", "requested=12", "generated=12", "shortfall=0", "shortfall_flag=false"] {
        assert!(report.contains(key), "{report}");
    }
    assert_eq!(sardine_core::dataset::read_patch_set(&set).unwrap().len(), 12);

    // three acquisitions of a small scene cannot supply 500 windows
    let stack = dir.path().join("stack");
    fs::create_dir_all(&stack).unwrap();
    let scene = synthetic_scene(96, 96, 3);
    for t in 0..3 {
        let look = simulate_speckle(&scene, &SpeckleConfig::single_look_amplitude(t)).unwrap();
        write_raster(&look, stack.join(format!("t{t:02}.sarf"))).unwrap();
    }
    let out = dir.path().join("real.sarp");
    let r = sardine(&[
        "build-dataset", "--mode", "multitemporal", "--input", p(&stack), "--output", p(&out),
        "--count", "500", "--split", "0,0,96,48",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let report = fs::read_to_string(dir.path().join("real.sarp.report")).unwrap();
    for key in ["eligible=", "candidates=", "mask_coverage=", "shortfall_flag=true"] {
        assert!(report.contains(key), "{report}");
    }
    let r = sardine(&["build-dataset", "--mode", "multitemporal", "--input", p(&stack), "--output", p(&out), "--split", "1,2"]);
    assert_eq!(code(&r), 2);
}

#[test]
fn zero_learning_rate_keeps_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let set = patch_set(dir.path());
    let ckpt = dir.path().join("m.srcw");
    let r = sardine(&[
        "train", "--patches", p(&set), "--output", p(&ckpt), "--depth", "3", "--width", "4",
        "--schedule", "1:0", "--batch", "4", "--seed", "8",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let trained = load_checkpoint(&ckpt).unwrap();
    let init = SarCnnModel::<f32>::build(3, 4, 8).unwrap();
    assert_eq!(trained.params(), init.params());
    let csv = fs::read_to_string(dir.path().join("m.srcw.loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("epoch,learning_rate,mean_loss\n"));
}

#[test]
fn sidecar_reproduces_training() {
    let dir = tempfile::tempdir().unwrap();
    let set = patch_set(dir.path());
    let ckpt = dir.path().join("m.srcw");
    let r = sardine(&[
        "train", "--patches", p(&set), "--output", p(&ckpt), "--depth", "3", "--width", "4",
        "--schedule", "2:0.01", "--batch", "5", "--seed", "3", "--deterministic",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let first = fs::read(&ckpt).unwrap();
    let csv = fs::read_to_string(dir.path().join("m.srcw.loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let sidecar = dir.path().join("m.srcw.config");
    fs::remove_file(&ckpt).unwrap();
    let r = sardine(&["train", "--config", p(&sidecar)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(fs::read(&ckpt).unwrap(), first);

    // explicit flags override the config file
    let other = dir.path().join("other.srcw");
    let r = sardine(&["train", "--config", p(&sidecar), "--output", p(&other), "--seed", "4"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_ne!(fs::read(&other).unwrap(), first);
    assert!(fs::read_to_string(dir.path().join("other.srcw.config")).unwrap().contains("seed=4"));
}

#[test]
fn divergence_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let set = patch_set(dir.path());
    let ckpt = dir.path().join("m.srcw");
    let r = sardine(&[
        "train", "--patches", p(&set), "--output", p(&ckpt), "--depth", "3", "--width", "4",
        "--schedule", "3:1e30", "--batch", "4",
    ]);
    assert_eq!(code(&r), 3, "{}", stderr(&r));
    assert!(stderr(&r).contains("epoch") && stderr(&r).contains("batch"));
    assert!(!ckpt.exists());
}

fn zero_residual_checkpoint(dir: &Path) -> PathBuf {
    let mut model = SarCnnModel::<f32>::build(4, 4, 1).unwrap();
    model.zero_last_layer();
    let path = dir.join("zero.srcw");
    save_checkpoint(&model, &path).unwrap();
    path
}

/// A native raster file with arbitrary samples, bypassing validation.
fn raw_raster(h: u32, w: u32, samples: &[f32]) -> Vec<u8> {
    let mut b = b"SARF".to_vec();
    b.extend_from_slice(&1u16.to_le_bytes());
    for v in [h, w, 1] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    for s in samples {
        b.extend_from_slice(&s.to_le_bytes());
    }
    let crc = crc32fast::hash(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    b
}

#[test]
fn despeckle_identity_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = zero_residual_checkpoint(dir.path());
    let input = dir.path().join("in.sarf");
    let noisy = simulate_speckle(&synthetic_scene(70, 50, 2), &SpeckleConfig::single_look_amplitude(2)).unwrap();
    write_raster(&noisy, &input).unwrap();
    let output = dir.path().join("out.sarf");
    let r = sardine(&[
        "despeckle", "--checkpoint", p(&ckpt), "--input", p(&input), "--output", p(&output), "--c", "0", "--tile", "32",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let stdout = String::from_utf8_lossy(&r.stdout);
    let secs = stdout.trim().strip_prefix("despeckle_seconds=").expect("timing line");
    assert!(secs.parse::<f64>().unwrap() >= 0.0);
    let out = read_raster(&output).unwrap();
    for (a, b) in out.data().iter().zip(noisy.data()) {
        assert!(((a - b) / b).abs() <= 1e-6);
    }

    let bad = dir.path().join("bad.sarf");
    fs::write(&bad, raw_raster(1, 3, &[1.0, 0.0, 2.0])).unwrap();
    let r = sardine(&["despeckle", "--checkpoint", p(&ckpt), "--input", p(&bad), "--output", p(&output)]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("domain"), "{}", stderr(&r));

    let r = sardine(&["despeckle", "--checkpoint", p(&input), "--input", p(&input), "--output", p(&output)]);
    assert_eq!(code(&r), 2);
}

#[test]
fn evaluate_renders_available_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let clean = synthetic_scene(40, 40, 1);
    let noisy = simulate_speckle(&clean, &SpeckleConfig::single_look_amplitude(1)).unwrap();
    let (cp, np) = (dir.path().join("clean.sarf"), dir.path().join("noisy.sarf"));
    write_raster(&clean, &cp).unwrap();
    write_raster(&noisy, &np).unwrap();

    let csv = dir.path().join("m.csv");
    let r = sardine(&["evaluate", "--filtered", p(&cp), "--reference", p(&cp), "--output", p(&csv)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let text = fs::read_to_string(&csv).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[1], row[2]), ("inf", "1"));
    assert!(!text.contains('\r'));

    let r = sardine(&["evaluate", "--filtered", p(&cp), "--noisy", p(&np)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let stdout = String::from_utf8_lossy(&r.stdout).into_owned();
    let row: Vec<&str> = stdout.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[1], row[2]), ("", ""));
    assert!(row[5].parse::<f64>().is_ok() && row[6].parse::<f64>().is_ok());

    let blocks = dir.path().join("blocks.txt");
    fs::write(&blocks, "# homogeneous\n0 0 10 10\n35 35 10 10\n").unwrap();
    let r = sardine(&["evaluate", "--filtered", p(&np), "--blocks", p(&blocks)]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("block 1"), "{}", stderr(&r));

    let r = sardine(&["evaluate", "--filtered", p(&np)]);
    assert_eq!(code(&r), 2);
}

#[test]
fn thread_settings_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let clean = clean_dir(dir.path(), 1, 40);
    let out = dir.path().join("n");
    let r = Command::new(env!("CARGO_BIN_EXE_sardine"))
        .args(["simulate", "--input-dir", p(&clean), "--output-dir", p(&out)])
        .env("SARDINE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&r), 2);
    let r = sardine(&["simulate", "--input-dir", p(&clean), "--output-dir", p(&out), "--threads", "0"]);
    assert_eq!(code(&r), 2);
    let r = Command::new(env!("CARGO_BIN_EXE_sardine"))
        .args(["simulate", "--input-dir", p(&clean), "--output-dir", p(&out)])
        .env("SARDINE_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&r), 0);
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let clean = clean_dir(dir.path(), 2, 40);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = sardine(&["simulate", "--input-dir", p(&clean), "--output-dir", p(out), "--seed", "11"]);
        assert_eq!(code(&r), 0);
    }
    for name in ["scene0.sarf", "scene1.sarf", "manifest.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
}
