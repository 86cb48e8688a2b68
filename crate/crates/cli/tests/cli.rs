use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sp4d::io::checkpoint::decode_checkpoint;
use sp4d::io::image::{read_pfm, read_rgb, write_mask, write_rgb};
use sp4d::io::{load_dataset, save_checkpoint, Split};
use sp4d::metrics::psnr;

fn sp4d(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sp4d"))
        .current_dir(dir)
        .env_remove("SP4D_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sp4d(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SCENE: [&str; 8] = [
    "--set",
    "synthetic.frames=8",
    "--set",
    "synthetic.gaussians=50",
    "--set",
    "synthetic.width=32",
    "--set",
    "synthetic.height=32",
];

fn make_scene(dir: &Path, motion: &str) -> PathBuf {
    let motion = format!("synthetic.motion={motion}");
    let mut args = vec!["make-synthetic", "--out", "scene", "--set", motion.as_str()];
    args.extend(SCENE);
    ok(dir, &args);
    dir.join("scene")
}

fn train_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "train",
        "--set",
        "data.path=scene",
        "--set",
        "train.iterations=30",
        "--set",
        "train.eval_interval=10",
        "--set",
        "train.init_points=200",
        "--set",
    ];
    args.push(out);
    args.extend(extra);
    args
}

#[test]
fn check_grad_gate_and_fault_injection() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["check-grad"]);
    assert!(text.contains("passed"));

    let json = ok(dir.path(), &["check-grad", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["reports"].as_array().unwrap().len(), 2);

    let bad = sp4d(dir.path(), &["check-grad", "--inject-fault", "scales"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAILED for groups: scales"));

    let unknown = sp4d(dir.path(), &["check-grad", "--inject-fault", "wings"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn train_writes_checkpoints_metrics_and_config() {
    let dir = tempfile::tempdir().unwrap();
    make_scene(dir.path(), "oscillating");
    ok(dir.path(), &train_args("output.dir=run", &[]));
    let run = dir.path().join("run");
    for name in ["checkpoint_000010.sp4d", "checkpoint_000020.sp4d", "checkpoint_000030.sp4d", "final.sp4d"] {
        assert!(run.join(name).is_file(), "missing {name}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 31);
    let ck = decode_checkpoint(&std::fs::read(run.join("final.sp4d")).unwrap()).unwrap();
    assert_eq!(ck.iteration, 30);
    let config = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(config.contains("iterations = 30"));

    // The resolved config reproduces the run.
    ok(dir.path(), &["train", "--config", "run/config.toml", "--set", "output.dir=again"]);
    let again = dir.path().join("again");
    assert!(std::fs::read(run.join("final.sp4d")).unwrap() == std::fs::read(again.join("final.sp4d")).unwrap());
    assert_eq!(metrics, std::fs::read_to_string(again.join("metrics.csv")).unwrap());
}

#[test]
fn zero_iterations_write_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    make_scene(dir.path(), "oscillating");
    ok(dir.path(), &train_args("output.dir=run", &["--set", "train.iterations=0"]));
    let names: Vec<String> = std::fs::read_dir(dir.path().join("run"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".sp4d"))
        .collect();
    assert_eq!(names, vec!["final.sp4d".to_string()]);
    let ck = decode_checkpoint(&std::fs::read(dir.path().join("run/final.sp4d")).unwrap()).unwrap();
    assert_eq!(ck.iteration, 0);
    assert_eq!(ck.cloud.len(), 200);
}

#[test]
fn missing_dataset_fails_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = sp4d(dir.path(), &["train", "--set", "data.path=no/such/scene"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/scene"));
    let out = sp4d(dir.path(), &["train", "--set", "train.bogus=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn training_is_deterministic_across_thread_counts_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    make_scene(dir.path(), "oscillating");
    ok(dir.path(), &train_args("output.dir=a", &["--threads", "1"]));
    ok(dir.path(), &train_args("output.dir=b", &["--threads", "3"]));
    let env_run = Command::new(env!("CARGO_BIN_EXE_sp4d"))
        .current_dir(dir.path())
        .env("SP4D_THREADS", "2")
        .args(train_args("output.dir=c", &[]))
        .output()
        .unwrap();
    assert!(env_run.status.success());
    ok(dir.path(), &train_args("output.dir=d", &["--seed", "5"]));
    let read = |run: &str, f: &str| std::fs::read(dir.path().join(run).join(f)).unwrap();
    for run in ["b", "c"] {
        assert!(read("a", "final.sp4d") == read(run, "final.sp4d"));
        assert!(read("a", "metrics.csv") == read(run, "metrics.csv"));
    }
    assert!(read("a", "final.sp4d") != read("d", "final.sp4d"));
}

#[test]
fn eval_of_ground_truth_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    make_scene(dir.path(), "static");
    let json = ok(
        dir.path(),
        &["eval", "--json", "--set", "data.path=scene", "--checkpoint", "scene/ground_truth.sp4d", "--split", "all"],
    );
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["mean_psnr"], 100.0);
    assert_eq!(v["mean_ssim"], 1.0);
    assert_eq!(v["frames"].as_array().unwrap().len(), 8);
}

#[test]
fn masked_eval_ignores_tool_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let scene = make_scene(dir.path(), "oscillating");
    let mask: Vec<bool> = (0..32 * 32).map(|i| (i / 32) < 8).collect();
    for k in 0..8 {
        write_mask(&scene.join(format!("masks/{k:06}.png")), 32, 32, &mask).unwrap();
    }
    let args = ["eval", "--set", "data.path=scene", "--checkpoint", "scene/ground_truth.sp4d", "--split", "all"];
    ok(dir.path(), &[&args[..], &["--csv", "clean.csv"]].concat());
    for k in 0..8 {
        let path = scene.join(format!("images/{k:06}.png"));
        let mut img = read_rgb(&path).unwrap();
        for (p, m) in img.pixels.iter_mut().zip(&mask) {
            if *m {
                *p = [0.0, 1.0, 1.0];
            }
        }
        write_rgb(&path, 32, 32, &img.pixels).unwrap();
    }
    ok(dir.path(), &[&args[..], &["--csv", "dirty.csv"]].concat());
    let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
    assert_eq!(read("clean.csv"), read("dirty.csv"));
}

#[test]
fn render_outputs_and_cross_command_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let scene = make_scene(dir.path(), "static");
    let text = ok(
        dir.path(),
        &["render", "--checkpoint", "scene/ground_truth.sp4d", "--cameras", "scene/cameras.txt", "--out", "r1"],
    );
    assert!(text.contains("FPS (32x32, 50 gaussians, render time only, 30 renders)"), "{text}");
    ok(dir.path(), &["render", "--checkpoint", "scene/ground_truth.sp4d", "--cameras", "scene/cameras.txt", "--out", "r2"]);
    for sub in ["color/000003.png", "depth/000003.pfm", "normal/000003.png", "alpha/000003.png"] {
        let a = std::fs::read(dir.path().join("r1").join(sub)).unwrap();
        assert!(a == std::fs::read(dir.path().join("r2").join(sub)).unwrap(), "{sub} differs");
    }

    // Per-frame PSNR of the rendered orbit against the dataset matches eval.
    ok(
        dir.path(),
        &["eval", "--set", "data.path=scene", "--checkpoint", "scene/ground_truth.sp4d", "--split", "all", "--csv", "e.csv"],
    );
    let csv = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    let data = load_dataset(&scene, Split::All, 7).unwrap();
    for (line, frame) in csv.lines().skip(1).zip(&data.frames) {
        let expected: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        let img = read_rgb(&dir.path().join(format!("r1/color/{:06}.png", frame.index))).unwrap();
        let got = psnr(&img.pixels, &frame.targets.color, None);
        assert!((got - expected).abs() < 1e-9, "frame {}: {got} vs {expected}", frame.index);
    }
}

#[test]
fn empty_cloud_renders_black_and_bad_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    make_scene(dir.path(), "static");
    let empty = sp4d::field::GaussianCloud::new(sp4d::appearance::AppearanceConfig::default());
    save_checkpoint(&empty, 0, &dir.path().join("empty.sp4d")).unwrap();
    let json = ok(
        dir.path(),
        &["render", "--json", "--checkpoint", "empty.sp4d", "--cameras", "scene/cameras.txt", "--out", "e", "--time-range", "0", "1"],
    );
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["gaussians"], 0);
    let color = read_rgb(&dir.path().join("e/color/000000.png")).unwrap();
    assert!(color.pixels.iter().all(|p| *p == [0.0; 3]));
    let alpha = read_rgb(&dir.path().join("e/alpha/000000.png")).unwrap();
    assert!(alpha.pixels.iter().all(|p| p[0] == 0.0));
    let depth = read_pfm(&dir.path().join("e/depth/000000.pfm")).unwrap();
    assert!(depth.pixels.iter().all(|&d| d == 0.0));

    std::fs::write(dir.path().join("junk.sp4d"), b"not a checkpoint").unwrap();
    let out = sp4d(dir.path(), &["render", "--checkpoint", "junk.sp4d", "--cameras", "scene/cameras.txt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}
