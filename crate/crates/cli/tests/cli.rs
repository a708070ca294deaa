use std::path::Path;
use std::process::{Command, Output};

use latsplat::io::import_ply;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latsplat"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn latsplat")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    let line = err.lines().last().unwrap_or_default().to_string();
    assert!(line.starts_with("error code=E_"), "unparseable error: {err}");
    line
}

fn tiny_corpus(dir: &Path, seeds: &str, dynamic: bool) {
    let out = dir.to_str().unwrap();
    let mut args = vec![
        "gen-data", "--seeds", seeds, "--out", out, "--width", "16", "--height", "16", "--frames", "3", "--views", "2",
        "--codec", "2,2,4",
    ];
    if dynamic {
        args.push("--dynamic");
    }
    ok(&args);
}

const TINY_DECODER: &str = r#"
[decoder]
hidden = 16
heads = 2
blocks = 1
mixers_per_block = 7
state = 4
patch = 2
head_factor = 4
layers = "hybrid"
position = "ray_anchored"
scene_extent = 10.0
init_depth = 3.0
init_scale = 0.3
init_opacity = 0.4
seed = 0

[decoder.codec]
temporal = 2
spatial = 2
channels = 4
"#;

fn write_run(dir: &Path, dynamic: bool) -> std::path::PathBuf {
    std::fs::write(
        dir.join("stages.toml"),
        format!("[[stage]]\nH = 16\nW = 16\nL = 3\nV = 2\nS = 2\nB = 1\nsteps = 2\ndynamic = {dynamic}\n"),
    )
    .unwrap();
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        format!("seed = 3\ncorpus = \"corpus\"\nschedule = \"stages.toml\"\nholdout = 1\n{TINY_DECODER}"),
    )
    .unwrap();
    cfg
}

#[test]
fn help_lists_every_subcommand() {
    let text = ok(&["--help"]);
    for sub in ["gen-data", "train", "infer", "render", "eval", "ablate"] {
        assert!(text.contains(sub), "{sub} missing from --help");
    }
    let text = ok(&["ablate", "--help"]);
    for flag in ["--which", "--ckpt", "--control", "--corpus", "--holdout", "--tokens", "--count"] {
        assert!(text.contains(flag), "{flag} missing from ablate --help");
    }
}

#[test]
fn errors_are_one_machine_parseable_line() {
    let line = error_line(&run(&["gen-data", "--seeds", "5..2", "--out", "/tmp/never"]));
    assert!(line.contains("code=E_INVALID_INPUT"));
    let line = error_line(&run(&["render", "--ply", "/nonexistent.ply", "--trajectory", "/x", "--out", "/tmp/x"]));
    assert!(line.contains("code=E_IO"));
    let line = error_line(&run(&["ablate", "--which", "fusion"]));
    assert!(line.contains("--ckpt"));
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    tiny_corpus(a.path(), "4..5", false);
    tiny_corpus(b.path(), "4..5", false);
    for f in ["meta.toml", "traj_1/video.raw", "traj_1/depth.raw", "traj_1/poses.txt", "traj_1/latent.bin"] {
        let pa = a.path().join("scene_4").join(f);
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(b.path().join("scene_4").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_infer_render_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    tiny_corpus(&dir.path().join("corpus"), "0..3", false);
    let cfg = write_run(dir.path(), false);
    let ckpt = dir.path().join("model.lyrd");
    let text = ok(&["train", "--config", cfg.to_str().unwrap(), "--out", ckpt.to_str().unwrap()]);
    assert!(text.starts_with("train steps=2 skipped=0"));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(dir.path().join("checkpoints/stage_1.lyrd").exists());

    let scene = dir.path().join("corpus/scene_2");
    let lat = |v: usize| scene.join(format!("traj_{v}/latent.bin")).to_str().unwrap().to_string();
    let pos = |v: usize| scene.join(format!("traj_{v}/poses.txt")).to_str().unwrap().to_string();
    let ply = dir.path().join("scene.ply");
    ok(&[
        "infer",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--latents",
        &format!("{},{}", lat(0), lat(1)),
        "--trajectories",
        &format!("{},{}", pos(0), pos(1)),
        "--out",
        ply.to_str().unwrap(),
    ]);
    let loaded = import_ply(&ply).unwrap();
    assert!(!loaded.is_empty());
    let frames = dir.path().join("frames");
    ok(&["render", "--ply", ply.to_str().unwrap(), "--trajectory", &pos(1), "--out", frames.to_str().unwrap()]);
    assert!(frames.join("frame_002.png").exists());

    let table = ok(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--corpus",
        dir.path().join("corpus").to_str().unwrap(),
        "--holdout",
        "1",
    ]);
    assert!(table.lines().any(|l| l.starts_with("2 ")));
    assert!(table.contains("psnr_gain_db"));

    let again = dir.path().join("again.lyrd");
    ok(&["train", "--config", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn bullet_time_inference() {
    let dir = tempfile::tempdir().unwrap();
    tiny_corpus(&dir.path().join("corpus"), "0..2", true);
    let cfg = write_run(dir.path(), true);
    let ckpt = dir.path().join("model.lyrd");
    ok(&["train", "--config", cfg.to_str().unwrap(), "--out", ckpt.to_str().unwrap()]);
    let scene = dir.path().join("corpus/scene_1");
    let ply = dir.path().join("t.ply");
    ok(&[
        "infer",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--latents",
        scene.join("traj_0/latent.bin").to_str().unwrap(),
        "--trajectories",
        scene.join("traj_0/poses.txt").to_str().unwrap(),
        "--out",
        ply.to_str().unwrap(),
        "--time",
        "0.5",
    ]);
    assert!(!import_ply(&ply).unwrap().is_empty());
    let line = error_line(&run(&[
        "infer",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--latents",
        scene.join("traj_0/latent.bin").to_str().unwrap(),
        "--trajectories",
        scene.join("traj_0/poses.txt").to_str().unwrap(),
        "--out",
        ply.to_str().unwrap(),
        "--time",
        "1.5",
    ]));
    assert!(line.contains("E_INVALID_INPUT"));
    let text = ok(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--corpus",
        dir.path().join("corpus").to_str().unwrap(),
        "--holdout",
        "1",
    ]);
    assert!(text.contains("bullet_time_pass_rate"));
}

#[test]
fn scripted_ablations_report() {
    let text = ok(&["ablate", "--which", "mask", "--size", "96"]);
    assert!(text.starts_with("ablate mask superset=true"));
    let text = ok(&["ablate", "--which", "prune", "--count", "20000", "--size", "64", "--trials", "3"]);
    assert!(text.contains("kept=4000"));
    let out = run(&["ablate", "--which", "mixer", "--tokens", "64", "--trials", "1"]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ablate mixer tokens=64"));
    if !out.status.success() {
        assert!(error_line(&out).contains("E_CHECK_FAILED"));
    }
}
