use std::path::Path;
use std::process::{Command, Output};

const SMOKE: &[&str] = &[
    "--set", "lane_length_cells=6",
    "--set", "episode_length_steps=10",
    "--set", "frame_width=16",
    "--set", "frame_height=16",
    "--set", "conv1_kernel=4",
    "--set", "conv1_stride=2",
    "--set", "conv2_kernel=3",
    "--set", "conv2_stride=2",
    "--set", "hidden_units=8",
    "--set", "batch_size=4",
    "--set", "total_epochs=2",
    "--set", "episodes_per_epoch=1",
    "--set", "eval_every_episodes=1",
    "--set", "eval_episodes=1",
    "--set", "checkpoint_every_epochs=1",
];

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signal-lab"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["grad-check"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 9);
    assert!(!text.contains("FAILED"));
}

#[test]
fn train_then_eval_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--out", "run", "--seed", "4", "--set", "agent=\"dqn\""];
    args.extend_from_slice(SMOKE);
    let out = run(&args, dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(dir.path().join("run/checkpoints/epoch_0002.ckpt").exists());

    let mut args = vec!["eval", "--config", "run/config.toml", "--checkpoint", "run/final.ckpt"];
    args.extend_from_slice(&["--episodes", "2"]);
    let out = run(&args, dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("eval: 2 episodes"));
}

#[test]
fn baseline_reports_each_half_period() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["baseline", "--episodes", "2", "--set", "episode_length_steps=20"], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for half in [5, 10, 20] {
        assert!(text.contains(&format!("half period {half:>3}:")), "{text}");
    }
}

#[test]
fn dump_frames_writes_pgm_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["dump-frames", "--steps", "3", "--out", "frames"], dir.path());
    assert_eq!(code(&out), 0);
    for i in 0..3 {
        let bytes = std::fs::read(dir.path().join(format!("frames/frame_{i:04}.pgm"))).unwrap();
        assert!(bytes.starts_with(b"P5\n64 64\n255\n"));
    }
    assert_eq!(std::fs::read_dir(dir.path().join("frames")).unwrap().count(), 3);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["no-such-command"], dir.path())), 1);
    assert_eq!(code(&run(&["train", "--set", "gamma=3"], dir.path())), 2);
    assert_eq!(code(&run(&["train", "--set", "bogus_key=1"], dir.path())), 2);
    assert_eq!(code(&run(&["eval", "--config", "missing.toml"], dir.path())), 2);
    assert_eq!(code(&run(&["eval", "--set", "agent=\"a2c\""], dir.path())), 2);
    std::fs::write(dir.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = run(&["eval", "--set", "agent=\"a2c\"", "--checkpoint", "junk.ckpt"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(!out.stderr.is_empty());
}
