use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use carl_core::policy::{self, CheckpointMetadata, PolicyParams, DEFAULT_HIDDEN};
use carl_core::telbridge::record::write_csv;
use carl_core::telbridge::{twin_rollout_telemetry, unpack_downlink, RateFrame, SynthUnits};
use carl_core::twinsim::SpacecraftConfig;
use carl_core::xray::ACTION_COLORS;
use tempfile::TempDir;

const SMALL_TRAIN: &str = "
[spacecraft]
episode_horizon = 3600.0

[train]
episodes_per_iteration = 4
total_iterations = 3
minibatch_size = 64
";

const SMALL_SWEEP: &str = "
[sweep]
background_samples = 4
x_axis = { field = \"wheel_saturation\", min = 0.0, max = 1.0, steps = 12 }
y_axis = { field = \"battery_charge\", min = 0.0, max = 1.0, steps = 9 }
";

fn carl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carl")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Deterministic, non-degenerate weights.
fn wavy_params() -> PolicyParams {
    let mut p = PolicyParams::zeros(&DEFAULT_HIDDEN);
    let flat: Vec<f64> = (0..p.num_params()).map(|i| 0.6 * (i as f64 * 1.7).sin()).collect();
    p.set_flat(&flat);
    p
}

fn save(params: &PolicyParams, dir: &Path, name: &str) -> PathBuf {
    let p = dir.join(name);
    policy::save(params, CheckpointMetadata::default(), &p).unwrap();
    p
}

fn pixels(ppm: &[u8]) -> Vec<[u8; 3]> {
    // P6 header: magic, width height, maxval, each newline-terminated
    let mut newlines = 0;
    let start = ppm.iter().position(|&b| {
        newlines += (b == b'\n') as usize;
        newlines == 3
    });
    ppm[start.unwrap() + 1..].chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

#[test]
fn train_is_reproducible_and_checkpoints_every_five_episodes() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", SMALL_TRAIN);
    let mut reports = vec![];
    for sub in ["a", "b"] {
        let cwd = dir.path().join(sub);
        fs::create_dir(&cwd).unwrap();
        let o = carl(&["train", "--config", "../run.toml", "--seed", "9", "--out", "out"], &cwd);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("iter")).count(), 3);
        let mut names: Vec<String> = fs::read_dir(cwd.join("out/checkpoints"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, ["checkpoint_ep000005.json", "checkpoint_ep000010.json"]);
        reports.push(fs::read(cwd.join("out/train_report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn missing_or_invalid_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let o = carl(&["train", "--config", "nope.toml", "--out", "out"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.toml"));
    assert!(!dir.path().join("out").exists());

    write(dir.path(), "bad.toml", "[train]\nlearning_rat = 0.1\n");
    assert_eq!(code(&carl(&["train", "--config", "bad.toml", "--out", "out"], dir.path())), 2);
}

#[test]
fn zero_checkpoint_sweep_is_uniform_gray() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", SMALL_SWEEP);
    save(&PolicyParams::zeros(&DEFAULT_HIDDEN), dir.path(), "zero.json");
    let o = carl(&["sweep", "--config", "run.toml", "--checkpoint", "zero.json", "--mode", "blend", "--out", "s"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let px = pixels(&fs::read(dir.path().join("s/sweep.ppm")).unwrap());
    assert_eq!(px.len(), 12 * 9);
    assert!(px.iter().all(|p| *p == [85, 85, 85]));
    let csv = fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12 * 9);
}

#[test]
fn argmax_sweep_uses_only_key_colors_and_is_bitwise_stable() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", SMALL_SWEEP);
    save(&wavy_params(), dir.path(), "w.json");
    let mut outs = vec![];
    for out in ["s1", "s2"] {
        let o = carl(&["sweep", "--config", "run.toml", "--checkpoint", "w.json", "--mode", "argmax", "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outs.push((fs::read(dir.path().join(out).join("sweep.ppm")).unwrap(), fs::read(dir.path().join(out).join("sweep.csv")).unwrap()));
    }
    assert_eq!(outs[0], outs[1]);
    assert!(pixels(&outs[0].0).iter().all(|p| ACTION_COLORS.contains(p)));
}

#[test]
fn bad_checkpoint_exits_3() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "broken.json", "{\"format_version\": 1, \"layers\": [");
    for args in [
        vec!["sweep", "--checkpoint", "broken.json", "--out", "s"],
        vec!["sanity", "--checkpoint", "broken.json"],
        vec!["sanity", "--checkpoint", "absent.json"],
    ] {
        assert_eq!(code(&carl(&args, dir.path())), 3, "{args:?}");
    }
}

#[test]
fn sanity_on_uniform_policy_exits_4() {
    let dir = TempDir::new().unwrap();
    save(&PolicyParams::zeros(&DEFAULT_HIDDEN), dir.path(), "zero.json");
    let o = carl(&["sanity", "--checkpoint", "zero.json"], dir.path());
    assert_eq!(code(&o), 4);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("FAIL")));
    assert_eq!(stdout.lines().count(), 2);
}

fn twin_telemetry(dir: &Path, params: &PolicyParams) -> f64 {
    let env = SpacecraftConfig::default();
    let (records, z0) = twin_rollout_telemetry(&env, params, 11, RateFrame::Hill, SynthUnits::default()).unwrap();
    fs::write(dir.join("tm.csv"), write_csv(&records)).unwrap();
    z0
}

#[test]
fn shadow_on_twin_telemetry_agrees_fully_and_packs() {
    let dir = TempDir::new().unwrap();
    let p = wavy_params();
    save(&p, dir.path(), "w.json");
    let z0 = twin_telemetry(dir.path(), &p);
    write(dir.path(), "run.toml", &format!("[shadow]\ninitial_charge = {z0:?}\nlog = \"shadow.jsonl\"\n"));
    let o = carl(&["shadow", "--config", "run.toml", "--checkpoint", "w.json", "--telemetry", "tm.csv", "--max-skips", "0"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("skips 0  agreement 1.000000"));
    let log = fs::read_to_string(dir.path().join("shadow.jsonl")).unwrap();
    let n = log.lines().count();
    assert!(n > 0);

    let o = carl(&["pack", "--in", "shadow.jsonl", "--whitelist", "timestamp,recommended", "--budget", "1000000", "--out", "p.bin"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let back = unpack_downlink(&fs::read(dir.path().join("p.bin")).unwrap()).unwrap();
    assert_eq!(back.len(), n);
    assert!(back.iter().all(|v| v.as_object().unwrap().len() == 2));

    let o = carl(&["pack", "--in", "shadow.jsonl", "--budget", "10", "--out", "q.bin"], dir.path());
    assert_eq!(code(&o), 5);
    assert!(!dir.path().join("q.bin").exists());
}

#[test]
fn shadow_skip_limit_and_hot_reload() {
    let dir = TempDir::new().unwrap();
    let p = wavy_params();
    save(&p, dir.path(), "w.json");
    let z0 = twin_telemetry(dir.path(), &p);
    let mut text = fs::read_to_string(dir.path().join("tm.csv")).unwrap();
    text.push_str("garbage,row\n");
    fs::write(dir.path().join("tm.csv"), text).unwrap();
    fs::create_dir(dir.path().join("drop")).unwrap();
    save(&PolicyParams::zeros(&DEFAULT_HIDDEN), &dir.path().join("drop"), "policy.update");
    write(&dir.path().join("drop"), "config.update", "[not toml");
    write(dir.path(), "run.toml", &format!("[shadow]\ninitial_charge = {z0:?}\ndrop_dir = \"drop\"\n"));

    let args = ["shadow", "--config", "run.toml", "--checkpoint", "w.json", "--telemetry", "tm.csv", "--log", "log.jsonl"];
    let o = carl(&[&args[..], &["--max-skips", "0"]].concat(), dir.path());
    assert_eq!(code(&o), 1);
    assert!(dir.path().join("drop/policy.update.applied").exists());
    assert!(dir.path().join("drop/config.update.rejected").exists());
    let log = fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains("\"kind\":\"skip\"")).count(), 1);
    // the zero policy was swapped in before the first cycle and always picks the first action
    assert!(log.lines().filter(|l| l.contains("\"kind\":\"entry\"")).all(|l| l.contains("\"recommended\":\"drift\"")));

    assert_eq!(code(&carl(&[&args[..], &["--max-skips", "1"]].concat(), dir.path())), 0);
}
