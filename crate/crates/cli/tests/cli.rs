use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dynswitch::data::{load_wav, Difficulty};
use tempfile::TempDir;

const SMALL: &str = r#"
[data]
n_frames = 200

[train]
epochs = 5
checkpoint_every = 2
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dynswitch"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn workspace(config: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let o = run_in(dir.path(), &["train", "absent.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_2() {
    let (dir, _) = workspace("[train]\nepochz = 3\n");
    let o = run_in(dir.path(), &["train", "run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochz"));
}

#[test]
fn conflicting_thresholds_in_config_exit_2() {
    let (dir, _) = workspace("[dsl]\ntau = 0.5\ntarget_light_fraction = 0.5\n");
    let o = run_in(dir.path(), &["train", "run.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_epochs_writes_only_the_initial_checkpoint() {
    let (dir, _) = workspace("[data]\nn_frames = 40\n[train]\nepochs = 0\n");
    let o = run_in(dir.path(), &["train", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpts: Vec<_> = fs::read_dir(dir.path().join("out/checkpoints")).unwrap().collect();
    assert_eq!(ckpts.len(), 1);
    assert!(dir.path().join("out/checkpoints/epoch-00000.json").exists());
    assert_eq!(csv_rows(&dir.path().join("out/metrics.csv")).len(), 1);
}

#[test]
fn train_writes_one_metrics_row_per_epoch() {
    let (dir, _) = workspace(SMALL);
    let o = run_in(dir.path(), &["train", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("out/metrics.csv"));
    assert_eq!(rows.len(), 1 + 5);
    assert_eq!(column(&rows, "epoch"), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    for name in ["epoch-00000", "epoch-00002", "epoch-00004", "epoch-00005"] {
        assert!(dir.path().join(format!("out/checkpoints/{name}.json")).exists(), "{name}");
    }
    let calib = csv_rows(&dir.path().join("out/calibration.csv"));
    assert_eq!(calib.len(), 1 + 4);
}

#[test]
fn seed_flag_changes_the_run() {
    let (dir, _) = workspace(SMALL);
    run_in(dir.path(), &["train", "run.toml"]);
    let a = fs::read(dir.path().join("out/final.json")).unwrap();
    run_in(dir.path(), &["train", "run.toml"]);
    assert_eq!(a, fs::read(dir.path().join("out/final.json")).unwrap());
    run_in(dir.path(), &["--seed", "99", "train", "run.toml"]);
    assert_ne!(a, fs::read(dir.path().join("out/final.json")).unwrap());
}

fn trained(config: &str) -> TempDir {
    let (dir, _) = workspace(config);
    let o = run_in(dir.path(), &["train", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn eval_threshold_flags_are_exclusive_and_required() {
    let dir = trained(SMALL);
    let both = run_in(dir.path(), &["eval", "run.toml", "out/final.json", "--tau", "1", "--target-light-fraction", "0.5"]);
    assert_eq!(both.status.code(), Some(2));
    let neither = run_in(dir.path(), &["eval", "run.toml", "out/final.json"]);
    assert_eq!(neither.status.code(), Some(2));
}

#[test]
fn zero_tau_routes_nothing_light() {
    let dir = trained(SMALL);
    let o = run_in(dir.path(), &["eval", "run.toml", "out/final.json", "--tau", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("out/routing.csv"));
    assert_eq!(column(&rows, "light_fraction"), vec![0.0]);
    for f in ["parity.csv", "probe.csv", "summary.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn target_fraction_is_met_on_the_calibrate_split() {
    let dir = trained(SMALL);
    let o = run_in(dir.path(), &["eval", "run.toml", "out/final.json", "--target-light-fraction", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    let realized = summary["calibrate_light_fraction"].as_f64().unwrap();
    assert!((realized - 0.5).abs() <= 0.02, "{realized}");
}

#[test]
fn config_threshold_is_used_without_flags() {
    let dir = trained(SMALL);
    fs::write(dir.path().join("run.toml"), format!("{SMALL}\n[dsl]\ntau = 0.0\n")).unwrap();
    let o = run_in(dir.path(), &["eval", "run.toml", "out/final.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_exits_4() {
    let dir = trained(SMALL);
    let path = dir.path().join("out/final.json");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, &text[..text.len() / 2]).unwrap();
    let o = run_in(dir.path(), &["eval", "run.toml", "out/final.json", "--tau", "1"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn missing_checkpoint_exits_5() {
    let (dir, _) = workspace(SMALL);
    let o = run_in(dir.path(), &["eval", "run.toml", "nowhere.json", "--tau", "1"]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn sweep_rows_are_sorted_by_beta() {
    let (dir, _) = workspace(SMALL);
    let o = run_in(dir.path(), &["--jobs", "2", "sweep-beta", "run.toml", "--betas", "0.1,0.00001,0.001"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("out/sparsity.csv"));
    assert_eq!(column(&rows, "beta"), vec![1e-5, 1e-3, 0.1]);
}

#[test]
fn single_beta_gives_one_row() {
    let (dir, _) = workspace(SMALL);
    let o = run_in(dir.path(), &["sweep-beta", "run.toml", "--betas", "0.01"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_rows(&dir.path().join("out/sparsity.csv")).len(), 2);
}

#[test]
fn negative_beta_exits_2() {
    let (dir, _) = workspace(SMALL);
    let o = run_in(dir.path(), &["sweep-beta", "run.toml", "--betas=-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_placement_exits_2_naming_it() {
    let (dir, _) = workspace(SMALL);
    let o = run_in(dir.path(), &["ablate-placement", "run.toml", "--placements", "1,7"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains('7'), "{}", stderr(&o));
}

#[test]
fn single_placement_gives_one_row() {
    let (dir, _) = workspace(SMALL);
    let o = run_in(dir.path(), &["ablate-placement", "run.toml", "--placements", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("out/ablation.csv"));
    assert_eq!(column(&rows, "placement"), vec![2.0]);
}

#[test]
fn ablation_covers_every_valid_placement_with_growing_prefix_cost() {
    let (dir, _) = workspace(SMALL);
    let o = run_in(dir.path(), &["ablate-placement", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("out/ablation.csv"));
    assert_eq!(column(&rows, "placement"), vec![0.0, 1.0, 2.0]);
    let share = column(&rows, "prefix_mac_share");
    assert!(share.windows(2).all(|w| w[0] < w[1]), "{share:?}");
}

#[test]
fn gen_data_is_deterministic_and_readable() {
    let (dir, _) = workspace("[data]\nn_frames = 10\n");
    for out in ["a", "b"] {
        let o = run_in(dir.path(), &["gen-data", "run.toml", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for class in ["easy", "hard"] {
        let mut names: Vec<_> = fs::read_dir(dir.path().join("a").join(class))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 5);
        for n in names {
            let a = dir.path().join("a").join(class).join(&n);
            let b = dir.path().join("b").join(class).join(&n);
            assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        }
    }
    let generated = dynswitch::data::DataConfig { n_frames: 10, ..Default::default() }.frames().unwrap();
    for (class, difficulty) in [("easy", Difficulty::Easy), ("hard", Difficulty::Hard)] {
        let expected = generated.iter().filter(|f| f.difficulty == Some(difficulty));
        for (k, frame) in expected.enumerate() {
            let loaded = load_wav(dir.path().join("a").join(class).join(format!("{k:05}.wav")), 64).unwrap();
            assert_eq!(loaded.len(), 1);
            let quantized: Vec<f64> = frame
                .samples
                .iter()
                .map(|s| (s * 32768.0).round().clamp(-32768.0, 32767.0) / 32768.0)
                .collect();
            assert_eq!(loaded[0].samples, quantized);
        }
    }
}

#[test]
fn gen_data_with_no_frames_makes_empty_dirs() {
    let (dir, _) = workspace("[data]\nn_frames = 0\n");
    let o = run_in(dir.path(), &["gen-data", "run.toml", "--out", "g"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for class in ["easy", "hard"] {
        assert_eq!(fs::read_dir(dir.path().join("g").join(class)).unwrap().count(), 0);
    }
}

#[test]
fn wav_paths_feed_training() {
    let (dir, _) = workspace("[data]\nn_frames = 60\n");
    run_in(dir.path(), &["gen-data", "run.toml", "--out", "g"]);
    let mut paths: Vec<String> = Vec::new();
    for class in ["easy", "hard"] {
        for e in fs::read_dir(dir.path().join("g").join(class)).unwrap() {
            paths.push(format!("{:?}", e.unwrap().path().display().to_string()));
        }
    }
    paths.sort();
    let cfg = format!("[data]\nwav_paths = [{}]\n[train]\nepochs = 2\n", paths.join(", "));
    fs::write(dir.path().join("run.toml"), cfg).unwrap();
    let o = run_in(dir.path(), &["train", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_rows(&dir.path().join("out/metrics.csv")).len(), 3);
}
