use std::path::Path;
use std::process::{Command, Output};

use mnn_alloc::gnn::{GnnModel, TrainConfig};
use mnn_alloc::netgen::{generate_network, ChannelParams, PowerParams, WirelessNetwork};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mnn-alloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "generate",
        "--m",
        "50",
        "--seed",
        "7",
        "--out",
        p(dir.path()),
    ]);
    let net = WirelessNetwork::from_json(&read(&dir.path().join("network.json"))).unwrap();
    let direct =
        generate_network(50, &ChannelParams::default(), &PowerParams::for_size(50), 7).unwrap();
    assert_eq!(net, direct);
    assert!(dir.path().join("config.toml").exists());
    assert!(dir.path().join("metadata.json").exists());
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["generate", "--m", "5", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn seed_from_config_file_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 3\n[generate]\nm = 4\n").unwrap();
    ok(&["generate", "--config", p(&cfg), "--out", p(dir.path())]);
    let net = WirelessNetwork::from_json(&read(&dir.path().join("network.json"))).unwrap();
    assert_eq!((net.m, net.seed), (4, 3));
}

#[test]
fn zero_pairs_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "generate",
        "--m",
        "0",
        "--seed",
        "1",
        "--out",
        p(dir.path()),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("m must be >= 1"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[train]\nlr = 0.1\n").unwrap();
    let out = run(&["train", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_iterations_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "train",
        "--seed",
        "11",
        "--iterations",
        "0",
        "--out",
        p(dir.path()),
    ]);
    let written = read(&dir.path().join("model.json"));
    let init = TrainConfig {
        seed: 11,
        ..TrainConfig::default()
    }
    .initial_model()
    .unwrap();
    assert_eq!(written, init.to_json().unwrap());
    assert_eq!(
        read(&dir.path().join("history.csv")),
        "iteration,utility,slack,mu\n"
    );
}

fn small_train(out: &Path) {
    ok(&[
        "train",
        "--seed",
        "5",
        "--iterations",
        "3",
        "--batch",
        "2",
        "--m-train",
        "10",
        "--layers",
        "2",
        "--width",
        "3",
        "--taps",
        "3",
        "--out",
        p(out),
    ]);
}

#[test]
fn training_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_train(a.path());
    small_train(b.path());
    for file in ["model.json", "history.csv"] {
        assert_eq!(
            read(&a.path().join(file)),
            read(&b.path().join(file)),
            "{file}"
        );
    }
    let history = read(&a.path().join("history.csv"));
    assert_eq!(history.lines().count(), 1 + 3);
    GnnModel::from_json(&read(&a.path().join("model.json"))).unwrap();
}

#[test]
fn transfer_csv_has_one_row_per_size() {
    let dir = tempfile::tempdir().unwrap();
    small_train(dir.path());
    let model = dir.path().join("model.json");
    let out = dir.path().join("transfer");
    ok(&[
        "transfer",
        "--seed",
        "2",
        "--model",
        p(&model),
        "--sizes",
        "50,100",
        "--trials",
        "3",
        "--out",
        p(&out),
    ]);
    let csv = read(&out.join("transfer.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    let header: Vec<&str> = lines[0].split(',').collect();
    let stats = header
        .iter()
        .filter(|h| h.ends_with("_mean") || h.ends_with("_std"))
        .count();
    assert_eq!(stats, 8);
    assert!(lines[1].starts_with("50,") && lines[2].starts_with("100,"));
}

#[test]
fn missing_model_fails() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = run(&[
        "transfer",
        "--seed",
        "1",
        "--model",
        p(&missing),
        "--out",
        p(dir.path()),
    ]);
    assert!(!out.status.success());
    let out = run(&["eval", "--seed", "1", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_on_a_network_file() {
    let dir = tempfile::tempdir().unwrap();
    small_train(dir.path());
    ok(&[
        "generate",
        "--m",
        "12",
        "--seed",
        "4",
        "--out",
        p(dir.path()),
    ]);
    let out = dir.path().join("eval");
    ok(&[
        "eval",
        "--seed",
        "1",
        "--model",
        p(&dir.path().join("model.json")),
        "--network",
        p(&dir.path().join("network.json")),
        "--out",
        p(&out),
    ]);
    let csv = read(&out.join("eval.csv"));
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("12,4,"));
}

#[test]
fn theorem1_with_zero_perturbation_always_holds() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "theorem1",
        "--seed",
        "9",
        "--sizes",
        "20",
        "--epsilon-fractions",
        "0",
        "--repeats",
        "2",
        "--out",
        p(dir.path()),
    ]);
    let csv = read(&dir.path().join("theorem1.csv"));
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let diff = header.iter().position(|h| *h == "output_diff").unwrap();
    let holds = header.iter().position(|h| *h == "holds").unwrap();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3 * 3 * 2);
    for r in rows {
        assert_eq!(r[diff], "0.0");
        assert_eq!(r[holds], "true");
    }
}

#[test]
fn spectral_report_fields() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "spectral",
        "--seed",
        "3",
        "--m",
        "15",
        "--alpha",
        "1e12",
        "--out",
        p(dir.path()),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("spectral.json"))).unwrap();
    assert_eq!(report["partitions"], 1);
    assert_eq!(report["fdt"]["delta"], 0.0);
    assert!(report["gap_index"].is_u64());
    assert_eq!(report["eigenvalues"].as_array().unwrap().len(), 15);
}

#[test]
fn nonpositive_alpha_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "spectral",
        "--seed",
        "3",
        "--alpha",
        "-1",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn noise_study_with_zero_sigma_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "noise-stability",
        "--seed",
        "1",
        "--iterations",
        "2",
        "--batch",
        "2",
        "--m-train",
        "8",
        "--width",
        "2",
        "--taps",
        "2",
        "--depths",
        "1,2",
        "--m",
        "10",
        "--trials",
        "3",
        "--perturb-sigma",
        "0",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(
        read(&dir.path().join("noise_stability.csv")),
        "L,F,ratio_diff_mean\n1,2,0.0\n2,2,0.0\n"
    );
}

#[test]
fn help_lists_every_subcommand() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "generate",
        "train",
        "eval",
        "transfer",
        "noise-stability",
        "theorem1",
        "spectral",
    ] {
        assert!(text.contains(cmd), "{cmd}");
    }
}
