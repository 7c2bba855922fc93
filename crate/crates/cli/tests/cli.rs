//! End-to-end checks of the binary: artifacts, determinism, exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gossipbench"))
}

fn base_config() -> String {
    r#"
strategy = "d_ring"
n_workers = 9
epochs = 2
batch_size = 8
seed = 7
heterogeneity = 0.5

[model]
kind = "linear"

[dataset]
kind = "synthetic"
n_samples = 360
input_dim = 6
n_classes = 4
seed = 99

[schedule]
kind = "constant"
base_lr = 0.1
"#
    .to_string()
}

fn run_ok(args: &[&str]) -> Output {
    let output = binary().args(args).output().expect("spawn binary");
    assert!(
        output.status.success(),
        "expected success, got {:?}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn exit_code(args: &[&str]) -> i32 {
    binary()
        .args(args)
        .output()
        .expect("spawn binary")
        .status
        .code()
        .expect("exit code")
}

#[test]
fn single_run_artifacts_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, base_config()).unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    run_ok(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out1.to_str().unwrap(),
    ]);
    run_ok(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);

    let metrics1 = std::fs::read(out1.join("metrics.csv")).unwrap();
    let metrics2 = std::fs::read(out2.join("metrics.csv")).unwrap();
    assert_eq!(metrics1, metrics2, "reruns must be byte-identical");

    let text = String::from_utf8(metrics1).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "run_id,strategy,epoch,iteration,tensor,mean_train_loss,test_accuracy,\
         gini,index_of_dispersion,coefficient_of_variation,quartile_coefficient,degenerate"
    );

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out1.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "ok");
    assert_eq!(summary["run_id"], "d_ring-n9-seed7");
    assert!(summary["final_test_accuracy"].as_f64().unwrap() >= 0.0);
    assert!(summary["config"]["dataset"]["seed"].as_u64().unwrap() == 99);
}

#[test]
fn rerun_from_summary_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, base_config()).unwrap();
    let out1 = dir.path().join("a");
    run_ok(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out1.to_str().unwrap(),
    ]);

    // the summary embeds the resolved config; running from it reproduces
    let summary = out1.join("summary.json");
    let out2 = dir.path().join("b");
    run_ok(&[
        "run",
        "--config",
        summary.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(out1.join("metrics.csv")).unwrap(),
        std::fs::read(out2.join("metrics.csv")).unwrap()
    );
}

#[test]
fn flag_overrides_win_over_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, base_config()).unwrap();
    let out = dir.path().join("o");
    run_ok(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--strategy",
        "d_complete",
        "--seed",
        "11",
        "--out",
        out.to_str().unwrap(),
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["run_id"], "d_complete-n9-seed11");
}

#[test]
fn sweep_writes_cells_and_rank_permutations() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    std::fs::write(
        &config,
        base_config().replace("n_workers = 9", "n_workers = 16")
            + r#"
[axes]
strategies = ["c_complete", "d_complete", "d_ring", "d_torus", "d_exponential"]
seeds = [1, 2]
"#,
    )
    .unwrap();
    let out = dir.path().join("sweep");
    run_ok(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);

    for cell in [
        "c_complete-n16-seed1",
        "d_ring-n16-seed2",
        "d_torus-n16-seed1",
        "d_exponential-n16-seed2",
        "d_complete-n16-seed1",
    ] {
        assert!(out.join(cell).join("metrics.csv").is_file(), "{cell}");
        assert!(out.join(cell).join("summary.json").is_file(), "{cell}");
    }

    let ranks = std::fs::read_to_string(out.join("ranks.csv")).unwrap();
    let mut lines = ranks.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n_workers,seed,iteration,c_complete,d_complete,d_ring,d_torus,d_exponential"
    );
    let mut rows = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let mut ranks: Vec<usize> = fields[3..].iter().map(|f| f.parse().unwrap()).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, vec![1, 2, 3, 4, 5], "row: {line}");
        rows += 1;
    }
    // 2 seeds x (2 epochs x 2 steps): 288 train samples shard to 18 per worker
    assert_eq!(rows, 8);
}

#[test]
fn sweep_cell_failure_spares_siblings() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    // n = 8 has no valid torus grid: that cell fails, the others complete
    std::fs::write(
        &config,
        base_config().replace("n_workers = 9", "n_workers = 8")
            + r#"
[axes]
strategies = ["d_ring", "d_torus", "d_complete"]
"#,
    )
    .unwrap();
    let out = dir.path().join("sweep");
    let output = binary()
        .args([
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(2),
        "torus cell is a config error"
    );
    assert!(out.join("d_ring-n8-seed7").join("metrics.csv").is_file());
    assert!(out
        .join("d_complete-n8-seed7")
        .join("metrics.csv")
        .is_file());

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "partial");
    let cells = summary["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 3);
    let torus_cell = cells
        .iter()
        .find(|c| c["run_id"].as_str().unwrap().starts_with("d_torus"))
        .unwrap();
    assert_eq!(torus_cell["status"], "error");
    assert!(torus_cell["error"].as_str().unwrap().contains("torus"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, base_config().replace("d_ring", "d_hypercube")).unwrap();
    let out = dir.path().join("o");
    assert_eq!(
        exit_code(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        2
    );

    let unknown_key = dir.path().join("unknown.toml");
    std::fs::write(&unknown_key, base_config() + "\nnot_a_key = 1\n").unwrap();
    assert_eq!(
        exit_code(&[
            "run",
            "--config",
            unknown_key.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        2
    );
}

#[test]
fn missing_config_exits_4() {
    assert_eq!(
        exit_code(&["run", "--config", "/nonexistent/config.toml"]),
        4
    );
}

#[test]
fn divergence_exits_3_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("diverge.toml");
    std::fs::write(
        &config,
        base_config().replace("base_lr = 0.1", "base_lr = 1e306"),
    )
    .unwrap();
    let out = dir.path().join("o");
    let output = binary()
        .args([
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("d_ring"), "stderr: {stderr}");
    assert!(stderr.contains("epoch"), "stderr: {stderr}");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "diverged");
    assert_eq!(summary["diverged"], true);
}

#[test]
fn graph_dump_prints_structure_and_spectrum() {
    let output = run_ok(&["graph", "dump", "--kind", "ring", "--n", "9"]);
    let doc: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(doc["topology"]["n"], 9);
    assert_eq!(doc["edge_count"], 9);
    assert_eq!(doc["topology"]["neighbors"][1], serde_json::json!([0, 2]));
    // circulant closed form: second modulus (1 + 2 cos(2 pi / 9)) / 3
    let expected = (1.0 + 2.0 * (2.0 * std::f64::consts::PI / 9.0).cos()) / 3.0;
    let gap = doc["spectral"]["spectral_gap"].as_f64().unwrap();
    assert!((gap - (1.0 - expected)).abs() < 1e-8);

    let output = run_ok(&["graph", "dump", "--kind", "exponential", "--n", "9"]);
    let doc: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(
        doc["topology"]["neighbors"][1],
        serde_json::json!([2, 3, 5, 0])
    );

    let output = run_ok(&["graph", "dump", "--kind", "complete", "--n", "9"]);
    let doc: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert!((doc["spectral"]["spectral_gap"].as_f64().unwrap() - 1.0).abs() < 1e-10);
    assert!((doc["mixing_matrix"]["rows"][0][3].as_f64().unwrap() - 1.0 / 9.0).abs() < 1e-15);

    assert_eq!(
        exit_code(&["graph", "dump", "--kind", "torus", "--n", "8"]),
        2
    );
}

#[test]
fn schedule_preview_shows_the_degree_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("ada.toml");
    std::fs::write(
        &config,
        base_config()
            .replace(
                "strategy = \"d_ring\"",
                "strategy = \"d_adaptive\"\nk0 = 4\ngamma_k = 1.0",
            )
            .replace("n_workers = 9", "n_workers = 16")
            .replace("epochs = 2", "epochs = 4"),
    )
    .unwrap();
    let output = run_ok(&["schedule", "preview", "--config", config.to_str().unwrap()]);
    let stdout = String::from_utf8(output.stdout).unwrap();
    // k decays 4, 3, 2 and clamps at k_min = 2
    let k_column: Vec<&str> = stdout
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().starts_with("epoch"))
        .map(|l| l.split_whitespace().nth(1).unwrap())
        .collect();
    assert_eq!(k_column, vec!["4", "3", "2", "2"]);
}

#[test]
fn csv_datasets_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("f0,f1,label\n");
    for i in 0..60 {
        let class = i % 2;
        csv.push_str(&format!("{}.5,{}.25,{}\n", i % 3, (i + 1) % 4, class));
    }
    std::fs::write(dir.path().join("data.csv"), csv).unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        r#"
strategy = "d_ring"
n_workers = 3
epochs = 2
batch_size = 4
seed = 7

[model]
kind = "linear"

[dataset]
kind = "csv"
path = "data.csv"
seed = 5

[schedule]
kind = "constant"
base_lr = 0.1
"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    run_ok(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(out.join("metrics.csv").is_file());
}

#[test]
fn output_root_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("envrun.toml");
    std::fs::write(&config, base_config()).unwrap();
    let root = dir.path().join("root");
    let output = binary()
        .args(["run", "--config", config.to_str().unwrap()])
        .env("GOSSIPBENCH_OUT", &root)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(root.join("envrun").join("metrics.csv").is_file());
}

#[test]
fn help_lists_the_subcommands() {
    let output = run_ok(&["--help"]);
    let stdout = String::from_utf8(output.stdout).unwrap();
    for subcommand in ["run", "graph", "schedule"] {
        assert!(stdout.contains(subcommand));
    }
    assert!(Path::new(env!("CARGO_BIN_EXE_gossipbench")).exists());
}
