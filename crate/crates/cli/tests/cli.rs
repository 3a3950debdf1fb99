use std::path::Path;
use std::process::{Command, Output};

use exdiff::examples::example1_matrix;
use exdiff::{Network, NetworkFile, PolicyFile};
use serde_json::Value;

fn exdiff(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exdiff"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn sweep_rows(csv: &str) -> Vec<(f64, f64, bool)> {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("mu,rho,stable"));
    lines
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            (cols[0].parse().unwrap(), cols[1].parse().unwrap(), cols[2].parse().unwrap())
        })
        .collect()
}

fn trajectory(path: &Path) -> (Vec<f64>, Option<String>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iter,rel_error"));
    let mut errors = Vec::new();
    let mut trailer = None;
    for line in lines {
        if line.starts_with('#') {
            trailer = Some(line.to_string());
            continue;
        }
        let (i, e) = line.split_once(',').unwrap();
        assert_eq!(i.parse::<usize>().unwrap(), errors.len());
        errors.push(e.parse().unwrap());
    }
    (errors, trailer)
}

#[test]
fn averaging_policy_checks_out() {
    let dir = tempfile::tempdir().unwrap();
    let net = serde_json::to_string(&Network::path(6).to_file()).unwrap();
    std::fs::write(dir.path().join("path.json"), net).unwrap();
    let out = exdiff(&["policy", "--net", "path.json", "--rule", "averaging", "--check"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert_eq!(report["validation"]["balanced"], true);
    assert_eq!(report["lemmas"]["failures"].as_array().unwrap().len(), 0);
    let p: Vec<f64> = serde_json::from_value(report["perron"].clone()).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn unbalanced_matrix_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let a = example1_matrix();
    let file = PolicyFile {
        a: a.row_iter().map(|r| r.iter().copied().collect()).collect(),
        p: None,
    };
    std::fs::write(dir.path().join("example1.json"), serde_json::to_string(&file).unwrap()).unwrap();
    let out = exdiff(&["policy", "--matrix", "example1.json", "--check"], dir.path());
    assert_eq!(code(&out), 1);
    let report = json(&out);
    assert_eq!(report["validation"]["balanced"], false);
    assert_eq!(report["validation"]["left_stochastic"], true);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&exdiff(&["policy", "--rule", "unknown"], dir.path())), 2);
    assert_eq!(code(&exdiff(&["policy", "--rule", "averaging"], dir.path())), 2);
    assert_eq!(code(&exdiff(&["stability", "--example", "3"], dir.path())), 2);
    assert_eq!(code(&exdiff(&["stability", "--jury"], dir.path())), 2);
    assert_eq!(code(&exdiff(&["frobnicate"], dir.path())), 2);
    std::fs::write(dir.path().join("bad.json"), r#"{"no_such_key": 1}"#).unwrap();
    assert_eq!(code(&exdiff(&["solve", "--config", "bad.json"], dir.path())), 2);
}

#[test]
fn bad_matrix_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), r#"{"A": [[0.5, 0.5], [0.2]]}"#).unwrap();
    let out = exdiff(&["stability", "--matrix", "m.json", "--h", "1,1"], dir.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn example1_is_unstable_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["stability", "--example", "1", "--mu-min", "1e-6", "--mu-max", "3", "--points", "300"];
    let out = exdiff(&args, dir.path());
    assert_eq!(code(&out), 0);
    let rows = sweep_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), 300);
    assert_eq!(rows[0].0, 1e-6);
    assert_eq!(rows[299].0, 3.0);
    assert!(rows.iter().all(|&(_, rho, stable)| rho > 1.0 && !stable));
}

#[test]
fn example2_crosses_near_point_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = exdiff(
        &["stability", "--example", "2", "--mu-max", "0.3", "--out", "sweep.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let summary = json(&out);
    let crossing = summary["first_unstable"].as_f64().unwrap();
    assert!((0.195..=0.21).contains(&crossing), "crossing {crossing}");
    let rows = sweep_rows(&std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap());
    for (mu, rho, stable) in rows {
        assert_eq!(stable, rho < 1.0);
        if mu < 0.19 {
            assert!(rho < 1.0, "rho {rho} at {mu}");
        }
        if mu > 0.21 {
            assert!(rho >= 1.0, "rho {rho} at {mu}");
        }
    }
}

#[test]
fn jury_reports_instability() {
    let dir = tempfile::tempdir().unwrap();
    let out = exdiff(&["stability", "--jury", "--mu", "0.05"], dir.path());
    assert_eq!(code(&out), 0);
    let verdict = json(&out);
    assert_eq!(verdict["stable"], false);
    assert!(verdict["failing_condition"].as_u64().is_some());
}

#[test]
fn solve_writes_one_csv_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = exdiff(
        &[
            "solve", "--agents", "8", "--dim", "5", "--samples", "12", "--algorithms",
            "diffusion,exact_diffusion", "--mu-o", "0.05", "--max-iters", "1500", "--out", "runs/ls",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (diffusion, _) = trajectory(&dir.path().join("runs/ls_diffusion_mu0.05.csv"));
    let (exact, trailer) = trajectory(&dir.path().join("runs/ls_exact_diffusion_mu0.05.csv"));
    assert!(trailer.is_none());
    assert_eq!(diffusion[0], 1.0);
    assert_eq!(exact.len(), 1500);
    let plateau = diffusion.last().unwrap();
    let final_exact = exact.last().unwrap();
    assert!(*final_exact < 1e-10, "exact diffusion ends at {final_exact:e}");
    assert!(plateau / final_exact > 1e6);
    assert_eq!(json(&out)["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn divergence_is_a_finding() {
    let dir = tempfile::tempdir().unwrap();
    let out = exdiff(
        &[
            "solve", "--agents", "5", "--dim", "3", "--samples", "6", "--algorithms", "exact_diffusion",
            "--mu-o", "50", "--max-iters", "2000", "--out", "big",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let (_, trailer) = trajectory(&dir.path().join("big_exact_diffusion_mu50.csv"));
    assert!(trailer.unwrap().starts_with("# diverged at iteration "));
    assert!(json(&out)["runs"][0]["diverged_at"].as_u64().is_some());
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
        "agents": 6, "dim": 4, "samples": 8, "cost": "logistic",
        "algorithms": ["diffusion", "exact_diffusion"], "mu_o": [0.1, 0.05],
        "max_iters": 40, "out": "from_file"
    }"#;
    std::fs::write(dir.path().join("cfg.json"), config).unwrap();
    let out = exdiff(
        &["solve", "--config", "cfg.json", "--algorithms", "exact-diffusion", "--out", "from_flag"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&out);
    assert_eq!(summary["agents"], 6);
    assert_eq!(summary["dim"], 4);
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    for (run, mu) in runs.iter().zip(["0.1", "0.05"]) {
        assert_eq!(run["algorithm"], "exact_diffusion");
        let file = dir.path().join(format!("from_flag_exact_diffusion_mu{mu}.csv"));
        assert_eq!(trajectory(&file).0.len(), 40);
    }
    assert!(!dir.path().join("from_file_diffusion_mu0.1.csv").exists());
}

#[test]
fn solve_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        [
            "solve", "--agents", "5", "--dim", "3", "--samples", "6", "--algorithms",
            "exact_diffusion_adaptive,primal_dual", "--max-iters", "50", "--out", out,
        ]
    };
    assert_eq!(code(&exdiff(&args("a"), dir.path())), 0);
    assert_eq!(code(&exdiff(&args("b"), dir.path())), 0);
    for alg in ["exact_diffusion_adaptive", "primal_dual"] {
        let a = std::fs::read(dir.path().join(format!("a_{alg}_mu0.01.csv"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b_{alg}_mu0.01.csv"))).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn net_gen_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["net", "gen", "--n", "12", "--p", "0.3", "--seed", "5"];
    let first = exdiff(&args, dir.path());
    let second = exdiff(&args, dir.path());
    assert_eq!(code(&first), 0);
    assert_eq!(first.stdout, second.stdout);
    let file: NetworkFile = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(file.n, 12);
    let net = Network::from_file(&file).unwrap();
    assert_eq!(net, Network::random(12, 0.3, 5));

    let hub = exdiff(&["net", "gen", "--n", "20", "--hubs", "2", "--out", "hub.json"], dir.path());
    assert_eq!(code(&hub), 0);
    let net = Network::load(dir.path().join("hub.json")).unwrap();
    assert_eq!(net, Network::unbalanced(2, 18));
    assert_eq!(code(&exdiff(&["net", "gen", "--p", "1.5"], dir.path())), 2);
}
