use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qsg_cli::output::sha256_hex;
use tempfile::TempDir;

const BASE: &str = r#"
schema_version = 1
N = 6
K = 3
alpha = 0.5
horizon = 40
probe_every = 10
seed = 17
trials = 3

[channel]
kind = "hard"
"#;

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn qsg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsg"))
        .args(args)
        .env_remove("QSG_WORKERS")
        .output()
        .unwrap()
}

fn run_cmd(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    qsg(&args)
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn digests(out: &Path) -> Vec<(String, String)> {
    manifest(out)["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["file"].as_str().unwrap().to_string(), f["sha256"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn golden_trajectory_pins_columns_and_formatting() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    ok(&run_cmd("run", &golden("run.toml"), &out, &[]));
    for (produced, pinned) in [("trajectory.csv", "run_trajectory.csv"), ("terminals.csv", "run_terminals.csv")] {
        let got = std::fs::read_to_string(out.join(produced)).unwrap();
        let want = std::fs::read_to_string(golden(pinned)).unwrap();
        assert_eq!(got, want, "{produced} drifted from tests/golden/{pinned}");
    }
}

#[test]
fn csv_layout_is_utf8_header_first_newline_terminated() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    ok(&run_cmd("run", &golden("run.toml"), &out, &[]));
    let text = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(text.ends_with('\n'));
    assert!(!text.contains('\r'));
    let first = text.lines().next().unwrap();
    assert_eq!(first, "trial,step,U,V,q,S,H,M,p_max,mean_0,mean_1,mean_2");
}

#[test]
fn soft_run_has_constant_u_at_one_over_k() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "soft.toml", &BASE.replace("\"hard\"", "\"soft\""));
    let out = tmp.path().join("out");
    ok(&run_cmd("run", &cfg, &out, &[]));
    let (h, rows) = read_csv(&out.join("trajectory.csv"));
    let u = h.iter().position(|c| c == "U").unwrap();
    assert_eq!(rows.len(), 3 * 5);
    for r in rows {
        let v: f64 = r[u].parse().unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12, "{v}");
    }
}

#[test]
fn reruns_reproduce_data_digests_across_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", BASE);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&run_cmd("run", &cfg, &a, &["--workers", "1"]));
    ok(&run_cmd("run", &cfg, &b, &["--workers", "3"]));
    assert_eq!(digests(&a), digests(&b));
    for (file, _) in digests(&a) {
        assert_eq!(std::fs::read(a.join(&file)).unwrap(), std::fs::read(b.join(&file)).unwrap(), "{file}");
    }
    assert_eq!(manifest(&a)["config_sha256"], manifest(&b)["config_sha256"]);
}

#[test]
fn manifest_digests_verify_and_echo_the_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", BASE);
    let out = tmp.path().join("out");
    ok(&run_cmd("run", &cfg, &out, &["--seed", "99"]));
    let m = manifest(&out);
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["command"], "run");
    assert_eq!(m["seed"], 99);
    assert_eq!(m["config"]["seed"], 99);
    assert_eq!(m["config"]["N"], 6);
    assert!(m["build"].as_str().unwrap().starts_with("qsg-cli"));
    assert!(m["started_at"].is_string() && m["finished_at"].is_string());
    let files = digests(&out);
    assert_eq!(
        files.iter().map(|f| f.0.as_str()).collect::<Vec<_>>(),
        ["trajectory.csv", "terminals.csv", "estimates.csv"]
    );
    for (file, sha) in files {
        assert_eq!(sha256_hex(&std::fs::read(out.join(&file)).unwrap()), sha, "{file}");
    }
}

#[test]
fn seed_and_trial_overrides_apply() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", BASE);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&run_cmd("run", &cfg, &a, &["--trials", "5"]));
    ok(&run_cmd("run", &cfg, &b, &["--trials", "5", "--seed", "18"]));
    let (_, ra) = read_csv(&a.join("trajectory.csv"));
    let (_, rb) = read_csv(&b.join("trajectory.csv"));
    assert_eq!(ra.len(), 5 * 5);
    assert_ne!(ra, rb);
}

#[test]
fn estimates_rows_carry_the_config_hash() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", BASE);
    let out = tmp.path().join("out");
    ok(&run_cmd("run", &cfg, &out, &[]));
    let (h, rows) = read_csv(&out.join("estimates.csv"));
    assert_eq!(h, ["name", "value", "std_error", "n", "config_hash"]);
    let hash = manifest(&out)["config_sha256"].as_str().unwrap()[..16].to_string();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[4] == hash));
}

#[test]
fn missing_field_exits_one_naming_the_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", &BASE.replace("alpha = 0.5\n", ""));
    let o = run_cmd("run", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("alpha"), "{e}");
    assert!(e.contains("line"), "{e}");
}

#[test]
fn invalid_value_exits_one_naming_the_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", &BASE.replace("alpha = 0.5", "alpha = 1.5"));
    let o = run_cmd("run", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`alpha`"), "{}", stderr(&o));
}

#[test]
fn unreadable_config_and_bad_flags_exit_one() {
    let tmp = TempDir::new().unwrap();
    let o = run_cmd("run", &tmp.path().join("absent.toml"), &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(qsg(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(qsg(&[]).status.code(), Some(1));
    assert_eq!(qsg(&["--help"]).status.code(), Some(0));
}

#[test]
fn unwritable_output_exits_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", BASE);
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = run_cmd("run", &cfg, &blocker.join("sub"), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn empty_sweep_values_exit_nonzero() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", &format!("{BASE}\n[sweep]\naxis = \"m\"\nvalues = []\n"));
    let o = run_cmd("sweep", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sweep.values"), "{}", stderr(&o));
}

#[test]
fn sweep_rows_are_sorted_and_carry_theory_columns() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", &format!("{BASE}\n[sweep]\naxis = \"m\"\nvalues = [5, 1, 2]\n"));
    let out = tmp.path().join("out");
    ok(&run_cmd("sweep", &cfg, &out, &[]));
    let (h, rows) = read_csv(&out.join("sweep.csv"));
    assert_eq!(&h[..4], ["axis", "value", "trial", "step"]);
    assert_eq!(&h[h.len() - 2..], ["meanfield_U", "predicted_drift"]);
    assert_eq!(rows.len(), 3 * 3 * 5);
    let keys: Vec<(f64, u64, u64)> = rows
        .iter()
        .map(|r| (r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap()))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(keys, sorted);
    assert_eq!(keys[0].0, 1.0);

    // Step-0 rows from the symmetric state: theory U is 1/K and the
    // predicted drift is alpha^2 (1 - 1/K) / (m N^2).
    for r in rows.iter().filter(|r| r[3] == "0") {
        let m: f64 = r[1].parse().unwrap();
        let mf: f64 = r[h.len() - 2].parse().unwrap();
        let pd: f64 = r[h.len() - 1].parse().unwrap();
        assert!((mf - 1.0 / 3.0).abs() < 1e-12);
        let want = 0.25 * (2.0 / 3.0) / (m * 36.0);
        assert!((pd - want).abs() < 1e-15, "{pd} vs {want}");
    }
    let (sh, srows) = read_csv(&out.join("sweep_summary.csv"));
    assert!(sh.contains(&"normalized_early_drift".to_string()));
    assert!(sh.contains(&"consensus_median".to_string()));
    assert_eq!(srows.len(), 3);
}

#[test]
fn sweep_rejects_non_integer_bandwidth() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", &format!("{BASE}\n[sweep]\naxis = \"m\"\nvalues = [1.5]\n"));
    let o = run_cmd("sweep", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", &format!("{BASE}\n[sweep]\naxis = \"N\"\nvalues = [4, 8]\n"));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&run_cmd("sweep", &cfg, &a, &["--workers", "1"]));
    ok(&run_cmd("sweep", &cfg, &b, &["--workers", "2"]));
    assert_eq!(digests(&a), digests(&b));
}

#[test]
fn drift_check_on_soft_exits_nonzero() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", &BASE.replace("\"hard\"", "\"soft\""));
    let o = run_cmd("drift-check", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("channel"), "{}", stderr(&o));
}

#[test]
fn drift_check_pulls_are_small_and_report_m() {
    let tmp = TempDir::new().unwrap();
    let text = format!(
        "{}\n[drift_check]\nruns = 3\nsnapshots_per_run = 5\nmax_step = 200\nsamples = 40000\n",
        BASE.replace("kind = \"hard\"", "kind = \"top-m\"\nm = 2")
    );
    let cfg = write_config(&tmp, "c.toml", &text);
    let out = tmp.path().join("out");
    ok(&run_cmd("drift-check", &cfg, &out, &[]));
    let (h, rows) = read_csv(&out.join("drift_check.csv"));
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    assert_eq!(rows.len(), 15);
    let small = rows
        .iter()
        .filter(|r| r[col("pull")].parse::<f64>().unwrap().abs() < 4.0)
        .count();
    assert!(small >= 14, "{small} of 15 pulls below 4");
    assert!(rows.iter().all(|r| r[col("m")] == "2.0000000000000000"));
    for r in &rows {
        let q: f64 = r[col("q")].parse().unwrap();
        let pred: f64 = r[col("predicted_injection")].parse().unwrap();
        let want = 0.25 * (1.0 - q) / (2.0 * 36.0);
        assert!((pred - want).abs() <= 1e-15 * want.max(1e-300) + 1e-18);
    }
}

#[test]
fn fixation_with_k_not_two_exits_nonzero() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", &format!("{BASE}\n[fixation]\nN = [4]\nh = [0.0]\n"));
    let o = run_cmd("fixation", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`K`"), "{}", stderr(&o));
}

#[test]
fn fixation_grid_schema_and_neutral_rows() {
    let tmp = TempDir::new().unwrap();
    let text = format!(
        "{}\n[fixation]\nN = [8, 4]\nh = [0.2, 0.0]\n",
        BASE.replace("K = 3", "K = 2").replace("horizon = 40", "horizon = 100000").replace("trials = 3", "trials = 300")
    );
    let cfg = write_config(&tmp, "c.toml", &text);
    let out = tmp.path().join("out");
    ok(&run_cmd("fixation", &cfg, &out, &[]));
    let (h, rows) = read_csv(&out.join("fixation.csv"));
    for c in ["N", "h", "decided", "estimate", "wilson_low", "wilson_high", "gamma_h", "logistic", "N_c"] {
        assert!(h.contains(&c.to_string()), "missing column {c}");
    }
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[col("N")].clone(), r[col("h")].clone())).collect();
    assert_eq!(keys[0], ("4".to_string(), "0.0000000000000000".to_string()));
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r[col("decided")], "300");
        let lo: f64 = r[col("wilson_low")].parse().unwrap();
        let hi: f64 = r[col("wilson_high")].parse().unwrap();
        let est: f64 = r[col("estimate")].parse().unwrap();
        assert!(lo <= est && est <= hi);
        if r[col("h")] == "0.0000000000000000" {
            assert!(lo < 0.5 && 0.5 < hi, "neutral row {r:?}");
            assert_eq!(r[col("N_c")], "inf");
        } else {
            let gamma: f64 = r[col("gamma_h")].parse().unwrap();
            let n: f64 = r[col("N")].parse().unwrap();
            assert!((gamma - n * 0.2 / 0.5).abs() < 1e-12);
            assert!(est > 0.5);
        }
    }
}

#[test]
fn theory_curve_starts_at_one_over_k() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", BASE);
    let out = tmp.path().join("out");
    ok(&run_cmd("theory", &cfg, &out, &[]));
    let (h, rows) = read_csv(&out.join("theory.csv"));
    assert_eq!(h, ["step", "rounds", "meanfield_U"]);
    assert_eq!(rows.len(), 5);
    let u0: f64 = rows[0][2].parse().unwrap();
    assert!((u0 - 1.0 / 3.0).abs() < 1e-15);
    let us: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(us.windows(2).all(|w| w[1] > w[0]));
    let (_, scalars) = read_csv(&out.join("theory_scalars.csv"));
    assert!(scalars.iter().any(|r| r[0] == "consensus_time_steps"));
}

#[test]
fn nnd_bridge_run_reports_exact_provenance() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
schema_version = 1
trials = 4

[policy]
kind = "qsg-bridge"
alpha = 0.5

[nnd]
N = 6
K = 3
m = 1
H = 4
referent = "thing"
horizon = 3000
probe_every = 25
probe_samples_per_agent = 5
U_star = 0.9
seed = 3
"#;
    let cfg = write_config(&tmp, "n.toml", text);
    let out = tmp.path().join("out");
    ok(&run_cmd("nnd", &cfg, &out, &[]));
    let (h, rows) = read_csv(&out.join("nnd_trajectory.csv"));
    assert_eq!(&h[..3], ["trial", "step", "provenance"]);
    assert_eq!(h.last().unwrap(), "probe_U");
    assert!(rows.iter().all(|r| r[2] == "exact"));
    let (_, labels) = read_csv(&out.join("labels.csv"));
    assert_eq!(labels.len(), 3);
    assert!(labels.iter().all(|r| r[1].len() == 5));
}

#[test]
fn nnd_frequency_run_reports_probe_provenance() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
schema_version = 1
trials = 2

[policy]
kind = "frequency"

[nnd]
N = 4
K = 3
m = 2
H = 5
referent = "thing"
horizon = 100
probe_every = 50
probe_samples_per_agent = 4
U_star = 0.9
seed = 3
"#;
    let cfg = write_config(&tmp, "n.toml", text);
    let out = tmp.path().join("out");
    ok(&run_cmd("nnd", &cfg, &out, &[]));
    let (h, rows) = read_csv(&out.join("nnd_trajectory.csv"));
    let v = h.iter().position(|c| c == "V").unwrap();
    assert!(rows.iter().all(|r| r[2] == "probe" && r[v] == "NaN"));
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        if name.starts_with("nnd") {
            qsg_cli::load_nnd(&path).unwrap().validate().unwrap();
        } else {
            qsg_cli::load_experiment(&path).unwrap().validate().unwrap();
        }
        seen += 1;
    }
    assert!(seen >= 5);
}
