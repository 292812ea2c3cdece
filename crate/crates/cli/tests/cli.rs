use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_superbunch"));
    c.env_remove("SUPERBUNCH_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
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

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Short, valid two-stage run: 500 coherence times.
const SHORT: &[&str] = &["--duration", "0.1"];

#[test]
fn theory_prints_zero_delay_law() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("th");
    let text = ok(&["theory", "--order", "3", "--stages", "2", "--bandwidth-hz", "5000", "--grid", "101", "--out", p(&out)]);
    assert!(text.contains("n = 2: 36"), "{text}");
    assert!(text.contains("n = 3: 216"), "{text}");
    assert!(text.contains("n = 4: 1296"), "{text}");
    let th = json(&out.join("theory.json"));
    assert_eq!(th["zero_delay"], 36);
    let surface = fs::read_to_string(out.join("surface.csv")).unwrap();
    assert_eq!(surface.lines().count(), 2 + 101 * 101);
    for name in ["slice_t1_eq_t3.csv", "slice_t1t2_eq_t2t3.csv", "slice_t1_eq_t2.csv", "manifest.json"] {
        assert!(out.join(name).exists(), "{name}");
    }

    let text = ok(&["theory", "--stages", "3", "--out", p(&dir.path().join("th3"))]);
    assert!(text.contains("for 3 stage(s): 216"), "{text}");
}

#[test]
fn theory_without_stages_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("flat");
    ok(&["theory", "--stages", "0", "--grid", "21", "--out", p(&out)]);
    let text = fs::read_to_string(out.join("surface.csv")).unwrap();
    for line in text.lines().skip(2) {
        let value: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(value, 1.0);
    }
}

#[test]
fn every_output_records_the_manifest_hash() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let ana = dir.path().join("ana");
    let mut args = vec!["simulate", "--out", p(&sim)];
    args.extend_from_slice(SHORT);
    ok(&args);
    ok(&["analyze", "--in", p(&sim), "--out", p(&ana)]);
    for d in [&sim, &ana] {
        let m = json(&d.join("manifest.json"));
        let hash = m["hash"].as_str().unwrap().to_string();
        for o in m["outputs"].as_array().unwrap() {
            let name = o["path"].as_str().unwrap();
            let path = d.join(name);
            if name.ends_with(".csv") {
                let first = fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
                assert_eq!(first, format!("# manifest_hash={hash}"));
            } else if name.ends_with(".json") {
                assert_eq!(json(&path)["manifest_hash"], hash.as_str(), "{name}");
            }
        }
    }
    // binary streams are covered by digests in the run record
    let record = json(&sim.join("simulation.json"));
    assert_eq!(record["streams"].as_array().unwrap().len(), 3);
}

#[test]
fn simulate_is_deterministic_and_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let mut args = vec!["simulate", "--out", p(&a), "--seed", "42"];
    args.extend_from_slice(SHORT);
    ok(&args);
    let mut args = vec!["--threads", "3", "simulate", "--out", p(&b), "--seed", "42"];
    args.extend_from_slice(SHORT);
    ok(&args);
    for ch in 1..=3 {
        let name = format!("ch{ch}.pstr");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
    assert_eq!(json(&a.join("manifest.json"))["hash"], json(&b.join("manifest.json"))["hash"]);
}

#[test]
fn seed_environment_variable_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let bw = 2.0 * PI * 5_000.0;
    let config = serde_json::json!({
        "n_stages": 1,
        "bandwidths": [bw],
        "mean_rate_per_detector": 5000.0,
        "duration": 0.05,
        "modes_per_stage": 128,
        "sample_dt": 2e-4 / 32.0,
        "seed": 3
    });
    fs::write(&cfg, config.to_string()).unwrap();
    let from_env = dir.path().join("env");
    let out = bin()
        .args(["simulate", "--config", p(&cfg), "--out", p(&from_env)])
        .env("SUPERBUNCH_SEED", "99")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&from_env.join("simulation.json"))["config"]["seed"], 99);

    let plain = dir.path().join("plain");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&plain)]);
    assert_eq!(json(&plain.join("simulation.json"))["config"]["seed"], 3);
    assert_ne!(fs::read(plain.join("ch1.pstr")).unwrap(), fs::read(from_env.join("ch1.pstr")).unwrap());

    // an explicit flag wins over the environment
    let flag = dir.path().join("flag");
    let out = bin()
        .args(["simulate", "--config", p(&cfg), "--seed", "7", "--out", p(&flag)])
        .env("SUPERBUNCH_SEED", "99")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(json(&flag.join("simulation.json"))["config"]["seed"], 7);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"n_stages": 1, "bandwidths": [31415.9], "mean_rate": 1}"#).unwrap();
    let out = run(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--sample-dt", "1e-3", "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("undersampled field"), "{err}");

    let out = run(&["simulate", "--stages", "2", "--bandwidth-hz", "1000,2000,3000", "--out", p(&dir.path().join("y"))]);
    assert_eq!(code(&out), 2);

    let out = run(&["theory", "--grid", "100", "--out", p(&dir.path().join("z"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn analysis_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["analyze", "--in", p(&dir.path().join("nothing")), "--coherence-time-ps", "2e8", "--out", p(&dir.path().join("a"))]);
    assert_eq!(code(&missing), 3);

    let bad = dir.path().join("bad");
    fs::create_dir(&bad).unwrap();
    fs::write(bad.join("ch1.csv"), "5\n3\n").unwrap();
    fs::write(bad.join("ch2.csv"), "1\n2\n").unwrap();
    fs::write(bad.join("ch3.csv"), "1\n2\n").unwrap();
    let unsorted = run(&["analyze", "--in", p(&bad), "--coherence-time-ps", "2e8", "--out", p(&dir.path().join("b"))]);
    assert_eq!(code(&unsorted), 3);
    let err = String::from_utf8_lossy(&unsorted.stderr);
    assert!(err.contains("ch1.csv"), "{err}");
}

#[test]
fn uncorrelated_streams_give_unit_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    // coherent light: no stages
    ok(&["simulate", "--stages", "0", "--rate", "20000", "--duration", "2", "--sample-dt", "1e-6", "--out", p(&sim)]);
    let ana = dir.path().join("ana");
    ok(&["analyze", "--in", p(&sim), "--coherence-time-ps", "2e8", "--out", p(&ana)]);
    let s = json(&ana.join("summary.json"));
    let ratio = s["surface"]["ratio"].as_f64().unwrap();
    let sigma = s["surface"]["ratio_sigma"].as_f64().unwrap();
    assert!((ratio - 1.0).abs() < 4.0 * sigma, "{ratio} ± {sigma}");
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Noise-free profile with unit sigmas.
fn write_profile(path: &Path, mut f: impl FnMut(f64) -> f64) {
    let mut text = String::from("tau_ps,value,sigma\n");
    for k in -100i64..=100 {
        let tau_ps = k * 10_000_000;
        text += &format!("{tau_ps},{},1\n", f(tau_ps as f64 * 1e-12));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn fit_recovers_noise_free_tabulations() {
    let dir = tempfile::tempdir().unwrap();
    let bw = 2.0 * PI * 5_000.0;
    let eq5 = |t: f64| {
        let (a, b) = (sinc(0.5 * bw * t).powi(2), sinc(bw * t));
        (1.0 + 2.0 * a + b * b + 2.0 * a * b).powi(2)
    };
    let eq4 = |t: f64| (1.0 + 2.0 * sinc(0.5 * bw * t).powi(2)).powi(2);
    for (model, f, peak) in [("eq5", &eq5 as &dyn Fn(f64) -> f64, 36.0), ("eq4", &eq4, 9.0)] {
        let csv = dir.path().join(format!("{model}.csv"));
        write_profile(&csv, f);
        let out = dir.path().join(format!("{model}.json"));
        ok(&["fit", "--slice", p(&csv), "--model", model, "--stages", "2", "--out", p(&out)]);
        let fit = json(&out);
        let g = fit["g3_zero"].as_f64().unwrap();
        assert!((g / peak - 1.0).abs() < 1e-3, "{model}: {g}");
        assert!((fit["bandwidth"].as_f64().unwrap() / bw - 1.0).abs() < 1e-3);
        assert_eq!(fit["converged"], true);
        assert!(dir.path().join(format!("{model}.manifest.json")).exists());
    }
}

#[test]
fn fit_failures_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.csv");
    write_profile(&flat, |_| 2.0);
    let out = run(&["fit", "--slice", p(&flat), "--out", p(&dir.path().join("f.json"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate profile"));

    // one iteration from the automatic start cannot converge on a noisy profile
    let noisy = dir.path().join("noisy.csv");
    let bw = 2.0 * PI * 5_000.0;
    let mut k = 0u64;
    write_profile(&noisy, |t| {
        k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let noise = (k >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        (1.0 + 2.0 * sinc(0.5 * bw * t).powi(2)).powi(2) + 0.3 * noise
    });
    let out_path = dir.path().join("n.json");
    let out = run(&["fit", "--slice", p(&noisy), "--model", "eq4", "--max-iterations", "1", "--out", p(&out_path)]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out_path)["converged"], false);
}

#[test]
fn replay_reproduces_and_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let ana = dir.path().join("ana");
    let mut args = vec!["simulate", "--out", p(&sim)];
    args.extend_from_slice(SHORT);
    ok(&args);
    ok(&["analyze", "--in", p(&sim), "--out", p(&ana)]);

    let again = dir.path().join("again");
    let text = ok(&["replay", p(&sim.join("manifest.json")), "--out", p(&again)]);
    assert!(text.contains("reproduced 4 output(s)"), "{text}");
    assert_eq!(fs::read(sim.join("ch2.pstr")).unwrap(), fs::read(again.join("ch2.pstr")).unwrap());

    let ana2 = dir.path().join("ana2");
    ok(&["replay", p(&ana.join("manifest.json")), "--out", p(&ana2)]);
    assert_eq!(
        fs::read(ana.join("summary.json")).unwrap(),
        fs::read(ana2.join("summary.json")).unwrap()
    );

    // tamper with an input stream
    fs::copy(again.join("ch1.pstr"), sim.join("ch1.pstr")).unwrap();
    let bytes = fs::read(sim.join("ch1.pstr")).unwrap();
    fs::write(sim.join("ch1.pstr"), &bytes[..bytes.len() - 8]).unwrap();
    let out = run(&["replay", p(&ana.join("manifest.json")), "--out", p(&dir.path().join("ana3"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = ["pipeline", "--duration", "0.2", "--seed", "5"];
    let mut first = args.to_vec();
    first.extend(["--out", p(&a)]);
    ok(&first);
    let mut second = vec!["--threads", "2"];
    second.extend(args);
    second.extend(["--out", p(&b)]);
    ok(&second);
    for rel in ["analyze/summary.json", "fit_t1_eq_t3.json", "fit_t1t2_eq_t2t3.json", "simulate/ch3.pstr"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
    }
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["command"], "pipeline");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 12);
}
