use riskmpc::cli::{run, EXIT_CONFIG, EXIT_OK};
use riskmpc::config::ScenarioConfig;
use riskmpc::tightening::TighteningSchedule;
use std::fs;
use std::io::BufReader;
use std::path::Path;
use tempfile::TempDir;

fn riskmpc(args: &[&str]) -> i32 {
    run(std::iter::once("riskmpc").chain(args.iter().copied()))
}

fn out(dir: &Path) -> String {
    dir.display().to_string()
}

fn write_config(dir: &Path, cfg: &ScenarioConfig) -> String {
    let path = dir.join("scenario.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path.display().to_string()
}

#[test]
fn synthesize_builtin_reports_zero_c_f() {
    let dir = TempDir::new().unwrap();
    assert_eq!(riskmpc(&["synthesize", "--out-dir", &out(dir.path())]), EXIT_OK);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("synthesis.json")).unwrap()).unwrap();
    assert!(report["c_f"].as_f64().unwrap().abs() < 1e-9);
    assert!((report["stationary_cost"].as_f64().unwrap() - 4.277_087_13).abs() < 1e-6);
    assert_eq!(report["stationary_admissible"], true);
}

#[test]
fn synthesize_scalar_config() {
    let dir = TempDir::new().unwrap();
    let text = r#"{
      "schema_version": 1, "name": "scalar",
      "system": { "a": [[1.0]], "b": [[1.0]], "sigma_w": [[1.0]], "gain": "riccati" },
      "cost": { "q": [[1.0]], "r": [[1.0]], "form": "as_printed" },
      "constraints": { "risk": { "kind": "cvar", "alpha": 0.4 }, "state": [] },
      "horizon": 3, "initial": { "mean": [0.5] },
      "sim": { "paths": 10, "steps": 5, "performance_steps": 5, "seed": 1, "bootstrap": 0 },
      "tightening": { "mode": "gaussian", "mc_paths": 1000, "mc_seed": 1 }
    }"#;
    let path = dir.path().join("scalar.json");
    fs::write(&path, text).unwrap();
    assert_eq!(riskmpc(&["synthesize", "--config", &path.display().to_string(), "--out-dir", &out(dir.path())]), EXIT_OK);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("synthesis.json")).unwrap()).unwrap();
    let p = report["p_star"][0][0].as_f64().unwrap();
    assert!((p - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
}

#[test]
fn malformed_configs_exit_with_config_code() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ScenarioConfig::builtin("dcdc").unwrap();
    cfg.system.b = vec![vec![4.798]];
    let path = write_config(dir.path(), &cfg);
    assert_eq!(riskmpc(&["synthesize", "--config", &path, "--out-dir", &out(dir.path())]), EXIT_CONFIG);

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{ \"schema_version\": 1,\n  \"name\": }").unwrap();
    assert_eq!(riskmpc(&["simulate", "--config", &broken.display().to_string(), "--out-dir", &out(dir.path())]), EXIT_CONFIG);

    assert_eq!(riskmpc(&["synthesize", "--config", "/nonexistent/scenario.json"]), EXIT_CONFIG);
    assert_eq!(riskmpc(&["simulate", "--risk", "median"]), EXIT_CONFIG);
    assert_eq!(riskmpc(&["synthesize", "nosuchscenario"]), EXIT_CONFIG);
}

#[test]
fn infeasible_start_exits_with_config_code() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ScenarioConfig::builtin("dcdc").unwrap();
    cfg.initial.mean = vec![30.0, 0.0];
    let path = write_config(dir.path(), &cfg);
    let code = riskmpc(&["simulate", "--config", &path, "--paths", "10", "--steps", "5", "--out-dir", &out(dir.path())]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn tighten_writes_a_monotone_schedule() {
    let dir = TempDir::new().unwrap();
    assert_eq!(riskmpc(&["tighten", "--risk", "cvar", "--out-dir", &out(dir.path())]), EXIT_OK);
    let file = fs::File::open(dir.path().join("schedule.csv")).unwrap();
    let sched = TighteningSchedule::read_csv(BufReader::new(file)).unwrap();
    assert_eq!(sched.len(), 65);
    assert!(sched.state[0].windows(2).all(|w| w[1] >= w[0]));
    assert!(sched.state[0].iter().all(|&b| b <= sched.steady_state_state[0] + 1e-9));

    assert_eq!(riskmpc(&["tighten", "--risk", "e", "--out-dir", &out(dir.path())]), EXIT_OK);
    let file = fs::File::open(dir.path().join("schedule.csv")).unwrap();
    let sched = TighteningSchedule::read_csv(BufReader::new(file)).unwrap();
    assert!(sched.state[0].iter().all(|&b| b == 0.0));
}

#[test]
fn monte_carlo_tighten_is_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        let code = riskmpc(&["tighten", "--mode", "mc", "--paths", "20000", "--steps", "30", "--out-dir", &out(d.path())]);
        assert_eq!(code, EXIT_OK);
    }
    let fa = fs::read(a.path().join("schedule.csv")).unwrap();
    assert_eq!(fa, fs::read(b.path().join("schedule.csv")).unwrap());
}

#[test]
fn user_bounds_must_dominate_the_gaussian_back_offs() {
    let dir = TempDir::new().unwrap();
    assert_eq!(riskmpc(&["tighten", "--steps", "30", "--out-dir", &out(dir.path())]), EXIT_OK);
    let file = fs::File::open(dir.path().join("schedule.csv")).unwrap();
    let gauss = TighteningSchedule::read_csv(BufReader::new(file)).unwrap();

    let write = |name: &str, shift: f64| {
        let mut s = gauss.clone();
        s.state[0].iter_mut().for_each(|b| *b += shift);
        s.steady_state_state[0] += shift;
        let path = dir.path().join(name);
        s.write_csv(fs::File::create(&path).unwrap()).unwrap();
        path.display().to_string()
    };
    let loose = write("loose.csv", 0.05);
    let tight = write("tight.csv", -0.05);
    let o = out(dir.path());
    let user = |f: &str| riskmpc(&["tighten", "--mode", "user", "--user-file", f, "--steps", "30", "--out-dir", &o]);
    assert_eq!(user(&loose), EXIT_OK);
    assert_eq!(user(&tight), EXIT_CONFIG);
}

#[test]
fn gaussian_mode_is_refused_for_uniform_noise() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ScenarioConfig::builtin("dcdc").unwrap();
    let h = 0.3f64.sqrt();
    cfg.system.noise = riskmpc::config::NoiseSpec::Uniform { half_widths: vec![h, h] };
    cfg.system.sigma_w = vec![vec![h * h / 3.0, 0.0], vec![0.0, h * h / 3.0]];
    let path = write_config(dir.path(), &cfg);
    assert_eq!(riskmpc(&["tighten", "--config", &path, "--mode", "gaussian", "--out-dir", &out(dir.path())]), EXIT_CONFIG);
    let code = riskmpc(&["tighten", "--config", &path, "--mode", "mc", "--paths", "5000", "--steps", "20", "--out-dir", &out(dir.path())]);
    assert_eq!(code, EXIT_OK);
}

#[test]
fn simulate_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        let code = riskmpc(&["simulate", "--paths", "100", "--seed", "1", "--steps", "30", "--bootstrap", "20", "--out-dir", &out(d.path())]);
        assert_eq!(code, EXIT_OK);
    }
    for name in ["risk_trajectories.csv", "performance.csv", "feasibility.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let risk = fs::read_to_string(a.path().join("risk_trajectories.csv")).unwrap();
    assert_eq!(risk.lines().next(), Some("k,measure,value,se"));
    assert_eq!(risk.lines().count(), 1 + 4 * 31);
    let perf = fs::read_to_string(a.path().join("performance.csv")).unwrap();
    assert_eq!(perf.lines().next(), Some("L,running_average,lower_bound,upper_bound,gain_label"));
    assert_eq!(fs::read_to_string(a.path().join("feasibility.csv")).unwrap(), "path,step,status\n");
}

#[test]
fn detuned_gain_and_small_reproduction() {
    let dir = TempDir::new().unwrap();
    let code = riskmpc(&["simulate", "--gain", "ktilde", "--paths", "200", "--steps", "100", "--bootstrap", "0", "--out-dir", &out(dir.path())]);
    assert_eq!(code, EXIT_OK);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!((summary["upper_bound"].as_f64().unwrap() - 29.142_460_79).abs() < 1e-6);
    assert_eq!(summary["audits"]["risk_constraints"], serde_json::Value::Null);

    let rep = TempDir::new().unwrap();
    let code = riskmpc(&[
        "reproduce-dcdc", "--paths", "200", "--steps", "20", "--performance-steps", "50", "--bootstrap", "20",
        "--out-dir", &out(rep.path()),
    ]);
    assert!(code == EXIT_OK || code == 3);
    for m in ["e", "var", "cvar", "evar"] {
        assert!(rep.path().join(format!("risk_trajectories_{m}.csv")).exists());
    }
    let perf = fs::read_to_string(rep.path().join("performance.csv")).unwrap();
    assert_eq!(perf.lines().filter(|l| l.ends_with(",kstar")).count(), 50);
    assert_eq!(perf.lines().filter(|l| l.ends_with(",ktilde")).count(), 50);
    assert_eq!(fs::read_to_string(rep.path().join("feasibility.csv")).unwrap(), "path,step,status,run\n");
}

#[test]
fn config_file_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = ScenarioConfig::builtin("dcdc").unwrap();
    let path = write_config(dir.path(), &cfg);
    let back = ScenarioConfig::load(Path::new(&path)).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(ScenarioConfig::from_json(&back.to_json()).unwrap(), cfg);
}
