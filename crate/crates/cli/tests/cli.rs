use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fhn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fhn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).expect("column present");
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const PDE_SMALL: &str = "
[grid]
nx = 64
nv = 64
[run]
t_final = 0.5
[pde]
boundary_tol = 1e-4
";

#[test]
fn missing_config_is_a_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fhn(tmp.path(), &["solve-pde", "--config", "nope.toml"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[grid]\nnx = 8\nbogus = 1\n");
    let o = fhn(tmp.path(), &["solve-pde", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_preset_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fhn(tmp.path(), &["solve-pde", "--preset", "nonsense"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unstable_time_step_names_the_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &PDE_SMALL.replace("t_final = 0.5", "t_final = 0.5\ndt = 0.5"));
    let o = fhn(tmp.path(), &["solve-pde", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("stable bound"), "{}", stderr(&o));
}

#[test]
fn solve_pde_conserves_mass_and_writes_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), PDE_SMALL);
    let o = fhn(tmp.path(), &["solve-pde", "--config", cfg.to_str().unwrap(), "--out", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("run");
    let defects = csv_column(&out.join("series.csv"), "mass_defect");
    assert!(defects.len() >= 2);
    assert!(defects.iter().all(|d| d.abs() <= 1e-10), "{defects:?}");
    assert!(csv_column(&out.join("series.csv"), "min_f").iter().all(|m| *m >= 0.0));
    let m = manifest(&out);
    assert_eq!(m["command"], "solve-pde");
    for entry in m["outputs"].as_array().unwrap() {
        let file = out.join(entry["file"].as_str().unwrap());
        assert_eq!(std::fs::metadata(&file).unwrap().len(), entry["bytes"].as_u64().unwrap());
        assert_eq!(entry["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn frozen_coupling_is_irrelevant_without_interaction() {
    // with eps = 0 the coupling term vanishes, so freezing j changes nothing
    let tmp = tempfile::tempdir().unwrap();
    let free = write_config(tmp.path(), &format!("{PDE_SMALL}\n[model]\neps = 0.0\n"));
    let a = fhn(tmp.path(), &["solve-pde", "--config", free.to_str().unwrap(), "--out", "a"]);
    assert!(a.status.success(), "{}", stderr(&a));
    let frozen = tmp.path().join("frozen.toml");
    std::fs::write(&frozen, PDE_SMALL.replace("[pde]\n", "[pde]\nfrozen_j = 2.0\n") + "\n[model]\neps = 0.0\n").unwrap();
    let b = fhn(tmp.path(), &["solve-pde", "--config", frozen.to_str().unwrap(), "--out", "b"]);
    assert!(b.status.success(), "{}", stderr(&b));
    let va = csv_column(&tmp.path().join("a/series.csv"), "mean_v");
    let vb = csv_column(&tmp.path().join("b/series.csv"), "mean_v");
    assert_eq!(va.len(), vb.len());
    for (x, y) in va.iter().zip(&vb) {
        assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
    }
}

#[test]
fn particle_runs_are_reproducible_from_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[run]\nt_final = 0.2\n[particles]\nn = 200\n");
    let c = cfg.to_str().unwrap();
    for d in ["a", "b"] {
        let o = fhn(tmp.path(), &["simulate-particles", "--config", c, "--seed", "7", "--out", d]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("particles.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    let o = fhn(tmp.path(), &["simulate-particles", "--config", c, "--seed", "8", "--out", "c"]);
    assert!(o.status.success());
    assert_ne!(read("a"), read("c"));
    assert_eq!(manifest(&tmp.path().join("a"))["seed"], 7);
    assert_eq!(
        manifest(&tmp.path().join("a"))["config_hash"],
        manifest(&tmp.path().join("b"))["config_hash"]
    );
}

#[test]
fn stationary_and_spectrum_on_a_coarse_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[grid]\nnx = 32\nnv = 40\n[stationary]\neps_list = [0.4, 0.2]\n[spectrum]\nk = 4\n",
    );
    let c = cfg.to_str().unwrap();
    let o = fhn(tmp.path(), &["find-stationary", "--config", c, "--out", "st"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let st = tmp.path().join("st");
    let res = csv_column(&st.join("stationary.csv"), "residual_l1");
    assert!(!res.is_empty() && res.iter().all(|r| *r < 1e-8), "{res:?}");
    assert!(st.join("proximity.csv").exists());
    assert!(st.join("stationary_0.density").exists());

    let cfg = write_config(
        tmp.path(),
        "[grid]\nnx = 32\nnv = 40\n[spectrum]\nk = 4\nstationary = \"st/stationary_0\"\n",
    );
    let o = fhn(tmp.path(), &["spectrum", "--config", cfg.to_str().unwrap(), "--out", "sp"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sp = manifest(&tmp.path().join("sp"));
    assert!(sp["summary"]["mass_mode_defect"].as_f64().unwrap() < 1e-8);
    let re = csv_column(&tmp.path().join("sp/spectrum.csv"), "re");
    assert!(re.len() >= 2);
    assert!(re[1..].iter().all(|r| *r < 0.0), "{re:?}");
}

#[test]
fn chaos_and_regime_scan_at_tiny_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!(
            "{PDE_SMALL}\n[chaos]\nn_list = [50, 100]\ntrials = 4\n\
             [regime]\nj_list = [0.1]\nn = 100\nseeds = 1\n"
        ),
    );
    let c = cfg.to_str().unwrap();
    let o = fhn(tmp.path(), &["chaos-rate", "--config", c, "--out", "ch"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!csv_column(&tmp.path().join("ch/chaos.csv"), "mse").is_empty());
    let o = fhn(tmp.path(), &["regime-scan", "--config", c, "--out", "rg", "--threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("rg/regime.svg").exists());
}
