use std::path::Path;
use std::process::Command;

use chemostokes::monitor::{read_trace_csv, validate_trace};
use chemostokes::report::KvReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_chemostokes"));
    c.env("RUST_LOG", "warn");
    c
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const FIXED_CONSTANTS: &str = "constants.K2 = 1.25\nconstants.K3 = 0.79\nconstants.Ku = 1.3\nconstants.lambda1 = 52.16\n";

fn small_mass_cfg(out: &str) -> String {
    format!(
        "scenario = small_mass_eventual\nseed = 4\ngrid.nx = 16\ngrid.ny = 16\ntime.dt = 2e-3\ntime.t_end = 0.2\n\
         time.trace_every = 5\ntime.snapshot_every = 10\nn0.recipe = gaussian_bump\nn0.width = 0.2\nn0.mass = 1e-3\n\
         n0.background = 0.5\nc0.shape = cosine\nc0.floor = 1\nc0.amplitude = 0.05\nu0.recipe = random_solenoidal\n\
         u0.amplitude = 0.1\ncertificate.mass_fraction = 0.5\n{FIXED_CONSTANTS}output.dir = {out}\n"
    )
}

#[test]
fn zero_end_time_is_a_validation_error_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "bad.cfg", "scenario = stokes_decay\ntime.t_end = 0\noutput.dir = out\n");
    let st = bin().arg("run").arg(&cfg).status().unwrap();
    assert_eq!(st.code(), Some(1));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn unknown_key_and_missing_file_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "bad.cfg", "scenario = stokes_decay\ngrid.nxx = 8\n");
    assert_eq!(bin().arg("run").arg(&cfg).status().unwrap().code(), Some(1));
    let cfg = write_cfg(tmp.path(), "bad2.cfg", "scenario = constants\nconstants.file = nowhere.txt\n");
    assert_eq!(bin().arg("run").arg(&cfg).status().unwrap().code(), Some(1));
    assert_eq!(bin().arg("report").arg(tmp.path()).status().unwrap().code(), Some(1));
}

#[test]
fn small_mass_run_writes_parseable_artifacts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let cfg = write_cfg(tmp.path(), &format!("{out}.cfg"), &small_mass_cfg(out));
        let o = bin().arg("run").arg(&cfg).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = tmp.path().join("a");
    for f in ["trace.csv", "certificate.txt", "constants.txt", "report.txt", "snapshots/n_00000.csf", "snapshots/z_final.csf"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let trace = read_trace_csv(&a.join("trace.csv")).unwrap();
    assert_eq!(trace.len(), 21);
    validate_trace(&trace, 1e-8).unwrap();
    let ta = std::fs::read(a.join("trace.csv")).unwrap();
    let tb = std::fs::read(tmp.path().join("b/trace.csv")).unwrap();
    assert_eq!(ta, tb);

    let cert = KvReport::read(&a.join("certificate.txt")).unwrap();
    let (m, m_star) = (cert.get_f64("m").unwrap(), cert.get_f64("m_star").unwrap());
    assert!((m - 0.5 * m_star).abs() < 1e-12 * m_star);

    let o = bin().arg("report").arg(&a).output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("records"));
}

#[test]
fn thm2_with_large_mass_fails_the_assertion() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!(
        "scenario = thm2_global\ngrid.nx = 16\ngrid.ny = 16\ntime.dt = 1e-3\ntime.t_end = 0.01\n\
         n0.recipe = constant\nn0.value = 5\nc0.shape = constant\nc0.floor = 1\n{FIXED_CONSTANTS}output.dir = out\n"
    );
    let cfg = write_cfg(tmp.path(), "t2.cfg", &body);
    assert_eq!(bin().arg("run").arg(&cfg).status().unwrap().code(), Some(3));
    // partial artifacts are kept
    assert!(tmp.path().join("out/report.txt").is_file());
}

#[test]
fn cfl_violation_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!(
        "scenario = small_mass_eventual\ngrid.nx = 16\ngrid.ny = 16\ntime.dt = 0.5\ntime.t_end = 1\n\
         n0.recipe = gaussian_bump\nn0.mass = 1\nn0.width = 0.05\nc0.shape = gaussian_bump\nc0.floor = 0.01\n\
         c0.amplitude = 1\n{FIXED_CONSTANTS}output.dir = out\n"
    );
    let cfg = write_cfg(tmp.path(), "cfl.cfg", &body);
    assert_eq!(bin().arg("run").arg(&cfg).status().unwrap().code(), Some(2));
}

#[test]
fn eps_sweep_reports_distances_per_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "scenario = eps_sweep\ngrid.nx = 24\ngrid.ny = 24\ntime.dt = 2e-4\ntime.t_end = 0.004\ntime.trace_every = 5\n\
                model.sensitivity = eps\nmodel.eps = [0.1, 0.05, 0.025]\nn0.recipe = gaussian_bump\nn0.width = 0.03\n\
                n0.mass = 0.2\nc0.shape = cosine\nc0.floor = 1\nc0.amplitude = 0.1\noutput.dir = out\n";
    let cfg = write_cfg(tmp.path(), "sweep.cfg", body);
    let o = bin().arg("run").arg(&cfg).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = KvReport::read(&tmp.path().join("out/report.txt")).unwrap();
    let d1 = rep.get_f64("distance.eps(0.1)_eps(0.05).total").unwrap();
    let d2 = rep.get_f64("distance.eps(0.05)_eps(0.025).total").unwrap();
    assert!(d1 > 0.0 && d2 < d1, "{d1} {d2}");
    let runs: Vec<_> = std::fs::read_dir(tmp.path().join("out")).unwrap().flatten().filter(|e| e.path().is_dir()).collect();
    assert_eq!(runs.len(), 3);
    for r in runs {
        validate_trace(&read_trace_csv(&r.path().join("trace.csv")).unwrap(), 1e-8).unwrap();
    }
}

#[test]
fn estimate_constants_verb_persists_positive_constants() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "scenario = small_mass_eventual\ngrid.nx = 16\ngrid.ny = 16\nconstants.verify_trials = 200\n\
                constants.ensemble = 4\nconstants.iterations = 20\noutput.dir = out\n";
    let cfg = write_cfg(tmp.path(), "c.cfg", body);
    let o = bin().args(["estimate-constants", "--inflation", "1.5"]).arg(&cfg).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = KvReport::read(&tmp.path().join("out/constants.txt")).unwrap();
    for k in ["K2", "K3", "lambda1", "Ku", "C_poincare"] {
        assert!(rep.get_f64(k).unwrap() > 0.0, "{k}");
    }
    assert_eq!(rep.get_f64("inflation"), Some(1.5));
    let k3 = rep.get_f64("K3").unwrap();
    assert!((k3 / rep.get_f64("K3.estimate").unwrap() - 1.5).abs() < 1e-12);
}
