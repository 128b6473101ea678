use std::path::Path;
use std::process::{Command, Output};

fn genesc(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_genesc"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("GENESC_")) {
        cmd.env_remove(k);
    }
    cmd.args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const GOOD: &str = "\
entity sq { input: stream<scalars> xs; output: stream<scalars> ys; kernel: square; partitions: 2; }
entity total { input: scalars ys; output: scalar s; kernel: sum; }
";

const FAILING: &str = "\
entity first { kernel: noop; }
entity bad { kernel: fail; after: [(first, hard)]; }
entity later { kernel: noop; after: [(bad, hard)]; }
";

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(genesc(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(genesc(&["run", "--demo", "nbody", "--workers", "4:2"]).status.code(), Some(2));
    assert_eq!(genesc(&[]).status.code(), Some(2));
    assert_eq!(genesc(&["--help"]).status.code(), Some(0));
}

#[test]
fn nbody_demo_matches_its_direct_loop() {
    let o = genesc(&["run", "--demo", "nbody", "--n", "24", "--steps", "3", "--workers", "3", "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("vs direct loop: 0.000e0"), "{}", stdout(&o));
}

#[test]
fn manifest_run_is_deterministic_in_sequential_mode() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "p.gsc", GOOD);
    let args = ["run", "--manifest", &m, "--mode", "sequential", "--seed", "3", "--input", "xs=scalars:1,2,3"];
    let a = genesc(&args);
    let b = genesc(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(stdout(&a).contains("total.s = {\"scalar\":14.0}"), "{}", stdout(&a));
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn trace_file_is_json() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "p.gsc", GOOD);
    let t = dir.path().join("trace.json");
    let o = genesc(&["run", "--manifest", &m, "--input", "xs=scalars:1,2", "--trace", t.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&t).unwrap()).unwrap();
    assert!(v["events"].as_array().is_some_and(|e| !e.is_empty()));
}

#[test]
fn failing_kernel_leaves_an_inspectable_dump() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "f.gsc", FAILING);
    let dump = dir.path().join("f.core");
    let o = genesc(&["run", "--manifest", &m, "--dump-on-error", dump.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("core dump written to"), "{}", stderr(&o));
    let i = genesc(&["inspect", dump.to_str().unwrap()]);
    assert!(i.status.success(), "{}", stderr(&i));
    assert!(stdout(&i).contains("failed: bad[0]"), "{}", stdout(&i));
}

#[test]
fn check_reports_structure_and_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let ok = genesc(&["check", &write(dir.path(), "ok.gsc", GOOD)]);
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("2 leaves, critical path 2, width 1"), "{}", stdout(&ok));
    let cyc = "entity a { kernel: noop; before: [(b, hard)]; }\nentity b { kernel: noop; before: [(a, hard)]; }";
    let bad = genesc(&["check", &write(dir.path(), "cyc.gsc", cyc)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("cycles"), "{}", stderr(&bad));
}

#[test]
fn missing_files_are_runtime_errors() {
    assert_eq!(genesc(&["inspect", "/nonexistent/x.core"]).status.code(), Some(1));
    assert_eq!(genesc(&["run", "--manifest", "/nonexistent/p.gsc"]).status.code(), Some(1));
}
