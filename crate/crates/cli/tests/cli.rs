use std::path::PathBuf;
use std::process::{Command, Output};

fn program(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "programs", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn reach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reach")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn temp_program(tag: &str, src: &str) -> String {
    let p = std::env::temp_dir().join(format!("reach-cli-{}-{tag}.rch", std::process::id()));
    std::fs::write(&p, src).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn check_prints_type_and_effect() {
    let o = reach(&["check", &program("id.rch")]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "((x: (Ref Bool^{})^{fresh}) -> (Ref Bool^{})^{x} / {})^{}\neffect: {}\n");
}

#[test]
fn check_rejects_overlapping_borrow() {
    let o = reach(&["check", "--mode", "base", &program("borrow_bad.rch")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("[t-app-◇]"), "{}", stdout(&o));
}

#[test]
fn check_reports_parse_errors() {
    let f = temp_program("malformed", "(app (lam {} (x: Bool^{}) x)");
    let o = reach(&["check", &f]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn json_records_are_versioned() {
    let o = reach(&["--json", "check", &program("id.rch")]);
    let rec: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(rec["schema"], "reach/1");
    assert_eq!(rec["command"], "check");
    assert_eq!(rec["ok"], true);
    assert_eq!(rec["effect"], "{}");
}

#[test]
fn monitor_certifies_frame() {
    let o = reach(&["monitor", "--call-boundary", &program("frame.rch")]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("true\n"));
    assert!(out.ends_with("violations: 0\n"), "{out}");
}

#[test]
fn monitor_flags_corrupted_referent() {
    let o = reach(&["--json", "monitor", "--corrupt-referent", "0.0.0", &program("stored_cell.rch")]);
    assert_eq!(o.status.code(), Some(3));
    let rec: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(rec["violations"][0]["kind"], "StoreWF");
}

#[test]
fn run_times_out_with_little_fuel() {
    let o = reach(&["run", "--fuel", "1", &program("frame.rch")]);
    assert_eq!(o.status.code(), Some(4));
    let o = reach(&["run", &program("frame.rch")]);
    assert_eq!((o.status.code(), stdout(&o)), (Some(0), "true\n".to_string()));
}

#[test]
fn rewrite_reorders_reads_only_with_effects() {
    let f = program("reorder.rch");
    let o = reach(&["rewrite", "--rule", "reorder", "--at", "0.0.0", &f]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("(seq (seq (:= (ref true) (! c)) (! c)) (! c))"));
    let o = reach(&["rewrite", "--mode", "base", "--rule", "reorder", "--at", "0.0.0", &f]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("qsat φ1 ∩ qsat φ2 ≠ ∅"));
}

#[test]
fn rewrite_refusal_names_condition() {
    let o = reach(&["rewrite", "--rule", "reorder", "--at", "0.0.0", &program("reorder_bad.rch")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("qsat φ2 ∩ qsat ε1 ≠ ∅"));
}

#[test]
fn beta_rewrite_then_difftest() {
    let f = program("beta.rch");
    let o = reach(&["rewrite", "--rule", "beta", &f]);
    assert_eq!(o.status.code(), Some(0));
    let g = temp_program("inlined", &stdout(&o));
    let o = reach(&["difftest", &f, &g]);
    assert_eq!((o.status.code(), stdout(&o)), (Some(0), "equal: true\n".to_string()));
}

#[test]
fn difftest_exit_codes() {
    let a = temp_program("a", "(! (ref true))");
    let b = temp_program("b", "(! (ref false))");
    assert_eq!(reach(&["difftest", &a, &b]).status.code(), Some(1));
    assert_eq!(reach(&["difftest", "--fuel", "1", &a, &b]).status.code(), Some(4));
}

#[test]
fn generated_programs_recheck() {
    let o = reach(&["gen", "--count", "10", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 10);
    for (i, line) in lines.iter().enumerate() {
        let f = temp_program(&format!("gen{i}"), line);
        assert_eq!(reach(&["check", &f]).status.code(), Some(0), "{line}");
    }
}
