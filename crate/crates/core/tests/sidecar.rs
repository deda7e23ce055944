//! Live sidecar behaviour. Needs `python3` on PATH.

use iodiag::corpus::{Origin, SplitManifest, Triple};
use iodiag::metrics::extract_all;
use iodiag::pipeline::extract_features;
use iodiag::sidecar::{Disassembler, ExecutionLimits, Executor, Sidecar, SidecarError, SidecarOptions};

fn spawn(disable_run: bool) -> Sidecar {
    Sidecar::spawn(&SidecarOptions { python: "python3".into(), disable_run }).expect("python3 available")
}

fn limits() -> ExecutionLimits {
    ExecutionLimits { timeout_secs: 2.0, ..ExecutionLimits::default() }
}

#[test]
fn reports_interpreter_minor_version() {
    let v = spawn(false).interpreter_version().unwrap();
    let (major, minor) = v.split_once('.').unwrap();
    assert_eq!(major, "3");
    assert!(minor.parse::<u32>().is_ok());
}

#[test]
fn runs_programs_with_stdin() {
    let mut s = spawn(false);
    let r = s.run("print(int(input()) * 2)", "21", &limits()).unwrap();
    assert_eq!(r.stdout, "42\n");
    assert_eq!(r.exit_status, 0);
    assert!(!r.timed_out);
    assert!(r.is_usable());

    let r = s.run("raise SystemExit(3)", "", &limits()).unwrap();
    assert_eq!(r.exit_status, 3);
    assert!(!r.is_usable());
}

#[test]
fn times_out_runaway_programs() {
    let mut s = spawn(false);
    let r = s.run("while True:\n    pass\n", "", &ExecutionLimits { timeout_secs: 0.5, ..limits() }).unwrap();
    assert!(r.timed_out);
    // the sidecar stays usable afterwards
    assert_eq!(s.run("print('ok')", "", &limits()).unwrap().stdout, "ok\n");
}

#[test]
fn denies_file_writes() {
    let mut s = spawn(false);
    let r = s.run("open('out.txt', 'w').write('x')\nprint('wrote')", "", &limits()).unwrap();
    assert_ne!(r.exit_status, 0);
    assert!(!r.stdout.contains("wrote"));
}

#[test]
fn disassembles_without_executing() {
    let mut s = spawn(false);
    let ops = s.disassemble("import os\nos._exit(7)\n").unwrap();
    let names: Vec<&str> = ops.names().collect();
    assert!(names.contains(&"IMPORT_NAME"));
    assert!(matches!(s.disassemble("def f(:\n"), Err(SidecarError::Remote(_))));
    // nested code objects are included
    let nested = s.disassemble("def f(x):\n    return x + 1\n").unwrap();
    let names: Vec<&str> = nested.names().collect();
    assert!(names.contains(&"MAKE_FUNCTION"));
    assert!(names.iter().any(|n| *n == "BINARY_ADD" || *n == "BINARY_OP"));
}

#[test]
fn run_disabled_sidecar_rejects_execution() {
    let mut s = spawn(true);
    assert!(matches!(s.run("print(1)", "", &limits()), Err(SidecarError::Remote(_))));
    assert!(!s.disassemble("print(1)").unwrap().ops.is_empty());
}

fn triple(problem: &str, code: &str, input: &str, output: &str) -> Triple {
    Triple {
        problem_id: problem.into(),
        submission_id: "s".into(),
        code: code.into(),
        input: input.into(),
        output: output.into(),
        label: 1,
        origin: Origin::ExecutedPositive,
    }
}

#[test]
fn feature_extraction_never_needs_execution() {
    let triples = vec![
        triple("a", "print(input())", "x", "x"),
        triple("b", "n = int(input())\nfor i in range(n):\n    print(i)\n", "2", "0\n1"),
        triple("c", "import sys\nprint(sys.stdin.read()[::-1])", "ab", "ba"),
    ];
    let split = SplitManifest {
        ordering: vec!["a".into(), "b".into(), "c".into()],
        eval_problems: ["a".to_string()].into(),
        train_problems: ["b".to_string(), "c".to_string()].into(),
    };
    let off = SidecarOptions { python: "python3".into(), disable_run: true };
    let on = SidecarOptions { python: "python3".into(), disable_run: false };
    let (cat_off, rows_off) = extract_features(&triples, &split, &off, 2).unwrap();
    let (cat_on, rows_on) = extract_features(&triples, &split, &on, 1).unwrap();
    assert_eq!(cat_off, cat_on);
    assert_eq!(rows_off, rows_on);

    let mut s = spawn(true);
    let single = extract_all(&triples[1], &mut s, &cat_off);
    let id = triples[1].id();
    assert_eq!(rows_off.iter().find(|(i, _)| *i == id).unwrap().1, single);
}
