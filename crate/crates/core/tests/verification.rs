use std::time::{Duration, Instant};

use vulnaudit::agents::FindingKey;
use vulnaudit::model::{Finding, Region, RegionKind, Severity, SourceLocation, Unit};
use vulnaudit::verify::{ArtefactKind, ExpectedSignal, VerificationPlan, VerificationStatus, Verifier};

fn finding(issue: &str, line: u32) -> Finding {
    Finding {
        issue_type: issue.into(),
        location: SourceLocation::line("f.c", line).unwrap(),
        evidence_summary: String::new(),
        confidence: Unit::HALF,
        severity: Severity::High,
        remediation: None,
        error_tag: None,
    }
}

fn region(text: &str) -> Region {
    let n = text.lines().count() as u32;
    Region::new("r", RegionKind::Function, SourceLocation::new("f.c", 1, n).unwrap(), text).unwrap()
}

fn status(issue: &str, text: &str, line: u32) -> VerificationStatus {
    let run = Verifier::builtin().verify(&finding(issue, line), &region(text)).unwrap();
    assert!(run.executed, "{issue}: {}", run.outcome.log_excerpt);
    run.outcome.status
}

fn command_plan(argv: &[&str], signal: ExpectedSignal, timeout: Duration) -> VerificationPlan {
    let key = FindingKey::of(&finding("x", 1));
    let argv = argv.iter().map(|s| s.to_string()).collect();
    VerificationPlan::new(key, ArtefactKind::ReproInput, argv, timeout, signal).unwrap()
}

#[test]
fn timeout_is_inconclusive() {
    let v = Verifier::builtin();
    let plan = command_plan(&["sleep", "5"], ExpectedSignal::NonzeroExit, Duration::from_millis(300));
    let started = Instant::now();
    let out = v.execute(&plan).unwrap();
    assert_eq!(out.status, VerificationStatus::Inconclusive);
    assert_eq!(out.e_dyn.get(), 0.5);
    assert!(started.elapsed() < Duration::from_secs(4));
}

#[test]
fn exit_status_mapping() {
    let v = Verifier::builtin();
    let fail = command_plan(&["false"], ExpectedSignal::NonzeroExit, Duration::from_secs(5));
    let out = v.execute(&fail).unwrap();
    assert_eq!(out.status, VerificationStatus::Reproduced);
    assert_eq!(out.e_dyn.get(), 1.0);
    let ok = command_plan(&["true"], ExpectedSignal::NonzeroExit, Duration::from_secs(5));
    let out = v.execute(&ok).unwrap();
    assert_eq!(out.status, VerificationStatus::NotReproduced);
    assert_eq!(out.e_dyn.get(), 0.0);
}

#[test]
fn commands_outside_the_sandbox_do_not_run() {
    let v = Verifier::builtin();
    let plan = command_plan(&["/bin/false"], ExpectedSignal::NonzeroExit, Duration::from_secs(5));
    assert_eq!(v.execute(&plan).unwrap().status, VerificationStatus::Inconclusive);
    let mut plan = command_plan(&["true"], ExpectedSignal::NonzeroExit, Duration::from_secs(5));
    plan.files.push(("../escape.txt".into(), "x".into()));
    assert_eq!(v.execute(&plan).unwrap().status, VerificationStatus::Inconclusive);
    assert!(!plan.workdir.parent().unwrap().join("escape.txt").exists());
}

#[test]
fn sandbox_is_removed_with_the_plan() {
    let plan = command_plan(&["true"], ExpectedSignal::NonzeroExit, Duration::from_secs(1));
    let dir = plan.workdir.clone();
    assert!(dir.is_dir());
    drop(plan);
    assert!(!dir.exists());
}

#[test]
fn templates_reproduce_planted_constructs() {
    assert_eq!(
        status("security/unbounded-input", "void f(void) {\n  char b[8];\n  gets(b);\n}\n", 3),
        VerificationStatus::Reproduced
    );
    assert_eq!(
        status("security/buffer-overflow", "void f(char *s) {\n  char b[8];\n  strcpy(b, s);\n}\n", 3),
        VerificationStatus::Reproduced
    );
    assert_eq!(
        status("security/out-of-bounds-write", "void f(int i) {\n  char t[8];\n  t[i] = 1;\n}\n", 3),
        VerificationStatus::Reproduced
    );
    assert_eq!(
        status("security/format-string", "void f(char *s) {\n  printf(s);\n}\n", 2),
        VerificationStatus::Reproduced
    );
    assert_eq!(
        status("security/command-injection", "void f(char *s) {\n  system(s);\n}\n", 2),
        VerificationStatus::Reproduced
    );
    assert_eq!(
        status("security/integer-overflow", "void *f(size_t n, size_t k) {\n  return malloc(n * k);\n}\n", 2),
        VerificationStatus::Reproduced
    );
    assert_eq!(
        status("logic/double-free", "void f(char *p) {\n  free(p);\n  free(p);\n}\n", 3),
        VerificationStatus::Reproduced
    );
}

#[test]
fn constant_arguments_do_not_reproduce() {
    assert_eq!(
        status("security/buffer-overflow", "void f(void) {\n  char b[8];\n  strcpy(b, \"abc\");\n}\n", 3),
        VerificationStatus::NotReproduced
    );
    assert_eq!(
        status("security/command-injection", "void f(void) {\n  system(\"ls\");\n}\n", 2),
        VerificationStatus::NotReproduced
    );
    assert_eq!(
        status("security/format-string", "void f(void) {\n  printf(\"hello\");\n}\n", 2),
        VerificationStatus::NotReproduced
    );
}

#[test]
fn unreachable_sinks_get_no_harness() {
    let text = "int f(const char *s)\n{\n    char b[8];\n#if 0\n    strcpy(b, s);\n#endif\n    return 0;\n}\n";
    let run = Verifier::builtin().verify(&finding("security/buffer-overflow", 5), &region(text)).unwrap();
    assert!(!run.executed);
    assert_eq!(run.outcome.status, VerificationStatus::Inconclusive);
}
