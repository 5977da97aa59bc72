//! Compiling and running plans inside a throwaway directory.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Component, Path};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use once_cell::sync::Lazy;
use sha2::{Digest, Sha256};
use wait_timeout::ChildExt;

use super::{ExpectedSignal, VerificationOutcome, VerificationPlan, VerificationStatus};
use crate::error::{Error, Result};

pub const CRASH_MARKER: &str = "VULNAUDIT_CRASH";
pub const LOG_CAP: usize = 4096;
const SANDBOX_PATH: &str = "/usr/bin:/bin";

/// Harness binaries by source digest; `Err` holds the compiler diagnostics.
static COMPILED: Lazy<Mutex<HashMap<String, std::result::Result<Vec<u8>, String>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Rejects absolute paths and `..` so nothing lands outside the sandbox.
pub fn contained(path: &Path) -> bool {
    path.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir)) && path.components().next().is_some()
}

/// Programs are either a path inside the workdir or a bare name looked up
/// on the restricted `PATH`.
fn program_allowed(program: &str) -> bool {
    !program.is_empty() && (!program.contains('/') || contained(Path::new(program)))
}

fn compile(compiler: &str, source: &str) -> std::result::Result<Vec<u8>, String> {
    let digest = hex::encode(Sha256::digest(format!("{compiler}\0{source}").as_bytes()));
    if let Some(hit) = COMPILED.lock().unwrap().get(&digest) {
        return hit.clone();
    }
    let built = (|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let src = dir.path().join("harness.c");
        let bin = dir.path().join("harness");
        fs::write(&src, source).map_err(|e| e.to_string())?;
        let out = Command::new(compiler)
            .args(["-O0", "-w", "-o"])
            .arg(&bin)
            .arg(&src)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| format!("cannot run {compiler}: {e}"))?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        fs::read(&bin).map_err(|e| e.to_string())
    })();
    COMPILED.lock().unwrap().insert(digest, built.clone());
    built
}

fn cap_log(mut text: String) -> String {
    if text.len() > LOG_CAP {
        let mut end = LOG_CAP;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        text.truncate(end);
    }
    text
}

fn inconclusive(log: impl Into<String>, started: Instant) -> VerificationOutcome {
    VerificationOutcome::new(VerificationStatus::Inconclusive, cap_log(log.into()), started.elapsed().as_secs_f64())
}

fn spawn_retrying(cmd: &mut Command) -> std::io::Result<std::process::Child> {
    // a freshly written binary can briefly report ETXTBSY while another
    // thread's fork still holds the write descriptor
    let mut attempts = 0;
    loop {
        match cmd.spawn() {
            Err(e) if e.raw_os_error() == Some(26) && attempts < 20 => {
                attempts += 1;
                std::thread::sleep(Duration::from_millis(5));
            }
            other => return other,
        }
    }
}

/// Runs `plan` in its workdir. Setup failures and timeouts are
/// inconclusive; only a missing sandbox is an error.
pub fn execute(plan: &VerificationPlan, compiler: &str) -> Result<VerificationOutcome> {
    let started = Instant::now();
    let workdir = &plan.workdir;
    if !workdir.is_dir() {
        return Err(Error::io(workdir, std::io::Error::new(std::io::ErrorKind::NotFound, "sandbox missing")));
    }
    for (rel, contents) in &plan.files {
        if !contained(rel) {
            return Ok(inconclusive(format!("refused to write outside the sandbox: {}", rel.display()), started));
        }
        let path = workdir.join(rel);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    }
    if let Some(source) = &plan.source {
        match compile(compiler, source) {
            Ok(bytes) => {
                let bin = workdir.join("harness");
                fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
                #[cfg(unix)]
                {
                    use std::os::unix::fs::PermissionsExt;
                    fs::set_permissions(&bin, fs::Permissions::from_mode(0o700)).map_err(|e| Error::io(&bin, e))?;
                }
            }
            Err(diag) => return Ok(inconclusive(format!("harness did not compile:\n{diag}"), started)),
        }
    }
    let Some(program) = plan.command.first() else {
        return Ok(inconclusive("empty command", started));
    };
    if !program_allowed(program) {
        return Ok(inconclusive(format!("refused to run {program} outside the sandbox"), started));
    }

    let out_path = workdir.join("run.log");
    let log_file = fs::File::create(&out_path).map_err(|e| Error::io(&out_path, e))?;
    let err_file = log_file.try_clone().map_err(|e| Error::io(&out_path, e))?;
    let mut cmd = Command::new(program);
    cmd.args(&plan.command[1..])
        .current_dir(workdir)
        .env_clear()
        .env("PATH", SANDBOX_PATH)
        .env("HOME", workdir)
        .env("TMPDIR", workdir)
        .stdin(Stdio::null())
        .stdout(log_file)
        .stderr(err_file);
    let mut child = match spawn_retrying(&mut cmd) {
        Ok(c) => c,
        Err(e) => return Ok(inconclusive(format!("could not start {program}: {e}"), started)),
    };
    let status = match child.wait_timeout(plan.timeout).map_err(|e| Error::io(workdir, e))? {
        Some(s) => Some(s),
        None => {
            let _ = child.kill();
            let _ = child.wait();
            None
        }
    };
    let mut log = String::new();
    if let Ok(mut f) = fs::File::open(&out_path) {
        let mut bytes = Vec::new();
        let _ = f.by_ref().take(LOG_CAP as u64 * 4).read_to_end(&mut bytes);
        log = String::from_utf8_lossy(&bytes).into_owned();
    }
    let Some(status) = status else {
        return Ok(inconclusive(format!("timed out after {:?}\n{log}", plan.timeout), started));
    };

    #[cfg(unix)]
    let signal = {
        use std::os::unix::process::ExitStatusExt;
        status.signal()
    };
    #[cfg(not(unix))]
    let signal: Option<i32> = None;
    let code = status.code();
    let reproduced = match plan.expected_signal {
        ExpectedSignal::NonzeroExit => signal.is_some() || code != Some(0),
        ExpectedSignal::CrashMarker => signal.is_some() || log.contains(CRASH_MARKER),
        ExpectedSignal::AssertionFail => {
            log.contains("Assertion") || signal == Some(6) || code == Some(134)
        }
    };
    let status = if reproduced {
        VerificationStatus::Reproduced
    } else {
        VerificationStatus::NotReproduced
    };
    Ok(VerificationOutcome::new(status, cap_log(log), started.elapsed().as_secs_f64()))
}

/// Fresh, empty sandbox directory.
pub fn sandbox() -> Result<tempfile::TempDir> {
    tempfile::Builder::new()
        .prefix("vulnaudit-verify-")
        .tempdir()
        .map_err(|e| Error::io(std::env::temp_dir(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn containment() {
        assert!(contained(Path::new("a/b.c")));
        assert!(!contained(Path::new("../x")));
        assert!(!contained(Path::new("/etc/passwd")));
        assert!(program_allowed("sleep"));
        assert!(program_allowed("./harness"));
        assert!(!program_allowed("/bin/sh"));
        assert!(!program_allowed("../harness"));
    }

    #[test]
    fn log_is_capped_on_char_boundary() {
        let s = "é".repeat(LOG_CAP);
        let capped = cap_log(s);
        assert!(capped.len() <= LOG_CAP);
    }
}
