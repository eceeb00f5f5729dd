//! Compiles examples/smoke.c against the committed header and links it
//! with the built cdylib, proving the header matches the binary surface.

use std::path::PathBuf;
use std::process::Command;

/// target/{profile} directory, derived from the test binary's location.
fn target_dir() -> PathBuf {
    let mut dir = std::env::current_exe().unwrap();
    dir.pop();
    if dir.ends_with("deps") {
        dir.pop();
    }
    dir
}

#[test]
fn c_program_compiles_against_the_header_and_links() {
    let cc = ["cc", "gcc", "clang"].into_iter().find(|c| {
        Command::new(c).arg("--version").output().map(|o| o.status.success()).unwrap_or(false)
    });
    let Some(cc) = cc else {
        eprintln!("skipping: no C compiler on PATH");
        return;
    };

    let target = target_dir();
    let lib_present = ["liblexgen_ffi.so", "liblexgen_ffi.dylib", "lexgen_ffi.dll"]
        .iter()
        .any(|name| target.join(name).exists());
    assert!(lib_present, "cdylib not found in {}", target.display());

    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let compile = Command::new(cc)
        .arg("-Wall")
        .arg(manifest.join("examples/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&target)
        .arg("-llexgen_ffi")
        .arg("-o")
        .arg(&exe)
        .output()
        .unwrap();
    assert!(
        compile.status.success(),
        "compilation failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = Command::new(&exe)
        .env("LD_LIBRARY_PATH", &target)
        .env("DYLD_LIBRARY_PATH", &target)
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "smoke binary exited {:?}:\n{}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("C smoke OK"), "got {stdout:?}");
}
