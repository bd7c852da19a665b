//! Compiles a small C program against the generated header and the static
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

const SOURCE: &str = r#"
#include <stdio.h>
#include <string.h>
#include "twistlab.h"

int main(void) {
    TlRealSource *src = NULL;
    if (tl_real_source_parse("rational:3/7", &src) != TL_STATUS_OK) return 1;
    double v = 0, e = 0;
    if (tl_real_source_frac_mult(src, 5, 64, &v, &e) != TL_STATUS_OK) return 2;
    tl_real_source_free(src);
    if (v < 0.142857 || v > 0.142858 || e != 0.0) return 3;
    if (tl_real_source_parse("bogus", &src) != TL_STATUS_PARSE) return 4;
    if (strlen(tl_last_error()) == 0) return 5;
    double m = 0;
    if (tl_region_measure(TL_FAMILY_MULTIPLICATIVE, 0, 0, 0.25, &m) != TL_STATUS_OK || m != 1.0) return 6;
    printf("ok %s\n", tl_version());
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libtwistlab_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, SOURCE).unwrap();
    let bin = dir.path().join("main");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
