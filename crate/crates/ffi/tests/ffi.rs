use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use odpp_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let need = unsafe { odpp_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(need >= 1);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn grid(n: usize) -> *mut OdppGrid {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { odpp_grid_regular(0.0, 1.0, 0.0, 1.0, n, n, &mut g) }, OdppStatus::Ok);
    g
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(odpp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn grid_lifecycle_and_locate() {
    let g = grid(4);
    assert_eq!(unsafe { odpp_grid_len(g) }, 16);
    let mut cell = usize::MAX;
    assert_eq!(unsafe { odpp_grid_locate(g, 0.6, 0.3, &mut cell) }, OdppStatus::Ok);
    assert_eq!(cell, 4 + 2);
    assert_eq!(unsafe { odpp_grid_locate(g, 2.0, 0.3, &mut cell) }, OdppStatus::Data);
    assert!(last_error().contains("outside"));
    unsafe { odpp_grid_free(g) };
    unsafe { odpp_grid_free(ptr::null_mut()) };
    assert_eq!(unsafe { odpp_grid_len(ptr::null()) }, 0);
}

#[test]
fn errors_set_status_and_message() {
    let mut g = ptr::null_mut();
    let st = unsafe { odpp_grid_regular(1.0, 0.0, 0.0, 1.0, 2, 2, &mut g) };
    assert_eq!(st, OdppStatus::Data);
    assert!(g.is_null());
    assert!(!last_error().is_empty());

    let st = unsafe { odpp_grid_regular(0.0, 1.0, 0.0, 1.0, 2, 2, ptr::null_mut()) };
    assert_eq!(st, OdppStatus::NullPointer);
    assert!(last_error().contains("out"));

    // a success clears the message
    let g = grid(2);
    assert_eq!(last_error(), "");
    unsafe { odpp_grid_free(g) };

    // size query and truncation
    let mut out = 0.0;
    assert_eq!(
        unsafe { odpp_cond_logdensity(0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0, &mut out) },
        OdppStatus::Numerical
    );
    let need = unsafe { odpp_last_error_message(ptr::null_mut(), 0) };
    assert!(need > 4);
    let mut small = [0 as c_char; 4];
    let again = unsafe { odpp_last_error_message(small.as_mut_ptr(), small.len()) };
    assert_eq!(again, need);
    assert_eq!(unsafe { CStr::from_ptr(small.as_ptr()) }.to_bytes().len(), 3);
}

#[test]
fn numeric_entry_points() {
    let mut ld = 0.0;
    assert_eq!(
        unsafe { odpp_cond_logdensity(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, &mut ld) },
        OdppStatus::Ok
    );
    assert!((ld + std::f64::consts::PI.ln()).abs() < 1e-12);

    let mut s = [0.0; 3];
    assert_eq!(unsafe { odpp_kernel_sigma(0.3, -0.7, 1.5, 3.5, s.as_mut_ptr()) }, OdppStatus::Ok);
    let det = s[0] * s[2] - s[1] * s[1];
    let want = 1.5f64.powi(4) * 3.5 * 3.5 / std::f64::consts::PI.powi(2);
    assert!(((det - want) / want).abs() < 1e-10);
    assert_eq!(
        unsafe { odpp_kernel_sigma(0.3, -0.7, -1.0, 3.5, s.as_mut_ptr()) },
        OdppStatus::InvalidArgument
    );

    let xy = [1.0, 0.0, -1.0, 0.0];
    let mut crps = 0.0;
    assert_eq!(unsafe { odpp_bicrps(xy.as_ptr(), 2, 0.0, 0.0, &mut crps) }, OdppStatus::Ok);
    // E|X - o| = 1, E|X - X'| / 2 = (2 · 2 / 4) / 2 = 0.5
    assert!((crps - 0.5).abs() < 1e-12);
    assert_eq!(unsafe { odpp_bicrps(ptr::null(), 3, 0.0, 0.0, &mut crps) }, OdppStatus::NullPointer);
}

#[test]
fn intensity_fit_through_handles() {
    let g = grid(3);
    let xy: Vec<f64> = (0..200)
        .flat_map(|i| [((i * 37) % 100) as f64 / 100.0 + 0.001, ((i * 59) % 100) as f64 / 100.0 + 0.001])
        .collect();
    let mut chain = ptr::null_mut();
    let st = unsafe {
        odpp_fit_intensity(g, xy.as_ptr(), 200, ptr::null(), 0, OdppIntensityKind::Nhpp, 200, 300, 7, &mut chain)
    };
    assert_eq!(st, OdppStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { odpp_chain_len(chain) }, 300);
    let np = unsafe { odpp_chain_param_count(chain) };
    let names: Vec<String> = (0..np)
        .map(|i| {
            let need = unsafe { odpp_chain_param_name(chain, i, ptr::null_mut(), 0) };
            let mut buf = vec![0 as c_char; need];
            unsafe { odpp_chain_param_name(chain, i, buf.as_mut_ptr(), need) };
            unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
        })
        .collect();
    assert_eq!(names, ["beta_intercept", "loglik"]);
    assert_eq!(unsafe { odpp_chain_param_name(chain, np, ptr::null_mut(), 0) }, 0);

    let name = CString::new("beta_intercept").unwrap();
    let mut mean = 0.0;
    assert_eq!(unsafe { odpp_chain_param_mean(chain, name.as_ptr(), &mut mean) }, OdppStatus::Ok);
    // intercept-only NHPP with unit total area: posterior centred near log n
    assert!((mean - 200f64.ln()).abs() < 0.2, "{mean}");
    let mut trace = vec![0.0; 300];
    assert_eq!(
        unsafe { odpp_chain_trace(chain, name.as_ptr(), trace.as_mut_ptr(), 299) },
        OdppStatus::Dimension
    );
    assert_eq!(
        unsafe { odpp_chain_trace(chain, name.as_ptr(), trace.as_mut_ptr(), 300) },
        OdppStatus::Ok
    );
    assert!((trace.iter().sum::<f64>() / 300.0 - mean).abs() < 1e-9);
    let bad = CString::new("nope").unwrap();
    assert_eq!(
        unsafe { odpp_chain_param_mean(chain, bad.as_ptr(), &mut mean) },
        OdppStatus::InvalidArgument
    );
    unsafe {
        odpp_chain_free(chain);
        odpp_grid_free(g);
    }
}

#[test]
fn covariate_dimensions_are_checked() {
    let g = grid(2);
    let xy = [0.1, 0.1, 0.7, 0.7, 0.2, 0.8];
    let cov = [0.0, 1.0, 2.0, 3.0];
    let mut chain = ptr::null_mut();
    let st = unsafe {
        odpp_fit_intensity(g, xy.as_ptr(), 3, cov.as_ptr(), 1, OdppIntensityKind::Lgcp, 10, 10, 1, &mut chain)
    };
    assert_eq!(st, OdppStatus::Ok, "{}", last_error());
    unsafe { odpp_chain_free(chain) };
    let st = unsafe {
        odpp_fit_intensity(g, xy.as_ptr(), 3, ptr::null(), 1, OdppIntensityKind::Nhpp, 10, 10, 1, &mut chain)
    };
    assert_eq!(st, OdppStatus::NullPointer);
    unsafe { odpp_grid_free(g) };
}

#[test]
fn conditional_constant_fit() {
    let m = 400;
    let mut thefts = Vec::with_capacity(2 * m);
    let mut recs = Vec::with_capacity(2 * m);
    for i in 0..m {
        let (x, y) = ((i % 20) as f64, (i / 20) as f64);
        // deterministic symmetric displacements with mean square 1 per axis
        let (dx, dy) = match i % 4 {
            0 => (1.0, 0.0),
            1 => (-1.0, 0.0),
            2 => (0.0, 1.0),
            _ => (0.0, -1.0),
        };
        thefts.extend([x, y]);
        recs.extend([x + dx * 2f64.sqrt(), y + dy * 2f64.sqrt()]);
    }
    let mut chain = ptr::null_mut();
    let st = unsafe { odpp_fit_conditional_constant(thefts.as_ptr(), recs.as_ptr(), m, 300, 300, 3, &mut chain) };
    assert_eq!(st, OdppStatus::Ok, "{}", last_error());
    let mut s1 = 0.0;
    let n = CString::new("sigma1").unwrap();
    assert_eq!(unsafe { odpp_chain_param_mean(chain, n.as_ptr(), &mut s1) }, OdppStatus::Ok);
    // displacement variance per axis is 1 = σ1²/2
    assert!((s1 - 2f64.sqrt()).abs() < 0.15, "{s1}");
    unsafe { odpp_chain_free(chain) };

    let st = unsafe { odpp_fit_conditional_constant(thefts.as_ptr(), recs.as_ptr(), 2, 10, 10, 3, &mut chain) };
    assert_ne!(st, OdppStatus::Ok);
}

#[test]
fn header_compiles_and_links_from_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = crate_dir.join("include");
    // target/<profile>/deps/<test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libodpp_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "odpp.h"
int main(void) {
    OdppGrid *g = NULL;
    if (odpp_grid_regular(0, 1, 0, 1, 5, 5, &g) != ODPP_STATUS_OK) return 1;
    size_t cell = 0;
    if (odpp_grid_locate(g, 0.95, 0.05, &cell) != ODPP_STATUS_OK || cell != 4) return 2;
    if (odpp_grid_locate(g, 5.0, 0.05, &cell) != ODPP_STATUS_DATA) return 3;
    char buf[256];
    if (odpp_last_error_message(buf, sizeof buf) <= 1 || strlen(buf) == 0) return 4;
    odpp_grid_free(g);
    double ld = 0;
    if (odpp_cond_logdensity(0, 0, 0, 0, 1, 0, 1, &ld) != ODPP_STATUS_OK) return 5;
    printf("%s %.6f\n", odpp_version(), ld);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("main");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited {:?}", out.status);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(env!("CARGO_PKG_VERSION")));
    assert!(text.trim_end().ends_with("-1.144730"), "{text}");
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
