use std::ffi::CStr;
use std::path::PathBuf;
use std::ptr;

use decoherence_loops::lattice::{EnumerationOptions, LatticeKind, LatticeTorus};
use decoherence_loops::oracle::partition_function;
use decoherence_loops::weights::WeightModel;
use decoherence_loops_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(dl_last_error()) }.to_string_lossy().into_owned()
}

fn lattice(kind: DlLatticeKind, lx: usize, ly: usize) -> *mut DlLattice {
    let mut lat = ptr::null_mut();
    assert_eq!(unsafe { dl_lattice_new(kind, lx, ly, &mut lat) }, DlStatus::Ok);
    assert!(!lat.is_null());
    lat
}

#[test]
fn lattice_handle_counts() {
    let lat = lattice(DlLatticeKind::Honeycomb, 3, 2);
    let (mut v, mut e, mut p) = (0, 0, 0);
    assert_eq!(unsafe { dl_lattice_counts(lat, &mut v, &mut e, &mut p) }, DlStatus::Ok);
    assert_eq!((v, e, p), (12, 18, 6));
    // outputs are optional
    assert_eq!(unsafe { dl_lattice_counts(lat, ptr::null_mut(), &mut e, ptr::null_mut()) }, DlStatus::Ok);
    unsafe { dl_lattice_free(lat) };
    unsafe { dl_lattice_free(ptr::null_mut()) };
}

#[test]
fn partition_function_matches_library() {
    let lat = lattice(DlLatticeKind::Square, 2, 2);
    let mut z = 0.0;
    assert_eq!(unsafe { dl_partition_function(lat, 1.5, 0.4, true, &mut z) }, DlStatus::Ok);
    unsafe { dl_lattice_free(lat) };
    let direct = partition_function(
        &LatticeTorus::build(LatticeKind::Square, 2, 2).unwrap(),
        &WeightModel::Topological { n: 1.5, t: 0.4 },
        EnumerationOptions::distinct().with_windings(),
    )
    .unwrap();
    assert_eq!(z, direct);
}

#[test]
fn bad_arguments_set_status_and_message() {
    let mut lat = ptr::null_mut();
    let s = unsafe { dl_lattice_new(DlLatticeKind::SuperHoneycomb, 5, 4, &mut lat) };
    assert_eq!(s, DlStatus::InvalidArgument);
    assert!(lat.is_null());
    assert!(!last_error().is_empty());

    let s = unsafe { dl_lattice_new(DlLatticeKind::Square, 2, 2, ptr::null_mut()) };
    assert_eq!(s, DlStatus::NullPointer);
    assert!(last_error().contains("null"), "{}", last_error());

    let mut p = 0.0;
    assert_eq!(unsafe { dl_p_from_t_ext(1.5, &mut p) }, DlStatus::InvalidArgument);
    // success clears the message
    assert_eq!(unsafe { dl_p_from_t_ext(0.5, &mut p) }, DlStatus::Ok);
    assert_eq!(last_error(), "");
}

#[test]
fn enumeration_cap_is_reported() {
    let lat = lattice(DlLatticeKind::Square, 8, 8);
    let mut z = 0.0;
    let s = unsafe { dl_partition_function(lat, 1.0, 0.3, true, &mut z) };
    unsafe { dl_lattice_free(lat) };
    assert_eq!(s, DlStatus::CapExceeded, "{}", last_error());
}

#[test]
fn pfaffian_of_row_major_matrix() {
    // Pf = af - be + cd for the upper triangle (a b c; d e; f)
    let (a, b, c, d, e, f) = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
    let m = [
        0.0, a, b, c, //
        -a, 0.0, d, e, //
        -b, -d, 0.0, f, //
        -c, -e, -f, 0.0,
    ];
    let mut pf = 0.0;
    assert_eq!(unsafe { dl_pfaffian(m.as_ptr(), 4, &mut pf) }, DlStatus::Ok);
    assert!((pf - (a * f - b * e + c * d)).abs() < 1e-12);
    let odd = [0.0; 9];
    assert_ne!(unsafe { dl_pfaffian(odd.as_ptr(), 3, &mut pf) }, DlStatus::Ok);
}

#[test]
fn covariance_handle_round_trip() {
    let mut cov = ptr::null_mut();
    assert_eq!(unsafe { dl_kitaev_ground_state(6, 4, 1.0, 0.2, &mut cov) }, DlStatus::Ok);
    let n = unsafe { dl_covariance_dim(cov) };
    assert!(n > 0 && n % 2 == 0);
    let mut short = vec![0.0; n];
    assert_eq!(unsafe { dl_covariance_copy(cov, short.as_mut_ptr(), n) }, DlStatus::InvalidArgument);
    let mut g = vec![0.0; n * n];
    assert_eq!(unsafe { dl_covariance_copy(cov, g.as_mut_ptr(), g.len()) }, DlStatus::Ok);
    unsafe { dl_covariance_free(cov) };
    // pure Gaussian state: G antisymmetric with G² = -1
    for i in 0..n {
        for k in 0..n {
            assert!((g[i * n + k] + g[k * n + i]).abs() < 1e-10);
            let sq: f64 = (0..n).map(|m| g[i * n + m] * g[m * n + k]).sum();
            let want = if i == k { -1.0 } else { 0.0 };
            assert!((sq - want).abs() < 1e-8);
        }
    }
}

#[test]
fn mc_run_is_seeded() {
    let lat = lattice(DlLatticeKind::Honeycomb, 4, 4);
    let mut a = std::mem::MaybeUninit::<DlMcResult>::uninit();
    let mut b = std::mem::MaybeUninit::<DlMcResult>::uninit();
    unsafe {
        assert_eq!(dl_run_mc(lat, 1.0, 0.5, 100, 500, 9, a.as_mut_ptr()), DlStatus::Ok);
        assert_eq!(dl_run_mc(lat, 1.0, 0.5, 100, 500, 9, b.as_mut_ptr()), DlStatus::Ok);
        dl_lattice_free(lat);
    }
    let (a, b) = unsafe { (a.assume_init(), b.assume_init()) };
    assert_eq!(a.seed, 9);
    assert_eq!(a.binder_q, b.binder_q);
    assert!(a.acceptance_rate > 0.0 && a.acceptance_rate <= 1.0);
}

#[test]
fn tension_conversions() {
    for p in [0.0, 0.05, 0.2, 0.5] {
        let t = dl_t_ext(p);
        let mut back = f64::NAN;
        assert_eq!(unsafe { dl_p_from_t_ext(t, &mut back) }, DlStatus::Ok);
        assert!((back - p).abs() < 1e-12);
    }
    assert!(dl_t_ext(-0.1).is_nan());
    let v = unsafe { CStr::from_ptr(dl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/decoherence_loops.h");
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn header_declares_every_export() {
    let h = header();
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for f in exports {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(h.contains("typedef struct DlLattice DlLattice;"));
    assert!(h.contains("DL_STATUS_CAP_EXCEEDED = 3"));
}

const SMOKE: &str = r#"
#include <stdio.h>
#include "decoherence_loops.h"

int main(void) {
    DlLattice *lat = NULL;
    if (dl_lattice_new(DL_LATTICE_KIND_HONEYCOMB, 2, 2, &lat) != DL_STATUS_OK) return 1;
    size_t v = 0, e = 0, p = 0;
    dl_lattice_counts(lat, &v, &e, &p);
    double z = 0.0;
    if (dl_partition_function(lat, 2.0, 0.5, true, &z) != DL_STATUS_OK) return 2;
    dl_lattice_free(lat);
    if (dl_lattice_new(DL_LATTICE_KIND_SQUARE, 2, 2, NULL) != DL_STATUS_NULL_POINTER) return 3;
    printf("%zu %zu %zu %.17g %s\n", v, e, p, z, dl_version());
    return 0;
}
"#;

/// Compiles a C program against the header and the static library.
#[test]
fn c_program_links_against_staticlib() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler, skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile = exe.parent().unwrap().parent().unwrap();
    let lib = profile.join("libdecoherence_loops_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, SMOKE).unwrap();
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = std::process::Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let line = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(&fields[..3], ["8", "12", "4"]);
    let z: f64 = fields[3].parse().unwrap();
    let direct = partition_function(
        &LatticeTorus::build(LatticeKind::Honeycomb, 2, 2).unwrap(),
        &WeightModel::Topological { n: 2.0, t: 0.5 },
        EnumerationOptions::distinct().with_windings(),
    )
    .unwrap();
    assert_eq!(z, direct);
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            std::process::Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .ok_or(())
}
