//! C ABI for the loop-model library.
//!
//! Every fallible call returns a `DlStatus`; on failure the message is kept per
//! thread and read with `dl_last_error`. Handles are opaque and owned by the
//! caller, who releases them with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use decoherence_loops::kitaev::{build_hamiltonian, extract_loop_weight, ground_covariance, pfaffian, CovarianceMatrix, Sector};
use decoherence_loops::lattice::{EnumerationOptions, LatticeKind, LatticeTorus};
use decoherence_loops::mc::{run_metropolis, LatticeSpec, McConfig};
use decoherence_loops::oracle::partition_function;
use decoherence_loops::weights::{p_from_t_ext, t_ext, WeightModel};
use decoherence_loops::Error;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    CapExceeded = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlLatticeKind {
    Honeycomb = 0,
    Square = 1,
    Triangular = 2,
    SuperHoneycomb = 3,
}

impl From<DlLatticeKind> for LatticeKind {
    fn from(k: DlLatticeKind) -> Self {
        match k {
            DlLatticeKind::Honeycomb => LatticeKind::Honeycomb,
            DlLatticeKind::Square => LatticeKind::Square,
            DlLatticeKind::Triangular => LatticeKind::Triangular,
            DlLatticeKind::SuperHoneycomb => LatticeKind::SuperHoneycomb,
        }
    }
}

/// Periodic lattice.
pub struct DlLattice {
    spec: LatticeSpec,
    inner: LatticeTorus,
}

/// Majorana covariance matrix of a Kitaev-model ground state.
pub struct DlCovariance {
    inner: CovarianceMatrix,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DlMcResult {
    pub mean_length: f64,
    pub mean_length_err: f64,
    /// Var(|L|) per plaquette.
    pub var_length_normalized: f64,
    pub var_length_err: f64,
    pub binder_q: f64,
    pub q_err: f64,
    pub acceptance_rate: f64,
    pub tau_int: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DlLoopWeight {
    pub n_est: f64,
    pub t_int_est: f64,
    pub t_double_loop: f64,
    pub correlation_length: f64,
    pub fit_rms: f64,
    pub n_warnings: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DlStatus {
    match e {
        Error::CapExceeded { .. } => DlStatus::CapExceeded,
        Error::Gapless(_) | Error::NegativeWeight(_) | Error::Other(_) => DlStatus::Numerical,
        _ => DlStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, recording failures and containing panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DlStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            DlStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            DlStatus::Panic
        }
    }
}

fn non_null<T>(p: *mut T, what: &'static str) -> Result<*mut T, Fail> {
    if p.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(p)
    }
}

/// Message of the last failed call on this thread, or an empty string. Valid
/// until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn dl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dl_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => c"",
    };
    VERSION.as_ptr()
}

/// Builds an `lx` × `ly` torus into `*out`.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn dl_lattice_new(
    kind: DlLatticeKind,
    lx: usize,
    ly: usize,
    out: *mut *mut DlLattice,
) -> DlStatus {
    guard(|| {
        let out = non_null(out, "out")?;
        let spec = LatticeSpec::new(kind.into(), lx, ly);
        let inner = spec.build()?;
        *out = Box::into_raw(Box::new(DlLattice { spec, inner }));
        Ok(())
    })
}

/// # Safety
/// `lat` must come from `dl_lattice_new` and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn dl_lattice_free(lat: *mut DlLattice) {
    if !lat.is_null() {
        drop(Box::from_raw(lat));
    }
}

/// Vertex, edge and plaquette counts.
///
/// # Safety
/// `lat` must be a live handle; each output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn dl_lattice_counts(
    lat: *const DlLattice,
    n_vertices: *mut usize,
    n_edges: *mut usize,
    n_plaquettes: *mut usize,
) -> DlStatus {
    guard(|| {
        let lat = &*non_null(lat.cast_mut(), "lattice")?;
        for (p, v) in [
            (n_vertices, lat.inner.n_vertices()),
            (n_edges, lat.inner.n_edges()),
            (n_plaquettes, lat.inner.n_plaquettes()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// `Σ_L t^|L| n^{C(L)}` over distinct closed configurations; all homology
/// classes when `windings` is true, contractible ones otherwise.
///
/// # Safety
/// `lat` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn dl_partition_function(
    lat: *const DlLattice,
    n: f64,
    t: f64,
    windings: bool,
    out: *mut f64,
) -> DlStatus {
    guard(|| {
        let lat = &*non_null(lat.cast_mut(), "lattice")?;
        let out = non_null(out, "out")?;
        let mut opts = EnumerationOptions::distinct();
        if windings {
            opts = opts.with_windings();
        }
        *out = partition_function(&lat.inner, &WeightModel::Topological { n, t }, opts)?;
        Ok(())
    })
}

/// Metropolis run of the O(n) loop model at tension `t`.
///
/// # Safety
/// `lat` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn dl_run_mc(
    lat: *const DlLattice,
    n: f64,
    t: f64,
    eq_sweeps: usize,
    measure_sweeps: usize,
    seed: u64,
    out: *mut DlMcResult,
) -> DlStatus {
    guard(|| {
        let lat = &*non_null(lat.cast_mut(), "lattice")?;
        let out = non_null(out, "out")?;
        let cfg = McConfig::new(lat.spec, WeightModel::Topological { n, t })
            .with_sweeps(eq_sweeps, measure_sweeps)
            .with_seed(seed);
        let r = run_metropolis(&cfg)?;
        *out = DlMcResult {
            mean_length: r.mean_length,
            mean_length_err: r.mean_length_err,
            var_length_normalized: r.var_length_normalized,
            var_length_err: r.var_length_err,
            binder_q: r.binder_q,
            q_err: r.q_err,
            acceptance_rate: r.acceptance_rate,
            tau_int: r.tau_int,
            seed: r.seed,
        };
        Ok(())
    })
}

/// Pfaffian of a `dim` × `dim` antisymmetric matrix stored row-major.
///
/// # Safety
/// `m` must point to `dim * dim` readable doubles and `out` be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn dl_pfaffian(m: *const f64, dim: usize, out: *mut f64) -> DlStatus {
    guard(|| {
        let m = non_null(m.cast_mut(), "matrix")?;
        let out = non_null(out, "out")?;
        let len = dim
            .checked_mul(dim)
            .ok_or(Error::Dimensions(format!("dimension {dim} overflows")))?;
        let data = std::slice::from_raw_parts(m, len);
        *out = pfaffian(&DMatrix::from_row_slice(dim, dim, data))?;
        Ok(())
    })
}

/// Ground-state covariance of the Kitaev honeycomb model on an `lx` × `ly`
/// torus (both even) in the default flux-free sector.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn dl_kitaev_ground_state(
    lx: usize,
    ly: usize,
    j: f64,
    kappa: f64,
    out: *mut *mut DlCovariance,
) -> DlStatus {
    guard(|| {
        let out = non_null(out, "out")?;
        let inner = ground_covariance(&build_hamiltonian(lx, ly, j, kappa, Sector::GROUND)?)?;
        *out = Box::into_raw(Box::new(DlCovariance { inner }));
        Ok(())
    })
}

/// # Safety
/// `cov` must come from `dl_kitaev_ground_state` and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn dl_covariance_free(cov: *mut DlCovariance) {
    if !cov.is_null() {
        drop(Box::from_raw(cov));
    }
}

/// Number of Majorana modes (rows of the matrix).
///
/// # Safety
/// `cov` must be a live handle or NULL (which gives 0).
#[no_mangle]
pub unsafe extern "C" fn dl_covariance_dim(cov: *const DlCovariance) -> usize {
    cov.as_ref().map_or(0, |c| c.inner.g.nrows())
}

/// Copies the matrix row-major into `buf`, which holds `len` doubles.
///
/// # Safety
/// `cov` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dl_covariance_copy(
    cov: *const DlCovariance,
    buf: *mut f64,
    len: usize,
) -> DlStatus {
    guard(|| {
        let cov = &*non_null(cov.cast_mut(), "covariance")?;
        let buf = non_null(buf, "buffer")?;
        let g = &cov.inner.g;
        let n = g.nrows();
        if len < n * n {
            return Err(Error::Dimensions(format!("buffer holds {len} values, need {}", n * n)).into());
        }
        let dst = std::slice::from_raw_parts_mut(buf, n * n);
        for i in 0..n {
            for k in 0..n {
                dst[i * n + k] = g[(i, k)];
            }
        }
        Ok(())
    })
}

/// Loop weight N and tension t_int of the Kitaev wavefunction from membrane
/// Pfaffians on `lx` × `ly` and `lx` × `2 ly` super-honeycomb tori.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn dl_kitaev_extract(
    lx: usize,
    ly: usize,
    j: f64,
    kappa: f64,
    out: *mut DlLoopWeight,
) -> DlStatus {
    guard(|| {
        let out = non_null(out, "out")?;
        let e = extract_loop_weight(lx, ly, j, kappa, Sector::GROUND)?;
        *out = DlLoopWeight {
            n_est: e.n_est,
            t_int_est: e.t_int_est,
            t_double_loop: e.t_double_loop,
            correlation_length: e.correlation_length,
            fit_rms: e.fit_rms,
            n_warnings: e.warnings.len(),
        };
        Ok(())
    })
}

/// Per-edge tension of incoherent noise at rate `p`; NaN outside [0, 1].
#[no_mangle]
pub extern "C" fn dl_t_ext(p: f64) -> f64 {
    if (0.0..=1.0).contains(&p) {
        t_ext(p)
    } else {
        f64::NAN
    }
}

/// Inverse of `dl_t_ext` on p ∈ [0, ½].
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn dl_p_from_t_ext(t: f64, out: *mut f64) -> DlStatus {
    guard(|| {
        let out = non_null(out, "out")?;
        *out = p_from_t_ext(t)?;
        Ok(())
    })
}
