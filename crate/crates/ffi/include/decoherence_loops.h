#ifndef DECOHERENCE_LOOPS_H
#define DECOHERENCE_LOOPS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DlStatus {
  DL_STATUS_OK = 0,
  DL_STATUS_NULL_POINTER = 1,
  DL_STATUS_INVALID_ARGUMENT = 2,
  DL_STATUS_CAP_EXCEEDED = 3,
  DL_STATUS_NUMERICAL = 4,
  DL_STATUS_PANIC = 5,
} DlStatus;

typedef enum DlLatticeKind {
  DL_LATTICE_KIND_HONEYCOMB = 0,
  DL_LATTICE_KIND_SQUARE = 1,
  DL_LATTICE_KIND_TRIANGULAR = 2,
  DL_LATTICE_KIND_SUPER_HONEYCOMB = 3,
} DlLatticeKind;

// Majorana covariance matrix of a Kitaev-model ground state.
typedef struct DlCovariance DlCovariance;

// Periodic lattice.
typedef struct DlLattice DlLattice;

typedef struct DlMcResult {
  double mean_length;
  double mean_length_err;
  // Var(|L|) per plaquette.
  double var_length_normalized;
  double var_length_err;
  double binder_q;
  double q_err;
  double acceptance_rate;
  double tau_int;
  uint64_t seed;
} DlMcResult;

typedef struct DlLoopWeight {
  double n_est;
  double t_int_est;
  double t_double_loop;
  double correlation_length;
  double fit_rms;
  size_t n_warnings;
} DlLoopWeight;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or an empty string. Valid
// until the next call into the library from the same thread.
const char *dl_last_error(void);

// Library version as a static NUL-terminated string.
const char *dl_version(void);

// Builds an `lx` × `ly` torus into `*out`.
//
// # Safety
// `out` must be valid for a pointer write.
enum DlStatus dl_lattice_new(enum DlLatticeKind kind, size_t lx, size_t ly, struct DlLattice **out);

// # Safety
// `lat` must come from `dl_lattice_new` and not be freed twice. NULL is ignored.
void dl_lattice_free(struct DlLattice *lat);

// Vertex, edge and plaquette counts.
//
// # Safety
// `lat` must be a live handle; each output pointer may be NULL.
enum DlStatus dl_lattice_counts(const struct DlLattice *lat,
                                size_t *n_vertices,
                                size_t *n_edges,
                                size_t *n_plaquettes);

// `Σ_L t^|L| n^{C(L)}` over distinct closed configurations; all homology
// classes when `windings` is true, contractible ones otherwise.
//
// # Safety
// `lat` must be a live handle and `out` valid for a write.
enum DlStatus dl_partition_function(const struct DlLattice *lat,
                                    double n,
                                    double t,
                                    bool windings,
                                    double *out);

// Metropolis run of the O(n) loop model at tension `t`.
//
// # Safety
// `lat` must be a live handle and `out` valid for a write.
enum DlStatus dl_run_mc(const struct DlLattice *lat,
                        double n,
                        double t,
                        size_t eq_sweeps,
                        size_t measure_sweeps,
                        uint64_t seed,
                        struct DlMcResult *out);

// Pfaffian of a `dim` × `dim` antisymmetric matrix stored row-major.
//
// # Safety
// `m` must point to `dim * dim` readable doubles and `out` be valid for a write.
enum DlStatus dl_pfaffian(const double *m, size_t dim, double *out);

// Ground-state covariance of the Kitaev honeycomb model on an `lx` × `ly`
// torus (both even) in the default flux-free sector.
//
// # Safety
// `out` must be valid for a pointer write.
enum DlStatus dl_kitaev_ground_state(size_t lx,
                                     size_t ly,
                                     double j,
                                     double kappa,
                                     struct DlCovariance **out);

// # Safety
// `cov` must come from `dl_kitaev_ground_state` and not be freed twice. NULL is ignored.
void dl_covariance_free(struct DlCovariance *cov);

// Number of Majorana modes (rows of the matrix).
//
// # Safety
// `cov` must be a live handle or NULL (which gives 0).
size_t dl_covariance_dim(const struct DlCovariance *cov);

// Copies the matrix row-major into `buf`, which holds `len` doubles.
//
// # Safety
// `cov` must be a live handle and `buf` writable for `len` doubles.
enum DlStatus dl_covariance_copy(const struct DlCovariance *cov, double *buf, size_t len);

// Loop weight N and tension t_int of the Kitaev wavefunction from membrane
// Pfaffians on `lx` × `ly` and `lx` × `2 ly` super-honeycomb tori.
//
// # Safety
// `out` must be valid for a write.
enum DlStatus dl_kitaev_extract(size_t lx,
                                size_t ly,
                                double j,
                                double kappa,
                                struct DlLoopWeight *out);

// Per-edge tension of incoherent noise at rate `p`; NaN outside [0, 1].
double dl_t_ext(double p);

// Inverse of `dl_t_ext` on p ∈ [0, ½].
//
// # Safety
// `out` must be valid for a write.
enum DlStatus dl_p_from_t_ext(double t, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DECOHERENCE_LOOPS_H */
