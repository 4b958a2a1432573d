//! Batch experiments driven by a JSON spec: validation, a bounded worker pool,
//! CSV/JSON artifacts and a manifest.
//!
//! Payload files (`results.csv`, `results.json`, `summary.json`, `weights.csv`)
//! depend only on the spec and seeds. Wall times and timestamps go to
//! `manifest.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::kitaev::{
    build_hamiltonian, extract_loop_weight, ground_covariance, KitaevVariant, KitaevWeight,
    MembraneGeometry, Sector,
};
use crate::lattice::{EnumerationOptions, LatticeKind, LatticeTorus, PlaquetteSpins};
use crate::mc::{crossing_of, derive_seed, run_metropolis, LatticeSpec, McConfig, McResult};
use crate::oracle::{
    eta_spectrum_maximal, face_cubic_check, fidelity_projector_formula, ising_dual_check,
    mixed_cubic_check, random_commuting_channel, random_state, rbim_check, toric_code_spectrum,
    Mapping, DENSE_DIM_CAP,
};
use crate::qdouble::{overlap_bruteforce, overlap_closed_form_exact, planar_red_bonds, GroupTable};
use crate::weights::WeightModel;

pub const CSV_SCHEMA: &str = "#schema=1";
pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

const MC_SIZE_CAP: usize = 256;
const ORACLE_CELL_CAP: usize = 16;
const KITAEV_SIZE_CAP: usize = 48;
const KITAEV_MC_SIZE_CAP: usize = 24;
const TORIC_QUBIT_CAP: usize = 10;
const ETA_SITE_CAP: usize = 20;
const WEIGHT_TABLE_CAP: usize = 20;
const WORKER_CAP: usize = 256;
/// Relative error above which an oracle-check task counts as failed.
const ORACLE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(flatten)]
    pub command: Command,
    /// Output directory.
    pub output: PathBuf,
    #[serde(default)]
    pub seed: SeedPolicy,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Optional audit dump of loop weights, written next to the command's results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_table: Option<WeightTableParams>,
}

fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "params", rename_all = "kebab-case")]
pub enum Command {
    OracleCheck(OracleCheckParams),
    McScan(McScanParams),
    KitaevExtract(KitaevExtractParams),
    KitaevMc(KitaevMcParams),
    QdOverlap(QdOverlapParams),
    Spectrum(SpectrumParams),
    FidelityCheck(FidelityParams),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::OracleCheck(_) => "oracle-check",
            Command::McScan(_) => "mc-scan",
            Command::KitaevExtract(_) => "kitaev-extract",
            Command::KitaevMc(_) => "kitaev-mc",
            Command::QdOverlap(_) => "qd-overlap",
            Command::Spectrum(_) => "spectrum",
            Command::FidelityCheck(_) => "fidelity-check",
        }
    }
}

/// `Fixed` hands the same seed to every task; `Derived` gives task i the seed
/// `derive_seed(base, i)`, distinct across the sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum SeedPolicy {
    Fixed { seed: u64 },
    Derived { base: u64 },
}

impl Default for SeedPolicy {
    fn default() -> Self {
        SeedPolicy::Derived { base: 0 }
    }
}

impl SeedPolicy {
    pub fn task_seed(&self, index: usize) -> u64 {
        match *self {
            SeedPolicy::Fixed { seed } => seed,
            SeedPolicy::Derived { base } => derive_seed(base, index as u64),
        }
    }

    pub fn with_seed(self, s: u64) -> Self {
        match self {
            SeedPolicy::Fixed { .. } => SeedPolicy::Fixed { seed: s },
            SeedPolicy::Derived { .. } => SeedPolicy::Derived { base: s },
        }
    }
}

fn all_mappings() -> Vec<Mapping> {
    vec![
        Mapping::IsingDual,
        Mapping::Rbim,
        Mapping::FaceCubic,
        Mapping::MixedCubic,
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckParams {
    #[serde(default = "all_mappings")]
    pub mappings: Vec<Mapping>,
    #[serde(default = "OracleCheckParams::default_sizes")]
    pub sizes: Vec<[usize; 2]>,
    /// Honeycomb coupling for the Ising duality.
    #[serde(default = "OracleCheckParams::default_beta")]
    pub beta: f64,
    /// Error rate for the random-bond Ising check.
    #[serde(default = "OracleCheckParams::default_p")]
    pub p: f64,
    /// Tension for the two cubic checks.
    #[serde(default = "OracleCheckParams::default_t")]
    pub t: f64,
    #[serde(default = "OracleCheckParams::default_face_n")]
    pub face_cubic_n: Vec<usize>,
    #[serde(default = "OracleCheckParams::default_mixed_n")]
    pub mixed_cubic_n: Vec<usize>,
}

impl OracleCheckParams {
    fn default_sizes() -> Vec<[usize; 2]> {
        vec![[2, 2], [3, 3]]
    }
    fn default_beta() -> f64 {
        0.4
    }
    fn default_p() -> f64 {
        0.2
    }
    fn default_t() -> f64 {
        0.3
    }
    fn default_face_n() -> Vec<usize> {
        vec![1, 2, 3]
    }
    fn default_mixed_n() -> Vec<usize> {
        vec![1, 2]
    }
}

impl Default for OracleCheckParams {
    fn default() -> Self {
        OracleCheckParams {
            mappings: all_mappings(),
            sizes: Self::default_sizes(),
            beta: Self::default_beta(),
            p: Self::default_p(),
            t: Self::default_t(),
            face_cubic_n: Self::default_face_n(),
            mixed_cubic_n: Self::default_mixed_n(),
        }
    }
}

/// Loop weight used by `mc-scan` and the weight-table dump. The scanned `t`
/// is the model tension, or an external `t^|L|` factor for the two models
/// without one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Topological { n: f64 },
    Abelian,
    Purity { n: f64, p: f64 },
    QuantumDouble { group: String, g: String },
}

impl ModelSpec {
    fn descriptor(&self) -> String {
        match self {
            ModelSpec::Topological { n } => format!("topological(n={n})"),
            ModelSpec::Abelian => "abelian".into(),
            ModelSpec::Purity { n, p } => format!("purity(n={n};p={p})"),
            ModelSpec::QuantumDouble { group, g } => format!("quantum-double({group};g={g})"),
        }
    }

    /// Weight model and external tension at scan value `t`.
    fn instantiate(&self, t: f64) -> Result<(WeightModel, f64)> {
        Ok(match self {
            ModelSpec::Topological { n } => (WeightModel::Topological { n: *n, t }, 1.0),
            ModelSpec::Abelian => (WeightModel::AbelianIndicator, t),
            ModelSpec::Purity { n, p } => (WeightModel::Purity { n: *n, t, p: *p }, 1.0),
            ModelSpec::QuantumDouble { group, g } => {
                let (table, g) = resolve_group(group, g)?;
                (
                    WeightModel::QuantumDouble {
                        group: Arc::new(table),
                        g,
                    },
                    t,
                )
            }
        })
    }

    /// Loop weight N as reported in CSV rows.
    fn loop_weight(&self) -> f64 {
        match self {
            ModelSpec::Topological { n } | ModelSpec::Purity { n, .. } => *n,
            ModelSpec::Abelian => 1.0,
            ModelSpec::QuantumDouble { group, g } => resolve_group(group, g)
                .map(|(t, g)| t.class_size(g) as f64)
                .unwrap_or(f64::NAN),
        }
    }

    fn check(&self, path: &str, d: &mut Diagnostics) {
        match self {
            ModelSpec::Topological { n } => d.positive(&format!("{path}.n"), *n),
            ModelSpec::Abelian => {}
            ModelSpec::Purity { n, p } => {
                d.positive(&format!("{path}.n"), *n);
                d.rate(&format!("{path}.p"), *p);
            }
            ModelSpec::QuantumDouble { group, g } => {
                if let Err(e) = resolve_group(group, g) {
                    d.push(path, e.to_string());
                }
            }
        }
    }
}

/// Group by name and element by label or index; the element must be a
/// non-trivial involution.
pub fn resolve_group(name: &str, g: &str) -> Result<(GroupTable, usize)> {
    let table = GroupTable::named(name)?;
    let idx = table
        .element(g)
        .or_else(|| g.parse::<usize>().ok().filter(|&i| i < table.order()))
        .ok_or_else(|| Error::Group(format!("no element '{g}' in {name}")))?;
    if idx == table.identity() || table.mul(idx, idx) != table.identity() {
        return Err(Error::Group(format!(
            "element '{g}' of {name} is not a non-trivial involution"
        )));
    }
    Ok((table, idx))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McScanParams {
    pub lattice: LatticeKind,
    pub sizes: Vec<[usize; 2]>,
    pub model: ModelSpec,
    pub t_grid: Vec<f64>,
    #[serde(default = "default_eq")]
    pub eq_sweeps: usize,
    #[serde(default = "default_measure")]
    pub measure_sweeps: usize,
}

fn default_eq() -> usize {
    5000
}

fn default_measure() -> usize {
    3000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KitaevExtractParams {
    pub lx: usize,
    pub ly: usize,
    #[serde(default = "default_j")]
    pub j: f64,
    pub kappas: Vec<f64>,
    #[serde(default = "default_sector")]
    pub sector: Sector,
}

fn default_j() -> f64 {
    1.0
}

fn default_sector() -> Sector {
    Sector::GROUND
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KitaevMcParams {
    pub sizes: Vec<[usize; 2]>,
    #[serde(default = "default_j")]
    pub j: f64,
    pub kappa: f64,
    pub variant: KitaevVariant,
    pub t_grid: Vec<f64>,
    #[serde(default = "default_sector")]
    pub sector: Sector,
    #[serde(default = "default_eq")]
    pub eq_sweeps: usize,
    #[serde(default = "default_measure")]
    pub measure_sweeps: usize,
}

/// Closed-form vs brute-force overlaps for the boundaries of every non-empty
/// plaquette subset of a `window` on an untwisted honeycomb torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QdOverlapParams {
    pub group: String,
    pub g: String,
    #[serde(default = "QdOverlapParams::default_size")]
    pub size: [usize; 2],
    #[serde(default = "QdOverlapParams::default_window")]
    pub window: [usize; 2],
}

impl QdOverlapParams {
    fn default_size() -> [usize; 2] {
        [6, 6]
    }
    fn default_window() -> [usize; 2] {
        [2, 2]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpectrumParams {
    /// Toric code on a square torus, one task per error rate.
    Toric { size: [usize; 2], p_grid: Vec<f64> },
    /// Maximal-decoherence η spectrum with loop weight `t_a^|L| d_a^{b₁}`.
    EtaMaximal {
        lattice: LatticeKind,
        size: [usize; 2],
        t_a: f64,
        d_a: f64,
        #[serde(default)]
        windings: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityParams {
    #[serde(default = "FidelityParams::default_instances")]
    pub instances: usize,
    #[serde(default = "FidelityParams::default_dim")]
    pub dim: usize,
    #[serde(default = "FidelityParams::default_ops")]
    pub n_ops: usize,
    #[serde(default = "FidelityParams::default_p")]
    pub p_samples: Vec<f64>,
}

impl FidelityParams {
    fn default_instances() -> usize {
        50
    }
    fn default_dim() -> usize {
        8
    }
    fn default_ops() -> usize {
        2
    }
    fn default_p() -> Vec<f64> {
        vec![0.0, 0.1, 0.25, 0.4]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightTableParams {
    pub lattice: LatticeKind,
    pub size: [usize; 2],
    pub model: ModelSpec,
    pub t: f64,
    /// Include non-contractible configurations.
    #[serde(default)]
    pub windings: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Default)]
struct Diagnostics(Vec<Diagnostic>);

impl Diagnostics {
    fn push(&mut self, path: &str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn rate(&mut self, path: &str, p: f64) {
        if !(0.0..=0.5).contains(&p) {
            self.push(path, format!("error rate {p} outside [0, 1/2]"));
        }
    }

    fn tension(&mut self, path: &str, t: f64) {
        if !(0.0..=1.0).contains(&t) {
            self.push(path, format!("tension {t} outside [0, 1]"));
        }
    }

    fn positive(&mut self, path: &str, x: f64) {
        if !(x.is_finite() && x > 0.0) {
            self.push(path, format!("{x} must be positive"));
        }
    }

    fn non_empty<T>(&mut self, path: &str, v: &[T]) {
        if v.is_empty() {
            self.push(path, "must not be empty");
        }
    }

    fn at_least_one(&mut self, path: &str, n: usize) {
        if n == 0 {
            self.push(path, "must be at least 1");
        }
    }

    fn lattice(&mut self, path: &str, kind: LatticeKind, [lx, ly]: [usize; 2], cap: usize) {
        if lx == 0 || ly == 0 {
            self.push(path, format!("{lx}x{ly}: sizes must be at least 1"));
        } else if lx > cap || ly > cap {
            self.push(path, format!("{lx}x{ly} exceeds the size cap {cap}"));
        }
        if kind == LatticeKind::SuperHoneycomb && (lx % 6 != 0 || ly % 2 != 0) {
            self.push(
                path,
                format!("super-honeycomb needs lx divisible by 6 and ly even, got {lx}x{ly}"),
            );
        }
    }
}

/// Schema and range checks. Nothing is executed; every problem is reported.
pub fn validate(spec: &ExperimentSpec) -> Vec<Diagnostic> {
    let mut d = Diagnostics::default();
    if spec.output.as_os_str().is_empty() {
        d.push("output", "must name a directory");
    }
    if spec.workers == 0 || spec.workers > WORKER_CAP {
        d.push(
            "workers",
            format!("{} outside 1..={WORKER_CAP}", spec.workers),
        );
    }
    match &spec.command {
        Command::OracleCheck(o) => {
            d.non_empty("params.mappings", &o.mappings);
            d.non_empty("params.sizes", &o.sizes);
            for (i, s) in o.sizes.iter().enumerate() {
                d.lattice(&format!("params.sizes[{i}]"), LatticeKind::Honeycomb, *s, 4);
                if s[0] * s[1] > ORACLE_CELL_CAP {
                    d.push(
                        &format!("params.sizes[{i}]"),
                        format!("more than {ORACLE_CELL_CAP} cells"),
                    );
                }
            }
            d.positive("params.beta", o.beta);
            d.rate("params.p", o.p);
            d.tension("params.t", o.t);
            for (i, &n) in o.face_cubic_n.iter().enumerate() {
                let path = format!("params.face_cubic_n[{i}]");
                if !(1..=4).contains(&n) {
                    d.push(&path, format!("N = {n} outside 1..=4"));
                } else if o.t * n as f64 > 1.0 {
                    d.push(&path, format!("t N = {} exceeds 1", o.t * n as f64));
                }
            }
            for (i, &n) in o.mixed_cubic_n.iter().enumerate() {
                let path = format!("params.mixed_cubic_n[{i}]");
                if !(1..=2).contains(&n) {
                    d.push(&path, format!("N = {n} outside 1..=2"));
                } else if o.t * (n as f64).sqrt() > 1.0 {
                    d.push(&path, format!("t √N exceeds 1 for N = {n}"));
                }
            }
        }
        Command::McScan(m) => {
            d.non_empty("params.sizes", &m.sizes);
            for (i, s) in m.sizes.iter().enumerate() {
                d.lattice(&format!("params.sizes[{i}]"), m.lattice, *s, MC_SIZE_CAP);
            }
            m.model.check("params.model", &mut d);
            d.non_empty("params.t_grid", &m.t_grid);
            for (i, &t) in m.t_grid.iter().enumerate() {
                d.tension(&format!("params.t_grid[{i}]"), t);
            }
            d.at_least_one("params.eq_sweeps", m.eq_sweeps);
            d.at_least_one("params.measure_sweeps", m.measure_sweeps);
        }
        Command::KitaevExtract(k) => {
            d.lattice(
                "params",
                LatticeKind::SuperHoneycomb,
                [k.lx, 2 * k.ly],
                KITAEV_SIZE_CAP,
            );
            d.positive("params.j", k.j);
            d.non_empty("params.kappas", &k.kappas);
            for (i, x) in k.kappas.iter().enumerate() {
                if !x.is_finite() {
                    d.push(&format!("params.kappas[{i}]"), "must be finite");
                }
            }
        }
        Command::KitaevMc(k) => {
            d.non_empty("params.sizes", &k.sizes);
            for (i, s) in k.sizes.iter().enumerate() {
                d.lattice(
                    &format!("params.sizes[{i}]"),
                    LatticeKind::SuperHoneycomb,
                    *s,
                    KITAEV_MC_SIZE_CAP,
                );
            }
            d.positive("params.j", k.j);
            if !k.kappa.is_finite() {
                d.push("params.kappa", "must be finite");
            }
            d.non_empty("params.t_grid", &k.t_grid);
            for (i, &t) in k.t_grid.iter().enumerate() {
                d.tension(&format!("params.t_grid[{i}]"), t);
            }
            d.at_least_one("params.eq_sweeps", k.eq_sweeps);
            d.at_least_one("params.measure_sweeps", k.measure_sweeps);
        }
        Command::QdOverlap(q) => {
            if let Err(e) = resolve_group(&q.group, &q.g) {
                d.push("params.g", e.to_string());
            }
            d.lattice("params.size", LatticeKind::Honeycomb, q.size, 32);
            let [wx, wy] = q.window;
            if wx == 0 || wy == 0 || wx * wy > 9 {
                d.push("params.window", "window must hold 1 to 9 plaquettes");
            }
            // Loops must stay below half the torus for the planar unwrapping.
            if 2 * (wx + 1) > q.size[0] || 2 * (wy + 1) > q.size[1] {
                d.push("params.window", "window too large for the torus");
            }
        }
        Command::Spectrum(SpectrumParams::Toric { size, p_grid }) => {
            d.lattice("params.size", LatticeKind::Square, *size, TORIC_QUBIT_CAP);
            if 2 * size[0] * size[1] > TORIC_QUBIT_CAP {
                d.push(
                    "params.size",
                    format!("more than {TORIC_QUBIT_CAP} qubits"),
                );
            }
            d.non_empty("params.p_grid", p_grid);
            for (i, &p) in p_grid.iter().enumerate() {
                d.rate(&format!("params.p_grid[{i}]"), p);
            }
        }
        Command::Spectrum(SpectrumParams::EtaMaximal {
            lattice,
            size,
            t_a,
            d_a,
            ..
        }) => {
            d.lattice("params.size", *lattice, *size, ETA_SITE_CAP);
            let edges = edge_count(*lattice, *size);
            if edges > ETA_SITE_CAP {
                d.push(
                    "params.size",
                    format!("{edges} sites exceed the cap {ETA_SITE_CAP}"),
                );
            }
            d.tension("params.t_a", *t_a);
            d.positive("params.d_a", *d_a);
        }
        Command::FidelityCheck(f) => {
            d.at_least_one("params.instances", f.instances);
            if f.dim < 2 || f.dim > DENSE_DIM_CAP {
                d.push(
                    "params.dim",
                    format!("{} outside 2..={DENSE_DIM_CAP}", f.dim),
                );
            }
            if !(1..=8).contains(&f.n_ops) {
                d.push("params.n_ops", format!("{} outside 1..=8", f.n_ops));
            }
            for (i, &p) in f.p_samples.iter().enumerate() {
                d.rate(&format!("params.p_samples[{i}]"), p);
            }
        }
    }
    if let Some(w) = &spec.weight_table {
        d.lattice("weight_table.size", w.lattice, w.size, WEIGHT_TABLE_CAP);
        let plaquettes = plaquette_count(w.lattice, w.size);
        if plaquettes > WEIGHT_TABLE_CAP {
            d.push(
                "weight_table.size",
                format!("{plaquettes} plaquettes exceed the cap {WEIGHT_TABLE_CAP}"),
            );
        }
        w.model.check("weight_table.model", &mut d);
        d.tension("weight_table.t", w.t);
    }
    d.0
}

fn edge_count(kind: LatticeKind, [lx, ly]: [usize; 2]) -> usize {
    match kind {
        LatticeKind::Square => 2 * lx * ly,
        LatticeKind::Honeycomb | LatticeKind::Triangular => 3 * lx * ly,
        LatticeKind::SuperHoneycomb => lx * ly,
    }
}

fn plaquette_count(kind: LatticeKind, [lx, ly]: [usize; 2]) -> usize {
    match kind {
        LatticeKind::Triangular => 2 * lx * ly,
        LatticeKind::SuperHoneycomb => lx * ly / 3,
        _ => lx * ly,
    }
}

/// One unit of work. Tasks share nothing mutable.
struct Task {
    label: String,
    seed: u64,
    params: Value,
    job: Box<dyn Fn() -> Result<TaskOutput> + Send + Sync>,
}

#[derive(Default)]
struct TaskOutput {
    rows: Vec<Vec<String>>,
    json: Option<Value>,
}

struct Plan {
    csv_header: Option<Vec<&'static str>>,
    tasks: Vec<Task>,
    /// Summary built from the ordered task outputs, written to `summary.json`.
    summary: Option<Box<dyn Fn(&[Option<TaskOutput>]) -> Value>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub index: usize,
    pub label: String,
    pub seed: u64,
    pub params: Value,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub spec: ExperimentSpec,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub artifacts: Vec<String>,
    pub failed: usize,
    pub tasks: Vec<TaskRecord>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub diagnostics: Vec<Diagnostic>,
    pub manifest: Option<Manifest>,
}

/// Validates, then runs every task on a pool of `spec.workers` threads and
/// writes artifacts into `spec.output`. Results are merged in task order.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let diagnostics = validate(spec);
    if !diagnostics.is_empty() {
        return Ok(RunOutcome {
            exit_code: EXIT_INVALID,
            diagnostics,
            manifest: None,
        });
    }
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let plan = plan(spec)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Other(format!("worker pool: {e}")))?;
    let results: Vec<(Result<TaskOutput>, f64)> = pool.install(|| {
        plan.tasks
            .par_iter()
            .map(|t| {
                let s = Instant::now();
                let out = (t.job)();
                (out, s.elapsed().as_secs_f64())
            })
            .collect()
    });

    let mut records = Vec::with_capacity(results.len());
    let mut outputs = Vec::with_capacity(results.len());
    for (i, (task, (out, secs))) in plan.tasks.iter().zip(results).enumerate() {
        let error = out.as_ref().err().map(|e| e.to_string());
        records.push(TaskRecord {
            index: i,
            label: task.label.clone(),
            seed: task.seed,
            params: task.params.clone(),
            wall_seconds: secs,
            error,
        });
        outputs.push(out.ok());
    }

    let dir = &spec.output;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut artifacts = Vec::new();
    if let Some(header) = &plan.csv_header {
        let rows = outputs.iter().flatten().flat_map(|o| o.rows.iter());
        write_csv(&dir.join("results.csv"), header, rows)?;
        artifacts.push("results.csv".to_string());
    }
    let json: Vec<&Value> = outputs
        .iter()
        .flatten()
        .filter_map(|o| o.json.as_ref())
        .collect();
    if !json.is_empty() {
        write_json(&dir.join("results.json"), &json)?;
        artifacts.push("results.json".to_string());
    }
    if let Some(summary) = &plan.summary {
        write_json(&dir.join("summary.json"), &summary(&outputs))?;
        artifacts.push("summary.json".to_string());
    }
    if let Some(w) = &spec.weight_table {
        write_weight_table(&dir.join("weights.csv"), w)?;
        artifacts.push("weights.csv".to_string());
    }
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    artifacts.push("manifest.json".to_string());
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: spec.command.name().to_string(),
        spec: spec.clone(),
        started_unix,
        wall_seconds: clock.elapsed().as_secs_f64(),
        artifacts,
        failed,
        tasks: records,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunOutcome {
        exit_code: if failed == 0 { EXIT_OK } else { EXIT_PARTIAL },
        diagnostics,
        manifest: Some(manifest),
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Other(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Other(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_csv<'a>(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = &'a Vec<String>>,
) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    writeln!(file, "{CSV_SCHEMA}").map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Other(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Shortest round-trip form, with an exponent for very small or large values.
fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Loop descriptor: edge indices joined by `;`.
fn descriptor(edges: &[usize]) -> String {
    edges
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn write_weight_table(path: &Path, w: &WeightTableParams) -> Result<()> {
    let lat = LatticeTorus::build(w.lattice, w.size[0], w.size[1])?;
    let (model, t_ext) = w.model.instantiate(w.t)?;
    model.validate()?;
    let mut opts = EnumerationOptions::distinct();
    if w.windings {
        opts = opts.with_windings();
    }
    let mut rows = Vec::new();
    let mut err = None;
    lat.visit_loop_configs(opts, |l| {
        let c = lat.cycle_rank(l);
        match model.evaluate(&lat, l) {
            Ok(weight) => {
                let k = l.len();
                let ext = if k == 0 { 1.0 } else { t_ext.powi(k as i32) };
                let v = weight.value() * ext;
                rows.push(vec![
                    descriptor(&l.edge_list()),
                    k.to_string(),
                    c.to_string(),
                    num(v),
                    (v.signum() as i64 * (v != 0.0) as i64).to_string(),
                ]);
            }
            Err(e) => {
                err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    write_csv(
        path,
        &["loop", "length", "cyclomatic", "value", "sign"],
        rows.iter(),
    )
}

fn plan(spec: &ExperimentSpec) -> Result<Plan> {
    let seeds = spec.seed;
    match &spec.command {
        Command::OracleCheck(o) => Ok(plan_oracle(o, seeds)),
        Command::McScan(m) => Ok(plan_mc_scan(m, seeds)),
        Command::KitaevExtract(k) => Ok(plan_kitaev_extract(k, seeds)),
        Command::KitaevMc(k) => Ok(plan_kitaev_mc(k, seeds)),
        Command::QdOverlap(q) => plan_qd(q, seeds),
        Command::Spectrum(s) => Ok(plan_spectrum(s, seeds)),
        Command::FidelityCheck(f) => Ok(plan_fidelity(f, seeds)),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Other(e.to_string()))
}

fn plan_oracle(o: &OracleCheckParams, seeds: SeedPolicy) -> Plan {
    let mut tasks = Vec::new();
    let mut push = |label: String, params: Value, job: Box<dyn Fn() -> Result<TaskOutput> + Send + Sync>| {
        let seed = seeds.task_seed(tasks.len());
        tasks.push(Task {
            label,
            seed,
            params,
            job,
        });
    };
    let report = |r: crate::oracle::EquivalenceReport| -> Result<TaskOutput> {
        let ok = r.relative_error < ORACLE_TOLERANCE;
        let v = to_json(&r)?;
        if !ok {
            return Err(Error::Other(format!(
                "relative error {:e} above {ORACLE_TOLERANCE:e}",
                r.relative_error
            )));
        }
        Ok(TaskOutput {
            rows: Vec::new(),
            json: Some(v),
        })
    };
    for &[lx, ly] in &o.sizes {
        for &m in &o.mappings {
            let size = json!([lx, ly]);
            match m {
                Mapping::IsingDual => {
                    let beta = o.beta;
                    push(
                        format!("ising-dual {lx}x{ly}"),
                        json!({"mapping": m, "size": size, "beta": beta}),
                        Box::new(move || {
                            let hc = LatticeTorus::build(LatticeKind::Honeycomb, lx, ly)?;
                            report(ising_dual_check(&hc, beta)?)
                        }),
                    );
                }
                Mapping::Rbim => {
                    let p = o.p;
                    push(
                        format!("rbim {lx}x{ly}"),
                        json!({"mapping": m, "size": size, "p": p, "e_ref": [0]}),
                        Box::new(move || {
                            // one anyon pair joined by edge 0
                            let sq = LatticeTorus::build(LatticeKind::Square, lx, ly)?;
                            let e = sq.config(&[0]);
                            let a: Vec<usize> = sq.vertex_boundary(&e).ones().collect();
                            report(rbim_check(&sq, &a, &e, p)?)
                        }),
                    );
                }
                Mapping::FaceCubic => {
                    for &n in &o.face_cubic_n {
                        let t = o.t;
                        push(
                            format!("face-cubic {lx}x{ly} N={n}"),
                            json!({"mapping": m, "size": size, "t": t, "n": n}),
                            Box::new(move || {
                                let sq = LatticeTorus::build(LatticeKind::Square, lx, ly)?;
                                report(face_cubic_check(&sq, t, n)?)
                            }),
                        );
                    }
                }
                Mapping::MixedCubic => {
                    for &n in &o.mixed_cubic_n {
                        let t = o.t;
                        push(
                            format!("mixed-cubic {lx}x{ly} N={n}"),
                            json!({"mapping": m, "size": size, "t": t, "n": n}),
                            Box::new(move || {
                                let hc = LatticeTorus::build(LatticeKind::Honeycomb, lx, ly)?;
                                report(mixed_cubic_check(&hc, t, n)?)
                            }),
                        );
                    }
                }
            }
        }
    }
    Plan {
        csv_header: None,
        tasks,
        summary: None,
    }
}

const MC_HEADER: [&str; 15] = [
    "model",
    "lattice",
    "N",
    "t",
    "size_x",
    "size_y",
    "eq_sweeps",
    "measure_sweeps",
    "seed",
    "mean_length",
    "var_length_norm",
    "binder_Q",
    "q_err",
    "acceptance",
    "tau_int",
];

#[allow(clippy::too_many_arguments)]
fn mc_row(
    model: &str,
    n: Option<f64>,
    t: f64,
    lat: LatticeSpec,
    eq: usize,
    meas: usize,
    r: &McResult,
) -> Vec<String> {
    vec![
        model.to_string(),
        lat.kind.name().to_string(),
        n.map(num).unwrap_or_default(),
        num(t),
        lat.lx.to_string(),
        lat.ly.to_string(),
        eq.to_string(),
        meas.to_string(),
        r.seed.to_string(),
        num(r.mean_length),
        num(r.var_length_normalized),
        num(r.binder_q),
        num(r.q_err),
        num(r.acceptance_rate),
        num(r.tau_int),
    ]
}

/// Binder crossings between consecutive sizes (by area) from ordered MC rows.
fn crossings_summary(sizes: &[[usize; 2]], t_grid: &[f64], outputs: &[Option<TaskOutput>]) -> Value {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| sizes[i][0] * sizes[i][1]);
    let nt = t_grid.len();
    let curve = |s: usize| -> Option<Vec<(f64, f64)>> {
        let mut pts = Vec::with_capacity(nt);
        for (k, &t) in t_grid.iter().enumerate() {
            let row = outputs[s * nt + k].as_ref()?.rows.first()?;
            pts.push((t, row[11].parse::<f64>().ok()?));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        Some(pts)
    };
    let mut crossings = Vec::new();
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        let t = match (curve(a), curve(b)) {
            (Some(ca), Some(cb)) => crossing_of(&ca, &cb),
            _ => None,
        };
        crossings.push(json!({"small": sizes[a], "large": sizes[b], "t": t}));
    }
    let found: Vec<f64> = crossings.iter().filter_map(|c| c["t"].as_f64()).collect();
    let estimate = (!found.is_empty()).then(|| found.iter().sum::<f64>() / found.len() as f64);
    json!({"crossings": crossings, "estimate": estimate})
}

fn plan_mc_scan(m: &McScanParams, seeds: SeedPolicy) -> Plan {
    let mut tasks = Vec::new();
    let model = Arc::new(m.model.clone());
    let name = m.model.descriptor();
    let n = m.model.loop_weight();
    for &[lx, ly] in &m.sizes {
        let lat = LatticeSpec::new(m.lattice, lx, ly);
        for &t in &m.t_grid {
            let seed = seeds.task_seed(tasks.len());
            let (model, name) = (model.clone(), name.clone());
            let (eq, meas) = (m.eq_sweeps, m.measure_sweeps);
            tasks.push(Task {
                label: format!("{} {lx}x{ly} t={t}", m.lattice.name()),
                seed,
                params: json!({"model": &*model, "lattice": lat, "t": t}),
                job: Box::new(move || {
                    let (w, t_ext) = model.instantiate(t)?;
                    let mut cfg = McConfig::new(lat, w).with_sweeps(eq, meas).with_seed(seed);
                    cfg.t_ext = t_ext;
                    let r = run_metropolis(&cfg)?;
                    Ok(TaskOutput {
                        rows: vec![mc_row(&name, Some(n), t, lat, eq, meas, &r)],
                        json: None,
                    })
                }),
            });
        }
    }
    let (sizes, grid) = (m.sizes.clone(), m.t_grid.clone());
    Plan {
        csv_header: Some(MC_HEADER.to_vec()),
        tasks,
        summary: Some(Box::new(move |o| crossings_summary(&sizes, &grid, o))),
    }
}

fn plan_kitaev_extract(k: &KitaevExtractParams, seeds: SeedPolicy) -> Plan {
    let tasks = k
        .kappas
        .iter()
        .enumerate()
        .map(|(i, &kappa)| {
            let (lx, ly, j, sector) = (k.lx, k.ly, k.j, k.sector);
            Task {
                label: format!("extract {lx}x{ly} kappa={kappa}"),
                seed: seeds.task_seed(i),
                params: json!({"lx": lx, "ly": ly, "j": j, "kappa": kappa, "sector": sector}),
                job: Box::new(move || {
                    let est = extract_loop_weight(lx, ly, j, kappa, sector)?;
                    Ok(TaskOutput {
                        rows: Vec::new(),
                        json: Some(json!({
                            "kappa": kappa, "lx": lx, "ly": ly, "j": j,
                            "N_est": est.n_est, "t_int_est": est.t_int_est,
                            "estimate": to_json(&est)?,
                        })),
                    })
                }),
            }
        })
        .collect();
    Plan {
        csv_header: None,
        tasks,
        summary: None,
    }
}

fn plan_kitaev_mc(k: &KitaevMcParams, seeds: SeedPolicy) -> Plan {
    // One ground state per size, built by whichever task needs it first.
    type Shared = Arc<OnceLock<std::result::Result<Arc<(Arc<MembraneGeometry>, Arc<crate::kitaev::CovarianceMatrix>)>, Error>>>;
    let mut tasks = Vec::new();
    let variant = if k.variant == KitaevVariant::Purity { "purity" } else { "wavefunction" };
    let name = format!("kitaev-{variant}(j={};kappa={})", k.j, k.kappa);
    for &[lx, ly] in &k.sizes {
        let cache: Shared = Arc::new(OnceLock::new());
        let lat = LatticeSpec::new(LatticeKind::SuperHoneycomb, lx, ly);
        for &t in &k.t_grid {
            let seed = seeds.task_seed(tasks.len());
            let cache = cache.clone();
            let (j, kappa, sector, variant) = (k.j, k.kappa, k.sector, k.variant);
            let (eq, meas) = (k.eq_sweeps, k.measure_sweeps);
            let name = name.clone();
            tasks.push(Task {
                label: format!("kitaev-mc {lx}x{ly} t_ext={t}"),
                seed,
                params: json!({"lattice": lat, "j": j, "kappa": kappa, "variant": variant, "sector": sector, "t_ext": t}),
                job: Box::new(move || {
                    let state = cache
                        .get_or_init(|| {
                            let geo = MembraneGeometry::new(lx, ly)?;
                            let h = build_hamiltonian(lx, ly, j, kappa, sector)?;
                            let cov = ground_covariance(&h)?;
                            Ok(Arc::new((Arc::new(geo), Arc::new(cov))))
                        })
                        .clone()?;
                    let w = KitaevWeight::new(state.0.clone(), state.1.clone(), variant, t)?;
                    let cfg = McConfig::new(lat, WeightModel::Fermionic(Arc::new(w)))
                        .with_sweeps(eq, meas)
                        .with_seed(seed);
                    let r = run_metropolis(&cfg)?;
                    Ok(TaskOutput {
                        rows: vec![mc_row(&name, None, t, lat, eq, meas, &r)],
                        json: None,
                    })
                }),
            });
        }
    }
    let (sizes, grid) = (k.sizes.clone(), k.t_grid.clone());
    Plan {
        csv_header: Some(MC_HEADER.to_vec()),
        tasks,
        summary: Some(Box::new(move |o| crossings_summary(&sizes, &grid, o))),
    }
}

fn plan_qd(q: &QdOverlapParams, seeds: SeedPolicy) -> Result<Plan> {
    let (group, g) = resolve_group(&q.group, &q.g)?;
    let group = Arc::new(group);
    let hc = Arc::new(LatticeTorus::build(LatticeKind::Honeycomb, q.size[0], q.size[1])?);
    let cells = hc.cells();
    let [wx, wy] = q.window;
    let window: Vec<usize> = (0..wx as i64)
        .flat_map(|i| (0..wy as i64).map(move |j| (i, j)))
        .map(|(i, j)| cells.index(i + 2, j + 2))
        .collect();
    let mut tasks = Vec::new();
    for mask in 1u32..(1 << window.len()) {
        let up: Vec<usize> = (0..window.len())
            .filter(|&b| mask >> b & 1 == 1)
            .map(|b| window[b])
            .collect();
        let (hc, group) = (hc.clone(), group.clone());
        let seed = seeds.task_seed(tasks.len());
        tasks.push(Task {
            label: format!("qd {} plaquettes {up:?}", q.group),
            seed,
            params: json!({"group": q.group, "g": q.g, "size": q.size, "plaquettes": up}),
            job: Box::new(move || {
                let l = hc.boundary(&PlaquetteSpins::from_set(hc.n_plaquettes(), &up));
                let closed = overlap_closed_form_exact(&hc, &l, &group, g)?;
                let brute = overlap_bruteforce(&planar_red_bonds(&hc, &l)?, &group, g)?;
                if closed != brute {
                    return Err(Error::Other(format!(
                        "closed form {closed} differs from brute force {brute}"
                    )));
                }
                Ok(TaskOutput {
                    rows: vec![vec![
                        group.name().to_string(),
                        group.label(g).to_string(),
                        descriptor(&l.edge_list()),
                        l.len().to_string(),
                        hc.cycle_rank(&l).to_string(),
                        closed.to_string(),
                        brute.to_string(),
                    ]],
                    json: None,
                })
            }),
        });
    }
    Ok(Plan {
        csv_header: Some(vec![
            "group",
            "g",
            "loop",
            "length",
            "components",
            "closed_form",
            "bruteforce",
        ]),
        tasks,
        summary: None,
    })
}

fn plan_spectrum(s: &SpectrumParams, seeds: SeedPolicy) -> Plan {
    let tasks = match s {
        SpectrumParams::Toric { size, p_grid } => p_grid
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let [lx, ly] = *size;
                Task {
                    label: format!("toric {lx}x{ly} p={p}"),
                    seed: seeds.task_seed(i),
                    params: json!({"size": size, "p": p}),
                    job: Box::new(move || {
                        let sq = LatticeTorus::build(LatticeKind::Square, lx, ly)?;
                        let r = toric_code_spectrum(&sq, p)?;
                        if let Some(gap) = r.cross_check.filter(|&g| g > ORACLE_TOLERANCE) {
                            return Err(Error::Other(format!(
                                "the two spectrum routes differ by {gap:e}"
                            )));
                        }
                        Ok(TaskOutput {
                            rows: Vec::new(),
                            json: Some(json!({"p": p, "size": [lx, ly], "spectrum": to_json(&r)?})),
                        })
                    }),
                }
            })
            .collect(),
        SpectrumParams::EtaMaximal {
            lattice,
            size,
            t_a,
            d_a,
            windings,
        } => {
            let (kind, [lx, ly], t_a, d_a, windings) = (*lattice, *size, *t_a, *d_a, *windings);
            vec![Task {
                label: format!("eta {} {lx}x{ly}", kind.name()),
                seed: seeds.task_seed(0),
                params: to_json(s).unwrap_or(Value::Null),
                job: Box::new(move || {
                    let lat = LatticeTorus::build(kind, lx, ly)?;
                    let mut opts = EnumerationOptions::distinct();
                    if windings {
                        opts = opts.with_windings();
                    }
                    let r = eta_spectrum_maximal(&lat, t_a, d_a, opts)?;
                    Ok(TaskOutput {
                        rows: Vec::new(),
                        json: Some(json!({"lattice": kind, "size": [lx, ly], "t_a": t_a, "d_a": d_a, "spectrum": to_json(&r)?})),
                    })
                }),
            }]
        }
    };
    Plan {
        csv_header: None,
        tasks,
        summary: None,
    }
}

fn plan_fidelity(f: &FidelityParams, seeds: SeedPolicy) -> Plan {
    let samples = Arc::new(f.p_samples.clone());
    let tasks = (0..f.instances)
        .map(|i| {
            let seed = seeds.task_seed(i);
            let (dim, k, samples) = (f.dim, f.n_ops, samples.clone());
            Task {
                label: format!("fidelity instance {i}"),
                seed,
                params: json!({"dim": dim, "n_ops": k, "p_samples": &*samples}),
                job: Box::new(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let ch = random_commuting_channel(dim, k, &mut rng)?;
                    let psi = random_state(dim, &mut rng);
                    let phi = random_state(dim, &mut rng);
                    let r = fidelity_projector_formula(&psi, &phi, &ch, &samples)?;
                    let worst = r.processing.iter().map(|x| x.1).fold(f64::NAN, f64::max);
                    Ok(TaskOutput {
                        rows: vec![vec![
                            i.to_string(),
                            seed.to_string(),
                            dim.to_string(),
                            k.to_string(),
                            num(r.formula),
                            num(r.direct_sqrt),
                            num(r.deviation),
                            num(worst),
                        ]],
                        json: None,
                    })
                }),
            }
        })
        .collect();
    Plan {
        csv_header: Some(vec![
            "instance",
            "seed",
            "dim",
            "n_ops",
            "formula",
            "direct_sqrt",
            "deviation",
            "max_processed_fidelity",
        ]),
        tasks,
        summary: None,
    }
}

/// Reads a spec from JSON text; a parse failure is a single diagnostic.
pub fn parse_spec(text: &str) -> std::result::Result<ExperimentSpec, Vec<Diagnostic>> {
    serde_json::from_str(text).map_err(|e| {
        vec![Diagnostic {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        }]
    })
}

/// Scalar overrides from the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, spec: &mut ExperimentSpec) {
        if let Some(w) = self.workers {
            spec.workers = w;
        }
        if let Some(s) = self.seed {
            spec.seed = spec.seed.with_seed(s);
        }
        if let Some(o) = &self.out {
            spec.output = o.clone();
        }
    }
}

/// Per-task seeds, for reporting.
pub fn task_seeds(spec: &ExperimentSpec) -> Result<BTreeMap<usize, u64>> {
    Ok(plan(spec)?
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (i, t.seed))
        .collect())
}
