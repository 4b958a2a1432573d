//! Brute-force and closed-form references: partition functions, the four
//! stat-mech equivalences, density-matrix spectra, fidelities and string
//! correlators.

mod equivalence;
mod fidelity;
mod spectrum;

pub use equivalence::{face_cubic_check, ising_dual_check, mixed_cubic_check, rbim_check};
pub use fidelity::{
    DENSE_DIM_CAP,
    fidelity_direct, fidelity_projector_formula, pure_density, random_commuting_channel,
    random_state, CMatrix as ComplexMatrix,
    CVector as ComplexVector, FidelityCheck, ProjectorChannel, C64 as Complex64,
};
pub use spectrum::{eta_spectrum_from_masks, eta_spectrum_maximal, toric_code_spectrum};

use std::collections::BTreeMap;
use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use fidelity::{CMatrix, C64};

use crate::error::{Error, Result};
use crate::lattice::{EnumerationOptions, LatticeTorus, LoopConfig};
use crate::weights::WeightModel;

/// Compensated summation (Neumaier's variant of Kahan).
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::Sum<f64> for NeumaierSum {
    fn sum<I: Iterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::default();
        iter.for_each(|x| s.add(x));
        s
    }
}

/// Eigenvalues of a real symmetric matrix.
///
/// The implicit QR sweep occasionally returns NaN on matrices with many exactly
/// zero rows (rank-one density matrices, for instance); the solve is then
/// repeated on `M + cI`, which has the same eigenvectors.
pub fn symmetric_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut vals: Vec<f64> = if eig.eigenvalues.iter().any(|x| !x.is_finite()) {
        let c = 1.0 + m.diagonal().amax();
        let shifted = SymmetricEigen::new(m + DMatrix::<f64>::identity(n, n) * c);
        shifted.eigenvalues.iter().map(|x| x - c).collect()
    } else {
        eig.eigenvalues.iter().cloned().collect()
    };
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

/// Hermitian eigendecomposition with the same shifted fallback.
pub fn hermitian_eigen(m: CMatrix) -> SymmetricEigen<C64, nalgebra::Dyn> {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|x| x.is_finite())
        && eig
            .eigenvectors
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    {
        return eig;
    }
    let c = 1.0 + m.diagonal().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut shifted = (m + CMatrix::identity(n, n) * C64::new(c, 0.0)).symmetric_eigen();
    shifted.eigenvalues.iter_mut().for_each(|x| *x -= c);
    shifted
}

/// `ln Σ exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs
        .iter()
        .map(|x| (x - m).exp())
        .sum::<NeumaierSum>()
        .value()
        .ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mapping {
    IsingDual,
    Rbim,
    FaceCubic,
    MixedCubic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub mapping: Mapping,
    pub lattice: String,
    pub params: BTreeMap<String, f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub relative_error: f64,
}

impl EquivalenceReport {
    pub(crate) fn new(
        mapping: Mapping,
        lat: &LatticeTorus,
        params: &[(&str, f64)],
        lhs: f64,
        rhs: f64,
    ) -> Self {
        EquivalenceReport {
            mapping,
            lattice: format!("{} {}x{}", lat.kind().name(), lat.lx(), lat.ly()),
            params: params.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            lhs,
            rhs,
            relative_error: relative_error(lhs, rhs),
        }
    }
}

pub fn relative_error(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(1e-300)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    /// Non-zero eigenvalues, largest first.
    pub eigenvalues: Vec<(String, f64)>,
    pub entropy: f64,
    /// Largest element-wise gap between two independent computations, when one was made.
    pub cross_check: Option<f64>,
}

impl SpectrumResult {
    pub(crate) fn from_labelled(
        mut eigenvalues: Vec<(String, f64)>,
        cross_check: Option<f64>,
    ) -> Self {
        eigenvalues.retain(|e| e.1 != 0.0);
        eigenvalues.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let entropy = eigenvalues
            .iter()
            .filter(|e| e.1 > 0.0)
            .map(|e| -e.1 * e.1.ln())
            .sum::<NeumaierSum>()
            .value();
        SpectrumResult {
            eigenvalues,
            entropy,
            cross_check,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| e.1).collect()
    }

    pub fn total(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|e| e.1)
            .sum::<NeumaierSum>()
            .value()
    }
}

/// Σ of the model weight over the requested configuration stream.
pub fn partition_function(
    lat: &LatticeTorus,
    model: &WeightModel,
    opts: EnumerationOptions,
) -> Result<f64> {
    model.validate()?;
    let mut sum = NeumaierSum::default();
    let mut err = None;
    lat.visit_loop_configs(opts, |l| match model.evaluate(lat, l) {
        Ok(w) => sum.add(w.value()),
        Err(e) => {
            err.get_or_insert(e);
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(sum.value()),
    }
}

/// All closed configurations, each once, in every homology class.
pub fn all_sectors() -> EnumerationOptions {
    EnumerationOptions::distinct().with_windings()
}

/// Shortest edge path between two vertices.
pub fn shortest_path(lat: &LatticeTorus, from: usize, to: usize) -> LoopConfig {
    let mut prev = vec![usize::MAX; lat.n_vertices()];
    let mut seen = vec![false; lat.n_vertices()];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &e in lat.vertex_edges(u) {
            let [a, b] = lat.edge(e);
            let v = if a == u { b } else { a };
            if !seen[v] {
                seen[v] = true;
                prev[v] = e;
                queue.push_back(v);
            }
        }
    }
    let mut path = lat.empty_config();
    let mut v = to;
    while v != from {
        let e = prev[v];
        path.edges.insert(e);
        let [a, b] = lat.edge(e);
        v = if a == v { b } else { a };
    }
    path
}

/// `⟨string x→x′⟩ = Σ_{∂L = {x,x′}} t^|L| N^{b₁(L)} / Σ_{∂L = ∅} t^|L| N^{b₁(L)}`,
/// both sums over every homology class.
pub fn string_correlator(lat: &LatticeTorus, t: f64, n: f64, x: usize, x2: usize) -> Result<f64> {
    if x == x2 || x >= lat.n_vertices() || x2 >= lat.n_vertices() {
        return Err(Error::Parameter(format!(
            "string endpoints must be distinct vertices, got {x} and {x2}"
        )));
    }
    if !(0.0..=1.0).contains(&t) || n <= 0.0 {
        return Err(Error::Parameter(format!(
            "need t in [0, 1] and N > 0, got t={t}, N={n}"
        )));
    }
    let path = shortest_path(lat, x, x2);
    let weight = |l: &LoopConfig| {
        let k = l.len();
        let tk = if k == 0 { 1.0 } else { t.powi(k as i32) };
        tk * n.powi(lat.cycle_rank(l) as i32)
    };
    let mut open = NeumaierSum::default();
    let mut closed = NeumaierSum::default();
    lat.visit_loop_configs(all_sectors(), |l| {
        closed.add(weight(l));
        open.add(weight(&l.xor(&path)));
    })?;
    Ok(open.value() / closed.value())
}
