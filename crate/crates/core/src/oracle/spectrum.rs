//! Spectra of decohered Z2 toric-code states.

use std::collections::BTreeMap;

use fixedbitset::FixedBitSet;
use nalgebra::DMatrix;

use super::{symmetric_eigenvalues, NeumaierSum, SpectrumResult};
use crate::error::{Error, Result};
use crate::lattice::{EnumerationOptions, LatticeTorus};

/// Dense diagonalization limit for the state-vector route.
pub const DENSE_QUBIT_CAP: usize = 10;
pub const ETA_SITE_CAP: usize = 20;

fn mask_of(bits: &FixedBitSet) -> u64 {
    bits.ones().fold(0u64, |m, k| m | 1 << k)
}

fn bits_label(bits: impl Iterator<Item = usize>) -> String {
    let v: Vec<String> = bits.map(|b| b.to_string()).collect();
    format!("{{{}}}", v.join(","))
}

/// Spectrum of `Σ_E p^|E|(1-p)^{𝒩-|E|} X_E|ψ⟩⟨ψ|X_E` for the toric code with qubits
/// on edges, `A_v = ∏Z` and `B_p = ∏X`, `|ψ⟩ ∝ ∏_p (1 + B_p)|0…0⟩`.
///
/// Computed twice: by dense diagonalization of ρ, and by summing error chains
/// per class (syndrome ∂E, E modulo plaquette boundaries). `cross_check` holds
/// the largest element-wise gap.
pub fn toric_code_spectrum(lat: &LatticeTorus, p: f64) -> Result<SpectrumResult> {
    let n = lat.n_edges();
    if n > DENSE_QUBIT_CAP {
        return Err(Error::CapExceeded {
            size: n,
            cap: DENSE_QUBIT_CAP,
        });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("p must lie in [0, 1], got {p}")));
    }
    let dim = 1usize << n;
    let weight = |k: u32| -> f64 {
        let k = k as i32;
        let a = if k == 0 { 1.0 } else { p.powi(k) };
        let b = if n as i32 - k == 0 {
            1.0
        } else {
            (1.0 - p).powi(n as i32 - k)
        };
        a * b
    };

    // state-vector route
    let mut psi = vec![0.0; dim];
    psi[0] = 1.0;
    for q in 0..lat.n_plaquettes() {
        let m = mask_of(&lat.plaquette_boundary(q).edges) as usize;
        let old = psi.clone();
        for x in 0..dim {
            psi[x] = 0.5 * (old[x] + old[x ^ m]);
        }
    }
    let norm = psi.iter().map(|x| x * x).sum::<f64>().sqrt();
    psi.iter_mut().for_each(|x| *x /= norm);
    let support: Vec<usize> = (0..dim).filter(|&x| psi[x] != 0.0).collect();
    let mut rho = DMatrix::<f64>::zeros(dim, dim);
    for e in 0..dim {
        let w = weight(e.count_ones());
        if w == 0.0 {
            continue;
        }
        for &x in &support {
            for &y in &support {
                rho[(x ^ e, y ^ e)] += w * psi[x] * psi[y];
            }
        }
    }
    let mut dense = symmetric_eigenvalues(rho);
    dense.sort_by(|a, b| b.partial_cmp(a).unwrap());

    // chain route
    let basis = lat.boundary_basis();
    let mut classes: BTreeMap<(Vec<usize>, Vec<usize>), NeumaierSum> = BTreeMap::new();
    for e in 0u64..dim as u64 {
        let mut bits = FixedBitSet::with_capacity(n);
        (0..n)
            .filter(|k| e >> k & 1 == 1)
            .for_each(|k| bits.insert(k));
        let chain = crate::lattice::LoopConfig { edges: bits };
        let syndrome: Vec<usize> = lat.vertex_boundary(&chain).ones().collect();
        let mut rep = chain.edges;
        basis.reduce(&mut rep);
        classes
            .entry((syndrome, rep.ones().collect()))
            .or_default()
            .add(weight(e.count_ones()));
    }
    let labelled: Vec<(String, f64)> = classes
        .into_iter()
        .map(|((a, r), s)| {
            (
                format!(
                    "a={};E~{}",
                    bits_label(a.into_iter()),
                    bits_label(r.into_iter())
                ),
                s.value(),
            )
        })
        .collect();
    let mut chain_vals: Vec<f64> = labelled.iter().map(|e| e.1).collect();
    chain_vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut gap = 0.0f64;
    for (k, d) in dense.iter().enumerate() {
        let c = chain_vals.get(k).copied().unwrap_or(0.0);
        gap = gap.max((d - c).abs());
    }
    Ok(SpectrumResult::from_labelled(labelled, Some(gap)))
}

/// `Z_η = 2^{-𝒩} Σ_L ∏_{n∈L} η_n · w(L)` for every η, by a Walsh-Hadamard transform
/// of the configuration weights. `configs` pairs an edge mask with its weight.
pub fn eta_spectrum_from_masks(n_sites: usize, configs: &[(u64, f64)]) -> Result<SpectrumResult> {
    if n_sites > ETA_SITE_CAP {
        return Err(Error::CapExceeded {
            size: n_sites,
            cap: ETA_SITE_CAP,
        });
    }
    let dim = 1usize << n_sites;
    let mut f = vec![0.0; dim];
    for &(m, w) in configs {
        f[m as usize] += w;
    }
    let mut h = 1;
    while h < dim {
        for i in (0..dim).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (f[j], f[j + h]);
                f[j] = a + b;
                f[j + h] = a - b;
            }
        }
        h *= 2;
    }
    let scale = 1.0 / dim as f64;
    let labelled = f
        .into_iter()
        .enumerate()
        .map(|(eta, v)| {
            let label: String = (0..n_sites)
                .map(|k| if eta >> k & 1 == 1 { '-' } else { '+' })
                .collect();
            (label, v * scale)
        })
        .collect();
    Ok(SpectrumResult::from_labelled(labelled, None))
}

/// η-projector spectrum at maximal decoherence with loop weight `t_a^|L| d_a^{b₁(L)}`,
/// every edge a decohered site. The all-plus η gives the clean loop model.
pub fn eta_spectrum_maximal(
    lat: &LatticeTorus,
    t_a: f64,
    d_a: f64,
    opts: EnumerationOptions,
) -> Result<SpectrumResult> {
    let n = lat.n_edges();
    if n > ETA_SITE_CAP {
        return Err(Error::CapExceeded {
            size: n,
            cap: ETA_SITE_CAP,
        });
    }
    let mut configs = Vec::new();
    lat.visit_loop_configs(opts, |l| {
        let k = l.len();
        let w = if k == 0 { 1.0 } else { t_a.powi(k as i32) } * d_a.powi(lat.cycle_rank(l) as i32);
        configs.push((mask_of(&l.edges), w));
    })?;
    eta_spectrum_from_masks(n, &configs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeKind;

    #[test]
    fn clean_state_has_unit_spectrum() {
        let sq = LatticeTorus::build(LatticeKind::Square, 2, 2).unwrap();
        let s = toric_code_spectrum(&sq, 0.0).unwrap();
        assert_eq!(s.values(), vec![1.0]);
        assert_eq!(s.entropy, 0.0);
        assert!(s.cross_check.unwrap() < 1e-12);
    }

    #[test]
    fn eta_weights_sum_to_one() {
        let hc = LatticeTorus::build(LatticeKind::Honeycomb, 2, 2).unwrap();
        let s = eta_spectrum_maximal(&hc, 0.6, 1.0, EnumerationOptions::distinct()).unwrap();
        assert!((s.total() - 1.0).abs() < 1e-12);
    }
}
