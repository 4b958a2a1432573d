//! Ising duality, the random-bond Ising mapping and the two cubic rewritings,
//! each checked by enumerating both sides.

use fixedbitset::FixedBitSet;

use super::{all_sectors, log_sum_exp, EquivalenceReport, Mapping, NeumaierSum};
use crate::error::{Error, Result};
use crate::lattice::{EnumerationOptions, LatticeKind, LatticeTorus, LoopConfig};

const SPIN_CAP: u32 = 26;

fn pow0(x: f64, k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        x.powi(k as i32)
    }
}

fn loop_sum(lat: &LatticeTorus, t: f64, n: f64, opts: EnumerationOptions) -> Result<f64> {
    let mut s = NeumaierSum::default();
    lat.visit_loop_configs(opts, |l| {
        s.add(pow0(t, l.len()) * pow0(n, lat.cycle_rank(l)))
    })?;
    Ok(s.value())
}

fn check_states(states: f64, sites: usize) -> Result<u64> {
    let bits = states.log2() * sites as f64;
    if bits > SPIN_CAP as f64 + 1e-9 {
        return Err(Error::CapExceeded {
            size: bits.ceil() as usize,
            cap: SPIN_CAP as usize,
        });
    }
    Ok(states.powi(sites as i32).round() as u64)
}

/// Loop side `Σ_L tanh(β)^|L|` over contractible honeycomb configurations against
/// the triangular Ising model at the dual coupling `e^{-2β̃} = tanh β`.
///
/// The τ sum is divided by `2 e^{β̃ E}`, the weight of the two configurations
/// without domain walls. Every τ is also checked individually: its walls, read on
/// the honeycomb, must form a contractible configuration weighing `tanh(β)^|walls|`.
pub fn ising_dual_check(hc: &LatticeTorus, beta: f64) -> Result<EquivalenceReport> {
    if hc.kind() != LatticeKind::Honeycomb || hc.dual_edge(0).is_none() {
        return Err(Error::Parameter(
            "Ising duality needs an untwisted honeycomb".into(),
        ));
    }
    if !(beta >= 0.0) {
        return Err(Error::Parameter(format!(
            "β must be non-negative, got {beta}"
        )));
    }
    let tri = LatticeTorus::build(LatticeKind::Triangular, hc.lx(), hc.ly())?;
    let nv = tri.n_vertices();
    check_states(2.0, nv)?;
    let th = beta.tanh();
    let beta_dual = -0.5 * th.ln();
    let mut to_hc = vec![usize::MAX; tri.n_edges()];
    for e in 0..hc.n_edges() {
        to_hc[hc.dual_edge(e).unwrap()] = e;
    }
    let basis = hc.boundary_basis();
    let lhs = loop_sum(hc, th, 1.0, EnumerationOptions::distinct())?;

    let n_bonds = tri.n_edges() as i64;
    let mut rhs = NeumaierSum::default();
    let mut walls = FixedBitSet::with_capacity(hc.n_edges());
    for tau in 0u64..1 << nv {
        walls.clear();
        let mut energy = 0i64;
        for (e, &[a, b]) in tri.edges().iter().enumerate() {
            if (tau >> a ^ tau >> b) & 1 == 1 {
                energy -= 1;
                walls.insert(to_hc[e]);
            } else {
                energy += 1;
            }
        }
        let w = if beta_dual.is_infinite() {
            if energy == n_bonds {
                1.0
            } else {
                0.0
            }
        } else {
            (beta_dual * (energy - n_bonds) as f64).exp()
        };
        let k = walls.count_ones(..);
        let expected = pow0(th, k);
        let wl = LoopConfig {
            edges: walls.clone(),
        };
        if !hc.is_closed(&wl)
            || !basis.contains(&wl.edges)
            || (w - expected).abs() > 1e-12 * expected.max(1e-300)
        {
            return Err(Error::Other(format!(
                "domain walls of τ={tau:#b} break the duality map"
            )));
        }
        rhs.add(w);
    }
    let rhs = rhs.value() / 2.0;
    Ok(EquivalenceReport::new(
        Mapping::IsingDual,
        hc,
        &[("beta", beta), ("beta_dual", beta_dual)],
        lhs,
        rhs,
    ))
}

/// `Z_a = Σ_{∂E = a} p^|E| (1-p)^{𝒩-|E|}` against
/// `Σ_h (1-p)^𝒩 t^{𝒩/2} · ½ Σ_σ exp(β Σ η^h_{ij} σ_i σ_j)`, with `t = p/(1-p) = e^{-2β}`,
/// σ on plaquettes and η^h from `E_ref` shifted into homology class h.
/// The comparison is made per class and for the total.
pub fn rbim_check(
    lat: &LatticeTorus,
    anyons: &[usize],
    e_ref: &LoopConfig,
    p: f64,
) -> Result<EquivalenceReport> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("p must lie in [0, 1), got {p}")));
    }
    let mut a = FixedBitSet::with_capacity(lat.n_vertices());
    anyons.iter().for_each(|&v| a.insert(v));
    if lat.vertex_boundary(e_ref) != a {
        return Err(Error::Parameter(
            "the boundary of E_ref differs from the anyon configuration".into(),
        ));
    }
    let nf = lat.n_plaquettes();
    check_states(2.0, nf)?;
    let ne = lat.n_edges();
    let class = |w: [bool; 2]| w[0] as usize + 2 * w[1] as usize;

    let mut lhs = [NeumaierSum::default(); 4];
    lat.visit_loop_configs(all_sectors(), |z| {
        let k = e_ref.xor(z).len();
        lhs[class(lat.winding(z))].add(pow0(p, k) * pow0(1.0 - p, ne - k));
    })?;

    let [r1, r2] = lat.reference_cycles();
    let t = p / (1.0 - p);
    let beta = -0.5 * t.ln();
    let mut rhs = [0.0; 4];
    for (h, slot) in rhs.iter_mut().enumerate() {
        let mut e = e_ref.clone();
        if h & 1 == 1 {
            e = e.xor(&r1);
        }
        if h & 2 == 2 {
            e = e.xor(&r2);
        }
        let eta: Vec<i64> = (0..ne)
            .map(|k| if e.edges.contains(k) { -1 } else { 1 })
            .collect();
        let mut sums = Vec::with_capacity(1 << nf);
        let mut ground = 0u64;
        for sigma in 0u64..1 << nf {
            let s: i64 = (0..ne)
                .map(|k| {
                    let [pa, pb] = lat.edge_plaquettes(k);
                    let agree = (sigma >> pa ^ sigma >> pb) & 1 == 0;
                    if agree {
                        eta[k]
                    } else {
                        -eta[k]
                    }
                })
                .sum();
            if s == ne as i64 {
                ground += 1;
            }
            sums.push(beta * s as f64);
        }
        *slot = if p == 0.0 {
            ground as f64 / 2.0
        } else {
            let ln = ne as f64 * (1.0 - p).ln() + 0.5 * ne as f64 * t.ln() + log_sum_exp(&sums)
                - std::f64::consts::LN_2;
            ln.exp()
        };
    }
    let lhs_h: Vec<f64> = lhs.iter().map(|s| s.value()).collect();
    let total_l = lhs_h.iter().copied().sum::<NeumaierSum>().value();
    let total_r = rhs.iter().copied().sum::<NeumaierSum>().value();
    let mut report = EquivalenceReport::new(
        Mapping::Rbim,
        lat,
        &[("p", p), ("beta", beta)],
        total_l,
        total_r,
    );
    for h in 0..4 {
        let err = super::relative_error(lhs_h[h], rhs[h]);
        report.relative_error = report
            .relative_error
            .max(if lhs_h[h] == 0.0 && rhs[h] == 0.0 {
                0.0
            } else {
                err
            });
        report.params.insert(format!("lhs_class_{h}"), lhs_h[h]);
    }
    Ok(report)
}

/// Face-cubic spins (`±e_k`, 2N states) with bond factor `1 + tN S_i·S_j` against
/// `(2N)^V Σ_L t^|L| N^{b₁(L)}` over every closed configuration.
pub fn face_cubic_check(lat: &LatticeTorus, t: f64, n: usize) -> Result<EquivalenceReport> {
    if !(1..=4).contains(&n) {
        return Err(Error::Parameter(format!("N must be in 1..=4, got {n}")));
    }
    if t < 0.0 || t * n as f64 > 1.0 + 1e-15 {
        return Err(Error::NegativeWeight(1.0 - t * n as f64));
    }
    let v = lat.n_vertices();
    let states = 2 * n;
    let total = check_states(states as f64, v)?;
    let c = t * n as f64;
    let mut spins = vec![0usize; v];
    let mut lhs = NeumaierSum::default();
    for _ in 0..total {
        let mut w = 1.0;
        for &[a, b] in lat.edges() {
            let (sa, sb) = (spins[a], spins[b]);
            if sa / 2 == sb / 2 {
                w *= if sa == sb { 1.0 + c } else { 1.0 - c };
            }
        }
        lhs.add(w);
        for s in spins.iter_mut() {
            *s += 1;
            if *s < states {
                break;
            }
            *s = 0;
        }
    }
    let rhs = (states as f64).powi(v as i32) * loop_sum(lat, t, n as f64, all_sectors())?;
    Ok(EquivalenceReport::new(
        Mapping::FaceCubic,
        lat,
        &[("t", t), ("n", n as f64)],
        lhs.value(),
        rhs,
    ))
}

/// Face-cubic spins on sublattice A, corner-cubic spins (`{±1}^N`) on B, bond
/// factor `1 + t√N S_a·S_b`, against `(2N)^{V_A} 2^{N V_B} Σ_L t^|L| N^{#loops}`.
///
/// The A spins are enumerated; each B spin is summed exactly given its neighbours.
pub fn mixed_cubic_check(hc: &LatticeTorus, t: f64, n: usize) -> Result<EquivalenceReport> {
    if hc.kind() != LatticeKind::Honeycomb {
        return Err(Error::Parameter(
            "the mixed cubic model lives on the honeycomb".into(),
        ));
    }
    if n == 0 || n > 8 {
        return Err(Error::Parameter(format!("N must be in 1..=8, got {n}")));
    }
    let c = t * (n as f64).sqrt();
    if t < 0.0 || c > 1.0 + 1e-15 {
        return Err(Error::NegativeWeight(1.0 - c));
    }
    let cells = hc.cells().count();
    let states = 2 * n;
    let total = check_states(states as f64, cells)?;
    // neighbours of B(c) = 2c + 1 as A-cell indices, with multiplicity
    let b_nbrs: Vec<Vec<usize>> = (0..cells)
        .map(|b| {
            hc.vertex_edges(2 * b + 1)
                .iter()
                .map(|&e| hc.edge(e)[0] / 2)
                .collect()
        })
        .collect();
    let mut a = vec![0usize; cells];
    let mut lhs = NeumaierSum::default();
    for _ in 0..total {
        let mut w = 1.0;
        for nb in &b_nbrs {
            let mut sb = 0.0;
            for corner in 0u32..1 << n {
                let mut f = 1.0;
                for &ac in nb {
                    let (axis, sign) = (a[ac] / 2, if a[ac] % 2 == 0 { 1.0 } else { -1.0 });
                    let comp = if corner >> axis & 1 == 0 { 1.0 } else { -1.0 };
                    f *= 1.0 + c * sign * comp;
                }
                sb += f;
            }
            w *= sb;
        }
        lhs.add(w);
        for s in a.iter_mut() {
            *s += 1;
            if *s < states {
                break;
            }
            *s = 0;
        }
    }
    let prefactor = (states as f64).powi(cells as i32) * 2f64.powi((n * cells) as i32);
    let rhs = prefactor * loop_sum(hc, t, n as f64, all_sectors())?;
    Ok(EquivalenceReport::new(
        Mapping::MixedCubic,
        hc,
        &[("t", t), ("n", n as f64)],
        lhs.value(),
        rhs,
    ))
}
