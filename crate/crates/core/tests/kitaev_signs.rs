//! Independent checks of the membrane sign and of the Wick convention behind
//! `Pf(G|interior)`.

use decoherence_loops::gf2::Gf2Basis;
use decoherence_loops::kitaev::*;
use fixedbitset::FixedBitSet;
use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type C = Complex<f64>;

/// Majorana monomial: coefficient and sorted index list.
#[derive(Clone, Debug)]
struct Mono {
    coef: C,
    idx: Vec<usize>,
}

impl Mono {
    fn one() -> Self {
        Mono {
            coef: C::new(1.0, 0.0),
            idx: vec![],
        }
    }

    fn of(coef: C, idx: &[usize]) -> Self {
        let mut m = Mono { coef, idx: vec![] };
        for &i in idx {
            m = m.mul(&Mono {
                coef: C::new(1.0, 0.0),
                idx: vec![i],
            });
        }
        m
    }

    fn mul(&self, o: &Mono) -> Mono {
        // sort the concatenation by adjacent swaps, cancelling squares
        let mut out = self.idx.clone();
        let mut coef = self.coef * o.coef;
        for &x in &o.idx {
            let pos = out.partition_point(|&y| y < x);
            if (out.len() - pos) % 2 == 1 {
                coef = -coef;
            }
            if pos < out.len() && out[pos] == x {
                // x passes everything above it, then squares to one; net parity already counted
                // except for the matching element itself
                coef = -coef;
                out.remove(pos);
            } else {
                out.insert(pos, x);
            }
        }
        Mono { coef, idx: out }
    }
}

const I: C = C { re: 0.0, im: 1.0 };

fn sigma(v: usize, a: usize) -> Mono {
    Mono::of(I, &[4 * v + a, 4 * v + 3])
}

#[test]
fn monomial_algebra() {
    // c0 c1 c0 = -c1, (i c0 c1)^2 = 1
    let m = Mono::of(C::new(1.0, 0.0), &[0, 1, 0]);
    assert_eq!(m.idx, vec![1]);
    assert_eq!(m.coef, C::new(-1.0, 0.0));
    let p = Mono::of(I, &[0, 1]);
    let q = p.mul(&p);
    assert!(q.idx.is_empty() && (q.coef - 1.0).norm() < 1e-15);
    // σ^x σ^y = i σ^z acting on the physical subspace D = bx by bz c = 1
    let xy = sigma(0, 0).mul(&sigma(0, 1));
    let z_d = sigma(0, 2).mul(&Mono::of(C::new(1.0, 0.0), &[0, 1, 2, 3]));
    assert_eq!(xy.idx, z_d.idx);
    assert!((xy.coef - I * z_d.coef).norm() < 1e-15);
}

/// ⟨ψ| ∏_{r∈S} 𝒯_r W_r |ψ⟩ from the spin operator.
fn expectation_from_spins(
    geo: &MembraneGeometry,
    cov: &CovarianceMatrix,
    interior: &[usize],
) -> f64 {
    let base = geo.base();
    let mut op = Mono::one();
    for &r in interior {
        for &(b, a, e) in &geo.links[r] {
            let t = link_type(e);
            op = op.mul(&sigma(b, t)).mul(&sigma(a, t));
        }
        let rim = &geo.rim[r];
        let mut verts: Vec<usize> = rim.iter().flat_map(|&e| base.edge(e)).collect();
        verts.sort_unstable();
        verts.dedup();
        for v in verts {
            let out = base
                .vertex_edges(v)
                .iter()
                .find(|e| !rim.contains(e))
                .copied()
                .unwrap();
            op = op.mul(&sigma(v, link_type(out)));
        }
    }
    reduced_expectation(geo, cov, op, true)
}

/// `⟨D_1 D_2 … D_n⟩` in the gauge-fixed state; +1 iff the state survives projection.
fn gauge_parity(geo: &MembraneGeometry, cov: &CovarianceMatrix) -> f64 {
    let nv = geo.base().n_vertices();
    let op = (0..nv).fold(Mono::one(), |m, v| {
        m.mul(&Mono::of(
            C::new(1.0, 0.0),
            &[4 * v, 4 * v + 1, 4 * v + 2, 4 * v + 3],
        ))
    });
    reduced_expectation(geo, cov, op, false)
}

/// Expectation of a Majorana monomial, eliminating gauge Majoranas through link
/// operators `u = i b_A b_B` and, if allowed, `D_v = 1`.
fn reduced_expectation(
    geo: &MembraneGeometry,
    cov: &CovarianceMatrix,
    op: Mono,
    use_d: bool,
) -> f64 {
    let base = geo.base();
    let nv = base.n_vertices();
    // gauge generators: u per link, D per site; tags follow the b bits
    let nb = 4 * nv;
    let ne = base.n_edges();
    let ngen = ne + nv;
    let mut basis = Gf2Basis::new();
    let gen_bits = |g: usize| -> Vec<usize> {
        if g < ne {
            let t = link_type(g);
            let [p, q] = base.edge(g);
            vec![4 * p + t, 4 * q + t]
        } else {
            let v = g - ne;
            vec![4 * v, 4 * v + 1, 4 * v + 2]
        }
    };
    for g in 0..if use_d { ngen } else { ne } {
        let mut row = FixedBitSet::with_capacity(nb + ngen);
        for b in gen_bits(g) {
            row.toggle(b);
        }
        row.insert(nb + g);
        basis.insert(&row);
    }
    let mut target = FixedBitSet::with_capacity(nb + ngen);
    for &i in &op.idx {
        if i % 4 != 3 {
            target.insert(i);
        }
    }
    basis.reduce(&mut target);
    assert!(
        target.ones().all(|b| b >= nb),
        "gauge Majoranas could not be eliminated"
    );
    // D_v = 1 on physical states, so multiply those in first; the remaining
    // gauge Majoranas pair into link operators with definite values
    let gens: Vec<usize> = target.ones().map(|b| b - nb).collect();
    let mut prod = op;
    for &g in gens.iter().filter(|&&g| g >= ne) {
        let v = g - ne;
        prod = prod.mul(&Mono::of(
            C::new(1.0, 0.0),
            &[4 * v, 4 * v + 1, 4 * v + 2, 4 * v + 3],
        ));
    }
    let mut gauge_values = 1.0;
    for &g in gens.iter().filter(|&&g| g < ne) {
        let t = link_type(g);
        let [p, q] = base.edge(g);
        prod = prod.mul(&Mono::of(I, &[4 * p + t, 4 * q + t]));
        let w = base.edge_wrap(g);
        let odd = (cov.sector.nn[0] && w[0] % 2 != 0) ^ (cov.sector.nn[1] && w[1] % 2 != 0);
        gauge_values *= if odd { -1.0 } else { 1.0 };
    }
    assert!(prod.idx.iter().all(|i| i % 4 == 3));
    let cs: Vec<usize> = prod.idx.iter().map(|i| i / 4).collect();
    let k = cs.len();
    assert_eq!(k % 2, 0);
    let sub = DMatrix::from_fn(k, k, |r, c| cov.g[(cs[r], cs[c])]);
    // ⟨c_1 … c_2k⟩ = (-i)^k Pf(G_sub) for G_jk = i⟨c_j c_k⟩
    let wick = (0..k / 2).fold(C::new(1.0, 0.0), |acc, _| acc * -I) * pfaffian(&sub).unwrap();
    let val = prod.coef * gauge_values * wick;
    assert!(val.im.abs() < 1e-10, "expectation not real: {val}");
    val.re
}

#[test]
fn membrane_sign_matches_spin_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (lx, ly) in [(6, 4), (12, 4)] {
        let geo = MembraneGeometry::new(lx, ly).unwrap();
        for sector in Sector::uniform_all() {
            let Ok(cov) = ground_covariance(&build_hamiltonian(lx, ly, 1.0, 0.2, sector).unwrap())
            else {
                continue;
            };
            let parity = gauge_parity(&geo, &cov);
            assert!((parity.abs() - 1.0).abs() < 1e-8);
            if parity < 0.0 {
                continue;
            }
            for _ in 0..12 {
                let interior: Vec<usize> = (0..geo.n_plaquettes())
                    .filter(|_| rng.random_bool(0.4))
                    .collect();
                let recipe = membrane_weight(&cov, &geo, &interior).value;
                let direct = expectation_from_spins(&geo, &cov, &interior);
                assert!(
                    (recipe - direct).abs() < 1e-10,
                    "{lx}x{ly} {sector:?} {interior:?}: {recipe} vs {direct}"
                );
            }
        }
    }
}

#[test]
fn default_sector_survives_projection() {
    for (lx, ly) in [(24, 6), (24, 12)] {
        let geo = MembraneGeometry::new(lx, ly).unwrap();
        let cov = ground_covariance(&build_hamiltonian(lx, ly, 1.0, 0.2, Sector::GROUND).unwrap())
            .unwrap();
        assert!((gauge_parity(&geo, &cov) - 1.0).abs() < 1e-8);
    }
}

/// Dense Jordan-Wigner Majoranas on `n` qubits.
fn jw_majoranas(n: usize) -> Vec<DMatrix<C>> {
    let x = DMatrix::from_row_slice(
        2,
        2,
        &[
            C::new(0.0, 0.0),
            C::new(1.0, 0.0),
            C::new(1.0, 0.0),
            C::new(0.0, 0.0),
        ],
    );
    let y = DMatrix::from_row_slice(2, 2, &[C::new(0.0, 0.0), -I, I, C::new(0.0, 0.0)]);
    let z = DMatrix::from_row_slice(
        2,
        2,
        &[
            C::new(1.0, 0.0),
            C::new(0.0, 0.0),
            C::new(0.0, 0.0),
            C::new(-1.0, 0.0),
        ],
    );
    let id = DMatrix::<C>::identity(2, 2);
    let kron_all = |ops: Vec<&DMatrix<C>>| {
        ops.into_iter()
            .fold(DMatrix::<C>::identity(1, 1), |acc, o| acc.kronecker(o))
    };
    let mut out = Vec::new();
    for q in 0..n {
        for p in [&x, &y] {
            let ops: Vec<&DMatrix<C>> = (0..n)
                .map(|s| {
                    if s < q {
                        &z
                    } else if s == q {
                        p
                    } else {
                        &id
                    }
                })
                .collect();
            out.push(kron_all(ops));
        }
    }
    out
}

#[test]
fn wick_convention_matches_dense_ground_state() {
    let n = 4;
    let cs = jw_majoranas(n);
    let m = 2 * n;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in i + 1..m {
            let v = rng.random_range(-1.0..1.0);
            a[(i, j)] = v;
            a[(j, i)] = -v;
        }
    }
    let dim = 1 << n;
    let mut h = DMatrix::<C>::zeros(dim, dim);
    for i in 0..m {
        for j in 0..m {
            h += &cs[i] * &cs[j] * (I * a[(i, j)] * 0.25);
        }
    }
    let eig = h.symmetric_eigen();
    let g0 = (0..dim)
        .min_by(|&p, &q| eig.eigenvalues[p].partial_cmp(&eig.eigenvalues[q]).unwrap())
        .unwrap();
    let psi = eig.eigenvectors.column(g0).into_owned();
    let h_maj = MajoranaHamiltonian {
        lx: 0,
        ly: 0,
        j: 0.0,
        kappa: 0.0,
        sector: Sector::GROUND,
        a,
    };
    let cov = ground_covariance(&h_maj).unwrap();
    assert!((cov.energy - eig.eigenvalues[g0]).abs() < 1e-10);
    for mask in 0u32..(1 << m) {
        if mask.count_ones() % 2 == 1 {
            continue;
        }
        let sel: Vec<usize> = (0..m).filter(|&i| mask >> i & 1 == 1).collect();
        let op = sel
            .iter()
            .fold(DMatrix::<C>::identity(dim, dim), |acc, &i| acc * &cs[i]);
        let ev = (psi.adjoint() * op * &psi)[(0, 0)];
        let k = sel.len();
        let sub = DMatrix::from_fn(k, k, |r, c| cov.g[(sel[r], sel[c])]);
        let wick = (0..k / 2).fold(C::new(1.0, 0.0), |acc, _| acc * -I) * pfaffian(&sub).unwrap();
        assert!((ev - wick).norm() < 1e-10, "{sel:?}: {ev} vs {wick}");
    }
}
