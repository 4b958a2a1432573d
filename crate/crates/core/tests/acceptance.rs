//! Acceptance criteria 1-8. Each test prints one `criterion N: PASS|FAIL` line.
//! Criterion 5 is slow and ignored by default:
//! `cargo test --test acceptance -- --ignored criterion_5`.

use std::sync::Arc;
use std::time::Instant;

use decoherence_loops::kitaev::*;
use decoherence_loops::lattice::{LatticeKind, LatticeTorus, PlaquetteSpins};
use decoherence_loops::mc::*;
use decoherence_loops::oracle::*;
use decoherence_loops::qdouble::*;
use decoherence_loops::weights::{p_from_t_ext, WeightModel};
use nalgebra::DMatrix;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
}

fn lat(kind: LatticeKind, lx: usize, ly: usize) -> LatticeTorus {
    LatticeTorus::build(kind, lx, ly).unwrap()
}

fn grid(from: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| from + step * k as f64).collect()
}

fn square_sizes(kind: LatticeKind, ls: &[usize]) -> Vec<LatticeSpec> {
    ls.iter().map(|&l| LatticeSpec::new(kind, l, l)).collect()
}

fn loop_scan(kind: LatticeKind, n: f64, t_grid: &[f64], seed: u64) -> BinderScan {
    let sizes = square_sizes(kind, &[8, 12, 16, 24]);
    binder_scan(t_grid, &sizes, seed, |t, lattice, s| {
        Ok(McConfig::new(lattice, WeightModel::Topological { n, t })
            .with_sweeps(5000, 40000)
            .with_seed(s))
    })
    .unwrap()
}

fn crossings_text(s: &BinderScan) -> String {
    s.crossings
        .iter()
        .map(|c| format!("{}/{}: {:.4}", c.small.lx, c.large.lx, c.t))
        .collect::<Vec<_>>()
        .join(", ")
}

#[test]
fn criterion_1_equivalence_suite() {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut record = |r: EquivalenceReport| {
        worst = worst.max(r.relative_error);
        count += 1;
    };
    for l in [2, 3] {
        let hc = lat(LatticeKind::Honeycomb, l, l);
        let sq = lat(LatticeKind::Square, l, l);
        record(ising_dual_check(&hc, 0.4).unwrap());
        record(rbim_check(&sq, &[], &sq.empty_config(), 0.15).unwrap());
        let e = sq.config(&[0, 1]);
        let a: Vec<usize> = sq.vertex_boundary(&e).ones().collect();
        record(rbim_check(&sq, &a, &e, 0.3).unwrap());
        for n in 1..=3 {
            record(face_cubic_check(&sq, 0.9 / n as f64, n).unwrap());
        }
        for n in [1, 2] {
            record(mixed_cubic_check(&hc, 0.6, n).unwrap());
        }
    }
    let ok = worst < 1e-10;
    verdict("1", ok, &format!("{count} reports, max relative error {worst:.2e}"));
    assert!(ok);
}

#[test]
fn criterion_2_critical_tensions() {
    let start = Instant::now();
    let tc = |n: f64| 1.0 / (2.0 + (2.0 - n).sqrt()).sqrt();
    let o1 = loop_scan(LatticeKind::Honeycomb, 1.0, &grid(0.53, 0.01, 11), 11);
    let o2 = loop_scan(LatticeKind::Honeycomb, 2.0, &grid(0.60, 0.02, 11), 1);
    let e1 = o1.estimate.unwrap_or(f64::NAN);
    let e2 = o2.estimate.unwrap_or(f64::NAN);
    let ok1 = (e1 - 0.577).abs() <= 0.02;
    let ok2 = (e2 - 0.707).abs() <= 0.03;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "2",
        ok1 && ok2,
        &format!(
            "O(1) honeycomb {e1:.4} vs {:.4} [{}] {}; O(2) honeycomb {e2:.4} vs {:.4} [{}] {}; {secs:.0}s",
            tc(1.0),
            crossings_text(&o1),
            if ok1 { "ok" } else { "outside ±0.02" },
            tc(2.0),
            crossings_text(&o2),
            if ok2 { "ok" } else { "outside ±0.03" },
        ),
    );
    assert!(ok1, "O(1) crossing {e1}");
    assert!(ok2, "O(2) crossing {e2}");
}

#[test]
fn criterion_3_toric_purity_transition() {
    let start = Instant::now();
    let s = loop_scan(LatticeKind::Square, 1.0, &grid(0.37, 0.01, 11), 11);
    let t = s.estimate.unwrap_or(f64::NAN);
    let p = p_from_t_ext(t).unwrap_or(f64::NAN);
    let ok = (t - 0.414).abs() <= 0.02 && (p - 0.178).abs() <= 0.010;
    verdict(
        "3",
        ok,
        &format!(
            "square O(1) crossing t = {t:.4} [{}], p_c = {p:.4}; {:.0}s",
            crossings_text(&s),
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_4_kitaev_weight_extraction() {
    let start = Instant::now();
    let e = extract_loop_weight(24, 6, 1.0, 0.2, Sector::GROUND).unwrap();
    let ok = (1.36..=1.47).contains(&e.n_est) && (0.60..=0.70).contains(&e.t_int_est);
    verdict(
        "4",
        ok,
        &format!(
            "kappa=0.2 on 24x6 and 24x12: N_est = {:.4}, t_int_est = {:.4}; {:.0}s",
            e.n_est,
            e.t_int_est,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(ok);
}

fn kitaev_scan(variant: KitaevVariant, t_grid: &[f64], eq: usize, meas: usize) -> BinderScan {
    let sizes = square_sizes(LatticeKind::SuperHoneycomb, &[6, 12]);
    let states: Vec<_> = sizes
        .iter()
        .map(|s| {
            let geo = Arc::new(MembraneGeometry::new(s.lx, s.ly).unwrap());
            let h = build_hamiltonian(s.lx, s.ly, 1.0, 0.2, Sector::GROUND).unwrap();
            (*s, geo, Arc::new(ground_covariance(&h).unwrap()))
        })
        .collect();
    binder_scan(t_grid, &sizes, 5, |t, lattice, seed| {
        let (_, geo, cov) = states.iter().find(|x| x.0 == lattice).unwrap();
        let w = KitaevWeight::new(geo.clone(), cov.clone(), variant, t)?;
        Ok(McConfig::new(lattice, WeightModel::Fermionic(Arc::new(w)))
            .with_sweeps(eq, meas)
            .with_seed(seed))
    })
    .unwrap()
}

#[test]
#[ignore = "slow: fermionic Monte Carlo scans"]
fn criterion_5_kitaev_monte_carlo() {
    let start = Instant::now();
    let wf = kitaev_scan(KitaevVariant::Wavefunction, &grid(0.76, 0.02, 13), 5000, 40000);
    let t = wf.estimate.unwrap_or(f64::NAN);
    let ok_wf = (t - 0.86).abs() <= 0.04;
    // t_ext(p) covers [0, 1] as p runs over [0, 1/2]
    let pur = kitaev_scan(KitaevVariant::Purity, &grid(0.5, 0.05, 11), 3000, 20000);
    let small = pur.curve(LatticeSpec::new(LatticeKind::SuperHoneycomb, 6, 6));
    let large = pur.curve(LatticeSpec::new(LatticeKind::SuperHoneycomb, 12, 12));
    let diffs: Vec<f64> = small.iter().zip(&large).map(|(a, b)| b.1 - a.1).collect();
    let monotone = diffs.iter().all(|&d| d >= 0.0) || diffs.iter().all(|&d| d <= 0.0);
    verdict(
        "5",
        ok_wf && monotone,
        &format!(
            "wavefunction crossing {t:.4} [{}]; purity Q(12)-Q(6) over t_ext in [0.5, 1]: {:?}; {:.0}s",
            crossings_text(&wf),
            diffs.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>(),
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(ok_wf, "wavefunction crossing {t}");
    assert!(monotone, "purity curves cross: {diffs:?}");
}

#[test]
fn criterion_6_quantum_double_exactness() {
    let hc = lat(LatticeKind::Honeycomb, 6, 6);
    let cells = hc.cells();
    let window: Vec<usize> = [(2, 2), (3, 2), (2, 3), (3, 3)]
        .iter()
        .map(|&(i, j)| cells.index(i, j))
        .collect();
    let mut checked = Vec::new();
    for (name, label) in [("S3", "(12)"), ("Z2", "")] {
        let group = GroupTable::named(name).unwrap();
        let g = if label.is_empty() {
            1 - group.identity()
        } else {
            group.element(label).unwrap()
        };
        let mut n = 0;
        for mask in 1u32..16 {
            let up: Vec<usize> = (0..4).filter(|&b| mask >> b & 1 == 1).map(|b| window[b]).collect();
            let l = hc.boundary(&PlaquetteSpins::from_set(hc.n_plaquettes(), &up));
            let brute = overlap_bruteforce(&planar_red_bonds(&hc, &l).unwrap(), &group, g).unwrap();
            let closed = overlap_closed_form_exact(&hc, &l, &group, g).unwrap();
            assert_eq!(brute, closed, "{name} {up:?}");
            let float = overlap_closed_form(&hc, &l, &group, g).unwrap();
            assert!((float - *closed.numer() as f64 / *closed.denom() as f64).abs() < 1e-14);
            n += 1;
        }
        // open and branched chains vanish
        let b = |kind, i, j| PlanarBond { kind, i, j };
        let open = [b(BondKind::H, 0, 0), b(BondKind::V, 1, 0)];
        let branched = [b(BondKind::H, 0, 0), b(BondKind::V, 1, 0), b(BondKind::D, 0, 0)];
        assert_eq!(overlap_bruteforce(&open, &group, g).unwrap(), Ratio::from_integer(0));
        assert_eq!(overlap_bruteforce(&branched, &group, g).unwrap(), Ratio::from_integer(0));
        checked.push(format!("{name}: {n} loops"));
    }
    verdict("6", true, &format!("{}; open and branched chains give 0", checked.join(", ")));
}

#[test]
fn criterion_7_spectrum_and_fidelity() {
    let sq = lat(LatticeKind::Square, 2, 2);
    let mut worst_route: f64 = 0.0;
    for p in [0.0, 0.1, 0.25, 0.5] {
        let s = toric_code_spectrum(&sq, p).unwrap();
        worst_route = worst_route.max(s.cross_check.unwrap());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_fid: f64 = 0.0;
    let mut processing = 0;
    for _ in 0..50 {
        let ch = random_commuting_channel(8, 2, &mut rng).unwrap();
        let psi = random_state(8, &mut rng);
        let phi = random_state(8, &mut rng);
        // fails internally if data processing is violated at any sampled p
        let r = fidelity_projector_formula(&psi, &phi, &ch, &[0.0, 0.1, 0.25, 0.4]).unwrap();
        worst_fid = worst_fid.max(r.deviation);
        processing += r.processing.len();
    }
    let ok = worst_route <= 1e-10 && worst_fid <= 1e-8;
    verdict(
        "7",
        ok,
        &format!(
            "spectrum routes differ by {worst_route:.1e}; fidelity formula vs direct {worst_fid:.1e} on 50 instances; {processing} data-processing checks hold"
        ),
    );
    assert!(ok);
}

fn antisymmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let x = rng.random_range(-1.0..1.0);
            m[(i, j)] = x;
            m[(j, i)] = -x;
        }
    }
    m
}

#[test]
fn criterion_8_property_suites() {
    let start = Instant::now();
    let mut notes = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_pf: f64 = 0.0;
    for k in 0..200 {
        let m = antisymmetric(2 + 2 * (k % 12), &mut rng);
        let pf = pfaffian(&m).unwrap();
        let det = m.clone().lu().determinant();
        worst_pf = worst_pf.max((pf * pf - det).abs() / det.abs().max(1e-300));
    }
    let ok_pf = worst_pf <= 1e-9;
    notes.push(format!("Pf²=det {worst_pf:.1e}"));

    let mut worst_g: f64 = 0.0;
    for (lx, ly) in [(6, 4), (12, 6), (24, 12)] {
        let c = ground_covariance(&build_hamiltonian(lx, ly, 1.0, 0.2, Sector::GROUND).unwrap()).unwrap();
        let n = c.g.nrows();
        worst_g = worst_g.max((&c.g * &c.g + DMatrix::<f64>::identity(n, n)).amax());
    }
    let ok_g = worst_g <= 1e-8;
    notes.push(format!("G²=-I {worst_g:.1e}"));

    let ok_db = detailed_balance(&mut notes);

    let mut agreements = Vec::new();
    let base = |lattice: LatticeSpec, model| McConfig::new(lattice, model).with_sweeps(2000, 30000).with_seed(17);
    let hc3 = LatticeSpec::new(LatticeKind::Honeycomb, 3, 3);
    let sq3 = LatticeSpec::new(LatticeKind::Square, 3, 3);
    let s3 = Arc::new(GroupTable::named("S3").unwrap());
    let s3g = s3.element("(12)").unwrap();
    let z2 = Arc::new(GroupTable::named("Z2").unwrap());
    let z2g = 1 - z2.identity();
    let mut cfgs = vec![
        ("topological", base(hc3, WeightModel::Topological { n: 2.0, t: 0.7 })),
        ("purity", base(sq3, WeightModel::Purity { n: 1.0, t: 1.0, p: 0.2 })),
        ("abelian", base(sq3, WeightModel::AbelianIndicator)),
        ("qd-S3", base(hc3, WeightModel::QuantumDouble { group: s3, g: s3g })),
        ("qd-Z2", base(hc3, WeightModel::QuantumDouble { group: z2, g: z2g })),
    ];
    let geo = Arc::new(MembraneGeometry::new(6, 6).unwrap());
    let cov = Arc::new(ground_covariance(&build_hamiltonian(6, 6, 1.0, 0.2, Sector::GROUND).unwrap()).unwrap());
    let sh = LatticeSpec::new(LatticeKind::SuperHoneycomb, 6, 6);
    for (name, variant, t) in [("fermionic-wavefunction", KitaevVariant::Wavefunction, 0.86), ("fermionic-purity", KitaevVariant::Purity, 1.0)] {
        let w = KitaevWeight::new(geo.clone(), cov.clone(), variant, t).unwrap();
        cfgs.push((name, base(sh, WeightModel::Fermionic(Arc::new(w)))));
    }
    for (name, cfg) in &cfgs {
        let r = mc_vs_oracle(cfg).unwrap();
        agreements.push((*name, r.passed));
    }
    let ok_oracle = agreements.iter().all(|a| a.1);
    notes.push(format!(
        "MC vs oracle {}/{}",
        agreements.iter().filter(|a| a.1).count(),
        agreements.len()
    ));
    for a in agreements.iter().filter(|a| !a.1) {
        notes.push(format!("{} disagrees", a.0));
    }

    let mut classes = Vec::new();
    for n in [1.0, 2f64.sqrt(), 2.0] {
        let tc = 1.0 / (2.0 + (2.0 - n).sqrt()).sqrt();
        let sizes = square_sizes(LatticeKind::Honeycomb, &[8, 12, 16, 24, 32, 48]);
        let v = var_length_scaling(&sizes, n, 5, |lattice, seed| {
            Ok(McConfig::new(lattice, WeightModel::Topological { n, t: tc })
                .with_sweeps(10000, 100000)
                .with_seed(seed))
        })
        .unwrap();
        classes.push((n, v.class, ScalingClass::predicted(n)));
    }
    let ok_var = classes.iter().all(|c| c.1 == Some(c.2));
    notes.push(format!(
        "Var classes {}",
        classes
            .iter()
            .map(|c| format!("N={:.3}: {:?} (expected {:?})", c.0, c.1, c.2))
            .collect::<Vec<_>>()
            .join(", ")
    ));

    let ok = ok_pf && ok_g && ok_db && ok_oracle && ok_var;
    notes.push(format!("{:.0}s", start.elapsed().as_secs_f64()));
    verdict("8", ok, &notes.join("; "));
    assert!(ok_pf && ok_g && ok_db && ok_oracle && ok_var);
}

/// Visit frequencies of the four states of a two-plaquette torus against exact
/// Boltzmann weights, within 3σ.
fn detailed_balance(notes: &mut Vec<String>) -> bool {
    let cfg = McConfig::new(
        LatticeSpec::new(LatticeKind::Honeycomb, 2, 1),
        WeightModel::Topological { n: 2.0, t: 0.7 },
    )
    .with_seed(42);
    let mut chain = Chain::new(&cfg).unwrap();
    let exact: Vec<f64> = (0..4usize)
        .map(|s| {
            let up: Vec<usize> = (0..2).filter(|k| s >> k & 1 == 1).collect();
            chain.log_weight_of(&PlaquetteSpins::from_set(2, &up)).unwrap().exp()
        })
        .collect();
    let z: f64 = exact.iter().sum();
    let mut counts = [0u64; 4];
    let (sweeps, stride) = (1_000_000, 5);
    for k in 0..sweeps {
        chain.sweep().unwrap();
        if k % stride == 0 {
            counts[chain.spins().ones().fold(0, |m, p| m | 1 << p)] += 1;
        }
    }
    let n = (sweeps / stride) as f64;
    let worst = (0..4)
        .map(|s| {
            let p = exact[s] / z;
            (counts[s] as f64 / n - p).abs() / (p * (1.0 - p) / n).sqrt()
        })
        .fold(0.0, f64::max);
    notes.push(format!("detailed balance max {worst:.2}σ"));
    worst < 3.0
}
