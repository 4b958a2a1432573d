//! Free-fermion ground state of the Kitaev honeycomb model with a three-spin
//! term, and loop weights f(L) on the super-honeycomb as Majorana Pfaffians.
//!
//! The model lives on the brick-wall torus `honeycomb_twisted(lx, ly, ly/2)`.
//! Majorana `c_v` shares the honeycomb vertex index `v`. Link types are
//! `e0 = z`, `e1 = y`, `e2 = x`. In the gauge `u_AB = +1`, a link that crosses
//! an antiperiodic seam carries `u_AB = -1` instead.
//!
//! With `σ^α_j σ^α_k = -i u_jk c_j c_k` the quadratic form is
//! `H = (i/4) Σ A_jk c_j c_k`, with `A_jk = 2J u_jk` on links and
//! `A_jl = 2κ ε_{αβγ} u_jk u_kl` for a path `j -α- k -β- l`.

use std::sync::Arc;

use fixedbitset::FixedBitSet;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::lattice::{LatticeKind, LatticeTorus, LoopConfig};
use crate::weights::Weight;

/// Boundary conditions per coupling family; `true` is antiperiodic along (T1, T2).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Sector {
    pub nn: [bool; 2],
    pub nnn: [bool; 2],
}

impl Sector {
    /// Both families share the seam signs, so NNN terms equal products of link gauges.
    pub const fn uniform(x: bool, y: bool) -> Self {
        Sector {
            nn: [x, y],
            nnn: [x, y],
        }
    }

    /// Lowest-energy sector found at J=1, κ=0.2: antiperiodic along the loops (y).
    pub const GROUND: Sector = Sector::uniform(false, true);

    pub fn uniform_all() -> [Sector; 4] {
        [
            Sector::uniform(false, false),
            Sector::uniform(true, false),
            Sector::uniform(false, true),
            Sector::uniform(true, true),
        ]
    }
}

fn seam_sign(wrap: [i32; 2], anti: [bool; 2]) -> f64 {
    let odd = (anti[0] && wrap[0] % 2 != 0) ^ (anti[1] && wrap[1] % 2 != 0);
    if odd {
        -1.0
    } else {
        1.0
    }
}

/// Pauli type of honeycomb edge `e`: 0 = x, 1 = y, 2 = z.
pub fn link_type(e: usize) -> usize {
    [2, 1, 0][e % 3]
}

#[derive(Clone, Debug)]
pub struct MajoranaHamiltonian {
    pub lx: usize,
    pub ly: usize,
    pub j: f64,
    pub kappa: f64,
    pub sector: Sector,
    pub a: DMatrix<f64>,
}

pub fn kitaev_lattice(lx: usize, ly: usize) -> LatticeTorus {
    LatticeTorus::honeycomb_twisted(lx, ly, ly / 2)
}

pub fn build_hamiltonian(
    lx: usize,
    ly: usize,
    j: f64,
    kappa: f64,
    sector: Sector,
) -> Result<MajoranaHamiltonian> {
    if lx == 0 || ly == 0 || lx % 2 != 0 || ly % 2 != 0 {
        return Err(Error::Dimensions(format!(
            "Kitaev torus needs even sizes, got {lx}x{ly}"
        )));
    }
    if !j.is_finite() || !kappa.is_finite() {
        return Err(Error::Parameter("couplings must be finite".into()));
    }
    let lat = kitaev_lattice(lx, ly);
    let n = lat.n_vertices();
    let mut a = DMatrix::<f64>::zeros(n, n);
    // u_jk seen from j, per family
    let u = |e: usize, from: usize, anti: [bool; 2]| -> f64 {
        let s = seam_sign(lat.edge_wrap(e), anti);
        if lat.edge(e)[0] == from {
            s
        } else {
            -s
        }
    };
    for e in 0..lat.n_edges() {
        let [p, q] = lat.edge(e);
        let s = u(e, p, sector.nn);
        a[(p, q)] += 2.0 * j * s;
        a[(q, p)] -= 2.0 * j * s;
    }
    if kappa != 0.0 {
        for k in 0..n {
            let links = lat.vertex_edges(k);
            for &p in links {
                for &q in links {
                    if p == q {
                        continue;
                    }
                    let other = |e: usize| {
                        let [x, y] = lat.edge(e);
                        if x == k {
                            y
                        } else {
                            x
                        }
                    };
                    let (jj, ll) = (other(p), other(q));
                    let (al, be) = (link_type(p), link_type(q));
                    let eps = if (be + 3 - al) % 3 == 1 { 1.0 } else { -1.0 };
                    let ujk = -u(p, k, sector.nnn);
                    let ukl = u(q, k, sector.nnn);
                    a[(jj, ll)] += 2.0 * kappa * eps * ujk * ukl;
                }
            }
        }
    }
    Ok(MajoranaHamiltonian {
        lx,
        ly,
        j,
        kappa,
        sector,
        a,
    })
}

/// Ground-state covariance `G_jk = (i/2)⟨[c_j, c_k]⟩`.
#[derive(Clone, Debug)]
pub struct CovarianceMatrix {
    pub lx: usize,
    pub ly: usize,
    pub sector: Sector,
    pub g: DMatrix<f64>,
    pub energy: f64,
    pub gap: f64,
}

/// `G = i U sign(E) U†` for `iA = U E U†`, evaluated as `-A (-A²)^{-1/2}`,
/// which needs only a real symmetric eigensolver.
pub fn ground_covariance(h: &MajoranaHamiltonian) -> Result<CovarianceMatrix> {
    let a = &h.a;
    let a2 = -(a * a);
    let eig = SymmetricEigen::new(a2);
    let lam_min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let gap = lam_min.max(0.0).sqrt();
    if gap < 1e-10 {
        return Err(Error::Gapless(gap));
    }
    let energy = -0.25
        * eig
            .eigenvalues
            .iter()
            .map(|&l| l.max(0.0).sqrt())
            .sum::<f64>();
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let v = &eig.eigenvectors;
    let mut g = -(a * (v * inv_sqrt * v.transpose()));
    let gt = g.transpose();
    g = (&g - gt) * 0.5;
    Ok(CovarianceMatrix {
        lx: h.lx,
        ly: h.ly,
        sector: h.sector,
        g,
        energy,
        gap,
    })
}

impl CovarianceMatrix {
    /// Max deviations of `Gᵀ = -G` and `G² = -I`.
    pub fn invariant_errors(&self) -> (f64, f64) {
        let n = self.g.nrows();
        let anti = (&self.g + self.g.transpose()).amax();
        let sq = (&self.g * &self.g + DMatrix::<f64>::identity(n, n)).amax();
        (anti, sq)
    }

    /// Exponential decay length, in cells, of |G| between A sites along a row.
    pub fn correlation_length(&self) -> f64 {
        let lat = kitaev_lattice(self.lx, self.ly);
        let cells = lat.cells();
        let rmax = (self.lx / 2).min(14);
        let pts: Vec<(f64, f64)> = (2..=rmax)
            .map(|r| (r as f64, self.g[(0, 2 * cells.index(r as i64, 0))].abs()))
            .filter(|&(_, y)| y > 1e-13)
            .map(|(x, y)| (x, y.ln()))
            .collect();
        let slope = linear_fit(&pts).map(|f| f.slope).unwrap_or(f64::NAN);
        -1.0 / slope
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub rms_residual: f64,
}

pub fn linear_fit(pts: &[(f64, f64)]) -> Option<LinearFit> {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Some(LinearFit {
        slope,
        intercept,
        rms_residual: rms,
    })
}

/// Pfaffian by skew Gaussian elimination with partial pivoting.
pub fn pfaffian(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Parameter("matrix must be square".into()));
    }
    if n % 2 == 1 {
        return Err(Error::OddDimension(n));
    }
    let dev = (m + m.transpose()).amax();
    if dev > 1e-12 * m.amax().max(1.0) {
        return Err(Error::NotAntisymmetric(dev));
    }
    Ok(pfaffian_unchecked(m.clone()))
}

pub fn pfaffian_unchecked(mut a: DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut pf = 1.0;
    let mut k = 0;
    while k + 1 < n {
        let (mut kp, mut best) = (k + 1, a[(k + 1, k)].abs());
        for r in k + 2..n {
            if a[(r, k)].abs() > best {
                best = a[(r, k)].abs();
                kp = r;
            }
        }
        if kp != k + 1 {
            a.swap_rows(k + 1, kp);
            a.swap_columns(k + 1, kp);
            pf = -pf;
        }
        let piv = a[(k, k + 1)];
        if piv == 0.0 {
            return 0.0;
        }
        pf *= piv;
        if k + 2 < n {
            // A[i][j] += τ_i A[j][k+1] - A[i][k+1] τ_j with τ = A[k][k+2..] / piv
            let tau: Vec<f64> = (k + 2..n).map(|c| a[(k, c)] / piv).collect();
            let col: Vec<f64> = (k + 2..n).map(|r| a[(r, k + 1)]).collect();
            for (ii, i) in (k + 2..n).enumerate() {
                for (jj, j) in (k + 2..n).enumerate() {
                    a[(i, j)] += tau[ii] * col[jj] - col[ii] * tau[jj];
                }
            }
        }
        k += 2;
    }
    pf
}

/// Parity of the permutation that sorts `v` ascending (entries distinct).
fn sort_parity(v: &mut [usize]) -> f64 {
    let mut sign = 1.0;
    for i in 0..v.len() {
        let m = (i..v.len()).min_by_key(|&k| v[k]).unwrap();
        if m != i {
            v.swap(i, m);
            sign = -sign;
        }
    }
    sign
}

/// Super-honeycomb membranes over the Kitaev torus.
#[derive(Clone, Debug)]
pub struct MembraneGeometry {
    pub lattice: LatticeTorus,
    /// Per blue plaquette: `(B site, A site, base edge)` for the three outward links.
    pub links: Vec<[(usize, usize, usize); 3]>,
    /// Per blue plaquette: its six base edges.
    pub rim: Vec<[usize; 6]>,
    /// Real-space x coordinate `i - j/2` of each blue plaquette.
    pub x: Vec<f64>,
}

impl MembraneGeometry {
    pub fn new(lx: usize, ly: usize) -> Result<Self> {
        let lattice = LatticeTorus::build(LatticeKind::SuperHoneycomb, lx, ly)?;
        let emb = lattice.embedding().unwrap();
        let base = &emb.base;
        let cells = base.cells();
        let mut links = Vec::new();
        let mut rim = Vec::new();
        let mut x = Vec::new();
        for &r in &emb.removed {
            let (i, j) = cells.coords(r);
            let a = |i, j| 2 * cells.index(i, j);
            let b = |i, j| 2 * cells.index(i, j) + 1;
            links.push([
                (b(i, j), a(i, j + 1), 3 * cells.index(i, j + 1) + 1),
                (
                    b(i - 1, j - 1),
                    a(i - 2, j - 1),
                    3 * cells.index(i - 2, j - 1) + 2,
                ),
                (b(i, j - 1), a(i, j - 1), 3 * cells.index(i, j - 1)),
            ]);
            let p = base.plaquette(r);
            rim.push([p[0], p[1], p[2], p[3], p[4], p[5]]);
            x.push((i as f64 - j as f64 / 2.0).rem_euclid(lx as f64));
        }
        Ok(MembraneGeometry {
            lattice,
            links,
            rim,
            x,
        })
    }

    pub fn base(&self) -> &LatticeTorus {
        &self.lattice.embedding().unwrap().base
    }

    pub fn n_plaquettes(&self) -> usize {
        self.links.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MembraneWeight {
    pub interior: Vec<usize>,
    pub loop_length: usize,
    pub value: f64,
    pub sign_sigma: f64,
    pub pfaffian: f64,
}

/// `f(L) = ⟨∏_{r∈interior} 𝒯_r W_r⟩` as `σ(L) · Pf(G|interior)`, where σ(L) collects
/// the plaquette eigenvalues, the link gauges of the bilinears and the parity of
/// sorting the Majoranas.
pub fn membrane_weight(
    cov: &CovarianceMatrix,
    geo: &MembraneGeometry,
    interior: &[usize],
) -> MembraneWeight {
    let base = geo.base();
    let anti = cov.sector.nn;
    let gauge = |e: usize| seam_sign(base.edge_wrap(e), anti);
    let mut majoranas = Vec::with_capacity(6 * interior.len());
    let mut sigma = 1.0;
    for &r in interior {
        sigma *= geo.rim[r].iter().map(|&e| gauge(e)).product::<f64>();
        for &(b, a, e) in &geo.links[r] {
            // σσ on the link is i u_AB c_B c_A
            sigma *= gauge(e);
            majoranas.push(b);
            majoranas.push(a);
        }
    }
    sigma *= sort_parity(&mut majoranas);
    let k = majoranas.len();
    let sub = DMatrix::from_fn(k, k, |r, c| cov.g[(majoranas[r], majoranas[c])]);
    let pf = pfaffian_unchecked(sub);
    let mut in_set = FixedBitSet::with_capacity(geo.n_plaquettes());
    interior.iter().for_each(|&r| in_set.insert(r));
    let loop_length = geo
        .lattice
        .boundary(&crate::lattice::PlaquetteSpins { sigma: in_set })
        .len();
    MembraneWeight {
        interior: interior.to_vec(),
        loop_length,
        value: sigma * pf,
        sign_sigma: sigma,
        pfaffian: pf,
    }
}

/// Interior of a contractible blue configuration: the smaller of the two plaquette
/// sets bounded by it, ties broken toward the lexicographically smaller set.
pub fn interior_of(lat: &LatticeTorus, l: &LoopConfig) -> Result<Vec<usize>> {
    let np = lat.n_plaquettes();
    let mut side = vec![u8::MAX; np];
    side[0] = 0;
    let mut stack = vec![0usize];
    while let Some(p) = stack.pop() {
        for &e in lat.plaquette(p) {
            let [x, y] = lat.edge_plaquettes(e);
            let q = if x == p { y } else { x };
            let s = side[p] ^ u8::from(l.edges.contains(e));
            if side[q] == u8::MAX {
                side[q] = s;
                stack.push(q);
            } else if side[q] != s {
                return Err(Error::Parameter(
                    "configuration is not the boundary of a plaquette set".into(),
                ));
            }
        }
    }
    let ones: Vec<usize> = (0..np).filter(|&p| side[p] == 1).collect();
    let zeros: Vec<usize> = (0..np).filter(|&p| side[p] == 0).collect();
    Ok(
        if ones.len() < zeros.len() || (ones.len() == zeros.len() && ones < zeros) {
            ones
        } else {
            zeros
        },
    )
}

/// Blue plaquettes with x in `[x0, x0 + width)` modulo `lx`.
pub fn strip(geo: &MembraneGeometry, x0: f64, width: f64) -> Vec<usize> {
    let lx = geo.lattice.lx() as f64;
    (0..geo.n_plaquettes())
        .filter(|&r| (geo.x[r] - x0).rem_euclid(lx) < width - 1e-9)
        .collect()
}

/// `⟨W⁽¹⁾ W⁽²⁾⟩` for two loops winding along y at separation `d`, from the membrane between them.
pub fn double_wilson_estimator(
    cov: &CovarianceMatrix,
    geo: &MembraneGeometry,
    d: f64,
) -> MembraneWeight {
    membrane_weight(cov, geo, &strip(geo, 0.0, d))
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct LoopWeightEstimate {
    pub n_est: f64,
    pub t_int_est: f64,
    /// Per-edge decay of the double loop between the two sizes.
    pub t_double_loop: f64,
    pub wilson_small: f64,
    pub wilson_large: f64,
    pub fit_rms: f64,
    pub fit_points: Vec<(usize, f64)>,
    pub correlation_length: f64,
    pub warnings: Vec<String>,
}

/// N from `F(ℓy) / √F(2ℓy)` with `F = ⟨W⁽¹⁾W⁽²⁾⟩ ≈ N² t^{2ℓy}`; `t_int` from an
/// exponential fit of |f| over single hexagon strips of growing length.
pub fn extract_loop_weight(
    lx: usize,
    ly: usize,
    j: f64,
    kappa: f64,
    sector: Sector,
) -> Result<LoopWeightEstimate> {
    let mut warnings = Vec::new();
    let small = ground_covariance(&build_hamiltonian(lx, ly, j, kappa, sector)?)?;
    let large = ground_covariance(&build_hamiltonian(lx, 2 * ly, j, kappa, sector)?)?;
    let geo_s = MembraneGeometry::new(lx, ly)?;
    let geo_l = MembraneGeometry::new(lx, 2 * ly)?;
    let d = lx as f64 / 2.0;
    let xi = small.correlation_length();
    if d < 3.0 * xi {
        warnings.push(format!("separation {d} is below 3ξ = {:.2}", 3.0 * xi));
    }
    let f1 = double_wilson_estimator(&small, &geo_s, d).value;
    let f2 = double_wilson_estimator(&large, &geo_l, d).value;
    if f1 <= 0.0 || f2 <= 0.0 {
        warnings.push(format!("double-loop values not positive: {f1:e}, {f2:e}"));
    }
    let n_est = f1 / f2.abs().sqrt();
    let t_double_loop = (f2 / f1).abs().powf(1.0 / (2.0 * ly as f64));
    let cells = geo_l.base().cells();
    let blue_index = |c: usize| {
        geo_l
            .lattice
            .embedding()
            .unwrap()
            .removed
            .binary_search(&c)
            .ok()
    };
    let mmax = (2 * ly).min(lx / 2).clamp(2, 7);
    let mut fit_points = Vec::new();
    for m in 1..=mmax {
        let members: Option<Vec<usize>> = (0..m as i64)
            .map(|b| blue_index(cells.index(2 * b + 3, b + 3)))
            .collect();
        let Some(mut members) = members else { continue };
        members.sort_unstable();
        let w = membrane_weight(&large, &geo_l, &members);
        fit_points.push((w.loop_length, w.value.abs()));
    }
    let pts: Vec<(f64, f64)> = fit_points
        .iter()
        .map(|&(l, v)| (l as f64, v.ln()))
        .collect();
    let fit = linear_fit(&pts).ok_or_else(|| Error::Other("not enough loops to fit".into()))?;
    if fit.rms_residual > 0.05 {
        warnings.push(format!(
            "exponential fit residual {:.3} exceeds 0.05",
            fit.rms_residual
        ));
    }
    Ok(LoopWeightEstimate {
        n_est,
        t_int_est: fit.slope.exp(),
        t_double_loop,
        wilson_small: f1,
        wilson_large: f2,
        fit_rms: fit.rms_residual,
        fit_points,
        correlation_length: xi,
        warnings,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KitaevVariant {
    /// t_ext^|L| · |f(L)|
    Wavefunction,
    /// t_ext^|L| · f(L)²
    Purity,
}

/// Fermionic loop weight on the super-honeycomb, pluggable into the sampler.
#[derive(Clone, Debug)]
pub struct KitaevWeight {
    pub geometry: Arc<MembraneGeometry>,
    pub covariance: Arc<CovarianceMatrix>,
    pub variant: KitaevVariant,
    pub t_ext: f64,
}

impl KitaevWeight {
    pub fn new(
        geometry: Arc<MembraneGeometry>,
        covariance: Arc<CovarianceMatrix>,
        variant: KitaevVariant,
        t_ext: f64,
    ) -> Result<Self> {
        if covariance.lx != geometry.lattice.lx() || covariance.ly != geometry.lattice.ly() {
            return Err(Error::Parameter(
                "covariance and geometry sizes differ".into(),
            ));
        }
        if !(0.0..=1.0).contains(&t_ext) {
            return Err(Error::Parameter(format!(
                "t_ext must lie in [0, 1], got {t_ext}"
            )));
        }
        Ok(KitaevWeight {
            geometry,
            covariance,
            variant,
            t_ext,
        })
    }

    pub fn variant(&self) -> KitaevVariant {
        self.variant
    }

    /// Membrane weight for an up-plaquette set, using the smaller side.
    pub fn membrane_for_spins(&self, sigma: &FixedBitSet) -> MembraneWeight {
        let np = self.geometry.n_plaquettes();
        let up: Vec<usize> = sigma.ones().collect();
        let interior = if 2 * up.len() <= np {
            up
        } else {
            (0..np).filter(|&p| !sigma.contains(p)).collect()
        };
        membrane_weight(&self.covariance, &self.geometry, &interior)
    }

    pub fn log_weight_for_spins(&self, sigma: &FixedBitSet, len: usize) -> f64 {
        if len > 0 && self.t_ext == 0.0 {
            return f64::NEG_INFINITY;
        }
        let f = self.membrane_for_spins(sigma).value.abs();
        let lt = if len == 0 {
            0.0
        } else {
            len as f64 * self.t_ext.ln()
        };
        match self.variant {
            KitaevVariant::Wavefunction => lt + f.ln(),
            KitaevVariant::Purity => lt + 2.0 * f.ln(),
        }
    }

    pub fn weight_of_loop(&self, lat: &LatticeTorus, l: &LoopConfig) -> Result<Weight> {
        if lat.kind() != LatticeKind::SuperHoneycomb
            || lat.lx() != self.geometry.lattice.lx()
            || lat.ly() != self.geometry.lattice.ly()
        {
            return Err(Error::Parameter(
                "fermionic weights live on the matching super-honeycomb".into(),
            ));
        }
        let interior = interior_of(lat, l)?;
        let mut s = FixedBitSet::with_capacity(self.geometry.n_plaquettes());
        interior.iter().for_each(|&r| s.insert(r));
        Ok(Weight::from_value(
            self.log_weight_for_spins(&s, l.len()).exp(),
        ))
    }
}
