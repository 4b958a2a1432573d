//! Finite groups, flux data and quantum-double overlaps.
//!
//! Bonds of the planar triangular lattice are oriented `H: (i,j)→(i+1,j)`,
//! `V: (i,j)→(i,j+1)`, `D: (i,j)→(i+1,j+1)`. A configuration is flux-free when
//! `g_H(i,j)·g_V(i+1,j) = g_D(i,j)` and `g_V(i,j)·g_H(i,j+1) = g_D(i,j)` for all
//! cells. The error `X_g` acts on a bond by left multiplication.

use std::collections::{BTreeSet, HashMap, VecDeque};

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::lattice::{LatticeKind, LatticeTorus, LoopConfig};
use crate::weights::weight_quantum_double;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupTable {
    name: String,
    order: usize,
    mult: Vec<usize>,
    inverse: Vec<usize>,
    identity: usize,
    labels: Vec<String>,
}

/// Compose permutations: `(a∘b)(x) = a(b(x))`.
fn compose(a: &[usize], b: &[usize]) -> Vec<usize> {
    b.iter().map(|&x| a[x]).collect()
}

fn cycle_label(p: &[usize]) -> String {
    let mut seen = vec![false; p.len()];
    let mut out = String::new();
    for s in 0..p.len() {
        if seen[s] || p[s] == s {
            continue;
        }
        out.push('(');
        let mut x = s;
        while !seen[x] {
            seen[x] = true;
            out.push_str(&(x + 1).to_string());
            x = p[x];
        }
        out.push(')');
    }
    if out.is_empty() {
        "e".to_string()
    } else {
        out
    }
}

impl GroupTable {
    /// Close a set of permutations under composition.
    pub fn from_permutations(name: &str, generators: &[Vec<usize>]) -> Result<Self> {
        let n = generators.first().map(|g| g.len()).unwrap_or(1);
        let id: Vec<usize> = (0..n).collect();
        let mut elems: BTreeSet<Vec<usize>> = BTreeSet::from([id.clone()]);
        let mut queue = VecDeque::from([id.clone()]);
        while let Some(x) = queue.pop_front() {
            for g in generators {
                let y = compose(g, &x);
                if elems.insert(y.clone()) {
                    queue.push_back(y);
                }
            }
        }
        let elems: Vec<Vec<usize>> = elems.into_iter().collect();
        let index: HashMap<&Vec<usize>, usize> =
            elems.iter().enumerate().map(|(i, p)| (p, i)).collect();
        let order = elems.len();
        let mut mult = vec![0; order * order];
        for a in 0..order {
            for b in 0..order {
                mult[a * order + b] = index[&compose(&elems[a], &elems[b])];
            }
        }
        let labels = elems.iter().map(|p| cycle_label(p)).collect();
        Self::from_table(name, order, mult, Some(labels))
    }

    pub fn from_table(
        name: &str,
        order: usize,
        mult: Vec<usize>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if order == 0 || mult.len() != order * order || mult.iter().any(|&x| x >= order) {
            return Err(Error::Group(
                "table must be order×order with entries below order".into(),
            ));
        }
        let m = |a: usize, b: usize| mult[a * order + b];
        let identity = (0..order)
            .find(|&e| (0..order).all(|x| m(e, x) == x && m(x, e) == x))
            .ok_or_else(|| Error::Group("no identity element".into()))?;
        let mut inverse = vec![usize::MAX; order];
        for a in 0..order {
            inverse[a] = (0..order)
                .find(|&b| m(a, b) == identity && m(b, a) == identity)
                .ok_or_else(|| Error::Group(format!("element {a} has no inverse")))?;
        }
        let check = |a: usize, b: usize, c: usize| m(m(a, b), c) == m(a, m(b, c));
        if order <= 24 {
            for a in 0..order {
                for b in 0..order {
                    for c in 0..order {
                        if !check(a, b, c) {
                            return Err(Error::Group(format!("not associative at ({a},{b},{c})")));
                        }
                    }
                }
            }
        } else {
            let mut s = 0x9e37_79b9_7f4a_7c15u64;
            for _ in 0..20_000 {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                let (a, b, c) = (
                    (s % order as u64) as usize,
                    ((s >> 20) % order as u64) as usize,
                    ((s >> 40) % order as u64) as usize,
                );
                if !check(a, b, c) {
                    return Err(Error::Group(format!("not associative at ({a},{b},{c})")));
                }
            }
        }
        let labels = labels.unwrap_or_else(|| (0..order).map(|i| i.to_string()).collect());
        Ok(GroupTable {
            name: name.to_string(),
            order,
            mult,
            inverse,
            identity,
            labels,
        })
    }

    /// Named groups: Z<n>, S3, S4, D<n> (dihedral of order 2n).
    pub fn named(name: &str) -> Result<Self> {
        let cyclic = |n: usize| (0..n).map(|i| (i + 1) % n).collect::<Vec<_>>();
        if name == "S3" || name == "S4" {
            let n = if name == "S3" { 3 } else { 4 };
            let mut swap: Vec<usize> = (0..n).collect();
            swap.swap(0, 1);
            return Self::from_permutations(name, &[swap, cyclic(n)]);
        }
        let parse = |s: &str| s.parse::<usize>().ok().filter(|&n| n >= 1 && n <= 64);
        if let Some(n) = name.strip_prefix('Z').and_then(parse) {
            return Self::from_permutations(name, &[cyclic(n)]);
        }
        if let Some(n) = name.strip_prefix('D').and_then(parse).filter(|&n| n >= 3) {
            let reflect: Vec<usize> = (0..n).map(|i| (n - i) % n).collect();
            return Self::from_permutations(name, &[cyclic(n), reflect]);
        }
        Err(Error::Group(format!("unknown group '{name}'")))
    }

    /// Plain-text table: first token is the order, then order² row-major indices.
    pub fn parse_table(name: &str, text: &str) -> Result<Self> {
        let mut nums = text
            .split_whitespace()
            .filter(|t| !t.starts_with('#'))
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Group(format!("bad token '{t}'")))
            });
        let order = nums
            .next()
            .ok_or_else(|| Error::Group("empty table".into()))??;
        let mult = nums.collect::<Result<Vec<usize>>>()?;
        Self::from_table(name, order, mult, None)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.mult[a * self.order + b]
    }

    pub fn inv(&self, a: usize) -> usize {
        self.inverse[a]
    }

    pub fn label(&self, a: usize) -> &str {
        &self.labels[a]
    }

    pub fn element(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn conjugacy_class(&self, g: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = (0..self.order)
            .map(|h| self.mul(self.mul(h, g), self.inv(h)))
            .collect();
        set.into_iter().collect()
    }

    pub fn class_size(&self, g: usize) -> usize {
        self.conjugacy_class(g).len()
    }

    pub fn centralizer(&self, g: usize) -> Vec<usize> {
        (0..self.order)
            .filter(|&h| self.mul(h, g) == self.mul(g, h))
            .collect()
    }

    pub fn conjugacy_classes(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.order];
        let mut out = Vec::new();
        for g in 0..self.order {
            if !seen[g] {
                let c = self.conjugacy_class(g);
                for &x in &c {
                    seen[x] = true;
                }
                out.push(c);
            }
        }
        out
    }

    /// Classes of non-trivial involutions.
    pub fn order_two_elements(&self) -> Vec<AnyonDatum> {
        self.conjugacy_classes()
            .into_iter()
            .filter(|c| c[0] != self.identity && self.mul(c[0], c[0]) == self.identity)
            .map(|c| self.anyon(c[0]))
            .collect()
    }

    /// Pure flux anyon labeled by the class of `g`.
    pub fn anyon(&self, g: usize) -> AnyonDatum {
        let class = self.conjugacy_class(g);
        AnyonDatum {
            representative: g,
            class_size: class.len(),
            conjugacy_class: class,
            centralizer: self.centralizer(g),
            quantum_dimension: self.class_size(g) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnyonDatum {
    pub representative: usize,
    pub conjugacy_class: Vec<usize>,
    pub class_size: usize,
    pub centralizer: Vec<usize>,
    pub quantum_dimension: f64,
}

/// Square-lattice O(N) parameters of the purity: (t, N).
pub fn qd_purity_params(group: &GroupTable, g: usize, p: f64) -> Result<(f64, f64)> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::Parameter(format!(
            "error rate must lie in [0, 1/2], got {p}"
        )));
    }
    let d = group.class_size(g) as f64;
    Ok(((p - p * p) / ((p * p - p + 0.5) * d * d), d * d))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopRegime {
    LongLoop,
    Critical,
    ShortLoop,
}

/// Parameters (t, N) of the largest eigenvalue at maximal decoherence and its regime.
pub fn qd_max_decoherence_params(group: &GroupTable, g: usize) -> Result<(f64, f64, LoopRegime)> {
    if g == group.identity() || group.mul(g, g) != group.identity() {
        return Err(Error::Parameter(
            "g must be a non-trivial involution".into(),
        ));
    }
    let d = group.class_size(g);
    let regime = match d {
        1 => LoopRegime::LongLoop,
        2 => LoopRegime::Critical,
        _ => LoopRegime::ShortLoop,
    };
    Ok((1.0 / d as f64, d as f64, regime))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondKind {
    H,
    V,
    D,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PlanarBond {
    pub kind: BondKind,
    pub i: i64,
    pub j: i64,
}

/// Triangle `(i, j, upper)`; `upper = false` is `{H(i,j), V(i+1,j), D(i,j)}`,
/// `upper = true` is `{V(i,j), H(i,j+1), D(i,j)}`. Bonds listed as (x, y, z), x·y = z.
type Triangle = (i64, i64, bool);

fn triangle_bonds((i, j, up): Triangle) -> [PlanarBond; 3] {
    let b = |kind, i, j| PlanarBond { kind, i, j };
    if up {
        [
            b(BondKind::V, i, j),
            b(BondKind::H, i, j + 1),
            b(BondKind::D, i, j),
        ]
    } else {
        [
            b(BondKind::H, i, j),
            b(BondKind::V, i + 1, j),
            b(BondKind::D, i, j),
        ]
    }
}

fn bond_triangles(b: PlanarBond) -> [Triangle; 2] {
    let (i, j) = (b.i, b.j);
    match b.kind {
        BondKind::H => [(i, j, false), (i, j - 1, true)],
        BondKind::V => [(i, j, true), (i - 1, j, false)],
        BondKind::D => [(i, j, false), (i, j, true)],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Free(usize),
    Solve { tri: usize, target: usize },
    Check(usize),
}

/// Planar disk of triangles with a propagation order for flux-free configurations.
#[derive(Clone, Debug)]
pub struct FluxFreePatch {
    bonds: Vec<PlanarBond>,
    triangles: Vec<[usize; 3]>,
    red: Vec<bool>,
    steps: Vec<Step>,
    /// Triangles whose image constraint can be tested after each step.
    image_checks: Vec<Vec<usize>>,
}

/// Counts behind an overlap: flux-free configurations and those whose image is flux-free.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverlapCount {
    pub flux_free: u128,
    pub image_flux_free: u128,
}

impl OverlapCount {
    pub fn ratio(&self) -> Ratio<u128> {
        Ratio::new(self.image_flux_free, self.flux_free)
    }
}

impl FluxFreePatch {
    /// Patch made of every triangle touching a red bond plus everything the red
    /// bonds enclose.
    pub fn around(red: &[PlanarBond]) -> Result<Self> {
        let red_set: BTreeSet<PlanarBond> = red.iter().copied().collect();
        let mut tris: BTreeSet<Triangle> =
            red_set.iter().flat_map(|&b| bond_triangles(b)).collect();
        if tris.is_empty() {
            return Err(Error::Patch("no red bonds".into()));
        }
        let (mut i0, mut i1, mut j0, mut j1) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
        for &(i, j, _) in &tris {
            i0 = i0.min(i);
            i1 = i1.max(i);
            j0 = j0.min(j);
            j1 = j1.max(j);
        }
        let (i0, i1, j0, j1) = (i0 - 1, i1 + 1, j0 - 1, j1 + 1);
        let inside = |t: &Triangle| t.0 >= i0 && t.0 <= i1 && t.1 >= j0 && t.1 <= j1;
        let mut outside: BTreeSet<Triangle> = BTreeSet::new();
        let mut queue = VecDeque::from([(i0, j0, false)]);
        outside.insert((i0, j0, false));
        while let Some(t) = queue.pop_front() {
            for b in triangle_bonds(t) {
                if red_set.contains(&b) {
                    continue;
                }
                for n in bond_triangles(b) {
                    if inside(&n) && outside.insert(n) {
                        queue.push_back(n);
                    }
                }
            }
        }
        for i in i0..=i1 {
            for j in j0..=j1 {
                for up in [false, true] {
                    if !outside.contains(&(i, j, up)) {
                        tris.insert((i, j, up));
                    }
                }
            }
        }
        Self::from_triangles(&tris.into_iter().collect::<Vec<_>>(), red)
    }

    pub fn from_triangles(tris: &[Triangle], red: &[PlanarBond]) -> Result<Self> {
        let mut index: HashMap<PlanarBond, usize> = HashMap::new();
        let mut bonds = Vec::new();
        let triangles: Vec<[usize; 3]> = tris
            .iter()
            .map(|&t| {
                triangle_bonds(t).map(|b| {
                    *index.entry(b).or_insert_with(|| {
                        bonds.push(b);
                        bonds.len() - 1
                    })
                })
            })
            .collect();
        let mut red_flags = vec![false; bonds.len()];
        for b in red {
            let k = index
                .get(b)
                .ok_or_else(|| Error::Patch(format!("red bond {b:?} outside the patch")))?;
            red_flags[*k] = true;
        }
        let mut patch = FluxFreePatch {
            bonds,
            triangles,
            red: red_flags,
            steps: Vec::new(),
            image_checks: Vec::new(),
        };
        patch.plan();
        if patch.free_count() > 20 {
            return Err(Error::Patch(format!(
                "{} free bonds is beyond brute force",
                patch.free_count()
            )));
        }
        Ok(patch)
    }

    /// Greedy propagation order: solve any triangle with one unknown bond, else
    /// free an unknown bond of the most-determined triangle (red ones first).
    fn plan(&mut self) {
        let nb = self.bonds.len();
        let nt = self.triangles.len();
        let mut known = vec![false; nb];
        let mut done = vec![false; nt];
        let mut img_done = vec![false; nt];
        let has_red: Vec<bool> = self
            .triangles
            .iter()
            .map(|t| t.iter().any(|&b| self.red[b]))
            .collect();
        let unknown = |t: &[usize; 3], known: &[bool]| t.iter().filter(|&&b| !known[b]).count();
        let mut steps = Vec::new();
        let mut image_checks = Vec::new();
        loop {
            let mut progressed = false;
            for t in 0..nt {
                if done[t] {
                    continue;
                }
                match unknown(&self.triangles[t], &known) {
                    0 => {
                        steps.push(Step::Check(t));
                        done[t] = true;
                    }
                    1 => {
                        let target = *self.triangles[t].iter().find(|&&b| !known[b]).unwrap();
                        known[target] = true;
                        steps.push(Step::Solve { tri: t, target });
                        done[t] = true;
                    }
                    _ => continue,
                }
                progressed = true;
                image_checks.push(Vec::new());
                self.flush_image_checks(
                    &known,
                    &has_red,
                    &mut img_done,
                    image_checks.last_mut().unwrap(),
                );
                break;
            }
            if progressed {
                continue;
            }
            let best = (0..nt)
                .filter(|&t| !done[t])
                .min_by_key(|&t| (unknown(&self.triangles[t], &known), !has_red[t], t));
            let Some(t) = best else { break };
            let b = *self.triangles[t].iter().find(|&&b| !known[b]).unwrap();
            known[b] = true;
            steps.push(Step::Free(b));
            image_checks.push(Vec::new());
            self.flush_image_checks(
                &known,
                &has_red,
                &mut img_done,
                image_checks.last_mut().unwrap(),
            );
        }
        self.steps = steps;
        self.image_checks = image_checks;
    }

    fn flush_image_checks(
        &self,
        known: &[bool],
        has_red: &[bool],
        img_done: &mut [bool],
        out: &mut Vec<usize>,
    ) {
        for t in 0..self.triangles.len() {
            if has_red[t] && !img_done[t] && self.triangles[t].iter().all(|&b| known[b]) {
                img_done[t] = true;
                out.push(t);
            }
        }
    }

    pub fn free_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, Step::Free(_)))
            .count()
    }

    pub fn n_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Exact counts of flux-free configurations and of those whose `X_g` image is flux-free.
    pub fn count(&self, group: &GroupTable, g: usize) -> OverlapCount {
        let n = self.steps.len();
        let mut free_after = vec![0u32; n + 1];
        let mut checks_after = vec![0u32; n + 1];
        for k in (0..n).rev() {
            free_after[k] = free_after[k + 1] + matches!(self.steps[k], Step::Free(_)) as u32;
            checks_after[k] = checks_after[k + 1] + matches!(self.steps[k], Step::Check(_)) as u32;
        }
        let mut ctx = CountCtx {
            patch: self,
            group,
            g,
            vals: vec![group.identity(); self.bonds.len()],
            free_after,
            checks_after,
            count: OverlapCount {
                flux_free: 0,
                image_flux_free: 0,
            },
        };
        ctx.descend(0, true);
        ctx.count
    }
}

struct CountCtx<'a> {
    patch: &'a FluxFreePatch,
    group: &'a GroupTable,
    g: usize,
    vals: Vec<usize>,
    free_after: Vec<u32>,
    checks_after: Vec<u32>,
    count: OverlapCount,
}

impl CountCtx<'_> {
    fn flux_free(&self, t: usize) -> bool {
        let [x, y, z] = self.patch.triangles[t];
        self.group.mul(self.vals[x], self.vals[y]) == self.vals[z]
    }

    fn image_flux_free(&self, t: usize) -> bool {
        let im = |b: usize| {
            if self.patch.red[b] {
                self.group.mul(self.g, self.vals[b])
            } else {
                self.vals[b]
            }
        };
        let [x, y, z] = self.patch.triangles[t];
        self.group.mul(im(x), im(y)) == im(z)
    }

    fn descend(&mut self, k: usize, img_ok: bool) {
        if k == self.patch.steps.len() {
            self.count.flux_free += 1;
            self.count.image_flux_free += img_ok as u128;
            return;
        }
        if !img_ok && self.checks_after[k] == 0 {
            self.count.flux_free += (self.group.order() as u128).pow(self.free_after[k]);
            return;
        }
        match self.patch.steps[k] {
            Step::Free(b) => {
                for v in 0..self.group.order() {
                    self.vals[b] = v;
                    self.after(k, img_ok);
                }
            }
            Step::Solve { tri, target } => {
                let [x, y, z] = self.patch.triangles[tri];
                let (gr, vals) = (self.group, &self.vals);
                let v = if target == z {
                    gr.mul(vals[x], vals[y])
                } else if target == x {
                    gr.mul(vals[z], gr.inv(vals[y]))
                } else {
                    gr.mul(gr.inv(vals[x]), vals[z])
                };
                self.vals[target] = v;
                self.after(k, img_ok);
            }
            Step::Check(t) => {
                if self.flux_free(t) {
                    self.after(k, img_ok);
                }
            }
        }
    }

    fn after(&mut self, k: usize, img_ok: bool) {
        let ok = img_ok
            && self.patch.image_checks[k]
                .iter()
                .all(|&t| self.image_flux_free(t));
        self.descend(k + 1, ok);
    }
}

/// Red bonds of a honeycomb configuration as planar triangular-lattice bonds,
/// unwrapped around the first bond. Valid for loops smaller than half the torus.
pub fn planar_red_bonds(hc: &LatticeTorus, l: &LoopConfig) -> Result<Vec<PlanarBond>> {
    if hc.kind() != LatticeKind::Honeycomb || hc.cells().shift != 0 {
        return Err(Error::Parameter("need an untwisted honeycomb".into()));
    }
    let cells = hc.cells();
    let (lx, ly) = (cells.lx as i64, cells.ly as i64);
    let mut out = Vec::new();
    let mut anchor: Option<(i64, i64)> = None;
    for e in l.edges.ones() {
        let b = hc.dual_edge(e).unwrap();
        let (i, j) = cells.coords(b / 3);
        let kind = [BondKind::H, BondKind::V, BondKind::D][b % 3];
        let (ai, aj) = *anchor.get_or_insert((i, j));
        let di = (i - ai + lx / 2).rem_euclid(lx) - lx / 2;
        let dj = (j - aj + ly / 2).rem_euclid(ly) - ly / 2;
        out.push(PlanarBond {
            kind,
            i: ai + di,
            j: aj + dj,
        });
    }
    Ok(out)
}

/// Closed-form overlap |[g]|^C / |[g]|^|shadow|.
pub fn overlap_closed_form(
    hc: &LatticeTorus,
    l: &LoopConfig,
    group: &GroupTable,
    g: usize,
) -> Result<f64> {
    Ok(weight_quantum_double(hc, l, group, g)?.value())
}

/// Exact closed form as a rational, or zero for branched loops.
pub fn overlap_closed_form_exact(
    hc: &LatticeTorus,
    l: &LoopConfig,
    group: &GroupTable,
    g: usize,
) -> Result<Ratio<u128>> {
    let shadow = match hc.shadow(l) {
        Ok(s) => s,
        Err(Error::Branched { .. }) => return Ok(Ratio::from_integer(0)),
        Err(e) => return Err(e),
    };
    let sq = LatticeTorus::build(LatticeKind::Square, hc.lx(), hc.ly())?;
    let c = sq.cyclomatic_number(&shadow)? as u32;
    let d = group.class_size(g) as u128;
    Ok(Ratio::new(d.pow(c), d.pow(shadow.len() as u32)))
}

/// Brute-force overlap ⟨ψ|∏ X_g|ψ⟩ over the planar patch around the red bonds.
pub fn overlap_bruteforce(red: &[PlanarBond], group: &GroupTable, g: usize) -> Result<Ratio<u128>> {
    if group.mul(g, g) != group.identity() {
        return Err(Error::Parameter("g must square to the identity".into()));
    }
    if red.is_empty() {
        return Ok(Ratio::from_integer(1));
    }
    Ok(FluxFreePatch::around(red)?.count(group, g).ratio())
}
