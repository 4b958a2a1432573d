//! Metropolis sampling over plaquette spins σ_p ∈ {0, 1}. The loop configuration
//! is L = ∂{p : σ_p = 1}, so only contractible configurations are reached, and the
//! chain targets W(L(σ)) over all 2^F spin states.
//!
//! Also: Binder scans with block-bootstrap errors, Var(|L|) scaling classes,
//! a random-bond face-cubic spin sampler and an exact cross-check harness.

use std::sync::Arc;

use fixedbitset::FixedBitSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kitaev::{KitaevVariant, KitaevWeight};
use crate::lattice::{LatticeKind, LatticeTorus, LoopConfig, PlaquetteSpins};
use crate::oracle::NeumaierSum;
use crate::weights::{decoherence_factor, WeightModel};

pub const BOOTSTRAP_BLOCKS: usize = 20;
pub const BOOTSTRAP_RESAMPLES: usize = 400;
/// Largest plaquette count the exact 2^F cross-check will enumerate.
pub const ORACLE_SPIN_CAP: usize = 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub kind: LatticeKind,
    pub lx: usize,
    pub ly: usize,
}

impl LatticeSpec {
    pub fn new(kind: LatticeKind, lx: usize, ly: usize) -> Self {
        LatticeSpec { kind, lx, ly }
    }

    pub fn build(&self) -> Result<LatticeTorus> {
        LatticeTorus::build(self.kind, self.lx, self.ly)
    }
}

#[derive(Clone, Debug)]
pub struct McConfig {
    pub lattice: LatticeSpec,
    pub model: WeightModel,
    /// Extra factor t_ext^|L| on top of the model weight.
    pub t_ext: f64,
    pub eq_sweeps: usize,
    pub measure_sweeps: usize,
    pub seed: u64,
    /// Record every `measure_stride`-th measurement sweep.
    pub measure_stride: usize,
    pub keep_samples: bool,
}

impl McConfig {
    /// Defaults: 5000 equilibration sweeps (3000 for fermionic purity weights), 3000 measured.
    pub fn new(lattice: LatticeSpec, model: WeightModel) -> Self {
        let eq_sweeps = match &model {
            WeightModel::Fermionic(k) if k.variant() == KitaevVariant::Purity => 3000,
            _ => 5000,
        };
        McConfig {
            lattice,
            model,
            t_ext: 1.0,
            eq_sweeps,
            measure_sweeps: 3000,
            seed: 0,
            measure_stride: 1,
            keep_samples: false,
        }
    }

    pub fn with_sweeps(mut self, eq: usize, measure: usize) -> Self {
        self.eq_sweeps = eq;
        self.measure_sweeps = measure;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.eq_sweeps == 0 || self.measure_sweeps == 0 || self.measure_stride == 0 {
            return Err(Error::Parameter(
                "sweep counts and stride must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.t_ext) {
            return Err(Error::Parameter(format!(
                "t_ext must lie in [0, 1], got {}",
                self.t_ext
            )));
        }
        self.model.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub length: Vec<u32>,
    pub magnetization: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub mean_length: f64,
    pub mean_length_err: f64,
    /// Var(|L|) per plaquette.
    pub var_length_normalized: f64,
    pub var_length_err: f64,
    pub binder_q: f64,
    pub q_err: f64,
    pub acceptance_rate: f64,
    /// Integrated autocorrelation time of M², in recorded measurements.
    pub tau_int: f64,
    pub samples: Option<Samples>,
    pub seed: u64,
}

enum Evaluator {
    /// log W = |L|·per_edge + C(L)·per_cycle
    Local {
        per_edge: f64,
        per_cycle: f64,
    },
    Fermionic(Arc<KitaevWeight>),
    Generic(WeightModel),
}

fn scaled(k: usize, x: f64) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * x
    }
}

/// A face of a trivalent lattice: vertices in cyclic order, `rim[i]` joining
/// `v[i]` to `v[i+1]`, and the third edge `out[i]` at each vertex.
struct Face {
    v: Vec<usize>,
    rim: Vec<usize>,
    out: Vec<usize>,
}

/// Faces for the port-pairing shortcut, or None when some face is degenerate
/// (repeated vertices, or an outside edge returning to the same face).
fn trivalent_faces(lat: &LatticeTorus) -> Option<Vec<Face>> {
    if (0..lat.n_vertices()).any(|v| lat.vertex_edges(v).len() != 3) {
        return None;
    }
    let other = |e: usize, v: usize| {
        let [a, b] = lat.edge(e);
        if a == v {
            b
        } else {
            a
        }
    };
    let mut faces = Vec::with_capacity(lat.n_plaquettes());
    for pl in lat.plaquettes() {
        let m = pl.len();
        let mut v = Vec::with_capacity(m);
        for i in 0..m {
            let (prev, cur) = (lat.edge(pl[(i + m - 1) % m]), lat.edge(pl[i]));
            let shared: Vec<usize> = cur.iter().copied().filter(|x| prev.contains(x)).collect();
            if shared.len() != 1 {
                return None;
            }
            v.push(shared[0]);
        }
        let mut sorted = v.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let mut edges = pl.clone();
        edges.sort_unstable();
        edges.dedup();
        if sorted.len() != m || edges.len() != m {
            return None;
        }
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let rest: Vec<usize> = lat
                .vertex_edges(v[i])
                .iter()
                .copied()
                .filter(|e| !pl.contains(e))
                .collect();
            if rest.len() != 1 || v.contains(&other(rest[0], v[i])) {
                return None;
            }
            out.push(rest[0]);
        }
        faces.push(Face {
            v,
            rim: pl.clone(),
            out,
        });
    }
    Some(faces)
}

/// One Markov chain. Strictly sequential.
pub struct Chain {
    lat: LatticeTorus,
    eval: Evaluator,
    log_t_ext: f64,
    area: f64,
    boundaries: Vec<Vec<usize>>,
    need_cycles: bool,
    faces: Option<Vec<Face>>,
    slot: Vec<usize>,
    sigma: FixedBitSet,
    in_l: Vec<bool>,
    deg: Vec<u8>,
    len: usize,
    verts: usize,
    comps: usize,
    log_w: f64,
    rng: ChaCha8Rng,
    proposed: u64,
    accepted: u64,
    mark: Vec<u32>,
    epoch: u32,
    stack: Vec<usize>,
}

impl Chain {
    pub fn new(cfg: &McConfig) -> Result<Self> {
        cfg.validate()?;
        let (lat, eval) = match &cfg.model {
            WeightModel::Topological { n, t } => (
                cfg.lattice.build()?,
                Evaluator::Local {
                    per_edge: t.ln(),
                    per_cycle: n.ln(),
                },
            ),
            WeightModel::Purity { n, t, p } => {
                let per_edge = decoherence_factor(*p).ln() + 2.0 * t.ln();
                (
                    cfg.lattice.build()?,
                    Evaluator::Local {
                        per_edge,
                        per_cycle: 2.0 * n.ln(),
                    },
                )
            }
            WeightModel::AbelianIndicator => (
                cfg.lattice.build()?,
                Evaluator::Local {
                    per_edge: 0.0,
                    per_cycle: 0.0,
                },
            ),
            WeightModel::Fermionic(k) => {
                let g = &k.geometry.lattice;
                if cfg.lattice != LatticeSpec::new(g.kind(), g.lx(), g.ly()) {
                    return Err(Error::Parameter(
                        "lattice does not match the fermionic weight geometry".into(),
                    ));
                }
                (g.clone(), Evaluator::Fermionic(k.clone()))
            }
            m => (cfg.lattice.build()?, Evaluator::Generic(m.clone())),
        };
        let np = lat.n_plaquettes();
        let boundaries = (0..np)
            .map(|p| {
                lat.boundary(&PlaquetteSpins::from_set(np, &[p]))
                    .edge_list()
            })
            .collect();
        let need_cycles = matches!(eval, Evaluator::Local { per_cycle, .. } if per_cycle != 0.0);
        let faces = if need_cycles {
            trivalent_faces(&lat)
        } else {
            None
        };
        let mut chain = Chain {
            faces,
            slot: vec![0; lat.n_vertices()],
            area: np as f64,
            boundaries,
            need_cycles,
            sigma: FixedBitSet::with_capacity(np),
            in_l: vec![false; lat.n_edges()],
            deg: vec![0; lat.n_vertices()],
            len: 0,
            verts: 0,
            comps: 0,
            log_w: 0.0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            proposed: 0,
            accepted: 0,
            mark: vec![0; lat.n_vertices()],
            epoch: 0,
            stack: Vec::new(),
            log_t_ext: cfg.t_ext.ln(),
            lat,
            eval,
        };
        chain.log_w = chain.current_log_weight()?;
        if chain.log_w == f64::NEG_INFINITY {
            return Err(Error::Parameter(
                "the empty configuration has zero weight".into(),
            ));
        }
        Ok(chain)
    }

    pub fn lattice(&self) -> &LatticeTorus {
        &self.lat
    }

    pub fn spins(&self) -> &FixedBitSet {
        &self.sigma
    }

    pub fn loop_length(&self) -> usize {
        self.len
    }

    pub fn magnetization(&self) -> i64 {
        2 * self.sigma.count_ones(..) as i64 - self.lat.n_plaquettes() as i64
    }

    pub fn log_weight(&self) -> f64 {
        self.log_w
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn current_log_weight(&self) -> Result<f64> {
        let lt = scaled(self.len, self.log_t_ext);
        let lw = match &self.eval {
            Evaluator::Local {
                per_edge,
                per_cycle,
            } => {
                let c = self.len + self.comps - self.verts;
                scaled(self.len, *per_edge)
                    + if self.need_cycles {
                        scaled(c, *per_cycle)
                    } else {
                        0.0
                    }
            }
            Evaluator::Fermionic(k) => k.log_weight_for_spins(&self.sigma, self.len),
            Evaluator::Generic(m) => {
                let mut l = self.lat.empty_config();
                self.in_l
                    .iter()
                    .enumerate()
                    .filter(|e| *e.1)
                    .for_each(|(e, _)| l.edges.insert(e));
                let w = m.evaluate(&self.lat, &l)?;
                if w.sign < 0.0 {
                    return Err(Error::NegativeWeight(w.value()));
                }
                w.log_abs
            }
        };
        Ok(if lw == f64::NEG_INFINITY { lw } else { lw + lt })
    }

    /// log W(L(σ)) from scratch, leaving the chain untouched.
    pub fn log_weight_of(&self, spins: &PlaquetteSpins) -> Result<f64> {
        let l = self.lat.boundary(spins);
        let len = l.len();
        let lt = scaled(len, self.log_t_ext);
        let lw = match &self.eval {
            Evaluator::Local {
                per_edge,
                per_cycle,
            } => scaled(len, *per_edge) + scaled(self.lat.cycle_rank(&l), *per_cycle),
            Evaluator::Fermionic(k) => k.log_weight_for_spins(&spins.sigma, len),
            Evaluator::Generic(m) => {
                let w = m.evaluate(&self.lat, &l)?;
                if w.sign < 0.0 {
                    return Err(Error::NegativeWeight(w.value()));
                }
                w.log_abs
            }
        };
        Ok(if lw == f64::NEG_INFINITY { lw } else { lw + lt })
    }

    fn flip_edges(&mut self, p: usize) {
        for k in 0..self.boundaries[p].len() {
            let e = self.boundaries[p][k];
            let on = !self.in_l[e];
            self.in_l[e] = on;
            if on {
                self.len += 1;
            } else {
                self.len -= 1;
            }
            for v in self.lat.edge(e) {
                if on {
                    if self.deg[v] == 0 {
                        self.verts += 1;
                    }
                    self.deg[v] += 1;
                } else {
                    self.deg[v] -= 1;
                    if self.deg[v] == 0 {
                        self.verts -= 1;
                    }
                }
            }
        }
        self.sigma.toggle(p);
    }

    /// Components of L that touch the boundary of plaquette p.
    fn local_components(&mut self, p: usize) -> usize {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.mark.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
        let mut count = 0;
        for k in 0..self.boundaries[p].len() {
            let e = self.boundaries[p][k];
            for s in self.lat.edge(e) {
                if self.deg[s] == 0 || self.mark[s] == self.epoch {
                    continue;
                }
                count += 1;
                self.mark[s] = self.epoch;
                self.stack.push(s);
                while let Some(u) = self.stack.pop() {
                    for &f in self.lat.vertex_edges(u) {
                        if !self.in_l[f] {
                            continue;
                        }
                        let [a, b] = self.lat.edge(f);
                        let v = if a == u { b } else { a };
                        if self.mark[v] != self.epoch {
                            self.mark[v] = self.epoch;
                            self.stack.push(v);
                        }
                    }
                }
            }
        }
        count
    }

    /// Change in loop count from flipping face p on a trivalent lattice. The loops
    /// through p enter and leave at ports (face vertices whose outside edge is
    /// occupied); rim arcs pair consecutive ports, alternately before and after the
    /// flip, and the outside strands pair them in a way the flip leaves alone.
    /// Loops are the cycles of the two pairings combined.
    fn face_delta_components(&mut self, p: usize) -> isize {
        let faces = self.faces.as_ref().unwrap();
        let f = &faces[p];
        let m = f.v.len();
        let ports: Vec<usize> = (0..m).filter(|&i| self.in_l[f.out[i]]).collect();
        if ports.is_empty() {
            return if self.in_l[f.rim[0]] { -1 } else { 1 };
        }
        let k = ports.len();
        if k == 2 {
            return 0;
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.mark.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
        for (j, &i) in ports.iter().enumerate() {
            self.mark[f.v[i]] = self.epoch;
            self.slot[f.v[i]] = j;
        }
        let mut outside = vec![usize::MAX; k];
        let mut open = k;
        for j in 0..k {
            if outside[j] != usize::MAX {
                continue;
            }
            if open == 2 {
                let partner = (j + 1..k).find(|&x| outside[x] == usize::MAX).unwrap();
                outside[j] = partner;
                outside[partner] = j;
                break;
            }
            let mut prev = f.out[ports[j]];
            let [a, b] = self.lat.edge(prev);
            let mut u = if a == f.v[ports[j]] { b } else { a };
            while self.mark[u] != self.epoch {
                let next = *self
                    .lat
                    .vertex_edges(u)
                    .iter()
                    .find(|&&e| e != prev && self.in_l[e])
                    .unwrap();
                let [a, b] = self.lat.edge(next);
                u = if a == u { b } else { a };
                prev = next;
            }
            let partner = self.slot[u];
            outside[j] = partner;
            outside[partner] = j;
            open -= 2;
        }
        // rim arc leaving port 0 forward means arcs pair (0,1)(2,3)…
        let forward = self.in_l[f.rim[ports[0]]];
        let arcs = |shift: usize| -> Vec<usize> {
            let mut a = vec![0; k];
            for j in (0..k).step_by(2) {
                let (x, y) = ((j + shift) % k, (j + shift + 1) % k);
                a[x] = y;
                a[y] = x;
            }
            a
        };
        let count = |arc: &[usize]| {
            let mut seen = vec![false; k];
            let mut loops = 0;
            for s in 0..k {
                if seen[s] {
                    continue;
                }
                loops += 1;
                let mut x = s;
                loop {
                    seen[x] = true;
                    let y = arc[x];
                    seen[y] = true;
                    x = outside[y];
                    if x == s {
                        break;
                    }
                }
            }
            loops as isize
        };
        let (before, after) = if forward {
            (arcs(0), arcs(1))
        } else {
            (arcs(1), arcs(0))
        };
        count(&after) - count(&before)
    }

    /// Metropolis step on plaquette p. Returns whether the flip was accepted.
    pub fn propose(&mut self, p: usize) -> Result<bool> {
        self.proposed += 1;
        let old_comps = self.comps;
        if self.faces.is_some() {
            let d = self.face_delta_components(p);
            self.flip_edges(p);
            self.comps = (self.comps as isize + d) as usize;
        } else if self.need_cycles {
            let before = self.local_components(p);
            self.flip_edges(p);
            self.comps = self.comps + self.local_components(p) - before;
        } else {
            self.flip_edges(p);
        }
        let new_w = match self.current_log_weight() {
            Ok(w) => w,
            Err(e) => {
                self.flip_edges(p);
                self.comps = old_comps;
                return Err(e);
            }
        };
        let d = new_w - self.log_w;
        let accept = new_w != f64::NEG_INFINITY && (d >= 0.0 || self.rng.random::<f64>() < d.exp());
        if accept {
            self.log_w = new_w;
            self.accepted += 1;
        } else {
            self.flip_edges(p);
            self.comps = old_comps;
        }
        Ok(accept)
    }

    /// F proposals at uniformly random plaquettes.
    pub fn sweep(&mut self) -> Result<()> {
        let np = self.lat.n_plaquettes();
        for _ in 0..np {
            let p = self.rng.random_range(0..np);
            self.propose(p)?;
        }
        Ok(())
    }
}

/// Per-block sums `[count, x, x², y, y²]`.
type BlockSums = [f64; 5];

fn block_sums(xs: &[f64], ys: &[f64]) -> Vec<BlockSums> {
    let n = xs.len();
    let nb = BOOTSTRAP_BLOCKS.min(n).max(1);
    (0..nb)
        .map(|b| {
            let (lo, hi) = (b * n / nb, (b + 1) * n / nb);
            let mut s = [0.0; 5];
            for k in lo..hi {
                s[0] += 1.0;
                s[1] += xs[k];
                s[2] += xs[k] * xs[k];
                s[3] += ys[k];
                s[4] += ys[k] * ys[k];
            }
            s
        })
        .collect()
}

/// Standard errors of `est` by resampling whole blocks with replacement.
fn bootstrap_se<const K: usize>(
    blocks: &[BlockSums],
    seed: u64,
    est: impl Fn(&BlockSums) -> [f64; K],
) -> [f64; K] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut sum = [0.0; K];
    let mut sum2 = [0.0; K];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut acc = [0.0; 5];
        for _ in 0..blocks.len() {
            let b = &blocks[rng.random_range(0..blocks.len())];
            (0..5).for_each(|i| acc[i] += b[i]);
        }
        let v = est(&acc);
        for i in 0..K {
            sum[i] += v[i];
            sum2[i] += v[i] * v[i];
        }
    }
    let r = BOOTSTRAP_RESAMPLES as f64;
    std::array::from_fn(|i| (sum2[i] / r - (sum[i] / r).powi(2)).max(0.0).sqrt())
}

fn binder(m2: f64, m4: f64) -> f64 {
    if m4 > 0.0 {
        (m2 * m2 / m4).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Integrated autocorrelation time with Sokal's self-consistent window (c = 6).
pub fn integrated_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.5;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let c0 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    for t in 1..n {
        let ct = (0..n - t)
            .map(|k| (xs[k] - mean) * (xs[k + t] - mean))
            .sum::<f64>()
            / n as f64;
        tau += ct / c0;
        if t as f64 >= 6.0 * tau {
            break;
        }
    }
    tau.max(0.5)
}

fn summarize(
    lengths: &[f64],
    m: &[f64],
    area: f64,
    seed: u64,
) -> (f64, f64, f64, f64, f64, f64, f64) {
    let m2: Vec<f64> = m.iter().map(|x| x * x).collect();
    let blocks = block_sums(lengths, &m2);
    let est = |s: &BlockSums| {
        let n = s[0];
        let mean = s[1] / n;
        [
            mean,
            (s[2] / n - mean * mean).max(0.0) / area,
            binder(s[3] / n, s[4] / n),
        ]
    };
    let mut all = [0.0; 5];
    blocks
        .iter()
        .for_each(|b| (0..5).for_each(|i| all[i] += b[i]));
    let [mean, var, q] = est(&all);
    let [mean_err, var_err, q_err] = bootstrap_se(&blocks, seed, est);
    (
        mean,
        mean_err,
        var,
        var_err,
        q,
        q_err,
        integrated_autocorrelation(&m2),
    )
}

pub fn run_metropolis(cfg: &McConfig) -> Result<McResult> {
    let mut chain = Chain::new(cfg)?;
    for _ in 0..cfg.eq_sweeps {
        chain.sweep()?;
    }
    let cap = cfg.measure_sweeps / cfg.measure_stride + 1;
    let (mut lengths, mut mags) = (Vec::with_capacity(cap), Vec::with_capacity(cap));
    for s in 0..cfg.measure_sweeps {
        chain.sweep()?;
        if s % cfg.measure_stride == 0 {
            lengths.push(chain.loop_length() as u32);
            mags.push(chain.magnetization());
        }
    }
    let lf: Vec<f64> = lengths.iter().map(|&x| x as f64).collect();
    let mf: Vec<f64> = mags.iter().map(|&x| x as f64).collect();
    let (
        mean_length,
        mean_length_err,
        var_length_normalized,
        var_length_err,
        binder_q,
        q_err,
        tau_int,
    ) = summarize(&lf, &mf, chain.area, cfg.seed);
    Ok(McResult {
        mean_length,
        mean_length_err,
        var_length_normalized,
        var_length_err,
        binder_q,
        q_err,
        acceptance_rate: chain.acceptance_rate(),
        tau_int,
        samples: cfg.keep_samples.then_some(Samples {
            length: lengths,
            magnetization: mags,
        }),
        seed: cfg.seed,
    })
}

/// SplitMix64 of `base` offset by the task index; distinct indices give distinct seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanPoint {
    pub t: f64,
    pub lattice: LatticeSpec,
    pub result: McResult,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Crossing {
    pub small: LatticeSpec,
    pub large: LatticeSpec,
    pub t: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BinderScan {
    pub points: Vec<ScanPoint>,
    pub crossings: Vec<Crossing>,
    /// Mean of the crossings between consecutive sizes.
    pub estimate: Option<f64>,
}

impl BinderScan {
    pub fn curve(&self, lattice: LatticeSpec) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter(|p| p.lattice == lattice)
            .map(|p| (p.t, p.result.binder_q))
            .collect()
    }
}

/// Intersection of two piecewise-linear curves sampled on the same ascending grid.
/// Among several sign changes the steepest one wins.
pub fn crossing_of(a: &[(f64, f64)], b: &[(f64, f64)]) -> Option<f64> {
    let d: Vec<(f64, f64)> = a.iter().zip(b).map(|(x, y)| (x.0, x.1 - y.1)).collect();
    let mut best: Option<(f64, f64)> = None;
    for w in d.windows(2) {
        let ((t0, d0), (t1, d1)) = (w[0], w[1]);
        if d0 == 0.0 && d1 == 0.0 {
            continue;
        }
        if d0 * d1 <= 0.0 {
            let t = t0 + (t1 - t0) * d0 / (d0 - d1);
            let slope = (d1 - d0).abs();
            if best.is_none_or(|(_, s)| slope > s) {
                best = Some((t, slope));
            }
        }
    }
    best.map(|b| b.0)
}

/// Runs `make(t, size, seed)` for every grid point and size in parallel; task
/// seeds derive from `base_seed` and the task index (size-major order).
pub fn binder_scan<F>(
    t_grid: &[f64],
    sizes: &[LatticeSpec],
    base_seed: u64,
    make: F,
) -> Result<BinderScan>
where
    F: Fn(f64, LatticeSpec, u64) -> Result<McConfig> + Sync,
{
    if t_grid.is_empty() || sizes.is_empty() {
        return Err(Error::Parameter(
            "t grid and size list must be nonempty".into(),
        ));
    }
    let mut grid = t_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let tasks: Vec<(f64, LatticeSpec)> = sizes
        .iter()
        .flat_map(|&s| grid.iter().map(move |&t| (t, s)))
        .collect();
    let points = tasks
        .par_iter()
        .enumerate()
        .map(|(i, &(t, lattice))| {
            let cfg = make(t, lattice, derive_seed(base_seed, i as u64))?;
            Ok(ScanPoint {
                t,
                lattice,
                result: run_metropolis(&cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut by_size = sizes.to_vec();
    by_size.sort_by_key(|s| s.lx * s.ly);
    by_size.dedup();
    let mut scan = BinderScan {
        points,
        crossings: Vec::new(),
        estimate: None,
    };
    for w in by_size.windows(2) {
        if let Some(t) = crossing_of(&scan.curve(w[0]), &scan.curve(w[1])) {
            scan.crossings.push(Crossing {
                small: w[0],
                large: w[1],
                t,
            });
        }
    }
    if !scan.crossings.is_empty() {
        scan.estimate =
            Some(scan.crossings.iter().map(|c| c.t).sum::<f64>() / scan.crossings.len() as f64);
    }
    Ok(scan)
}

/// Coulomb-gas coupling g on the dilute branch, from N = −2cos(πg/4), g ∈ [4, 8).
pub fn coulomb_g(n: f64) -> f64 {
    8.0 - 4.0 * (-n / 2.0).acos() / std::f64::consts::PI
}

/// Exponent 2(3 − 16/g) of the correction to Var(|L|)/area at criticality.
pub fn variance_exponent(n: f64) -> f64 {
    2.0 * (3.0 - 16.0 / coulomb_g(n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingClass {
    /// a + b ln ℓ
    DivergentLog,
    /// a + b ℓ^{−2/5}
    SlowApproach,
    /// a + b ℓ^{−2}
    FastApproach,
}

impl ScalingClass {
    pub fn exponent(self) -> f64 {
        match self {
            ScalingClass::DivergentLog => 0.0,
            ScalingClass::SlowApproach => -0.4,
            ScalingClass::FastApproach => -2.0,
        }
    }

    /// The class closest to the predicted exponent for loop weight N.
    pub fn predicted(n: f64) -> Self {
        let y = variance_exponent(n);
        [
            ScalingClass::DivergentLog,
            ScalingClass::SlowApproach,
            ScalingClass::FastApproach,
        ]
        .into_iter()
        .min_by(|a, b| {
            (a.exponent() - y)
                .abs()
                .total_cmp(&(b.exponent() - y).abs())
        })
        .unwrap()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarRow {
    pub lattice: LatticeSpec,
    pub linear_size: f64,
    pub var: f64,
    pub var_err: f64,
    pub result: McResult,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarScaling {
    pub rows: Vec<VarRow>,
    pub predicted_exponent: f64,
    /// Best exponent y of a + b·ℓ^y (y = 0 meaning a + b ln ℓ) on a grid over [−3, 1].
    pub fitted_exponent: Option<f64>,
    /// Weighted χ² of the three candidate forms, in `ScalingClass` order.
    pub class_chi2: Option<[f64; 3]>,
    pub class: Option<ScalingClass>,
    pub fit_error: Option<String>,
}

/// Weighted least squares of v ≈ a + b·x; returns (a, b, χ²).
fn weighted_line(x: &[f64], v: &[f64], w: &[f64]) -> Option<(f64, f64, f64)> {
    let sw: f64 = w.iter().sum();
    let sx: f64 = x.iter().zip(w).map(|(x, w)| w * x).sum::<f64>() / sw;
    let sv: f64 = v.iter().zip(w).map(|(v, w)| w * v).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - sx).powi(2)).sum();
    if sxx <= 0.0 || !sxx.is_finite() {
        return None;
    }
    let sxv: f64 = x
        .iter()
        .zip(v)
        .zip(w)
        .map(|((x, v), w)| w * (x - sx) * (v - sv))
        .sum();
    let b = sxv / sxx;
    let a = sv - b * sx;
    let chi2 = x
        .iter()
        .zip(v)
        .zip(w)
        .map(|((x, v), w)| w * (v - a - b * x).powi(2))
        .sum();
    Some((a, b, chi2))
}

fn scaling_fit(ls: &[f64], v: &[f64], w: &[f64], y: f64) -> Option<(f64, f64, f64)> {
    let x: Vec<f64> = ls
        .iter()
        .map(|l| if y == 0.0 { l.ln() } else { l.powf(y) })
        .collect();
    weighted_line(&x, v, w)
}

/// Var(|L|)/area against linear size ℓ = √F, classified among the three
/// critical forms by weighted χ².
pub fn var_length_scaling<F>(
    sizes: &[LatticeSpec],
    n: f64,
    base_seed: u64,
    make: F,
) -> Result<VarScaling>
where
    F: Fn(LatticeSpec, u64) -> Result<McConfig> + Sync,
{
    let mut distinct = sizes.to_vec();
    distinct.sort_by_key(|s| s.lx * s.ly);
    distinct.dedup_by_key(|s| s.lx * s.ly);
    if distinct.len() < 3 {
        return Err(Error::Parameter(
            "variance scaling needs at least three distinct sizes".into(),
        ));
    }
    let rows = distinct
        .par_iter()
        .enumerate()
        .map(|(i, &lattice)| {
            let cfg = make(lattice, derive_seed(base_seed, i as u64))?;
            let area = Chain::new(&cfg)?.area;
            let result = run_metropolis(&cfg)?;
            Ok(VarRow {
                lattice,
                linear_size: area.sqrt(),
                var: result.var_length_normalized,
                var_err: result.var_length_err,
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ls: Vec<f64> = rows.iter().map(|r| r.linear_size).collect();
    let v: Vec<f64> = rows.iter().map(|r| r.var).collect();
    let floor = v.iter().cloned().fold(0.0, f64::max) * 1e-6 + 1e-300;
    let w: Vec<f64> = rows
        .iter()
        .map(|r| 1.0 / r.var_err.max(floor).powi(2))
        .collect();
    let mut out = VarScaling {
        rows,
        predicted_exponent: variance_exponent(n),
        fitted_exponent: None,
        class_chi2: None,
        class: None,
        fit_error: None,
    };
    let classes = [
        ScalingClass::DivergentLog,
        ScalingClass::SlowApproach,
        ScalingClass::FastApproach,
    ];
    let chi: Option<Vec<f64>> = classes
        .iter()
        .map(|c| scaling_fit(&ls, &v, &w, c.exponent()).map(|f| f.2))
        .collect();
    match chi {
        Some(chi) => {
            let best = (0..3).min_by(|&a, &b| chi[a].total_cmp(&chi[b])).unwrap();
            out.class = Some(classes[best]);
            out.class_chi2 = Some([chi[0], chi[1], chi[2]]);
        }
        None => out.fit_error = Some("degenerate sizes for the scaling fit".into()),
    }
    out.fitted_exponent = (0..=400)
        .map(|k| -3.0 + 0.01 * k as f64)
        .map(|y| if y.abs() < 1e-9 { 0.0 } else { y })
        .filter_map(|y| scaling_fit(&ls, &v, &w, y).map(|f| (y, f.2)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|b| b.0);
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FaceCubicConfig {
    pub lattice: LatticeSpec,
    pub n: usize,
    /// Bond signs η_ij = ±1, one per edge.
    pub eta: Vec<i8>,
    pub eq_sweeps: usize,
    pub measure_sweeps: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceCubicResult {
    pub m2: f64,
    pub m4: f64,
    pub binder_q: f64,
    pub q_err: f64,
    pub acceptance_rate: f64,
    /// Initial conditions discarded for zero weight or lockout.
    pub restarts: usize,
    pub seed: u64,
}

/// i.i.d. bond signs with P(η = −1) = `p_negative`.
pub fn random_eta(n_edges: usize, p_negative: f64, rng: &mut impl Rng) -> Vec<i8> {
    (0..n_edges)
        .map(|_| if rng.random_bool(p_negative) { -1 } else { 1 })
        .collect()
}

/// Bond factor 1 + η S_a·S_b at t = 1/N with S = ±√N e_a, i.e. 0, 1 or 2.
/// Spin state s encodes component s/2 and sign s%2.
fn face_cubic_bond(eta: i8, a: usize, b: usize) -> u8 {
    if a / 2 != b / 2 {
        1
    } else if (a == b) == (eta > 0) {
        2
    } else {
        0
    }
}

fn face_cubic_moments(spins: &[usize], n: usize) -> f64 {
    let mut m = vec![0i64; n];
    for &s in spins {
        m[s / 2] += if s % 2 == 0 { 1 } else { -1 };
    }
    m.iter().map(|&x| (x * x) as f64).sum()
}

/// Exact ⟨M²⟩, ⟨M⁴⟩ of the random-bond face-cubic model by enumeration.
pub fn face_cubic_exact(cfg: &FaceCubicConfig) -> Result<(f64, f64)> {
    let lat = cfg.lattice.build()?;
    let states = 2 * cfg.n;
    let v = lat.n_vertices();
    let total = (states as f64).powi(v as i32);
    if total > (1u64 << 24) as f64 {
        return Err(Error::CapExceeded {
            size: (total.log2().ceil()) as usize,
            cap: 24,
        });
    }
    let mut spins = vec![0usize; v];
    let (mut z, mut m2, mut m4) = (
        NeumaierSum::default(),
        NeumaierSum::default(),
        NeumaierSum::default(),
    );
    for _ in 0..total as u64 {
        let w: f64 = lat
            .edges()
            .iter()
            .zip(&cfg.eta)
            .map(|(&[a, b], &e)| face_cubic_bond(e, spins[a], spins[b]) as f64)
            .product();
        if w > 0.0 {
            let x = face_cubic_moments(&spins, cfg.n);
            z.add(w);
            m2.add(w * x);
            m4.add(w * x * x);
        }
        for s in spins.iter_mut() {
            *s += 1;
            if *s < states {
                break;
            }
            *s = 0;
        }
    }
    Ok((m2.value() / z.value(), m4.value() / z.value()))
}

/// Single-spin Metropolis for `∏_⟨ij⟩ (1 + η_ij S_i·S_j)` at t = 1/N.
pub fn random_bond_face_cubic_mc(cfg: &FaceCubicConfig) -> Result<FaceCubicResult> {
    if cfg.n == 0 {
        return Err(Error::Parameter("N must be at least 1".into()));
    }
    if cfg.eq_sweeps == 0 || cfg.measure_sweeps == 0 {
        return Err(Error::Parameter("sweep counts must be at least 1".into()));
    }
    let lat = cfg.lattice.build()?;
    if cfg.eta.len() != lat.n_edges() || cfg.eta.iter().any(|&e| e != 1 && e != -1) {
        return Err(Error::Parameter("η must hold ±1 for every bond".into()));
    }
    let v = lat.n_vertices();
    let states = 2 * cfg.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bond = |spins: &[usize], e: usize| {
        let [a, b] = lat.edge(e);
        face_cubic_bond(cfg.eta[e], spins[a], spins[b])
    };
    let positive = |spins: &[usize]| (0..lat.n_edges()).all(|e| bond(spins, e) > 0);
    let mut restarts = 0;
    let mut spins: Vec<usize>;
    let (mut proposed, mut accepted) = (0u64, 0u64);
    let mut step = |spins: &mut Vec<usize>, rng: &mut ChaCha8Rng| -> bool {
        let i = rng.random_range(0..v);
        let old = spins[i];
        let mut new = rng.random_range(0..states - 1);
        if new >= old {
            new += 1;
        }
        let mut num = 1.0;
        let mut den = 1.0;
        for &e in lat.vertex_edges(i) {
            den *= bond(spins, e) as f64;
            spins[i] = new;
            num *= bond(spins, e) as f64;
            spins[i] = old;
        }
        proposed += 1;
        if num > 0.0 && (num >= den || rng.random::<f64>() < num / den) {
            spins[i] = new;
            accepted += 1;
            true
        } else {
            false
        }
    };
    'init: loop {
        let mut tries = 0;
        loop {
            spins = (0..v).map(|_| rng.random_range(0..states)).collect();
            if positive(&spins) {
                break;
            }
            restarts += 1;
            tries += 1;
            if tries > 100_000 {
                return Err(Error::Other(
                    "no positive-weight initial state found".into(),
                ));
            }
        }
        if states == 1 {
            break;
        }
        let mut moved = false;
        for _ in 0..v {
            moved |= step(&mut spins, &mut rng);
        }
        if moved || restarts > 1000 {
            break 'init;
        }
        restarts += 1;
    }
    for _ in 1..cfg.eq_sweeps {
        for _ in 0..v {
            step(&mut spins, &mut rng);
        }
    }
    let (mut m2s, mut m4s) = (Vec::new(), Vec::new());
    for _ in 0..cfg.measure_sweeps {
        for _ in 0..v {
            step(&mut spins, &mut rng);
        }
        let x = face_cubic_moments(&spins, cfg.n);
        m2s.push(x);
        m4s.push(x * x);
    }
    let blocks = block_sums(&m2s, &vec![0.0; m2s.len()]);
    let est = |s: &BlockSums| [binder(s[1] / s[0], s[2] / s[0])];
    let n = m2s.len() as f64;
    let m2 = m2s.iter().sum::<f64>() / n;
    let m4 = m4s.iter().sum::<f64>() / n;
    Ok(FaceCubicResult {
        m2,
        m4,
        binder_q: binder(m2, m4),
        q_err: bootstrap_se(&blocks, cfg.seed, est)[0],
        acceptance_rate: accepted as f64 / proposed.max(1) as f64,
        restarts,
        seed: cfg.seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleAgreement {
    pub mean_length_mc: f64,
    pub mean_length_err: f64,
    pub mean_length_exact: f64,
    pub q_mc: f64,
    pub q_err: f64,
    pub q_exact: f64,
    /// Σ_σ W(L(σ)) over all 2^F spin states.
    pub z_spins: f64,
    pub passed: bool,
}

/// Exact ⟨|L|⟩ and Q over the 2^F spin states, with the chain's own weights.
pub fn spin_ensemble_exact(cfg: &McConfig) -> Result<(f64, f64, f64)> {
    let chain = Chain::new(cfg)?;
    let np = chain.lat.n_plaquettes();
    if np > ORACLE_SPIN_CAP {
        return Err(Error::CapExceeded {
            size: np,
            cap: ORACLE_SPIN_CAP,
        });
    }
    let (mut z, mut len, mut m2, mut m4) = (
        NeumaierSum::default(),
        NeumaierSum::default(),
        NeumaierSum::default(),
        NeumaierSum::default(),
    );
    for mask in 0u64..1 << np {
        let mut s = PlaquetteSpins::zeros(np);
        (0..np)
            .filter(|k| mask >> k & 1 == 1)
            .for_each(|k| s.sigma.insert(k));
        let lw = chain.log_weight_of(&s)?;
        if lw == f64::NEG_INFINITY {
            continue;
        }
        let w = lw.exp();
        let l: LoopConfig = chain.lat.boundary(&s);
        let m = 2.0 * mask.count_ones() as f64 - np as f64;
        z.add(w);
        len.add(w * l.len() as f64);
        m2.add(w * m * m);
        m4.add(w * m.powi(4));
    }
    let z = z.value();
    Ok((z, len.value() / z, binder(m2.value() / z, m4.value() / z)))
}

/// Runs the chain and the exact spin-ensemble sum; agreement means both ⟨|L|⟩
/// and Q lie within 3 bootstrap standard errors.
pub fn mc_vs_oracle(cfg: &McConfig) -> Result<OracleAgreement> {
    let (z, mean_exact, q_exact) = spin_ensemble_exact(cfg)?;
    let r = run_metropolis(cfg)?;
    let ok = |mc: f64, err: f64, exact: f64| {
        (mc - exact).abs() <= 3.0 * err + 1e-12 * exact.abs().max(1.0)
    };
    Ok(OracleAgreement {
        passed: ok(r.mean_length, r.mean_length_err, mean_exact)
            && ok(r.binder_q, r.q_err, q_exact),
        mean_length_mc: r.mean_length,
        mean_length_err: r.mean_length_err,
        mean_length_exact: mean_exact,
        q_mc: r.binder_q,
        q_err: r.q_err,
        q_exact,
        z_spins: z,
    })
}
