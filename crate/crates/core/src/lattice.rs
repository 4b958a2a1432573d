//! Periodic lattices and loop configurations.
//!
//! Cells are indexed row-major, `c = j * lx + i`, with `i` the fast index.
//! A torus identifies `(i, j) ~ (i + lx, j)` and `(i, j) ~ (i + shift, j + ly)`;
//! `shift` is zero except for the super-honeycomb embedding.
//!
//! Honeycomb: vertices `A(c) = 2c`, `B(c) = 2c + 1`; edges are oriented A→B,
//! `e0(c) = 3c` to `B(i, j)`, `e1(c) = 3c + 1` to `B(i, j-1)`, `e2(c) = 3c + 2`
//! to `B(i+1, j)`. Plaquette `P(c)` is the hexagon dual to triangular vertex `c`.
//!
//! Square: vertex `c`, edges `h(c) = 2c` to `(i+1, j)` and `v(c) = 2c + 1` to `(i, j+1)`.
//!
//! Triangular: vertex `c`, bonds `h = 3c`, `v = 3c + 1`, `d = 3c + 2` to `(i+1, j+1)`;
//! triangles `2c = {h(i,j), v(i+1,j), d(i,j)}` and `2c + 1 = {v(i,j), h(i,j+1), d(i,j)}`.
//! The honeycomb is its dual: `e0(c) ↔ d(c)`, `e1(c) ↔ h(c)`, `e2(i,j) ↔ v(i+1,j)`,
//! `A(c) ↔ triangle 2c`, `B(c) ↔ triangle 2c + 1`.

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf2::{independent_subset, Gf2Basis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeKind {
    Honeycomb,
    Square,
    Triangular,
    SuperHoneycomb,
}

impl LatticeKind {
    pub fn name(self) -> &'static str {
        match self {
            LatticeKind::Honeycomb => "honeycomb",
            LatticeKind::Square => "square",
            LatticeKind::Triangular => "triangular",
            LatticeKind::SuperHoneycomb => "super-honeycomb",
        }
    }
}

impl std::str::FromStr for LatticeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "honeycomb" => Ok(LatticeKind::Honeycomb),
            "square" => Ok(LatticeKind::Square),
            "triangular" => Ok(LatticeKind::Triangular),
            "super-honeycomb" | "super-honeycomb-embedding" => Ok(LatticeKind::SuperHoneycomb),
            _ => Err(Error::Parameter(format!("unknown lattice kind '{s}'"))),
        }
    }
}

/// Periodic grid of cells with an optional twist.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cells {
    pub lx: usize,
    pub ly: usize,
    pub shift: usize,
}

impl Cells {
    pub fn count(&self) -> usize {
        self.lx * self.ly
    }

    /// Canonical cell index and the number of `(T1, T2)` translations removed.
    pub fn wrap(&self, i: i64, j: i64) -> (usize, [i32; 2]) {
        let (lx, ly) = (self.lx as i64, self.ly as i64);
        let k = j.div_euclid(ly);
        let jj = j - k * ly;
        let i0 = i - k * self.shift as i64;
        let w = i0.div_euclid(lx);
        let ii = i0 - w * lx;
        ((jj * lx + ii) as usize, [w as i32, k as i32])
    }

    pub fn index(&self, i: i64, j: i64) -> usize {
        self.wrap(i, j).0
    }

    pub fn coords(&self, c: usize) -> (i64, i64) {
        ((c % self.lx) as i64, (c / self.lx) as i64)
    }
}

/// Extra geometry for the super-honeycomb embedding.
#[derive(Clone, Debug)]
pub struct SuperEmbedding {
    /// The underlying twisted honeycomb.
    pub base: LatticeTorus,
    /// Base plaquette of each blue plaquette (the removed hexagons).
    pub removed: Vec<usize>,
    /// Base plaquette of each blue vertex.
    pub kept: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct LatticeTorus {
    kind: LatticeKind,
    cells: Cells,
    n_vertices: usize,
    edges: Vec<[usize; 2]>,
    edge_wrap: Vec<[i32; 2]>,
    plaquettes: Vec<Vec<usize>>,
    vertex_edges: Vec<Vec<usize>>,
    edge_plaquettes: Vec<[usize; 2]>,
    embedding: Option<Box<SuperEmbedding>>,
}

/// Edge subset. Closure is checked by the lattice operations that need it.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LoopConfig {
    pub edges: FixedBitSet,
}

impl LoopConfig {
    pub fn empty(n_edges: usize) -> Self {
        LoopConfig {
            edges: FixedBitSet::with_capacity(n_edges),
        }
    }

    pub fn from_edges(n_edges: usize, edges: &[usize]) -> Self {
        let mut l = Self::empty(n_edges);
        for &e in edges {
            l.edges.toggle(e);
        }
        l
    }

    pub fn len(&self) -> usize {
        self.edges.count_ones(..)
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_clear()
    }

    pub fn xor(&self, other: &LoopConfig) -> LoopConfig {
        let mut e = self.edges.clone();
        e.symmetric_difference_with(&other.edges);
        LoopConfig { edges: e }
    }

    pub fn edge_list(&self) -> Vec<usize> {
        self.edges.ones().collect()
    }
}

/// One bit per plaquette.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlaquetteSpins {
    pub sigma: FixedBitSet,
}

impl PlaquetteSpins {
    pub fn zeros(n_plaquettes: usize) -> Self {
        PlaquetteSpins {
            sigma: FixedBitSet::with_capacity(n_plaquettes),
        }
    }

    pub fn from_set(n_plaquettes: usize, up: &[usize]) -> Self {
        let mut s = Self::zeros(n_plaquettes);
        for &p in up {
            s.sigma.insert(p);
        }
        s
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LoopConfigRecord {
    pub kind: LatticeKind,
    pub lx: usize,
    pub ly: usize,
    pub edges: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct EnumerationOptions {
    /// Include the three non-contractible winding sectors.
    pub windings: bool,
    /// Span a GF(2) basis so every configuration appears once. Otherwise the
    /// stream is boundary(σ) over all 2^F plaquette assignments.
    pub distinct: bool,
    /// Maximum number of generators (log2 of the stream length).
    pub cap: usize,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        EnumerationOptions {
            windings: false,
            distinct: false,
            cap: 24,
        }
    }
}

impl EnumerationOptions {
    pub fn distinct() -> Self {
        EnumerationOptions {
            distinct: true,
            ..Default::default()
        }
    }

    pub fn with_windings(mut self) -> Self {
        self.windings = true;
        self
    }
}

fn honeycomb_plaquette(cells: &Cells, i: i64, j: i64) -> Vec<usize> {
    vec![
        3 * cells.index(i, j),
        3 * cells.index(i - 1, j) + 2,
        3 * cells.index(i - 1, j) + 1,
        3 * cells.index(i - 1, j - 1),
        3 * cells.index(i - 1, j - 1) + 2,
        3 * cells.index(i, j) + 1,
    ]
}

impl LatticeTorus {
    pub fn build(kind: LatticeKind, lx: usize, ly: usize) -> Result<Self> {
        if lx == 0 || ly == 0 {
            return Err(Error::Dimensions(format!(
                "{lx}x{ly}: both sizes must be at least 1"
            )));
        }
        match kind {
            LatticeKind::Honeycomb => Ok(Self::honeycomb_twisted(lx, ly, 0)),
            LatticeKind::Square => Ok(Self::square(lx, ly)),
            LatticeKind::Triangular => Ok(Self::triangular(lx, ly)),
            LatticeKind::SuperHoneycomb => Self::super_honeycomb(lx, ly),
        }
    }

    fn assemble(
        kind: LatticeKind,
        cells: Cells,
        n_vertices: usize,
        edges: Vec<[usize; 2]>,
        edge_wrap: Vec<[i32; 2]>,
        plaquettes: Vec<Vec<usize>>,
    ) -> Self {
        let mut vertex_edges = vec![Vec::new(); n_vertices];
        for (e, &[a, b]) in edges.iter().enumerate() {
            vertex_edges[a].push(e);
            vertex_edges[b].push(e);
        }
        let mut slots = vec![Vec::with_capacity(2); edges.len()];
        for (p, pl) in plaquettes.iter().enumerate() {
            for &e in pl {
                slots[e].push(p);
            }
        }
        let edge_plaquettes = slots
            .into_iter()
            .map(|s| {
                [
                    s.first().copied().unwrap_or(usize::MAX),
                    s.get(1).copied().unwrap_or(usize::MAX),
                ]
            })
            .collect();
        LatticeTorus {
            kind,
            cells,
            n_vertices,
            edges,
            edge_wrap,
            plaquettes,
            vertex_edges,
            edge_plaquettes,
            embedding: None,
        }
    }

    /// Honeycomb with torus identification `(i, j) ~ (i + shift, j + ly)`.
    pub fn honeycomb_twisted(lx: usize, ly: usize, shift: usize) -> Self {
        let cells = Cells { lx, ly, shift };
        let n = cells.count();
        let mut edges = Vec::with_capacity(3 * n);
        let mut wraps = Vec::with_capacity(3 * n);
        for c in 0..n {
            let (i, j) = cells.coords(c);
            for (di, dj) in [(0, 0), (0, -1), (1, 0)] {
                let (b, w) = cells.wrap(i + di, j + dj);
                edges.push([2 * c, 2 * b + 1]);
                wraps.push(w);
            }
        }
        let plaquettes = (0..n)
            .map(|c| {
                let (i, j) = cells.coords(c);
                honeycomb_plaquette(&cells, i, j)
            })
            .collect();
        Self::assemble(
            LatticeKind::Honeycomb,
            cells,
            2 * n,
            edges,
            wraps,
            plaquettes,
        )
    }

    fn square(lx: usize, ly: usize) -> Self {
        let cells = Cells { lx, ly, shift: 0 };
        let n = cells.count();
        let mut edges = Vec::with_capacity(2 * n);
        let mut wraps = Vec::with_capacity(2 * n);
        for c in 0..n {
            let (i, j) = cells.coords(c);
            for (di, dj) in [(1, 0), (0, 1)] {
                let (b, w) = cells.wrap(i + di, j + dj);
                edges.push([c, b]);
                wraps.push(w);
            }
        }
        let plaquettes = (0..n)
            .map(|c| {
                let (i, j) = cells.coords(c);
                vec![
                    2 * cells.index(i, j),
                    2 * cells.index(i + 1, j) + 1,
                    2 * cells.index(i, j + 1),
                    2 * cells.index(i, j) + 1,
                ]
            })
            .collect();
        Self::assemble(LatticeKind::Square, cells, n, edges, wraps, plaquettes)
    }

    fn triangular(lx: usize, ly: usize) -> Self {
        let cells = Cells { lx, ly, shift: 0 };
        let n = cells.count();
        let mut edges = Vec::with_capacity(3 * n);
        let mut wraps = Vec::with_capacity(3 * n);
        for c in 0..n {
            let (i, j) = cells.coords(c);
            for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
                let (b, w) = cells.wrap(i + di, j + dj);
                edges.push([c, b]);
                wraps.push(w);
            }
        }
        let mut plaquettes = Vec::with_capacity(2 * n);
        for c in 0..n {
            let (i, j) = cells.coords(c);
            plaquettes.push(vec![3 * c, 3 * cells.index(i + 1, j) + 1, 3 * c + 2]);
            plaquettes.push(vec![3 * c + 1, 3 * cells.index(i, j + 1), 3 * c + 2]);
        }
        Self::assemble(LatticeKind::Triangular, cells, n, edges, wraps, plaquettes)
    }

    fn super_honeycomb(lx: usize, ly: usize) -> Result<Self> {
        if lx % 6 != 0 || ly % 2 != 0 {
            return Err(Error::Dimensions(format!(
                "super-honeycomb needs lx divisible by 6 and ly even, got {lx}x{ly}"
            )));
        }
        let base = Self::honeycomb_twisted(lx, ly, ly / 2);
        let cells = base.cells;
        let n = cells.count();
        let is_removed = |c: usize| {
            let (i, j) = cells.coords(c);
            (i + j) % 3 == 0
        };
        let mut blue_vertex = vec![usize::MAX; n];
        let mut kept = Vec::new();
        let mut removed = Vec::new();
        for c in 0..n {
            if is_removed(c) {
                removed.push(c);
            } else {
                blue_vertex[c] = kept.len();
                kept.push(c);
            }
        }
        // Blue edge c is the A site of cell c; it joins the two kept hexagons among
        // P(i,j), P(i+1,j), P(i+1,j+1).
        let mut edges = Vec::with_capacity(n);
        let mut wraps = Vec::with_capacity(n);
        for c in 0..n {
            let (i, j) = cells.coords(c);
            let ends: Vec<(usize, [i32; 2])> = [(i, j), (i + 1, j), (i + 1, j + 1)]
                .iter()
                .map(|&(a, b)| cells.wrap(a, b))
                .filter(|&(p, _)| !is_removed(p))
                .collect();
            debug_assert_eq!(ends.len(), 2);
            edges.push([blue_vertex[ends[0].0], blue_vertex[ends[1].0]]);
            wraps.push([ends[1].1[0] - ends[0].1[0], ends[1].1[1] - ends[0].1[1]]);
        }
        let plaquettes = removed
            .iter()
            .map(|&r| {
                let (i, j) = cells.coords(r);
                vec![
                    cells.index(i, j),
                    cells.index(i, j + 1),
                    cells.index(i - 1, j),
                    cells.index(i - 2, j - 1),
                    cells.index(i - 1, j - 1),
                    cells.index(i, j - 1),
                ]
            })
            .collect();
        let mut lat = Self::assemble(
            LatticeKind::SuperHoneycomb,
            cells,
            kept.len(),
            edges,
            wraps,
            plaquettes,
        );
        lat.embedding = Some(Box::new(SuperEmbedding {
            base,
            removed,
            kept,
        }));
        Ok(lat)
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn cells(&self) -> Cells {
        self.cells
    }

    pub fn lx(&self) -> usize {
        self.cells.lx
    }

    pub fn ly(&self) -> usize {
        self.cells.ly
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_plaquettes(&self) -> usize {
        self.plaquettes.len()
    }

    pub fn edge(&self, e: usize) -> [usize; 2] {
        self.edges[e]
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn edge_wrap(&self, e: usize) -> [i32; 2] {
        self.edge_wrap[e]
    }

    pub fn plaquette(&self, p: usize) -> &[usize] {
        &self.plaquettes[p]
    }

    pub fn plaquettes(&self) -> &[Vec<usize>] {
        &self.plaquettes
    }

    pub fn vertex_edges(&self, v: usize) -> &[usize] {
        &self.vertex_edges[v]
    }

    pub fn edge_plaquettes(&self, e: usize) -> [usize; 2] {
        self.edge_plaquettes[e]
    }

    pub fn embedding(&self) -> Option<&SuperEmbedding> {
        self.embedding.as_deref()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices as i64 - self.edges.len() as i64 + self.plaquettes.len() as i64
    }

    /// Dual vertex of a plaquette. Plaquettes and dual vertices share indices.
    pub fn dual_vertex(&self, p: usize) -> usize {
        p
    }

    /// Edge of the dual lattice crossing `e`: honeycomb ↔ triangular, square ↔ square.
    pub fn dual_edge(&self, e: usize) -> Option<usize> {
        let cells = self.cells;
        match self.kind {
            LatticeKind::Honeycomb if cells.shift == 0 => {
                let c = e / 3;
                let (i, j) = cells.coords(c);
                Some(match e % 3 {
                    0 => 3 * c + 2,
                    1 => 3 * c,
                    _ => 3 * cells.index(i + 1, j) + 1,
                })
            }
            LatticeKind::Triangular => {
                let c = e / 3;
                let (i, j) = cells.coords(c);
                Some(match e % 3 {
                    0 => 3 * c + 1,
                    1 => 3 * cells.index(i - 1, j) + 2,
                    _ => 3 * c,
                })
            }
            LatticeKind::Square => {
                let c = e / 2;
                let (i, j) = cells.coords(c);
                Some(if e % 2 == 0 {
                    2 * cells.index(i, j - 1) + 1
                } else {
                    2 * cells.index(i - 1, j)
                })
            }
            _ => None,
        }
    }

    /// Check the torus invariants; returns a description of the first violation.
    pub fn validate(&self) -> Result<()> {
        for (e, slots) in self.edge_plaquettes.iter().enumerate() {
            if slots.contains(&usize::MAX) {
                return Err(Error::Other(format!(
                    "edge {e} does not border two plaquettes"
                )));
            }
        }
        let count = |e: usize| {
            self.plaquettes
                .iter()
                .flatten()
                .filter(|&&x| x == e)
                .count()
        };
        if let Some(e) = (0..self.edges.len()).find(|&e| count(e) != 2) {
            return Err(Error::Other(format!(
                "edge {e} appears {} times in plaquettes",
                count(e)
            )));
        }
        let want = match self.kind {
            LatticeKind::Honeycomb | LatticeKind::SuperHoneycomb => 3,
            LatticeKind::Square => 4,
            LatticeKind::Triangular => 6,
        };
        for v in 0..self.n_vertices {
            if self.vertex_edges[v].len() != want {
                return Err(Error::Other(format!(
                    "vertex {v} has degree {}",
                    self.vertex_edges[v].len()
                )));
            }
        }
        for (p, pl) in self.plaquettes.iter().enumerate() {
            for k in 0..pl.len() {
                let a = self.edges[pl[k]];
                let b = self.edges[pl[(k + 1) % pl.len()]];
                if !a.iter().any(|x| b.contains(x)) {
                    return Err(Error::Other(format!("plaquette {p} is not a closed face")));
                }
            }
            let mut w = [0i32; 2];
            for &e in pl {
                w[0] += self.edge_wrap[e][0];
                w[1] += self.edge_wrap[e][1];
            }
            if w[0] % 2 != 0 || w[1] % 2 != 0 {
                return Err(Error::Other(format!("plaquette {p} has odd winding")));
            }
        }
        if self.euler_characteristic() != 0 {
            return Err(Error::Other("Euler characteristic is not zero".into()));
        }
        Ok(())
    }

    pub fn empty_config(&self) -> LoopConfig {
        LoopConfig::empty(self.edges.len())
    }

    pub fn config(&self, edges: &[usize]) -> LoopConfig {
        LoopConfig::from_edges(self.edges.len(), edges)
    }

    pub fn plaquette_boundary(&self, p: usize) -> LoopConfig {
        self.config(&self.plaquettes[p])
    }

    /// Symmetric difference of the boundaries of all up plaquettes.
    pub fn boundary(&self, spins: &PlaquetteSpins) -> LoopConfig {
        let mut l = self.empty_config();
        for p in spins.sigma.ones() {
            for &e in &self.plaquettes[p] {
                l.edges.toggle(e);
            }
        }
        l
    }

    /// Boundary (mod 2) of an arbitrary edge set, as a vertex bitset.
    pub fn vertex_boundary(&self, l: &LoopConfig) -> FixedBitSet {
        let mut b = FixedBitSet::with_capacity(self.n_vertices);
        for e in l.edges.ones() {
            let [u, v] = self.edges[e];
            b.toggle(u);
            b.toggle(v);
        }
        b
    }

    pub fn is_closed(&self, l: &LoopConfig) -> bool {
        self.vertex_boundary(l).is_clear()
    }

    fn check_closed(&self, l: &LoopConfig) -> Result<()> {
        match self.vertex_boundary(l).ones().next() {
            Some(v) => Err(Error::NotClosed { vertex: v }),
            None => Ok(()),
        }
    }

    /// (touched vertices, connected components) of the edge-induced subgraph.
    pub fn subgraph_stats(&self, l: &LoopConfig) -> (usize, usize) {
        let mut parent: Vec<usize> = (0..self.n_vertices).collect();
        let mut touched = FixedBitSet::with_capacity(self.n_vertices);
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut comps = 0usize;
        for e in l.edges.ones() {
            let [u, v] = self.edges[e];
            for w in [u, v] {
                if !touched.put(w) {
                    comps += 1;
                }
            }
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru != rv {
                parent[ru] = rv;
                comps -= 1;
            }
        }
        (touched.count_ones(..), comps)
    }

    pub fn components(&self, l: &LoopConfig) -> Result<usize> {
        self.check_closed(l)?;
        Ok(self.subgraph_stats(l).1)
    }

    /// Cycle rank E − V + components of the edge-induced subgraph, no closure check.
    pub fn cycle_rank(&self, l: &LoopConfig) -> usize {
        let (v, c) = self.subgraph_stats(l);
        l.len() + c - v
    }

    pub fn cyclomatic_number(&self, l: &LoopConfig) -> Result<usize> {
        self.check_closed(l)?;
        Ok(self.cycle_rank(l))
    }

    /// Winding parities of a closed configuration along (T1, T2).
    pub fn winding(&self, l: &LoopConfig) -> [bool; 2] {
        let mut w = [false; 2];
        for e in l.edges.ones() {
            w[0] ^= self.edge_wrap[e][0] % 2 != 0;
            w[1] ^= self.edge_wrap[e][1] % 2 != 0;
        }
        w
    }

    /// Two closed configurations with windings (1,0) and (0,1).
    pub fn reference_cycles(&self) -> [LoopConfig; 2] {
        let n = self.n_vertices;
        let mut parent_edge = vec![usize::MAX; n];
        let mut parent = vec![usize::MAX; n];
        let mut pot = vec![[0i64; 2]; n];
        let mut seen = FixedBitSet::with_capacity(n);
        let mut tree = FixedBitSet::with_capacity(self.edges.len());
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen.insert(0);
        while let Some(u) = queue.pop_front() {
            for &e in &self.vertex_edges[u] {
                let [a, b] = self.edges[e];
                let (v, sgn) = if a == u { (b, 1) } else { (a, -1) };
                if seen.put(v) {
                    continue;
                }
                tree.insert(e);
                parent_edge[v] = e;
                parent[v] = u;
                let w = self.edge_wrap[e];
                pot[v] = [pot[u][0] + sgn * w[0] as i64, pot[u][1] + sgn * w[1] as i64];
                queue.push_back(v);
            }
        }
        let path_to_root = |mut v: usize, l: &mut LoopConfig| {
            while parent[v] != usize::MAX {
                l.edges.toggle(parent_edge[v]);
                v = parent[v];
            }
        };
        let mut found: Vec<([bool; 2], LoopConfig)> = Vec::new();
        for e in 0..self.edges.len() {
            if tree.contains(e) {
                continue;
            }
            let [a, b] = self.edges[e];
            let w = self.edge_wrap[e];
            let h = [
                pot[a][0] + w[0] as i64 - pot[b][0],
                pot[a][1] + w[1] as i64 - pot[b][1],
            ];
            let h = [h[0].rem_euclid(2) == 1, h[1].rem_euclid(2) == 1];
            if h == [false, false] {
                continue;
            }
            let mut l = self.empty_config();
            l.edges.toggle(e);
            path_to_root(a, &mut l);
            path_to_root(b, &mut l);
            found.push((h, l));
        }
        let pick = |target: [bool; 2]| -> LoopConfig {
            if let Some((_, l)) = found.iter().find(|(h, _)| *h == target) {
                return l.clone();
            }
            for (h1, l1) in &found {
                for (h2, l2) in &found {
                    if [h1[0] ^ h2[0], h1[1] ^ h2[1]] == target {
                        return l1.xor(l2);
                    }
                }
            }
            unreachable!("torus has both winding classes")
        };
        [pick([true, false]), pick([false, true])]
    }

    fn generators(&self, opts: &EnumerationOptions) -> Vec<FixedBitSet> {
        let mut gens: Vec<FixedBitSet> = (0..self.plaquettes.len())
            .map(|p| self.plaquette_boundary(p).edges)
            .collect();
        if opts.distinct {
            gens = independent_subset(&gens);
        }
        if opts.windings {
            let [r1, r2] = self.reference_cycles();
            gens.push(r1.edges);
            gens.push(r2.edges);
        }
        gens
    }

    /// Visit every configuration of the requested stream; returns the count.
    pub fn visit_loop_configs(
        &self,
        opts: EnumerationOptions,
        mut f: impl FnMut(&LoopConfig),
    ) -> Result<u64> {
        let gens = self.generators(&opts);
        if gens.len() > opts.cap {
            return Err(Error::CapExceeded {
                size: gens.len(),
                cap: opts.cap,
            });
        }
        let mut l = self.empty_config();
        f(&l);
        let total = 1u64 << gens.len();
        for k in 1..total {
            l.edges
                .symmetric_difference_with(&gens[k.trailing_zeros() as usize]);
            f(&l);
        }
        Ok(total)
    }

    pub fn loop_configs(&self, opts: EnumerationOptions) -> Result<Vec<LoopConfig>> {
        let mut out = Vec::new();
        self.visit_loop_configs(opts, |l| out.push(l.clone()))?;
        Ok(out)
    }

    /// Basis of the space of boundaries (contractible closed configurations).
    pub fn boundary_basis(&self) -> Gf2Basis {
        let mut b = Gf2Basis::new();
        for p in 0..self.plaquettes.len() {
            b.insert(&self.plaquette_boundary(p).edges);
        }
        b
    }

    /// Green shadow of a red flux loop. `self` is an untwisted honeycomb read as
    /// the dual of the triangular lattice; the result lives on `square(lx, ly)`.
    ///
    /// Per triangle with bonds (x, y, z) and x·y = z, a red pair {x,y} or {y,z}
    /// constrains x to the centralizer; {x,z} constrains nothing.
    pub fn shadow(&self, l: &LoopConfig) -> Result<LoopConfig> {
        if self.kind != LatticeKind::Honeycomb || self.cells.shift != 0 {
            return Err(Error::Parameter(
                "shadow needs an untwisted honeycomb".into(),
            ));
        }
        let cells = self.cells;
        let mut out = LoopConfig::empty(2 * cells.count());
        for c in 0..cells.count() {
            let (i, j) = cells.coords(c);
            // A(c) is triangle 2c: x = h(c) = e1(c), y = v(i+1,j) = e2(c), z = d(c) = e0(c).
            // B(c) is triangle 2c+1: x = v(c) = e2(i-1,j), y = h(i,j+1) = e1(i,j+1), z = e0(c).
            let tri = [
                (2 * c, [3 * c + 1, 3 * c + 2, 3 * c], 2 * c),
                (
                    2 * c + 1,
                    [
                        3 * cells.index(i - 1, j) + 2,
                        3 * cells.index(i, j + 1) + 1,
                        3 * c,
                    ],
                    2 * c + 1,
                ),
            ];
            for (t, [x, y, z], sq) in tri {
                let r = [
                    l.edges.contains(x),
                    l.edges.contains(y),
                    l.edges.contains(z),
                ];
                match r.iter().filter(|&&b| b).count() {
                    0 => {}
                    2 => {
                        if r[1] {
                            out.edges.insert(sq);
                        }
                    }
                    3 => return Err(Error::Branched { triangle: t }),
                    _ => return Err(Error::NotClosed { vertex: t }),
                }
            }
        }
        Ok(out)
    }

    pub fn record(&self, l: &LoopConfig) -> LoopConfigRecord {
        LoopConfigRecord {
            kind: self.kind,
            lx: self.cells.lx,
            ly: self.cells.ly,
            edges: l.edge_list(),
        }
    }

    pub fn from_record(&self, r: &LoopConfigRecord) -> Result<LoopConfig> {
        if r.kind != self.kind || r.lx != self.cells.lx || r.ly != self.cells.ly {
            return Err(Error::Parameter(
                "record belongs to a different lattice".into(),
            ));
        }
        if let Some(&e) = r.edges.iter().find(|&&e| e >= self.edges.len()) {
            return Err(Error::Parameter(format!("edge index {e} out of range")));
        }
        Ok(self.config(&r.edges))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_invariants() {
        for kind in [
            LatticeKind::Honeycomb,
            LatticeKind::Square,
            LatticeKind::Triangular,
        ] {
            for (lx, ly) in [(1, 1), (2, 3), (4, 4)] {
                let lat = LatticeTorus::build(kind, lx, ly).unwrap();
                lat.validate().unwrap();
            }
        }
        let sq = LatticeTorus::build(LatticeKind::Square, 4, 4).unwrap();
        assert_eq!(
            (sq.n_vertices(), sq.n_edges(), sq.n_plaquettes()),
            (16, 32, 16)
        );
        let hc = LatticeTorus::build(LatticeKind::Honeycomb, 1, 1).unwrap();
        assert_eq!(
            (hc.n_vertices(), hc.n_edges(), hc.n_plaquettes()),
            (2, 3, 1)
        );
    }

    #[test]
    fn super_honeycomb_dimensions() {
        let s = LatticeTorus::build(LatticeKind::SuperHoneycomb, 6, 2).unwrap();
        s.validate().unwrap();
        assert_eq!((s.n_vertices(), s.n_edges(), s.n_plaquettes()), (8, 12, 4));
        assert!(LatticeTorus::build(LatticeKind::SuperHoneycomb, 4, 2).is_err());
        assert!(LatticeTorus::build(LatticeKind::SuperHoneycomb, 6, 3).is_err());
        LatticeTorus::build(LatticeKind::SuperHoneycomb, 12, 6)
            .unwrap()
            .validate()
            .unwrap();
    }

    #[test]
    fn boundaries() {
        let hc = LatticeTorus::build(LatticeKind::Honeycomb, 4, 4).unwrap();
        assert!(hc.boundary(&PlaquetteSpins::zeros(16)).is_empty());
        assert_eq!(hc.boundary(&PlaquetteSpins::from_set(16, &[5])).len(), 6);
        assert_eq!(
            hc.boundary(&PlaquetteSpins::from_set(16, &[5, 6])).len(),
            10
        );
        let two = hc.boundary(&PlaquetteSpins::from_set(16, &[0, 10]));
        assert_eq!(hc.components(&two).unwrap(), 2);
        assert_eq!(hc.components(&hc.empty_config()).unwrap(), 0);
        assert_eq!(hc.components(&hc.plaquette_boundary(3)).unwrap(), 1);
        assert!(hc.components(&hc.config(&[0])).is_err());
    }

    #[test]
    fn square_cyclomatic() {
        let sq = LatticeTorus::build(LatticeKind::Square, 4, 4).unwrap();
        assert_eq!(sq.cyclomatic_number(&sq.plaquette_boundary(0)).unwrap(), 1);
        // plaquettes (0,0) and (1,1) share the vertex (1,1)
        let eight = sq.boundary(&PlaquetteSpins::from_set(16, &[0, 5]));
        assert_eq!(sq.subgraph_stats(&eight), (7, 1));
        assert_eq!(sq.cyclomatic_number(&eight).unwrap(), 2);
    }

    #[test]
    fn enumeration_sizes() {
        let sq = LatticeTorus::build(LatticeKind::Square, 2, 2).unwrap();
        assert_eq!(
            sq.loop_configs(EnumerationOptions::default())
                .unwrap()
                .len(),
            16
        );
        assert_eq!(
            sq.loop_configs(EnumerationOptions::default().with_windings())
                .unwrap()
                .len(),
            64
        );
        assert_eq!(
            sq.loop_configs(EnumerationOptions::distinct())
                .unwrap()
                .len(),
            8
        );
        assert_eq!(
            sq.loop_configs(EnumerationOptions::distinct().with_windings())
                .unwrap()
                .len(),
            32
        );
        let hc = LatticeTorus::build(LatticeKind::Honeycomb, 1, 1).unwrap();
        let all = hc.loop_configs(EnumerationOptions::default()).unwrap();
        // the lone hexagon borders itself along every edge, so its boundary cancels
        assert_eq!(all.len(), 2);
        assert!(all.iter().all(|l| l.is_empty()));
        let big = LatticeTorus::build(LatticeKind::Square, 5, 5).unwrap();
        assert!(matches!(
            big.visit_loop_configs(EnumerationOptions::default(), |_| {}),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn reference_cycles_wind() {
        for kind in [
            LatticeKind::Honeycomb,
            LatticeKind::Square,
            LatticeKind::Triangular,
        ] {
            let lat = LatticeTorus::build(kind, 3, 2).unwrap();
            let [r1, r2] = lat.reference_cycles();
            assert!(lat.is_closed(&r1) && lat.is_closed(&r2));
            assert_eq!(lat.winding(&r1), [true, false]);
            assert_eq!(lat.winding(&r2), [false, true]);
        }
        let s = LatticeTorus::build(LatticeKind::SuperHoneycomb, 6, 4).unwrap();
        let [r1, r2] = s.reference_cycles();
        assert_eq!(
            (s.winding(&r1), s.winding(&r2)),
            ([true, false], [false, true])
        );
    }

    #[test]
    fn duality_maps() {
        let hc = LatticeTorus::build(LatticeKind::Honeycomb, 3, 4).unwrap();
        let tri = LatticeTorus::build(LatticeKind::Triangular, 3, 4).unwrap();
        for e in 0..hc.n_edges() {
            let b = hc.dual_edge(e).unwrap();
            assert_eq!(tri.dual_edge(b), Some(e));
            // the dual bond joins the two hexagons that share e
            let mut ends = tri.edge(b);
            let mut ps = hc.edge_plaquettes(e);
            ends.sort();
            ps.sort();
            assert_eq!(ends, ps);
        }
        let sq = LatticeTorus::build(LatticeKind::Square, 3, 4).unwrap();
        for e in 0..sq.n_edges() {
            let mut ends = sq.edge(sq.dual_edge(e).unwrap());
            let mut ps = sq.edge_plaquettes(e);
            ends.sort();
            ps.sort();
            assert_eq!(ends, ps);
        }
    }

    #[test]
    fn shadow_of_elementary_loop() {
        let hc = LatticeTorus::build(LatticeKind::Honeycomb, 4, 4).unwrap();
        let sq = LatticeTorus::build(LatticeKind::Square, 4, 4).unwrap();
        let red = hc.plaquette_boundary(hc.cells().index(2, 2));
        let s = hc.shadow(&red).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(sq.cyclomatic_number(&s).unwrap(), 1);
        assert!(hc.shadow(&hc.empty_config()).unwrap().is_empty());
        let open = hc.config(&[0]);
        assert!(hc.shadow(&open).is_err());
        // three red bonds at one A vertex
        assert!(matches!(
            hc.shadow(&hc.config(&[0, 1, 2])),
            Err(Error::Branched { .. })
        ));
    }

    #[test]
    fn record_round_trip() {
        let hc = LatticeTorus::build(LatticeKind::Honeycomb, 2, 2).unwrap();
        let l = hc.plaquette_boundary(1);
        let json = serde_json::to_string(&hc.record(&l)).unwrap();
        let back: LoopConfigRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(hc.from_record(&back).unwrap(), l);
    }
}
