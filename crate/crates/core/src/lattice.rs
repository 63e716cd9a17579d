//! Hypercubic lattices: the periodic torus (ℤ/Lℤ)^d and boxes with a fixed
//! boundary layer.
//!
//! Edges are stored once, positively oriented, as (base vertex, direction).
//! Directions are 0-based in memory and 1-based in serialised tuples. Edges
//! and plaquettes are enumerated in lexicographic order of (base, direction).
//!
//! Box-like lattices hold two edge classes. Interior edges have both endpoints
//! in the box; boundary edges have exactly one endpoint outside it. Plaquette
//! slots that reference an edge outside both classes are `None`; the field
//! there is frozen at the identity.

use std::collections::HashMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// (ℤ/Lℤ)^d.
    Torus,
    /// Q_L = [−L, L]^d.
    Box,
    /// [0, L]^d; `Block` with L = 1 is the single-cell box.
    Block,
}

/// Which plaquettes a box-like lattice keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaquetteRule {
    /// Every plaquette containing at least one interior edge.
    #[default]
    TouchesInterior,
    /// Only plaquettes whose four edges are all interior or boundary edges.
    /// Under this rule no plaquette contains a boundary edge, so boundary
    /// data enters only through the mass term.
    ClosureOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub dim: usize,
    pub side: usize,
    pub topology: Topology,
}

impl LatticeSpec {
    pub fn torus(dim: usize, side: usize) -> Self {
        Self { dim, side, topology: Topology::Torus }
    }

    pub fn cube(dim: usize, side: usize) -> Self {
        Self { dim, side, topology: Topology::Box }
    }

    pub fn block(dim: usize, side: usize) -> Self {
        Self { dim, side, topology: Topology::Block }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(invalid("dim", format!("d must be >= 2, got {}", self.dim)));
        }
        if self.side < 1 {
            return Err(invalid("side", "L must be >= 1"));
        }
        Ok(())
    }

    pub fn is_torus(&self) -> bool {
        self.topology == Topology::Torus
    }

    /// Inclusive vertex range [lo, hi] of a box-like lattice.
    fn extent(&self) -> (i64, i64) {
        let l = self.side as i64;
        match self.topology {
            Topology::Box => (-l, l),
            Topology::Block => (0, l),
            Topology::Torus => (0, l - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId {
    pub base: Vec<i64>,
    pub dir: usize,
}

impl EdgeId {
    pub fn new(base: Vec<i64>, dir: usize) -> Self {
        Self { base, dir }
    }

    pub fn head(&self) -> Vec<i64> {
        let mut h = self.base.clone();
        h[self.dir] += 1;
        h
    }
}

impl Serialize for EdgeId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut t = self.base.clone();
        t.push(self.dir as i64 + 1);
        t.serialize(s)
    }
}

impl<'de> Deserialize<'de> for EdgeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut t: Vec<i64> = Vec::deserialize(d)?;
        let dir = t.pop().ok_or_else(|| D::Error::custom("empty edge tuple"))?;
        if dir < 1 || dir as usize > t.len() {
            return Err(D::Error::custom(format!("direction {dir} out of range 1..={}", t.len())));
        }
        Ok(EdgeId { base: t, dir: dir as usize - 1 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlaquetteId {
    pub base: Vec<i64>,
    pub i: usize,
    pub j: usize,
}

impl PlaquetteId {
    /// e₁ = (a, a+e_i), e₂ = (a+e_i, a+e_i+e_j), e₃ = (a+e_j, a+e_i+e_j), e₄ = (a, a+e_j).
    pub fn edges(&self) -> [EdgeId; 4] {
        let mut ai = self.base.clone();
        ai[self.i] += 1;
        let mut aj = self.base.clone();
        aj[self.j] += 1;
        [
            EdgeId::new(self.base.clone(), self.i),
            EdgeId::new(ai, self.j),
            EdgeId::new(aj, self.i),
            EdgeId::new(self.base.clone(), self.j),
        ]
    }
}

/// Slots 0 and 1 enter the holonomy forward, slots 2 and 3 inverted.
pub const SLOT_SIGN: [f64; 4] = [1.0, 1.0, -1.0, -1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Interior,
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plaquette {
    pub id: PlaquetteId,
    pub slots: [Option<usize>; 4],
}

#[derive(Debug, Clone)]
pub struct Lattice {
    spec: LatticeSpec,
    rule: PlaquetteRule,
    edges: Vec<EdgeId>,
    kinds: Vec<EdgeKind>,
    index: HashMap<EdgeId, usize>,
    plaquettes: Vec<Plaquette>,
    incidence: Vec<Vec<(usize, usize)>>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
}

/// All points of [lo, hi]^d in lexicographic order.
fn grid_points(dim: usize, lo: i64, hi: i64) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    if hi < lo {
        return out;
    }
    let mut p = vec![lo; dim];
    loop {
        out.push(p.clone());
        let mut k = dim;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if p[k] < hi {
                p[k] += 1;
                for q in p.iter_mut().skip(k + 1) {
                    *q = lo;
                }
                break;
            }
        }
    }
}

impl Lattice {
    pub fn new(spec: LatticeSpec) -> Result<Self> {
        Self::with_rule(spec, PlaquetteRule::default())
    }

    pub fn with_rule(spec: LatticeSpec, rule: PlaquetteRule) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let (lo, hi) = spec.extent();
        let mut edges: Vec<(EdgeId, EdgeKind)> = Vec::new();
        if spec.is_torus() {
            for a in grid_points(d, lo, hi) {
                for i in 0..d {
                    edges.push((EdgeId::new(a.clone(), i), EdgeKind::Interior));
                }
            }
        } else {
            for a in grid_points(d, lo, hi) {
                for i in 0..d {
                    let kind = if a[i] < hi { EdgeKind::Interior } else { EdgeKind::Boundary };
                    edges.push((EdgeId::new(a.clone(), i), kind));
                    if a[i] == lo {
                        let mut b = a.clone();
                        b[i] -= 1;
                        edges.push((EdgeId::new(b, i), EdgeKind::Boundary));
                    }
                }
            }
            edges.sort_by(|x, y| x.0.cmp(&y.0));
        }
        let kinds: Vec<EdgeKind> = edges.iter().map(|e| e.1).collect();
        let edges: Vec<EdgeId> = edges.into_iter().map(|e| e.0).collect();
        let index: HashMap<EdgeId, usize> = edges.iter().cloned().enumerate().map(|(k, e)| (e, k)).collect();

        let mut lat = Lattice {
            spec,
            rule,
            edges,
            kinds,
            index,
            plaquettes: Vec::new(),
            incidence: Vec::new(),
            interior: Vec::new(),
            boundary: Vec::new(),
        };

        let bases = if spec.is_torus() { grid_points(d, lo, hi) } else { grid_points(d, lo - 1, hi) };
        let mut plaquettes = Vec::new();
        for a in bases {
            for i in 0..d {
                for j in i + 1..d {
                    let id = PlaquetteId { base: a.clone(), i, j };
                    let slots = id.edges().map(|e| lat.edge_index(&e));
                    let keep = if spec.is_torus() {
                        true
                    } else {
                        match rule {
                            PlaquetteRule::TouchesInterior => {
                                slots.iter().any(|s| matches!(s, Some(k) if lat.kinds[*k] == EdgeKind::Interior))
                            }
                            PlaquetteRule::ClosureOnly => slots.iter().all(|s| s.is_some()),
                        }
                    };
                    if keep {
                        plaquettes.push(Plaquette { id, slots });
                    }
                }
            }
        }
        let mut incidence = vec![Vec::new(); lat.edges.len()];
        for (p, pl) in plaquettes.iter().enumerate() {
            for (s, slot) in pl.slots.iter().enumerate() {
                if let Some(e) = slot {
                    incidence[*e].push((p, s));
                }
            }
        }
        lat.interior = (0..lat.edges.len()).filter(|&k| lat.kinds[k] == EdgeKind::Interior).collect();
        lat.boundary = (0..lat.edges.len()).filter(|&k| lat.kinds[k] == EdgeKind::Boundary).collect();
        lat.plaquettes = plaquettes;
        lat.incidence = incidence;
        Ok(lat)
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn rule(&self) -> PlaquetteRule {
        self.rule
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn side(&self) -> usize {
        self.spec.side
    }

    pub fn is_torus(&self) -> bool {
        self.spec.is_torus()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[EdgeId] {
        &self.edges
    }

    pub fn edge(&self, k: usize) -> &EdgeId {
        &self.edges[k]
    }

    pub fn kind(&self, k: usize) -> EdgeKind {
        self.kinds[k]
    }

    pub fn plaquettes(&self) -> &[Plaquette] {
        &self.plaquettes
    }

    /// (plaquette index, slot) pairs for every occurrence of edge `k`.
    pub fn incident(&self, k: usize) -> &[(usize, usize)] {
        &self.incidence[k]
    }

    /// Indices of E(Q_L); on a torus, all edges.
    pub fn interior_edges(&self) -> &[usize] {
        &self.interior
    }

    /// Indices of ∂Q_L.
    pub fn boundary_edges(&self) -> Result<&[usize]> {
        if self.is_torus() {
            return Err(Error::Topology("the torus has no boundary edges".into()));
        }
        Ok(&self.boundary)
    }

    fn wrap(&self, mut a: Vec<i64>) -> Vec<i64> {
        if self.is_torus() {
            let l = self.spec.side as i64;
            for c in a.iter_mut() {
                *c = c.rem_euclid(l);
            }
        }
        a
    }

    /// Index of an edge, reducing coordinates modulo L on the torus.
    pub fn edge_index(&self, e: &EdgeId) -> Option<usize> {
        if e.base.len() != self.spec.dim || e.dir >= self.spec.dim {
            return None;
        }
        if self.is_torus() {
            self.index.get(&EdgeId::new(self.wrap(e.base.clone()), e.dir)).copied()
        } else {
            self.index.get(e).copied()
        }
    }

    /// Base coordinates used for physical positions: on the torus each
    /// coordinate is mapped to its representative in [−⌊L/2⌋, L − 1 − ⌊L/2⌋].
    pub fn position(&self, k: usize) -> Vec<i64> {
        let e = &self.edges[k];
        if self.is_torus() {
            let l = self.spec.side as i64;
            e.base.iter().map(|&c| (c + l / 2).rem_euclid(l) - l / 2).collect()
        } else {
            e.base.clone()
        }
    }

    fn vertex_distance(&self, a: &[i64], b: &[i64]) -> usize {
        let l = self.spec.side as i64;
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let d = (x - y).abs();
                if self.is_torus() {
                    let d = d.rem_euclid(l);
                    d.min(l - d) as usize
                } else {
                    d as usize
                }
            })
            .sum()
    }

    /// Shortest-path distance between the endpoint sets of two edges.
    pub fn graph_distance(&self, e: usize, f: usize) -> usize {
        let (ea, eb) = (self.edges[e].base.clone(), self.edges[e].head());
        let (fa, fb) = (self.edges[f].base.clone(), self.edges[f].head());
        [(&ea, &fa), (&ea, &fb), (&eb, &fa), (&eb, &fb)]
            .iter()
            .map(|(x, y)| self.vertex_distance(x, y))
            .min()
            .unwrap_or(0)
    }

    /// Distance from edge `e` to the nearest boundary edge.
    pub fn distance_to_boundary(&self, e: usize) -> Result<usize> {
        let b = self.boundary_edges()?;
        Ok(b.iter().map(|&f| self.graph_distance(e, f)).min().unwrap_or(usize::MAX))
    }

    /// Whether both endpoints of edge `k` lie in [−m, m]^d.
    pub fn in_centered_box(&self, k: usize, m: i64) -> bool {
        let e = &self.edges[k];
        let inside = |p: &[i64]| p.iter().all(|c| c.abs() <= m);
        inside(&e.base) && inside(&e.head())
    }

    /// Edges whose incident plaquettes are all present with no frozen slots,
    /// i.e. whose lattice stencil coincides with the one in ℤ^d.
    pub fn has_full_stencil(&self, k: usize) -> bool {
        let inc = &self.incidence[k];
        inc.len() == 2 * (self.spec.dim - 1)
            && inc.iter().all(|&(p, _)| self.plaquettes[p].slots.iter().all(|s| s.is_some()))
    }
}

pub fn enumerate_edges(spec: LatticeSpec) -> Result<Vec<EdgeId>> {
    Ok(Lattice::new(spec)?.edges)
}

pub fn enumerate_plaquettes(spec: LatticeSpec) -> Result<Vec<PlaquetteId>> {
    Ok(Lattice::new(spec)?.plaquettes.into_iter().map(|p| p.id).collect())
}

pub fn boundary_edges(spec: LatticeSpec) -> Result<Vec<EdgeId>> {
    let lat = Lattice::new(spec)?;
    Ok(lat.boundary_edges()?.iter().map(|&k| lat.edges[k].clone()).collect())
}
