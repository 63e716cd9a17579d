//! 𝔤-valued edge fields stored as basis coefficients, and the JSON snapshot
//! schema shared with gauge configurations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{EdgeId, Lattice, LatticeSpec};
use crate::lie::{matrix_to_pairs, AlgebraElement, GroupRecord, GroupSpec};

/// X_e = Σ_ℓ X_{ℓ,e} V_ℓ for every edge of a lattice, edge-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraEdgeField {
    group: GroupSpec,
    lattice: LatticeSpec,
    n_edges: usize,
    coeffs: Vec<f64>,
}

impl AlgebraEdgeField {
    pub fn zeros(group: &GroupSpec, lattice: &Lattice) -> Self {
        let n_edges = lattice.n_edges();
        Self {
            group: group.clone(),
            lattice: *lattice.spec(),
            n_edges,
            coeffs: vec![0.0; n_edges * group.algebra_dim()],
        }
    }

    /// `components[ℓ][k]` is the ℓ-th coefficient on edge k.
    pub fn from_components(group: &GroupSpec, lattice: &Lattice, components: &[Vec<f64>]) -> Result<Self> {
        let n = group.algebra_dim();
        if components.len() != n {
            return Err(Error::Shape(format!("expected {n} components, got {}", components.len())));
        }
        let mut f = Self::zeros(group, lattice);
        for (l, c) in components.iter().enumerate() {
            if c.len() != f.n_edges {
                return Err(Error::Shape(format!("component {l} has {} entries, lattice has {}", c.len(), f.n_edges)));
            }
            for (k, &v) in c.iter().enumerate() {
                f.coeffs[k * n + l] = v;
            }
        }
        Ok(f)
    }

    pub fn from_elements(group: &GroupSpec, lattice: &Lattice, values: &[AlgebraElement]) -> Result<Self> {
        let mut f = Self::zeros(group, lattice);
        if values.len() != f.n_edges {
            return Err(Error::Shape(format!("expected {} edge values, got {}", f.n_edges, values.len())));
        }
        for (k, x) in values.iter().enumerate() {
            f.set(k, x);
        }
        Ok(f)
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn algebra_dim(&self) -> usize {
        self.group.algebra_dim()
    }

    pub fn coefficients(&self, k: usize) -> &[f64] {
        let n = self.algebra_dim();
        &self.coeffs[k * n..(k + 1) * n]
    }

    pub fn coefficients_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.algebra_dim();
        &mut self.coeffs[k * n..(k + 1) * n]
    }

    pub fn coefficient(&self, k: usize, l: usize) -> f64 {
        self.coeffs[k * self.algebra_dim() + l]
    }

    pub fn set_coefficient(&mut self, k: usize, l: usize, v: f64) {
        let n = self.algebra_dim();
        self.coeffs[k * n + l] = v;
    }

    pub fn set(&mut self, k: usize, x: &AlgebraElement) {
        let c = match x.coefficients() {
            Some(c) => c.to_vec(),
            None => self.group.coefficients_of(x.matrix()),
        };
        self.coefficients_mut(k).copy_from_slice(&c);
    }

    pub fn element(&self, k: usize) -> AlgebraElement {
        self.group.from_coefficients(self.coefficients(k)).expect("coefficient count matches basis")
    }

    /// The scalar field (X_{ℓ,e})_e.
    pub fn component(&self, l: usize) -> Vec<f64> {
        let n = self.algebra_dim();
        (0..self.n_edges).map(|k| self.coeffs[k * n + l]).collect()
    }

    pub fn set_component(&mut self, l: usize, values: &[f64]) {
        let n = self.algebra_dim();
        for (k, &v) in values.iter().enumerate() {
            self.coeffs[k * n + l] = v;
        }
    }

    /// Hilbert–Schmidt norm ‖X_e‖; the basis is orthonormal.
    pub fn norm(&self, k: usize) -> f64 {
        self.coefficients(k).iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.n_edges).map(|k| self.norm(k)).fold(0.0, f64::max)
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut f = self.clone();
        f.scale(s);
        f
    }

    /// self += a·other.
    pub fn axpy(&mut self, a: f64, other: &AlgebraEdgeField) -> Result<()> {
        if other.coeffs.len() != self.coeffs.len() {
            return Err(Error::Shape("fields live on different lattices or groups".into()));
        }
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
        Ok(())
    }

    /// Flat edge-major coefficient storage.
    pub fn raw(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn snapshot(&self, lattice: &Lattice) -> FieldSnapshot {
        let edges = (0..self.n_edges)
            .map(|k| EdgeRecord {
                edge: lattice.edge(k).clone(),
                matrix: matrix_to_pairs(self.element(k).matrix()),
                coefficients: Some(self.coefficients(k).to_vec()),
            })
            .collect();
        FieldSnapshot {
            kind: SnapshotKind::Algebra,
            group: GroupRecord::from(&self.group),
            lattice: self.lattice,
            edges,
        }
    }

    /// Rebuilds a field from a snapshot, using the stored coefficients when
    /// present and projecting the matrices otherwise.
    pub fn from_snapshot(snap: &FieldSnapshot) -> Result<(Self, Lattice)> {
        if snap.kind != SnapshotKind::Algebra {
            return Err(invalid_snapshot("expected an algebra-valued snapshot"));
        }
        let group = GroupSpec::try_from(snap.group)?;
        let lattice = Lattice::new(snap.lattice)?;
        let mut f = Self::zeros(&group, &lattice);
        for rec in &snap.edges {
            let k = lattice.edge_index(&rec.edge).ok_or_else(|| invalid_snapshot("edge outside the lattice"))?;
            match &rec.coefficients {
                Some(c) if c.len() == group.algebra_dim() => f.coefficients_mut(k).copy_from_slice(c),
                Some(_) => return Err(invalid_snapshot("coefficient count does not match the group")),
                None => {
                    let m = crate::lie::pairs_to_matrix(&rec.matrix, group.matrix_size())?;
                    f.set(k, &group.project(&m));
                }
            }
        }
        Ok((f, lattice))
    }
}

fn invalid_snapshot(reason: &str) -> Error {
    Error::InvalidParameter { field: "snapshot", reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotKind {
    Gauge,
    Algebra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub edge: EdgeId,
    /// Row-major [re, im] pairs.
    pub matrix: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub kind: SnapshotKind,
    pub group: GroupRecord,
    pub lattice: LatticeSpec,
    pub edges: Vec<EdgeRecord>,
}
