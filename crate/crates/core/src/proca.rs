//! The lattice 𝔤-valued Proca field.
//!
//! Each scalar component is a centred Gaussian on the lattice edges with
//! precision β(mI + DᵀD), where D is the signed plaquette incidence
//! ((dX)_p = X₁ + X₂ − X₃ − X₄, frozen slots dropped). On box-like lattices
//! the free field lives on interior and boundary edges together; fixing the
//! boundary values gives the field with boundary condition η.
//!
//! Components are independent and identically distributed. Whenever a 𝔤-valued
//! field is drawn from one random source, component ℓ = 0, 1, … is drawn in
//! that order, each consuming one standard normal per edge in edge order.

use std::io::{BufRead, Write};

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::field::AlgebraEdgeField;
use crate::lattice::{EdgeKind, Lattice, SLOT_SIGN};
use crate::lie::{AlgebraElement, GroupSpec};
use crate::rng;
use crate::sparse::{Factor, FactorKind, SparseSym, DENSE_LIMIT};
use crate::stats::{linear_fit, LineFit};

/// Signed plaquette sums (dX)_p for a scalar edge field.
pub fn curl(lattice: &Lattice, x: &[f64]) -> Vec<f64> {
    lattice
        .plaquettes()
        .iter()
        .map(|p| p.slots.iter().zip(SLOT_SIGN).filter_map(|(s, sign)| s.map(|k| sign * x[k])).sum())
        .collect()
}

/// Σ_p (dX)_p² + m Σ_e X_e² for a scalar field; twice the action S.
pub fn scalar_energy(lattice: &Lattice, mass: f64, x: &[f64]) -> f64 {
    let c: f64 = curl(lattice, x).iter().map(|v| v * v).sum();
    let m: f64 = x.iter().map(|v| v * v).sum();
    c + mass * m
}

fn check_positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

#[derive(Debug, Clone)]
pub struct PrecisionOperator {
    lattice: Lattice,
    beta: f64,
    mass: f64,
    matrix: SparseSym,
}

/// β(mI + DᵀD) over every edge of the lattice.
pub fn assemble_precision(lattice: &Lattice, beta: f64, mass: f64) -> Result<PrecisionOperator> {
    check_positive("beta", beta)?;
    check_positive("mass", mass)?;
    let mut trip: Vec<(usize, usize, f64)> = Vec::new();
    for k in 0..lattice.n_edges() {
        trip.push((k, k, beta * mass));
    }
    for p in lattice.plaquettes() {
        // on small tori a plaquette may visit one edge twice
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(4);
        for (s, sign) in p.slots.iter().zip(SLOT_SIGN) {
            if let Some(k) = *s {
                match row.iter_mut().find(|(j, _)| *j == k) {
                    Some(entry) => entry.1 += sign,
                    None => row.push((k, sign)),
                }
            }
        }
        for (a, &(i, si)) in row.iter().enumerate() {
            for &(j, sj) in &row[a..] {
                if si * sj != 0.0 {
                    trip.push((i.min(j), i.max(j), beta * si * sj));
                }
            }
        }
    }
    let matrix = SparseSym::from_upper_triplets(lattice.n_edges(), &trip);
    Ok(PrecisionOperator { lattice: lattice.clone(), beta, mass, matrix })
}

impl PrecisionOperator {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn matrix(&self) -> &SparseSym {
        &self.matrix
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.matrix.quad_form(x)
    }

    pub fn factor(&self) -> Result<Factor> {
        Factor::new(&self.matrix, FactorKind::Auto)
    }

    /// Coordinate format: a Matrix Market header (1-based, lower triangle)
    /// followed by one `# edge` comment per row naming the lattice edge.
    pub fn write_triplets(&self, mut w: impl Write) -> std::io::Result<()> {
        let lower: Vec<(usize, usize, f64)> =
            self.matrix.upper_triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(w, "% beta = {:e}, mass = {:e}, lattice = {:?}", self.beta, self.mass, self.lattice.spec())?;
        for (k, e) in self.lattice.edges().iter().enumerate() {
            writeln!(w, "% edge {} {}", k + 1, serde_json::to_string(e).expect("edge ids serialise"))?;
        }
        writeln!(w, "{} {} {}", self.n(), self.n(), lower.len())?;
        for (i, j, v) in lower {
            writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// Parses the output of [`PrecisionOperator::write_triplets`].
pub fn read_triplets(r: impl BufRead) -> Result<SparseSym> {
    let bad = |m: String| Error::InvalidParameter { field: "triplets", reason: m };
    let mut lines = r.lines().map(|l| l.map_err(|e| bad(e.to_string())));
    let mut header = None;
    for line in lines.by_ref() {
        let line = line?;
        if !line.starts_with('%') && !line.trim().is_empty() {
            header = Some(line);
            break;
        }
    }
    let header = header.ok_or_else(|| bad("missing size line".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad size line `{header}`"))))
        .collect::<Result<_>>()?;
    let [n, _, nnz] = dims[..] else { return Err(bad(format!("bad size line `{header}`"))) };
    let mut trip = Vec::with_capacity(nnz);
    for line in lines {
        let line = line?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.is_empty() {
            continue;
        }
        if t.len() != 3 {
            return Err(bad(format!("bad entry `{line}`")));
        }
        let i: usize = t[0].parse().map_err(|_| bad(format!("bad row in `{line}`")))?;
        let j: usize = t[1].parse().map_err(|_| bad(format!("bad column in `{line}`")))?;
        let v: f64 = t[2].parse().map_err(|_| bad(format!("bad value in `{line}`")))?;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(bad(format!("index out of range in `{line}`")));
        }
        trip.push((j - 1, i - 1, v));
    }
    if trip.len() != nnz {
        return Err(bad(format!("expected {nnz} entries, found {}", trip.len())));
    }
    Ok(SparseSym::from_upper_triplets(n, &trip))
}

// ---------------------------------------------------------------------------
// free sampling

/// A factorised precision, reusable across draws.
#[derive(Debug, Clone)]
pub struct FreeSampler {
    factor: Factor,
}

impl FreeSampler {
    pub fn new(op: &PrecisionOperator) -> Result<Self> {
        Ok(Self { factor: op.factor()? })
    }

    pub fn with_kind(op: &PrecisionOperator, kind: FactorKind) -> Result<Self> {
        Ok(Self { factor: Factor::new(op.matrix(), kind)? })
    }

    pub fn n(&self) -> usize {
        self.factor.n()
    }

    pub fn scalar(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n()).map(|_| rng.sample(StandardNormal)).collect();
        self.factor.sample(&z)
    }

    pub fn algebra(&self, group: &GroupSpec, lattice: &Lattice, rng: &mut impl rand::Rng) -> AlgebraEdgeField {
        let comps: Vec<Vec<f64>> = (0..group.algebra_dim()).map(|_| self.scalar(rng)).collect();
        AlgebraEdgeField::from_components(group, lattice, &comps).expect("component sizes match the lattice")
    }

    /// `count` scalar draws; draw i uses stream i of `seed`, so the result
    /// does not depend on the execution mode.
    pub fn scalar_many(&self, exec: Exec, count: usize, seed: u64) -> Vec<Vec<f64>> {
        exec.map(count, |i| self.scalar(&mut rng::stream(seed, i as u64)))
    }

    pub fn algebra_many(
        &self,
        exec: Exec,
        group: &GroupSpec,
        lattice: &Lattice,
        count: usize,
        seed: u64,
    ) -> Vec<AlgebraEdgeField> {
        exec.map(count, |i| self.algebra(group, lattice, &mut rng::stream(seed, i as u64)))
    }
}

/// One draw of the 𝔤-valued free field.
pub fn sample_free(op: &PrecisionOperator, group: &GroupSpec, rng: &mut impl rand::Rng) -> Result<AlgebraEdgeField> {
    Ok(FreeSampler::new(op)?.algebra(group, op.lattice(), rng))
}

// ---------------------------------------------------------------------------
// boundary data and conditioning

/// Boundary values η on ∂Q_L, stored per boundary edge in the lattice's
/// boundary order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcaBoundary {
    n: usize,
    coeffs: Vec<f64>,
}

impl ProcaBoundary {
    pub fn zero(group: &GroupSpec, lattice: &Lattice) -> Result<Self> {
        let b = lattice.boundary_edges()?.len();
        Ok(Self { n: group.algebra_dim(), coeffs: vec![0.0; b * group.algebra_dim()] })
    }

    pub fn from_elements(group: &GroupSpec, lattice: &Lattice, values: &[AlgebraElement]) -> Result<Self> {
        let b = lattice.boundary_edges()?.len();
        if values.len() != b {
            return Err(Error::Shape(format!("expected {b} boundary values, got {}", values.len())));
        }
        let coeffs = values.iter().flat_map(|x| group.coefficients_of(x.matrix())).collect();
        Ok(Self { n: group.algebra_dim(), coeffs })
    }

    /// The same element on every boundary edge.
    pub fn constant(group: &GroupSpec, lattice: &Lattice, x: &AlgebraElement) -> Result<Self> {
        let b = lattice.boundary_edges()?.len();
        Self::from_elements(group, lattice, &vec![x.clone(); b])
    }

    /// Independent uniform directions, each of norm `sup`.
    pub fn random(group: &GroupSpec, lattice: &Lattice, sup: f64, rng: &mut impl rand::Rng) -> Result<Self> {
        let b = lattice.boundary_edges()?.len();
        let xs: Vec<_> = (0..b).map(|_| group.random_algebra_with_norm(rng, sup)).collect();
        Self::from_elements(group, lattice, &xs)
    }

    /// Reads the boundary entries of a full field.
    pub fn from_field(field: &AlgebraEdgeField, lattice: &Lattice) -> Result<Self> {
        let coeffs = lattice.boundary_edges()?.iter().flat_map(|&k| field.coefficients(k).to_vec()).collect();
        Ok(Self { n: field.algebra_dim(), coeffs })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len() / self.n.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn algebra_dim(&self) -> usize {
        self.n
    }

    /// η_ℓ as a vector over the boundary edges.
    pub fn component(&self, l: usize) -> Vec<f64> {
        (0..self.len()).map(|j| self.coeffs[j * self.n + l]).collect()
    }

    pub fn coefficients(&self, j: usize) -> &[f64] {
        &self.coeffs[j * self.n..(j + 1) * self.n]
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.len()).map(|j| self.coefficients(j).iter().map(|c| c * c).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }
}

fn require_box(lattice: &Lattice) -> Result<()> {
    if lattice.is_torus() {
        return Err(Error::Topology("boundary conditioning needs a box-like lattice".into()));
    }
    Ok(())
}

/// The blocks T, S, Q of the free covariance R = β⁻¹(mI + DᵀD)⁻¹ over Ē_L.
/// Dense; intended for desk-scale lattices.
#[derive(Debug, Clone)]
pub struct ConditioningBlocks {
    interior: Vec<usize>,
    boundary: Vec<usize>,
    r: DMatrix<f64>,
    t: DMatrix<f64>,
    s: DMatrix<f64>,
    q: DMatrix<f64>,
    s_chol: Cholesky<f64, nalgebra::Dyn>,
}

fn dense_inverse(a: &SparseSym) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(a.to_dense()).ok_or(Error::NotPositiveDefinite { pivot: 0, value: f64::NAN })?;
    Ok(chol.inverse())
}

fn pick(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

impl ConditioningBlocks {
    pub fn new(op: &PrecisionOperator) -> Result<Self> {
        require_box(op.lattice())?;
        if op.n() > DENSE_LIMIT {
            return Err(Error::TooLarge { what: "dense covariance blocks", size: op.n(), limit: DENSE_LIMIT });
        }
        let interior = op.lattice().interior_edges().to_vec();
        let boundary = op.lattice().boundary_edges()?.to_vec();
        let r = dense_inverse(op.matrix())?;
        let t = pick(&r, &interior, &interior);
        let s = pick(&r, &boundary, &boundary);
        let q = pick(&r, &interior, &boundary);
        let s_chol = Cholesky::new(s.clone()).ok_or(Error::NotPositiveDefinite { pivot: 0, value: f64::NAN })?;
        Ok(Self { interior, boundary, r, t, s, q, s_chol })
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// The free covariance, indexed by lattice edge.
    pub fn free_covariance(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    /// [[T, Q], [Qᵀ, S]] in interior-then-boundary order.
    pub fn joint(&self) -> DMatrix<f64> {
        let (ni, nb) = (self.interior.len(), self.boundary.len());
        let mut j = DMatrix::zeros(ni + nb, ni + nb);
        j.view_mut((0, 0), (ni, ni)).copy_from(&self.t);
        j.view_mut((0, ni), (ni, nb)).copy_from(&self.q);
        j.view_mut((ni, 0), (nb, ni)).copy_from(&self.q.transpose());
        j.view_mut((ni, ni), (nb, nb)).copy_from(&self.s);
        j
    }

    /// QS⁻¹η for one scalar component, over interior edges.
    pub fn conditional_mean(&self, eta: &[f64]) -> DVector<f64> {
        &self.q * self.s_chol.solve(&DVector::from_column_slice(eta))
    }

    /// QS⁻¹Qᵀ.
    pub fn correction(&self) -> DMatrix<f64> {
        &self.q * self.s_chol.solve(&self.q.transpose())
    }

    /// T − QS⁻¹Qᵀ.
    pub fn conditional_covariance(&self) -> DMatrix<f64> {
        &self.t - self.correction()
    }

    /// Conditioning by kriging: turns a free draw Y into a draw of the
    /// interior field given ∂X = η via Y° + QS⁻¹(η − ∂Y).
    pub fn krige(&self, free: &[f64], eta: &[f64]) -> Vec<f64> {
        let resid: Vec<f64> = self.boundary.iter().zip(eta).map(|(&k, &e)| e - free[k]).collect();
        let shift = self.conditional_mean(&resid);
        let mut out = free.to_vec();
        for (a, &k) in self.interior.iter().enumerate() {
            out[k] += shift[a];
        }
        for (&k, &e) in self.boundary.iter().zip(eta) {
            out[k] = e;
        }
        out
    }
}

/// The interior field given ∂X = η through its precision: interior precision
/// A_II, mean −A_II⁻¹A_IB η. Scales to lattices where dense blocks do not.
#[derive(Debug, Clone)]
pub struct ConditionalModel {
    full: SparseSym,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    factor: Factor,
}

impl ConditionalModel {
    pub fn new(op: &PrecisionOperator) -> Result<Self> {
        require_box(op.lattice())?;
        let interior = op.lattice().interior_edges().to_vec();
        let boundary = op.lattice().boundary_edges()?.to_vec();
        let a_ii = op.matrix().submatrix(&interior);
        let factor = Factor::new(&a_ii, FactorKind::Auto)?;
        Ok(Self { full: op.matrix().clone(), interior, boundary, factor })
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// Conditional mean of one component, over interior edges.
    pub fn mean(&self, eta: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.full.n()];
        for (&k, &e) in self.boundary.iter().zip(eta) {
            x[k] = e;
        }
        let ax = self.full.matvec(&x);
        let rhs: Vec<f64> = self.interior.iter().map(|&k| -ax[k]).collect();
        self.factor.solve(&rhs)
    }

    /// Conditional covariance between interior positions `a` and `b`.
    pub fn covariance(&self, a: usize, b: usize) -> f64 {
        let mut unit = vec![0.0; self.interior.len()];
        unit[b] = 1.0;
        self.factor.solve(&unit)[a]
    }

    /// Column b of the conditional covariance.
    pub fn covariance_column(&self, b: usize) -> Vec<f64> {
        let mut unit = vec![0.0; self.interior.len()];
        unit[b] = 1.0;
        self.factor.solve(&unit)
    }

    /// A full-lattice scalar draw with ∂X = η.
    pub fn sample(&self, eta: &[f64], rng: &mut impl rand::Rng) -> Vec<f64> {
        let mean = self.mean(eta);
        let z: Vec<f64> = (0..self.interior.len()).map(|_| rng.sample(StandardNormal)).collect();
        let fluct = self.factor.sample(&z);
        let mut x = vec![0.0; self.full.n()];
        for (a, &k) in self.interior.iter().enumerate() {
            x[k] = mean[a] + fluct[a];
        }
        for (&k, &e) in self.boundary.iter().zip(eta) {
            x[k] = e;
        }
        x
    }
}

/// The law of the field with boundary condition η.
#[derive(Debug, Clone)]
pub struct ConditionalField {
    pub mean: AlgebraEdgeField,
    pub model: ConditionalModel,
    eta: ProcaBoundary,
}

impl ConditionalField {
    pub fn sample(&self, rng: &mut impl rand::Rng) -> AlgebraEdgeField {
        let mut out = self.mean.clone();
        for l in 0..self.eta.algebra_dim() {
            let x = self.model.sample(&self.eta.component(l), rng);
            out.set_component(l, &x);
        }
        out
    }

    pub fn boundary(&self) -> &ProcaBoundary {
        &self.eta
    }
}

pub fn condition_on_boundary(
    op: &PrecisionOperator,
    group: &GroupSpec,
    eta: &ProcaBoundary,
) -> Result<ConditionalField> {
    let lattice = op.lattice();
    let model = ConditionalModel::new(op)?;
    if eta.len() != model.boundary.len() || eta.algebra_dim() != group.algebra_dim() {
        return Err(Error::Shape(format!(
            "boundary data has {} edges × {} components, expected {} × {}",
            eta.len(),
            eta.algebra_dim(),
            model.boundary.len(),
            group.algebra_dim()
        )));
    }
    let mut mean = AlgebraEdgeField::zeros(group, lattice);
    for l in 0..group.algebra_dim() {
        let eta_l = eta.component(l);
        let m = model.mean(&eta_l);
        let mut full = vec![0.0; lattice.n_edges()];
        for (a, &k) in model.interior.iter().enumerate() {
            full[k] = m[a];
        }
        for (&k, &e) in model.boundary.iter().zip(&eta_l) {
            full[k] = e;
        }
        mean.set_component(l, &full);
    }
    Ok(ConditionalField { mean, model, eta: eta.clone() })
}

// ---------------------------------------------------------------------------
// covariance, spectrum, decay

/// Free covariance entries through solves against unit vectors.
#[derive(Debug, Clone)]
pub struct CovarianceOracle {
    factor: Factor,
}

impl CovarianceOracle {
    pub fn new(op: &PrecisionOperator) -> Result<Self> {
        Ok(Self { factor: op.factor()? })
    }

    pub fn column(&self, f: usize) -> Vec<f64> {
        let mut unit = vec![0.0; self.factor.n()];
        unit[f] = 1.0;
        self.factor.solve(&unit)
    }

    pub fn entry(&self, e: usize, f: usize) -> f64 {
        self.column(f)[e]
    }
}

pub fn covariance_entry(op: &PrecisionOperator, e: usize, f: usize) -> Result<f64> {
    Ok(CovarianceOracle::new(op)?.entry(e, f))
}

/// Extreme eigenvalues of mI + DᵀD.
pub fn spectrum_bounds(op: &PrecisionOperator) -> Result<(f64, f64)> {
    if op.n() > DENSE_LIMIT {
        return Err(Error::TooLarge { what: "dense eigensolve", size: op.n(), limit: DENSE_LIMIT });
    }
    let m = op.matrix().to_dense() / op.beta();
    let eig = SymmetricEigen::new(m);
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Entries below this are treated as solver noise in decay fits.
pub const NOISE_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayPoint {
    pub distance: usize,
    pub value: f64,
}

/// max |cov(e, ref)| over edges e at each graph distance from `reference`.
pub fn decay_profile(op: &PrecisionOperator, reference: usize) -> Result<Vec<DecayPoint>> {
    let col = CovarianceOracle::new(op)?.column(reference);
    let lat = op.lattice();
    let mut best: Vec<f64> = Vec::new();
    for (e, c) in col.iter().enumerate() {
        let r = lat.graph_distance(e, reference);
        if best.len() <= r {
            best.resize(r + 1, 0.0);
        }
        best[r] = best[r].max(c.abs());
    }
    Ok(best.into_iter().enumerate().map(|(distance, value)| DecayPoint { distance, value }).collect())
}

/// Least-squares line through log(value) against distance over [lo, hi],
/// skipping values at or below the noise floor. The decay rate is −slope.
pub fn fit_decay(points: &[DecayPoint], lo: usize, hi: usize) -> Option<LineFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.distance >= lo && p.distance <= hi && p.value > NOISE_FLOOR)
        .map(|p| (p.distance as f64, p.value.ln()))
        .unzip();
    (x.len() >= 2).then(|| linear_fit(&x, &y))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceRow {
    pub edge: usize,
    pub distance: usize,
    /// ‖E X_e‖ under the boundary condition.
    pub mean_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceProfile {
    pub rows: Vec<InfluenceRow>,
    /// Per-distance maxima of `mean_norm`.
    pub by_distance: Vec<DecayPoint>,
    pub fit: Option<LineFit>,
}

/// Conditional mean magnitudes over interior edges against their distance
/// to ∂Q_L, with an exponential fit over distances ≥ 1.
pub fn boundary_influence_profile(
    op: &PrecisionOperator,
    group: &GroupSpec,
    eta: &ProcaBoundary,
) -> Result<InfluenceProfile> {
    let cond = condition_on_boundary(op, group, eta)?;
    let lat = op.lattice();
    let mut rows = Vec::new();
    let mut best: Vec<f64> = Vec::new();
    for &k in lat.interior_edges() {
        let distance = lat.distance_to_boundary(k)?;
        let mean_norm = cond.mean.norm(k);
        if best.len() <= distance {
            best.resize(distance + 1, 0.0);
        }
        best[distance] = best[distance].max(mean_norm);
        rows.push(InfluenceRow { edge: k, distance, mean_norm });
    }
    let by_distance: Vec<DecayPoint> =
        best.into_iter().enumerate().map(|(distance, value)| DecayPoint { distance, value }).collect();
    let hi = by_distance.len().saturating_sub(1);
    let fit = fit_decay(&by_distance, 1, hi);
    Ok(InfluenceProfile { rows, by_distance, fit })
}

/// ‖Σ_{M,η} − Σ_{M,free}‖ in Hilbert–Schmidt norm: the covariance of the
/// conditioned and the free field on Q_L, restricted to edges of Q_M. The
/// difference is QS⁻¹Qᵀ on those edges and does not depend on η.
pub fn covariance_difference(op: &PrecisionOperator, inner: usize) -> Result<f64> {
    let lat = op.lattice();
    if inner >= lat.side() {
        return Err(invalid("inner", format!("M = {inner} must be below L = {}", lat.side())));
    }
    let blocks = ConditioningBlocks::new(op)?;
    let keep: Vec<usize> = blocks
        .interior
        .iter()
        .enumerate()
        .filter(|(_, &k)| lat.in_centered_box(k, inner as i64))
        .map(|(a, _)| a)
        .collect();
    let corr = blocks.correction();
    Ok(keep
        .iter()
        .flat_map(|&a| keep.iter().map(move |&b| (a, b)))
        .map(|(a, b)| corr[(a, b)].powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Number of interior edges of each kind; handy for reports.
pub fn edge_counts(lattice: &Lattice) -> (usize, usize) {
    let b = (0..lattice.n_edges()).filter(|&k| lattice.kind(k) == EdgeKind::Boundary).count();
    (lattice.n_edges() - b, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{EdgeId, LatticeSpec};
    use proptest::prelude::*;

    fn torus(l: usize) -> Lattice {
        Lattice::new(LatticeSpec::torus(2, l)).unwrap()
    }

    /// Oracle: expand β[Σ_p (dX)_p² + mΣX²] plaquette by plaquette from edge ids.
    fn direct_form(lat: &Lattice, beta: f64, mass: f64, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for p in lat.plaquettes() {
            let es = p.id.edges();
            let mut c = 0.0;
            for (slot, e) in es.iter().enumerate() {
                if let Some(k) = lat.edge_index(e) {
                    if p.slots[slot].is_some() {
                        c += if slot < 2 { x[k] } else { -x[k] };
                    }
                }
            }
            s += c * c;
        }
        beta * (s + mass * x.iter().map(|v| v * v).sum::<f64>())
    }

    #[test]
    fn torus_l3_matches_hand_assembly() {
        let lat = torus(3);
        assert_eq!(lat.n_edges(), 18);
        let op = assemble_precision(&lat, 2.0, 0.5).unwrap();
        // hand assembly: every edge lies in two plaquettes, so the diagonal is
        // β(m + 2); edges sharing a plaquette couple with ±β
        let idx = |x: i64, y: i64, d: usize| lat.edge_index(&EdgeId::new(vec![x, y], d)).unwrap();
        let mut want = DMatrix::<f64>::zeros(18, 18);
        for x in 0..3 {
            for y in 0..3 {
                let e = [idx(x, y, 0), idx(x + 1, y, 1), idx(x, y + 1, 0), idx(x, y, 1)];
                let s = [1.0, 1.0, -1.0, -1.0];
                for a in 0..4 {
                    for b in 0..4 {
                        want[(e[a], e[b])] += 2.0 * s[a] * s[b];
                    }
                }
            }
        }
        for k in 0..18 {
            want[(k, k)] += 2.0 * 0.5;
            assert!((want[(k, k)] - 2.0 * (0.5 + 2.0)).abs() < 1e-15);
        }
        assert!((op.matrix().to_dense() - want).abs().max() < 1e-14);
    }

    #[test]
    fn single_edge_and_mass_shift() {
        for spec in [LatticeSpec::torus(2, 4), LatticeSpec::torus(3, 3), LatticeSpec::cube(2, 2)] {
            let lat = Lattice::new(spec).unwrap();
            let d = spec.dim;
            let op = assemble_precision(&lat, 1.5, 0.7).unwrap();
            let op2 = assemble_precision(&lat, 1.5, 1.4).unwrap();
            for &k in lat.interior_edges() {
                let mut x = vec![0.0; lat.n_edges()];
                x[k] = 0.3;
                let want = 1.5 * (0.7 + lat.incident(k).len() as f64) * 0.09;
                assert!((op.quad_form(&x) - want).abs() < 1e-14);
                if lat.is_torus() {
                    assert_eq!(lat.incident(k).len(), 2 * (d - 1));
                }
                assert!((op2.matrix().get(k, k) - op.matrix().get(k, k) - 1.5 * 0.7).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn small_torus_coincident_slots() {
        // on L = 1 every plaquette cancels: d X ≡ 0
        let lat = Lattice::new(LatticeSpec::torus(2, 1)).unwrap();
        let op = assemble_precision(&lat, 1.0, 1.0).unwrap();
        assert!((op.matrix().to_dense() - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        let lat = torus(2);
        let op = assemble_precision(&lat, 1.0, 0.3).unwrap();
        let mut r = rng::stream(3, 0);
        for _ in 0..20 {
            let x: Vec<f64> = (0..lat.n_edges()).map(|_| r.sample(StandardNormal)).collect();
            assert!((op.quad_form(&x) - direct_form(&lat, 1.0, 0.3, &x)).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_parameters() {
        let lat = torus(2);
        assert!(matches!(assemble_precision(&lat, 1.0, 0.0), Err(Error::InvalidParameter { field: "mass", .. })));
        assert!(matches!(assemble_precision(&lat, -1.0, 1.0), Err(Error::InvalidParameter { field: "beta", .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn prop_quadratic_form_identity(seed in any::<u64>(), which in 0usize..4, beta in 0.1f64..10.0, mass in 0.05f64..5.0) {
            let spec = [LatticeSpec::torus(2, 3), LatticeSpec::torus(3, 2), LatticeSpec::cube(2, 2), LatticeSpec::block(3, 1)][which];
            let lat = Lattice::new(spec).unwrap();
            let op = assemble_precision(&lat, beta, mass).unwrap();
            let mut r = rng::stream(seed, 0);
            let x: Vec<f64> = (0..lat.n_edges()).map(|_| r.sample(StandardNormal)).collect();
            let a = op.quad_form(&x);
            let b = direct_form(&lat, beta, mass, &x);
            prop_assert!((a - b).abs() <= 1e-10 * b.abs());
            prop_assert!((beta * scalar_energy(&lat, mass, &x) - b).abs() <= 1e-10 * b.abs());
            prop_assert!(op.matrix().asymmetry() <= 1e-12);
        }
    }

    #[test]
    fn triplet_round_trip() {
        let lat = Lattice::new(LatticeSpec::cube(2, 1)).unwrap();
        let op = assemble_precision(&lat, 1.0, 1.0).unwrap();
        let mut buf = Vec::new();
        op.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("%%MatrixMarket"));
        let back = read_triplets(std::io::Cursor::new(buf)).unwrap();
        assert!((back.to_dense() - op.matrix().to_dense()).abs().max() < 1e-14);
        assert!(read_triplets(std::io::Cursor::new(b"% nothing\n".to_vec())).is_err());
    }

    #[test]
    fn spectrum_examples() {
        for (spec, mass) in
            [(LatticeSpec::torus(2, 4), 1.0), (LatticeSpec::torus(3, 3), 0.5), (LatticeSpec::cube(2, 2), 2.0)]
        {
            let lat = Lattice::new(spec).unwrap();
            let (lo, hi) = spectrum_bounds(&assemble_precision(&lat, 3.0, mass).unwrap()).unwrap();
            assert!(lo >= mass - 1e-9, "{lo}");
            assert!(hi <= mass + 8.0 * (spec.dim as f64 - 1.0) + 1e-9, "{hi}");
            let (lo2, _) = spectrum_bounds(&assemble_precision(&lat, 3.0, 2.0 * mass).unwrap()).unwrap();
            assert!((lo2 - lo - mass).abs() < 1e-9);
        }
        // the torus has pure-gauge modes dψ = 0, so the lower bound is attained
        let (lo, _) = spectrum_bounds(&assemble_precision(&torus(4), 1.0, 1.0).unwrap()).unwrap();
        assert!((lo - 1.0).abs() < 1e-9);
    }

    #[test]
    fn skyline_and_dense_samplers_agree() {
        let lat = Lattice::new(LatticeSpec::cube(2, 3)).unwrap();
        let op = assemble_precision(&lat, 1.0, 1.0).unwrap();
        let d = FreeSampler::with_kind(&op, FactorKind::Dense).unwrap();
        let s = FreeSampler::with_kind(&op, FactorKind::Skyline).unwrap();
        // same covariance: compare variances of a fixed linear functional
        let w: Vec<f64> = (0..op.n()).map(|k| ((k * 7) % 5) as f64 - 2.0).collect();
        let want = {
            let x = op.factor().unwrap().solve(&w);
            w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
        };
        for sampler in [&d, &s] {
            let draws = sampler.scalar_many(Exec::Parallel, 20_000, 9);
            let vals: Vec<f64> = draws.iter().map(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
            let v = crate::stats::variance(&vals);
            assert!((v - want).abs() < 0.05 * want, "{v} vs {want}");
        }
    }

    #[test]
    fn draws_do_not_depend_on_execution_mode() {
        let lat = torus(3);
        let op = assemble_precision(&lat, 1.0, 1.0).unwrap();
        let s = FreeSampler::new(&op).unwrap();
        assert_eq!(s.scalar_many(Exec::Sequential, 16, 4), s.scalar_many(Exec::Parallel, 16, 4));
        let g = GroupSpec::special_unitary(2).unwrap();
        let a = sample_free(&op, &g, &mut rng::stream(5, 0)).unwrap();
        let b = sample_free(&op, &g, &mut rng::stream(5, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blocks_reassemble_and_routes_agree() {
        let lat = Lattice::new(LatticeSpec::cube(2, 2)).unwrap();
        let g = GroupSpec::special_unitary(2).unwrap();
        let op = assemble_precision(&lat, 1.3, 0.8).unwrap();
        let blocks = ConditioningBlocks::new(&op).unwrap();
        let perm: Vec<usize> = blocks.interior().iter().chain(blocks.boundary()).copied().collect();
        let r = pick(blocks.free_covariance(), &perm, &perm);
        assert!((blocks.joint() - r).abs().max() < 1e-14);

        let mut rr = rng::stream(6, 0);
        let eta = ProcaBoundary::random(&g, &lat, 0.4, &mut rr).unwrap();
        let cond = condition_on_boundary(&op, &g, &eta).unwrap();
        // Schur complement: T − QS⁻¹Qᵀ = A_II⁻¹ and QS⁻¹η = −A_II⁻¹A_IB η
        let cc = blocks.conditional_covariance();
        for l in 0..3 {
            let m1 = blocks.conditional_mean(&eta.component(l));
            for (a, &k) in blocks.interior().iter().enumerate() {
                assert!((m1[a] - cond.mean.coefficient(k, l)).abs() < 1e-12);
            }
        }
        for a in 0..cc.nrows() {
            for b in 0..cc.ncols() {
                assert!((cc[(a, b)] - cond.model.covariance(a, b)).abs() < 1e-12);
            }
        }
        // the conditional covariance does not see η
        let eta2 = ProcaBoundary::random(&g, &lat, 2.0, &mut rr).unwrap();
        let cond2 = condition_on_boundary(&op, &g, &eta2).unwrap();
        for a in [0, 3, 7] {
            let c1 = cond.model.covariance_column(a);
            let c2 = cond2.model.covariance_column(a);
            assert!(c1.iter().zip(&c2).all(|(x, y)| (x - y).abs() < 1e-10));
        }
        // boundary entries of the mean are η itself; conditioning lowers variance
        for (j, &k) in blocks.boundary().iter().enumerate() {
            assert_eq!(cond.mean.coefficients(k), eta.coefficients(j));
        }
        for (a, &k) in blocks.interior().iter().enumerate() {
            assert!(cc[(a, a)] <= blocks.free_covariance()[(k, k)] + 1e-15);
            assert!(cc[(a, a)] <= 1.0 / (0.8 * 1.3));
        }
    }

    #[test]
    fn zero_boundary_gives_zero_mean() {
        let lat = Lattice::new(LatticeSpec::cube(2, 2)).unwrap();
        let g = GroupSpec::u1();
        let op = assemble_precision(&lat, 1.0, 1.0).unwrap();
        let eta = ProcaBoundary::zero(&g, &lat).unwrap();
        let cond = condition_on_boundary(&op, &g, &eta).unwrap();
        assert_eq!(cond.mean.max_norm(), 0.0);
        let prof = boundary_influence_profile(&op, &g, &eta).unwrap();
        assert!(prof.rows.iter().all(|r| r.mean_norm == 0.0));
        assert!(condition_on_boundary(&assemble_precision(&torus(3), 1.0, 1.0).unwrap(), &g, &eta).is_err());
    }

    #[test]
    fn kriging_reproduces_conditional_law() {
        let lat = Lattice::new(LatticeSpec::cube(2, 1)).unwrap();
        let op = assemble_precision(&lat, 1.0, 1.0).unwrap();
        let blocks = ConditioningBlocks::new(&op).unwrap();
        let eta: Vec<f64> = (0..blocks.boundary().len()).map(|j| 0.1 * j as f64 - 0.5).collect();
        let s = FreeSampler::new(&op).unwrap();
        let draws: Vec<Vec<f64>> =
            s.scalar_many(Exec::Parallel, 40_000, 10).iter().map(|y| blocks.krige(y, &eta)).collect();
        let mean = blocks.conditional_mean(&eta);
        let cov = blocks.conditional_covariance();
        for (a, &k) in blocks.interior().iter().enumerate() {
            let xs: Vec<f64> = draws.iter().map(|x| x[k]).collect();
            let se = (cov[(a, a)] / xs.len() as f64).sqrt();
            assert!((crate::stats::mean(&xs) - mean[a]).abs() < 4.0 * se);
            let v = crate::stats::variance(&xs);
            assert!((v - cov[(a, a)]).abs() < 0.05 * cov[(a, a)]);
        }
    }

    #[test]
    fn covariance_entry_is_symmetric_and_bounded() {
        let lat = Lattice::new(LatticeSpec::cube(2, 3)).unwrap();
        let op = assemble_precision(&lat, 2.0, 1.0).unwrap();
        let c = CovarianceOracle::new(&op).unwrap();
        for (e, f) in [(0, 5), (3, 17), (10, 40)] {
            assert!((c.entry(e, f) - c.entry(f, e)).abs() < 1e-12);
        }
        for e in 0..op.n() {
            assert!(c.entry(e, e) <= 1.0 / 2.0 + 1e-15);
        }
        assert!((covariance_entry(&op, 3, 17).unwrap() - c.entry(3, 17)).abs() < 1e-15);
    }

    #[test]
    fn decay_and_difference_trends() {
        let lat = Lattice::new(LatticeSpec::cube(2, 6)).unwrap();
        let op = assemble_precision(&lat, 1.0, 1.0).unwrap();
        let center = lat.edge_index(&EdgeId::new(vec![0, 0], 0)).unwrap();
        let prof = decay_profile(&op, center).unwrap();
        let fit = fit_decay(&prof, 2, 3).unwrap();
        assert!(fit.slope < 0.0);
        let d1 = covariance_difference(
            &assemble_precision(&Lattice::new(LatticeSpec::cube(2, 3)).unwrap(), 1.0, 1.0).unwrap(),
            1,
        )
        .unwrap();
        let d2 = covariance_difference(
            &assemble_precision(&Lattice::new(LatticeSpec::cube(2, 5)).unwrap(), 1.0, 1.0).unwrap(),
            1,
        )
        .unwrap();
        assert!(d2 < d1 && d2 > 0.0);
        assert!(covariance_difference(&op, 6).is_err());
    }
}
