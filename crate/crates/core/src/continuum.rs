//! Test forms, the rescaled pairing Z^ε(F), the continuum variance (F, R_m F)
//! and the lattice-to-continuum convergence diagnostics.
//!
//! Built-in forms are sums of tensor products of the bump b(t) = (1 − t²)⁴ on
//! [−1, 1] and its derivative, all sharing one centre c and radius R:
//! F_j^ℓ(x) = Σ coeff · Π_a f_a((x_a − c_a)/R). Each factor is a polynomial on
//! its support, so Gauss–Legendre of order 8 on the clipped interval
//! integrates cells exactly.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::AlgebraEdgeField;
use crate::lattice::{Lattice, LatticeSpec};
use crate::proca::{assemble_precision, PrecisionOperator};
use crate::sparse::{Factor, FactorKind};
use crate::stats::loglog_fit;

/// Gauss–Legendre order for cell integrals.
pub const CELL_ORDER: usize = 8;

fn gl8() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        GaussLegendre::new(NonZeroUsize::new(CELL_ORDER).expect("nonzero order")).as_node_weight_pairs().to_vec()
    })
}

pub fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - t * t).powi(4)
    }
}

pub fn bump_derivative(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        -8.0 * t * (1.0 - t * t).powi(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisFactor {
    /// b((x − c)/R).
    Bump,
    /// d/dx b((x − c)/R) = b′((x − c)/R)/R.
    BumpDerivative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormTerm {
    /// Direction j (0-based).
    pub dir: usize,
    /// Basis index ℓ (0-based).
    pub comp: usize,
    pub coeff: f64,
    pub factors: Vec<AxisFactor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormFamily {
    /// Independent bumps on selected (direction, component) slots.
    Bump,
    /// F = ∇φ for φ a product bump; longitudinal.
    Gradient,
    /// F = (∂₂ψ, −∂₁ψ) in d = 2; divergence free.
    Curl2d,
    /// Anything assembled by linear combination or rotation.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestForm {
    pub dim: usize,
    /// Algebra dimension n.
    pub components: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    pub family: FormFamily,
    pub terms: Vec<FormTerm>,
}

fn check_geometry(dim: usize, components: usize, center: &[f64], radius: f64) -> Result<()> {
    if dim < 2 {
        return Err(invalid("dim", "test forms need d >= 2"));
    }
    if components == 0 {
        return Err(invalid("components", "need at least one algebra component"));
    }
    if center.len() != dim {
        return Err(invalid("center", format!("expected {dim} coordinates, got {}", center.len())));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid("radius", format!("must be positive, got {radius}")));
    }
    Ok(())
}

impl TestForm {
    /// F_j^ℓ = Π_a b((x_a − c_a)/R) on each listed (j, ℓ), zero elsewhere.
    pub fn bump(
        dim: usize,
        components: usize,
        center: Vec<f64>,
        radius: f64,
        slots: &[(usize, usize)],
    ) -> Result<Self> {
        check_geometry(dim, components, &center, radius)?;
        let mut terms = Vec::new();
        for &(dir, comp) in slots {
            if dir >= dim || comp >= components {
                return Err(invalid("mask", format!("slot ({dir}, {comp}) out of range")));
            }
            terms.push(FormTerm { dir, comp, coeff: 1.0, factors: vec![AxisFactor::Bump; dim] });
        }
        Ok(Self { dim, components, center, radius, family: FormFamily::Bump, terms })
    }

    /// F^ℓ = ∇φ with φ = Π_a b((x_a − c_a)/R).
    pub fn gradient(dim: usize, components: usize, comp: usize, center: Vec<f64>, radius: f64) -> Result<Self> {
        check_geometry(dim, components, &center, radius)?;
        if comp >= components {
            return Err(invalid("component", format!("{comp} out of range")));
        }
        let terms = (0..dim)
            .map(|j| {
                let mut factors = vec![AxisFactor::Bump; dim];
                factors[j] = AxisFactor::BumpDerivative;
                FormTerm { dir: j, comp, coeff: 1.0, factors }
            })
            .collect();
        Ok(Self { dim, components, center, radius, family: FormFamily::Gradient, terms })
    }

    /// F^ℓ = (∂₂ψ, −∂₁ψ) with ψ a product bump in d = 2.
    pub fn curl2d(components: usize, comp: usize, center: Vec<f64>, radius: f64) -> Result<Self> {
        check_geometry(2, components, &center, radius)?;
        if comp >= components {
            return Err(invalid("component", format!("{comp} out of range")));
        }
        let terms = vec![
            FormTerm { dir: 0, comp, coeff: 1.0, factors: vec![AxisFactor::Bump, AxisFactor::BumpDerivative] },
            FormTerm { dir: 1, comp, coeff: -1.0, factors: vec![AxisFactor::BumpDerivative, AxisFactor::Bump] },
        ];
        Ok(Self { dim: 2, components, center, radius, family: FormFamily::Curl2d, terms })
    }

    pub fn zero(dim: usize, components: usize) -> Self {
        Self { dim, components, center: vec![0.0; dim], radius: 1.0, family: FormFamily::Mixed, terms: Vec::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coeff == 0.0)
    }

    fn factor_value(&self, f: AxisFactor, axis: usize, x: f64) -> f64 {
        let t = (x - self.center[axis]) / self.radius;
        match f {
            AxisFactor::Bump => bump(t),
            AxisFactor::BumpDerivative => bump_derivative(t) / self.radius,
        }
    }

    /// ∫_lo^hi of one axis factor, exact (polynomial on the clipped interval).
    fn factor_integral(&self, f: AxisFactor, axis: usize, lo: f64, hi: f64) -> f64 {
        let a = lo.max(self.center[axis] - self.radius);
        let b = hi.min(self.center[axis] + self.radius);
        if b <= a {
            return 0.0;
        }
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        half * gl8().iter().map(|&(x, w)| w * self.factor_value(f, axis, mid + half * x)).sum::<f64>()
    }

    /// F_j^ℓ(x).
    pub fn eval(&self, dir: usize, comp: usize, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.dir == dir && t.comp == comp)
            .map(|t| {
                t.coeff * t.factors.iter().enumerate().map(|(a, &f)| self.factor_value(f, a, x[a])).product::<f64>()
            })
            .sum()
    }

    /// ∫ over the box Π[lo_a, hi_a] of F_j^ℓ.
    pub fn box_integral(&self, dir: usize, comp: usize, lo: &[f64], hi: &[f64]) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.dir == dir && t.comp == comp)
            .map(|t| {
                t.coeff
                    * t.factors
                        .iter()
                        .enumerate()
                        .map(|(a, &f)| self.factor_integral(f, a, lo[a], hi[a]))
                        .product::<f64>()
            })
            .sum()
    }

    /// F + s·G. Both forms must share dimension, components, centre and radius.
    pub fn add_scaled(&self, s: f64, other: &TestForm) -> Result<Self> {
        if self.dim != other.dim
            || self.components != other.components
            || self.center != other.center
            || self.radius != other.radius
        {
            return Err(invalid("form", "only forms with the same geometry can be combined"));
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().map(|t| FormTerm { coeff: s * t.coeff, ..t.clone() }));
        Ok(Self { terms, family: FormFamily::Mixed, ..self.clone() })
    }

    pub fn scaled(&self, s: f64) -> Self {
        let terms = self.terms.iter().map(|t| FormTerm { coeff: s * t.coeff, ..t.clone() }).collect();
        Self { terms, ..self.clone() }
    }

    /// Slices F′^ℓ = Σ_k O_{ℓk} F^k for a real n×n matrix O.
    pub fn rotate_components(&self, o: &DMatrix<f64>) -> Result<Self> {
        let n = self.components;
        if o.nrows() != n || o.ncols() != n {
            return Err(Error::Shape(format!("rotation must be {n}×{n}")));
        }
        let mut terms = Vec::new();
        for t in &self.terms {
            for l in 0..n {
                let c = o[(l, t.comp)];
                if c != 0.0 {
                    terms.push(FormTerm { comp: l, coeff: c * t.coeff, ..t.clone() });
                }
            }
        }
        Ok(Self { terms, family: FormFamily::Mixed, ..self.clone() })
    }

    /// x ↦ F(x/s): centre and radius scaled by s, derivative factors by 1/s.
    pub fn dilate(&self, s: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let derivs = t.factors.iter().filter(|f| **f == AxisFactor::BumpDerivative).count() as i32;
                // the rescaled factor b′/(sR) must still read b′/R
                FormTerm { coeff: t.coeff * s.powi(derivs), ..t.clone() }
            })
            .collect();
        Self { center: self.center.iter().map(|c| c * s).collect(), radius: self.radius * s, terms, ..self.clone() }
    }

    /// Components that carry at least one term.
    pub fn active_components(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.terms.iter().filter(|t| t.coeff != 0.0).map(|t| t.comp).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Cell integrals u_ℓ(e) = ∫_{εD_a} F_j^ℓ for every edge e = (a, a + e_j),
    /// with a the edge's physical base point. Fails if the support meets a
    /// cell that has no edge in the lattice.
    pub fn cell_integrals(&self, lattice: &Lattice, eps: f64) -> Result<Vec<Vec<f64>>> {
        if lattice.dim() != self.dim {
            return Err(Error::Shape(format!("form has d = {}, lattice has d = {}", self.dim, lattice.dim())));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid("epsilon", format!("must be positive, got {eps}")));
        }
        let d = self.dim;
        // cells a with (ε(a − ½), ε(a + ½)) meeting (c − R, c + R)
        let ranges: Vec<(i64, i64)> = (0..d)
            .map(|a| {
                let lo = ((self.center[a] - self.radius) / eps - 0.5).floor() as i64 + 1;
                let hi = ((self.center[a] + self.radius) / eps + 0.5).ceil() as i64 - 1;
                (lo, hi)
            })
            .collect();
        let in_range = |p: &[i64]| p.iter().zip(&ranges).all(|(x, (lo, hi))| x >= lo && x <= hi);
        let cells: i64 = ranges.iter().map(|(lo, hi)| (hi - lo + 1).max(0)).product();
        let mut out = vec![vec![0.0; lattice.n_edges()]; self.components];
        let mut covered = vec![0i64; d];
        for k in 0..lattice.n_edges() {
            let p = lattice.position(k);
            if !in_range(&p) {
                continue;
            }
            let j = lattice.edge(k).dir;
            covered[j] += 1;
            let lo: Vec<f64> = p.iter().map(|&x| eps * (x as f64 - 0.5)).collect();
            let hi: Vec<f64> = p.iter().map(|&x| eps * (x as f64 + 0.5)).collect();
            for (l, row) in out.iter_mut().enumerate() {
                row[k] = self.box_integral(j, l, &lo, &hi);
            }
        }
        for t in &self.terms {
            if t.coeff != 0.0 && covered[t.dir] != cells {
                return Err(Error::SupportNotCovered(format!(
                    "direction {} needs {cells} cells at eps = {eps}, lattice {:?} provides {}",
                    t.dir + 1,
                    lattice.spec(),
                    covered[t.dir]
                )));
            }
        }
        Ok(out)
    }
}

/// Config-facing description of a built-in form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormSpec {
    pub family: FormFamily,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    pub radius: f64,
    /// (direction, component) pairs, 1-based; bump family only.
    #[serde(default)]
    pub mask: Option<Vec<[usize; 2]>>,
    /// 1-based component; gradient and curl families.
    #[serde(default)]
    pub component: Option<usize>,
}

impl FormSpec {
    pub fn build(&self, dim: usize, components: usize) -> Result<TestForm> {
        let center = self.center.clone().unwrap_or_else(|| vec![0.0; dim]);
        let comp = self.component.unwrap_or(1);
        if comp == 0 {
            return Err(invalid("component", "components are numbered from 1"));
        }
        match self.family {
            FormFamily::Bump => {
                let mask: Vec<(usize, usize)> = match &self.mask {
                    Some(m) => m
                        .iter()
                        .map(|&[j, l]| {
                            if j == 0 || l == 0 {
                                Err(invalid("mask", "entries are 1-based"))
                            } else {
                                Ok((j - 1, l - 1))
                            }
                        })
                        .collect::<Result<_>>()?,
                    None => vec![(0, 0)],
                };
                TestForm::bump(dim, components, center, self.radius, &mask)
            }
            FormFamily::Gradient => TestForm::gradient(dim, components, comp - 1, center, self.radius),
            FormFamily::Curl2d => {
                if dim != 2 {
                    return Err(invalid("family", "curl2d needs d = 2"));
                }
                TestForm::curl2d(components, comp - 1, center, self.radius)
            }
            FormFamily::Mixed => Err(invalid("family", "mixed forms are not constructible from a config")),
        }
    }
}

// ---------------------------------------------------------------------------
// pairing

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairingResult {
    pub value: f64,
    pub eps: f64,
    pub beta: f64,
    pub source: String,
}

/// Z^ε(F) = ε^{−(d−2)/2} √β Σ_e Σ_ℓ X_{ℓ,e} u_ℓ(e), from a field X with
/// A = √β X.
pub fn pair_with_integrals(field: &AlgebraEdgeField, u: &[Vec<f64>], eps: f64, beta: f64) -> f64 {
    let d = field.lattice().dim as f64;
    let mut s = 0.0;
    for (l, ul) in u.iter().enumerate() {
        for (k, &w) in ul.iter().enumerate() {
            if w != 0.0 {
                s += w * field.coefficient(k, l);
            }
        }
    }
    eps.powf(-(d - 2.0) / 2.0) * beta.sqrt() * s
}

pub fn pair(
    field: &AlgebraEdgeField,
    lattice: &Lattice,
    form: &TestForm,
    eps: f64,
    beta: f64,
    source: &str,
) -> Result<PairingResult> {
    if field.algebra_dim() != form.components {
        return Err(Error::Shape(format!("field has n = {}, form has n = {}", field.algebra_dim(), form.components)));
    }
    let u = form.cell_integrals(lattice, eps)?;
    Ok(PairingResult { value: pair_with_integrals(field, &u, eps, beta), eps, beta, source: source.to_string() })
}

// ---------------------------------------------------------------------------
// continuum variance by FFT

/// A periodic grid of `points`^d nodes x_q = (q − points/2)·spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierGrid {
    pub points: usize,
    pub spacing: f64,
}

impl FourierGrid {
    pub fn new(points: usize, spacing: f64) -> Result<Self> {
        if points < 8 || points % 2 != 0 {
            return Err(invalid("grid_points", format!("need an even count >= 8, got {points}")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(invalid("grid_spacing", format!("must be positive, got {spacing}")));
        }
        Ok(Self { points, spacing })
    }

    /// Spacing R/32 on a half-width of (support extent + 10/√m), rounded up
    /// to a power of two and capped at 2048 (d = 2), 128 (d = 3), 32 (d ≥ 4)
    /// points per axis; the spacing grows if the cap binds.
    pub fn for_form(form: &TestForm, m: f64) -> Self {
        let extent = form.center.iter().map(|c| c.abs()).fold(0.0, f64::max) + form.radius;
        let half = extent + 10.0 / m.sqrt();
        let cap = match form.dim {
            2 => 2048,
            3 => 128,
            _ => 32,
        };
        let want = (2.0 * half / (form.radius / 32.0)).ceil() as usize;
        let points = want.next_power_of_two().clamp(8, cap);
        Self { points, spacing: (2.0 * half / points as f64).max(form.radius / 32.0) }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.points as f64 * self.spacing
    }

    pub fn node(&self, q: usize) -> f64 {
        (q as f64 - (self.points / 2) as f64) * self.spacing
    }

    pub fn wavenumber(&self, q: usize) -> f64 {
        let n = self.points as i64;
        let s = if (q as i64) < n / 2 { q as i64 } else { q as i64 - n };
        2.0 * std::f64::consts::PI * s as f64 / (n as f64 * self.spacing)
    }

    /// Kernel periodisation error scale e^{−√m (2P − 2ρ)}, ρ the support extent.
    pub fn truncation_estimate(&self, form: &TestForm, m: f64) -> f64 {
        let extent = form.center.iter().map(|c| c.abs()).fold(0.0, f64::max) + form.radius;
        (-(m.sqrt()) * (2.0 * self.half_width() - 2.0 * extent)).exp()
    }
}

fn multi_index(mut flat: usize, n: usize, d: usize) -> Vec<usize> {
    let mut idx = vec![0; d];
    for a in (0..d).rev() {
        idx[a] = flat % n;
        flat /= n;
    }
    idx
}

/// In-place d-dimensional FFT of a row-major n^d array.
fn fft_nd(data: &mut [Complex64], n: usize, d: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let total = data.len();
        for start in 0..total {
            // one line per index whose axis coordinate is 0
            if (start / stride) % n != 0 {
                continue;
            }
            for (i, v) in line.iter_mut().enumerate() {
                *v = data[start + i * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (i, v) in line.iter().enumerate() {
                data[start + i * stride] = *v;
            }
        }
    }
}

fn sample_slices(form: &TestForm, grid: &FourierGrid, comp: usize) -> Vec<Vec<Complex64>> {
    let (n, d) = (grid.points, form.dim);
    (0..d)
        .map(|j| {
            (0..n.pow(d as u32))
                .map(|flat| {
                    let x: Vec<f64> = multi_index(flat, n, d).iter().map(|&q| grid.node(q)).collect();
                    Complex64::new(form.eval(j, comp, &x), 0.0)
                })
                .collect()
        })
        .collect()
}

fn check_grid_covers(form: &TestForm, grid: &FourierGrid) -> Result<()> {
    for a in 0..form.dim {
        let lo = form.center[a] - form.radius;
        let hi = form.center[a] + form.radius;
        if lo <= -grid.half_width() || hi >= grid.half_width() - grid.spacing {
            return Err(Error::SupportNotCovered(format!(
                "Fourier grid half-width {} does not contain the support",
                grid.half_width()
            )));
        }
    }
    Ok(())
}

fn check_mass(m: f64) -> Result<()> {
    if m > 0.0 && m.is_finite() {
        Ok(())
    } else {
        Err(invalid("mass", format!("must be positive, got {m}")))
    }
}

/// R̂_m(k)_{ij} = (δ_ij + k_i k_j/m)/(|k|² + m).
fn symbol(k: &[f64], m: f64, i: usize, j: usize) -> f64 {
    let k2: f64 = k.iter().map(|x| x * x).sum();
    let delta = if i == j { 1.0 } else { 0.0 };
    (delta + k[i] * k[j] / m) / (k2 + m)
}

/// Σ_ℓ (F^ℓ, R_m F^ℓ) through a discrete Fourier transform on `grid`.
pub fn continuum_variance_on(form: &TestForm, m: f64, grid: &FourierGrid) -> Result<f64> {
    check_mass(m)?;
    if form.is_zero() {
        return Ok(0.0);
    }
    check_grid_covers(form, grid)?;
    let (n, d) = (grid.points, form.dim);
    let mut total = 0.0;
    for comp in form.active_components() {
        let mut slices = sample_slices(form, grid, comp);
        for s in slices.iter_mut() {
            fft_nd(s, n, d, false);
        }
        let mut acc = 0.0;
        let mut k = vec![0.0; d];
        #[allow(clippy::needless_range_loop)]
        for flat in 0..n.pow(d as u32) {
            for (a, q) in multi_index(flat, n, d).into_iter().enumerate() {
                k[a] = grid.wavenumber(q);
            }
            for i in 0..d {
                for j in 0..d {
                    acc += symbol(&k, m, i, j) * (slices[i][flat].conj() * slices[j][flat]).re;
                }
            }
        }
        // F̂ ≈ h^d·DFT and ∫dk/(2π)^d ≈ Σ_k 1/(N h)^d
        total += acc * grid.spacing.powi(2 * d as i32) / (n as f64 * grid.spacing).powi(d as i32);
    }
    Ok(total)
}

pub fn continuum_variance(form: &TestForm, m: f64) -> Result<f64> {
    check_mass(m)?;
    continuum_variance_on(form, m, &FourierGrid::for_form(form, m))
}

/// G^ℓ = R_m F^ℓ on the grid nodes, one array per direction.
pub fn apply_r_m(form: &TestForm, comp: usize, m: f64, grid: &FourierGrid) -> Result<Vec<Vec<f64>>> {
    check_grid_covers(form, grid)?;
    let (n, d) = (grid.points, form.dim);
    let mut slices = sample_slices(form, grid, comp);
    for s in slices.iter_mut() {
        fft_nd(s, n, d, false);
    }
    let size = n.pow(d as u32);
    let mut out = vec![vec![Complex64::new(0.0, 0.0); size]; d];
    let mut k = vec![0.0; d];
    for flat in 0..size {
        for (a, q) in multi_index(flat, n, d).into_iter().enumerate() {
            k[a] = grid.wavenumber(q);
        }
        for (i, o) in out.iter_mut().enumerate() {
            o[flat] = (0..d).map(|j| slices[j][flat] * symbol(&k, m, i, j)).sum();
        }
    }
    let norm = 1.0 / size as f64;
    Ok(out
        .into_iter()
        .map(|mut o| {
            fft_nd(&mut o, n, d, true);
            o.iter().map(|z| z.re * norm).collect()
        })
        .collect())
}

// ---------------------------------------------------------------------------
// lattice variance and error terms

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeOptions {
    /// δ in L = ⌊ε^{−1−δ}⌋.
    pub delta: f64,
    pub beta: f64,
}

impl Default for LatticeOptions {
    fn default() -> Self {
        Self { delta: 0.25, beta: 1.0 }
    }
}

/// L = ⌊ε^{−1−δ}⌋, with a small guard so exact powers are not floored down.
pub fn box_side(eps: f64, delta: f64) -> usize {
    (eps.powf(-1.0 - delta) + 1e-9).floor().max(1.0) as usize
}

/// The free field on Ē_L for spacing ε: the continuum mass m becomes ε²m in
/// lattice units, since lattice differences are ε times derivatives.
pub fn lattice_operator(dim: usize, eps: f64, m: f64, opts: &LatticeOptions) -> Result<PrecisionOperator> {
    let lat = Lattice::new(LatticeSpec::cube(dim, box_side(eps, opts.delta)))?;
    assemble_precision(&lat, opts.beta, eps * eps * m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeVariance {
    pub eps: f64,
    pub side: usize,
    pub edges: usize,
    pub value: f64,
}

/// Var Z^{𝔤,ε}(F) = Σ_ℓ β ε^{−(d−2)} u_ℓᵀ op⁻¹ u_ℓ; independent of β.
pub fn lattice_variance(form: &TestForm, eps: f64, m: f64, opts: &LatticeOptions) -> Result<LatticeVariance> {
    let op = lattice_operator(form.dim, eps, m, opts)?;
    let factor = Factor::new(op.matrix(), FactorKind::Auto)?;
    let value = lattice_variance_with(form, eps, &op, &factor)?;
    Ok(LatticeVariance { eps, side: op.lattice().side(), edges: op.n(), value })
}

pub fn lattice_variance_with(form: &TestForm, eps: f64, op: &PrecisionOperator, factor: &Factor) -> Result<f64> {
    let u = form.cell_integrals(op.lattice(), eps)?;
    let d = form.dim as i32;
    let mut total = 0.0;
    for ul in u.iter().filter(|ul| ul.iter().any(|v| *v != 0.0)) {
        let y = factor.solve(ul);
        total += ul.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(op.beta() * eps.powi(-(d - 2)) * total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorTermRow {
    pub eps: f64,
    pub side: usize,
    pub norm_u: f64,
    pub norm_w: f64,
    pub norm_u_minus_w: f64,
    /// Estimate of ‖R̃‖ from inverse power iteration.
    pub r_tilde_norm: f64,
    /// ‖w − R̃⁻¹x‖ over edges whose stencil matches ℤ^d.
    pub norm_w_minus_rinv_x: f64,
    /// |uᵀR̃u − wᵀx|.
    pub quad_gap: f64,
    pub lattice_variance: f64,
    pub riemann_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorExponents {
    pub u: f64,
    pub w: f64,
    pub u_minus_w: f64,
    pub r_tilde: f64,
    pub w_minus_rinv_x: f64,
    pub quad_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorTerms {
    pub rows: Vec<ErrorTermRow>,
    pub exponents: ErrorExponents,
}

fn grid_index(grid: &FourierGrid, x: f64) -> Option<usize> {
    let q = x / grid.spacing + (grid.points / 2) as f64;
    let r = q.round();
    ((q - r).abs() < 1e-9 && r >= 0.0 && (r as usize) < grid.points).then_some(r as usize)
}

fn inverse_power_norm(factor: &Factor, n: usize, iterations: usize) -> f64 {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 2_654_435_761) % 1000) as f64 * 1e-3).collect();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let y = factor.solve(&v);
        lambda = v.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        v = y;
    }
    lambda
}

/// The quantities u, w, x, R̃ of the lattice-to-continuum comparison for each
/// ε, with fitted ε-exponents. The grid must contain every lattice point εa
/// of the box as a node, i.e. ε must be a multiple of its spacing.
pub fn error_terms_ab(
    form: &TestForm,
    eps_list: &[f64],
    m: f64,
    opts: &LatticeOptions,
    grid: &FourierGrid,
) -> Result<ErrorTerms> {
    if eps_list.len() < 2 {
        return Err(invalid("epsilon", "need at least two values to fit exponents"));
    }
    let d = form.dim;
    let comps = form.active_components();
    let g: Vec<Vec<Vec<f64>>> = comps.iter().map(|&l| apply_r_m(form, l, m, grid)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &eps in eps_list {
        let op = lattice_operator(d, eps, m, opts)?;
        let lat = op.lattice();
        let factor = Factor::new(op.matrix(), FactorKind::Auto)?;
        let u_all = form.cell_integrals(lat, eps)?;
        let rt_scale = eps.powi(-(d as i32 - 2)) * op.beta();
        let (mut nu, mut nw, mut nuw, mut nb, mut q_u, mut q_wx) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (ci, &l) in comps.iter().enumerate() {
            let u = &u_all[l];
            let mut w = vec![0.0; lat.n_edges()];
            let mut x = vec![0.0; lat.n_edges()];
            for k in 0..lat.n_edges() {
                let e = lat.edge(k);
                let p: Vec<f64> = lat.position(k).iter().map(|&a| eps * a as f64).collect();
                w[k] = eps.powi(d as i32) * form.eval(e.dir, l, &p);
                let idx: Option<Vec<usize>> = p.iter().map(|&c| grid_index(grid, c)).collect();
                let idx = idx.ok_or_else(|| {
                    invalid("grid_spacing", format!("lattice point {p:?} at eps = {eps} is not a grid node"))
                })?;
                let flat = idx.iter().fold(0usize, |acc, &q| acc * grid.points + q);
                x[k] = g[ci][e.dir][flat];
            }
            // R̃⁻¹ = ε^{d−2} (op/β)
            let rinv_x: Vec<f64> = op.matrix().matvec(&x).iter().map(|v| v / rt_scale).collect();
            let y = factor.solve(u);
            nu += u.iter().map(|v| v * v).sum::<f64>();
            nw += w.iter().map(|v| v * v).sum::<f64>();
            nuw += u.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            nb += (0..lat.n_edges())
                .filter(|&k| lat.has_full_stencil(k))
                .map(|k| (w[k] - rinv_x[k]).powi(2))
                .sum::<f64>();
            q_u += rt_scale * u.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
            q_wx += w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        }
        let r_tilde_norm = rt_scale * inverse_power_norm(&factor, lat.n_edges(), 12);
        rows.push(ErrorTermRow {
            eps,
            side: lat.side(),
            norm_u: nu.sqrt(),
            norm_w: nw.sqrt(),
            norm_u_minus_w: nuw.sqrt(),
            r_tilde_norm,
            norm_w_minus_rinv_x: nb.sqrt(),
            quad_gap: (q_u - q_wx).abs(),
            lattice_variance: q_u,
            riemann_variance: q_wx,
        });
    }
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let fit = |f: fn(&ErrorTermRow) -> f64| loglog_fit(&eps, &rows.iter().map(f).collect::<Vec<_>>()).slope;
    let exponents = ErrorExponents {
        u: fit(|r| r.norm_u),
        w: fit(|r| r.norm_w),
        u_minus_w: fit(|r| r.norm_u_minus_w),
        r_tilde: fit(|r| r.r_tilde_norm),
        w_minus_rinv_x: fit(|r| r.norm_w_minus_rinv_x),
        quad_gap: fit(|r| r.quad_gap),
    };
    Ok(ErrorTerms { rows, exponents })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub side: usize,
    pub lattice_variance: f64,
    pub continuum_variance: f64,
    pub relative_gap: f64,
}

/// Lattice variance for each ε against one continuum value.
pub fn convergence_table(
    form: &TestForm,
    eps_list: &[f64],
    m: f64,
    opts: &LatticeOptions,
) -> Result<Vec<ConvergenceRow>> {
    let cont = continuum_variance(form, m)?;
    eps_list
        .iter()
        .map(|&eps| {
            let lv = lattice_variance(form, eps, m, opts)?;
            Ok(ConvergenceRow {
                eps,
                side: lv.side,
                lattice_variance: lv.value,
                continuum_variance: cont,
                relative_gap: (lv.value - cont).abs() / cont.abs().max(f64::MIN_POSITIVE),
            })
        })
        .collect()
}
