//! Matrix Lie group numerics for U(1), U(N) and SU(N).
//!
//! Group elements are N×N unitary matrices and algebra elements are
//! anti-Hermitian matrices, expanded in a Hilbert–Schmidt orthonormal basis
//! V_1..V_n. All norms are Hilbert–Schmidt (Frobenius).

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand_distr::StandardNormal;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

/// Every numerical tolerance used by this module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub orthonormality: f64,
    pub anti_hermitian: f64,
    pub reconstruction: f64,
    pub unitarity: f64,
    pub determinant: f64,
    /// Series in `exp_jacobian_det` and `expm` stop once a term is below this.
    pub series_term: f64,
}

pub const TOL: Tolerances = Tolerances {
    orthonormality: 1e-12,
    anti_hermitian: 1e-12,
    reconstruction: 1e-12,
    unitarity: 1e-10,
    determinant: 1e-10,
    series_term: 1e-16,
};

/// Default chart radius r₀.
pub const DEFAULT_CHART_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupFamily {
    /// U(1), stored as 1×1 matrices.
    Circle,
    Unitary,
    SpecialUnitary,
}

impl GroupFamily {
    pub fn name(self) -> &'static str {
        match self {
            GroupFamily::Circle => "u1",
            GroupFamily::Unitary => "u",
            GroupFamily::SpecialUnitary => "su",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "u1" | "circle" => Some(GroupFamily::Circle),
            "u" | "unitary" => Some(GroupFamily::Unitary),
            "su" | "special_unitary" | "specialunitary" => Some(GroupFamily::SpecialUnitary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    entries: CMat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement {
    entries: CMat,
    coefficients: Option<Vec<f64>>,
}

impl GroupElement {
    /// Wraps a matrix without checking unitarity.
    pub fn from_matrix_unchecked(entries: CMat) -> Self {
        Self { entries }
    }

    pub fn identity(n: usize) -> Self {
        Self { entries: CMat::identity(n, n) }
    }

    pub fn matrix(&self) -> &CMat {
        &self.entries
    }

    pub fn into_matrix(self) -> CMat {
        self.entries
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn inverse(&self) -> Self {
        Self { entries: self.entries.adjoint() }
    }

    pub fn mul(&self, other: &GroupElement) -> Self {
        Self { entries: &self.entries * &other.entries }
    }

    /// ‖I − U‖, computed directly.
    pub fn distance_to_identity(&self) -> f64 {
        distance_to_identity(&self.entries)
    }
}

impl AlgebraElement {
    pub fn from_matrix_unchecked(entries: CMat) -> Self {
        Self { entries, coefficients: None }
    }

    pub fn zero(n: usize) -> Self {
        Self { entries: CMat::zeros(n, n), coefficients: None }
    }

    pub fn matrix(&self) -> &CMat {
        &self.entries
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        self.coefficients.as_deref()
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn norm(&self) -> f64 {
        self.entries.norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            entries: &self.entries * C64::new(s, 0.0),
            coefficients: self.coefficients.as_ref().map(|c| c.iter().map(|v| v * s).collect()),
        }
    }

    pub fn add(&self, other: &AlgebraElement) -> Self {
        let coefficients = match (&self.coefficients, &other.coefficients) {
            (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| x + y).collect()),
            _ => None,
        };
        Self { entries: &self.entries + &other.entries, coefficients }
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }
}

pub fn distance_to_identity(u: &CMat) -> f64 {
    let n = u.nrows();
    let mut s = 0.0;
    for j in 0..n {
        for k in 0..n {
            let id = if j == k { 1.0 } else { 0.0 };
            s += (C64::new(id, 0.0) - u[(j, k)]).norm_sqr();
        }
    }
    s.sqrt()
}

// ---------------------------------------------------------------------------
// group specification and basis

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    family: GroupFamily,
    matrix_size: usize,
    chart_radius: f64,
    basis: Vec<AlgebraElement>,
}

impl GroupSpec {
    pub fn new(family: GroupFamily, matrix_size: usize) -> Result<Self> {
        Self::with_chart_radius(family, matrix_size, DEFAULT_CHART_RADIUS)
    }

    pub fn with_chart_radius(family: GroupFamily, matrix_size: usize, chart_radius: f64) -> Result<Self> {
        if !(chart_radius > 0.0 && chart_radius <= 0.5) {
            return Err(invalid("chart_radius", format!("must lie in (0, 1/2], got {chart_radius}")));
        }
        let n = match family {
            GroupFamily::Circle => {
                if matrix_size != 1 {
                    return Err(invalid("n", "U(1) uses 1×1 matrices"));
                }
                1
            }
            GroupFamily::Unitary => {
                if matrix_size == 0 {
                    return Err(invalid("n", "matrix size must be positive"));
                }
                matrix_size
            }
            GroupFamily::SpecialUnitary => {
                if matrix_size < 2 {
                    return Err(invalid("n", "SU(N) needs N >= 2"));
                }
                matrix_size
            }
        };
        let basis = build_basis(family, n);
        Ok(Self { family, matrix_size: n, chart_radius, basis })
    }

    pub fn u1() -> Self {
        Self::new(GroupFamily::Circle, 1).expect("U(1) is always valid")
    }

    pub fn unitary(n: usize) -> Result<Self> {
        Self::new(GroupFamily::Unitary, n)
    }

    pub fn special_unitary(n: usize) -> Result<Self> {
        Self::new(GroupFamily::SpecialUnitary, n)
    }

    pub fn family(&self) -> GroupFamily {
        self.family
    }

    pub fn matrix_size(&self) -> usize {
        self.matrix_size
    }

    pub fn algebra_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn chart_radius(&self) -> f64 {
        self.chart_radius
    }

    pub fn basis(&self) -> &[AlgebraElement] {
        &self.basis
    }

    pub fn is_abelian(&self) -> bool {
        self.matrix_size == 1
    }

    pub fn label(&self) -> String {
        match self.family {
            GroupFamily::Circle => "U(1)".to_string(),
            GroupFamily::Unitary => format!("U({})", self.matrix_size),
            GroupFamily::SpecialUnitary => format!("SU({})", self.matrix_size),
        }
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement::identity(self.matrix_size)
    }

    pub fn zero(&self) -> AlgebraElement {
        AlgebraElement {
            entries: CMat::zeros(self.matrix_size, self.matrix_size),
            coefficients: Some(vec![0.0; self.algebra_dim()]),
        }
    }

    /// Coefficients Re⟨X, V_ℓ⟩ of a matrix in the basis.
    pub fn coefficients_of(&self, x: &CMat) -> Vec<f64> {
        self.basis.iter().map(|v| hs_inner_unchecked(x, v.matrix()).re).collect()
    }

    pub fn from_coefficients(&self, c: &[f64]) -> Result<AlgebraElement> {
        if c.len() != self.algebra_dim() {
            return Err(Error::Shape(format!("expected {} coefficients, got {}", self.algebra_dim(), c.len())));
        }
        let n = self.matrix_size;
        let mut m = CMat::zeros(n, n);
        for (v, &a) in self.basis.iter().zip(c) {
            if a != 0.0 {
                m += v.matrix() * C64::new(a, 0.0);
            }
        }
        Ok(AlgebraElement { entries: m, coefficients: Some(c.to_vec()) })
    }

    /// Orthogonal projection of an arbitrary N×N matrix onto 𝔤.
    pub fn project(&self, x: &CMat) -> AlgebraElement {
        let c = self.coefficients_of(x);
        self.from_coefficients(&c).expect("coefficient count matches basis")
    }

    /// Attaches the coefficient cache to an element.
    pub fn with_coefficients(&self, x: AlgebraElement) -> AlgebraElement {
        let c = self.coefficients_of(&x.entries);
        AlgebraElement { entries: x.entries, coefficients: Some(c) }
    }

    pub fn check_group_element(&self, u: &GroupElement) -> Result<()> {
        let n = self.matrix_size;
        if u.size() != n || u.entries.ncols() != n {
            return Err(Error::Shape(format!("expected {n}×{n} group element")));
        }
        let dev = (u.matrix() * u.matrix().adjoint() - CMat::identity(n, n)).norm();
        if dev > TOL.unitarity {
            return Err(invalid("group_element", format!("not unitary (|UU* - I| = {dev:e})")));
        }
        if self.family == GroupFamily::SpecialUnitary {
            let det = u.matrix().determinant();
            if (det - C64::new(1.0, 0.0)).norm() > TOL.determinant {
                return Err(invalid("group_element", format!("det = {det} is not 1")));
            }
        }
        Ok(())
    }

    pub fn check_algebra_element(&self, x: &AlgebraElement) -> Result<()> {
        let n = self.matrix_size;
        if x.size() != n || x.entries.ncols() != n {
            return Err(Error::Shape(format!("expected {n}×{n} algebra element")));
        }
        let skew = (x.matrix() + x.matrix().adjoint()).norm();
        if skew > TOL.anti_hermitian {
            return Err(invalid("algebra_element", format!("not anti-Hermitian ({skew:e})")));
        }
        if self.family == GroupFamily::SpecialUnitary && x.matrix().trace().norm() > TOL.anti_hermitian {
            return Err(invalid("algebra_element", "trace is not zero"));
        }
        if let Some(c) = &x.coefficients {
            let back = self.from_coefficients(c)?;
            if (back.matrix() - x.matrix()).norm() > TOL.reconstruction {
                return Err(invalid("algebra_element", "cached coefficients do not reconstruct the matrix"));
            }
        }
        Ok(())
    }

    /// Standard Gaussian element Σ ξ_ℓ V_ℓ.
    pub fn gaussian_algebra(&self, rng: &mut impl rand::Rng) -> AlgebraElement {
        let c: Vec<f64> = (0..self.algebra_dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.from_coefficients(&c).expect("dimension matches")
    }

    /// Uniformly random direction scaled to the given norm.
    pub fn random_algebra_with_norm(&self, rng: &mut impl rand::Rng, norm: f64) -> AlgebraElement {
        loop {
            let c: Vec<f64> = (0..self.algebra_dim()).map(|_| rng.sample(StandardNormal)).collect();
            let r = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r > 1e-12 {
                let scaled: Vec<f64> = c.iter().map(|v| v * norm / r).collect();
                return self.from_coefficients(&scaled).expect("dimension matches");
            }
        }
    }
}

fn unit(n: usize, j: usize, k: usize, z: C64) -> CMat {
    let mut m = CMat::zeros(n, n);
    m[(j, k)] = z;
    m
}

/// Canonical generators orthonormalised by Gram–Schmidt, in a fixed order:
/// off-diagonal real-antisymmetric and imaginary-symmetric pairs for j<k, then
/// the diagonal part (i·E_kk for U(N), i(E_kk − E_{k+1,k+1}) for SU(N)).
fn build_basis(family: GroupFamily, n: usize) -> Vec<AlgebraElement> {
    let i = C64::new(0.0, 1.0);
    let one = C64::new(1.0, 0.0);
    let mut raw: Vec<CMat> = Vec::new();
    if family == GroupFamily::Circle {
        raw.push(unit(1, 0, 0, i));
    } else {
        for j in 0..n {
            for k in j + 1..n {
                raw.push(unit(n, j, k, one) - unit(n, k, j, one));
                raw.push(unit(n, j, k, i) + unit(n, k, j, i));
            }
        }
        match family {
            GroupFamily::Unitary => {
                for k in 0..n {
                    raw.push(unit(n, k, k, i));
                }
            }
            GroupFamily::SpecialUnitary => {
                for k in 0..n - 1 {
                    raw.push(unit(n, k, k, i) - unit(n, k + 1, k + 1, i));
                }
            }
            GroupFamily::Circle => unreachable!(),
        }
    }
    let mut basis: Vec<CMat> = Vec::with_capacity(raw.len());
    for mut v in raw {
        for b in &basis {
            let p = hs_inner_unchecked(&v, b).re;
            v -= b * C64::new(p, 0.0);
        }
        let norm = v.norm();
        basis.push(v / C64::new(norm, 0.0));
    }
    let dim = basis.len();
    basis
        .into_iter()
        .enumerate()
        .map(|(l, entries)| {
            let mut c = vec![0.0; dim];
            c[l] = 1.0;
            AlgebraElement { entries, coefficients: Some(c) }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// inner product, exp, log

/// Hilbert–Schmidt inner product Tr(AB*).
pub fn hs_inner(a: &CMat, b: &CMat) -> Result<C64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(hs_inner_unchecked(a, b))
}

fn hs_inner_unchecked(a: &CMat, b: &CMat) -> C64 {
    (a * b.adjoint()).trace()
}

/// Matrix exponential by scaling and squaring of the Taylor series.
pub fn expm(x: &CMat) -> CMat {
    let n = x.nrows();
    let norm = x.norm();
    let mut squarings = 0u32;
    let mut scaled = norm;
    while scaled > 0.25 {
        scaled *= 0.5;
        squarings += 1;
    }
    let y = x / C64::new(2f64.powi(squarings as i32), 0.0);
    let mut sum = CMat::identity(n, n);
    let mut term = CMat::identity(n, n);
    for k in 1..40 {
        term = &term * &y / C64::new(k as f64, 0.0);
        sum += &term;
        if term.norm() < TOL.series_term * 1e-2 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

pub fn mat_exp(x: &AlgebraElement) -> GroupElement {
    if x.size() == 1 {
        let z = x.entries[(0, 0)];
        return GroupElement { entries: CMat::from_element(1, 1, z.exp()) };
    }
    GroupElement { entries: expm(&x.entries) }
}

/// Principal logarithm on the chart ‖I − U‖ < r₀.
///
/// The Cayley transform C = i(I − U)(I + U)⁻¹ is Hermitian with U's
/// eigenvectors and eigenvalues tan(θ/2); the principal angles θ ∈ (−π, π)
/// follow from its spectral decomposition.
pub fn principal_log(spec: &GroupSpec, u: &GroupElement) -> Result<AlgebraElement> {
    let distance = u.distance_to_identity();
    if distance >= spec.chart_radius() {
        return Err(Error::ChartViolation { distance, radius: spec.chart_radius() });
    }
    Ok(spectral_log(spec, u))
}

fn spectral_log(spec: &GroupSpec, u: &GroupElement) -> AlgebraElement {
    let n = u.size();
    if n == 1 {
        let theta = u.entries[(0, 0)].arg();
        return spec.from_coefficients(&[theta]).expect("U(1) has one coefficient");
    }
    let id = CMat::identity(n, n);
    let plus = &id + &u.entries;
    let minus = &id - &u.entries;
    let inv = plus.try_inverse().expect("I + U is invertible inside the chart");
    let mut cayley = (minus * inv) * C64::new(0.0, 1.0);
    // Symmetrise away rounding so the Hermitian solver sees an exact Hermitian matrix.
    cayley = (&cayley + cayley.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(cayley);
    let q = &eig.eigenvectors;
    let mut d = CMat::zeros(n, n);
    for k in 0..n {
        d[(k, k)] = C64::new(0.0, 2.0 * eig.eigenvalues[k].atan());
    }
    let x = q * d * q.adjoint();
    spec.project(&x)
}

/// 𝖫𝗈𝗀: principal log inside the chart, zero outside.
pub fn truncated_log(spec: &GroupSpec, u: &GroupElement) -> AlgebraElement {
    if u.distance_to_identity() < spec.chart_radius() {
        spectral_log(spec, u)
    } else {
        spec.zero()
    }
}

// ---------------------------------------------------------------------------
// Haar sampling

pub fn haar_sample(spec: &GroupSpec, rng: &mut impl rand::Rng) -> GroupElement {
    let n = spec.matrix_size();
    if spec.family() == GroupFamily::Circle {
        let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        return GroupElement { entries: CMat::from_element(1, 1, C64::from_polar(1.0, theta)) };
    }
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let z = CMat::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    });
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..n {
        let d = r[(k, k)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for j in 0..n {
            q[(j, k)] *= phase;
        }
    }
    if spec.family() == GroupFamily::SpecialUnitary {
        let det = q.determinant();
        let fix = C64::from_polar(1.0, -det.arg() / n as f64);
        q *= fix;
    }
    GroupElement { entries: q }
}

// ---------------------------------------------------------------------------
// ad, Jacobian, BCH

pub fn ad_apply(x: &AlgebraElement, y: &AlgebraElement) -> AlgebraElement {
    AlgebraElement::from_matrix_unchecked(x.matrix() * y.matrix() - y.matrix() * x.matrix())
}

/// Real n×n matrix of ad_X in the basis: entry (ℓ, k) = Re⟨[X, V_k], V_ℓ⟩.
pub fn ad_matrix(spec: &GroupSpec, x: &AlgebraElement) -> DMatrix<f64> {
    let n = spec.algebra_dim();
    let mut m = DMatrix::zeros(n, n);
    for (k, vk) in spec.basis().iter().enumerate() {
        let c = ad_apply(x, vk);
        for (l, vl) in spec.basis().iter().enumerate() {
            m[(l, k)] = hs_inner_unchecked(c.matrix(), vl.matrix()).re;
        }
    }
    m
}

/// |det M(X)| with M(X) = Σ_k (−ad_X)^k/(k+1)!, the Haar density in log coordinates.
pub fn exp_jacobian_det(spec: &GroupSpec, x: &AlgebraElement) -> f64 {
    if spec.is_abelian() {
        return 1.0;
    }
    let n = spec.algebra_dim();
    let neg_ad = -ad_matrix(spec, x);
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut factorial = 1.0;
    for k in 1..200 {
        power = &power * &neg_ad;
        factorial *= (k + 1) as f64;
        let term = &power / factorial;
        let small = term.norm() < TOL.series_term;
        sum += term;
        if small {
            break;
        }
    }
    sum.determinant().abs()
}

/// log |det M(X)| from the spectrum of X: with eigenvalues iμ_a,
/// |det M(X)| = Π_{a<b} sinc²((μ_a − μ_b)/2). Agrees with
/// [`exp_jacobian_det`] and costs one Hermitian eigendecomposition.
pub fn log_exp_jacobian_det(spec: &GroupSpec, x: &AlgebraElement) -> f64 {
    if spec.is_abelian() {
        return 0.0;
    }
    let h = x.matrix().map(|z| z * C64::new(0.0, -1.0));
    let mu = nalgebra::SymmetricEigen::new(h).eigenvalues;
    let mut s = 0.0;
    for a in 0..mu.len() {
        for b in a + 1..mu.len() {
            let t = 0.5 * (mu[a] - mu[b]);
            if t.abs() > 1e-12 {
                s += 2.0 * (t.sin() / t).abs().ln();
            }
        }
    }
    s
}

/// ‖𝖫𝗈𝗀(exp X · exp Y) − X − Y‖.
pub fn bch_defect(spec: &GroupSpec, x: &AlgebraElement, y: &AlgebraElement) -> Result<f64> {
    let prod = mat_exp(x).mul(&mat_exp(y));
    let z = principal_log(spec, &prod)?;
    Ok((z.matrix() - x.matrix() - y.matrix()).norm())
}

/// | ‖I − Π exp(X_i)‖² − ‖ΣX_i‖² | for four algebra elements.
pub fn quartic_holonomy_defect(xs: [&AlgebraElement; 4]) -> Result<f64> {
    let m = xs.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if m >= 1.0 {
        return Err(invalid("max_norm", format!("M = {m} must be < 1")));
    }
    let n = xs[0].size();
    let mut prod = CMat::identity(n, n);
    let mut sum = CMat::zeros(n, n);
    for x in xs {
        prod *= mat_exp(x).matrix();
        sum += x.matrix();
    }
    let lhs = distance_to_identity(&prod).powi(2);
    Ok((lhs - sum.norm_squared()).abs())
}

// ---------------------------------------------------------------------------
// serialisation: row-major arrays of [re, im] pairs

fn write_entries<S: Serializer>(m: &CMat, s: S) -> std::result::Result<S::Ok, S::Error> {
    let n = m.nrows();
    let mut flat: Vec<[f64; 2]> = Vec::with_capacity(n * n);
    for j in 0..n {
        for k in 0..m.ncols() {
            flat.push([m[(j, k)].re, m[(j, k)].im]);
        }
    }
    flat.serialize(s)
}

fn read_entries<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CMat, D::Error> {
    let flat: Vec<[f64; 2]> = Vec::deserialize(d)?;
    let n = (flat.len() as f64).sqrt().round() as usize;
    if n * n != flat.len() || n == 0 {
        return Err(D::Error::custom(format!("{} entries do not form a square matrix", flat.len())));
    }
    Ok(CMat::from_fn(n, n, |j, k| {
        let [re, im] = flat[j * n + k];
        C64::new(re, im)
    }))
}

pub fn pairs_to_matrix(flat: &[[f64; 2]], n: usize) -> Result<CMat> {
    if flat.len() != n * n {
        return Err(Error::Shape(format!("expected {} entries for a {n}×{n} matrix, got {}", n * n, flat.len())));
    }
    Ok(CMat::from_fn(n, n, |j, k| C64::new(flat[j * n + k][0], flat[j * n + k][1])))
}

pub fn matrix_to_pairs(m: &CMat) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for j in 0..m.nrows() {
        for k in 0..m.ncols() {
            out.push([m[(j, k)].re, m[(j, k)].im]);
        }
    }
    out
}

impl Serialize for GroupElement {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        write_entries(&self.entries, s)
    }
}

impl<'de> Deserialize<'de> for GroupElement {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(GroupElement { entries: read_entries(d)? })
    }
}

impl Serialize for AlgebraElement {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        write_entries(&self.entries, s)
    }
}

impl<'de> Deserialize<'de> for AlgebraElement {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(AlgebraElement { entries: read_entries(d)?, coefficients: None })
    }
}

/// Config-facing record of a group: family, N and r₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub family: GroupFamily,
    pub n: usize,
    pub chart_radius: f64,
}

impl From<&GroupSpec> for GroupRecord {
    fn from(g: &GroupSpec) -> Self {
        Self { family: g.family, n: g.matrix_size, chart_radius: g.chart_radius }
    }
}

impl TryFrom<GroupRecord> for GroupSpec {
    type Error = Error;
    fn try_from(r: GroupRecord) -> Result<Self> {
        GroupSpec::with_chart_radius(r.family, r.n, r.chart_radius)
    }
}

impl Serialize for GroupSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GroupRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for GroupSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = GroupRecord::deserialize(d)?;
        GroupSpec::try_from(r).map_err(D::Error::custom)
    }
}
