//! Comparisons between the lifted YMH measure and the lattice Proca field.
//!
//! Fields passed here cover every edge of the model's lattice; on a box the
//! boundary entries carry η = 𝖫𝗈𝗀 γ. Both log-densities are unnormalised and
//! share the convention that the boundary contributes through its plaquettes
//! and its mass term.

use serde::Serialize;

use crate::continuum::{pair_with_integrals, TestForm};
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::field::AlgebraEdgeField;
use crate::lattice::{Lattice, SLOT_SIGN};
use crate::lie::{distance_to_identity, expm, log_exp_jacobian_det, GroupFamily};
use crate::proca::{assemble_precision, condition_on_boundary, curl, ConditionalField, FreeSampler, ProcaBoundary};
use crate::rng::{self, Rng};
use crate::stats::{batch_means_se, ks_two_sample, loglog_fit, mean, variance, KsResult, LineFit};
use crate::ymh::{GaugeConfig, LiftScale, YmhModel, YmhParams};

/// S(X) = ½ Σ_ℓ [Σ_p (dX^ℓ)_p² + m Σ_e (X^ℓ_e)²].
pub fn proca_action(lattice: &Lattice, mass: f64, x: &AlgebraEdgeField) -> f64 {
    (0..x.algebra_dim()).map(|l| 0.5 * crate::proca::scalar_energy(lattice, mass, &x.component(l))).sum()
}

/// −β S(X).
pub fn log_density_proca(model: &YmhModel, x: &AlgebraEdgeField) -> f64 {
    let p = model.params();
    -p.beta * proca_action(model.lattice(), p.mass, x)
}

fn check_chart(model: &YmhModel, x: &AlgebraEdgeField) -> Result<()> {
    if x.n_edges() != model.lattice().n_edges() || x.algebra_dim() != model.group().algebra_dim() {
        return Err(Error::Shape("field does not match the model".into()));
    }
    let r0 = model.group().chart_radius();
    let worst = x.max_norm();
    if worst >= r0 {
        return Err(Error::ChartViolation { distance: worst, radius: r0 });
    }
    Ok(())
}

/// −β 𝓗(exp X) + Σ_{free e} log |det M(X_e)|.
pub fn log_density_lifted_ymh(model: &YmhModel, x: &AlgebraEdgeField) -> Result<f64> {
    check_chart(model, x)?;
    let cfg = GaugeConfig::from_algebra(x);
    let g = model.group();
    let jac: f64 = model.updatable().iter().map(|&k| log_exp_jacobian_det(g, &x.element(k))).sum();
    Ok(-model.params().beta * model.action(&cfg) + jac)
}

/// 𝓗(exp X) − S(X).
pub fn action_gap(model: &YmhModel, x: &AlgebraEdgeField) -> Result<f64> {
    check_chart(model, x)?;
    Ok(model.action(&GaugeConfig::from_algebra(x)) - proca_action(model.lattice(), model.params().mass, x))
}

/// ψ(X) = e^{log p_YMH(X) − log p_Proca(X)} − 1.
pub fn residual_psi(model: &YmhModel, x: &AlgebraEdgeField) -> Result<f64> {
    Ok((log_density_lifted_ymh(model, x)? - log_density_proca(model, x)).exp_m1())
}

/// (𝓐₁, 𝓐₂): ‖I − exp X_e‖ ≤ β^{κ−1/2} on the 𝓔₁ edges and
/// ‖X_e‖ ≤ ½β^{κ/2−1/2} on the 𝓔₂ edges.
pub fn lifted_events(model: &YmhModel, x: &AlgebraEdgeField) -> (bool, bool) {
    let p = model.params();
    let (e1, e2) = model.event_edges();
    let t1 = p.interior_threshold();
    let t2 = 0.5 * p.boundary_threshold();
    let a1 = e1.iter().all(|&k| distance_to_identity(&expm(x.element(k).matrix())) <= t1);
    let a2 = e2.iter().all(|&k| x.norm(k) <= t2);
    (a1, a2)
}

// ---------------------------------------------------------------------------
// Proca draws matched to a model

/// The Proca law on the model's lattice at the model's β and m: the free
/// field on a torus, the field conditioned on η = 𝖫𝗈𝗀 γ on a box.
#[derive(Debug, Clone)]
pub enum MatchedProca {
    Free(FreeSampler),
    Conditioned(Box<ConditionalField>),
}

impl MatchedProca {
    pub fn new(model: &YmhModel) -> Result<Self> {
        let p = model.params();
        let op = assemble_precision(model.lattice(), p.beta, p.mass)?;
        if model.lattice().is_torus() {
            Ok(Self::Free(FreeSampler::new(&op)?))
        } else {
            let lifted = model.lift(&model.identity_config(), LiftScale::Raw);
            let eta = ProcaBoundary::from_field(&lifted, model.lattice())?;
            Ok(Self::Conditioned(Box::new(condition_on_boundary(&op, model.group(), &eta)?)))
        }
    }

    pub fn draw(&self, model: &YmhModel, rng: &mut Rng) -> AlgebraEdgeField {
        match self {
            Self::Free(s) => s.algebra(model.group(), model.lattice(), rng),
            Self::Conditioned(c) => c.sample(rng),
        }
    }
}

// ---------------------------------------------------------------------------
// residual scaling

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub beta: f64,
    /// Proca draws made to collect `accepted` of them inside 𝓐 = 𝓐₁ ∩ 𝓐₂.
    pub draws: usize,
    pub accepted: usize,
    pub sup_psi: f64,
    pub mean_abs_psi: f64,
    pub max_edge_norm: f64,
}

/// Upper limit on draws per β, as a multiple of the requested hits.
pub const RESIDUAL_DRAW_FACTOR: usize = 10_000;

/// sup |ψ| over the first `hits` Proca draws that land in 𝓐, one row per β.
/// A sample maximum grows with the sample size, so every β gets the same
/// number of in-event draws.
pub fn residual_scan(
    params: &YmhParams,
    betas: &[f64],
    hits: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<ResidualRow>> {
    if hits == 0 {
        return Err(invalid("samples", "need at least one draw inside the events"));
    }
    const BATCH: usize = 4096;
    betas
        .iter()
        .enumerate()
        .map(|(bi, &beta)| {
            let model = YmhModel::new(params.clone().with_beta(beta))?;
            let proca = MatchedProca::new(&model)?;
            let s = rng::child_seed(seed, bi as u64);
            let mut found: Vec<(f64, f64)> = Vec::with_capacity(hits);
            let (mut offset, mut draws) = (0usize, 0usize);
            while found.len() < hits {
                if offset >= hits.saturating_mul(RESIDUAL_DRAW_FACTOR) {
                    return Err(Error::EmptyEvent);
                }
                let batch: Vec<Option<(f64, f64)>> = exec.map(BATCH, |i| {
                    let x = proca.draw(&model, &mut rng::stream(s, (offset + i) as u64));
                    let (a1, a2) = lifted_events(&model, &x);
                    if !(a1 && a2) {
                        return None;
                    }
                    residual_psi(&model, &x).ok().map(|psi| (psi.abs(), x.max_norm()))
                });
                // index order, so the result does not depend on the batch size
                for (i, v) in batch.into_iter().enumerate() {
                    if let (Some(hit), true) = (v, found.len() < hits) {
                        found.push(hit);
                        draws = offset + i + 1;
                    }
                }
                offset += BATCH;
            }
            Ok(ResidualRow {
                beta,
                draws,
                accepted: found.len(),
                sup_psi: found.iter().map(|h| h.0).fold(0.0, f64::max),
                mean_abs_psi: found.iter().map(|h| h.0).sum::<f64>() / found.len() as f64,
                max_edge_norm: found.iter().map(|h| h.1).fold(0.0, f64::max),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapFit {
    pub max_norms: Vec<f64>,
    pub gaps: Vec<f64>,
    pub fit: LineFit,
}

/// |𝓗(exp tX) − S(tX)| along a ray, fitted against M = max_e ‖tX_e‖.
pub fn action_gap_fit(model: &YmhModel, direction: &AlgebraEdgeField, scales: &[f64]) -> Result<GapFit> {
    let mut max_norms = Vec::with_capacity(scales.len());
    let mut gaps = Vec::with_capacity(scales.len());
    for &t in scales {
        let x = direction.scaled(t);
        max_norms.push(x.max_norm());
        gaps.push(action_gap(model, &x)?.abs());
    }
    let fit = loglog_fit(&max_norms, &gaps);
    Ok(GapFit { max_norms, gaps, fit })
}

// ---------------------------------------------------------------------------
// exact total variation for U(1)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TvMeasure {
    /// e^{−β𝓗(e^{iθ})}; the Jacobian is 1.
    LiftedYmh,
    /// e^{−βS(θ)}.
    Proca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TvRegion {
    /// Every free angle in (−r₀, r₀).
    Chart,
    /// Restricted to 𝓐 = 𝓐₁ ∩ 𝓐₂ and renormalised.
    Events,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TvSide {
    pub measure: TvMeasure,
    pub region: TvRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TvOptions {
    /// Gauss–Legendre points per free edge on the event interval.
    pub points: usize,
    /// Replace 𝓗 by S in the YMH density; the two laws then coincide.
    pub quadratic_only: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TvOptions {
    fn default() -> Self {
        Self { points: 48, quadratic_only: false, exec: Exec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvResult {
    pub tv: f64,
    pub norm_a: f64,
    pub norm_b: f64,
    /// ‖φ_a − φ_b‖₁ for the unnormalised restricted densities.
    pub l1_unnormalised: f64,
    /// ‖φ_a − φ_b‖₁ / max(‖φ_a‖₁, ‖φ_b‖₁), an upper bound for `tv`.
    pub claim_bound: f64,
    /// Mass each normalised law puts on 𝓐.
    pub events_mass_a: f64,
    pub events_mass_b: f64,
    pub free_edges: usize,
    pub grid_points: u64,
}

pub const MAX_TV_EDGES: usize = 6;
pub const MAX_TV_POINTS: u64 = 200_000_000;

struct AxisNodes {
    nodes: Vec<(f64, f64, bool)>,
}

fn gl_on(k: usize, a: f64, b: f64, inside: bool, out: &mut Vec<(f64, f64, bool)>) {
    let rule = gauss_quad::legendre::GaussLegendre::new(std::num::NonZeroUsize::new(k).expect("k >= 1"));
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    for (x, w) in rule.as_node_weight_pairs() {
        out.push((mid + half * x, half * w, inside));
    }
}

struct U1Energy {
    /// Per plaquette, (free index or fixed angle, sign).
    plaquettes: Vec<Vec<(std::result::Result<usize, f64>, f64)>>,
    fixed_mass_h: f64,
    fixed_mass_s: f64,
    mass: f64,
}

impl U1Energy {
    fn eval(&self, theta: &[f64]) -> (f64, f64) {
        let (mut h, mut s) = (self.fixed_mass_h, self.fixed_mass_s);
        for t in theta {
            h += self.mass * (1.0 - t.cos());
            s += 0.5 * self.mass * t * t;
        }
        for p in &self.plaquettes {
            let a: f64 = p.iter().map(|(slot, sign)| sign * slot.map_or_else(|fixed| fixed, |i| theta[i])).sum();
            h += 1.0 - a.cos();
            s += 0.5 * a * a;
        }
        (h, s)
    }
}

/// TV between the lifted YMH law and the Proca law, both restricted to 𝓐.
pub fn exact_tv_u1(model: &YmhModel, opts: &TvOptions) -> Result<TvResult> {
    let side = |measure| TvSide { measure, region: TvRegion::Events };
    exact_tv_u1_between(model, side(TvMeasure::LiftedYmh), side(TvMeasure::Proca), opts)
}

/// TV between two U(1) laws on the free angles, by a tensor Gauss–Legendre
/// grid that has a panel break at every event threshold.
pub fn exact_tv_u1_between(model: &YmhModel, a: TvSide, b: TvSide, opts: &TvOptions) -> Result<TvResult> {
    if model.group().family() != GroupFamily::Circle {
        return Err(invalid("group", "exact TV is implemented for U(1) only"));
    }
    if opts.points < 2 || opts.points > 64 {
        return Err(invalid("quadrature_points", format!("need 2 <= K <= 64, got {}", opts.points)));
    }
    let lat = model.lattice();
    let free = model.updatable();
    if free.len() > MAX_TV_EDGES {
        return Err(Error::TooLarge { what: "free edges for exact TV", size: free.len(), limit: MAX_TV_EDGES });
    }
    let p = model.params();
    let r0 = model.group().chart_radius();
    let (e1, e2) = model.event_edges();
    let t1 = p.interior_threshold();
    let t2 = 0.5 * p.boundary_threshold();
    let cfg = model.identity_config();
    let angle = |k: usize| cfg.link(k)[(0, 0)].arg();
    // boundary data must itself satisfy the events
    for &k in e1.iter().filter(|&&k| model.is_fixed(k)) {
        if distance_to_identity(cfg.link(k)) > t1 {
            return Err(Error::EmptyEvent);
        }
    }
    for &k in e2.iter().filter(|&&k| model.is_fixed(k)) {
        if angle(k).abs() > t2 {
            return Err(Error::EmptyEvent);
        }
    }

    let mut local = vec![usize::MAX; lat.n_edges()];
    for (i, &k) in free.iter().enumerate() {
        local[k] = i;
    }
    let need_outer = a.region == TvRegion::Chart || b.region == TvRegion::Chart;
    let k_outer = (opts.points / 2).max(4);
    let axes: Vec<AxisNodes> = free
        .iter()
        .map(|&k| {
            let mut half = r0;
            if e1.contains(&k) {
                half = half.min(if t1 >= 2.0 { std::f64::consts::PI } else { 2.0 * (0.5 * t1).asin() });
            }
            if e2.contains(&k) {
                half = half.min(t2);
            }
            let mut nodes = Vec::new();
            gl_on(opts.points, -half, half, true, &mut nodes);
            if need_outer && half < r0 {
                gl_on(k_outer, -r0, -half, false, &mut nodes);
                gl_on(k_outer, half, r0, false, &mut nodes);
            }
            AxisNodes { nodes }
        })
        .collect();
    let total: u64 = axes.iter().map(|ax| ax.nodes.len() as u64).product();
    if total > MAX_TV_POINTS {
        return Err(Error::TooLarge {
            what: "quadrature grid points",
            size: total as usize,
            limit: MAX_TV_POINTS as usize,
        });
    }

    let plaquettes = lat
        .plaquettes()
        .iter()
        .map(|pl| {
            pl.slots
                .iter()
                .zip(SLOT_SIGN)
                .filter_map(|(s, sign)| s.map(|k| (if model.is_fixed(k) { Err(angle(k)) } else { Ok(local[k]) }, sign)))
                .collect()
        })
        .collect();
    let fixed: Vec<f64> = (0..lat.n_edges()).filter(|&k| model.is_fixed(k)).map(angle).collect();
    let energy = U1Energy {
        plaquettes,
        fixed_mass_h: p.mass * fixed.iter().map(|t| 1.0 - t.cos()).sum::<f64>(),
        fixed_mass_s: 0.5 * p.mass * fixed.iter().map(|t| t * t).sum::<f64>(),
        mass: p.mass,
    };
    let (h0, s0) = energy.eval(&vec![0.0; free.len()]);
    let shift = p.beta * h0.min(s0);
    let beta = p.beta;
    let quadratic_only = opts.quadratic_only;
    let density = move |side: TvSide, h: f64, s: f64, inside: bool| -> f64 {
        if side.region == TvRegion::Events && !inside {
            return 0.0;
        }
        let e = match side.measure {
            TvMeasure::LiftedYmh if !quadratic_only => h,
            _ => s,
        };
        (shift - beta * e).exp()
    };

    let n = free.len();
    let point = |t: u64, theta: &mut [f64]| -> (f64, bool) {
        let mut r = t;
        let mut w = 1.0;
        let mut inside = true;
        for i in (0..n).rev() {
            let len = axes[i].nodes.len() as u64;
            let (x, wi, ins) = axes[i].nodes[(r % len) as usize];
            r /= len;
            theta[i] = x;
            w *= wi;
            inside &= ins;
        }
        (w, inside)
    };
    const CHUNK: usize = 1 << 16;
    let pass1 = opts.exec.map_chunks(total as usize, CHUNK, |_, range| {
        let mut theta = vec![0.0; n];
        let mut acc = [0.0f64; 5];
        for t in range {
            let (w, inside) = point(t as u64, &mut theta);
            let (h, s) = energy.eval(&theta);
            let (fa, fb) = (density(a, h, s, inside), density(b, h, s, inside));
            acc[0] += w * fa;
            acc[1] += w * fb;
            acc[2] += w * (fa - fb).abs();
            if inside {
                acc[3] += w * fa;
                acc[4] += w * fb;
            }
        }
        acc
    });
    let mut s1 = [0.0f64; 5];
    for c in pass1 {
        for (x, y) in s1.iter_mut().zip(c) {
            *x += y;
        }
    }
    let (na, nb) = (s1[0], s1[1]);
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::Numeric("a density vanishes on the whole grid".into()));
    }
    let pass2 = opts.exec.map_chunks(total as usize, CHUNK, |_, range| {
        let mut theta = vec![0.0; n];
        let mut acc = 0.0;
        for t in range {
            let (w, inside) = point(t as u64, &mut theta);
            let (h, s) = energy.eval(&theta);
            acc += w * (density(a, h, s, inside) / na - density(b, h, s, inside) / nb).abs();
        }
        acc
    });
    let tv = 0.5 * pass2.iter().sum::<f64>();
    Ok(TvResult {
        tv,
        norm_a: na,
        norm_b: nb,
        l1_unnormalised: s1[2],
        claim_bound: s1[2] / na.max(nb),
        events_mass_a: s1[3] / na,
        events_mass_b: s1[4] / nb,
        free_edges: n,
        grid_points: total,
    })
}

// ---------------------------------------------------------------------------
// d_TV(P, P_E) = P(E^c)

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TvIdentity {
    /// ½ Σ_i |1/N − 1{E}/N_E|, the TV between the empirical law and its
    /// restriction to E.
    pub lhs: f64,
    /// Empirical P(E^c).
    pub rhs: f64,
    /// Binomial standard error of `rhs`.
    pub se: f64,
    pub samples: usize,
    pub in_event: usize,
}

pub fn tv_conditional_identity_check<T>(samples: &[T], event: impl Fn(&T) -> bool) -> Result<TvIdentity> {
    let flags: Vec<bool> = samples.iter().map(event).collect();
    let n = flags.len();
    let ne = flags.iter().filter(|f| **f).count();
    if ne == 0 {
        return Err(Error::EmptyEvent);
    }
    let (nf, nef) = (n as f64, ne as f64);
    let lhs = 0.5 * flags.iter().map(|&f| (1.0 / nf - if f { 1.0 / nef } else { 0.0 }).abs()).sum::<f64>();
    let rhs = 1.0 - nef / nf;
    Ok(TvIdentity { lhs, rhs, se: (rhs * (1.0 - rhs) / nf).sqrt(), samples: n, in_event: ne })
}

// ---------------------------------------------------------------------------
// moments and two-sample statistics

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableComparison {
    pub name: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    /// (mean_a − mean_b)/SE with batch-means standard errors.
    pub z_mean: f64,
    /// The same for the second moments.
    pub z_second: f64,
    pub ks: KsResult,
}

const BATCHES: usize = 20;

fn z_score(a: &[f64], b: &[f64]) -> f64 {
    let se = (batch_means_se(a, BATCHES).powi(2) + batch_means_se(b, BATCHES).powi(2)).sqrt();
    let d = mean(a) - mean(b);
    if se > 0.0 {
        d / se
    } else if d == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(d)
    }
}

/// `a` may be a correlated chain; batch means absorb the autocorrelation.
pub fn compare_samples(name: &str, a: &[f64], b: &[f64]) -> Result<ObservableComparison> {
    if a.len() < 2 * BATCHES || b.len() < 2 * BATCHES {
        return Err(invalid("samples", format!("need at least {} samples per side", 2 * BATCHES)));
    }
    let sq = |xs: &[f64]| xs.iter().map(|x| x * x).collect::<Vec<_>>();
    Ok(ObservableComparison {
        name: name.to_string(),
        mean_a: mean(a),
        mean_b: mean(b),
        var_a: variance(a),
        var_b: variance(b),
        z_mean: z_score(a, b),
        z_second: z_score(&sq(a), &sq(b)),
        ks: ks_two_sample(a, b),
    })
}

/// (1/|P|) Σ_p ‖(dA)_p‖⁴ with A = √β X.
pub fn plaquette_quartic(lattice: &Lattice, x: &AlgebraEdgeField, beta: f64) -> f64 {
    let np = lattice.plaquettes().len();
    if np == 0 {
        return 0.0;
    }
    let mut sq = vec![0.0; np];
    for l in 0..x.algebra_dim() {
        for (s, c) in sq.iter_mut().zip(curl(lattice, &x.component(l))) {
            *s += beta * c * c;
        }
    }
    sq.iter().map(|s| s * s).sum::<f64>() / np as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub samples_ymh: usize,
    pub samples_proca: usize,
    pub observables: Vec<ObservableComparison>,
}

impl MomentReport {
    pub fn max_abs_z(&self) -> f64 {
        self.observables.iter().flat_map(|o| [o.z_mean.abs(), o.z_second.abs()]).fold(0.0, f64::max)
    }
}

/// Pairings Z^ε(F), their squares and the plaquette quartic, compared between
/// lifted YMH samples and Proca samples (both unscaled X; the pairing applies √β).
pub fn moment_comparison(
    lattice: &Lattice,
    ymh: &[AlgebraEdgeField],
    proca: &[AlgebraEdgeField],
    forms: &[(String, TestForm)],
    eps: f64,
    beta: f64,
) -> Result<MomentReport> {
    let mut observables = Vec::new();
    for (name, form) in forms {
        let u = form.cell_integrals(lattice, eps)?;
        let za: Vec<f64> = ymh.iter().map(|x| pair_with_integrals(x, &u, eps, beta)).collect();
        let zb: Vec<f64> = proca.iter().map(|x| pair_with_integrals(x, &u, eps, beta)).collect();
        observables.push(compare_samples(&format!("pair:{name}"), &za, &zb)?);
    }
    let qa: Vec<f64> = ymh.iter().map(|x| plaquette_quartic(lattice, x, beta)).collect();
    let qb: Vec<f64> = proca.iter().map(|x| plaquette_quartic(lattice, x, beta)).collect();
    observables.push(compare_samples("plaquette_quartic", &qa, &qb)?);
    Ok(MomentReport { samples_ymh: ymh.len(), samples_proca: proca.len(), observables })
}

// ---------------------------------------------------------------------------
// independence Metropolis in log coordinates

/// The lifted YMH law on the chart, π(X) ∝ e^{−β𝓗(exp X)} Π_e |det M(X_e)|,
/// sampled by independence Metropolis with the matched Proca law as the
/// proposal: X′ is accepted with probability min(1, w(X′)/w(X)), w = 1 + ψ.
pub struct LiftedYmhSampler<'a> {
    model: &'a YmhModel,
    proposal: MatchedProca,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndependenceStats {
    pub steps: usize,
    pub accepted: usize,
    /// Proposals outside the chart, always rejected.
    pub outside_chart: usize,
}

impl IndependenceStats {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.steps.max(1) as f64
    }
}

impl<'a> LiftedYmhSampler<'a> {
    pub fn new(model: &'a YmhModel) -> Result<Self> {
        Ok(Self { model, proposal: MatchedProca::new(model)? })
    }

    pub fn proposal(&self) -> &MatchedProca {
        &self.proposal
    }

    fn log_weight(&self, x: &AlgebraEdgeField) -> Option<f64> {
        log_density_lifted_ymh(self.model, x).ok().map(|ly| ly - log_density_proca(self.model, x))
    }

    /// Runs `burn_in + steps` transitions; `observe(state, proposal)` sees
    /// every post-burn-in step.
    pub fn run(
        &self,
        steps: usize,
        burn_in: usize,
        seed: u64,
        mut observe: impl FnMut(&AlgebraEdgeField, &AlgebraEdgeField),
    ) -> Result<IndependenceStats> {
        let mut r = rng::stream(seed, 0);
        let mut stats = IndependenceStats { steps, accepted: 0, outside_chart: 0 };
        let mut state = None;
        for _ in 0..1000 {
            let x = self.proposal.draw(self.model, &mut r);
            if let Some(lw) = self.log_weight(&x) {
                state = Some((x, lw));
                break;
            }
        }
        let (mut x, mut lw) = state.ok_or_else(|| Error::Numeric("no proposal landed inside the chart".into()))?;
        for step in 0..burn_in + steps {
            let y = self.proposal.draw(self.model, &mut r);
            let counted = step >= burn_in;
            match self.log_weight(&y) {
                None => {
                    if counted {
                        stats.outside_chart += 1;
                    }
                }
                Some(ly) => {
                    let u: f64 = rand::Rng::random(&mut r);
                    if ly >= lw || u < (ly - lw).exp() {
                        if counted {
                            stats.accepted += 1;
                        }
                        x = y.clone();
                        lw = ly;
                    }
                }
            }
            if counted {
                observe(&x, &y);
            }
        }
        Ok(stats)
    }
}

// ---------------------------------------------------------------------------
// reports

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Statistic {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendVerdict {
    pub name: String,
    pub betas: Vec<f64>,
    pub values: Vec<f64>,
    pub decreasing: bool,
}

impl TrendVerdict {
    pub fn new(name: &str, betas: &[f64], values: &[f64]) -> Self {
        Self {
            name: name.into(),
            betas: betas.to_vec(),
            values: values.to_vec(),
            decreasing: strictly_decreasing(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub comparison_id: String,
    pub method: String,
    pub params: serde_json::Value,
    pub statistics: Vec<Statistic>,
    pub trend_verdicts: Vec<TrendVerdict>,
}

pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{LatticeSpec, PlaquetteRule};
    use crate::lie::GroupSpec;
    use crate::proca::assemble_precision;
    use crate::stats::normal_cdf;
    use crate::ymh::u1;

    fn u1_box(beta: f64) -> YmhModel {
        let p = YmhParams::boxed(GroupSpec::u1(), LatticeSpec::block(2, 1), beta, 1.0, 0.1).unwrap();
        YmhModel::new(p).unwrap()
    }

    fn random_field(model: &YmhModel, scale: f64, seed: u64) -> AlgebraEdgeField {
        let g = model.group();
        let mut r = rng::stream(seed, 0);
        let mut x = AlgebraEdgeField::zeros(g, model.lattice());
        for &k in model.updatable() {
            x.set(k, &g.gaussian_algebra(&mut r).scale(scale));
        }
        x
    }

    #[test]
    fn proca_density_examples() {
        let g = GroupSpec::special_unitary(2).unwrap();
        let model = YmhModel::new(YmhParams::torus(g.clone(), 2, 3, 7.0, 1.3, 0.1)).unwrap();
        let lat = model.lattice();
        assert_eq!(log_density_proca(&model, &AlgebraEdgeField::zeros(&g, lat)), 0.0);
        // single edge: −β(m/2 + #plaquettes/2)‖X_e‖²
        let mut x = AlgebraEdgeField::zeros(&g, lat);
        let e = g.random_algebra_with_norm(&mut rng::stream(1, 0), 0.3);
        x.set(4, &e);
        let want = -7.0 * (0.65 + 0.5 * lat.incident(4).len() as f64) * 0.09;
        assert!((log_density_proca(&model, &x) - want).abs() < 1e-12);
        // −½ Xᵀ op X
        let op = assemble_precision(lat, 7.0, 1.3).unwrap();
        let x = random_field(&model, 0.2, 2);
        let q: f64 = (0..3).map(|l| op.quad_form(&x.component(l))).sum();
        assert!((log_density_proca(&model, &x) + 0.5 * q).abs() < 1e-10);
    }

    #[test]
    fn lifted_density_examples() {
        let model = u1_box(50.0);
        let zero = AlgebraEdgeField::zeros(model.group(), model.lattice());
        assert_eq!(log_density_lifted_ymh(&model, &zero).unwrap(), 0.0);
        // abelian: no Jacobian, −β𝓗(e^{iX})
        let x = random_field(&model, 0.1, 3);
        let h = model.action(&GaugeConfig::from_algebra(&x));
        assert!((log_density_lifted_ymh(&model, &x).unwrap() + 50.0 * h).abs() < 1e-12);
        // outside the chart
        let big = random_field(&model, 5.0, 4);
        assert!(matches!(log_density_lifted_ymh(&model, &big), Err(Error::ChartViolation { .. })));

        // su(2): the Jacobian term is Σ log|det M| with |det M − 1| ≤ C‖X‖
        let g = GroupSpec::special_unitary(2).unwrap();
        let m2 = YmhModel::new(YmhParams::torus(g.clone(), 2, 2, 10.0, 1.0, 0.1)).unwrap();
        for s in [0.1, 0.05, 0.025] {
            let x = random_field(&m2, s, 5);
            let plain = -10.0 * m2.action(&GaugeConfig::from_algebra(&x));
            let jac = log_density_lifted_ymh(&m2, &x).unwrap() - plain;
            let want: f64 = (0..x.n_edges()).map(|k| crate::lie::exp_jacobian_det(&g, &x.element(k)).ln()).sum();
            assert!((jac - want).abs() < 1e-10);
            for k in 0..x.n_edges() {
                let d = crate::lie::exp_jacobian_det(&g, &x.element(k));
                assert!((d - 1.0).abs() <= x.norm(k));
            }
        }
    }

    /// Ball-ratio oracle: the pushforward density at X is the Haar mass of
    /// exp(B(X, r)) weighted by e^{−β𝓗}, divided by vol B(X, r), as r → 0.
    /// SU(2) is the unit 3-sphere with Haar the uniform measure, so each ball
    /// is estimated from uniform draws on a cap of fixed radius around exp(X).
    #[test]
    fn lifted_density_matches_ball_ratio() {
        let g = GroupSpec::special_unitary(2).unwrap();
        let mut p = YmhParams::boxed(g.clone(), LatticeSpec::block(2, 1), 1.0, 1.0, 0.1).unwrap();
        p.rule = PlaquetteRule::ClosureOnly;
        let model = YmhModel::new(p).unwrap();
        let k0 = model.updatable()[0];
        let at = |c: [f64; 3]| {
            let mut x = AlgebraEdgeField::zeros(&g, model.lattice());
            x.set(k0, &g.from_coefficients(&c).unwrap());
            x
        };
        let (ca, cb) = ([0.05, 0.0, 0.0], [0.0, 0.3, 0.3]);
        let ratio =
            (log_density_lifted_ymh(&model, &at(ca)).unwrap() - log_density_lifted_ymh(&model, &at(cb)).unwrap()).exp();
        let (radius, cap) = (0.05, 0.06);
        let mut r = rng::stream(6, 0);
        let mut ball_mass = |c: [f64; 3]| -> f64 {
            let centre = at(c);
            let u0 = crate::lie::mat_exp(&centre.element(k0));
            let mut cfg = model.identity_config();
            let mut acc = 0.0;
            let n = 500_000;
            for _ in 0..n {
                // polar angle on S³ with density ∝ sin²φ on [0, cap], direction uniform on S²
                let phi = loop {
                    let t: f64 = rand::Rng::random::<f64>(&mut r) * cap;
                    if rand::Rng::random::<f64>(&mut r) * cap.sin().powi(2) < t.sin().powi(2) {
                        break t;
                    }
                };
                let v: [f64; 3] =
                    std::array::from_fn(|_| rand::Rng::sample::<f64, _>(&mut r, rand_distr::StandardNormal));
                let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                let (s, cphi) = (phi.sin() / nv, phi.cos());
                let q = crate::lie::CMat::from_row_slice(
                    2,
                    2,
                    &[
                        crate::lie::C64::new(cphi, s * v[2]),
                        crate::lie::C64::new(s * v[1], s * v[0]),
                        crate::lie::C64::new(-s * v[1], s * v[0]),
                        crate::lie::C64::new(cphi, -s * v[2]),
                    ],
                );
                let u = u0.matrix() * q;
                let Ok(lx) = crate::lie::principal_log(&g, &crate::lie::GroupElement::from_matrix_unchecked(u.clone()))
                else {
                    continue;
                };
                let cc = g.coefficients_of(lx.matrix());
                let d = ((cc[0] - c[0]).powi(2) + (cc[1] - c[1]).powi(2) + (cc[2] - c[2]).powi(2)).sqrt();
                if d < radius {
                    cfg.set_link(k0, u);
                    acc += (-model.action(&cfg)).exp();
                }
            }
            acc / n as f64
        };
        let est = ball_mass(ca) / ball_mass(cb);
        assert!((est / ratio - 1.0).abs() < 0.015, "ball ratio {est} vs density ratio {ratio}");
        // the Jacobian is what separates the two points
        let plain = (model.action(&GaugeConfig::from_algebra(&at(cb)))
            - model.action(&GaugeConfig::from_algebra(&at(ca))))
        .exp();
        assert!((plain / ratio - 1.0).abs() > 0.02);
    }

    #[test]
    fn residual_examples() {
        let model = u1_box(100.0);
        let zero = AlgebraEdgeField::zeros(model.group(), model.lattice());
        assert_eq!(residual_psi(&model, &zero).unwrap(), 0.0);
        // U(1) single edge θ: ψ = exp(−β[(1 − cos θ)(n + m) − θ²(n + m)/2]) − 1
        let k = model.updatable()[0];
        let n = model.lattice().incident(k).len() as f64;
        for th in [0.1f64, 0.05, 0.02] {
            let mut x = zero.clone();
            x.set_coefficient(k, 0, th);
            // 1 − cos θ − θ²/2 = Σ_{j≥2} (−1)^{j+1} θ^{2j}/(2j)!
            let series: f64 = (2..7)
                .map(|j| -(-1f64).powi(j) * th.powi(2 * j) / (1..=2 * j).map(|i| i as f64).product::<f64>())
                .sum();
            let want = (-100.0 * (n + 1.0) * series).exp_m1();
            let psi = residual_psi(&model, &x).unwrap();
            assert!((psi - want).abs() < 1e-8 * want.abs(), "θ = {th}: {psi} vs {want}");
        }
    }

    #[test]
    fn gap_is_cubic_for_su2_and_quartic_for_u1() {
        let g = GroupSpec::special_unitary(2).unwrap();
        let model = YmhModel::new(YmhParams::torus(g, 2, 3, 1.0, 1.0, 0.1)).unwrap();
        let dir = random_field(&model, 1.0, 7);
        let scales: Vec<f64> = (0..6).map(|i| 0.004 * 0.6f64.powi(i)).collect();
        let fit = action_gap_fit(&model, &dir, &scales).unwrap();
        assert!((fit.fit.slope - 3.0).abs() < 0.1, "slope {}", fit.fit.slope);

        let m1 = YmhModel::new(YmhParams::torus(GroupSpec::u1(), 2, 3, 1.0, 1.0, 0.1)).unwrap();
        let dir = random_field(&m1, 1.0, 8);
        let fit = action_gap_fit(&m1, &dir, &scales).unwrap();
        assert!((fit.fit.slope - 4.0).abs() < 0.1, "slope {}", fit.fit.slope);
    }

    #[test]
    fn residual_scan_decreases() {
        let g = GroupSpec::special_unitary(2).unwrap();
        let p = YmhParams::torus(g, 2, 3, 1.0, 1.0, 0.1);
        let rows = residual_scan(&p, &[1e2, 1e3, 1e4], 200, 9, Exec::Sequential).unwrap();
        assert!(rows.iter().all(|r| r.accepted == 200 && r.draws >= 200));
        // fewer draws are needed as the events fill up
        assert!(rows[0].draws > rows[2].draws);
        let sups: Vec<f64> = rows.iter().map(|r| r.sup_psi).collect();
        assert!(strictly_decreasing(&sups), "{sups:?}");
    }

    /// Direct U(1) energy through the matrix action, as an oracle for the
    /// scalar fast path.
    #[test]
    fn u1_fast_path_matches_matrix_action() {
        let model = u1_box(10.0);
        let lat = model.lattice();
        let free = model.updatable().to_vec();
        let mut plaq = Vec::new();
        for pl in lat.plaquettes() {
            plaq.push(
                pl.slots
                    .iter()
                    .zip(SLOT_SIGN)
                    .filter_map(|(s, sign)| s.map(|k| (free.iter().position(|&f| f == k).ok_or(0.0), sign)))
                    .collect(),
            );
        }
        let e = U1Energy { plaquettes: plaq, fixed_mass_h: 0.0, fixed_mass_s: 0.0, mass: 1.0 };
        let mut cfg = model.identity_config();
        let theta = [0.1, -0.2, 0.05, 0.3];
        for (i, &k) in free.iter().enumerate() {
            cfg.set_link(k, u1(theta[i]));
        }
        let (h, _) = e.eval(&theta);
        assert!((h - model.action(&cfg)).abs() < 1e-12);
    }

    #[test]
    fn tv_examples() {
        let model = u1_box(100.0);
        let opts = TvOptions { points: 16, ..Default::default() };
        // identical densities
        let same = exact_tv_u1(&model, &TvOptions { quadratic_only: true, ..opts }).unwrap();
        assert!(same.tv < 1e-12);
        let tv = exact_tv_u1(&model, &opts).unwrap();
        assert!(tv.tv > 0.0 && tv.tv <= tv.claim_bound + 1e-12);
        // a law against itself conditioned on 𝓐: TV = P(𝓐^c)
        let chart = TvSide { measure: TvMeasure::Proca, region: TvRegion::Chart };
        let cond = TvSide { measure: TvMeasure::Proca, region: TvRegion::Events };
        let r = exact_tv_u1_between(&model, chart, cond, &TvOptions { points: 12, ..opts }).unwrap();
        assert!((r.tv - (1.0 - r.events_mass_a)).abs() < 1e-10, "{r:?}");
        assert!(r.events_mass_a < 1.0 && r.events_mass_a > 0.5);
        // non-abelian groups are rejected
        let g = GroupSpec::special_unitary(2).unwrap();
        let m2 = YmhModel::new(YmhParams::boxed(g, LatticeSpec::block(2, 1), 100.0, 1.0, 0.1).unwrap()).unwrap();
        assert!(exact_tv_u1(&m2, &opts).is_err());
    }

    #[test]
    fn tv_matches_monte_carlo() {
        // TV by quadrature against an importance-sampling oracle:
        // TV = ½ E_P |p_Y/p_P − 1| with both normalised on 𝓐
        let model = u1_box(100.0);
        let tv = exact_tv_u1(&model, &TvOptions { points: 24, ..Default::default() }).unwrap();
        let proca = MatchedProca::new(&model).unwrap();
        let mut r = rng::stream(10, 0);
        let mut ratios = Vec::new();
        while ratios.len() < 200_000 {
            let x = proca.draw(&model, &mut r);
            let (a1, a2) = lifted_events(&model, &x);
            if a1 && a2 {
                ratios.push((log_density_lifted_ymh(&model, &x).unwrap() - log_density_proca(&model, &x)).exp());
            }
        }
        let z = mean(&ratios);
        let est = 0.5 * ratios.iter().map(|w| (w / z - 1.0).abs()).sum::<f64>() / ratios.len() as f64;
        assert!((est - tv.tv).abs() < 0.05 * tv.tv + 1e-4, "MC {est} vs quadrature {}", tv.tv);
    }

    #[test]
    fn identity_check_examples() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let all = tv_conditional_identity_check(&xs, |_| true).unwrap();
        assert_eq!((all.lhs, all.rhs), (0.0, 0.0));
        assert!(tv_conditional_identity_check(&xs, |_| false).is_err());

        // standard normal, |Z| ≤ t with P = 0.7
        let t = 1.036_433_389_493_789_8;
        assert!((2.0 * normal_cdf(t) - 1.0 - 0.7).abs() < 1e-9);
        let mut r = rng::stream(11, 0);
        let zs: Vec<f64> =
            (0..100_000).map(|_| rand::Rng::sample::<f64, _>(&mut r, rand_distr::StandardNormal)).collect();
        let res = tv_conditional_identity_check(&zs, |z| z.abs() <= t).unwrap();
        assert!((res.lhs - res.rhs).abs() < 1e-12);
        assert!((res.rhs - 0.3).abs() < 3.0 * res.se);

        // nested events
        let inner = tv_conditional_identity_check(&zs, |z| z.abs() <= 0.5).unwrap();
        assert!(inner.rhs >= res.rhs);
    }

    #[test]
    fn self_comparison_is_clean() {
        let g = GroupSpec::special_unitary(2).unwrap();
        let model = YmhModel::new(YmhParams::torus(g.clone(), 2, 3, 100.0, 1.0, 0.1)).unwrap();
        let proca = MatchedProca::new(&model).unwrap();
        let MatchedProca::Free(s) = &proca else { panic!("torus uses the free sampler") };
        let a = s.algebra_many(Exec::Sequential, &g, model.lattice(), 4000, 12);
        let forms = vec![("bump".to_string(), TestForm::bump(2, 3, vec![0.0, 0.0], 1.5, &[(0, 0), (1, 2)]).unwrap())];
        let rep = moment_comparison(model.lattice(), &a, &a, &forms, 1.0, 100.0).unwrap();
        assert_eq!(rep.max_abs_z(), 0.0);
        let b = s.algebra_many(Exec::Sequential, &g, model.lattice(), 4000, 13);
        let rep = moment_comparison(model.lattice(), &a, &b, &forms, 1.0, 100.0).unwrap();
        assert!(rep.max_abs_z() < 4.0, "{rep:?}");
    }

    #[test]
    fn independence_sampler_targets_lifted_density() {
        // U(1) block: the chain's mean of cos θ_p matches the quadrature value
        let model = u1_box(30.0);
        let sampler = LiftedYmhSampler::new(&model).unwrap();
        let free = model.updatable().to_vec();
        let mut obs = Vec::new();
        let stats = sampler
            .run(100_000, 1000, 13, |x, _| {
                let s: f64 = free.iter().map(|&k| x.coefficient(k, 0).powi(2)).sum();
                obs.push(s);
            })
            .unwrap();
        assert!(stats.acceptance_rate() > 0.5);
        // oracle: E Σθ² under e^{−β𝓗} by tensor quadrature on the chart
        let rule = gauss_quad::legendre::GaussLegendre::new(std::num::NonZeroUsize::new(20).unwrap());
        let r0 = model.group().chart_radius();
        let nodes: Vec<(f64, f64)> = rule.as_node_weight_pairs().iter().map(|(x, w)| (r0 * x, r0 * w)).collect();
        let (mut num, mut den) = (0.0, 0.0);
        let mut cfg = model.identity_config();
        for &(a, wa) in &nodes {
            for &(b, wb) in &nodes {
                for &(c, wc) in &nodes {
                    for &(d, wd) in &nodes {
                        for (k, t) in free.iter().zip([a, b, c, d]) {
                            cfg.set_link(*k, u1(t));
                        }
                        let w = wa * wb * wc * wd * (-30.0 * model.action(&cfg)).exp();
                        num += w * (a * a + b * b + c * c + d * d);
                        den += w;
                    }
                }
            }
        }
        let want = num / den;
        let se = batch_means_se(&obs, 20);
        assert!((mean(&obs) - want).abs() < 4.0 * se, "{} vs {want} (se {se})", mean(&obs));
    }

    #[test]
    fn trend_helpers() {
        assert!(strictly_decreasing(&[3.0, 2.0, 1.0]));
        assert!(!strictly_decreasing(&[3.0, 3.0, 1.0]));
        let v = TrendVerdict::new("x", &[1.0, 2.0], &[2.0, 1.0]);
        assert!(v.decreasing);
    }
}
