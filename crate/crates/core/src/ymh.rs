//! Lattice Yang–Mills–Higgs measure e^{−β𝓗(U)} dHaar(U) and its Metropolis
//! sampler.
//!
//! 𝓗(U) = ½ Σ_p ‖I − dU_p‖² + (m/2) Σ_e ‖I − U_e‖², with plaquettes and
//! edges taken from the lattice (for boxes: interior and boundary edges, the
//! boundary ones held at γ). Frozen plaquette slots contribute the identity.

use std::io::Write;

use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::field::{AlgebraEdgeField, EdgeRecord, FieldSnapshot, SnapshotKind};
use crate::lattice::{EdgeKind, Lattice, LatticeSpec, PlaquetteRule};
use crate::lie::{
    distance_to_identity, haar_sample, mat_exp, matrix_to_pairs, pairs_to_matrix, truncated_log, CMat, GroupElement,
    GroupRecord, GroupSpec, C64,
};
use crate::rng;
use crate::stats::{autocorrelation_time, mean};

#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryCondition {
    Periodic,
    /// γ on ∂Q_L, in the lattice's boundary-edge order.
    Fixed(Vec<GroupElement>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct YmhParams {
    pub beta: f64,
    pub mass: f64,
    pub kappa: f64,
    pub group: GroupSpec,
    pub lattice: LatticeSpec,
    pub rule: PlaquetteRule,
    pub boundary: BoundaryCondition,
}

impl YmhParams {
    pub fn torus(group: GroupSpec, dim: usize, side: usize, beta: f64, mass: f64, kappa: f64) -> Self {
        Self {
            beta,
            mass,
            kappa,
            group,
            lattice: LatticeSpec::torus(dim, side),
            rule: PlaquetteRule::default(),
            boundary: BoundaryCondition::Periodic,
        }
    }

    /// A box-like lattice with γ ≡ I.
    pub fn boxed(group: GroupSpec, lattice: LatticeSpec, beta: f64, mass: f64, kappa: f64) -> Result<Self> {
        let lat = Lattice::new(lattice)?;
        let nb = lat.boundary_edges()?.len();
        let gamma = vec![group.identity(); nb];
        Ok(Self {
            beta,
            mass,
            kappa,
            group,
            lattice,
            rule: PlaquetteRule::default(),
            boundary: BoundaryCondition::Fixed(gamma),
        })
    }

    pub fn with_rule(mut self, rule: PlaquetteRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta", format!("must be positive, got {}", self.beta)));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(invalid("mass", format!("must be positive, got {}", self.mass)));
        }
        if !(self.kappa > 0.0 && self.kappa < 0.5) {
            return Err(invalid("kappa", format!("must lie in (0, 1/2), got {}", self.kappa)));
        }
        self.lattice.validate()?;
        match (&self.boundary, self.lattice.is_torus()) {
            (BoundaryCondition::Periodic, true) => Ok(()),
            (BoundaryCondition::Fixed(g), false) => {
                for u in g {
                    self.group.check_group_element(u)?;
                }
                Ok(())
            }
            (BoundaryCondition::Periodic, false) => Err(invalid("boundary", "a box needs fixed boundary values")),
            (BoundaryCondition::Fixed(_), true) => {
                Err(invalid("boundary", "fixed boundary values need a box topology"))
            }
        }
    }

    /// β^{κ−1/2}.
    pub fn interior_threshold(&self) -> f64 {
        self.beta.powf(self.kappa - 0.5)
    }

    /// β^{κ/2−1/2}.
    pub fn boundary_threshold(&self) -> f64 {
        self.beta.powf(0.5 * self.kappa - 0.5)
    }
}

/// Edge sets over which 𝓔₁ and 𝓔₂ are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventRegion {
    /// Boxes: interior and boundary edges. Tori: every edge for 𝓔₁, and 𝓔₂
    /// holds vacuously.
    #[default]
    Natural,
    /// Edges inside the centred box [−M, M]^d for 𝓔₁, edges leaving it for 𝓔₂.
    SubBox(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaugeConfig {
    links: Vec<CMat>,
}

impl GaugeConfig {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn link(&self, k: usize) -> &CMat {
        &self.links[k]
    }

    pub fn element(&self, k: usize) -> GroupElement {
        GroupElement::from_matrix_unchecked(self.links[k].clone())
    }

    pub fn links(&self) -> &[CMat] {
        &self.links
    }

    /// Unchecked; callers keep boundary entries equal to γ.
    pub fn set_link(&mut self, k: usize, u: CMat) {
        self.links[k] = u;
    }

    /// exp(X_e) on every edge.
    pub fn from_algebra(field: &AlgebraEdgeField) -> Self {
        Self { links: (0..field.n_edges()).map(|k| mat_exp(&field.element(k)).into_matrix()).collect() }
    }

    pub fn max_deviation(&self, edges: &[usize]) -> f64 {
        edges.iter().map(|&k| distance_to_identity(&self.links[k])).fold(0.0, f64::max)
    }

    pub fn snapshot(&self, group: &GroupSpec, lattice: &Lattice) -> FieldSnapshot {
        let edges = self
            .links
            .iter()
            .enumerate()
            .map(|(k, u)| EdgeRecord { edge: lattice.edge(k).clone(), matrix: matrix_to_pairs(u), coefficients: None })
            .collect();
        FieldSnapshot { kind: SnapshotKind::Gauge, group: GroupRecord::from(group), lattice: *lattice.spec(), edges }
    }

    pub fn from_snapshot(snap: &FieldSnapshot, model: &YmhModel) -> Result<Self> {
        let bad = |r: &str| Error::InvalidParameter { field: "snapshot", reason: r.into() };
        if snap.kind != SnapshotKind::Gauge {
            return Err(bad("expected a gauge snapshot"));
        }
        if snap.lattice != *model.lattice.spec() || GroupSpec::try_from(snap.group)? != model.params.group {
            return Err(bad("snapshot lattice or group differs from the model"));
        }
        let mut cfg = model.identity_config();
        for rec in &snap.edges {
            let k = model.lattice.edge_index(&rec.edge).ok_or_else(|| bad("edge outside the lattice"))?;
            let u = pairs_to_matrix(&rec.matrix, model.params.group.matrix_size())?;
            model.params.group.check_group_element(&GroupElement::from_matrix_unchecked(u.clone()))?;
            cfg.links[k] = u;
        }
        for (j, &k) in model.fixed.iter().enumerate() {
            if cfg.links[k] != *model.gamma[j].matrix() {
                return Err(bad("snapshot disagrees with the fixed boundary values"));
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Proposal {
    /// U ← U·exp(σ Σ ξ_ℓ V_ℓ), ξ standard normal.
    Gaussian { sigma: f64 },
    /// U ← U·exp(±δ V₁) with equal probability.
    Discrete { delta: f64 },
}

impl Proposal {
    fn draw(&self, group: &GroupSpec, rng: &mut impl rand::Rng) -> CMat {
        let c: Vec<f64> = match *self {
            Proposal::Gaussian { sigma } => {
                (0..group.algebra_dim()).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
            }
            Proposal::Discrete { delta } => {
                let mut c = vec![0.0; group.algebra_dim()];
                c[0] = if rng.random::<bool>() { delta } else { -delta };
                c
            }
        };
        mat_exp(&group.from_coefficients(&c).expect("dimension matches")).into_matrix()
    }
}

#[derive(Debug, Clone)]
pub struct YmhModel {
    params: YmhParams,
    lattice: Lattice,
    updatable: Vec<usize>,
    fixed: Vec<usize>,
    is_fixed: Vec<bool>,
    gamma: Vec<GroupElement>,
    e1_edges: Vec<usize>,
    e2_edges: Vec<usize>,
    colours: Vec<Vec<usize>>,
}

impl YmhModel {
    pub fn new(params: YmhParams) -> Result<Self> {
        params.validate()?;
        let lattice = Lattice::with_rule(params.lattice, params.rule)?;
        let (fixed, gamma) = match &params.boundary {
            BoundaryCondition::Periodic => (Vec::new(), Vec::new()),
            BoundaryCondition::Fixed(g) => {
                let b = lattice.boundary_edges()?.to_vec();
                if g.len() != b.len() {
                    return Err(invalid("boundary", format!("expected {} boundary values, got {}", b.len(), g.len())));
                }
                (b, g.clone())
            }
        };
        let mut is_fixed = vec![false; lattice.n_edges()];
        for &k in &fixed {
            is_fixed[k] = true;
        }
        let updatable: Vec<usize> = (0..lattice.n_edges()).filter(|&k| !is_fixed[k]).collect();
        let colours = colour_edges(&lattice, &updatable);
        let mut model = Self {
            params,
            lattice,
            updatable,
            fixed,
            is_fixed,
            gamma,
            e1_edges: Vec::new(),
            e2_edges: Vec::new(),
            colours,
        };
        model.set_event_region(EventRegion::Natural)?;
        Ok(model)
    }

    pub fn set_event_region(&mut self, region: EventRegion) -> Result<()> {
        let lat = &self.lattice;
        match region {
            EventRegion::Natural => {
                self.e1_edges = lat.interior_edges().to_vec();
                self.e2_edges = if lat.is_torus() { Vec::new() } else { lat.boundary_edges()?.to_vec() };
            }
            EventRegion::SubBox(m) => {
                let m = m as i64;
                let centred = |p: Vec<i64>| -> Vec<i64> {
                    if lat.is_torus() {
                        let l = lat.side() as i64;
                        p.iter().map(|&c| (c + l / 2).rem_euclid(l) - l / 2).collect()
                    } else {
                        p
                    }
                };
                let inside = |p: &[i64]| p.iter().all(|c| c.abs() <= m);
                if lat.is_torus() && 2 * m + 1 >= lat.side() as i64 {
                    return Err(invalid("event_box", format!("M = {m} does not fit strictly inside the torus")));
                }
                self.e1_edges.clear();
                self.e2_edges.clear();
                for k in 0..lat.n_edges() {
                    let e = lat.edge(k);
                    let a = centred(e.base.clone());
                    let mut b = a.clone();
                    b[e.dir] += 1;
                    match (inside(&a), inside(&b)) {
                        (true, true) => self.e1_edges.push(k),
                        (true, false) | (false, true) => self.e2_edges.push(k),
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    pub fn params(&self) -> &YmhParams {
        &self.params
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn group(&self) -> &GroupSpec {
        &self.params.group
    }

    pub fn updatable(&self) -> &[usize] {
        &self.updatable
    }

    pub fn is_fixed(&self, k: usize) -> bool {
        self.is_fixed[k]
    }

    pub fn event_edges(&self) -> (&[usize], &[usize]) {
        (&self.e1_edges, &self.e2_edges)
    }

    /// Plaquette-disjoint classes covering the updatable edges.
    pub fn colours(&self) -> &[Vec<usize>] {
        &self.colours
    }

    /// Identity on free edges, γ on fixed ones.
    pub fn identity_config(&self) -> GaugeConfig {
        let n = self.params.group.matrix_size();
        let mut links = vec![CMat::identity(n, n); self.lattice.n_edges()];
        for (j, &k) in self.fixed.iter().enumerate() {
            links[k] = self.gamma[j].matrix().clone();
        }
        GaugeConfig { links }
    }

    /// Haar-random free edges.
    pub fn random_config(&self, rng: &mut impl rand::Rng) -> GaugeConfig {
        let mut cfg = self.identity_config();
        for &k in &self.updatable {
            cfg.links[k] = haar_sample(&self.params.group, rng).into_matrix();
        }
        cfg
    }

    /// exp(X) on free edges, γ on fixed ones.
    pub fn config_from_algebra(&self, field: &AlgebraEdgeField) -> GaugeConfig {
        let mut cfg = GaugeConfig::from_algebra(field);
        for (j, &k) in self.fixed.iter().enumerate() {
            cfg.links[k] = self.gamma[j].matrix().clone();
        }
        cfg
    }

    fn slot_matrix(&self, cfg: &GaugeConfig, slot: Option<usize>) -> CMat {
        match slot {
            Some(k) => cfg.links[k].clone(),
            None => CMat::identity(self.params.group.matrix_size(), self.params.group.matrix_size()),
        }
    }

    /// dU_p = U₁U₂U₃⁻¹U₄⁻¹.
    pub fn holonomy(&self, cfg: &GaugeConfig, p: usize) -> CMat {
        let s = &self.lattice.plaquettes()[p].slots;
        let u = |i: usize| self.slot_matrix(cfg, s[i]);
        u(0) * u(1) * u(2).adjoint() * u(3).adjoint()
    }

    /// ½ Σ_p ‖I − dU_p‖².
    pub fn plaquette_action(&self, cfg: &GaugeConfig) -> f64 {
        (0..self.lattice.plaquettes().len()).map(|p| 0.5 * distance_to_identity(&self.holonomy(cfg, p)).powi(2)).sum()
    }

    /// (m/2) Σ_e ‖I − U_e‖².
    pub fn mass_action(&self, cfg: &GaugeConfig) -> f64 {
        0.5 * self.params.mass * cfg.links.iter().map(|u| distance_to_identity(u).powi(2)).sum::<f64>()
    }

    pub fn action(&self, cfg: &GaugeConfig) -> f64 {
        self.plaquette_action(cfg) + self.mass_action(cfg)
    }

    /// Re Tr(U_e · staple) for every plaquette through e, using
    /// ½‖I − H‖² = N − Re Tr H. Plaquettes visiting e twice (L = 1 tori) are
    /// re-evaluated whole with `new` substituted.
    fn local_energy(&self, cfg: &GaugeConfig, k: usize, u: &CMat) -> f64 {
        let n = self.params.group.matrix_size() as f64;
        let mut e = self.params.mass * (n - u.trace().re);
        let inc = self.lattice.incident(k);
        let mut seen: Vec<usize> = Vec::with_capacity(inc.len());
        for &(p, slot) in inc {
            if seen.contains(&p) {
                continue;
            }
            seen.push(p);
            let slots = &self.lattice.plaquettes()[p].slots;
            let repeated = slots.iter().filter(|s| **s == Some(k)).count() > 1;
            let m = |i: usize| if slots[i] == Some(k) { u.clone() } else { self.slot_matrix(cfg, slots[i]) };
            let re_tr = if repeated {
                (m(0) * m(1) * m(2).adjoint() * m(3).adjoint()).trace().re
            } else {
                match slot {
                    0 => (u * m(1) * m(2).adjoint() * m(3).adjoint()).trace().re,
                    1 => (u * m(2).adjoint() * m(3).adjoint() * m(0)).trace().re,
                    2 => (u * (m(3).adjoint() * m(0) * m(1)).adjoint()).trace().re,
                    _ => (u * (m(0) * m(1) * m(2).adjoint()).adjoint()).trace().re,
                }
            };
            e += n - re_tr;
        }
        e
    }

    /// 𝓗(cfg with U_e ← new) − 𝓗(cfg), touching only the plaquettes through e.
    pub fn local_action_delta(&self, cfg: &GaugeConfig, k: usize, new: &CMat) -> Result<f64> {
        if self.is_fixed[k] {
            return Err(Error::FixedEdge(k));
        }
        Ok(self.local_energy(cfg, k, new) - self.local_energy(cfg, k, &cfg.links[k]))
    }

    /// One Metropolis step on edge k at inverse temperature `beta`; returns
    /// whether the move was accepted.
    pub fn update_edge(
        &self,
        cfg: &mut GaugeConfig,
        k: usize,
        beta: f64,
        proposal: &Proposal,
        rng: &mut impl rand::Rng,
    ) -> bool {
        if let Some(u) = self.propose(cfg, k, beta, proposal, rng) {
            cfg.links[k] = u;
            true
        } else {
            false
        }
    }

    fn propose(
        &self,
        cfg: &GaugeConfig,
        k: usize,
        beta: f64,
        proposal: &Proposal,
        rng: &mut impl rand::Rng,
    ) -> Option<CMat> {
        let step = proposal.draw(&self.params.group, rng);
        let new = &cfg.links[k] * step;
        let delta = self.local_energy(cfg, k, &new) - self.local_energy(cfg, k, &cfg.links[k]);
        let log_a = -beta * delta;
        let u: f64 = rng.random();
        (log_a >= 0.0 || u < log_a.exp()).then_some(new)
    }

    /// A systematic scan over the free edges; returns the acceptance rate.
    pub fn metropolis_sweep(&self, cfg: &mut GaugeConfig, proposal: &Proposal, rng: &mut impl rand::Rng) -> f64 {
        self.sweep_at(cfg, self.params.beta, proposal, rng)
    }

    /// As [`Self::metropolis_sweep`] at an explicit β ≥ 0.
    pub fn sweep_at(&self, cfg: &mut GaugeConfig, beta: f64, proposal: &Proposal, rng: &mut impl rand::Rng) -> f64 {
        if self.updatable.is_empty() {
            return 1.0;
        }
        let mut acc = 0usize;
        for &k in &self.updatable {
            acc += self.update_edge(cfg, k, beta, proposal, rng) as usize;
        }
        acc as f64 / self.updatable.len() as f64
    }

    /// Updates each colour class concurrently. Edge k in sweep t draws from
    /// its own stream of `child_seed(seed, t)`, so the result depends only on
    /// (seed, t), never on the thread count.
    pub fn checkerboard_sweep(
        &self,
        cfg: &mut GaugeConfig,
        proposal: &Proposal,
        seed: u64,
        sweep: u64,
        exec: Exec,
    ) -> f64 {
        if self.updatable.is_empty() {
            return 1.0;
        }
        let s = rng::child_seed(seed, sweep);
        let mut acc = 0usize;
        for class in &self.colours {
            let snapshot = &*cfg;
            let moves = exec.map(class.len(), |i| {
                let k = class[i];
                let mut r = rng::stream(s, k as u64);
                self.propose(snapshot, k, self.params.beta, proposal, &mut r).map(|u| (k, u))
            });
            for (k, u) in moves.into_iter().flatten() {
                cfg.links[k] = u;
                acc += 1;
            }
        }
        acc as f64 / self.updatable.len() as f64
    }

    /// (𝓔₁, 𝓔₂) indicators for one configuration.
    pub fn events(&self, cfg: &GaugeConfig) -> (bool, bool) {
        let t1 = self.params.interior_threshold();
        let t2 = self.params.boundary_threshold();
        let e1 = self.e1_edges.iter().all(|&k| distance_to_identity(&cfg.links[k]) <= t1);
        let e2 = self.e2_edges.iter().all(|&k| distance_to_identity(&cfg.links[k]) <= t2);
        (e1, e2)
    }

    /// 𝖫(U) = (𝖫𝗈𝗀 U_e)_e, optionally scaled by √β.
    pub fn lift(&self, cfg: &GaugeConfig, scale: LiftScale) -> AlgebraEdgeField {
        let g = &self.params.group;
        let mut f = AlgebraEdgeField::zeros(g, &self.lattice);
        for k in 0..cfg.links.len() {
            f.set(k, &truncated_log(g, &GroupElement::from_matrix_unchecked(cfg.links[k].clone())));
        }
        if scale == LiftScale::Scaled {
            f.scale(self.params.beta.sqrt());
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftScale {
    /// X_e = 𝖫𝗈𝗀 U_e.
    Raw,
    /// A_e = √β 𝖫𝗈𝗀 U_e.
    Scaled,
}

/// Greedy colouring of the conflict graph "shares a plaquette".
fn colour_edges(lattice: &Lattice, edges: &[usize]) -> Vec<Vec<usize>> {
    let mut colour = vec![usize::MAX; lattice.n_edges()];
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for &k in edges {
        let mut used = Vec::new();
        for &(p, _) in lattice.incident(k) {
            for f in lattice.plaquettes()[p].slots.iter().flatten() {
                if colour[*f] != usize::MAX {
                    used.push(colour[*f]);
                }
            }
        }
        let c = (0..).find(|c| !used.contains(c)).expect("some colour is free");
        colour[k] = c;
        if classes.len() <= c {
            classes.resize(c + 1, Vec::new());
        }
        classes[c].push(k);
    }
    classes
}

// ---------------------------------------------------------------------------
// chains

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    Sequential,
    Checkerboard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Cold,
    Hot,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSettings {
    /// Sweeps after burn-in.
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub proposal: Proposal,
    /// Adapt σ during burn-in toward the target acceptance.
    pub tune: bool,
    pub target_acceptance: f64,
    pub mode: UpdateMode,
    pub start: Start,
}

impl Default for ChainSettings {
    fn default() -> Self {
        Self {
            sweeps: 10_000,
            burn_in: 1_000,
            thin: 10,
            seed: 0,
            proposal: Proposal::Gaussian { sigma: 0.5 },
            tune: true,
            target_acceptance: 0.4,
            mode: UpdateMode::Sequential,
            start: Start::Cold,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Traces {
    pub sweep: Vec<usize>,
    pub action: Vec<f64>,
    pub acceptance: Vec<f64>,
    pub max_edge_dev: Vec<f64>,
    pub e1: Vec<bool>,
    pub e2: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStats {
    pub sweeps: usize,
    pub acceptance_rate: f64,
    pub proposal: Proposal,
    /// Integrated autocorrelation time of the recorded action, in records.
    pub tau_action: f64,
    pub traces: Traces,
}

impl ChainStats {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "sweep,action,acceptance,max_edge_dev,E1,E2")?;
        let t = &self.traces;
        for i in 0..t.sweep.len() {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{},{}",
                t.sweep[i], t.action[i], t.acceptance[i], t.max_edge_dev[i], t.e1[i] as u8, t.e2[i] as u8
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ChainResult {
    pub stats: ChainStats,
    pub last: GaugeConfig,
}

/// Runs burn-in then `sweeps` sweeps, calling `observe(sweep, cfg)` on every
/// `thin`-th one.
pub fn run_chain(
    model: &YmhModel,
    settings: &ChainSettings,
    exec: Exec,
    mut observe: impl FnMut(usize, &GaugeConfig),
) -> Result<ChainResult> {
    if settings.thin == 0 {
        return Err(invalid("thin", "must be at least 1"));
    }
    match settings.proposal {
        Proposal::Gaussian { sigma } | Proposal::Discrete { delta: sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
            return Err(invalid("proposal_scale", format!("must be positive, got {sigma}")));
        }
        _ => {}
    }
    let mut r = rng::stream(settings.seed, 0);
    let mut cfg = match settings.start {
        Start::Cold => model.identity_config(),
        Start::Hot => model.random_config(&mut r),
    };
    let mut proposal = settings.proposal;
    let mut sweep_no: u64 = 0;
    let mut step = |cfg: &mut GaugeConfig, proposal: &Proposal, r: &mut rng::Rng| -> f64 {
        sweep_no += 1;
        match settings.mode {
            UpdateMode::Sequential => model.metropolis_sweep(cfg, proposal, r),
            UpdateMode::Checkerboard => model.checkerboard_sweep(cfg, proposal, settings.seed, sweep_no, exec),
        }
    };

    const WINDOW: usize = 25;
    let mut window = Vec::with_capacity(WINDOW);
    for _ in 0..settings.burn_in {
        let a = step(&mut cfg, &proposal, &mut r);
        if settings.tune {
            window.push(a);
            if window.len() == WINDOW {
                proposal = retune(proposal, mean(&window), settings.target_acceptance);
                window.clear();
            }
        }
    }

    let mut traces = Traces::default();
    let mut acc_sum = 0.0;
    for s in 1..=settings.sweeps {
        let a = step(&mut cfg, &proposal, &mut r);
        acc_sum += a;
        if s % settings.thin == 0 {
            let (e1, e2) = model.events(&cfg);
            traces.sweep.push(s);
            traces.action.push(model.action(&cfg));
            traces.acceptance.push(a);
            traces.max_edge_dev.push(cfg.max_deviation(model.updatable()));
            traces.e1.push(e1);
            traces.e2.push(e2);
            observe(s, &cfg);
        }
    }
    for (j, &k) in model.fixed.iter().enumerate() {
        if cfg.links[k] != *model.gamma[j].matrix() {
            return Err(Error::Numeric(format!("fixed edge {k} changed during sampling")));
        }
    }
    let acceptance_rate = if settings.sweeps > 0 { acc_sum / settings.sweeps as f64 } else { 0.0 };
    let tau_action = if traces.action.len() > 4 { autocorrelation_time(&traces.action) } else { f64::NAN };
    Ok(ChainResult {
        stats: ChainStats { sweeps: settings.sweeps, acceptance_rate, proposal, tau_action, traces },
        last: cfg,
    })
}

fn retune(p: Proposal, acc: f64, target: f64) -> Proposal {
    let f = (acc - target).clamp(-0.3, 0.3).exp();
    match p {
        Proposal::Gaussian { sigma } => Proposal::Gaussian { sigma: (sigma * f).clamp(1e-6, 10.0) },
        Proposal::Discrete { delta } => Proposal::Discrete { delta },
    }
}

/// Independent chains, one per seed, fanned out over `exec`; each chain is
/// sequential so results are independent of scheduling.
pub fn run_chains(model: &YmhModel, settings: &ChainSettings, seeds: &[u64], exec: Exec) -> Result<Vec<ChainResult>> {
    exec.map(seeds.len(), |i| {
        let s = ChainSettings { seed: seeds[i], ..settings.clone() };
        run_chain(model, &s, Exec::Sequential, |_, _| {})
    })
    .into_iter()
    .collect()
}

/// Empirical frequencies of 𝓔₁ and 𝓔₂ over the recorded sweeps.
pub fn event_frequencies(stats: &ChainStats) -> (f64, f64) {
    let f = |v: &[bool]| if v.is_empty() { f64::NAN } else { v.iter().filter(|b| **b).count() as f64 / v.len() as f64 };
    (f(&stats.traces.e1), f(&stats.traces.e2))
}

/// U_e ↦ g_x U_e g_y⁻¹ for a site map g, e = (x, y).
pub fn gauge_transform(model: &YmhModel, cfg: &GaugeConfig, g: impl Fn(&[i64]) -> CMat) -> GaugeConfig {
    let lat = model.lattice();
    let wrap = |mut v: Vec<i64>| {
        if lat.is_torus() {
            let l = lat.side() as i64;
            v.iter_mut().for_each(|c| *c = c.rem_euclid(l));
        }
        v
    };
    let links = (0..cfg.len())
        .map(|k| {
            let e = lat.edge(k);
            let gx = g(&wrap(e.base.clone()));
            let gy = g(&wrap(e.head()));
            gx * &cfg.links[k] * gy.adjoint()
        })
        .collect();
    GaugeConfig { links }
}

/// Number of edges of each kind in the model's lattice.
pub fn kind_counts(model: &YmhModel) -> (usize, usize) {
    let b = (0..model.lattice.n_edges()).filter(|&k| model.lattice.kind(k) == EdgeKind::Boundary).count();
    (model.lattice.n_edges() - b, b)
}

#[doc(hidden)]
pub fn u1(theta: f64) -> CMat {
    CMat::from_element(1, 1, C64::from_polar(1.0, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::EdgeId;
    use crate::stats::ks_one_sample;
    use proptest::prelude::*;

    fn su2() -> GroupSpec {
        GroupSpec::special_unitary(2).unwrap()
    }

    fn torus_model(g: GroupSpec, l: usize, beta: f64, mass: f64) -> YmhModel {
        YmhModel::new(YmhParams::torus(g, 2, l, beta, mass, 0.1)).unwrap()
    }

    fn angle(u: &CMat) -> f64 {
        u[(0, 0)].arg()
    }

    #[test]
    fn identity_has_zero_action_and_trivial_holonomy() {
        let m = torus_model(su2(), 3, 2.0, 1.0);
        let cfg = m.identity_config();
        assert_eq!(m.action(&cfg), 0.0);
        for p in 0..m.lattice().plaquettes().len() {
            assert!((m.holonomy(&cfg, p) - CMat::identity(2, 2)).norm() < 1e-15);
        }
    }

    #[test]
    fn u1_holonomy_is_signed_angle_sum() {
        let m = torus_model(GroupSpec::u1(), 3, 1.0, 1.0);
        let mut r = rng::stream(1, 0);
        let th: Vec<f64> = (0..m.lattice().n_edges()).map(|_| r.random_range(-3.0..3.0)).collect();
        let mut cfg = m.identity_config();
        for (k, t) in th.iter().enumerate() {
            cfg.set_link(k, u1(*t));
        }
        for (p, pl) in m.lattice().plaquettes().iter().enumerate() {
            let s: Vec<usize> = pl.slots.iter().map(|s| s.unwrap()).collect();
            let want = C64::from_polar(1.0, th[s[0]] + th[s[1]] - th[s[2]] - th[s[3]]);
            assert!((m.holonomy(&cfg, p)[(0, 0)] - want).norm() < 1e-14);
        }
    }

    #[test]
    fn single_edge_closed_form() {
        // 𝓗 = (1 − cos θ)(#plaquettes through e, counted with net multiplicity) + m(1 − cos θ)
        for (l, count) in [(1usize, 0.0), (3, 2.0)] {
            let m = torus_model(GroupSpec::u1(), l, 1.0, 0.7);
            let mut cfg = m.identity_config();
            let th = 0.9_f64;
            cfg.set_link(0, u1(th));
            let want = (1.0 - th.cos()) * count + 0.7 * (1.0 - th.cos());
            assert!((m.action(&cfg) - want).abs() < 1e-14, "L = {l}");
        }
    }

    #[test]
    fn local_delta_matches_full_recomputation() {
        let mut r = rng::stream(2, 0);
        for (params, name) in [
            (YmhParams::torus(su2(), 2, 3, 1.0, 0.5, 0.1), "su2 torus"),
            (YmhParams::torus(GroupSpec::u1(), 2, 1, 1.0, 0.5, 0.1), "u1 L=1"),
            (YmhParams::torus(GroupSpec::unitary(2).unwrap(), 3, 2, 1.0, 0.5, 0.1), "u2 d=3"),
            (YmhParams::boxed(su2(), LatticeSpec::cube(2, 2), 1.0, 0.5, 0.1).unwrap(), "su2 box"),
        ] {
            let m = YmhModel::new(params).unwrap();
            let mut cfg = m.random_config(&mut r);
            let mut total = 0.0;
            let start = m.action(&cfg);
            for &k in m.updatable().iter().take(12) {
                let new = haar_sample(m.group(), &mut r).into_matrix();
                let mut next = cfg.clone();
                next.set_link(k, new.clone());
                let d = m.local_action_delta(&cfg, k, &new).unwrap();
                assert!((d - (m.action(&next) - m.action(&cfg))).abs() < 1e-10, "{name}");
                assert_eq!(m.local_action_delta(&cfg, k, cfg.link(k)).unwrap(), 0.0);
                total += d;
                cfg = next;
            }
            assert!((total - (m.action(&cfg) - start)).abs() < 1e-9);
        }
        let m = YmhModel::new(YmhParams::boxed(su2(), LatticeSpec::cube(2, 1), 1.0, 0.5, 0.1).unwrap()).unwrap();
        let b = m.lattice().boundary_edges().unwrap()[0];
        assert_eq!(m.local_action_delta(&m.identity_config(), b, &CMat::identity(2, 2)), Err(Error::FixedEdge(b)));
    }

    #[test]
    fn plaquette_term_is_gauge_invariant() {
        let mut r = rng::stream(3, 0);
        let m = torus_model(su2(), 3, 1.0, 1.0);
        let cfg = m.random_config(&mut r);
        let site: std::collections::HashMap<Vec<i64>, CMat> = (0..3)
            .flat_map(|x| (0..3).map(move |y| vec![x, y]))
            .map(|v| (v, haar_sample(&su2(), &mut r).into_matrix()))
            .collect();
        let t = gauge_transform(&m, &cfg, |v| site[v].clone());
        for p in 0..m.lattice().plaquettes().len() {
            let a = distance_to_identity(&m.holonomy(&cfg, p));
            let b = distance_to_identity(&m.holonomy(&t, p));
            assert!((a - b).abs() < 1e-12);
        }
        assert!((m.plaquette_action(&cfg) - m.plaquette_action(&t)).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn prop_action_bounded_below_by_mass_term(seed in any::<u64>(), mass in 0.01f64..5.0) {
            let m = torus_model(su2(), 2, 1.0, mass);
            let cfg = m.random_config(&mut rng::stream(seed, 0));
            let lower = 0.5 * mass * cfg.links().iter().map(|u| distance_to_identity(u).powi(2)).sum::<f64>();
            prop_assert!(m.action(&cfg) >= lower - 1e-12);
        }
    }

    #[test]
    fn beta_zero_and_small_sigma_accept_everything() {
        let m = torus_model(su2(), 3, 1.0, 1.0);
        let mut r = rng::stream(4, 0);
        let mut cfg = m.random_config(&mut r);
        assert_eq!(m.sweep_at(&mut cfg, 0.0, &Proposal::Gaussian { sigma: 1.0 }, &mut r), 1.0);
        let a = m.metropolis_sweep(&mut cfg, &Proposal::Gaussian { sigma: 1e-9 }, &mut r);
        assert!(a > 0.99);
    }

    #[test]
    fn fixed_boundary_is_never_touched() {
        let g = su2();
        let lat = Lattice::new(LatticeSpec::cube(2, 2)).unwrap();
        let mut r = rng::stream(5, 0);
        let gamma: Vec<_> = (0..lat.boundary_edges().unwrap().len()).map(|_| haar_sample(&g, &mut r)).collect();
        let mut params = YmhParams::boxed(g, LatticeSpec::cube(2, 2), 1.0, 1.0, 0.1).unwrap();
        params.boundary = BoundaryCondition::Fixed(gamma.clone());
        let m = YmhModel::new(params).unwrap();
        let mut cfg = m.identity_config();
        for _ in 0..50 {
            m.metropolis_sweep(&mut cfg, &Proposal::Gaussian { sigma: 0.8 }, &mut r);
            m.checkerboard_sweep(&mut cfg, &Proposal::Gaussian { sigma: 0.8 }, 1, 2, Exec::Parallel);
        }
        for (j, &k) in lat.boundary_edges().unwrap().iter().enumerate() {
            assert_eq!(cfg.link(k), gamma[j].matrix());
        }
    }

    #[test]
    fn colouring_is_plaquette_disjoint() {
        for spec in [LatticeSpec::torus(2, 4), LatticeSpec::torus(3, 3), LatticeSpec::cube(2, 2)] {
            let mut params = YmhParams::torus(su2(), spec.dim, spec.side, 1.0, 1.0, 0.1);
            if !spec.is_torus() {
                params = YmhParams::boxed(su2(), spec, 1.0, 1.0, 0.1).unwrap();
            }
            let m = YmhModel::new(params).unwrap();
            let total: usize = m.colours().iter().map(|c| c.len()).sum();
            assert_eq!(total, m.updatable().len());
            for class in m.colours() {
                for p in m.lattice().plaquettes() {
                    let hits = p.slots.iter().flatten().filter(|k| class.contains(k)).count();
                    assert!(hits <= 1);
                }
            }
        }
    }

    #[test]
    fn checkerboard_is_thread_count_independent() {
        let m = torus_model(su2(), 4, 2.0, 1.0);
        let p = Proposal::Gaussian { sigma: 0.5 };
        let mut a = m.identity_config();
        let mut b = m.identity_config();
        for t in 0..10 {
            m.checkerboard_sweep(&mut a, &p, 7, t, Exec::Sequential);
            m.checkerboard_sweep(&mut b, &p, 7, t, Exec::Parallel);
        }
        assert_eq!(a, b);
    }

    /// Oracle: density of φ = θ₁ + θ₂ − θ₃ − θ₄ on the single-plaquette block,
    /// ∝ e^{β cos φ} · (ρ∗ρ∗ρ∗ρ)(φ) with ρ(θ) ∝ e^{βm cos θ}, by grid convolution.
    fn plaquette_angle_cdf(beta: f64, mass: f64) -> impl Fn(f64) -> f64 {
        let n = 4096;
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let grid: Vec<f64> = (0..n).map(|i| -std::f64::consts::PI + (i as f64 + 0.5) * h).collect();
        let rho: Vec<f64> = grid.iter().map(|t| (beta * mass * (t.cos() - 1.0)).exp()).collect();
        let conv = |a: &[f64], b: &[f64]| -> Vec<f64> {
            // circular convolution on the centred grid: index i ↔ angle grid[i]
            (0..n)
                .map(|i| {
                    let mut s = 0.0;
                    for j in 0..n {
                        // grid[i] − grid[j] = grid[(i − j + n/2) mod n] − π + π
                        let k = (i + n + n / 2 - j) % n;
                        s += a[j] * b[k];
                    }
                    s * h
                })
                .collect()
        };
        let r2 = conv(&rho, &rho);
        let r4 = conv(&r2, &r2);
        let dens: Vec<f64> = grid.iter().zip(&r4).map(|(t, v)| v * (beta * (t.cos() - 1.0)).exp()).collect();
        let total: f64 = dens.iter().sum::<f64>() * h;
        let mut cdf = Vec::with_capacity(n + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for v in &dens {
            acc += v * h / total;
            cdf.push(acc);
        }
        move |x: f64| {
            let t = ((x + std::f64::consts::PI) / h).clamp(0.0, n as f64);
            let i = (t.floor() as usize).min(n - 1);
            cdf[i] + (cdf[i + 1] - cdf[i]) * (t - i as f64)
        }
    }

    #[test]
    fn single_plaquette_angle_distribution() {
        let params = YmhParams::boxed(GroupSpec::u1(), LatticeSpec::block(2, 1), 1.0, 1.0, 0.1)
            .unwrap()
            .with_rule(PlaquetteRule::ClosureOnly);
        let m = YmhModel::new(params).unwrap();
        assert_eq!(m.lattice().plaquettes().len(), 1);
        let settings = ChainSettings { sweeps: 100_000, burn_in: 500, thin: 1, seed: 11, ..Default::default() };
        let mut phis = Vec::new();
        run_chain(&m, &settings, Exec::Sequential, |_, cfg| phis.push(angle(&m.holonomy(cfg, 0)))).unwrap();
        let ks = ks_one_sample(&phis, plaquette_angle_cdf(1.0, 1.0));
        assert!(ks.statistic < 0.02, "{ks:?}");
    }

    #[test]
    fn discrete_kernel_satisfies_detailed_balance() {
        // one free U(1) edge on the single-cell block under ClosureOnly: the
        // angle lives on the ring {kδ} and the chain is a birth–death process
        let params = YmhParams::boxed(GroupSpec::u1(), LatticeSpec::block(2, 1), 0.8, 1.0, 0.1)
            .unwrap()
            .with_rule(PlaquetteRule::ClosureOnly);
        let m = YmhModel::new(params).unwrap();
        let k = m.updatable()[0];
        let delta = 2.0 * std::f64::consts::PI / 8.0;
        let p = Proposal::Discrete { delta };
        let mut cfg = m.identity_config();
        let mut r = rng::stream(12, 0);
        let state = |cfg: &GaugeConfig| ((angle(cfg.link(k)) / delta).round() as i64).rem_euclid(8) as usize;
        let mut flow = [[0usize; 8]; 8];
        let mut visits = [0usize; 8];
        let n = 400_000;
        for _ in 0..n {
            let a = state(&cfg);
            m.update_edge(&mut cfg, k, 0.8, &p, &mut r);
            let b = state(&cfg);
            flow[a][b] += 1;
            visits[a] += 1;
        }
        for a in 0..8 {
            let b = (a + 1) % 8;
            let (fab, fba) = (flow[a][b] as f64, flow[b][a] as f64);
            let se = (fab + fba).sqrt();
            assert!((fab - fba).abs() < 4.0 * se, "{a}->{b}: {fab} vs {fba}");
        }
        // stationary law ∝ exp(−β·energy(θ))
        let energy = |s: usize| {
            let th = s as f64 * delta;
            (1.0 - th.cos()) + 1.0 * (1.0 - th.cos())
        };
        let z: f64 = (0..8).map(|s| (-0.8 * energy(s)).exp()).sum();
        for (s, &v) in visits.iter().enumerate() {
            let pi = (-0.8 * energy(s)).exp() / z;
            assert!((v as f64 / n as f64 - pi).abs() < 0.01, "state {s}");
        }
    }

    #[test]
    fn events_and_lift() {
        let g = su2();
        let m = torus_model(g.clone(), 3, 100.0, 1.0);
        let cfg = m.identity_config();
        assert_eq!(m.events(&cfg), (true, true));
        let lifted = m.lift(&cfg, LiftScale::Scaled);
        assert_eq!(lifted.max_norm(), 0.0);

        let mut r = rng::stream(13, 0);
        let xs: Vec<_> = (0..m.lattice().n_edges()).map(|_| g.random_algebra_with_norm(&mut r, 0.2)).collect();
        let field = AlgebraEdgeField::from_elements(&g, m.lattice(), &xs).unwrap();
        let cfg = GaugeConfig::from_algebra(&field);
        let raw = m.lift(&cfg, LiftScale::Raw);
        for k in 0..field.n_edges() {
            assert!((raw.element(k).matrix() - xs[k].matrix()).norm() < 1e-10);
        }
        let scaled = m.lift(&cfg, LiftScale::Scaled);
        assert!((scaled.norm(3) - 10.0 * raw.norm(3)).abs() < 1e-12);

        // an edge far from the identity lifts to zero
        let mut far = cfg.clone();
        far.set_link(0, haar_sample(&g, &mut r).into_matrix() * CMat::identity(2, 2) * C64::new(-1.0, 0.0));
        if distance_to_identity(far.link(0)) > g.chart_radius() {
            assert_eq!(m.lift(&far, LiftScale::Raw).norm(0), 0.0);
        }

        // a huge β pushes both thresholds to zero while a Haar configuration sits far out
        let (e1, _) = torus_model(g.clone(), 3, 1e8, 1.0).events(&m.random_config(&mut r));
        assert!(!e1);
    }

    #[test]
    fn sub_box_events() {
        let mut m = YmhModel::new(YmhParams::torus(su2(), 2, 6, 1e4, 1.0, 0.1)).unwrap();
        m.set_event_region(EventRegion::SubBox(1)).unwrap();
        let (e1, e2) = m.event_edges();
        assert_eq!(e1.len(), 12);
        assert_eq!(e2.len(), 12);
        assert!(m.set_event_region(EventRegion::SubBox(3)).is_err());
    }

    #[test]
    fn validation() {
        let g = su2();
        assert!(YmhModel::new(YmhParams::torus(g.clone(), 2, 3, 1.0, 0.0, 0.1)).is_err());
        assert!(YmhModel::new(YmhParams::torus(g.clone(), 2, 3, 0.0, 1.0, 0.1)).is_err());
        assert!(YmhModel::new(YmhParams::torus(g.clone(), 2, 3, 1.0, 1.0, 0.5)).is_err());
        let mut p = YmhParams::torus(g.clone(), 2, 3, 1.0, 1.0, 0.1);
        p.boundary = BoundaryCondition::Fixed(vec![]);
        assert!(YmhModel::new(p).is_err());
        let mut p = YmhParams::boxed(g, LatticeSpec::cube(2, 1), 1.0, 1.0, 0.1).unwrap();
        p.boundary = BoundaryCondition::Periodic;
        assert!(YmhModel::new(p).is_err());
    }

    #[test]
    fn snapshot_and_csv() {
        let m = YmhModel::new(YmhParams::boxed(su2(), LatticeSpec::cube(2, 1), 2.0, 1.0, 0.1).unwrap()).unwrap();
        let settings = ChainSettings { sweeps: 40, burn_in: 10, thin: 4, seed: 3, ..Default::default() };
        let res = run_chain(&m, &settings, Exec::Sequential, |_, _| {}).unwrap();
        assert_eq!(res.stats.traces.sweep.len(), 10);
        let snap = res.last.snapshot(m.group(), m.lattice());
        let json = serde_json::to_string(&snap).unwrap();
        let back = GaugeConfig::from_snapshot(&serde_json::from_str(&json).unwrap(), &m).unwrap();
        assert_eq!(back, res.last);
        let mut csv = Vec::new();
        res.stats.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert!(text.starts_with("sweep,action,acceptance,max_edge_dev,E1,E2"));
        let again = run_chain(&m, &settings, Exec::Sequential, |_, _| {}).unwrap();
        assert_eq!(again.last, res.last);
        let e = EdgeId::new(vec![0, 0], 0);
        assert!(m.lattice().edge_index(&e).is_some());
    }

    #[test]
    fn large_beta_concentrates_near_identity() {
        let mut devs = Vec::new();
        for beta in [10.0, 1e3, 1e5] {
            let m = torus_model(su2(), 3, beta, 1.0);
            let settings = ChainSettings { sweeps: 200, burn_in: 200, thin: 10, seed: 21, ..Default::default() };
            let res = run_chain(&m, &settings, Exec::Sequential, |_, _| {}).unwrap();
            devs.push(mean(&res.stats.traces.max_edge_dev));
        }
        assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
    }
}
