//! Run configuration: a TOML document with one table per concern.
//!
//! Every table rejects unknown keys. Defaults are filled in by serde, so the
//! "resolved" config written into artifacts is simply the parsed value
//! serialised back, and it re-parses to an equal value.

use std::path::{Path, PathBuf};

use proca_lattice::continuum::FormSpec;
use proca_lattice::lattice::{LatticeSpec, PlaquetteRule, Topology};
use proca_lattice::lie::{GroupFamily, GroupSpec, DEFAULT_CHART_RADIUS};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SampleYmh,
    SampleProca,
    Lift,
    Pair,
    Compare,
    Decay,
    Scaling,
    Spectrum,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::SampleYmh => "sample-ymh",
            Experiment::SampleProca => "sample-proca",
            Experiment::Lift => "lift",
            Experiment::Pair => "pair",
            Experiment::Compare => "compare",
            Experiment::Decay => "decay",
            Experiment::Scaling => "scaling",
            Experiment::Spectrum => "spectrum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    U1,
    U,
    Su,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub family: GroupKind,
    /// Matrix size N; ignored for U(1).
    #[serde(default = "one")]
    pub n: usize,
    #[serde(default = "default_chart_radius")]
    pub chart_radius: f64,
}

impl Default for GroupConfig {
    fn default() -> Self {
        Self { family: GroupKind::Su, n: 2, chart_radius: DEFAULT_CHART_RADIUS }
    }
}

impl GroupConfig {
    pub fn build(&self) -> Result<GroupSpec, CliError> {
        let (family, n) = match self.family {
            GroupKind::U1 => (GroupFamily::Circle, 1),
            GroupKind::U => (GroupFamily::Unitary, self.n),
            GroupKind::Su => (GroupFamily::SpecialUnitary, self.n),
        };
        GroupSpec::with_chart_radius(family, n, self.chart_radius).map_err(|e| CliError::from_core("group", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub dim: usize,
    pub side: usize,
    #[serde(default = "default_topology")]
    pub topology: Topology,
    #[serde(default)]
    pub rule: PlaquetteRule,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self { dim: 2, side: 3, topology: Topology::Torus, rule: PlaquetteRule::default() }
    }
}

impl LatticeConfig {
    pub fn spec(&self) -> LatticeSpec {
        LatticeSpec { dim: self.dim, side: self.side, topology: self.topology }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub beta: f64,
    pub mass: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { beta: 1.0, mass: 1.0, kappa: default_kappa() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    Gaussian,
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Sequential,
    Checkerboard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartKind {
    Cold,
    Hot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub proposal: ProposalKind,
    pub proposal_scale: f64,
    pub tune: bool,
    pub target_acceptance: f64,
    pub mode: ModeKind,
    pub start: StartKind,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            sweeps: 10_000,
            burn_in: 1_000,
            thin: 10,
            proposal: ProposalKind::Gaussian,
            proposal_scale: 0.5,
            tune: true,
            target_acceptance: 0.4,
            mode: ModeKind::Sequential,
            start: StartKind::Cold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcaConfig {
    pub samples: usize,
    /// Boundary data for box lattices: every boundary edge gets an
    /// independent direction of this norm; 0 means η = 0.
    pub boundary_sup: f64,
}

impl Default for ProcaConfig {
    fn default() -> Self {
        Self { samples: 100, boundary_sup: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMethod {
    /// Exact quadrature TV; U(1), at most six free edges.
    ExactTv,
    /// Sampled sup |ψ| on the events.
    Residual,
    /// Independence-Metropolis KS trend of the pairing.
    Ks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparisonConfig {
    pub method: CompareMethod,
    pub betas: Vec<f64>,
    pub quadrature_points: usize,
    /// Per β: in-event draws for `residual`, chain steps for `ks`.
    pub samples: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self { method: CompareMethod::ExactTv, betas: vec![1e2, 1e3, 1e4], quadrature_points: 48, samples: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub epsilons: Vec<f64>,
    /// δ in L = ⌊ε^{−1−δ}⌋.
    pub delta: f64,
    pub error_terms: bool,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self { epsilons: vec![0.25, 0.125, 0.0625], delta: 0.25, error_terms: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    pub epsilon: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self { epsilon: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayConfig {
    /// Fit window in graph distance; `fit_hi = 0` means ⌊L/2⌋.
    pub fit_lo: usize,
    pub fit_hi: usize,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self { fit_lo: 2, fit_hi: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Snapshot read by `lift` and `pair`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub group: GroupConfig,
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub proca: ProcaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<FormSpec>,
    #[serde(default)]
    pub comparison: ComparisonConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub pair: PairConfig,
    #[serde(default)]
    pub decay: DecayConfig,
}

fn one() -> usize {
    1
}

fn default_chart_radius() -> f64 {
    DEFAULT_CHART_RADIUS
}

fn default_topology() -> Topology {
    Topology::Torus
}

fn default_kappa() -> f64 {
    0.1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn positive(field: &'static str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::invalid(field, format!("must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("the config serialises")
    }

    /// Fixes the experiment to the subcommand and checks every range the
    /// chosen experiment relies on.
    pub fn resolve(mut self, experiment: Experiment) -> Result<Self, CliError> {
        if let Some(e) = self.experiment {
            if e != experiment {
                return Err(CliError::invalid(
                    "experiment",
                    format!("config says {} but the subcommand is {}", e.name(), experiment.name()),
                ));
            }
        }
        self.experiment = Some(experiment);
        self.validate(experiment)?;
        Ok(self)
    }

    pub fn validate(&self, experiment: Experiment) -> Result<(), CliError> {
        self.group.build()?;
        if self.lattice.dim < 2 {
            return Err(CliError::invalid("lattice.dim", format!("d must be >= 2, got {}", self.lattice.dim)));
        }
        if self.lattice.side < 1 {
            return Err(CliError::invalid("lattice.side", "L must be >= 1"));
        }
        positive("mass", self.model.mass)?;
        positive("beta", self.model.beta)?;
        if !(self.model.kappa > 0.0 && self.model.kappa < 0.5) {
            return Err(CliError::invalid("kappa", format!("must lie in (0, 1/2), got {}", self.model.kappa)));
        }
        let needs_box = matches!(experiment, Experiment::Compare) && self.comparison.method == CompareMethod::ExactTv;
        if needs_box && self.lattice.topology == Topology::Torus {
            return Err(CliError::invalid("lattice.topology", "exact TV needs a box or block lattice"));
        }
        match experiment {
            Experiment::SampleYmh => {
                if self.mcmc.sweeps == 0 {
                    return Err(CliError::invalid("mcmc.sweeps", "must be at least 1"));
                }
                if self.mcmc.thin == 0 {
                    return Err(CliError::invalid("mcmc.thin", "must be at least 1"));
                }
                positive("mcmc.proposal_scale", self.mcmc.proposal_scale)?;
                if !(self.mcmc.target_acceptance > 0.0 && self.mcmc.target_acceptance < 1.0) {
                    return Err(CliError::invalid("mcmc.target_acceptance", "must lie in (0, 1)"));
                }
            }
            Experiment::SampleProca => {
                if self.proca.samples == 0 {
                    return Err(CliError::invalid("proca.samples", "must be at least 1"));
                }
                if !(self.proca.boundary_sup >= 0.0 && self.proca.boundary_sup.is_finite()) {
                    return Err(CliError::invalid("proca.boundary_sup", "must be finite and >= 0"));
                }
            }
            Experiment::Lift | Experiment::Pair => {
                if self.input.is_none() {
                    return Err(CliError::invalid("input", "a snapshot path is required"));
                }
                if experiment == Experiment::Pair {
                    positive("pair.epsilon", self.pair.epsilon)?;
                    self.require_form()?;
                }
            }
            Experiment::Compare => {
                let c = &self.comparison;
                if c.betas.is_empty() {
                    return Err(CliError::invalid("comparison.betas", "must not be empty"));
                }
                for &b in &c.betas {
                    positive("comparison.betas", b)?;
                }
                if !(2..=64).contains(&c.quadrature_points) {
                    return Err(CliError::invalid(
                        "comparison.quadrature_points",
                        format!("need 2 <= K <= 64, got {}", c.quadrature_points),
                    ));
                }
                if c.method != CompareMethod::ExactTv && c.samples == 0 {
                    return Err(CliError::invalid("comparison.samples", "must be at least 1"));
                }
                if c.method == CompareMethod::Ks {
                    self.require_form()?;
                }
            }
            Experiment::Scaling => {
                let s = &self.scaling;
                if s.epsilons.is_empty() {
                    return Err(CliError::invalid("scaling.epsilons", "must not be empty"));
                }
                for &e in &s.epsilons {
                    if !(e > 0.0 && e <= 1.0) {
                        return Err(CliError::invalid(
                            "scaling.epsilons",
                            format!("each ε must lie in (0, 1], got {e}"),
                        ));
                    }
                }
                if s.error_terms && s.epsilons.len() < 2 {
                    return Err(CliError::invalid("scaling.epsilons", "error terms need at least two values"));
                }
                if !(s.delta >= 0.0 && s.delta.is_finite()) {
                    return Err(CliError::invalid("scaling.delta", "must be finite and >= 0"));
                }
                self.require_form()?;
            }
            Experiment::Decay => {
                let hi = self.decay.fit_hi;
                if hi != 0 && hi <= self.decay.fit_lo {
                    return Err(CliError::invalid("decay.fit_hi", "must exceed decay.fit_lo"));
                }
            }
            Experiment::Spectrum => {}
        }
        Ok(())
    }

    fn require_form(&self) -> Result<&FormSpec, CliError> {
        let f = self.form.as_ref().ok_or_else(|| CliError::invalid("form", "this experiment needs a [form] table"))?;
        positive("form.radius", f.radius)?;
        Ok(f)
    }
}
