//! Experiment configuration and pre-run diagnostics.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eth::DEFAULT_ENERGY_WINDOW;
use crate::hamiltonian::{Axis, CouplingSpec, CouplingTerm, Preset, SpinChainParams, SystemParams};
use crate::pipeline::{default_freq_bin, BathPrep};
use crate::states::SystemStateKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    EthStats,
    Thermo,
    Rates,
    Bcf,
    Dynamics,
    Scaling,
    Levelstats,
    Typicality,
    MultiOpRates,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::EthStats,
        ExperimentKind::Thermo,
        ExperimentKind::Rates,
        ExperimentKind::Bcf,
        ExperimentKind::Dynamics,
        ExperimentKind::Scaling,
        ExperimentKind::Levelstats,
        ExperimentKind::Typicality,
        ExperimentKind::MultiOpRates,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::EthStats => "eth-stats",
            ExperimentKind::Thermo => "thermo",
            ExperimentKind::Rates => "rates",
            ExperimentKind::Bcf => "bcf",
            ExperimentKind::Dynamics => "dynamics",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Levelstats => "levelstats",
            ExperimentKind::Typicality => "typicality",
            ExperimentKind::MultiOpRates => "multi-op-rates",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind `{s}`")))
    }

    /// Kinds that diagonalize the system+bath Hamiltonian.
    pub fn needs_total(self) -> bool {
        matches!(
            self,
            ExperimentKind::Dynamics | ExperimentKind::Scaling | ExperimentKind::Levelstats
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Probe or coupling operator `σ^axis` on one bath site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteOperator {
    pub site: usize,
    pub axis: Axis,
}

fn default_omega0() -> f64 {
    1.525
}
fn default_kappa() -> f64 {
    0.15
}
fn default_terms() -> Vec<CouplingTerm> {
    CouplingSpec::xx(0.0).terms
}
fn default_extra_ops() -> Vec<SiteOperator> {
    vec![SiteOperator {
        site: 1,
        axis: Axis::Z,
    }]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default = "default_omega0")]
    pub omega0: f64,
}

impl Default for SystemSpec {
    fn default() -> Self {
        Self {
            omega0: default_omega0(),
        }
    }
}

/// Bath chain. A preset overrides any explicit couplings; without one all
/// couplings must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSpec {
    #[serde(rename = "L")]
    pub sites: usize,
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(rename = "J", default)]
    pub j: Option<f64>,
    #[serde(default)]
    pub hz: Option<f64>,
    #[serde(default)]
    pub hx: Option<f64>,
    #[serde(default)]
    pub h1: Option<f64>,
    #[serde(rename = "hL", default)]
    pub hl: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_terms")]
    pub terms: Vec<CouplingTerm>,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            kappa: default_kappa(),
            terms: default_terms(),
        }
    }
}

/// System qubit, bath chain and coupling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub system: SystemSpec,
    pub bath: BathSpec,
    #[serde(default)]
    pub coupling: CouplingConfig,
    /// Bath operator for ETH statistics; defaults to the bath factor of the
    /// first coupling term.
    #[serde(default)]
    pub probe: Option<SiteOperator>,
    /// Operators joining the probe in `multi-op-rates`.
    #[serde(default = "default_extra_ops")]
    pub extra_ops: Vec<SiteOperator>,
}

impl ModelSpec {
    pub fn sites(&self) -> usize {
        self.bath.sites
    }

    /// Preset of the bath, chaotic when couplings are explicit (used only
    /// to pick default frequency bins).
    pub fn preset(&self) -> Preset {
        self.bath.preset.unwrap_or(Preset::Chaotic)
    }

    pub fn chain(&self) -> Result<SpinChainParams> {
        let b = &self.bath;
        if let Some(p) = b.preset {
            return Ok(SpinChainParams::preset(p, b.sites));
        }
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("model.bath.{name} missing and no preset given")))
        };
        Ok(SpinChainParams {
            sites: b.sites,
            j: need(b.j, "J")?,
            hz: need(b.hz, "hz")?,
            hx: need(b.hx, "hx")?,
            h1: need(b.h1, "h1")?,
            hl: need(b.hl, "hL")?,
        })
    }

    pub fn system(&self) -> SystemParams {
        SystemParams {
            omega0: self.system.omega0,
        }
    }

    pub fn coupling(&self) -> CouplingSpec {
        CouplingSpec {
            kappa: self.coupling.kappa,
            terms: self.coupling.terms.clone(),
        }
    }

    pub fn kappa(&self) -> f64 {
        self.coupling.kappa
    }

    pub fn probe(&self) -> SiteOperator {
        self.probe.unwrap_or_else(|| {
            let t = self
                .coupling
                .terms
                .first()
                .copied()
                .unwrap_or(default_terms()[0]);
            SiteOperator {
                site: t.site,
                axis: t.axis,
            }
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BathPrepKind {
    #[default]
    Eigenstate,
    Typical,
    Product,
}

fn default_mc_width() -> f64 {
    0.1
}
fn default_samples() -> usize {
    50
}
fn default_system_state() -> SystemStateKind {
    SystemStateKind::Polarized
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    #[serde(default = "default_system_state")]
    pub system: SystemStateKind,
    #[serde(default)]
    pub bath: BathPrepKind,
    /// Microcanonical inverse temperature fixing the bath energy.
    #[serde(default)]
    pub beta: f64,
    /// Width of the microcanonical window for typical states.
    #[serde(default = "default_mc_width")]
    pub window: f64,
    /// Number of typical states in `typicality`.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl Default for StateSpec {
    fn default() -> Self {
        Self {
            system: default_system_state(),
            bath: BathPrepKind::default(),
            beta: 0.0,
            window: default_mc_width(),
            samples: default_samples(),
        }
    }
}

fn default_t_max() -> f64 {
    325.0
}
fn default_dt() -> f64 {
    0.25
}
fn default_energy_window() -> f64 {
    DEFAULT_ENERGY_WINDOW
}
fn default_sizes() -> Vec<usize> {
    vec![6, 8, 10, 12]
}
fn default_presets() -> Vec<Preset> {
    vec![Preset::Chaotic, Preset::Integrable]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Frequency bin of spectral tables; preset default when absent.
    #[serde(default)]
    pub freq_bin: Option<f64>,
    #[serde(default = "default_energy_window")]
    pub energy_window: f64,
    /// Bath sizes swept by `scaling`.
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    /// Presets swept by `scaling` and `levelstats`.
    #[serde(default = "default_presets")]
    pub presets: Vec<Preset>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            t_max: default_t_max(),
            dt: default_dt(),
            freq_bin: None,
            energy_window: default_energy_window(),
            sizes: default_sizes(),
            presets: default_presets(),
        }
    }
}

impl GridSpec {
    pub fn freq_bin_for(&self, preset: Preset) -> f64 {
        self.freq_bin
            .unwrap_or_else(|| default_freq_bin(Some(preset)))
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional in the file; the command line names the kind.
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    pub model: ModelSpec,
    #[serde(default)]
    pub state: StateSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Minimal config for `kind` on a preset bath of `sites` spins.
    pub fn new(kind: ExperimentKind, preset: Preset, sites: usize) -> Self {
        Self {
            kind: Some(kind),
            model: ModelSpec {
                system: SystemSpec::default(),
                bath: BathSpec {
                    sites,
                    preset: Some(preset),
                    j: None,
                    hz: None,
                    hx: None,
                    h1: None,
                    hl: None,
                },
                coupling: CouplingConfig::default(),
                probe: None,
                extra_ops: default_extra_ops(),
            },
            state: StateSpec::default(),
            grid: GridSpec::default(),
            out: default_out(),
            seed: 0,
            cache_dir: None,
        }
    }

    /// Kind named in the file, required to agree with `cli_kind` when both
    /// are present.
    pub fn resolve_kind(&self, cli_kind: Option<ExperimentKind>) -> Result<ExperimentKind> {
        match (self.kind, cli_kind) {
            (Some(a), Some(b)) if a != b => Err(Error::Config(format!(
                "config names kind `{a}` but `{b}` was requested"
            ))),
            (_, Some(k)) | (Some(k), None) => Ok(k),
            (None, None) => Err(Error::Config("no experiment kind given".into())),
        }
    }

    pub fn bath_prep(&self) -> BathPrep {
        match self.state.bath {
            BathPrepKind::Eigenstate => BathPrep::Eigenstate,
            BathPrepKind::Typical => BathPrep::Typical {
                width: self.state.window,
                seed: self.seed,
            },
            BathPrepKind::Product => BathPrep::Product,
        }
    }

    /// Largest bath size the run touches.
    pub fn max_sites(&self, kind: ExperimentKind) -> usize {
        match kind {
            ExperimentKind::Scaling => self.grid.sizes.iter().copied().max().unwrap_or(0),
            _ => self.model.sites(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
}

impl Diagnostic {
    pub fn warning(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "warning[{}]: {}", self.code, self.message)
    }
}

/// Memory budget for the memory lint when the host does not report one.
pub const FALLBACK_MEMORY_BYTES: u64 = 8 << 30;

/// `MemAvailable` from `/proc/meminfo`, if readable.
pub fn available_memory() -> Option<u64> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = info.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// `16 · dim²` bytes: one dense complex matrix of the given dimension.
pub fn memory_estimate(dim: usize) -> u64 {
    16 * (dim as u64) * (dim as u64)
}

/// Gaussian estimate of the mean level spacing at the centre of the
/// spectrum, `√(2π) σ / dim` with `σ² = tr H² / dim`.
pub fn estimated_level_spacing(chain: &SpinChainParams) -> f64 {
    let fields: f64 = chain
        .longitudinal_fields()
        .iter()
        .map(|h| h * h + chain.hx * chain.hx)
        .sum();
    let var = chain.j * chain.j * (chain.sites.saturating_sub(1)) as f64 + fields;
    (2.0 * std::f64::consts::PI).sqrt() * var.sqrt() / chain.hilbert_dim() as f64
}

/// Markov lint threshold on `γ · τ_B`.
pub const MARKOV_LIMIT: f64 = 0.1;

/// Warning when the relaxation rate is not small against the inverse bath
/// correlation time.
pub fn markov_lint(gamma: f64, tau_b: f64) -> Option<Diagnostic> {
    let product = gamma * tau_b;
    (product > MARKOV_LIMIT).then(|| {
        Diagnostic::warning(
            "markov",
            format!(
                "γ·τ_B = {product:.3} exceeds {MARKOV_LIMIT}; relaxation is not slow against the bath correlation time"
            ),
        )
    })
}

/// Warning when `beta` lies outside the entropy fit's temperature range.
pub fn beta_domain_lint(fit: &crate::thermo::EntropyFit, beta: f64) -> Option<Diagnostic> {
    let (lo, hi) = fit.domain;
    let (b_lo, b_hi) = match (fit.beta(hi), fit.beta(lo)) {
        (Ok(a), Ok(b)) => (a.min(b), a.max(b)),
        _ => return None,
    };
    (!(beta >= b_lo && beta <= b_hi)).then(|| {
        Diagnostic::warning(
            "beta-domain",
            format!("β = {beta} lies outside the entropy-fit range [{b_lo:.4}, {b_hi:.4}]"),
        )
    })
}

/// Schema check and static physics lints. Schema violations are errors,
/// lints are returned as warnings.
pub fn validate(config: &ExperimentConfig, kind: ExperimentKind) -> Result<Vec<Diagnostic>> {
    let m = &config.model;
    let bad = |msg: String| Err(Error::Config(msg));
    if m.sites() < 2 {
        return bad(format!(
            "model.bath.L must be at least 2, got {}",
            m.sites()
        ));
    }
    let as_config = |e: Error| Error::Config(e.to_string());
    let chain = m.chain()?;
    chain.validate().map_err(as_config)?;
    m.system().validate().map_err(as_config)?;
    m.coupling().validate(m.sites()).map_err(as_config)?;
    let kappa = m.kappa();
    if !(kappa.is_finite() && kappa >= 0.0) {
        return bad(format!(
            "model.coupling.kappa must be finite and nonnegative, got {kappa}"
        ));
    }
    let probe = m.probe();
    for op in std::iter::once(&probe).chain(&m.extra_ops) {
        if op.site == 0 || op.site > m.sites() {
            return bad(format!(
                "operator site {} outside 1..={}",
                op.site,
                m.sites()
            ));
        }
    }
    let single_x = matches!(m.coupling.terms.as_slice(), [t] if t.system == Axis::X);
    if matches!(kind, ExperimentKind::Dynamics | ExperimentKind::Scaling) && !single_x {
        return bad("dynamics needs exactly one coupling term with system axis x".into());
    }
    if kind == ExperimentKind::MultiOpRates && m.extra_ops.is_empty() {
        return bad("multi-op-rates needs at least one entry in model.extra_ops".into());
    }
    let s = &config.state;
    if !s.beta.is_finite() {
        return bad("state.beta must be finite".into());
    }
    if !(s.window > 0.0 && s.window.is_finite()) {
        return bad("state.window must be positive".into());
    }
    if kind == ExperimentKind::Typicality && s.samples < 2 {
        return bad("typicality needs state.samples ≥ 2".into());
    }
    let g = &config.grid;
    if !(g.dt > 0.0 && g.t_max > 0.0 && g.dt <= g.t_max && g.t_max.is_finite()) {
        return bad(format!(
            "grid needs 0 < dt ≤ t_max, got dt={} t_max={}",
            g.dt, g.t_max
        ));
    }
    if let Some(w) = g.freq_bin {
        if !(w > 0.0 && w.is_finite()) {
            return bad("grid.freq_bin must be positive".into());
        }
    }
    if !(g.energy_window > 0.0 && g.energy_window.is_finite()) {
        return bad("grid.energy_window must be positive".into());
    }
    if kind == ExperimentKind::Scaling {
        if g.sizes.is_empty() || g.presets.is_empty() {
            return bad("scaling needs nonempty grid.sizes and grid.presets".into());
        }
        if let Some(&l) = g.sizes.iter().find(|&&l| l < 2) {
            return bad(format!("grid.sizes entry {l} is below 2"));
        }
    }

    let mut warnings = Vec::new();
    let dynamic = matches!(
        kind,
        ExperimentKind::Dynamics | ExperimentKind::Scaling | ExperimentKind::Rates
    );
    if dynamic && kappa == 0.0 {
        warnings.push(Diagnostic::warning(
            "trivial-dynamics",
            "κ = 0 decouples the qubit; the dynamics is trivial",
        ));
    }
    let spacing = estimated_level_spacing(&chain);
    if dynamic && kappa > 0.0 && kappa < spacing {
        warnings.push(Diagnostic::warning(
            "kappa-spacing",
            format!("κ = {kappa} is below the estimated mean level spacing {spacing:.3e}"),
        ));
    }
    let spins = config.max_sites(kind) + usize::from(kind.needs_total());
    let dim = 1usize.checked_shl(spins as u32).unwrap_or(usize::MAX);
    let need = memory_estimate(dim);
    let have = available_memory().unwrap_or(FALLBACK_MEMORY_BYTES);
    if need > have {
        warnings.push(Diagnostic::warning(
            "memory",
            format!(
                "dense dimension {dim} needs about {:.1} GiB per matrix, {:.1} GiB available",
                need as f64 / (1u64 << 30) as f64,
                have as f64 / (1u64 << 30) as f64
            ),
        ));
    }
    Ok(warnings)
}
