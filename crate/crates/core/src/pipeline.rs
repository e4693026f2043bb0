//! Multi-stage workflows shared by the command-line runner and the tests:
//! bath analysis, ETH rate extraction and exact-versus-Lindblad comparison.

use std::path::Path;

use faer::c64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    build_lindblad, exact_evolve, fit_exponential_rate, gibbs_state, lindblad_evolve,
    lowering_operators, mean_field_shift, mean_force_state, sigma_x, time_averaged_trace_distance,
    LindbladModel, RateFit, ReducedTrajectory, Rho, ShiftedSystem, TimeGrid,
};
use crate::error::{Error, Result, StageExt};
use crate::eth::{
    finite_size_rate_from_curvature, normalize_spectral_function, spectral_derivative,
    spectral_function, FiniteSizeRate, RateFunction, SpectralFunctionTable, SpectralWindow,
    DEFAULT_ENERGY_WINDOW, DEFAULT_FREQ_BIN_CHAOTIC, DEFAULT_FREQ_BIN_INTEGRABLE,
    DEFAULT_MIN_WINDOW_STATES,
};
use crate::hamiltonian::{
    build_bath_hamiltonian, build_total_hamiltonian, pauli_site_operator, Axis, CouplingSpec,
    Preset, SpinChainParams, SystemParams,
};
use crate::linalg::{self, DenseMatrix};
use crate::spectra::{diagonalize_cached, spec_hash, to_eigenbasis, EigenSystem};
use crate::states::{
    energy_moments, product_state_with_energy, system_initial_state, typical_microcanonical_state,
    Basis, MicrocanonicalWindow, PureState, SystemStateKind,
};
use crate::thermo::{
    canonical_inverse_temperature, default_bin_width, density_of_states, entropy_fit, EntropyFit,
};

/// Default frequency bin for a preset.
pub fn default_freq_bin(preset: Option<Preset>) -> f64 {
    match preset {
        Some(Preset::Integrable) => DEFAULT_FREQ_BIN_INTEGRABLE,
        _ => DEFAULT_FREQ_BIN_CHAOTIC,
    }
}

/// Diagonalized bath with a probe operator in its eigenbasis and the
/// entropy fit of its spectrum.
pub struct BathAnalysis {
    pub params: SpinChainParams,
    pub eig: EigenSystem,
    pub probe: DenseMatrix,
    pub fit: EntropyFit,
}

#[derive(Serialize)]
struct HashKey<'a, T: Serialize> {
    kind: &'static str,
    spec: &'a T,
}

impl BathAnalysis {
    /// `probe` is `σ^axis` on bath site `site`.
    pub fn new(
        params: &SpinChainParams,
        site: usize,
        axis: Axis,
        cache_dir: Option<&Path>,
    ) -> Result<Self> {
        let h = build_bath_hamiltonian(params).stage("build bath")?;
        let hash = spec_hash(&HashKey {
            kind: "bath",
            spec: params,
        })?;
        let eig = diagonalize_cached(&h, &hash, cache_dir).stage("diagonalize bath")?;
        drop(h);
        let op = pauli_site_operator(params.sites, site, axis).stage("probe operator")?;
        let probe = to_eigenbasis(&op, &eig).stage("eigenbasis transform")?;
        let levels = eig.eigenvalues();
        let dos =
            density_of_states(levels, default_bin_width(levels)).stage("density of states")?;
        let fit = entropy_fit(&dos, 2).stage("entropy fit")?;
        Ok(Self {
            params: params.clone(),
            eig,
            probe,
            fit,
        })
    }

    /// Additional operator in the same eigenbasis.
    pub fn operator(&self, site: usize, axis: Axis) -> Result<DenseMatrix> {
        let op = pauli_site_operator(self.params.sites, site, axis)?;
        to_eigenbasis(&op, &self.eig)
    }

    /// Energy whose microcanonical `β` equals `beta`.
    pub fn energy_at_beta(&self, beta: f64) -> Result<f64> {
        self.fit.energy_at_beta(beta).stage("energy for β")
    }

    /// Window around `e0` widened to hold at least
    /// `min(DEFAULT_MIN_WINDOW_STATES, dim/4)` states.
    pub fn window(&self, e0: f64, width: f64, freq_bin: f64) -> SpectralWindow {
        let mut win = SpectralWindow::new(e0, width, freq_bin);
        win.min_states = DEFAULT_MIN_WINDOW_STATES.min(self.eig.dim() / 4).max(1);
        win.widened(&self.eig)
    }

    /// `⟨n|B|n⟩` and `⟨n|B²|n⟩ − ⟨n|B|n⟩²` for eigenstate `n`.
    pub fn eigenstate_moments(&self, n: usize) -> (f64, f64) {
        let mean = self.probe.get(n, n).re;
        let second: f64 = (0..self.eig.dim()).map(|m| self.probe.abs2(m, n)).sum();
        (mean, second - mean * mean)
    }
}

/// ETH inputs for the Lindblad model at one bath energy.
#[derive(Clone, Debug)]
pub struct EthRates {
    pub beta: f64,
    pub e0: f64,
    pub state_index: usize,
    pub b_expect: f64,
    pub var_b: f64,
    pub table: SpectralFunctionTable,
    pub rates: RateFunction,
}

/// Spectral function around the eigenstate nearest the energy of
/// microcanonical temperature `beta`, normalized to that eigenstate's
/// variance of the probe.
pub fn eth_rates(
    bath: &BathAnalysis,
    beta: f64,
    kappa: f64,
    window_width: f64,
    freq_bin: f64,
) -> Result<EthRates> {
    let e_target = bath.energy_at_beta(beta)?;
    let n = bath.eig.nearest_index(e_target);
    let e0 = bath.eig.eigenvalues()[n];
    let (b_expect, var_b) = bath.eigenstate_moments(n);
    let win = bath.window(e0, window_width, freq_bin);
    let raw = spectral_function(&bath.probe, &bath.eig, &win, None).stage("spectral function")?;
    let table = normalize_spectral_function(&raw, var_b, beta).stage("normalize")?;
    let rates = RateFunction::from_table(&table, kappa, beta)?;
    Ok(EthRates {
        beta,
        e0,
        state_index: n,
        b_expect,
        var_b,
        table,
        rates,
    })
}

/// How the bath is prepared at the energy of microcanonical temperature `β`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BathPrep {
    /// The eigenstate nearest that energy.
    Eigenstate,
    /// Typical state in a window of the given width around that energy.
    Typical { width: f64, seed: u64 },
    /// Uniform product state with that mean energy.
    Product,
}

/// Finite-size corrected rates on the table's frequency grid. The energy
/// derivative of `|f|²` comes from tables at `e0 ± delta_e` scaled by the
/// same normalization, the entropy curvature from the bath's fit.
pub fn finite_size_rates(
    bath: &BathAnalysis,
    eth: &EthRates,
    kappa: f64,
    delta_e: f64,
) -> Result<Vec<FiniteSizeRate>> {
    let win = eth.table.window;
    let side = |e: f64| -> Result<SpectralFunctionTable> {
        let w = bath.window(e, win.width, win.freq_bin);
        let raw = spectral_function(&bath.probe, &bath.eig, &w, None)?;
        Ok(raw.scaled(eth.table.normalization))
    };
    let upper = side(eth.e0 + delta_e).stage("upper spectral function")?;
    let lower = side(eth.e0 - delta_e).stage("lower spectral function")?;
    let d_table = spectral_derivative(&upper, &lower, delta_e)?;
    let curvature = bath.fit.beta_slope(eth.e0).stage("entropy curvature")?;
    eth.table
        .omega
        .iter()
        .map(|&w| {
            finite_size_rate_from_curvature(&eth.table, &d_table, kappa, eth.beta, curvature, w)
        })
        .collect()
}

/// Model of one exact-versus-Lindblad comparison.
#[derive(Clone, Debug, Serialize)]
pub struct DynamicsSetup {
    pub bath: SpinChainParams,
    pub system: SystemParams,
    /// A single `σ^x_0 ⊗ σ^a_j` term; its bath factor is the probe `B`.
    pub coupling: CouplingSpec,
    pub beta: f64,
    pub state: SystemStateKind,
    pub prep: BathPrep,
    pub t_max: f64,
    pub dt: f64,
    pub window: f64,
    pub freq_bin: f64,
}

impl DynamicsSetup {
    pub fn kappa(&self) -> f64 {
        self.coupling.kappa
    }

    /// Bath site and axis of the single coupling term.
    pub fn probe(&self) -> Result<(usize, Axis)> {
        self.coupling.validate(self.bath.sites)?;
        match self.coupling.terms.as_slice() {
            [t] if t.system == Axis::X => Ok((t.site, t.axis)),
            _ => Err(Error::Config(
                "dynamics needs exactly one coupling term with system axis x".into(),
            )),
        }
    }

    pub fn new(bath: SpinChainParams, beta: f64, state: SystemStateKind, t_max: f64) -> Self {
        Self {
            bath,
            system: SystemParams { omega0: 1.525 },
            coupling: CouplingSpec::xx(0.15),
            beta,
            state,
            prep: BathPrep::Eigenstate,
            t_max,
            dt: 0.25,
            window: DEFAULT_ENERGY_WINDOW,
            freq_bin: DEFAULT_FREQ_BIN_CHAOTIC,
        }
    }
}

/// Equilibrium references at the canonical temperature of the initial
/// total energy.
#[derive(Clone, Debug)]
pub struct EquilibriumComparison {
    pub initial_energy: f64,
    pub beta_total: f64,
    pub mean_force: Rho,
    pub gibbs: Rho,
}

pub struct DynamicsResult {
    pub eth: EthRates,
    /// `⟨ψ_B|B|ψ_B⟩` of the prepared bath state.
    pub bath_expect: f64,
    pub shifted: ShiftedSystem,
    pub model: LindbladModel,
    pub exact: ReducedTrajectory,
    pub lindblad: ReducedTrajectory,
    pub avg_trace_distance: f64,
    pub gamma_pop: f64,
    pub equilibrium: EquilibriumComparison,
}

impl DynamicsResult {
    /// Exponential rate of the populations (polarized start) or the
    /// coherence (superposition start) toward the Lindblad steady state.
    pub fn fitted_rates(&self, state: SystemStateKind) -> Result<(RateFit, RateFit)> {
        let steady = self.model.stationary_state()?;
        let (exact, lind, target) = match state {
            SystemStateKind::Polarized => (
                self.exact.populations(),
                self.lindblad.populations(),
                steady[(0, 0)].re,
            ),
            SystemStateKind::Superposition => (
                self.exact.coherences(),
                self.lindblad.coherences(),
                steady[(0, 1)].norm(),
            ),
        };
        Ok((
            fit_exponential_rate(&self.exact.times, &exact, target)?,
            fit_exponential_rate(&self.lindblad.times, &lind, target)?,
        ))
    }
}

/// Total Hamiltonian eigensystem, cached by model parameters.
pub fn total_eigensystem(
    system: &SystemParams,
    bath: &SpinChainParams,
    coupling: &CouplingSpec,
    cache_dir: Option<&Path>,
) -> Result<EigenSystem> {
    let h = build_total_hamiltonian(system, bath, coupling).stage("build total")?;
    let hash = spec_hash(&HashKey {
        kind: "total",
        spec: &(system, bath, coupling),
    })?;
    diagonalize_cached(&h, &hash, cache_dir).stage("diagonalize total")
}

/// Bath state of the requested preparation in the computational basis.
fn prepare_bath(prep: BathPrep, bath: &BathAnalysis, eth: &EthRates) -> Result<Vec<c64>> {
    match prep {
        BathPrep::Eigenstate => Ok(bath.eig.vector(eth.state_index)),
        BathPrep::Typical { width, seed } => {
            let win = MicrocanonicalWindow::new(&bath.eig, eth.e0, width)?;
            let psi = typical_microcanonical_state(&bath.eig, &win, seed, false)?;
            bath.eig.expand(&psi.amplitudes)
        }
        BathPrep::Product => {
            let tol = 1e-10 * bath.eig.bandwidth();
            Ok(product_state_with_energy(&bath.params, eth.e0, tol)?
                .state
                .amplitudes)
        }
    }
}

/// Runs exact and Lindblad dynamics from `|s⟩ ⊗ |ψ_B⟩`, with the bath
/// prepared at microcanonical temperature `beta`.
pub fn run_dynamics(setup: &DynamicsSetup, cache_dir: Option<&Path>) -> Result<DynamicsResult> {
    let (site, axis) = setup.probe()?;
    let bath = BathAnalysis::new(&setup.bath, site, axis, cache_dir)?;
    let eth = eth_rates(
        &bath,
        setup.beta,
        setup.kappa(),
        setup.window,
        setup.freq_bin,
    )?;
    let bath_amps = prepare_bath(setup.prep, &bath, &eth).stage("prepare bath")?;
    let coeffs = bath.eig.project(&bath_amps)?;
    let bath_expect = linalg::dot(&coeffs, &bath.probe.apply(&coeffs)).re;
    drop(bath);
    let total = total_eigensystem(&setup.system, &setup.bath, &setup.coupling, cache_dir)?;
    let sys_state = system_initial_state(setup.state);
    let bath_state = PureState {
        amplitudes: bath_amps,
        basis: Basis::Computational,
    };
    let psi0 = PureState::tensor(&sys_state, &bath_state)?;
    let grid = TimeGrid::new(setup.t_max, setup.dt)?;
    let exact = exact_evolve(&total, &psi0.amplitudes, &grid).stage("exact evolution")?;
    let equilibrium = equilibrium_comparison(&total, &psi0.amplitudes, &setup.system)?;
    drop(total);
    let shifted = mean_field_shift(&setup.system, setup.kappa(), bath_expect);
    let lowering = lowering_operators(&shifted.hamiltonian, &sigma_x())?;
    let model = build_lindblad(&shifted, &lowering, &eth.rates, false).stage("build lindblad")?;
    let rho0 = sys_state.density_matrix_2x2()?;
    let lindblad = lindblad_evolve(&model, &rho0, &grid).stage("lindblad evolution")?;
    let avg_trace_distance = time_averaged_trace_distance(&exact, &lindblad, setup.t_max)?;
    let gamma_pop = model.population_rate();
    Ok(DynamicsResult {
        eth,
        bath_expect,
        shifted,
        model,
        exact,
        lindblad,
        avg_trace_distance,
        gamma_pop,
        equilibrium,
    })
}

/// Mean-force and bare Gibbs states at the canonical temperature whose
/// total energy matches `psi0`.
pub fn equilibrium_comparison(
    total: &EigenSystem,
    psi0: &[c64],
    system: &SystemParams,
) -> Result<EquilibriumComparison> {
    let coeffs = total.project(psi0)?;
    let (initial_energy, _) = energy_moments(total, &coeffs);
    let beta_total = canonical_inverse_temperature(total.eigenvalues(), initial_energy)
        .stage("canonical temperature")?;
    let mean_force = mean_force_state(total, beta_total).stage("mean-force state")?;
    let bare = mean_field_shift(system, 0.0, 0.0);
    Ok(EquilibriumComparison {
        initial_energy,
        beta_total,
        mean_force,
        gibbs: gibbs_state(&bare.hamiltonian, beta_total),
    })
}

/// `|s⟩ ⊗ ψ_B` for a bath state given in energy coefficients.
pub fn product_with_bath(
    kind: SystemStateKind,
    bath_eig: &EigenSystem,
    bath_coeffs: &[c64],
) -> Result<PureState> {
    let bath_state = PureState {
        amplitudes: bath_eig.expand(bath_coeffs)?,
        basis: Basis::Computational,
    };
    PureState::tensor(&system_initial_state(kind), &bath_state)
}
