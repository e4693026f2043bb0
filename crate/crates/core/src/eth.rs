//! Eigenstate-thermalization data from an eigendecomposition: diagonal
//! profiles, binned spectral functions, transition rates and multi-operator
//! rate matrices.

use std::f64::consts::PI;

use faer::c64;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{interpolate, trapezoid, DenseMatrix};
use crate::spectra::EigenSystem;

/// Minimum number of states in the central slice used for the diagonal
/// fluctuation measure.
pub const MIN_CENTRAL_STATES: usize = 20;
/// Default lower bound on the number of eigenstates inside an energy window.
pub const DEFAULT_MIN_WINDOW_STATES: usize = 100;
pub const DEFAULT_ENERGY_WINDOW: f64 = 0.3;
pub const DEFAULT_FREQ_BIN_CHAOTIC: f64 = 0.05;
pub const DEFAULT_FREQ_BIN_INTEGRABLE: f64 = 0.4;

#[derive(Clone, Debug, Serialize)]
pub struct DiagonalProfile {
    pub energies: Vec<f64>,
    pub diagonals: Vec<f64>,
    /// Mean `|B_{n+1,n+1} − B_{nn}|` over the central states.
    pub fluctuation: f64,
    pub central_states: usize,
}

fn check_aligned(op: &DenseMatrix, eig: &EigenSystem) -> Result<()> {
    if op.dim() != eig.dim() {
        return Err(Error::DimensionMismatch {
            expected: eig.dim(),
            found: op.dim(),
        });
    }
    Ok(())
}

/// Diagonal elements against energy, with the mean neighbour difference over
/// the central 10% of states (at least [`MIN_CENTRAL_STATES`]).
pub fn diagonal_profile(op_eig: &DenseMatrix, eig: &EigenSystem) -> Result<DiagonalProfile> {
    check_aligned(op_eig, eig)?;
    let n = eig.dim();
    if n < MIN_CENTRAL_STATES {
        return Err(Error::invalid(format!(
            "diagonal profile needs at least {MIN_CENTRAL_STATES} states, found {n}"
        )));
    }
    let diagonals = op_eig.diagonal();
    let central = ((0.1 * n as f64).ceil() as usize).max(MIN_CENTRAL_STATES);
    let start = (n - central) / 2;
    let slice = &diagonals[start..start + central];
    let fluctuation =
        slice.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (central - 1) as f64;
    Ok(DiagonalProfile {
        energies: eig.eigenvalues().to_vec(),
        diagonals,
        fluctuation,
        central_states: central,
    })
}

/// Energy window `[e0 − width/2, e0 + width/2]` and frequency binning.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SpectralWindow {
    pub e0: f64,
    pub width: f64,
    pub freq_bin: f64,
    pub min_states: usize,
}

impl SpectralWindow {
    pub fn new(e0: f64, width: f64, freq_bin: f64) -> Self {
        Self {
            e0,
            width,
            freq_bin,
            min_states: DEFAULT_MIN_WINDOW_STATES,
        }
    }

    pub fn lo(&self) -> f64 {
        self.e0 - 0.5 * self.width
    }

    pub fn hi(&self) -> f64 {
        self.e0 + 0.5 * self.width
    }

    /// Indices `n` with `E_n` inside the window.
    pub fn members(&self, eig: &EigenSystem) -> std::ops::Range<usize> {
        let e = eig.eigenvalues();
        let a = e.partition_point(|&v| v < self.lo());
        let b = e.partition_point(|&v| v <= self.hi());
        a..b.max(a)
    }

    /// Widens the window symmetrically until it holds at least
    /// `min_states` eigenstates (or the whole spectrum).
    pub fn widened(mut self, eig: &EigenSystem) -> Self {
        let target = self.min_states.min(eig.dim());
        while self.members(eig).len() < target {
            self.width *= 1.05;
        }
        self
    }

    fn validate(&self, eig: &EigenSystem) -> Result<usize> {
        if !(self.width > 0.0 && self.freq_bin > 0.0) {
            return Err(Error::invalid(
                "window width and frequency bin must be positive",
            ));
        }
        let members = self.members(eig).len();
        if members == 0 {
            return Err(Error::invalid(format!(
                "energy window around {} contains no eigenstates",
                self.e0
            )));
        }
        if members < self.min_states {
            return Err(Error::invalid(format!(
                "energy window around {} holds {members} eigenstates, fewer than {}",
                self.e0, self.min_states
            )));
        }
        Ok(members)
    }

    /// States per unit energy inside the window.
    pub fn density(&self, eig: &EigenSystem) -> f64 {
        self.members(eig).len() as f64 / self.width
    }
}

/// Symmetric frequency grid `k δω`, `k = −K..=K`.
fn frequency_grid(freq_bin: f64, max_abs: f64) -> Vec<f64> {
    let k = (max_abs / freq_bin).round() as i64 + 1;
    (-k..=k).map(|i| i as f64 * freq_bin).collect()
}

fn bin_of(omega: f64, freq_bin: f64, half: usize) -> usize {
    ((omega / freq_bin).round() as i64 + half as i64) as usize
}

/// Visits every ordered pair `(n, m)`, `n ≠ m`, whose mean energy lies in
/// the window, passing `(n, m, ω_nm = E_n − E_m)`.
fn for_each_pair(eig: &EigenSystem, win: &SpectralWindow, mut f: impl FnMut(usize, usize, f64)) {
    let e = eig.eigenvalues();
    let (lo, hi) = (2.0 * win.lo(), 2.0 * win.hi());
    for n in 0..e.len() {
        let a = e.partition_point(|&v| v + e[n] < lo);
        let b = e.partition_point(|&v| v + e[n] <= hi);
        for m in a..b {
            if m != n {
                f(n, m, e[n] - e[m]);
            }
        }
    }
}

/// Binned estimate of `|f(E₀, ω)|²` around one energy.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralFunctionTable {
    pub window: SpectralWindow,
    pub omega: Vec<f64>,
    /// Symmetrized values `(raw(ω) + raw(−ω)) / 2`.
    pub values: Vec<f64>,
    pub raw: Vec<f64>,
    pub counts: Vec<usize>,
    /// States per unit energy used in the estimator.
    pub density: f64,
    /// Product of all normalization factors applied so far.
    pub normalization: f64,
    pub beta: Option<f64>,
}

impl SpectralFunctionTable {
    pub fn freq_bin(&self) -> f64 {
        self.window.freq_bin
    }

    pub fn empty_bins(&self) -> Vec<usize> {
        (0..self.counts.len())
            .filter(|&k| self.counts[k] == 0)
            .collect()
    }

    pub fn is_normalized(&self) -> bool {
        self.beta.is_some()
    }

    /// Largest `|raw(ω) − raw(−ω)|` relative to the largest raw value.
    pub fn raw_asymmetry(&self) -> f64 {
        let n = self.raw.len();
        let peak = self.raw.iter().cloned().fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        (0..n)
            .map(|k| (self.raw[k] - self.raw[n - 1 - k]).abs())
            .fold(0.0, f64::max)
            / peak
    }

    /// Linear interpolation of the symmetrized values; no extrapolation.
    pub fn value_at(&self, omega: f64) -> Result<f64> {
        interpolate(&self.omega, &self.values, omega).ok_or(Error::OutOfRange {
            value: omega,
            lo: self.omega[0],
            hi: self.omega[self.omega.len() - 1],
        })
    }

    /// Half width at half maximum of the symmetrized values on `ω ≥ 0`.
    pub fn half_width(&self) -> f64 {
        let mid = self.omega.len() / 2;
        let peak = self.values[mid..].iter().cloned().fold(0.0, f64::max);
        for k in mid..self.values.len() {
            if self.omega[k] > 0.0 && self.values[k] <= 0.5 * peak {
                return self.omega[k];
            }
        }
        self.omega[self.omega.len() - 1]
    }

    /// Copy with all values multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out.raw.iter_mut().for_each(|v| *v *= factor);
        out.normalization *= factor;
        out
    }
}

fn symmetrize(raw: &[f64], counts: &[usize]) -> Vec<f64> {
    let n = raw.len();
    (0..n)
        .map(|k| {
            let j = n - 1 - k;
            match (counts[k] > 0, counts[j] > 0) {
                (true, true) => 0.5 * (raw[k] + raw[j]),
                (true, false) => raw[k],
                (false, true) => raw[j],
                (false, false) => 0.0,
            }
        })
        .collect()
}

/// Bins `|B_nm|²` over pairs with mean energy in the window by `ω_nm`. Each
/// bin holds `density × mean |B_nm|²`, with `density` the number of window
/// states per unit energy unless given explicitly.
pub fn spectral_function(
    op_eig: &DenseMatrix,
    eig: &EigenSystem,
    win: &SpectralWindow,
    density: Option<f64>,
) -> Result<SpectralFunctionTable> {
    check_aligned(op_eig, eig)?;
    win.validate(eig)?;
    let density = density.unwrap_or_else(|| win.density(eig));
    let omega = frequency_grid(win.freq_bin, eig.bandwidth());
    let half = omega.len() / 2;
    let mut sums = vec![0.0; omega.len()];
    let mut counts = vec![0usize; omega.len()];
    for_each_pair(eig, win, |n, m, w| {
        let k = bin_of(w, win.freq_bin, half);
        sums[k] += op_eig.abs2(m, n);
        counts[k] += 1;
    });
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::invalid("no eigenstate pairs fall inside the window"));
    }
    let raw: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { density * s / c as f64 } else { 0.0 })
        .collect();
    let values = symmetrize(&raw, &counts);
    Ok(SpectralFunctionTable {
        window: *win,
        omega,
        values,
        raw,
        counts,
        density,
        normalization: 1.0,
        beta: None,
    })
}

/// Rescales the table so that `∫ dω e^{βω/2} |f|² = var_b` (trapezoid over
/// bin centres).
pub fn normalize_spectral_function(
    table: &SpectralFunctionTable,
    var_b: f64,
    beta: f64,
) -> Result<SpectralFunctionTable> {
    if !(var_b >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid("variance must be nonnegative and β finite"));
    }
    let weighted: Vec<f64> = table
        .omega
        .iter()
        .zip(&table.values)
        .map(|(w, v)| (0.5 * beta * w).exp() * v)
        .collect();
    let integral = trapezoid(&table.omega, &weighted);
    let factor = if var_b == 0.0 {
        0.0
    } else if integral > 0.0 {
        var_b / integral
    } else {
        return Err(Error::numerical(
            "spectral function integrates to zero but the variance does not vanish",
        ));
    };
    let mut out = table.scaled(factor);
    out.beta = Some(beta);
    Ok(out)
}

/// `2π κ² e^{βω/2} |f(ω)|²`.
pub fn transition_rate(
    table: &SpectralFunctionTable,
    kappa: f64,
    beta: f64,
    omega: f64,
) -> Result<f64> {
    Ok(2.0 * PI * kappa * kappa * (0.5 * beta * omega).exp() * table.value_at(omega)?)
}

/// Energy derivative of `|f|²` by central difference of two tables built on
/// the same frequency grid at `E₀ ± δE`.
pub fn spectral_derivative(
    upper: &SpectralFunctionTable,
    lower: &SpectralFunctionTable,
    delta_e: f64,
) -> Result<SpectralFunctionTable> {
    if upper.omega.len() != lower.omega.len() || upper.freq_bin() != lower.freq_bin() {
        return Err(Error::DimensionMismatch {
            expected: upper.omega.len(),
            found: lower.omega.len(),
        });
    }
    if !(delta_e > 0.0) {
        return Err(Error::invalid("energy offset must be positive"));
    }
    let mut out = upper.clone();
    for k in 0..out.values.len() {
        out.values[k] = (upper.values[k] - lower.values[k]) / (2.0 * delta_e);
        out.raw[k] = (upper.raw[k] - lower.raw[k]) / (2.0 * delta_e);
        out.counts[k] = upper.counts[k].min(lower.counts[k]);
    }
    out.window.e0 = 0.5 * (upper.window.e0 + lower.window.e0);
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FiniteSizeRate {
    pub rate: f64,
    /// True when the bracket `|f|² + (ω/2)∂_E|f|²` was negative and clipped.
    pub clipped: bool,
}

/// `2πκ² e^{βω/2 + (3ω²/8) S''} [|f|² + (ω/2) ∂_E|f|²]`, with `S''` the
/// entropy curvature.
pub fn finite_size_rate_from_curvature(
    table: &SpectralFunctionTable,
    d_table: &SpectralFunctionTable,
    kappa: f64,
    beta: f64,
    entropy_curvature: f64,
    omega: f64,
) -> Result<FiniteSizeRate> {
    let f2 = table.value_at(omega)?;
    let df2 = d_table.value_at(omega)?;
    let bracket = f2 + 0.5 * omega * df2;
    let exponent = 0.5 * beta * omega + 0.375 * omega * omega * entropy_curvature;
    let clipped = bracket < 0.0;
    Ok(FiniteSizeRate {
        rate: 2.0 * PI * kappa * kappa * exponent.exp() * bracket.max(0.0),
        clipped,
    })
}

/// `2πκ² e^{βω/2 − 3β²ω²/(8C)} [|f|² + (ω/2) ∂_E|f|²]`.
pub fn finite_size_transition_rate(
    table: &SpectralFunctionTable,
    d_table: &SpectralFunctionTable,
    kappa: f64,
    beta: f64,
    capacity: f64,
    omega: f64,
) -> Result<FiniteSizeRate> {
    if !(capacity > 0.0) {
        return Err(Error::invalid("heat capacity must be positive"));
    }
    let curvature = if capacity.is_infinite() {
        0.0
    } else {
        -beta * beta / capacity
    };
    finite_size_rate_from_curvature(table, d_table, kappa, beta, curvature, omega)
}

/// `J(ω) = 2π sinh(βω/2) |f(ω)|²`.
pub fn caldeira_leggett_density(
    table: &SpectralFunctionTable,
    beta: f64,
    omega: f64,
) -> Result<f64> {
    Ok(2.0 * PI * (0.5 * beta * omega).sinh() * table.value_at(omega)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateKind {
    LeadingOrder,
    FiniteSize,
    Tabulated,
}

/// Transition rates on a frequency grid, interpolated linearly.
#[derive(Clone, Debug, Serialize)]
pub struct RateFunction {
    pub omega: Vec<f64>,
    pub gamma: Vec<f64>,
    pub kappa: f64,
    pub beta: f64,
    pub kind: RateKind,
}

impl RateFunction {
    /// Leading-order rates on the table's grid.
    pub fn from_table(table: &SpectralFunctionTable, kappa: f64, beta: f64) -> Result<Self> {
        let gamma = table
            .omega
            .iter()
            .map(|&w| transition_rate(table, kappa, beta, w))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            omega: table.omega.clone(),
            gamma,
            kappa,
            beta,
            kind: RateKind::LeadingOrder,
        })
    }

    /// Rates given directly at a few frequencies.
    pub fn tabulated(points: &[(f64, f64)], kappa: f64, beta: f64) -> Result<Self> {
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.is_empty() || pts.iter().any(|p| !(p.1 >= 0.0)) {
            return Err(Error::invalid(
                "tabulated rates must be nonempty and nonnegative",
            ));
        }
        Ok(Self {
            omega: pts.iter().map(|p| p.0).collect(),
            gamma: pts.iter().map(|p| p.1).collect(),
            kappa,
            beta,
            kind: RateKind::Tabulated,
        })
    }

    pub fn rate(&self, omega: f64) -> Result<f64> {
        if let Some(k) = self.omega.iter().position(|&w| w == omega) {
            return Ok(self.gamma[k]);
        }
        interpolate(&self.omega, &self.gamma, omega).ok_or(Error::OutOfRange {
            value: omega,
            lo: self.omega[0],
            hi: self.omega[self.omega.len() - 1],
        })
    }
}

/// Bins of `Σ_m |B_nm|²` over `ω = E_m − E_n`, averaged over anchor states
/// `n` inside the window and divided by the bin width. Unlike
/// [`spectral_function`] this estimator is not symmetric in `ω`; its ratio
/// `G(ω)/G(−ω)` approximates `e^{βω}`.
#[derive(Clone, Debug, Serialize)]
pub struct AnchoredSpectrum {
    pub omega: Vec<f64>,
    pub values: Vec<f64>,
    pub counts: Vec<usize>,
    pub anchors: usize,
}

impl AnchoredSpectrum {
    pub fn value_at(&self, omega: f64) -> Result<f64> {
        interpolate(&self.omega, &self.values, omega).ok_or(Error::OutOfRange {
            value: omega,
            lo: self.omega[0],
            hi: self.omega[self.omega.len() - 1],
        })
    }

    /// `|log(G(ω)/G(−ω)) − βω|`.
    pub fn detailed_balance_residual(&self, beta: f64, omega: f64) -> Result<f64> {
        let up = self.value_at(omega)?;
        let down = self.value_at(-omega)?;
        if !(up > 0.0 && down > 0.0) {
            return Err(Error::numerical("empty bins at the requested frequency"));
        }
        Ok(((up / down).ln() - beta * omega).abs())
    }
}

pub fn anchored_spectrum(
    op_eig: &DenseMatrix,
    eig: &EigenSystem,
    win: &SpectralWindow,
) -> Result<AnchoredSpectrum> {
    check_aligned(op_eig, eig)?;
    let anchors = win.validate(eig)?;
    let e = eig.eigenvalues();
    let omega = frequency_grid(win.freq_bin, eig.bandwidth());
    let half = omega.len() / 2;
    let mut values = vec![0.0; omega.len()];
    let mut counts = vec![0usize; omega.len()];
    for n in win.members(eig) {
        for m in 0..e.len() {
            if m != n {
                let k = bin_of(e[m] - e[n], win.freq_bin, half);
                values[k] += op_eig.abs2(m, n);
                counts[k] += 1;
            }
        }
    }
    let scale = 1.0 / (anchors as f64 * win.freq_bin);
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(AnchoredSpectrum {
        omega,
        values,
        counts,
        anchors,
    })
}

/// Cross-correlation rate matrix `γ_{μν}(ω)` of several bath operators in
/// one frequency bin.
#[derive(Clone, Debug, Serialize)]
pub struct RateMatrix {
    pub omega: f64,
    pub count: usize,
    /// `F^{μν}` as row-major `(re, im)` pairs.
    #[serde(skip)]
    pub f_matrix: DMatrix<c64>,
    #[serde(skip)]
    pub gamma: DMatrix<c64>,
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub unitary: DMatrix<c64>,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Eigenvalues clipped at zero for use as Lindblad rates.
    pub clipped_eigenvalues: Vec<f64>,
    pub clip_magnitude: f64,
    /// `max |γ − γ†|` before Hermitization.
    pub hermiticity_residual: f64,
    pub flagged_non_hermitian: bool,
}

/// `γ_{μν}(ω) = 2πκ² e^{βω/2} F^{μν}(ω)` per frequency bin, with
/// `F^{μν} = density × mean(B^μ_nm B^ν_mn)` over the same pairs as
/// [`spectral_function`]. Bins without pairs are skipped.
pub fn rate_matrix_multi(
    op_eigs: &[&DenseMatrix],
    eig: &EigenSystem,
    win: &SpectralWindow,
    kappa: f64,
    beta: f64,
    density: Option<f64>,
) -> Result<Vec<RateMatrix>> {
    if op_eigs.is_empty() {
        return Err(Error::invalid("rate matrix needs at least one operator"));
    }
    for op in op_eigs {
        check_aligned(op, eig)?;
    }
    win.validate(eig)?;
    let density = density.unwrap_or_else(|| win.density(eig));
    let k_ops = op_eigs.len();
    let omega = frequency_grid(win.freq_bin, eig.bandwidth());
    let half = omega.len() / 2;
    let zero = c64::new(0.0, 0.0);
    let mut sums = vec![DMatrix::from_element(k_ops, k_ops, zero); omega.len()];
    let mut counts = vec![0usize; omega.len()];
    let mut elems = vec![zero; k_ops];
    let mut conj = vec![zero; k_ops];
    for_each_pair(eig, win, |n, m, w| {
        let k = bin_of(w, win.freq_bin, half);
        for (mu, op) in op_eigs.iter().enumerate() {
            // B_mn and B_nm = conj(B_mn).
            elems[mu] = op.get(m, n);
            conj[mu] = elems[mu].conj();
        }
        let s = &mut sums[k];
        for nu in 0..k_ops {
            for mu in 0..k_ops {
                s[(mu, nu)] += conj[mu] * elems[nu];
            }
        }
        counts[k] += 1;
    });
    let mut out = Vec::new();
    for (k, s) in sums.into_iter().enumerate() {
        if counts[k] == 0 {
            continue;
        }
        let w = omega[k];
        let f_matrix = s * c64::new(density / counts[k] as f64, 0.0);
        let prefactor = 2.0 * PI * kappa * kappa * (0.5 * beta * w).exp();
        let raw = &f_matrix * c64::new(prefactor, 0.0);
        let adj = raw.adjoint();
        let hermiticity_residual = (&raw - &adj).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let gamma = (&raw + &adj) * c64::new(0.5, 0.0);
        let scale = gamma.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let evd = SymmetricEigen::new(gamma.clone());
        let mut order: Vec<usize> = (0..k_ops).collect();
        order.sort_by(|&a, &b| evd.eigenvalues[a].total_cmp(&evd.eigenvalues[b]));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| evd.eigenvalues[i]).collect();
        let unitary = DMatrix::from_fn(k_ops, k_ops, |r, c| evd.eigenvectors[(r, order[c])]);
        let min_eigenvalue = eigenvalues[0];
        let max_eigenvalue = eigenvalues[k_ops - 1];
        let clipped_eigenvalues: Vec<f64> = eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        let clip_magnitude = eigenvalues
            .iter()
            .map(|&v| (-v).max(0.0))
            .fold(0.0, f64::max);
        out.push(RateMatrix {
            omega: w,
            count: counts[k],
            f_matrix,
            gamma,
            eigenvalues,
            unitary,
            min_eigenvalue,
            max_eigenvalue,
            clipped_eigenvalues,
            clip_magnitude,
            hermiticity_residual,
            flagged_non_hermitian: hermiticity_residual > 1e-6 * scale.max(f64::MIN_POSITIVE),
        });
    }
    if out.is_empty() {
        return Err(Error::invalid("no eigenstate pairs fall inside the window"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::Mat;

    fn synthetic(levels: &[f64], b: &[&[f64]]) -> (EigenSystem, DenseMatrix) {
        let n = levels.len();
        let eig = EigenSystem::from_parts(levels.to_vec(), DenseMatrix::Real(Mat::identity(n, n)))
            .unwrap();
        let op = DenseMatrix::Real(Mat::from_fn(n, n, |i, j| b[i][j]));
        (eig, op)
    }

    fn wide(e0: f64, freq_bin: f64) -> SpectralWindow {
        SpectralWindow {
            e0,
            width: 100.0,
            freq_bin,
            min_states: 1,
        }
    }

    #[test]
    fn identity_profile_is_flat() {
        let n = 40;
        let eig = EigenSystem::from_parts(
            (0..n).map(|k| k as f64).collect(),
            DenseMatrix::Real(Mat::identity(n, n)),
        )
        .unwrap();
        let p = diagonal_profile(&DenseMatrix::Real(Mat::identity(n, n)), &eig).unwrap();
        assert!(p.diagonals.iter().all(|&d| d == 1.0));
        assert_eq!(p.fluctuation, 0.0);
        assert_eq!(p.central_states, 20);
    }

    #[test]
    fn identity_has_zero_spectral_function() {
        let zeros: [&[f64]; 4] = [&[0.0; 4]; 4];
        let (eig, _) = synthetic(&[0.0, 1.0, 2.5, 4.0], &zeros);
        let id = DenseMatrix::Real(Mat::identity(4, 4));
        let t = spectral_function(&id, &eig, &wide(2.0, 0.5), Some(1.0)).unwrap();
        assert!(t.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn four_level_bins_match_hand_means() {
        // Gaps: 1, 1.5, 1.5 → |ω| ∈ {1, 1.5, 2.5, 3, 4}; ω = 1.5 has two pairs.
        let levels = [0.0, 1.0, 2.5, 4.0];
        let b: [&[f64]; 4] = [
            &[0.0, 0.3, 0.5, 0.7],
            &[0.3, 0.0, 0.2, 0.1],
            &[0.5, 0.2, 0.0, 0.4],
            &[0.7, 0.1, 0.4, 0.0],
        ];
        let (eig, op) = synthetic(&levels, &b);
        let t = spectral_function(&op, &eig, &wide(2.0, 0.5), Some(1.0)).unwrap();
        let expect = [
            (1.0, 0.09, 2),
            (1.5, (0.04 + 0.16) / 2.0, 4),
            (2.5, 0.25, 2),
            (3.0, 0.01, 2),
            (4.0, 0.49, 2),
        ];
        let total: usize = t.counts.iter().sum();
        assert_eq!(total, 12);
        for (w, v, c) in expect {
            for s in [w, -w] {
                let k = t.omega.iter().position(|&x| (x - s).abs() < 1e-12).unwrap();
                assert!((t.values[k] - v).abs() < 1e-15, "ω={s}");
                assert_eq!(t.counts[k] * 2, c);
            }
        }
    }

    #[test]
    fn normalization_of_constant_table() {
        let (eig, op) = synthetic(&[0.0, 1.0], &[&[0.0, 1.0], &[1.0, 0.0]]);
        let mut t = spectral_function(&op, &eig, &wide(0.5, 1.0), Some(1.0)).unwrap();
        t.omega = vec![-1.0, 0.0, 1.0];
        t.values = vec![5.0, 5.0, 5.0];
        t.raw = t.values.clone();
        t.counts = vec![1, 1, 1];
        let n = normalize_spectral_function(&t, 2.0, 0.0).unwrap();
        assert!(n.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let again = normalize_spectral_function(&n, 2.0, 0.0).unwrap();
        assert_eq!(again.values, n.values);
        let zero = normalize_spectral_function(&t, 0.0, 0.0).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rate_arithmetic() {
        let (eig, op) = synthetic(&[0.0, 1.0], &[&[0.0, 1.0], &[1.0, 0.0]]);
        let mut t = spectral_function(&op, &eig, &wide(0.5, 1.0), Some(1.0)).unwrap();
        t.omega = vec![-2.0, 0.0, 2.0];
        t.values = vec![1.0, 1.0, 1.0];
        let g = transition_rate(&t, 0.15, 0.1, 1.525).unwrap();
        assert!((g - 2.0 * PI * 0.0225 * 0.07625f64.exp()).abs() < 1e-14);
        assert!((g - 0.15261).abs() < 5e-5);
        let j = caldeira_leggett_density(&t, 0.1, 1.525).unwrap();
        assert!((j - 0.47957).abs() < 5e-5);
        assert_eq!(caldeira_leggett_density(&t, 0.0, 1.0).unwrap(), 0.0);
        assert!(transition_rate(&t, 0.15, 0.1, 2.5).is_err());
    }

    #[test]
    fn finite_size_limits() {
        let (eig, op) = synthetic(&[0.0, 1.0], &[&[0.0, 1.0], &[1.0, 0.0]]);
        let mut t = spectral_function(&op, &eig, &wide(0.5, 1.0), Some(1.0)).unwrap();
        t.omega = vec![-2.0, -1.0, 0.0, 1.0, 2.0];
        t.values = t.omega.iter().map(|w: &f64| (-w.abs()).exp()).collect();
        let mut d = t.clone();
        d.values = t.values.iter().map(|v| 0.1 * v).collect();
        let direct = 2.0
            * PI
            * 0.0225
            * (0.05 - 3.0 * 0.01 / 40.0f64).exp()
            * ((-1.0f64).exp() + 0.5 * 0.1 * (-1.0f64).exp());
        let fs = finite_size_transition_rate(&t, &d, 0.15, 0.1, 5.0, 1.0).unwrap();
        assert!((fs.rate - direct).abs() < 1e-14);
        let mut flat = d.clone();
        flat.values.iter_mut().for_each(|v| *v = 0.0);
        let lim = finite_size_transition_rate(&t, &flat, 0.15, 0.1, f64::INFINITY, 1.0).unwrap();
        assert!((lim.rate - transition_rate(&t, 0.15, 0.1, 1.0).unwrap()).abs() < 1e-15);
        let mut neg = d.clone();
        neg.values.iter_mut().for_each(|v| *v = -100.0);
        assert!(
            finite_size_transition_rate(&t, &neg, 0.15, 0.1, 5.0, 1.0)
                .unwrap()
                .clipped
        );
    }

    #[test]
    fn synthetic_rate_matrix_eigenvalues() {
        // ω = 1 bin holds the pairs (1,0) and (3,2); the others are singletons.
        let levels = [0.0, 1.0, 3.0, 4.0];
        let u = [0.3, -0.4];
        let v = [0.5, 0.2];
        let mk = |mu: usize| {
            let mut m = [[0.0; 4]; 4];
            for (a, b, x) in [
                (1, 0, u[mu]),
                (3, 2, v[mu]),
                (2, 0, 0.1),
                (3, 1, 0.1),
                (2, 1, 0.2),
                (3, 0, 0.3),
            ] {
                m[a][b] = x;
                m[b][a] = x;
            }
            DenseMatrix::Real(Mat::from_fn(4, 4, |i, j| m[i][j]))
        };
        let (b0, b1) = (mk(0), mk(1));
        let eig = EigenSystem::from_parts(levels.to_vec(), DenseMatrix::Real(Mat::identity(4, 4)))
            .unwrap();
        let (kappa, beta, density) = (0.2, 0.3, 2.0);
        let mats = rate_matrix_multi(
            &[&b0, &b1],
            &eig,
            &wide(2.0, 0.25),
            kappa,
            beta,
            Some(density),
        )
        .unwrap();
        let r = mats.iter().find(|r| (r.omega - 1.0).abs() < 1e-12).unwrap();
        let pre = 2.0 * PI * kappa * kappa * (0.5 * beta).exp() * density / 2.0;
        let f = [
            [u[0] * u[0] + v[0] * v[0], u[0] * u[1] + v[0] * v[1]],
            [u[1] * u[0] + v[1] * v[0], u[1] * u[1] + v[1] * v[1]],
        ];
        let (tr, det) = (f[0][0] + f[1][1], f[0][0] * f[1][1] - f[0][1] * f[1][0]);
        let disc = (tr * tr / 4.0 - det).sqrt();
        let expect = [pre * (tr / 2.0 - disc), pre * (tr / 2.0 + disc)];
        for (a, b) in r.eigenvalues.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(!r.flagged_non_hermitian);
    }

    #[test]
    fn identical_operators_give_rank_one() {
        let levels = [0.0, 1.0, 3.0, 4.0];
        let b: [&[f64]; 4] = [
            &[0.0, 0.3, 0.5, 0.7],
            &[0.3, 0.0, 0.2, 0.1],
            &[0.5, 0.2, 0.0, 0.4],
            &[0.7, 0.1, 0.4, 0.0],
        ];
        let (eig, op) = synthetic(&levels, &b);
        let win = wide(2.0, 0.25);
        let t = spectral_function(&op, &eig, &win, Some(1.0)).unwrap();
        let single = rate_matrix_multi(&[&op], &eig, &win, 0.15, 0.1, Some(1.0)).unwrap();
        let pair = rate_matrix_multi(&[&op, &op], &eig, &win, 0.15, 0.1, Some(1.0)).unwrap();
        for (s, p) in single.iter().zip(&pair) {
            let g = transition_rate(&t, 0.15, 0.1, s.omega).unwrap();
            assert!((s.eigenvalues[0] - g).abs() < 1e-12);
            assert!(p.eigenvalues[0].abs() < 1e-12);
            assert!((p.eigenvalues[1] - 2.0 * g).abs() < 1e-12);
        }
    }
}
