//! Reduced qubit dynamics: exact unitary evolution with a partial trace,
//! bath correlation functions, the Lindblad model built from ETH rates and
//! the diagnostics that compare the two.

use faer::{c64, Mat};
use nalgebra::{Matrix2, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eth::{RateFunction, SpectralFunctionTable};
use crate::hamiltonian::SystemParams;
use crate::linalg::{self, trapezoid, DenseMatrix};
use crate::spectra::EigenSystem;
use crate::states::{typical_microcanonical_state, MicrocanonicalWindow};

pub type Rho = Matrix2<c64>;

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };
const ONE: c64 = c64 { re: 1.0, im: 0.0 };
const I: c64 = c64 { re: 0.0, im: 1.0 };

pub fn sigma_x() -> Rho {
    Matrix2::new(ZERO, ONE, ONE, ZERO)
}

pub fn sigma_z() -> Rho {
    Matrix2::new(ONE, ZERO, ZERO, -ONE)
}

/// Uniform grid `0, dt, …, t_max`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TimeGrid {
    pub t_max: f64,
    pub dt: f64,
    pub count: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && t_max >= 0.0 && t_max.is_finite()) {
            return Err(Error::invalid(
                "time grid needs dt > 0 and finite t_max ≥ 0",
            ));
        }
        let count = (t_max / dt + 1e-9).floor() as usize + 1;
        Ok(Self { t_max, dt, count })
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.count).map(|k| k as f64 * self.dt).collect()
    }
}

#[derive(Clone, Debug)]
pub struct BathCorrelation {
    pub tau: Vec<f64>,
    pub values: Vec<c64>,
    pub preparation: String,
    pub variance_at_zero: f64,
}

impl BathCorrelation {
    /// First `τ` at which `|C|` drops to half of `|C(0)|`, linearly
    /// interpolated.
    pub fn half_width(&self) -> Option<f64> {
        let c0 = self.values[0].norm();
        for k in 1..self.values.len() {
            let (a, b) = (self.values[k - 1].norm(), self.values[k].norm());
            if b <= 0.5 * c0 {
                let f = (a - 0.5 * c0) / (a - b);
                return Some(self.tau[k - 1] + f * (self.tau[k] - self.tau[k - 1]));
            }
        }
        None
    }

    /// Largest `|C(τ)|` for `τ` in `[lo, hi]`.
    pub fn max_abs_between(&self, lo: f64, hi: f64) -> f64 {
        self.tau
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .map(|(_, c)| c.norm())
            .fold(0.0, f64::max)
    }
}

/// System Hamiltonian including the bath's mean force.
#[derive(Clone, Debug)]
pub struct ShiftedSystem {
    pub hamiltonian: Rho,
    /// Gap of the shifted Hamiltonian.
    pub omega: f64,
}

/// `H_S' = (ω₀/2) σ^z + κ ⟨B⟩₀ S` with `S = σ^x`.
pub fn mean_field_shift(sys: &SystemParams, kappa: f64, b_expect: f64) -> ShiftedSystem {
    mean_field_shift_with(sys, kappa, b_expect, &sigma_x())
}

pub fn mean_field_shift_with(
    sys: &SystemParams,
    kappa: f64,
    b_expect: f64,
    coupling: &Rho,
) -> ShiftedSystem {
    let h =
        sigma_z() * c64::new(0.5 * sys.omega0, 0.0) + coupling * c64::new(kappa * b_expect, 0.0);
    let (vals, _) = eigh2(&h);
    ShiftedSystem {
        hamiltonian: h,
        omega: vals[1] - vals[0],
    }
}

/// Ascending eigenvalues and eigenvectors (columns) of a 2×2 Hermitian
/// matrix.
pub fn eigh2(h: &Rho) -> ([f64; 2], Rho) {
    let herm = (h + h.adjoint()) * c64::new(0.5, 0.0);
    let evd = SymmetricEigen::new(herm);
    let (a, b) = if evd.eigenvalues[0] <= evd.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let v = Matrix2::from_columns(&[evd.eigenvectors.column(a), evd.eigenvectors.column(b)]);
    ([evd.eigenvalues[a], evd.eigenvalues[b]], v)
}

/// Component `Ŝ(ω)` of a system operator with `[H_S', Ŝ(ω)] = −ω Ŝ(ω)`.
#[derive(Clone, Debug)]
pub struct JumpComponent {
    pub omega: f64,
    pub op: Rho,
}

/// Splits `s` into `Ŝ(ω')`, `Ŝ(−ω')` and, when nonzero, `Ŝ(0)` in the
/// eigenbasis of `h`.
pub fn lowering_operators(h: &Rho, s: &Rho) -> Result<Vec<JumpComponent>> {
    let (vals, v) = eigh2(h);
    let gap = vals[1] - vals[0];
    if gap <= 1e-12 * (vals[0].abs() + vals[1].abs()).max(1.0) {
        return Err(Error::invalid("system Hamiltonian is degenerate"));
    }
    let g = v.column(0).into_owned();
    let e = v.column(1).into_owned();
    let pg = &g * g.adjoint();
    let pe = &e * e.adjoint();
    let lower = pg * s * pe;
    let raise = pe * s * pg;
    let diag = pg * s * pg + pe * s * pe;
    let mut out = vec![
        JumpComponent {
            omega: gap,
            op: lower,
        },
        JumpComponent {
            omega: -gap,
            op: raise,
        },
    ];
    if diag.iter().any(|z| z.norm() > 1e-14) {
        out.push(JumpComponent {
            omega: 0.0,
            op: diag,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Jump {
    pub omega: f64,
    pub op: Rho,
    pub rate: f64,
}

#[derive(Clone, Debug)]
pub struct LindbladModel {
    pub hamiltonian: Rho,
    pub jumps: Vec<Jump>,
}

impl LindbladModel {
    /// `−i[H, ρ] + Σ γ (L ρ L† − ½{L†L, ρ})`.
    pub fn generator(&self, rho: &Rho) -> Rho {
        let h = &self.hamiltonian;
        let mut out = (h * rho - rho * h) * (-I);
        for j in &self.jumps {
            if j.rate == 0.0 {
                continue;
            }
            let l = &j.op;
            let ld = l.adjoint();
            let ldl = ld * l;
            out += (l * rho * ld - (ldl * rho + rho * ldl) * c64::new(0.5, 0.0))
                * c64::new(j.rate, 0.0);
        }
        out
    }

    pub fn rate_at(&self, omega: f64) -> f64 {
        self.jumps
            .iter()
            .filter(|j| (j.omega - omega).abs() < 1e-12)
            .map(|j| j.rate)
            .sum()
    }

    /// Bohr frequency `ω' > 0` of the model.
    pub fn bohr_frequency(&self) -> f64 {
        self.jumps.iter().map(|j| j.omega.abs()).fold(0.0, f64::max)
    }

    /// `γ(ω') + γ(−ω')`.
    pub fn population_rate(&self) -> f64 {
        let w = self.bohr_frequency();
        self.rate_at(w) + self.rate_at(-w)
    }

    /// Steady state of a two-level model with rates at `±ω'`: excited over
    /// ground population is `γ(−ω')/γ(ω')`.
    pub fn stationary_state(&self) -> Result<Rho> {
        let w = self.bohr_frequency();
        let (down, up) = (self.rate_at(w), self.rate_at(-w));
        if down + up == 0.0 {
            return Err(Error::numerical(
                "no dissipation: stationary state not unique",
            ));
        }
        let (_, v) = eigh2(&self.hamiltonian);
        let g = v.column(0).into_owned();
        let e = v.column(1).into_owned();
        let pe = up / (up + down);
        Ok(&g * g.adjoint() * c64::new(1.0 - pe, 0.0) + &e * e.adjoint() * c64::new(pe, 0.0))
    }
}

/// Lindblad model with `γ(ω)` read from `rates` at each Bohr frequency.
/// The `ω = 0` component is dropped unless `include_zero`.
pub fn build_lindblad(
    shifted: &ShiftedSystem,
    lowering: &[JumpComponent],
    rates: &RateFunction,
    include_zero: bool,
) -> Result<LindbladModel> {
    let mut jumps = Vec::new();
    for comp in lowering {
        if comp.omega == 0.0 && !include_zero {
            continue;
        }
        let rate = rates.rate(comp.omega)?;
        if !(rate >= 0.0) {
            return Err(Error::numerical(format!(
                "negative rate {rate} at ω = {}",
                comp.omega
            )));
        }
        jumps.push(Jump {
            omega: comp.omega,
            op: comp.op,
            rate,
        });
    }
    Ok(LindbladModel {
        hamiltonian: shifted.hamiltonian,
        jumps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Lindblad,
}

#[derive(Clone, Debug)]
pub struct ReducedTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Rho>,
    pub provenance: Provenance,
    /// Largest `|tr ρ − 1|` seen.
    pub max_trace_error: f64,
    /// Most negative eigenvalue seen (0 if none).
    pub min_eigenvalue: f64,
    pub max_hermiticity_error: f64,
    /// Largest `|⟨ψ|ψ⟩ − 1|` for exact runs.
    pub max_norm_error: f64,
}

impl ReducedTrajectory {
    fn new(times: Vec<f64>, states: Vec<Rho>, provenance: Provenance) -> Self {
        let mut t = Self {
            times,
            states,
            provenance,
            max_trace_error: 0.0,
            min_eigenvalue: 0.0,
            max_hermiticity_error: 0.0,
            max_norm_error: 0.0,
        };
        for rho in &t.states {
            let (tr, herm, min) = invariants(rho);
            t.max_trace_error = t.max_trace_error.max(tr);
            t.max_hermiticity_error = t.max_hermiticity_error.max(herm);
            t.min_eigenvalue = t.min_eigenvalue.min(min);
        }
        t
    }

    pub fn populations(&self) -> Vec<f64> {
        self.states.iter().map(|r| r[(0, 0)].re).collect()
    }

    pub fn coherences(&self) -> Vec<f64> {
        self.states.iter().map(|r| r[(0, 1)].norm()).collect()
    }

    /// Mean of `ρ` over grid points with `t ≥ t_from`.
    pub fn late_average(&self, t_from: f64) -> Rho {
        let picked: Vec<&Rho> = self
            .times
            .iter()
            .zip(&self.states)
            .filter(|(t, _)| **t >= t_from)
            .map(|(_, r)| r)
            .collect();
        let n = picked.len().max(1) as f64;
        picked.into_iter().fold(Rho::zeros(), |acc, r| acc + r) / c64::new(n, 0.0)
    }
}

/// `(|tr ρ − 1|, max |ρ − ρ†|, min eigenvalue)`.
fn invariants(rho: &Rho) -> (f64, f64, f64) {
    let tr = (rho.trace() - ONE).norm();
    let herm = (rho - rho.adjoint())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let (vals, _) = eigh2(rho);
    (tr, herm, vals[0].min(0.0))
}

/// Largest internal step for a given model: `0.01 / max(ω', γ_pop)`.
pub fn max_lindblad_step(model: &LindbladModel) -> f64 {
    0.01 / model
        .bohr_frequency()
        .max(model.population_rate())
        .max(1e-12)
}

/// Fixed-step classical RK4. Each output interval is split into equal
/// substeps no longer than [`max_lindblad_step`]. The state is never
/// renormalized; invariant drift beyond `1e-6` is an error.
pub fn lindblad_evolve(
    model: &LindbladModel,
    rho0: &Rho,
    grid: &TimeGrid,
) -> Result<ReducedTrajectory> {
    let (tr, herm, min) = invariants(rho0);
    if tr > 1e-10 || herm > 1e-12 || min < -1e-12 {
        return Err(Error::invalid("initial state is not a density matrix"));
    }
    if model.jumps.iter().any(|j| !(j.rate >= 0.0)) {
        return Err(Error::invalid("Lindblad rates must be nonnegative"));
    }
    let substeps = (grid.dt / max_lindblad_step(model)).ceil().max(1.0) as usize;
    let h = grid.dt / substeps as f64;
    let half = c64::new(0.5 * h, 0.0);
    let full = c64::new(h, 0.0);
    let sixth = c64::new(h / 6.0, 0.0);
    let two = c64::new(2.0, 0.0);
    let mut rho = *rho0;
    let mut states = Vec::with_capacity(grid.count);
    states.push(rho);
    for _ in 1..grid.count {
        for _ in 0..substeps {
            let k1 = model.generator(&rho);
            let k2 = model.generator(&(rho + k1 * half));
            let k3 = model.generator(&(rho + k2 * half));
            let k4 = model.generator(&(rho + k3 * full));
            rho += (k1 + k2 * two + k3 * two + k4) * sixth;
        }
        let (tr, herm, min) = invariants(&rho);
        if tr > 1e-6 || herm > 1e-6 || min < -1e-6 {
            return Err(Error::numerical(format!(
                "Lindblad invariants violated (trace {tr:e}, hermiticity {herm:e}, min eigenvalue {min:e})"
            )));
        }
        states.push(rho);
    }
    Ok(ReducedTrajectory::new(
        grid.times(),
        states,
        Provenance::Lindblad,
    ))
}

/// `ρ_S[a, b] = Σ_k ψ[a·d_B + k] ψ*[b·d_B + k]`.
pub fn partial_trace_bath(psi: &[c64]) -> Result<Rho> {
    if psi.len() < 2 || psi.len() % 2 != 0 {
        return Err(Error::invalid(format!(
            "state of length {} does not factor as qubit ⊗ bath",
            psi.len()
        )));
    }
    let d = psi.len() / 2;
    let (up, down) = psi.split_at(d);
    let mut rho = Rho::zeros();
    for (a, b) in up.iter().zip(down) {
        rho[(0, 0)] += a * a.conj();
        rho[(0, 1)] += a * b.conj();
        rho[(1, 1)] += b * b.conj();
    }
    rho[(1, 0)] = rho[(0, 1)].conj();
    Ok(rho)
}

/// Partial trace of a full density matrix of dimension `2 d_B`.
pub fn partial_trace_bath_matrix(rho: &DenseMatrix) -> Result<Rho> {
    let n = rho.dim();
    if n < 2 || n % 2 != 0 {
        return Err(Error::invalid(
            "density matrix does not factor as qubit ⊗ bath",
        ));
    }
    let d = n / 2;
    let mut out = Rho::zeros();
    for a in 0..2 {
        for b in 0..2 {
            out[(a, b)] = (0..d).map(|k| rho.get(a * d + k, b * d + k)).sum();
        }
    }
    Ok(out)
}

const EVOLVE_CHUNK: usize = 64;

/// `|ψ(t)⟩ = V e^{−iΛt} V† |ψ₀⟩` on the grid, reduced to the system qubit.
pub fn exact_evolve(
    total: &EigenSystem,
    psi0: &[c64],
    grid: &TimeGrid,
) -> Result<ReducedTrajectory> {
    let n = total.dim();
    if psi0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: psi0.len(),
        });
    }
    if (linalg::norm(psi0) - 1.0).abs() > 1e-10 {
        return Err(Error::invalid("initial state is not normalized"));
    }
    let coeffs = total.project(psi0)?;
    let energies = total.eigenvalues();
    let times = grid.times();
    let mut states = Vec::with_capacity(times.len());
    let mut max_norm_error = 0.0f64;
    for chunk in times.chunks(EVOLVE_CHUNK) {
        let phased = |re: bool| {
            Mat::<f64>::from_fn(n, chunk.len(), |k, j| {
                let z = coeffs[k] * c64::from_polar(1.0, -energies[k] * chunk[j]);
                if re {
                    z.re
                } else {
                    z.im
                }
            })
        };
        let columns: Vec<Vec<c64>> = match total.vectors() {
            DenseMatrix::Real(v) => {
                let re = linalg::mul_real(v.as_ref(), phased(true).as_ref());
                let im = linalg::mul_real(v.as_ref(), phased(false).as_ref());
                (0..chunk.len())
                    .map(|j| (0..n).map(|i| c64::new(re[(i, j)], im[(i, j)])).collect())
                    .collect()
            }
            DenseMatrix::Complex(v) => {
                let phi = Mat::<c64>::from_fn(n, chunk.len(), |k, j| {
                    coeffs[k] * c64::from_polar(1.0, -energies[k] * chunk[j])
                });
                let psi = linalg::mul_complex(v.as_ref(), phi.as_ref());
                (0..chunk.len())
                    .map(|j| psi.col(j).iter().copied().collect())
                    .collect()
            }
        };
        for psi in columns {
            max_norm_error = max_norm_error.max((linalg::norm(&psi) - 1.0).abs());
            states.push(partial_trace_bath(&psi)?);
        }
    }
    let mut traj = ReducedTrajectory::new(times, states, Provenance::Exact);
    traj.max_norm_error = max_norm_error;
    Ok(traj)
}

/// `ρ_MF ∝ tr_B e^{−βĤ}` from the total eigensystem.
pub fn mean_force_state(total: &EigenSystem, beta: f64) -> Result<Rho> {
    if !beta.is_finite() {
        return Err(Error::invalid("β must be finite"));
    }
    let e = total.eigenvalues();
    let shift = e
        .iter()
        .map(|&v| -beta * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let n = total.dim();
    let half = n / 2;
    let v = total.vectors();
    let mut rho = Rho::zeros();
    let mut z = 0.0;
    for k in 0..n {
        let w = (-beta * e[k] - shift).exp();
        if w < 1e-300 {
            continue;
        }
        z += w;
        let (mut r00, mut r01, mut r11) = (0.0, ZERO, 0.0);
        for i in 0..half {
            let a = v.get(i, k);
            let b = v.get(half + i, k);
            r00 += a.norm_sqr();
            r11 += b.norm_sqr();
            r01 += a * b.conj();
        }
        rho[(0, 0)] += c64::new(w * r00, 0.0);
        rho[(1, 1)] += c64::new(w * r11, 0.0);
        rho[(0, 1)] += r01 * w;
    }
    rho[(1, 0)] = rho[(0, 1)].conj();
    Ok(rho / c64::new(z, 0.0))
}

/// `e^{−βH} / Z` for a 2×2 Hamiltonian.
pub fn gibbs_state(h: &Rho, beta: f64) -> Rho {
    let (vals, v) = eigh2(h);
    let w0 = 1.0;
    let w1 = (-beta * (vals[1] - vals[0])).exp();
    let z = w0 + w1;
    let g = v.column(0).into_owned();
    let e = v.column(1).into_owned();
    &g * g.adjoint() * c64::new(w0 / z, 0.0) + &e * e.adjoint() * c64::new(w1 / z, 0.0)
}

/// `½ Σ |λ(ρ − σ)|` for 2×2 Hermitian matrices.
pub fn trace_distance(rho: &Rho, sigma: &Rho) -> f64 {
    let d = rho - sigma;
    let a = d[(0, 0)].re;
    let b = d[(1, 1)].re;
    let off = 0.5 * (d[(0, 1)] + d[(1, 0)].conj());
    let mean = 0.5 * (a + b);
    let r = (0.25 * (a - b) * (a - b) + off.norm_sqr()).sqrt();
    0.5 * ((mean + r).abs() + (mean - r).abs())
}

/// Pointwise trace distance between two trajectories on the same grid.
pub fn trace_distance_series(a: &ReducedTrajectory, b: &ReducedTrajectory) -> Result<Vec<f64>> {
    check_same_grid(a, b)?;
    Ok(a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| trace_distance(x, y))
        .collect())
}

fn check_same_grid(a: &ReducedTrajectory, b: &ReducedTrajectory) -> Result<()> {
    if a.times.len() != b.times.len()
        || a.times
            .iter()
            .zip(&b.times)
            .any(|(x, y)| (x - y).abs() > 1e-9)
    {
        return Err(Error::DimensionMismatch {
            expected: a.times.len(),
            found: b.times.len(),
        });
    }
    Ok(())
}

/// `(1/t') ∫₀^{t'} T(t) dt` by the trapezoid rule.
pub fn time_averaged_trace_distance(
    a: &ReducedTrajectory,
    b: &ReducedTrajectory,
    t_final: f64,
) -> Result<f64> {
    check_same_grid(a, b)?;
    let last = a.times[a.times.len() - 1];
    if !(t_final > 0.0 && t_final <= last + 1e-9) {
        return Err(Error::OutOfRange {
            value: t_final,
            lo: 0.0,
            hi: last,
        });
    }
    let n = a.times.iter().take_while(|&&t| t <= t_final + 1e-9).count();
    let dist = trace_distance_series(a, b)?;
    Ok(trapezoid(&a.times[..n], &dist[..n]) / a.times[n - 1])
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RateFit {
    pub rate: f64,
    /// Root-mean-square residual of the log-linear fit.
    pub residual: f64,
    pub points: usize,
}

/// Least-squares slope of `log|y − a|` against `t` over the leading stretch
/// where `|y − a|` exceeds 5% of its initial value.
pub fn fit_exponential_rate(times: &[f64], values: &[f64], asymptote: f64) -> Result<RateFit> {
    if times.len() != values.len() || times.is_empty() {
        return Err(Error::invalid(
            "times and values must be nonempty and aligned",
        ));
    }
    let d0 = (values[0] - asymptote).abs();
    if d0 == 0.0 {
        return Err(Error::invalid("series starts at its asymptote"));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .map(|(&t, &y)| (t, (y - asymptote).abs()))
        .take_while(|&(_, d)| d > 0.05 * d0)
        .map(|(t, d)| (t, d.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::invalid(
            "too few points above the 5% floor for a rate fit",
        ));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - my - slope * (p.0 - mt)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(RateFit {
        rate: -slope,
        residual,
        points: pts.len(),
    })
}

fn support(coeffs: &[c64]) -> Vec<usize> {
    (0..coeffs.len())
        .filter(|&k| coeffs[k].norm_sqr() > 0.0)
        .collect()
}

/// `⟨ψ|B̃(t) B̃(0)|ψ⟩` and `⟨ψ|B|ψ⟩` for energy-basis coefficients.
fn correlation_series(
    eig: &EigenSystem,
    b_eig: &DenseMatrix,
    coeffs: &[c64],
    times: &[f64],
) -> (Vec<c64>, f64) {
    let n = eig.dim();
    let e = eig.eigenvalues();
    let s = support(coeffs);
    // v = B c
    let mut v = vec![ZERO; n];
    for &k in &s {
        for (m, vm) in v.iter_mut().enumerate() {
            *vm += b_eig.get(m, k) * coeffs[k];
        }
    }
    let mean: f64 = s.iter().map(|&k| (coeffs[k].conj() * v[k]).re).sum();
    let b_s = Mat::<c64>::from_fn(n, s.len(), |m, j| b_eig.get(m, s[j]));
    let phi = Mat::<c64>::from_fn(n, times.len(), |m, t| {
        v[m] * c64::from_polar(1.0, -e[m] * times[t])
    });
    let r = linalg::mul_adjoint_complex(b_s.as_ref(), phi.as_ref());
    let values = (0..times.len())
        .map(|t| {
            s.iter()
                .enumerate()
                .map(|(j, &k)| coeffs[k].conj() * c64::from_polar(1.0, e[k] * times[t]) * r[(j, t)])
                .sum()
        })
        .collect();
    (values, mean)
}

/// `C(t, 0) = ⟨ψ|B̃(t)B̃(0)|ψ⟩ − ⟨ψ|B|ψ⟩²` with `B` and `ψ` in the energy
/// basis.
pub fn bath_correlation_function(
    eig: &EigenSystem,
    b_eig: &DenseMatrix,
    coeffs: &[c64],
    grid: &TimeGrid,
    preparation: &str,
) -> Result<BathCorrelation> {
    if b_eig.dim() != eig.dim() || coeffs.len() != eig.dim() {
        return Err(Error::DimensionMismatch {
            expected: eig.dim(),
            found: if b_eig.dim() != eig.dim() {
                b_eig.dim()
            } else {
                coeffs.len()
            },
        });
    }
    let tau = grid.times();
    let (raw, mean) = correlation_series(eig, b_eig, coeffs, &tau);
    let values: Vec<c64> = raw.into_iter().map(|c| c - mean * mean).collect();
    Ok(BathCorrelation {
        variance_at_zero: values[0].re,
        tau,
        values,
        preparation: preparation.to_string(),
    })
}

/// `C(τ) = ∫ dω e^{−iωτ} e^{βω/2} |f|²` by the trapezoid rule over bins.
pub fn bcf_from_spectral_function(
    table: &SpectralFunctionTable,
    beta: f64,
    grid: &TimeGrid,
) -> Result<BathCorrelation> {
    if !table.is_normalized() {
        return Err(Error::invalid("spectral function must be normalized first"));
    }
    let weights: Vec<f64> = table
        .omega
        .iter()
        .zip(&table.values)
        .map(|(w, v)| (0.5 * beta * w).exp() * v)
        .collect();
    let tau = grid.times();
    let values: Vec<c64> = tau
        .iter()
        .map(|&t| {
            let re: Vec<f64> = table
                .omega
                .iter()
                .zip(&weights)
                .map(|(w, g)| g * (w * t).cos())
                .collect();
            let im: Vec<f64> = table
                .omega
                .iter()
                .zip(&weights)
                .map(|(w, g)| -g * (w * t).sin())
                .collect();
            c64::new(trapezoid(&table.omega, &re), trapezoid(&table.omega, &im))
        })
        .collect();
    Ok(BathCorrelation {
        variance_at_zero: values[0].re,
        tau,
        values,
        preparation: "eth".to_string(),
    })
}

/// `⟨ψ(t)|B|ψ(t)⟩` for energy-basis coefficients.
pub fn expectation_series(
    b_eig: &DenseMatrix,
    eig: &EigenSystem,
    coeffs: &[c64],
    times: &[f64],
) -> Vec<f64> {
    let s = support(coeffs);
    let e = eig.eigenvalues();
    let block: Vec<Vec<c64>> = s
        .iter()
        .map(|&m| s.iter().map(|&n| b_eig.get(n, m)).collect())
        .collect();
    times
        .iter()
        .map(|&t| {
            let psi: Vec<c64> = s
                .iter()
                .map(|&k| coeffs[k] * c64::from_polar(1.0, -e[k] * t))
                .collect();
            let mut acc = 0.0;
            // ⟨ψ|B|ψ⟩ = Σ_{n,m} ψ_n* B_nm ψ_m
            for (jm, col) in block.iter().enumerate() {
                for (jn, b_nm) in col.iter().enumerate() {
                    acc += (psi[jn].conj() * b_nm * psi[jm]).re;
                }
            }
            acc
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleSpread {
    pub seed: u64,
    /// `max_t |⟨B̃(t)⟩ − ⟨B⟩_mc|`.
    pub max_dev_b: f64,
    /// `max_t |C_ψ(t) − C_mc(t)|`.
    pub max_dev_c: f64,
    /// `Σ |c_n|² B_nn`, the infinite-time average of `⟨B̃(t)⟩`.
    pub long_time_b: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TypicalityReport {
    pub window_dim: usize,
    pub mc_average: f64,
    pub operator_norm: f64,
    pub samples: Vec<SampleSpread>,
    pub median_spread: f64,
    /// `(ε, empirical exceedance fraction, Levy bound)` over all samples
    /// and grid times.
    pub exceedance: Vec<(f64, f64, f64)>,
    pub bound_violated: bool,
}

/// `2 exp(−d ε² / (18 π³ ‖B‖²))`.
pub fn levy_bound(window_dim: usize, eps: f64, operator_norm: f64) -> f64 {
    let pi3 = std::f64::consts::PI.powi(3);
    2.0 * (-(window_dim as f64) * eps * eps / (18.0 * pi3 * operator_norm * operator_norm)).exp()
}

/// Samples `n_samples` typical states in `window` (seeds `seed + i`) and
/// measures their deviation from microcanonical averages over the grid.
pub fn typicality_spread(
    eig: &EigenSystem,
    b_eig: &DenseMatrix,
    window: &MicrocanonicalWindow,
    n_samples: usize,
    seed: u64,
    grid: &TimeGrid,
    operator_norm: f64,
) -> Result<TypicalityReport> {
    if n_samples < 2 {
        return Err(Error::invalid("typicality needs at least two samples"));
    }
    let d = window.dim();
    let members: Vec<usize> = window.members().collect();
    let mc_average = members.iter().map(|&n| b_eig.get(n, n).re).sum::<f64>() / d as f64;
    let times = grid.times();
    let e = eig.eigenvalues();
    // Microcanonical C(t) = (1/d) Σ_{n∈W} Σ_m |B_nm|² e^{i(E_n−E_m)t} − ⟨B⟩²_mc.
    let mc_corr: Vec<c64> = times
        .iter()
        .map(|&t| {
            let mut acc = ZERO;
            for &n in &members {
                for m in 0..eig.dim() {
                    acc += c64::from_polar(b_eig.abs2(m, n), (e[n] - e[m]) * t);
                }
            }
            acc / d as f64 - c64::new(mc_average * mc_average, 0.0)
        })
        .collect();
    let mut samples = Vec::with_capacity(n_samples);
    let mut deviations = Vec::with_capacity(n_samples * times.len());
    for i in 0..n_samples {
        let s = seed.wrapping_add(i as u64);
        let psi = typical_microcanonical_state(eig, window, s, false)?;
        let series = expectation_series(b_eig, eig, &psi.amplitudes, &times);
        let devs: Vec<f64> = series.iter().map(|b| (b - mc_average).abs()).collect();
        let max_dev_b = devs.iter().cloned().fold(0.0, f64::max);
        deviations.extend(devs);
        let (corr, mean) = correlation_series(eig, b_eig, &psi.amplitudes, &times);
        let max_dev_c = corr
            .iter()
            .zip(&mc_corr)
            .map(|(c, m)| (c - mean * mean - m).norm())
            .fold(0.0, f64::max);
        let long_time_b = psi
            .amplitudes
            .iter()
            .enumerate()
            .map(|(k, c)| c.norm_sqr() * b_eig.get(k, k).re)
            .sum();
        samples.push(SampleSpread {
            seed: s,
            max_dev_b,
            max_dev_c,
            long_time_b,
        });
    }
    let mut spreads: Vec<f64> = samples.iter().map(|s| s.max_dev_b).collect();
    spreads.sort_by(f64::total_cmp);
    let median_spread = if n_samples % 2 == 1 {
        spreads[n_samples / 2]
    } else {
        0.5 * (spreads[n_samples / 2 - 1] + spreads[n_samples / 2])
    };
    let top = deviations.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let total = deviations.len() as f64;
    let exceedance: Vec<(f64, f64, f64)> = (1..=50)
        .map(|k| {
            let eps = top * k as f64 / 50.0;
            let frac = deviations.iter().filter(|&&x| x > eps).count() as f64 / total;
            (eps, frac, levy_bound(d, eps, operator_norm))
        })
        .collect();
    let bound_violated = exceedance.iter().any(|&(_, f, b)| f > b);
    Ok(TypicalityReport {
        window_dim: d,
        mc_average,
        operator_norm,
        samples,
        median_spread,
        exceedance,
        bound_violated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(a: f64, b: f64) -> Rho {
        Matrix2::new(c64::new(a, 0.0), ZERO, ZERO, c64::new(b, 0.0))
    }

    #[test]
    fn trace_distance_examples() {
        assert!((trace_distance(&diag(0.7, 0.3), &diag(0.5, 0.5)) - 0.2).abs() < 1e-15);
        assert!((trace_distance(&diag(1.0, 0.0), &diag(0.0, 1.0)) - 1.0).abs() < 1e-15);
        assert_eq!(trace_distance(&diag(0.4, 0.6), &diag(0.4, 0.6)), 0.0);
    }

    #[test]
    fn bare_lowering_operators() {
        let h = sigma_z() * c64::new(0.7625, 0.0);
        let parts = lowering_operators(&h, &sigma_x()).unwrap();
        assert_eq!(parts.len(), 2);
        let low = parts.iter().find(|p| p.omega > 0.0).unwrap();
        assert!((low.omega - 1.525).abs() < 1e-12);
        // |g⟩ = |1⟩ (σ^z = −1), so Ŝ(ω) = |1⟩⟨0|.
        assert!((low.op[(1, 0)].norm() - 1.0).abs() < 1e-12);
        assert!(low.op[(0, 1)].norm() < 1e-12);
        let only_zero = lowering_operators(&h, &sigma_z()).unwrap();
        for p in &only_zero {
            if p.omega != 0.0 {
                assert!(p.op.iter().all(|z| z.norm() < 1e-12));
            }
        }
    }

    #[test]
    fn shifted_gap_closed_form() {
        let s = mean_field_shift(&SystemParams { omega0: 1.525 }, 0.15, 0.2);
        let expect = (1.525f64.powi(2) + 4.0 * 0.03f64.powi(2)).sqrt();
        assert!((s.omega - expect).abs() < 1e-12);
        let parts = lowering_operators(&s.hamiltonian, &sigma_x()).unwrap();
        let sum = parts.iter().fold(Rho::zeros(), |acc, p| acc + p.op);
        assert!((sum - sigma_x()).iter().all(|z| z.norm() < 1e-12));
        for p in &parts {
            let comm = s.hamiltonian * p.op - p.op * s.hamiltonian + p.op * c64::new(p.omega, 0.0);
            assert!(comm.iter().all(|z| z.norm() < 1e-10));
        }
    }

    #[test]
    fn partial_trace_examples() {
        let product = vec![ONE, ZERO, ZERO, ZERO];
        let rho = partial_trace_bath(&product).unwrap();
        assert_eq!(rho, diag(1.0, 0.0));
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let bell = vec![c64::new(a, 0.0), ZERO, ZERO, c64::new(a, 0.0)];
        let rho = partial_trace_bath(&bell).unwrap();
        assert!((rho - diag(0.5, 0.5)).iter().all(|z| z.norm() < 1e-15));
        assert!(partial_trace_bath(&[ONE, ZERO, ZERO]).is_err());
    }

    #[test]
    fn exponential_fit_is_exact_on_synthetic_decay() {
        let t: Vec<f64> = (0..200).map(|k| k as f64 * 0.05).collect();
        let y: Vec<f64> = t.iter().map(|t| 0.5 + 0.5 * (-0.3 * t).exp()).collect();
        let fit = fit_exponential_rate(&t, &y, 0.5).unwrap();
        assert!((fit.rate - 0.3).abs() < 1e-6);
    }

    #[test]
    fn time_average_of_constant_distance() {
        let grid = TimeGrid::new(10.0, 0.5).unwrap();
        let a = ReducedTrajectory::new(
            grid.times(),
            vec![diag(0.7, 0.3); grid.count],
            Provenance::Exact,
        );
        let b = ReducedTrajectory::new(
            grid.times(),
            vec![diag(0.5, 0.5); grid.count],
            Provenance::Exact,
        );
        assert!((time_averaged_trace_distance(&a, &b, 10.0).unwrap() - 0.2).abs() < 1e-14);
        assert_eq!(time_averaged_trace_distance(&a, &a, 5.0).unwrap(), 0.0);
        assert!(time_averaged_trace_distance(&a, &b, 11.0).is_err());
    }

    #[test]
    fn levy_bound_window_of_one() {
        assert!(levy_bound(1, 0.1, 1.0) > 1.0);
    }
}
