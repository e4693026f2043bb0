//! Pure initial states for the bath and the system qubit.

use faer::c64;
use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::SpinChainParams;
use crate::linalg::norm;
use crate::spectra::EigenSystem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Computational,
    Energy,
}

#[derive(Clone, Debug)]
pub struct PureState {
    pub amplitudes: Vec<c64>,
    pub basis: Basis,
}

impl PureState {
    pub fn new(amplitudes: Vec<c64>, basis: Basis) -> Result<Self> {
        let n = norm(&amplitudes);
        if !(n > 0.0) {
            return Err(Error::invalid("state vector has zero norm"));
        }
        let amplitudes = amplitudes.into_iter().map(|a| a / n).collect();
        Ok(Self { amplitudes, basis })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }

    /// Coefficients in the energy basis of `eig`.
    pub fn energy_coefficients(&self, eig: &EigenSystem) -> Result<Vec<c64>> {
        if self.dim() != eig.dim() {
            return Err(Error::DimensionMismatch {
                expected: eig.dim(),
                found: self.dim(),
            });
        }
        match self.basis {
            Basis::Energy => Ok(self.amplitudes.clone()),
            Basis::Computational => eig.project(&self.amplitudes),
        }
    }

    /// Amplitudes in the computational basis.
    pub fn computational(&self, eig: &EigenSystem) -> Result<Vec<c64>> {
        match self.basis {
            Basis::Computational => Ok(self.amplitudes.clone()),
            Basis::Energy => eig.expand(&self.amplitudes),
        }
    }

    /// `|ψ⟩⟨ψ|` for a single qubit.
    pub fn density_matrix_2x2(&self) -> Result<Matrix2<c64>> {
        if self.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: self.dim(),
            });
        }
        let a = &self.amplitudes;
        Ok(Matrix2::new(
            a[0] * a[0].conj(),
            a[0] * a[1].conj(),
            a[1] * a[0].conj(),
            a[1] * a[1].conj(),
        ))
    }

    /// `ψ_sys ⊗ ψ_bath`, both in the computational basis; the system qubit is
    /// the most significant bit.
    pub fn tensor(system: &PureState, bath: &PureState) -> Result<PureState> {
        if system.basis != Basis::Computational || bath.basis != Basis::Computational {
            return Err(Error::invalid(
                "tensor product needs computational-basis states",
            ));
        }
        let mut out = Vec::with_capacity(system.dim() * bath.dim());
        for s in &system.amplitudes {
            out.extend(bath.amplitudes.iter().map(|b| s * b));
        }
        Ok(PureState {
            amplitudes: out,
            basis: Basis::Computational,
        })
    }
}

/// Eigenstates with `E_n ∈ [E₀ − ΔE/2, E₀ + ΔE/2]`.
#[derive(Clone, Debug, Serialize)]
pub struct MicrocanonicalWindow {
    pub e0: f64,
    pub width: f64,
    pub start: usize,
    pub end: usize,
}

impl MicrocanonicalWindow {
    pub fn new(eig: &EigenSystem, e0: f64, width: f64) -> Result<Self> {
        if !(width >= 0.0) {
            return Err(Error::invalid("window width must be nonnegative"));
        }
        let e = eig.eigenvalues();
        let start = e.partition_point(|&v| v < e0 - 0.5 * width);
        let end = e.partition_point(|&v| v <= e0 + 0.5 * width).max(start);
        if end == start {
            return Err(Error::invalid(format!(
                "microcanonical window around {e0} of width {width} is empty"
            )));
        }
        Ok(Self {
            e0,
            width,
            start,
            end,
        })
    }

    pub fn dim(&self) -> usize {
        self.end - self.start
    }

    pub fn members(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Eigenstate with energy nearest `e_target` (lower index on ties).
pub fn eigenstate_preparation(eig: &EigenSystem, e_target: f64) -> PureState {
    let mut amplitudes = vec![c64::new(0.0, 0.0); eig.dim()];
    amplitudes[eig.nearest_index(e_target)] = c64::new(1.0, 0.0);
    PureState {
        amplitudes,
        basis: Basis::Energy,
    }
}

/// Standard normal pair by Box–Muller from two uniforms in `(0, 1]`.
fn box_muller(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let phi = 2.0 * std::f64::consts::PI * u2;
    (r * phi.cos(), r * phi.sin())
}

/// Normalized Gaussian superposition of the window's eigenstates.
///
/// Amplitudes are i.i.d. standard normals generated by Box–Muller from a
/// ChaCha8 stream keyed by `seed`, consumed in eigenstate order. With
/// `complex` the real and imaginary parts are independent normals.
pub fn typical_microcanonical_state(
    eig: &EigenSystem,
    window: &MicrocanonicalWindow,
    seed: u64,
    complex: bool,
) -> Result<PureState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut amplitudes = vec![c64::new(0.0, 0.0); eig.dim()];
    let d = window.dim();
    let mut normals = Vec::with_capacity(2 * d + 1);
    let needed = if complex { 2 * d } else { d };
    while normals.len() < needed {
        let (a, b) = box_muller(&mut rng);
        normals.push(a);
        normals.push(b);
    }
    for (k, n) in window.members().enumerate() {
        amplitudes[n] = if complex {
            c64::new(normals[2 * k], normals[2 * k + 1])
        } else {
            c64::new(normals[k], 0.0)
        };
    }
    PureState::new(amplitudes, Basis::Energy)
}

/// Uniform product state `|θ⟩^⊗L` with `|θ⟩ = cos(θ/2)|↑⟩ + sin(θ/2)|↓⟩`.
#[derive(Clone, Debug)]
pub struct ProductState {
    pub theta: f64,
    pub energy: f64,
    pub state: PureState,
}

/// Closed-form `⟨θ|^⊗L H_B |θ⟩^⊗L`.
pub fn product_state_energy(params: &SpinChainParams, theta: f64) -> f64 {
    let (z, x) = (theta.cos(), theta.sin());
    let fields: f64 = params.longitudinal_fields().iter().sum();
    params.j * (params.sites as f64 - 1.0) * z * z
        + fields * z
        + params.sites as f64 * params.hx * x
}

fn product_amplitudes(sites: usize, theta: f64) -> Vec<c64> {
    let (c, s) = ((0.5 * theta).cos(), (0.5 * theta).sin());
    (0..1usize << sites)
        .map(|b| {
            let down = b.count_ones() as i32;
            c64::new(c.powi(sites as i32 - down) * s.powi(down), 0.0)
        })
        .collect()
}

const THETA_GRID: usize = 4096;

/// Reachable `[min, max]` of the product-state energy and the angles that
/// attain them on a fine grid.
pub fn product_energy_range(params: &SpinChainParams) -> ((f64, f64), (f64, f64)) {
    let mut lo = (f64::INFINITY, 0.0);
    let mut hi = (f64::NEG_INFINITY, 0.0);
    for k in 0..THETA_GRID {
        let theta =
            -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / THETA_GRID as f64;
        let e = product_state_energy(params, theta);
        if e < lo.0 {
            lo = (e, theta);
        }
        if e > hi.0 {
            hi = (e, theta);
        }
    }
    ((lo.0, hi.0), (lo.1, hi.1))
}

/// Tunes `θ` by bisection between the energy minimizer and maximizer so
/// that the product-state energy equals `e_target` within `tolerance`.
pub fn product_state_with_energy(
    params: &SpinChainParams,
    e_target: f64,
    tolerance: f64,
) -> Result<ProductState> {
    params.validate()?;
    let ((e_lo, e_hi), (mut t_lo, mut t_hi)) = product_energy_range(params);
    if !(e_target >= e_lo && e_target <= e_hi) {
        return Err(Error::OutOfRange {
            value: e_target,
            lo: e_lo,
            hi: e_hi,
        });
    }
    let f = |t: f64| product_state_energy(params, t) - e_target;
    let mut theta = 0.5 * (t_lo + t_hi);
    for _ in 0..200 {
        theta = 0.5 * (t_lo + t_hi);
        let v = f(theta);
        if v.abs() <= tolerance {
            break;
        }
        if v < 0.0 {
            t_lo = theta;
        } else {
            t_hi = theta;
        }
    }
    let energy = product_state_energy(params, theta);
    if (energy - e_target).abs() > tolerance {
        return Err(Error::numerical("product-state bisection did not converge"));
    }
    Ok(ProductState {
        theta,
        energy,
        state: PureState {
            amplitudes: product_amplitudes(params.sites, theta),
            basis: Basis::Computational,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemStateKind {
    Polarized,
    Superposition,
}

/// `|0⟩` or `(|0⟩ + |1⟩)/√2`.
pub fn system_initial_state(kind: SystemStateKind) -> PureState {
    let amplitudes = match kind {
        SystemStateKind::Polarized => vec![c64::new(1.0, 0.0), c64::new(0.0, 0.0)],
        SystemStateKind::Superposition => {
            let a = std::f64::consts::FRAC_1_SQRT_2;
            vec![c64::new(a, 0.0), c64::new(a, 0.0)]
        }
    };
    PureState {
        amplitudes,
        basis: Basis::Computational,
    }
}

/// Energy of a state under `eig`'s Hamiltonian and its variance.
pub fn energy_moments(eig: &EigenSystem, coeffs: &[c64]) -> (f64, f64) {
    let e = eig.eigenvalues();
    let mean: f64 = coeffs.iter().zip(e).map(|(c, v)| c.norm_sqr() * v).sum();
    let var: f64 = coeffs
        .iter()
        .zip(e)
        .map(|(c, v)| c.norm_sqr() * (v - mean).powi(2))
        .sum();
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use faer::Mat;

    fn ladder(n: usize) -> EigenSystem {
        EigenSystem::from_parts(
            (0..n).map(|k| k as f64 * 0.1).collect(),
            DenseMatrix::Real(Mat::identity(n, n)),
        )
        .unwrap()
    }

    #[test]
    fn eigenstate_clamps_and_matches() {
        let eig = ladder(10);
        let low = eigenstate_preparation(&eig, -3.0);
        assert_eq!(low.amplitudes[0], c64::new(1.0, 0.0));
        let exact = eigenstate_preparation(&eig, 0.5);
        assert_eq!(exact.amplitudes[5], c64::new(1.0, 0.0));
    }

    #[test]
    fn single_member_window_gives_eigenstate() {
        let eig = ladder(10);
        let w = MicrocanonicalWindow::new(&eig, 0.3, 0.05).unwrap();
        assert_eq!(w.dim(), 1);
        let psi = typical_microcanonical_state(&eig, &w, 7, false).unwrap();
        assert!((psi.amplitudes[3].norm() - 1.0).abs() < 1e-15);
        assert!(MicrocanonicalWindow::new(&eig, 0.33, 0.01).is_err());
    }

    #[test]
    fn typical_state_is_reproducible_and_confined() {
        let eig = ladder(200);
        let w = MicrocanonicalWindow::new(&eig, 10.0, 3.0).unwrap();
        let a = typical_microcanonical_state(&eig, &w, 42, false).unwrap();
        let b = typical_microcanonical_state(&eig, &w, 42, false).unwrap();
        assert_eq!(a.amplitudes, b.amplitudes);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        let (mean, var) = energy_moments(&eig, &a.amplitudes);
        assert!(mean >= 8.5 && mean <= 11.5);
        assert!(var <= 1.5 * 1.5);
    }

    #[test]
    fn all_up_product_energy() {
        let p = SpinChainParams::chaotic(5);
        let expect = p.j * 4.0 + 5.0 * p.hz + p.h1 + p.hl;
        assert!((product_state_energy(&p, 0.0) - expect).abs() < 1e-14);
    }

    #[test]
    fn system_states() {
        let rho = system_initial_state(SystemStateKind::Polarized)
            .density_matrix_2x2()
            .unwrap();
        assert_eq!(rho[(0, 0)], c64::new(1.0, 0.0));
        let rho = system_initial_state(SystemStateKind::Superposition)
            .density_matrix_2x2()
            .unwrap();
        assert!((rho[(0, 1)].re - 0.5).abs() < 1e-15);
        assert!(((rho * rho).trace().re - 1.0).abs() < 1e-15);
    }
}
