//! Dense spin-1/2 Hamiltonians for a single system qubit coupled to a
//! mixed-field Ising chain.
//!
//! Basis convention: computational `σ^z` product basis, `|0⟩ = |↑⟩`
//! (`σ^z = +1`). The first site in an operator's tensor order is the most
//! significant bit of the basis index. For bath-only operators that first
//! site is bath site 1; for system+bath operators it is the system qubit
//! (site 0) and bath site `j` follows at tensor position `j`. A total basis
//! index therefore factors as `s * 2^L + b`.

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Largest number of spins a dense operator may represent unless the caller
/// raises the limit.
pub const DEFAULT_MAX_SPINS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::invalid(format!("unknown spin axis `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Chaotic,
    Integrable,
}

/// Couplings of the open mixed-field Ising chain
/// `J Σ σ^z_j σ^z_{j+1} + Σ (h_z σ^z_j + h_x σ^x_j) + h_1 σ^z_1 + h_L σ^z_L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinChainParams {
    pub sites: usize,
    pub j: f64,
    pub hz: f64,
    pub hx: f64,
    pub h1: f64,
    pub hl: f64,
}

impl SpinChainParams {
    pub fn preset(preset: Preset, sites: usize) -> Self {
        match preset {
            Preset::Chaotic => Self::chaotic(sites),
            Preset::Integrable => Self::integrable(sites),
        }
    }

    pub fn chaotic(sites: usize) -> Self {
        Self {
            sites,
            j: 1.0,
            hz: 0.3,
            hx: 1.1,
            h1: 0.25,
            hl: -0.25,
        }
    }

    /// Transverse-field Ising point (`h_z = h_1 = h_L = 0`).
    pub fn integrable(sites: usize) -> Self {
        Self {
            sites,
            j: 1.0,
            hz: 0.0,
            hx: 1.1,
            h1: 0.0,
            hl: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 {
            return Err(Error::invalid("spin chain needs at least one site"));
        }
        let couplings = [self.j, self.hz, self.hx, self.h1, self.hl];
        if couplings.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("spin chain couplings must be finite"));
        }
        Ok(())
    }

    /// Longitudinal field on each site including the boundary terms.
    pub fn longitudinal_fields(&self) -> Vec<f64> {
        let mut fields = vec![self.hz; self.sites];
        fields[0] += self.h1;
        fields[self.sites - 1] += self.hl;
        fields
    }

    pub fn hilbert_dim(&self) -> usize {
        1usize << self.sites
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub omega0: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(Error::invalid(format!(
                "system splitting must be positive, got {}",
                self.omega0
            )));
        }
        Ok(())
    }
}

/// One product term `σ^system_0 ⊗ σ^axis_site` of the interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingTerm {
    pub system: Axis,
    pub site: usize,
    pub axis: Axis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub kappa: f64,
    pub terms: Vec<CouplingTerm>,
}

impl CouplingSpec {
    /// `κ σ^x_0 ⊗ σ^x_1`.
    pub fn xx(kappa: f64) -> Self {
        Self {
            kappa,
            terms: vec![CouplingTerm {
                system: Axis::X,
                site: 1,
                axis: Axis::X,
            }],
        }
    }

    pub fn validate(&self, sites: usize) -> Result<()> {
        if !self.kappa.is_finite() {
            return Err(Error::invalid("coupling strength must be finite"));
        }
        if self.terms.is_empty() {
            return Err(Error::invalid("coupling needs at least one term"));
        }
        for term in &self.terms {
            if term.site == 0 || term.site > sites {
                return Err(Error::DimensionMismatch {
                    expected: sites,
                    found: term.site,
                });
            }
        }
        Ok(())
    }
}

/// A product of Pauli matrices acting on the given bits, times a real
/// coefficient.
#[derive(Clone, Debug)]
struct PauliString {
    coeff: f64,
    factors: Vec<(u32, Axis)>,
}

impl PauliString {
    fn new(coeff: f64, factors: Vec<(u32, Axis)>) -> Self {
        Self { coeff, factors }
    }

    fn is_real(&self) -> bool {
        self.factors.iter().filter(|(_, a)| *a == Axis::Y).count() % 2 == 0
    }

    /// Image of the basis state `col`: returns `(row, ⟨row|P|col⟩)`.
    #[inline]
    fn apply(&self, col: usize) -> (usize, c64) {
        let mut row = col;
        let mut phase = c64::new(1.0, 0.0);
        for &(bit, axis) in &self.factors {
            let up = (col >> bit) & 1 == 0;
            match axis {
                Axis::X => row ^= 1 << bit,
                Axis::Y => {
                    row ^= 1 << bit;
                    phase *= if up {
                        c64::new(0.0, 1.0)
                    } else {
                        c64::new(0.0, -1.0)
                    };
                }
                Axis::Z => {
                    if !up {
                        phase = -phase;
                    }
                }
            }
        }
        (row, phase)
    }
}

/// Dense Hermitian operator on `spins` qubits. Real symmetric storage is used
/// whenever every term is real.
#[derive(Clone, Debug)]
pub struct HermitianOperator {
    spins: usize,
    storage: DenseMatrix,
}

impl HermitianOperator {
    /// Wraps an explicit matrix. The caller guarantees Hermiticity; the lower
    /// triangle is mirrored into the upper one so the result is Hermitian
    /// bit-for-bit.
    pub fn from_real(spins: usize, mut m: Mat<f64>) -> Result<Self> {
        check_square(spins, m.nrows(), m.ncols())?;
        mirror_real(&mut m);
        Ok(Self {
            spins,
            storage: DenseMatrix::Real(m),
        })
    }

    pub fn from_complex(spins: usize, mut m: Mat<c64>) -> Result<Self> {
        check_square(spins, m.nrows(), m.ncols())?;
        mirror_complex(&mut m);
        Ok(Self {
            spins,
            storage: DenseMatrix::Complex(m),
        })
    }

    pub fn dim(&self) -> usize {
        1 << self.spins
    }

    pub fn spins(&self) -> usize {
        self.spins
    }

    pub fn is_real(&self) -> bool {
        matches!(self.storage, DenseMatrix::Real(_))
    }

    pub fn storage(&self) -> &DenseMatrix {
        &self.storage
    }

    pub fn as_real(&self) -> Option<MatRef<'_, f64>> {
        match &self.storage {
            DenseMatrix::Real(m) => Some(m.as_ref()),
            DenseMatrix::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<MatRef<'_, c64>> {
        match &self.storage {
            DenseMatrix::Real(_) => None,
            DenseMatrix::Complex(m) => Some(m.as_ref()),
        }
    }

    pub fn to_complex(&self) -> Mat<c64> {
        self.storage.to_complex()
    }

    pub fn get(&self, i: usize, j: usize) -> c64 {
        self.storage.get(i, j)
    }

    pub fn trace(&self) -> f64 {
        self.storage.trace().re
    }

    /// `max |H - H†|` over all entries.
    pub fn hermiticity_defect(&self) -> f64 {
        self.storage.hermiticity_defect()
    }

    /// `H |v⟩` for a vector in the same basis.
    pub fn apply(&self, v: &[c64]) -> Vec<c64> {
        self.storage.apply(v)
    }

    /// `⟨v|H|v⟩` (real for Hermitian `H`).
    pub fn expectation(&self, v: &[c64]) -> f64 {
        let hv = self.apply(v);
        v.iter().zip(&hv).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

fn check_square(spins: usize, rows: usize, cols: usize) -> Result<()> {
    let dim = 1usize << spins;
    if rows != dim || cols != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: rows.max(cols),
        });
    }
    Ok(())
}

fn mirror_real(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = m[(i, j)];
            m[(j, i)] = v;
        }
    }
}

fn mirror_complex(m: &mut Mat<c64>) {
    let n = m.nrows();
    for j in 0..n {
        m[(j, j)] = c64::new(m[(j, j)].re, 0.0);
        for i in (j + 1)..n {
            let v = m[(i, j)];
            m[(j, i)] = v.conj();
        }
    }
}

fn assemble(spins: usize, terms: &[PauliString], max_spins: usize) -> Result<HermitianOperator> {
    if spins == 0 {
        return Err(Error::invalid("operator needs at least one spin"));
    }
    if spins > max_spins {
        return Err(Error::invalid(format!(
            "{spins} spins exceeds the configured maximum of {max_spins}"
        )));
    }
    let dim = 1usize << spins;
    if terms.iter().all(PauliString::is_real) {
        let mut m = Mat::<f64>::zeros(dim, dim);
        for term in terms {
            for col in 0..dim {
                let (row, ph) = term.apply(col);
                m[(row, col)] += term.coeff * ph.re;
            }
        }
        HermitianOperator::from_real(spins, m)
    } else {
        let mut m = Mat::<c64>::zeros(dim, dim);
        for term in terms {
            for col in 0..dim {
                let (row, ph) = term.apply(col);
                m[(row, col)] += ph * term.coeff;
            }
        }
        HermitianOperator::from_complex(spins, m)
    }
}

/// Bit index of the spin at tensor position `pos` among `spins` spins.
fn bit_of(spins: usize, pos: usize) -> u32 {
    (spins - 1 - pos) as u32
}

/// `I ⊗ … ⊗ σ^axis ⊗ … ⊗ I` on an `sites`-spin chain, `site` in `1..=sites`.
pub fn pauli_site_operator(sites: usize, site: usize, axis: Axis) -> Result<HermitianOperator> {
    if sites == 0 {
        return Err(Error::invalid("chain needs at least one site"));
    }
    if site == 0 || site > sites {
        return Err(Error::invalid(format!("site {site} outside 1..={sites}")));
    }
    let term = PauliString::new(1.0, vec![(bit_of(sites, site - 1), axis)]);
    assemble(sites, &[term], DEFAULT_MAX_SPINS.max(sites))
}

/// Pauli terms of the chain Hamiltonian with bath site `j` at tensor
/// position `j - 1 + offset`.
fn chain_terms(params: &SpinChainParams, spins: usize, offset: usize) -> Vec<PauliString> {
    let pos = |site: usize| bit_of(spins, site - 1 + offset);
    let mut terms = Vec::with_capacity(3 * params.sites);
    for site in 1..params.sites {
        terms.push(PauliString::new(
            params.j,
            vec![(pos(site), Axis::Z), (pos(site + 1), Axis::Z)],
        ));
    }
    for (k, hz) in params.longitudinal_fields().into_iter().enumerate() {
        terms.push(PauliString::new(hz, vec![(pos(k + 1), Axis::Z)]));
        terms.push(PauliString::new(params.hx, vec![(pos(k + 1), Axis::X)]));
    }
    terms
}

pub fn build_bath_hamiltonian(params: &SpinChainParams) -> Result<HermitianOperator> {
    build_bath_hamiltonian_limited(params, DEFAULT_MAX_SPINS)
}

pub fn build_bath_hamiltonian_limited(
    params: &SpinChainParams,
    max_spins: usize,
) -> Result<HermitianOperator> {
    params.validate()?;
    assemble(
        params.sites,
        &chain_terms(params, params.sites, 0),
        max_spins,
    )
}

/// `H_S = (ω₀/2) σ^z` as a 2×2 real matrix.
pub fn build_system_hamiltonian(sys: &SystemParams) -> Result<HermitianOperator> {
    sys.validate()?;
    assemble(
        1,
        &[PauliString::new(sys.omega0 / 2.0, vec![(0, Axis::Z)])],
        1,
    )
}

/// `H = (ω₀/2) σ^z_0 + H_B + κ Σ σ^a_0 σ^b_site` on `L + 1` spins.
pub fn build_total_hamiltonian(
    sys: &SystemParams,
    bath: &SpinChainParams,
    coupling: &CouplingSpec,
) -> Result<HermitianOperator> {
    build_total_hamiltonian_limited(sys, bath, coupling, DEFAULT_MAX_SPINS)
}

pub fn build_total_hamiltonian_limited(
    sys: &SystemParams,
    bath: &SpinChainParams,
    coupling: &CouplingSpec,
    max_spins: usize,
) -> Result<HermitianOperator> {
    sys.validate()?;
    bath.validate()?;
    coupling.validate(bath.sites)?;
    let spins = bath.sites + 1;
    let mut terms = vec![PauliString::new(
        sys.omega0 / 2.0,
        vec![(bit_of(spins, 0), Axis::Z)],
    )];
    terms.extend(chain_terms(bath, spins, 1));
    for term in &coupling.terms {
        terms.push(PauliString::new(
            coupling.kappa,
            vec![
                (bit_of(spins, 0), term.system),
                (bit_of(spins, term.site), term.axis),
            ],
        ));
    }
    assemble(spins, &terms, max_spins)
}

/// Single-qubit Pauli matrix as a 2×2 complex array `[row][col]`.
pub fn pauli_2x2(axis: Axis) -> [[c64; 2]; 2] {
    let z = c64::new(0.0, 0.0);
    let one = c64::new(1.0, 0.0);
    let i = c64::new(0.0, 1.0);
    match axis {
        Axis::X => [[z, one], [one, z]],
        Axis::Y => [[z, -i], [i, z]],
        Axis::Z => [[one, z], [z, -one]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eigenvalues(op: &HermitianOperator) -> Vec<f64> {
        match op.storage() {
            DenseMatrix::Real(m) => m.self_adjoint_eigenvalues(faer::Side::Lower).unwrap(),
            DenseMatrix::Complex(m) => m.self_adjoint_eigenvalues(faer::Side::Lower).unwrap(),
        }
    }

    #[test]
    fn single_spin_sigma_z() {
        let op = pauli_site_operator(1, 1, Axis::Z).unwrap();
        assert_eq!(op.get(0, 0).re, 1.0);
        assert_eq!(op.get(1, 1).re, -1.0);
        assert_eq!(op.get(0, 1).re, 0.0);
    }

    #[test]
    fn second_site_sigma_x_is_block_antidiagonal() {
        let op = pauli_site_operator(2, 2, Axis::X).unwrap();
        let expected = [
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        for (i, row) in expected.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(op.get(i, j).re, v);
            }
        }
    }

    #[test]
    fn middle_site_sigma_z_pattern() {
        // bit inspection: site 2 of 3 is bit 1 of the index
        let op = pauli_site_operator(3, 2, Axis::Z).unwrap();
        let expected: Vec<f64> = (0..8)
            .map(|i| if (i >> 1) & 1 == 0 { 1.0 } else { -1.0 })
            .collect();
        assert_eq!(expected, vec![1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0]);
        for i in 0..8 {
            assert_eq!(op.get(i, i).re, expected[i]);
            for j in 0..8 {
                if i != j {
                    assert_eq!(op.get(i, j).norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn sigma_y_is_complex_and_hermitian() {
        let op = pauli_site_operator(2, 1, Axis::Y).unwrap();
        assert!(!op.is_real());
        assert_eq!(op.hermiticity_defect(), 0.0);
        // σ^y|0⟩ = i|1⟩ on the most significant bit
        assert_eq!(op.get(2, 0), c64::new(0.0, 1.0));
        assert_eq!(op.get(0, 2), c64::new(0.0, -1.0));
    }

    #[test]
    fn site_range_is_checked() {
        assert!(pauli_site_operator(3, 0, Axis::X).is_err());
        assert!(pauli_site_operator(3, 4, Axis::X).is_err());
        assert!(pauli_site_operator(0, 1, Axis::X).is_err());
    }

    #[test]
    fn one_site_chaotic_bath_closed_form() {
        let h = build_bath_hamiltonian(&SpinChainParams::chaotic(1)).unwrap();
        let ev = eigenvalues(&h);
        let expected = (0.3f64.powi(2) + 1.1f64.powi(2)).sqrt();
        assert!((expected - 1.140175425099138).abs() < 1e-12);
        assert!((ev[0] + expected).abs() < 1e-12);
        assert!((ev[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn bath_is_traceless_and_exactly_hermitian() {
        for l in 1..=7 {
            let h = build_bath_hamiltonian(&SpinChainParams::chaotic(l)).unwrap();
            assert!(h.trace().abs() < 1e-12);
            assert_eq!(h.hermiticity_defect(), 0.0);
        }
    }

    #[test]
    fn spin_limit_is_enforced() {
        let p = SpinChainParams::chaotic(5);
        assert!(build_bath_hamiltonian_limited(&p, 4).is_err());
        assert!(build_bath_hamiltonian_limited(&p, 5).is_ok());
        assert!(build_bath_hamiltonian(&SpinChainParams::chaotic(17)).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = SpinChainParams::chaotic(3);
        p.hx = f64::NAN;
        assert!(build_bath_hamiltonian(&p).is_err());
        assert!(SystemParams { omega0: 0.0 }.validate().is_err());
        let bad = CouplingSpec {
            kappa: 0.1,
            terms: vec![CouplingTerm {
                system: Axis::X,
                site: 4,
                axis: Axis::X,
            }],
        };
        assert!(build_total_hamiltonian(
            &SystemParams { omega0: 1.0 },
            &SpinChainParams::chaotic(3),
            &bad
        )
        .is_err());
    }

    #[test]
    fn total_hamiltonian_default_coupling_structure() {
        let sys = SystemParams { omega0: 1.525 };
        let bath = SpinChainParams::chaotic(3);
        let h = build_total_hamiltonian(&sys, &bath, &CouplingSpec::xx(0.15)).unwrap();
        assert_eq!(h.dim(), 16);
        assert!(h.is_real());
        let hb = build_bath_hamiltonian(&bath).unwrap();
        // diagonal: ±ω₀/2 plus bath diagonal
        for s in 0..2 {
            for b in 0..8 {
                let i = s * 8 + b;
                let sz = if s == 0 { 0.7625 } else { -0.7625 };
                assert!((h.get(i, i).re - sz - hb.get(b, b).re).abs() < 1e-14);
            }
        }
        // coupling flips the system bit and bath site 1 (bit 2 of the bath index)
        assert_eq!(h.get(8 + 4, 0).re, 0.15);
    }
}
