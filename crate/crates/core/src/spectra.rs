//! Dense eigendecomposition, eigenbasis transforms, a binary eigensystem
//! cache and level-spacing ratio statistics.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use faer::{c64, Mat, Side};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hamiltonian::HermitianOperator;
use crate::linalg::{self, DenseMatrix};

/// Ascending eigenvalues with orthonormal eigenvectors stored column-wise.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    eigenvalues: Vec<f64>,
    vectors: DenseMatrix,
}

impl EigenSystem {
    /// Assembles an eigensystem from parts, checking shapes and ordering.
    pub fn from_parts(eigenvalues: Vec<f64>, vectors: DenseMatrix) -> Result<Self> {
        let n = eigenvalues.len();
        if n == 0 {
            return Err(Error::invalid("empty spectrum"));
        }
        if vectors.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: vectors.dim(),
            });
        }
        if eigenvalues.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::invalid("eigenvalues must be finite and ascending"));
        }
        Ok(Self {
            eigenvalues,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn vectors(&self) -> &DenseMatrix {
        &self.vectors
    }

    pub fn is_real(&self) -> bool {
        self.vectors.is_real()
    }

    /// Eigenvector `|n⟩` in the computational basis.
    pub fn vector(&self, n: usize) -> Vec<c64> {
        (0..self.dim()).map(|i| self.vectors.get(i, n)).collect()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    pub fn bandwidth(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn mean_energy(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.dim() as f64
    }

    /// Index of the eigenvalue nearest `e`; ties resolve to the lower index.
    pub fn nearest_index(&self, e: f64) -> usize {
        let p = self.eigenvalues.partition_point(|&v| v < e);
        if p == 0 {
            return 0;
        }
        if p == self.dim() {
            return p - 1;
        }
        if (e - self.eigenvalues[p - 1]).abs() <= (self.eigenvalues[p] - e).abs() {
            p - 1
        } else {
            p
        }
    }

    /// Coefficients `⟨n|ψ⟩` of a computational-basis vector.
    pub fn project(&self, psi: &[c64]) -> Result<Vec<c64>> {
        let n = self.dim();
        if psi.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: psi.len(),
            });
        }
        let out = (0..n)
            .map(|k| match &self.vectors {
                DenseMatrix::Real(v) => v.col(k).iter().zip(psi).map(|(&a, &p)| p * a).sum::<c64>(),
                DenseMatrix::Complex(v) => v
                    .col(k)
                    .iter()
                    .zip(psi)
                    .map(|(a, &p)| a.conj() * p)
                    .sum::<c64>(),
            })
            .collect();
        Ok(out)
    }

    /// `Σ_n c_n |n⟩` in the computational basis.
    pub fn expand(&self, coeffs: &[c64]) -> Result<Vec<c64>> {
        if coeffs.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: coeffs.len(),
            });
        }
        Ok(self.vectors.apply(coeffs))
    }

    /// `max |V†V − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = match &self.vectors {
            DenseMatrix::Real(v) => DenseMatrix::Real(linalg::mul_real(v.transpose(), v.as_ref())),
            DenseMatrix::Complex(v) => {
                DenseMatrix::Complex(linalg::mul_adjoint_complex(v.as_ref(), v.as_ref()))
            }
        };
        let n = self.dim();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram.get(i, j) - c64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// `max |H V − V Λ|`.
    pub fn residual(&self, h: &HermitianOperator) -> Result<f64> {
        if h.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: h.dim(),
            });
        }
        let n = self.dim();
        let mut worst = 0.0f64;
        for k in 0..n {
            let v = self.vector(k);
            let hv = h.apply(&v);
            for (a, b) in hv.iter().zip(&v) {
                worst = worst.max((a - b * self.eigenvalues[k]).norm());
            }
        }
        Ok(worst)
    }
}

fn fix_signs_real(u: &mut Mat<f64>) {
    for k in 0..u.ncols() {
        let mut best = 0usize;
        for i in 0..u.nrows() {
            if u[(i, k)].abs() > u[(best, k)].abs() {
                best = i;
            }
        }
        if u[(best, k)] < 0.0 {
            for i in 0..u.nrows() {
                u[(i, k)] = -u[(i, k)];
            }
        }
    }
}

fn fix_signs_complex(u: &mut Mat<c64>) {
    for k in 0..u.ncols() {
        let mut best = 0usize;
        for i in 0..u.nrows() {
            if u[(i, k)].norm() > u[(best, k)].norm() {
                best = i;
            }
        }
        let pivot = u[(best, k)];
        if pivot.norm() == 0.0 {
            continue;
        }
        let phase = pivot.conj() / pivot.norm();
        for i in 0..u.nrows() {
            u[(i, k)] *= phase;
        }
        u[(best, k)] = c64::new(u[(best, k)].norm(), 0.0);
    }
}

/// Full eigendecomposition of a dense Hermitian matrix.
///
/// Each eigenvector is normalized so that its largest-magnitude component is
/// positive real.
pub fn diagonalize_matrix(m: &DenseMatrix) -> Result<EigenSystem> {
    let dim = m.dim();
    if dim == 0 {
        return Err(Error::invalid("cannot diagonalize an empty matrix"));
    }
    let (values, vectors) = match m {
        DenseMatrix::Real(h) => {
            let evd = h
                .self_adjoint_eigen(Side::Lower)
                .map_err(|_| Error::EigenSolver { dim })?;
            let values: Vec<f64> = evd.S().column_vector().iter().copied().collect();
            let mut u = evd.U().to_owned();
            fix_signs_real(&mut u);
            (values, DenseMatrix::Real(u))
        }
        DenseMatrix::Complex(h) => {
            let evd = h
                .self_adjoint_eigen(Side::Lower)
                .map_err(|_| Error::EigenSolver { dim })?;
            let values: Vec<f64> = evd.S().column_vector().iter().map(|z| z.re).collect();
            let mut u = evd.U().to_owned();
            fix_signs_complex(&mut u);
            (values, DenseMatrix::Complex(u))
        }
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenSolver { dim });
    }
    EigenSystem::from_parts(values, vectors)
}

pub fn diagonalize(h: &HermitianOperator) -> Result<EigenSystem> {
    diagonalize_matrix(h.storage())
}

/// `V† A V` for an operator given in the computational basis.
pub fn to_eigenbasis_matrix(op: &DenseMatrix, eig: &EigenSystem) -> Result<DenseMatrix> {
    if op.dim() != eig.dim() {
        return Err(Error::DimensionMismatch {
            expected: eig.dim(),
            found: op.dim(),
        });
    }
    let mut out = match (op, eig.vectors()) {
        (DenseMatrix::Real(a), DenseMatrix::Real(v)) => {
            let av = linalg::mul_real(a.as_ref(), v.as_ref());
            DenseMatrix::Real(linalg::mul_real(v.transpose(), av.as_ref()))
        }
        (a, v) => {
            let a = a.to_complex();
            let v = v.to_complex();
            let av = linalg::mul_complex(a.as_ref(), v.as_ref());
            DenseMatrix::Complex(linalg::mul_adjoint_complex(v.as_ref(), av.as_ref()))
        }
    };
    out.hermitize();
    Ok(out)
}

pub fn to_eigenbasis(op: &HermitianOperator, eig: &EigenSystem) -> Result<DenseMatrix> {
    to_eigenbasis_matrix(op.storage(), eig)
}

/// Consecutive-gap ratios over a central slice of the spectrum.
#[derive(Clone, Debug, Serialize)]
pub struct GapStatistics {
    pub ratios: Vec<f64>,
    pub mean_ratio: f64,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub degenerate_gaps: usize,
    pub levels_used: usize,
}

pub const DEFAULT_CENTRAL_FRACTION: f64 = 0.5;
const RATIO_BINS: usize = 20;

/// `r_n = min(s_n, s_{n+1}) / max(s_n, s_{n+1})` on the central
/// `central_fraction` of the sorted levels.
pub fn gap_ratios(eigenvalues: &[f64], central_fraction: f64) -> Result<GapStatistics> {
    if !(central_fraction > 0.0 && central_fraction <= 1.0) {
        return Err(Error::OutOfRange {
            value: central_fraction,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let mut levels = eigenvalues.to_vec();
    if levels.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("eigenvalues must be finite"));
    }
    levels.sort_by(f64::total_cmp);
    let n = levels.len();
    let keep = ((n as f64) * central_fraction).round() as usize;
    let start = (n - keep.min(n)) / 2;
    let central = &levels[start..start + keep.min(n)];
    let mut distinct = central.to_vec();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::invalid(
            "gap ratios need at least three distinct levels in the central window",
        ));
    }
    let gaps: Vec<f64> = central.windows(2).map(|w| w[1] - w[0]).collect();
    let mut degenerate_gaps = 0;
    let ratios: Vec<f64> = gaps
        .windows(2)
        .map(|s| {
            let (lo, hi) = if s[0] < s[1] {
                (s[0], s[1])
            } else {
                (s[1], s[0])
            };
            if lo == 0.0 {
                degenerate_gaps += 1;
                0.0
            } else {
                lo / hi
            }
        })
        .collect();
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let bin_edges: Vec<f64> = (0..=RATIO_BINS)
        .map(|k| k as f64 / RATIO_BINS as f64)
        .collect();
    let mut counts = vec![0usize; RATIO_BINS];
    for &r in &ratios {
        let k = ((r * RATIO_BINS as f64) as usize).min(RATIO_BINS - 1);
        counts[k] += 1;
    }
    Ok(GapStatistics {
        ratios,
        mean_ratio,
        bin_edges,
        counts,
        degenerate_gaps,
        levels_used: central.len(),
    })
}

const CACHE_MAGIC: &[u8; 7] = b"ETHEIG1";
const FLAG_REAL: u8 = 0;
const FLAG_COMPLEX: u8 = 1;

/// SHA-256 of the JSON serialization of a model description.
pub fn spec_hash<T: Serialize>(spec: &T) -> Result<[u8; 32]> {
    let bytes = serde_json::to_vec(spec)?;
    Ok(Sha256::digest(&bytes).into())
}

/// Cache file name for a given spec hash.
pub fn cache_file_name(hash: &[u8; 32]) -> String {
    format!("{}.etheig", hex::encode(&hash[..16]))
}

/// Writes `eig` to `path` atomically (temporary file, then rename).
pub fn write_cache(path: &Path, eig: &EigenSystem, hash: &[u8; 32]) -> Result<()> {
    let cache_err = |reason: String| Error::Cache {
        path: path.to_path_buf(),
        reason,
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = tmp_path(path);
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(eig.dim() as u64).to_le_bytes())?;
        w.write_all(&[if eig.is_real() {
            FLAG_REAL
        } else {
            FLAG_COMPLEX
        }])?;
        w.write_all(hash)?;
        for v in eig.eigenvalues() {
            w.write_all(&v.to_le_bytes())?;
        }
        match eig.vectors() {
            DenseMatrix::Real(u) => {
                for j in 0..u.ncols() {
                    for v in u.col(j).iter() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
            DenseMatrix::Complex(u) => {
                for j in 0..u.ncols() {
                    for v in u.col(j).iter() {
                        w.write_all(&v.re.to_le_bytes())?;
                        w.write_all(&v.im.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path).map_err(|e| cache_err(format!("rename failed: {e}")))?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Reads an eigensystem written by [`write_cache`]. When `expected_hash` is
/// given, a header mismatch is reported as an error.
pub fn read_cache(path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<EigenSystem> {
    let cache_err = |reason: &str| Error::Cache {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(cache_err("bad magic"));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let dim = u64::from_le_bytes(word) as usize;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    if let Some(expected) = expected_hash {
        if &hash != expected {
            return Err(cache_err("spec hash mismatch"));
        }
    }
    let values = (0..dim)
        .map(|_| read_f64(&mut r))
        .collect::<std::io::Result<Vec<f64>>>()?;
    let vectors = match flag[0] {
        FLAG_REAL => {
            let mut u = Mat::<f64>::zeros(dim, dim);
            for j in 0..dim {
                for i in 0..dim {
                    u[(i, j)] = read_f64(&mut r)?;
                }
            }
            DenseMatrix::Real(u)
        }
        FLAG_COMPLEX => {
            let mut u = Mat::<c64>::zeros(dim, dim);
            for j in 0..dim {
                for i in 0..dim {
                    let re = read_f64(&mut r)?;
                    let im = read_f64(&mut r)?;
                    u[(i, j)] = c64::new(re, im);
                }
            }
            DenseMatrix::Complex(u)
        }
        _ => return Err(cache_err("unknown storage flag")),
    };
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(cache_err("trailing bytes"));
    }
    EigenSystem::from_parts(values, vectors)
}

/// Diagonalizes `h`, reusing `cache_dir/<hash>.etheig` when present.
pub fn diagonalize_cached(
    h: &HermitianOperator,
    hash: &[u8; 32],
    cache_dir: Option<&Path>,
) -> Result<EigenSystem> {
    let Some(dir) = cache_dir else {
        return diagonalize(h);
    };
    let path = dir.join(cache_file_name(hash));
    if path.exists() {
        if let Ok(eig) = read_cache(&path, Some(hash)) {
            if eig.dim() == h.dim() {
                return Ok(eig);
            }
        }
    }
    let eig = diagonalize(h)?;
    write_cache(&path, &eig, hash)?;
    Ok(eig)
}
