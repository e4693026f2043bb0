//! Density of states, polynomial entropy fit, microcanonical temperature and
//! heat capacity, and the canonical temperature of a finite spectrum.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Histogram of levels with uniform bins over `[E_min, E_max]`.
#[derive(Clone, Debug, Serialize)]
pub struct DensityOfStates {
    pub centers: Vec<f64>,
    pub counts: Vec<usize>,
    pub bin_width: f64,
}

impl DensityOfStates {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Count-weighted skewness of the level distribution.
    pub fn skewness(&self) -> f64 {
        let n = self.total() as f64;
        let mean = self
            .centers
            .iter()
            .zip(&self.counts)
            .map(|(e, &c)| e * c as f64)
            .sum::<f64>()
            / n;
        let moment = |p: i32| {
            self.centers
                .iter()
                .zip(&self.counts)
                .map(|(e, &c)| (e - mean).powi(p) * c as f64)
                .sum::<f64>()
                / n
        };
        moment(3) / moment(2).powf(1.5)
    }
}

fn mean_spacing(levels: &[f64]) -> f64 {
    let (lo, hi) = extent(levels);
    (hi - lo) / (levels.len().max(2) - 1) as f64
}

fn extent(levels: &[f64]) -> (f64, f64) {
    levels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Bandwidth/100, raised to at least 20 mean level spacings and capped
/// just below a tenth of the bandwidth.
pub fn default_bin_width(levels: &[f64]) -> f64 {
    let (lo, hi) = extent(levels);
    let bw = hi - lo;
    (bw / 100.0)
        .max(20.0 * mean_spacing(levels))
        .min(0.099 * bw)
}

/// Histogram of `levels` with bins of width `bin_width`, which must exceed
/// the mean level spacing and stay below a tenth of the bandwidth.
pub fn density_of_states(levels: &[f64], bin_width: f64) -> Result<DensityOfStates> {
    if levels.len() < 2 {
        return Err(Error::invalid(
            "density of states needs at least two levels",
        ));
    }
    let (lo, hi) = extent(levels);
    let bw = hi - lo;
    let spacing = mean_spacing(levels);
    if !(bin_width > spacing && bin_width < 0.1 * bw) {
        return Err(Error::OutOfRange {
            value: bin_width,
            lo: spacing,
            hi: 0.1 * bw,
        });
    }
    density_of_states_unchecked(levels, bin_width)
}

/// Histogram without the bin-width preconditions; bins start at the lowest
/// level.
pub fn density_of_states_unchecked(levels: &[f64], bin_width: f64) -> Result<DensityOfStates> {
    if levels.is_empty() || levels.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("levels must be finite and nonempty"));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::invalid("bin width must be positive"));
    }
    let (lo, hi) = extent(levels);
    let nbins = (((hi - lo) / bin_width).ceil() as usize).max(1);
    let mut counts = vec![0usize; nbins];
    for &e in levels {
        let k = (((e - lo) / bin_width) as usize).min(nbins - 1);
        counts[k] += 1;
    }
    let centers = (0..nbins)
        .map(|k| lo + (k as f64 + 0.5) * bin_width)
        .collect();
    Ok(DensityOfStates {
        centers,
        counts,
        bin_width,
    })
}

/// `S(E) = log(Ω(E) ΔE)` as a polynomial in `x = (E − shift) / scale`.
#[derive(Clone, Debug, Serialize)]
pub struct EntropyFit {
    /// Coefficients in ascending powers of `x`.
    pub coeffs: Vec<f64>,
    pub degree: usize,
    pub domain: (f64, f64),
    pub shift: f64,
    pub scale: f64,
    /// Largest `|log count − S(E)|` over the fitted bins.
    pub max_residual: f64,
}

impl EntropyFit {
    fn check(&self, e: f64) -> Result<f64> {
        let (lo, hi) = self.domain;
        if !(e >= lo && e <= hi) {
            return Err(Error::OutOfRange { value: e, lo, hi });
        }
        Ok((e - self.shift) / self.scale)
    }

    fn derivative(&self, order: usize, x: f64) -> f64 {
        let mut acc = 0.0;
        for (p, &c) in self.coeffs.iter().enumerate().skip(order) {
            let falling: f64 = (0..order).map(|k| (p - k) as f64).product();
            acc += c * falling * x.powi((p - order) as i32);
        }
        acc / self.scale.powi(order as i32)
    }

    pub fn entropy(&self, e: f64) -> Result<f64> {
        let x = self.check(e)?;
        Ok(self.derivative(0, x))
    }

    /// `dS/dE`.
    pub fn beta(&self, e: f64) -> Result<f64> {
        let x = self.check(e)?;
        Ok(self.derivative(1, x))
    }

    /// `d²S/dE²`.
    pub fn beta_slope(&self, e: f64) -> Result<f64> {
        let x = self.check(e)?;
        Ok(self.derivative(2, x))
    }

    /// Energy in the domain at which `dS/dE = beta`, by bisection. The fit
    /// must be monotone in `β` over the domain.
    pub fn energy_at_beta(&self, beta: f64) -> Result<f64> {
        let (mut lo, mut hi) = self.domain;
        let f = |e: f64| self.derivative(1, (e - self.shift) / self.scale) - beta;
        let (flo, fhi) = (f(lo), f(hi));
        if flo.signum() == fhi.signum() {
            return Err(Error::OutOfRange {
                value: beta,
                lo: fhi.min(flo) + beta,
                hi: fhi.max(flo) + beta,
            });
        }
        let rising = fhi > flo;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == rising {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Count-weighted least-squares polynomial fit of `log count` against bin
/// centre, using nonempty bins only.
pub fn entropy_fit(dos: &DensityOfStates, degree: usize) -> Result<EntropyFit> {
    if degree < 2 {
        return Err(Error::invalid("entropy fit degree must be at least 2"));
    }
    let pts: Vec<(f64, f64, f64)> = dos
        .centers
        .iter()
        .zip(&dos.counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&e, &c)| (e, (c as f64).ln(), c as f64))
        .collect();
    if pts.len() < degree + 2 {
        return Err(Error::invalid(format!(
            "entropy fit of degree {degree} needs at least {} nonempty bins, found {}",
            degree + 2,
            pts.len()
        )));
    }
    let lo = pts[0].0;
    let hi = pts[pts.len() - 1].0;
    let shift = 0.5 * (lo + hi);
    let scale = 0.5 * (hi - lo);
    let a = DMatrix::from_fn(pts.len(), degree + 1, |i, p| {
        let (e, _, w) = pts[i];
        w.sqrt() * ((e - shift) / scale).powi(p as i32)
    });
    let b = DVector::from_iterator(pts.len(), pts.iter().map(|&(_, s, w)| w.sqrt() * s));
    let coeffs = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::numerical(format!("entropy fit failed: {e}")))?;
    let mut fit = EntropyFit {
        coeffs: coeffs.iter().copied().collect(),
        degree,
        domain: (lo, hi),
        shift,
        scale,
        max_residual: 0.0,
    };
    fit.max_residual = pts
        .iter()
        .map(|&(e, s, _)| (s - fit.derivative(0, (e - shift) / scale)).abs())
        .fold(0.0, f64::max);
    Ok(fit)
}

pub fn inverse_temperature(fit: &EntropyFit, e: f64) -> Result<f64> {
    fit.beta(e)
}

/// `C = −β² (dβ/dE)⁻¹`. Vanishes at `β = 0`.
pub fn heat_capacity(fit: &EntropyFit, e: f64) -> Result<f64> {
    let beta = fit.beta(e)?;
    let slope = fit.beta_slope(e)?;
    if slope.abs() < 1e-12 {
        return Err(Error::numerical(
            "heat capacity undefined where dβ/dE vanishes",
        ));
    }
    Ok(-beta * beta / slope)
}

/// `⟨H⟩_β = Σ E_n e^{−βE_n} / Z`, evaluated with shifted exponents.
pub fn canonical_energy(levels: &[f64], beta: f64) -> f64 {
    let shift = levels
        .iter()
        .map(|&e| -beta * e)
        .fold(f64::NEG_INFINITY, f64::max);
    let (num, den) = levels.iter().fold((0.0, 0.0), |(n, d), &e| {
        let w = (-beta * e - shift).exp();
        (n + e * w, d + w)
    });
    num / den
}

/// Largest `|β|` searched, in units of inverse bandwidth.
pub const BETA_MAX_BANDWIDTHS: f64 = 50.0;

/// Solves `⟨H⟩_β = e_target` by bisection on `β ∈ [−β_max, β_max]` with
/// `β_max = 50 / bandwidth`.
pub fn canonical_inverse_temperature(levels: &[f64], e_target: f64) -> Result<f64> {
    let (lo, hi) = extent(levels);
    if !(e_target > lo && e_target < hi) {
        return Err(Error::OutOfRange {
            value: e_target,
            lo,
            hi,
        });
    }
    let bw = hi - lo;
    let beta_max = BETA_MAX_BANDWIDTHS / bw;
    let tol = 1e-8 * bw;
    let (mut b_lo, mut b_hi) = (-beta_max, beta_max);
    // ⟨H⟩ decreases with β.
    if canonical_energy(levels, b_hi) > e_target || canonical_energy(levels, b_lo) < e_target {
        return Err(Error::numerical(format!(
            "target energy {e_target} not reached within |β| ≤ {beta_max}"
        )));
    }
    for _ in 0..300 {
        let mid = 0.5 * (b_lo + b_hi);
        let e = canonical_energy(levels, mid);
        if (e - e_target).abs() < tol {
            return Ok(mid);
        }
        if e > e_target {
            b_lo = mid;
        } else {
            b_hi = mid;
        }
    }
    let mid = 0.5 * (b_lo + b_hi);
    if (canonical_energy(levels, mid) - e_target).abs() < tol {
        Ok(mid)
    } else {
        Err(Error::numerical("canonical temperature bisection stalled"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_fit(curv: f64, center: f64) -> EntropyFit {
        EntropyFit {
            coeffs: vec![0.0, 0.0, -0.5 * curv],
            degree: 2,
            domain: (-10.0, 10.0),
            shift: center,
            scale: 1.0,
            max_residual: 0.0,
        }
    }

    #[test]
    fn two_levels_unit_bins() {
        let dos = density_of_states_unchecked(&[-1.0, 1.0], 1.0).unwrap();
        assert_eq!(dos.counts, vec![1, 1]);
    }

    #[test]
    fn bin_width_preconditions() {
        let levels: Vec<f64> = (0..101).map(|k| k as f64 * 0.01).collect();
        assert!(density_of_states(&levels, 0.005).is_err());
        assert!(density_of_states(&levels, 0.2).is_err());
        let dos = density_of_states(&levels, 0.05).unwrap();
        assert_eq!(dos.total(), 101);
    }

    #[test]
    fn flat_dos_has_zero_beta() {
        let dos = DensityOfStates {
            centers: (0..20).map(|k| k as f64 * 0.05).collect(),
            counts: vec![50; 20],
            bin_width: 0.05,
        };
        let fit = entropy_fit(&dos, 2).unwrap();
        assert!(fit.beta(0.5).unwrap().abs() < 1e-10);
        assert!(fit.beta_slope(0.5).unwrap().abs() < 1e-10);
        assert!(heat_capacity(&fit, 0.5).is_err());
    }

    #[test]
    fn gaussian_temperature_and_capacity() {
        let sigma2 = 2.0;
        let fit = quadratic_fit(1.0 / sigma2, 0.5);
        assert_eq!(inverse_temperature(&fit, 0.5).unwrap(), 0.0);
        let e = -1.5;
        let beta = inverse_temperature(&fit, e).unwrap();
        assert!((beta - (-(e - 0.5) / sigma2)).abs() < 1e-14);
        let c = heat_capacity(&fit, e).unwrap();
        assert!((c - sigma2 * beta * beta).abs() < 1e-12);
        assert_eq!(heat_capacity(&fit, 0.5).unwrap(), 0.0);
        assert!(fit.beta(11.0).is_err());
        assert!((fit.energy_at_beta(beta).unwrap() - e).abs() < 1e-10);
    }

    #[test]
    fn two_level_canonical_beta() {
        let levels = [-1.0, 1.0];
        let beta = canonical_inverse_temperature(&levels, -(1.0f64).tanh()).unwrap();
        assert!((beta - 1.0).abs() < 1e-7);
        assert!(canonical_inverse_temperature(&levels, 0.0).unwrap().abs() < 1e-8);
        assert!(canonical_inverse_temperature(&levels, 1.0).is_err());
    }
}
