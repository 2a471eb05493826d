//! Deterministic equivalent of the random-feature teacher risk.
//!
//! `nu` solves `m = sum_i s_i / (s_i + nu)` (with multiplicity) and the risk is
//! `nu * sum_i beta_i^2 / (s_i + nu)`.

use crate::error::{Error, Result};
use crate::spectrum::KernelSpectrum;

pub const NU_MAX_ITER: usize = 80;
pub const NU_RESIDUAL_REL: f64 = 1e-10;

/// Grouped eigenvalues with target weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DetEquivProblem {
    /// Eigenvalue per group, nonincreasing.
    pub s: Vec<f64>,
    pub multiplicity: Vec<f64>,
    /// `s * multiplicity`, kept separately so huge multiplicities never overflow.
    pub mass: Vec<f64>,
    /// Total squared target coefficient per group.
    pub beta2: Vec<f64>,
    pub m: f64,
}

impl DetEquivProblem {
    pub fn new(s: Vec<f64>, multiplicity: Vec<f64>, beta2: Vec<f64>, m: f64) -> Result<Self> {
        let mass = s.iter().zip(&multiplicity).map(|(a, b)| a * b).collect();
        Self::with_mass(s, multiplicity, mass, beta2, m)
    }

    fn with_mass(s: Vec<f64>, multiplicity: Vec<f64>, mass: Vec<f64>, beta2: Vec<f64>, m: f64) -> Result<Self> {
        if s.len() != multiplicity.len() || s.len() != beta2.len() {
            return Err(Error::InvalidArgument("group vectors differ in length".into()));
        }
        if s.windows(2).any(|w| w[1] > w[0]) || s.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidSpectrum("eigenvalues must be nonnegative and nonincreasing".into()));
        }
        let total: f64 = beta2.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidTarget(format!("target weights sum to {total}, not 1")));
        }
        if !(m > 0.0) {
            return Err(Error::InvalidArgument(format!("m = {m} must be positive")));
        }
        Ok(DetEquivProblem { s, multiplicity, mass, beta2, m })
    }

    /// Problem for a kernel spectrum and per-group target mass.
    pub fn from_spectrum(spectrum: &KernelSpectrum, beta2: Vec<f64>, m: usize) -> Result<Self> {
        let g = &spectrum.groups;
        Self::with_mass(
            g.iter().map(|x| x.eigenvalue).collect(),
            g.iter().map(|x| x.multiplicity).collect(),
            g.iter().map(|x| x.mass).collect(),
            beta2,
            m as f64,
        )
    }

    /// Number of eigendirections with nonzero eigenvalue.
    pub fn nonzero_count(&self) -> f64 {
        self.s
            .iter()
            .zip(&self.multiplicity)
            .filter(|(s, _)| **s > 0.0)
            .map(|(_, c)| c)
            .sum()
    }

    /// `tr(S (S + nu)^{-1})`.
    pub fn effective_dim(&self, nu: f64) -> f64 {
        self.s
            .iter()
            .zip(&self.mass)
            .zip(&self.multiplicity)
            .filter(|((s, _), _)| **s > 0.0)
            .map(|((s, mass), c)| if nu == 0.0 { *c } else { mass / (s + nu) })
            .sum()
    }

    /// Upper end of the bisection bracket, `sum_i s_i / m`.
    pub fn bracket(&self) -> f64 {
        self.mass.iter().sum::<f64>() / self.m
    }
}

/// Root of `tr(S (S + nu)^{-1}) = m` by bisection.
pub fn solve_nu(p: &DetEquivProblem) -> Result<f64> {
    let count = p.nonzero_count();
    if !(p.m < count) {
        return Err(Error::NoPositiveRoot { m: p.m, count });
    }
    let (mut lo, mut hi) = (0.0, p.bracket());
    let mut nu = 0.5 * (lo + hi);
    for _ in 0..NU_MAX_ITER {
        nu = 0.5 * (lo + hi);
        let r = p.effective_dim(nu) - p.m;
        if r == 0.0 || hi - lo <= f64::EPSILON * hi {
            break;
        }
        if r > 0.0 {
            lo = nu;
        } else {
            hi = nu;
        }
    }
    Ok(nu)
}

/// `|m - tr(S (S + nu)^{-1})|`.
pub fn residual(p: &DetEquivProblem, nu: f64) -> f64 {
    (p.m - p.effective_dim(nu)).abs()
}

/// `nu * sum_i beta_i^2 / (s_i + nu)`.
pub fn det_risk(p: &DetEquivProblem, nu: f64) -> f64 {
    if nu == 0.0 {
        return 0.0;
    }
    nu * p
        .s
        .iter()
        .zip(&p.beta2)
        .map(|(s, b)| b / (s + nu))
        .sum::<f64>()
}

/// Comparison of empirical teacher losses with the deterministic equivalent.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub median: f64,
    pub det_risk: f64,
    pub rel_gap: f64,
    pub min: f64,
    pub max: f64,
}

pub fn universality_gap(p: &DetEquivProblem, samples: &[f64]) -> Result<GapReport> {
    if samples.len() < 5 {
        return Err(Error::InvalidArgument("need at least 5 empirical losses".into()));
    }
    let nu = solve_nu(p)?;
    let risk = det_risk(p, nu);
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = crate::experiments::median(&v);
    Ok(GapReport {
        median,
        det_risk: risk,
        rel_gap: (median - risk).abs() / risk,
        min: v[0],
        max: v[v.len() - 1],
    })
}

/// Fitted constants for the upper shape `m^-1 d^(k+1)` and lower shape `m^-alpha d^2`, `alpha = (d+2)/(d-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskBands {
    pub alpha: f64,
    pub c_upper: f64,
    pub c_lower: f64,
}

pub fn fit_risk_bands(d: usize, k: usize, sweep: &[(f64, f64)]) -> RiskBands {
    let df = d as f64;
    let alpha = (df + 2.0) / (df - 2.0);
    let mut c_upper: f64 = 0.0;
    let mut c_lower = f64::INFINITY;
    for &(m, l) in sweep {
        c_upper = c_upper.max(l / (df.powi(k as i32 + 1) / m));
        c_lower = c_lower.min(l / (m.powf(-alpha) * df * df));
    }
    RiskBands { alpha, c_upper, c_lower }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_eigenvalues() {
        let (s, n, m) = (0.3, 50.0, 20.0);
        let p = DetEquivProblem::new(vec![s], vec![n], vec![1.0], m).unwrap();
        let nu = solve_nu(&p).unwrap();
        let exact = s * (n - m) / m;
        assert!((nu - exact).abs() < 1e-12);
        assert!((det_risk(&p, nu) - (n - m) / n).abs() < 1e-12);
    }

    #[test]
    fn no_root_when_m_too_large() {
        let p = DetEquivProblem::new(vec![1.0, 0.0], vec![3.0, 5.0], vec![1.0, 0.0], 3.0).unwrap();
        assert!(matches!(solve_nu(&p), Err(Error::NoPositiveRoot { .. })));
    }

    #[test]
    fn nu_vanishes_near_full_count() {
        let p = DetEquivProblem::new(vec![1.0, 0.5], vec![10.0, 10.0], vec![1.0, 0.0], 19.999).unwrap();
        let nu = solve_nu(&p).unwrap();
        assert!(nu < 1e-3);
        assert_eq!(det_risk(&p, 0.0), 0.0);
    }

    #[test]
    fn unnormalized_target_rejected() {
        assert!(DetEquivProblem::new(vec![1.0], vec![2.0], vec![0.5], 1.0).is_err());
    }
}
