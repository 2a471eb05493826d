//! Kernel spectra for the ReLU sphere model and the diagonal linear model.
//!
//! ReLU on the unit sphere: the induced kernel has eigenvalue `sigma_k^2` with
//! multiplicity `N_k` (spherical harmonics of order `k`). The series sums to
//! `E[relu(u.x)^2] = 1/(2d)`, and truncation tolerances are relative to that total.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;
use std::fmt;
use std::str::FromStr;

/// Default relative truncation tolerance for the ReLU Mercer series.
pub const DEFAULT_TRUNC_TOL: f64 = 1e-8;
/// Relative tolerance under which two eigenvalues are merged into one group.
pub const TIE_REL: f64 = 1e-12;
/// Hard cap on the harmonic order scanned during truncation.
const MAX_ORDER: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelTag {
    ReluSphere,
    LinearDiagonal,
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelTag::ReluSphere => "relu_sphere",
            ModelTag::LinearDiagonal => "linear_diagonal",
        })
    }
}

impl FromStr for ModelTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" | "relu_sphere" => Ok(ModelTag::ReluSphere),
            "linear" | "linear_diagonal" => Ok(ModelTag::LinearDiagonal),
            other => Err(Error::Parse(format!("unknown model tag `{other}`"))),
        }
    }
}

/// One eigengroup: a shared eigenvalue and its multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub eigenvalue: f64,
    pub ln_eigenvalue: f64,
    /// Multiplicity as a float; ReLU multiplicities outgrow every integer type.
    pub multiplicity: f64,
    pub ln_multiplicity: f64,
    /// Harmonic order (ReLU) or position of the tier (linear).
    pub order: usize,
    /// `eigenvalue * multiplicity`, computed in log space.
    pub mass: f64,
}

/// Harmonic dimensions are integers; snap them while f64 still represents every integer.
fn integral_count(m: f64) -> f64 {
    if m < 9.0e15 { m.round() } else { m }
}

impl Group {
    fn from_logs(ln_eigenvalue: f64, ln_multiplicity: f64, order: usize) -> Self {
        Group {
            eigenvalue: ln_eigenvalue.exp(),
            ln_eigenvalue,
            multiplicity: integral_count(ln_multiplicity.exp()),
            ln_multiplicity,
            order,
            mass: (ln_eigenvalue + ln_multiplicity).exp(),
        }
    }

    fn linear(psi: f64, count: usize, order: usize) -> Self {
        Group {
            eigenvalue: psi,
            ln_eigenvalue: psi.ln(),
            multiplicity: count as f64,
            ln_multiplicity: (count as f64).ln(),
            order,
            mass: psi * count as f64,
        }
    }
}

/// Grouped eigenvalues of a kernel, strictly descending.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpectrum {
    pub model: ModelTag,
    pub d: usize,
    pub groups: Vec<Group>,
    /// Sum of eigenvalue times multiplicity over the stored groups.
    pub trace_total: f64,
    /// Trace of the untruncated kernel (`1/(2d)` for ReLU).
    pub full_trace: f64,
    /// Largest stored harmonic order (ReLU only).
    pub k_max: Option<usize>,
    pub tol: Option<f64>,
    /// Per-coordinate eigenvalues, nonincreasing (linear only).
    pub psi: Vec<f64>,
    group_start: Vec<usize>,
}

impl KernelSpectrum {
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, g: usize) -> Result<&Group> {
        self.groups.get(g).ok_or(Error::UnknownGroup {
            index: g,
            groups: self.groups.len(),
        })
    }

    /// Group holding harmonic order `k` (ReLU).
    pub fn group_of_order(&self, k: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.order == k)
    }

    /// Coordinate range of group `g` (linear).
    pub fn coords(&self, g: usize) -> std::ops::Range<usize> {
        let start = self.group_start[g];
        let end = self
            .group_start
            .get(g + 1)
            .copied()
            .unwrap_or(self.psi.len());
        start..end
    }

    /// Number of eigendirections in the leading `s` groups.
    pub fn eigen_count(&self, s: usize) -> f64 {
        self.groups[..s.min(self.groups.len())]
            .iter()
            .map(|g| g.multiplicity)
            .sum()
    }

    /// Eigenvalue of group `g`, zero past the last group.
    pub fn eigenvalue_or_zero(&self, g: usize) -> f64 {
        self.groups.get(g).map_or(0.0, |x| x.eigenvalue)
    }

    /// `1 - trace_total / full_trace`.
    pub fn relative_tail(&self) -> f64 {
        1.0 - self.trace_total / self.full_trace
    }

    /// Short content hash used in serialized headers.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{}|{}|", self.model, self.d));
        for g in &self.groups {
            h.update(format!(
                "{:x}:{:x}:{};",
                g.eigenvalue.to_bits(),
                g.multiplicity.to_bits(),
                g.order
            ));
        }
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// CSV with columns order, eigenvalue, multiplicity, cumulative_trace.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["order", "eigenvalue", "multiplicity", "cumulative_trace"])?;
        let mut cum = 0.0;
        for g in &self.groups {
            cum += g.mass;
            w.write_record([
                g.order.to_string(),
                g.eigenvalue.to_string(),
                g.multiplicity.to_string(),
                cum.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d < 3 {
        Err(Error::DimensionTooSmall(d))
    } else {
        Ok(())
    }
}

/// Dimension of degree-`k` spherical harmonics on `S^{d-1}`, exact.
pub fn harmonic_dim(k: usize, d: usize) -> Result<u128> {
    check_dim(d)?;
    let overflow = || Error::HarmonicDimOverflow { k, d };
    // binomial(k + d - 2, k) built incrementally stays integral at each step
    let mut c: u128 = 1;
    for i in 1..=k as u128 {
        c = c
            .checked_mul(d as u128 - 2 + i)
            .ok_or_else(overflow)?
            / i;
    }
    let num = c.checked_mul((2 * k + d - 2) as u128).ok_or_else(overflow)?;
    Ok(num / (k + d - 2) as u128)
}

/// Natural log of `N_k`.
pub fn ln_harmonic_dim(k: usize, d: usize) -> Result<f64> {
    check_dim(d)?;
    if let Ok(n) = harmonic_dim(k, d) {
        if n < (1u128 << 53) {
            return Ok((n as f64).ln());
        }
    }
    let (kf, df) = (k as f64, d as f64);
    Ok((2.0 * kf + df - 2.0).ln() + ln_gamma(kf + df - 2.0) - ln_gamma(kf + 1.0) - ln_gamma(df - 1.0))
}

fn ln_cd(d: f64) -> f64 {
    ln_gamma(d / 2.0) - 0.5 * std::f64::consts::PI.ln() - ln_gamma((d - 1.0) / 2.0)
}

/// `(ln|sigma_k|, sign)`, or `None` when the coefficient vanishes.
pub fn relu_sigma_ln(k: usize, d: usize) -> Result<Option<(f64, f64)>> {
    check_dim(d)?;
    let df = d as f64;
    if k == 0 {
        return Ok(Some((ln_cd(df) - (df - 1.0).ln(), 1.0)));
    }
    if k == 1 {
        return Ok(Some((-(2.0 * df).ln(), 1.0)));
    }
    if k % 2 == 1 {
        return Ok(None);
    }
    let kf = k as f64;
    let j = (k - 2) / 2;
    let jf = j as f64;
    let a = kf + (df - 3.0) / 2.0;
    let ln = ln_cd(df) - kf * std::f64::consts::LN_2 + ln_gamma(kf - 1.0) - ln_gamma(jf + 1.0)
        + ln_gamma(a + 1.0)
        - ln_gamma(a - jf + 1.0)
        + ln_gamma((df - 1.0) / 2.0)
        - ln_gamma(kf + (df - 1.0) / 2.0);
    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
    Ok(Some((ln, sign)))
}

/// ReLU expansion coefficient `sigma_k` against the normalized Gegenbauer basis.
///
/// The sign alternates over even orders; only `sigma_k^2` enters the kernel.
pub fn relu_sigma(k: usize, d: usize) -> Result<f64> {
    if k == 1 {
        check_dim(d)?;
        return Ok(0.5 / d as f64);
    }
    Ok(relu_sigma_ln(k, d)?.map_or(0.0, |(ln, s)| s * ln.exp()))
}

fn check_t(t: f64) -> Result<f64> {
    if !(t.abs() <= 1.0 + 1e-12) {
        return Err(Error::OutOfDomain { what: "t", value: t });
    }
    Ok(t.clamp(-1.0, 1.0))
}

/// Normalized Gegenbauer polynomial `P_{k,d}(t)` with `P_{k,d}(1) = 1`.
pub fn gegenbauer(k: usize, d: usize, t: f64) -> Result<f64> {
    check_dim(d)?;
    let t = check_t(t)?;
    let mut out = 0.0;
    for_each_gegenbauer(k, d, t, |i, p| {
        if i == k {
            out = p
        }
    });
    Ok(out)
}

/// Calls `f(k, P_{k,d}(t))` for `k = 0..=k_max` via the three-term recurrence.
/// `t` must already lie in `[-1, 1]`.
#[inline]
pub fn for_each_gegenbauer(k_max: usize, d: usize, t: f64, mut f: impl FnMut(usize, f64)) {
    let dm2 = d as f64 - 2.0;
    let mut p0 = 1.0;
    f(0, p0);
    if k_max == 0 {
        return;
    }
    let mut p1 = t;
    f(1, p1);
    for k in 1..k_max {
        let kf = k as f64;
        let p2 = ((2.0 * kf + dm2) * t * p1 - kf * p0) / (kf + dm2);
        p0 = p1;
        p1 = p2;
        f(k + 1, p1);
    }
}

/// Truncated ReLU spectrum together with its cutoff order.
pub fn relu_spectrum(d: usize, tol: f64) -> Result<KernelSpectrum> {
    check_dim(d)?;
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::OutOfDomain { what: "tol", value: tol });
    }
    let full = 1.0 / (2.0 * d as f64);
    let mut groups = Vec::new();
    let mut cum = 0.0;
    let mut k = 0;
    loop {
        if let Some((ln_s, _)) = relu_sigma_ln(k, d)? {
            let g = Group::from_logs(2.0 * ln_s, ln_harmonic_dim(k, d)?, k);
            cum += g.mass;
            groups.push(g);
            if 1.0 - cum / full <= tol {
                break;
            }
        }
        k += 1;
        if k > MAX_ORDER {
            return Err(Error::InvalidSpectrum(format!(
                "tolerance {tol} not reached below order {MAX_ORDER}"
            )));
        }
    }
    groups.sort_by(|a, b| b.ln_eigenvalue.partial_cmp(&a.ln_eigenvalue).unwrap());
    let trace_total = groups.iter().map(|g| g.mass).sum();
    Ok(KernelSpectrum {
        model: ModelTag::ReluSphere,
        d,
        groups,
        trace_total,
        full_trace: full,
        k_max: Some(k),
        tol: Some(tol),
        psi: Vec::new(),
        group_start: Vec::new(),
    })
}

/// Smallest cutoff order (over the nonzero orders 0, 1, 2, 4, ...) whose relative tail is within `tol`.
pub fn truncate_relu(d: usize, tol: f64) -> Result<usize> {
    Ok(relu_spectrum(d, tol)?.k_max.expect("relu spectra record k_max"))
}

/// Linear-model covariance families.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearKind {
    /// `k` unit eigenvalues followed by `d - k` copies of `(d - k)^(-2/3)`.
    Spiked { k: usize, d: usize },
    /// One unit eigenvalue followed by `d - 1` copies of `sqrt(alpha / (d - 1))`.
    HeavyTail { alpha: f64, d: usize },
    /// Explicit nonincreasing per-coordinate eigenvalues.
    Custom(Vec<f64>),
}

pub fn linear_spectrum(kind: &LinearKind) -> Result<KernelSpectrum> {
    let psi = match kind {
        LinearKind::Spiked { k, d } => {
            if *k == 0 || d <= k {
                return Err(Error::InvalidSpectrum(format!("need 0 < k < d, got k = {k}, d = {d}")));
            }
            let tail = ((d - k) as f64).powf(-2.0 / 3.0);
            let mut v = vec![1.0; *k];
            v.extend(std::iter::repeat_n(tail, d - k));
            v
        }
        LinearKind::HeavyTail { alpha, d } => {
            if *d < 2 || !(*alpha > 0.0) {
                return Err(Error::InvalidSpectrum(format!(
                    "need d >= 2 and alpha > 0, got d = {d}, alpha = {alpha}"
                )));
            }
            let tail = (alpha / (*d as f64 - 1.0)).sqrt();
            if tail > 1.0 {
                return Err(Error::InvalidSpectrum(format!(
                    "sqrt(alpha/(d-1)) = {tail} exceeds the leading eigenvalue 1"
                )));
            }
            let mut v = vec![1.0];
            v.extend(std::iter::repeat_n(tail, d - 1));
            v
        }
        LinearKind::Custom(v) => v.clone(),
    };
    from_psi(psi)
}

fn from_psi(psi: Vec<f64>) -> Result<KernelSpectrum> {
    if psi.is_empty() {
        return Err(Error::InvalidSpectrum("empty eigenvalue list".into()));
    }
    if let Some(bad) = psi.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::InvalidSpectrum(format!("eigenvalue {bad} is not a finite nonnegative number")));
    }
    if let Some(i) = psi.windows(2).position(|w| w[1] > w[0] && !ties(w[0], w[1])) {
        return Err(Error::InvalidSpectrum(format!(
            "eigenvalues must be nonincreasing (psi[{}] = {} < psi[{}] = {})",
            i,
            psi[i],
            i + 1,
            psi[i + 1]
        )));
    }
    let mut groups: Vec<Group> = Vec::new();
    let mut group_start = Vec::new();
    let mut start = 0;
    for i in 1..=psi.len() {
        if i == psi.len() || !ties(psi[start], psi[i]) {
            group_start.push(start);
            groups.push(Group::linear(psi[start], i - start, groups.len()));
            start = i;
        }
    }
    let trace_total = groups.iter().map(|g| g.mass).sum();
    Ok(KernelSpectrum {
        model: ModelTag::LinearDiagonal,
        d: psi.len(),
        groups,
        trace_total,
        full_trace: trace_total,
        k_max: None,
        tol: None,
        psi,
        group_start,
    })
}

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_REL * a.abs().max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_dim_examples() {
        assert_eq!(harmonic_dim(0, 32).unwrap(), 1);
        assert_eq!(harmonic_dim(1, 32).unwrap(), 32);
        assert_eq!(harmonic_dim(2, 3).unwrap(), 5);
        assert_eq!(harmonic_dim(2, 32).unwrap(), 527);
        assert!(matches!(harmonic_dim(1, 2), Err(Error::DimensionTooSmall(2))));
        assert!(matches!(harmonic_dim(2000, 64), Err(Error::HarmonicDimOverflow { .. })));
    }

    #[test]
    fn harmonic_dim_matches_sphere_counts() {
        // on S^2 the count is 2k + 1
        for k in 0..30 {
            assert_eq!(harmonic_dim(k, 3).unwrap(), 2 * k as u128 + 1);
        }
        // on S^3 it is (k + 1)^2
        for k in 0..30 {
            assert_eq!(harmonic_dim(k, 4).unwrap(), (k as u128 + 1).pow(2));
        }
    }

    #[test]
    fn ln_harmonic_dim_agrees_with_exact() {
        for (k, d) in [(5, 8), (40, 32), (100, 16)] {
            let exact = harmonic_dim(k, d).unwrap() as f64;
            let ln = ln_harmonic_dim(k, d).unwrap();
            assert!((ln - exact.ln()).abs() < 1e-10);
        }
        let via_gamma = {
            let (kf, df) = (300.0, 32.0);
            (2.0 * kf + df - 2.0_f64).ln() + ln_gamma(kf + df - 2.0) - ln_gamma(kf + 1.0) - ln_gamma(df - 1.0)
        };
        assert!((ln_harmonic_dim(300, 32).unwrap() - via_gamma).abs() < 1e-9);
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(relu_sigma(3, 32).unwrap(), 0.0);
        assert_eq!(relu_sigma(1, 32).unwrap(), 1.0 / 64.0);
        // S^2: relu(t) = 1/4 + t/2 + 5/16 P_2(t) ... on the uniform sphere in R^3
        assert!((relu_sigma(0, 3).unwrap() - 0.25).abs() < 1e-15);
        assert!((relu_sigma(2, 3).unwrap() - 0.0625).abs() < 1e-15);
        assert!((relu_sigma(4, 3).unwrap() + 1.0 / 96.0).abs() < 1e-15);
    }

    #[test]
    fn gegenbauer_basics() {
        for k in 0..12 {
            assert!((gegenbauer(k, 7, 1.0).unwrap() - 1.0).abs() < 1e-13);
        }
        assert_eq!(gegenbauer(1, 8, 0.3).unwrap(), 0.3);
        // Legendre P_2 on S^2
        assert!((gegenbauer(2, 3, 0.5).unwrap() - (3.0 * 0.25 - 1.0) / 2.0).abs() < 1e-15);
        assert!(gegenbauer(3, 8, 1.1).is_err());
        assert!(gegenbauer(3, 8, 1.0 + 1e-13).is_ok());
    }

    #[test]
    fn linear_examples() {
        let s = linear_spectrum(&LinearKind::Spiked { k: 1, d: 1001 }).unwrap();
        assert_eq!(s.n_groups(), 2);
        assert_eq!(s.groups[0].eigenvalue, 1.0);
        assert_eq!(s.groups[0].multiplicity, 1.0);
        assert!((s.groups[1].eigenvalue - 1e-2).abs() < 1e-15);
        assert_eq!(s.groups[1].multiplicity, 1000.0);

        let s = linear_spectrum(&LinearKind::HeavyTail { alpha: 1.0, d: 101 }).unwrap();
        assert!((s.groups[1].eigenvalue - 0.1).abs() < 1e-15);
        assert_eq!(s.groups[1].multiplicity, 100.0);

        let s = linear_spectrum(&LinearKind::Custom(vec![1.0, 0.5, 0.5, 0.1])).unwrap();
        let got: Vec<(f64, f64)> = s.groups.iter().map(|g| (g.eigenvalue, g.multiplicity)).collect();
        assert_eq!(got, vec![(1.0, 1.0), (0.5, 2.0), (0.1, 1.0)]);
        assert_eq!(s.coords(1), 1..3);

        assert!(linear_spectrum(&LinearKind::Custom(vec![0.5, 1.0])).is_err());
        assert!(linear_spectrum(&LinearKind::Spiked { k: 3, d: 3 }).is_err());
    }

    #[test]
    fn relu_spectrum_is_descending_and_within_tol() {
        let s = relu_spectrum(32, 1e-8).unwrap();
        assert!(s.relative_tail() <= 1e-8);
        for w in s.groups.windows(2) {
            assert!(w[0].eigenvalue > w[1].eigenvalue);
        }
        assert_eq!(s.groups[0].order, 0);
        assert_eq!(s.groups[1].order, 1);
        assert_eq!(s.groups[2].order, 2);
        assert!(s.groups.iter().all(|g| g.order == 1 || g.order % 2 == 0));
    }

    #[test]
    fn truncation_to_orders_zero_and_one() {
        let d = 32;
        let full = 1.0 / 64.0;
        let m0 = relu_sigma(0, d).unwrap().powi(2);
        let m1 = relu_sigma(1, d).unwrap().powi(2) * d as f64;
        let tol = 1.0 - (m0 + m1) / full;
        let s = relu_spectrum(d, tol * (1.0 + 1e-12)).unwrap();
        assert_eq!(s.k_max, Some(1));
        assert_eq!(s.n_groups(), 2);
    }

    #[test]
    fn spectrum_csv_has_header() {
        let s = linear_spectrum(&LinearKind::Custom(vec![1.0, 0.5])).unwrap();
        let csv = s.to_csv().unwrap();
        assert!(csv.starts_with("order,eigenvalue,multiplicity,cumulative_trace\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
