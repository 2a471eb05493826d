//! Teacher–student feature alignment `kappa_S`.
//!
//! `A_S` is the Gram of the teacher's units projected onto the leading `S`
//! eigengroups and `B_S = Phi - A_S`. Then
//! `kappa_S = 1 / (1 + lambda_max((sqrt A)^+ B (sqrt A)^+))`. The oracle instead takes the
//! smallest nonzero eigenvalue of `(sqrt Phi)^+ A (sqrt Phi)^+`, i.e. of `QPQ` in span
//! coordinates. The two agree when `A_S` and `Phi` share their range (the top-`S` eigen-count
//! is at least `m`).

use crate::error::{Error, Result};
use crate::features::{gram, projected_gram, FeatureEnsemble};
use crate::linalg::{sorted_eigenvalues, sqrt_pinv, SymEig, PINV_REL};
use crate::spectrum::{KernelSpectrum, ModelTag};
use nalgebra::DMatrix;

/// Eigenvalues of `(sqrt Phi)^+ A (sqrt Phi)^+` below this count as zero.
pub const ORACLE_ZERO: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub s_group: usize,
    /// Eigenvalues of `A_S`, descending.
    pub a_eigs: Vec<f64>,
    pub kappa: f64,
    pub kappa_oracle: f64,
    pub lambda_top: f64,
}

/// `(kappa, lambda_top)` from `A` and `Phi`.
pub fn kappa_from_grams(a: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<(f64, f64)> {
    check_nonzero(a, phi)?;
    let b = phi - a;
    let r = sqrt_pinv(a, PINV_REL);
    let m = &r * b * &r;
    let top = sorted_eigenvalues(&m)[0].max(0.0);
    Ok((1.0 / (1.0 + top), top))
}

/// Smallest nonzero eigenvalue of `(sqrt Phi)^+ A (sqrt Phi)^+`.
pub fn kappa_oracle_from_grams(a: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<f64> {
    check_nonzero(a, phi)?;
    let r = sqrt_pinv(phi, PINV_REL);
    let m = &r * a * &r;
    sorted_eigenvalues(&m)
        .into_iter()
        .rev()
        .find(|&x| x > ORACLE_ZERO)
        .ok_or(Error::ZeroProjection)
}

fn check_nonzero(a: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<()> {
    let phi_max = SymEig::new(phi, PINV_REL).max_value();
    let a_max = SymEig::new(a, PINV_REL).max_value();
    if !(a_max > 1e-13 * phi_max.max(f64::MIN_POSITIVE)) {
        return Err(Error::ZeroProjection);
    }
    Ok(())
}

fn check_s(spectrum: &KernelSpectrum, s: usize) -> Result<()> {
    if s == 0 || s > spectrum.n_groups() {
        return Err(Error::UnknownGroup { index: s, groups: spectrum.n_groups() });
    }
    Ok(())
}

/// Alignment at boundary `s` (number of leading groups), with its oracle.
pub fn kappa(ens: &FeatureEnsemble, spectrum: &KernelSpectrum, s: usize) -> Result<AlignmentReport> {
    check_s(spectrum, s)?;
    let a = projected_gram(ens, spectrum, s)?;
    let phi = gram(ens, spectrum)?;
    let (k, top) = kappa_from_grams(&a, &phi)?;
    let oracle = kappa_oracle_from_grams(&a, &phi)?;
    Ok(AlignmentReport {
        s_group: s,
        a_eigs: sorted_eigenvalues(&a),
        kappa: k,
        kappa_oracle: oracle,
        lambda_top: top,
    })
}

/// The oracle value on its own.
pub fn kappa_oracle(ens: &FeatureEnsemble, spectrum: &KernelSpectrum, s: usize) -> Result<f64> {
    check_s(spectrum, s)?;
    let a = projected_gram(ens, spectrum, s)?;
    let phi = gram(ens, spectrum)?;
    kappa_oracle_from_grams(&a, &phi)
}

/// Shape of the lower bound on the `J`-th eigenvalue of `A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigBoundForm {
    /// `lambda_J(A) >= lambda_S (sqrt m - t sqrt J)^2`.
    Relu { t_a: f64 },
    /// `lambda_J(A) >= lambda_S (sqrt m - c sqrt J - t)^2`, `c` a fitted constant.
    Linear { c: f64, t_a: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigCheck {
    pub applicable: bool,
    pub j: usize,
    pub lambda_j: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Compare the `J`-th eigenvalue of `A_S` (`J` the top-`S` eigen-count) with its lower bound.
pub fn a_eig_lower_check(ens: &FeatureEnsemble, spectrum: &KernelSpectrum, s: usize, form: EigBoundForm) -> Result<EigCheck> {
    check_s(spectrum, s)?;
    let jf = spectrum.eigen_count(s);
    let j = jf as usize;
    let m = ens.m as f64;
    let lam_s = spectrum.groups[s - 1].eigenvalue;
    let gap = match (form, ens.model) {
        (EigBoundForm::Relu { t_a }, ModelTag::ReluSphere) => m.sqrt() - t_a * jf.sqrt(),
        (EigBoundForm::Linear { c, t_a }, ModelTag::LinearDiagonal) => m.sqrt() - c * jf.sqrt() - t_a,
        _ => return Err(Error::InvalidArgument("bound form does not match the model".into())),
    };
    let applicable = gap >= 0.0 && j <= ens.m;
    if !applicable {
        return Ok(EigCheck { applicable, j, lambda_j: f64::NAN, bound: f64::NAN, holds: false });
    }
    let eigs = sorted_eigenvalues(&projected_gram(ens, spectrum, s)?);
    let lambda_j = eigs[j - 1];
    let bound = lam_s * gap * gap;
    Ok(EigCheck { applicable, j, lambda_j, bound, holds: lambda_j >= bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::sample;
    use crate::rng::Seed;
    use crate::spectrum::{linear_spectrum, relu_spectrum, LinearKind};

    #[test]
    fn no_mass_above_gives_one() {
        let s = linear_spectrum(&LinearKind::Custom(vec![1.0, 0.5])).unwrap();
        let e = sample(ModelTag::LinearDiagonal, 3, 2, &s, Seed(1)).unwrap();
        let r = kappa(&e, &s, 2).unwrap();
        assert!((r.kappa - 1.0).abs() < 1e-12);
        assert!((r.kappa - 1.0 / (1.0 + r.lambda_top)).abs() < 1e-15);
    }

    #[test]
    fn single_unit_scalar_case() {
        let s = relu_spectrum(8, 1e-8).unwrap();
        let e = sample(ModelTag::ReluSphere, 1, 8, &s, Seed(3)).unwrap();
        let r = kappa(&e, &s, 2).unwrap();
        let frac = (s.groups[0].mass + s.groups[1].mass) / s.trace_total;
        assert!((r.kappa - frac).abs() < 1e-12);
        assert!((r.kappa_oracle - frac).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_features_inside_top_space() {
        let s = linear_spectrum(&LinearKind::Custom(vec![1.0, 1.0, 1.0, 0.2])).unwrap();
        let e = FeatureEnsemble {
            model: ModelTag::LinearDiagonal,
            d: 4,
            m: 2,
            seed: Seed(0),
            units: DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        };
        let r = kappa(&e, &s, 1).unwrap();
        assert!((r.kappa_oracle - 1.0).abs() < 1e-12);
        assert!((r.kappa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_linear_instance_matches_oracle() {
        // leading group of 8 coordinates, m = 8 units: A_S has full rank
        let mut psi = vec![1.0; 8];
        psi.extend(vec![0.3; 8]);
        let s = linear_spectrum(&LinearKind::Custom(psi)).unwrap();
        let e = sample(ModelTag::LinearDiagonal, 8, 16, &s, Seed(21)).unwrap();
        let r = kappa(&e, &s, 1).unwrap();
        assert!((r.kappa - r.kappa_oracle).abs() < 1e-8);
    }

    #[test]
    fn oracle_differs_when_ranges_differ() {
        // rank(A_1) = 1 < rank(Phi) = 8: the two quantities separate
        let s = linear_spectrum(&LinearKind::Spiked { k: 1, d: 16 }).unwrap();
        let e = sample(ModelTag::LinearDiagonal, 8, 16, &s, Seed(2)).unwrap();
        let r = kappa(&e, &s, 1).unwrap();
        assert!(r.kappa_oracle > r.kappa + 1e-6);
    }

    #[test]
    fn zero_projection_rejected() {
        let s = linear_spectrum(&LinearKind::Custom(vec![1.0, 0.5])).unwrap();
        let e = FeatureEnsemble {
            model: ModelTag::LinearDiagonal,
            d: 2,
            m: 1,
            seed: Seed(0),
            units: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        };
        assert!(matches!(kappa(&e, &s, 1), Err(Error::ZeroProjection)));
        assert!(kappa(&e, &s, 0).is_err());
        assert!(kappa(&e, &s, 3).is_err());
    }

    #[test]
    fn square_case_degenerates() {
        let s = linear_spectrum(&LinearKind::Custom(vec![1.0, 1.0, 1.0, 0.1])).unwrap();
        let e = sample(ModelTag::LinearDiagonal, 3, 4, &s, Seed(1)).unwrap();
        // J = m = 3 and c = 1: the bound collapses to lambda_J >= 0
        let c = a_eig_lower_check(&e, &s, 1, EigBoundForm::Linear { c: 1.0, t_a: 0.0 }).unwrap();
        assert!(c.applicable && c.holds);
        assert_eq!(c.bound, 0.0);
        let c = a_eig_lower_check(&e, &s, 1, EigBoundForm::Linear { c: 2.0, t_a: 0.0 }).unwrap();
        assert!(!c.applicable);
    }

    #[test]
    fn relu_eig_check_success_rate() {
        let s = relu_spectrum(32, 1e-6).unwrap();
        let mut ok = 0;
        for seed in 0..20 {
            let e = sample(ModelTag::ReluSphere, 256, 32, &s, Seed(seed)).unwrap();
            let c = a_eig_lower_check(&e, &s, 2, EigBoundForm::Relu { t_a: 2.0 }).unwrap();
            assert!(c.applicable);
            ok += c.holds as usize;
        }
        assert!(ok >= 19, "{ok}/20");
    }
}
