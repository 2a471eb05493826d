//! Optimal population teacher: least squares over the feature span, split by eigengroup.

use crate::error::{Error, Result};
use crate::features::{gram, group_quadratic_forms, target_cross, FeatureEnsemble, Target};
use crate::linalg::{SymEig, PINV_REL};
use crate::spectrum::{KernelSpectrum, ModelTag};
use nalgebra::{DMatrix, DVector};

/// Trained teacher and its per-group decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    pub weights: DVector<f64>,
    pub loss_te: f64,
    /// `E_g = |P_g f_teacher|^2`.
    pub energies: Vec<f64>,
    /// `X_g = <P_g f_teacher, f*>`.
    pub cross: Vec<f64>,
    pub norm2: f64,
    pub rank: usize,
    /// Eigenvalue of each group, copied from the spectrum.
    pub eigenvalues: Vec<f64>,
    /// Number of leading groups holding the target.
    pub support: usize,
}

/// Minimum-norm least-squares solution `w = Phi^+ v`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub w: DVector<f64>,
    /// `|f*|^2 - v^T Phi^+ v`.
    pub loss: f64,
    pub rank: usize,
}

/// Solve the normal equations through a symmetric eigendecomposition.
pub fn solve_least_squares(phi: &DMatrix<f64>, v: &DVector<f64>, target_norm2: f64, rel: f64) -> Result<LeastSquares> {
    let eig = SymEig::new(phi, rel);
    if !(eig.max_value() > 0.0) {
        return Err(Error::ZeroGram);
    }
    let w = eig.pinv_apply(v);
    let loss = target_norm2 - v.dot(&w);
    Ok(LeastSquares { w, loss, rank: eig.rank() })
}

/// Train the teacher with the default pseudo-inverse cutoff.
pub fn train(ens: &FeatureEnsemble, spectrum: &KernelSpectrum, target: &Target) -> Result<TeacherModel> {
    train_with_cutoff(ens, spectrum, target, PINV_REL)
}

pub fn train_with_cutoff(
    ens: &FeatureEnsemble,
    spectrum: &KernelSpectrum,
    target: &Target,
    rel: f64,
) -> Result<TeacherModel> {
    let phi = gram(ens, spectrum)?;
    let v = target_cross(ens, spectrum, target)?;
    let ls = solve_least_squares(&phi, &v, target.norm2(), rel)?;
    let energies = group_quadratic_forms(ens, spectrum, &ls.w)?;
    let cross = group_cross(ens, spectrum, target, &ls.w, &v)?;
    let norm2 = ls.w.dot(&(&phi * &ls.w));
    Ok(TeacherModel {
        loss_te: ls.loss.max(0.0),
        weights: ls.w,
        energies,
        cross,
        norm2,
        rank: ls.rank,
        eigenvalues: spectrum.groups.iter().map(|g| g.eigenvalue).collect(),
        support: target.support(spectrum),
    })
}

fn group_cross(
    ens: &FeatureEnsemble,
    spectrum: &KernelSpectrum,
    target: &Target,
    w: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spectrum.n_groups()];
    match (ens.model, target) {
        (ModelTag::LinearDiagonal, Target::CoordinateLinear(c)) => {
            let theta = ens.units.transpose() * w;
            for (g, o) in out.iter_mut().enumerate() {
                *o = spectrum.coords(g).map(|j| theta[j] * c[j]).sum();
            }
        }
        _ => {
            // relu targets sit in a single harmonic order
            let g = target.support(spectrum);
            if g > 0 {
                out[g - 1] = w.dot(v);
            }
        }
    }
    Ok(out)
}

impl TeacherModel {
    /// `sum_{g >= s} <f_teacher, e_g>^2` for a boundary `s >= K`.
    pub fn residual_energy_above(&self, s: usize) -> Result<f64> {
        if s < self.support {
            return Err(Error::BelowTargetSupport { s, k: self.support });
        }
        if s > self.energies.len() {
            return Err(Error::UnknownGroup { index: s, groups: self.energies.len() });
        }
        Ok(self.energies[s..].iter().sum())
    }

    /// `1 - sum_g (2 X_g - E_g)`.
    pub fn loss_from_groups(&self) -> f64 {
        1.0 - self
            .energies
            .iter()
            .zip(&self.cross)
            .map(|(e, x)| 2.0 * x - e)
            .sum::<f64>()
    }

    /// `<f_teacher, f*>`.
    pub fn inner_target(&self) -> f64 {
        self.cross.iter().sum()
    }

    /// Plain-text dump with everything the spectral flow needs.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# w2s teacher v1\nloss_te={:e}\nnorm2={:e}\nrank={}\nsupport={}\ngroups={}\n",
            self.loss_te,
            self.norm2,
            self.rank,
            self.support,
            self.energies.len()
        );
        for g in 0..self.energies.len() {
            s.push_str(&format!(
                "{:e} {:e} {:e}\n",
                self.eigenvalues[g], self.energies[g], self.cross[g]
            ));
        }
        s.push_str(&format!("weights={}\n", self.weights.len()));
        for w in self.weights.iter() {
            s.push_str(&format!("{w:e}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<TeacherModel> {
        let bad = |msg: &str| Error::Parse(format!("teacher file: {msg}"));
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            let (k, v) = line.split_once('=').ok_or_else(|| bad("malformed line"))?;
            if k != key {
                return Err(bad(&format!("expected `{key}`")));
            }
            Ok(v.to_string())
        };
        let f = |s: String| s.parse::<f64>().map_err(|_| bad("bad number"));
        let u = |s: String| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let loss_te = f(field("loss_te")?)?;
        let norm2 = f(field("norm2")?)?;
        let rank = u(field("rank")?)?;
        let support = u(field("support")?)?;
        let ng = u(field("groups")?)?;
        let (mut eigenvalues, mut energies, mut cross) = (Vec::new(), Vec::new(), Vec::new());
        let mut rest = text.lines().filter(|l| !l.starts_with('#')).skip(5);
        for _ in 0..ng {
            let line = rest.next().ok_or_else(|| bad("missing group row"))?;
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<_>>()?;
            if nums.len() != 3 {
                return Err(bad("group rows need three numbers"));
            }
            eigenvalues.push(nums[0]);
            energies.push(nums[1]);
            cross.push(nums[2]);
        }
        let wl = rest.next().ok_or_else(|| bad("missing weights"))?;
        let nw = u(wl.strip_prefix("weights=").ok_or_else(|| bad("missing weights"))?.to_string())?;
        let weights: Vec<f64> = rest
            .take(nw)
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad("bad weight")))
            .collect::<Result<_>>()?;
        if weights.len() != nw {
            return Err(bad("weight count mismatch"));
        }
        Ok(TeacherModel {
            weights: DVector::from_vec(weights),
            loss_te,
            energies,
            cross,
            norm2,
            rank,
            eigenvalues,
            support,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::sample;
    use crate::rng::Seed;
    use crate::spectrum::{linear_spectrum, relu_spectrum, LinearKind};

    fn e1(d: usize) -> DVector<f64> {
        let mut b = DVector::zeros(d);
        b[0] = 1.0;
        b
    }

    #[test]
    fn perfect_single_feature() {
        let s = linear_spectrum(&LinearKind::Custom(vec![1.0, 0.5, 0.25])).unwrap();
        let beta = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let t = Target::coordinate_linear(beta.clone(), &s).unwrap();
        let e = FeatureEnsemble {
            model: ModelTag::LinearDiagonal,
            d: 3,
            m: 1,
            seed: Seed(0),
            units: DMatrix::from_row_slice(1, 3, &[1.2, 1.6, 0.0]),
        };
        let tm = train(&e, &s, &t).unwrap();
        assert!(tm.loss_te < 1e-15);
        let phi11 = 1.2f64.powi(2) + 1.6f64.powi(2);
        let v1 = 1.2 * 0.6 + 1.6 * 0.8;
        assert!((tm.weights[0] - v1 / phi11).abs() < 1e-15);
    }

    #[test]
    fn overcomplete_linear_teacher_is_exact() {
        let s = linear_spectrum(&LinearKind::Spiked { k: 1, d: 8 }).unwrap();
        let e = sample(ModelTag::LinearDiagonal, 16, 8, &s, Seed(1)).unwrap();
        let t = Target::coordinate_linear(e1(8), &s).unwrap();
        let tm = train(&e, &s, &t).unwrap();
        assert!(tm.loss_te <= 1e-9);
    }

    #[test]
    fn group_identities_hold() {
        let s = relu_spectrum(8, 1e-8).unwrap();
        let e = sample(ModelTag::ReluSphere, 12, 8, &s, Seed(3)).unwrap();
        let t = Target::linear_direction(crate::features::random_direction(8, Seed(4)), &s).unwrap();
        let tm = train(&e, &s, &t).unwrap();
        assert!((tm.loss_from_groups() - tm.loss_te).abs() < 1e-9);
        let esum: f64 = tm.energies.iter().sum();
        assert!((esum - tm.norm2).abs() < 1e-9 * tm.norm2.max(1.0));
        // orthogonality of the residual
        assert!((tm.inner_target() - tm.norm2).abs() < 1e-9 * tm.norm2.max(1.0));
        assert_eq!(tm.support, 2);
        assert_eq!(tm.residual_energy_above(s.n_groups()).unwrap(), 0.0);
        assert!(tm.residual_energy_above(1).is_err());
    }

    #[test]
    fn zero_gram_rejected() {
        let s = linear_spectrum(&LinearKind::Custom(vec![1.0, 1.0])).unwrap();
        let t = Target::coordinate_linear(e1(2), &s).unwrap();
        let e = FeatureEnsemble {
            model: ModelTag::LinearDiagonal,
            d: 2,
            m: 2,
            seed: Seed(0),
            units: DMatrix::zeros(2, 2),
        };
        assert!(matches!(train(&e, &s, &t), Err(Error::ZeroGram)));
    }

    #[test]
    fn single_group_residual_is_zero() {
        let s = linear_spectrum(&LinearKind::Custom(vec![1.0; 4])).unwrap();
        let e = sample(ModelTag::LinearDiagonal, 2, 4, &s, Seed(1)).unwrap();
        let t = Target::coordinate_linear(e1(4), &s).unwrap();
        let tm = train(&e, &s, &t).unwrap();
        assert_eq!(tm.residual_energy_above(1).unwrap(), 0.0);
    }

    #[test]
    fn text_round_trip() {
        let s = linear_spectrum(&LinearKind::Spiked { k: 1, d: 6 }).unwrap();
        let e = sample(ModelTag::LinearDiagonal, 3, 6, &s, Seed(1)).unwrap();
        let t = Target::coordinate_linear(e1(6), &s).unwrap();
        let tm = train(&e, &s, &t).unwrap();
        let back = TeacherModel::from_text(&tm.to_text()).unwrap();
        assert_eq!(back, tm);
    }
}
