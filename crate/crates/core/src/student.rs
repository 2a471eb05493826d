//! Infinite-width student trained by spectral gradient flow on the teacher's labels.
//!
//! Group `g` of the student predictor at time `T` is `(1 - exp(-lambda_g T))`
//! times the teacher's component, so every loss is a finite sum over groups.

use crate::bounds::PredictorStats;
use crate::error::{Error, Result};
use crate::features::{cross_gram, gram, target_cross, FeatureEnsemble, Target};
use crate::linalg::{SymEig, PINV_REL};
use crate::spectrum::{KernelSpectrum, ModelTag};
use crate::teacher::TeacherModel;
use nalgebra::{DMatrix, DVector};

/// `1 - exp(-x)` without cancellation for small `x`.
#[inline]
pub fn shrink_factor(x: f64) -> f64 {
    -(-x).exp_m1()
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(Error::OutOfDomain { what: "T", value: t });
    }
    Ok(())
}

/// `(L_ST(T), |f_T - f_teacher|^2)`.
pub fn loss_at(teacher: &TeacherModel, t: f64) -> Result<(f64, f64)> {
    check_time(t)?;
    let mut l = 1.0;
    let mut lt = 0.0;
    for g in 0..teacher.energies.len() {
        let a = shrink_factor(teacher.eigenvalues[g] * t);
        let (e, x) = (teacher.energies[g], teacher.cross[g]);
        l += a * a * e - 2.0 * a * x;
        lt += (1.0 - a) * (1.0 - a) * e;
    }
    Ok((l, lt))
}

/// Norm and teacher overlap of the student at time `T`.
pub fn student_stats(teacher: &TeacherModel, t: f64) -> Result<PredictorStats> {
    check_time(t)?;
    let (mut norm2, mut inner) = (0.0, 0.0);
    for g in 0..teacher.energies.len() {
        let a = shrink_factor(teacher.eigenvalues[g] * t);
        norm2 += a * a * teacher.energies[g];
        inner += a * teacher.energies[g];
    }
    Ok(PredictorStats::new(norm2, inner, teacher.norm2))
}

/// Loss curve on a log-spaced time grid plus the refined optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentTrajectory {
    pub times: Vec<f64>,
    pub loss_st: Vec<f64>,
    pub loss_to_teacher: Vec<f64>,
    pub t_opt: f64,
    pub lst_opt: f64,
}

/// `n` log-spaced points from `t_min` to `t_max`, endpoints exact.
pub fn log_grid(t_min: f64, t_max: f64, n: usize) -> Result<Vec<f64>> {
    if !(t_min > 0.0 && t_max > t_min && t_max.is_finite()) || n < 2 {
        return Err(Error::InvalidGrid(format!(
            "need 0 < t_min < t_max and at least 2 points (got {t_min}, {t_max}, {n})"
        )));
    }
    let (a, b) = (t_min.ln(), t_max.ln());
    let mut v: Vec<f64> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect();
    v[0] = t_min;
    v[n - 1] = t_max;
    Ok(v)
}

pub fn trajectory(teacher: &TeacherModel, t_min: f64, t_max: f64, n: usize) -> Result<StudentTrajectory> {
    let times = log_grid(t_min, t_max, n)?;
    let mut loss_st = Vec::with_capacity(n);
    let mut loss_to_teacher = Vec::with_capacity(n);
    for &t in &times {
        let (l, lt) = loss_at(teacher, t)?;
        loss_st.push(l);
        loss_to_teacher.push(lt);
    }
    let (t_opt, lst_opt) = refine_minimum(&times, &loss_st, |t| loss_at(teacher, t).map(|x| x.0).unwrap_or(f64::INFINITY));
    Ok(StudentTrajectory { times, loss_st, loss_to_teacher, t_opt, lst_opt })
}

/// Grid argmin followed by golden-section search in log-time inside the bracketing cells.
pub fn refine_minimum(times: &[f64], values: &[f64], f: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] < values[best] {
            best = i;
        }
    }
    let lo = times[best.saturating_sub(1)].ln();
    let hi = times[(best + 1).min(times.len() - 1)].ln();
    let g = |x: f64| f(x.exp());
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    for _ in 0..100 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = g(d);
        }
    }
    let (x, fx) = if fc < fd { (c, fc) } else { (d, fd) };
    if fx < values[best] {
        (x.exp(), fx)
    } else {
        (times[best], values[best])
    }
}

/// `T = log(1/delta) / lambda_K` for the last target group (`support` is the group count `K`).
pub fn stopping_rule(spectrum: &KernelSpectrum, support: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::OutOfDomain { what: "delta", value: delta });
    }
    if support == 0 {
        return Err(Error::InvalidArgument("target support must contain a group".into()));
    }
    let lam = spectrum.group(support - 1)?.eigenvalue;
    if !(lam > 0.0) {
        return Err(Error::ZeroEigenvalue);
    }
    Ok((1.0 / delta).ln() / lam)
}

/// `(L_TE - L_ST) / L_TE`.
pub fn pgr_lower(loss_te: f64, loss_st: f64) -> Result<f64> {
    if loss_te == 0.0 {
        return Err(Error::UndefinedPgr);
    }
    Ok((loss_te - loss_st) / loss_te)
}

/// Finite-width student trained by gradient flow on the teacher's predictor.
///
/// The coefficients follow `c(T) = Phi_s^+ (I - exp(-T Phi_s / M)) b` with
/// `b_i = <g_{s,i}, f_teacher>`.
pub struct FiniteWidthFlow {
    kind: FlowKind,
}

enum FlowKind {
    /// Work in the `d`-dimensional eigen-coordinates: `f_T = V h(S^2/M) V^T theta`.
    Linear {
        eig: SymEig,
        theta_rot: DVector<f64>,
        target_rot: DVector<f64>,
        target_norm2: f64,
        width: f64,
    },
    /// Work in the `M`-dimensional coefficient space with Gram algebra.
    Relu {
        eig: SymEig,
        b_rot: DVector<f64>,
        v_rot: DVector<f64>,
        target_norm2: f64,
        width: f64,
    },
}

impl FiniteWidthFlow {
    pub fn new(
        student: &FeatureEnsemble,
        teacher_ens: &FeatureEnsemble,
        teacher: &TeacherModel,
        target: &Target,
        spectrum: &KernelSpectrum,
    ) -> Result<Self> {
        if student.model != teacher_ens.model {
            return Err(Error::ModelMismatch {
                expected: teacher_ens.model.to_string(),
                found: student.model.to_string(),
            });
        }
        let width = student.m as f64;
        let kind = match student.model {
            ModelTag::LinearDiagonal => {
                let c = &student.units;
                // C^T C shares its nonzero spectrum with the M x M Gram C C^T
                let eig = SymEig::new(&(c.transpose() * c), PINV_REL);
                let theta = teacher_ens.units.transpose() * &teacher.weights;
                let beta = match target {
                    Target::CoordinateLinear(b) => b.clone(),
                    _ => return Err(Error::InvalidTarget("linear model needs a coordinate target".into())),
                };
                FlowKind::Linear {
                    theta_rot: eig.vectors.transpose() * theta,
                    target_rot: eig.vectors.transpose() * &beta,
                    target_norm2: beta.norm_squared(),
                    eig,
                    width,
                }
            }
            ModelTag::ReluSphere => {
                let phi = gram(student, spectrum)?;
                let kst: DMatrix<f64> = cross_gram(student, teacher_ens, spectrum)?;
                let b = kst * &teacher.weights;
                let v = target_cross(student, spectrum, target)?;
                let eig = SymEig::new(&phi, PINV_REL);
                FlowKind::Relu {
                    b_rot: eig.vectors.transpose() * b,
                    v_rot: eig.vectors.transpose() * v,
                    target_norm2: target.norm2(),
                    eig,
                    width,
                }
            }
        };
        Ok(FiniteWidthFlow { kind })
    }

    /// `|f_T - f*|^2` for the finite-width student.
    pub fn loss_at(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        match &self.kind {
            FlowKind::Linear { eig, theta_rot, target_rot, target_norm2, width } => {
                // |f_T - beta|^2 = |beta|^2 - 2 <f_T, beta> + |f_T|^2, all in the rotated basis
                let mut l = *target_norm2;
                for i in eig.kept() {
                    let h = shrink_factor(t * eig.values[i] / width);
                    let f = h * theta_rot[i];
                    l += f * f - 2.0 * f * target_rot[i];
                }
                Ok(l)
            }
            FlowKind::Relu { eig, b_rot, v_rot, target_norm2, width } => {
                // c = Phi^+ h(Phi) b; loss = c^T Phi c - 2 c^T v + |f*|^2
                let mut l = *target_norm2;
                for i in eig.kept() {
                    let lam = eig.values[i];
                    let c = shrink_factor(t * lam / width) * b_rot[i] / lam;
                    l += c * c * lam - 2.0 * c * v_rot[i];
                }
                Ok(l)
            }
        }
    }
}

/// One-shot finite-width loss at time `T`.
pub fn finite_width_oracle(
    student: &FeatureEnsemble,
    teacher_ens: &FeatureEnsemble,
    teacher: &TeacherModel,
    target: &Target,
    spectrum: &KernelSpectrum,
    t: f64,
) -> Result<f64> {
    FiniteWidthFlow::new(student, teacher_ens, teacher, target, spectrum)?.loss_at(t)
}
