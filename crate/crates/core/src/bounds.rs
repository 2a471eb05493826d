//! Lower and upper bounds relating student loss to teacher loss.

use crate::error::{Error, Result};
use crate::student::shrink_factor;
use crate::teacher::TeacherModel;

/// Slack allowed on every bound comparison.
pub const BOUND_SLACK: f64 = 1e-9;

/// Inner-product summary of a predictor against the function it was trained on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorStats {
    pub norm2: f64,
    pub inner_train: f64,
    pub train_norm2: f64,
    pub loss_to_train: f64,
}

impl PredictorStats {
    pub fn new(norm2: f64, inner_train: f64, train_norm2: f64) -> Self {
        PredictorStats {
            norm2,
            inner_train,
            train_norm2,
            loss_to_train: train_norm2 - 2.0 * inner_train + norm2,
        }
    }
}

/// Shrinking toward zero does not reduce the loss: `<f, f_train - f> >= 0`.
pub fn is_shrink_optimal(stats: &PredictorStats) -> bool {
    stats.inner_train - stats.norm2 >= -1e-9 * stats.norm2.max(1.0)
}

fn check_loss(l: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&l) {
        return Err(Error::OutOfDomain { what: "L_TE", value: l });
    }
    Ok(())
}

/// Student floor for shrink-optimal students.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadBound {
    /// `(sqrt(1 + 3L) - sqrt(1 - L))^2 / 4`.
    pub exact: f64,
    /// `0.75 L^2`.
    pub weak: f64,
}

pub fn quad_lower_bound(l: f64) -> Result<QuadBound> {
    check_loss(l)?;
    let r = (1.0 + 3.0 * l).sqrt() - (1.0 - l).sqrt();
    Ok(QuadBound { exact: r * r / 4.0, weak: 0.75 * l * l })
}

/// `(1 - sqrt(1 - L))^2`, the floor when the student norm stays below the teacher's.
pub fn bounded_student_lower_bound(l: f64) -> Result<f64> {
    check_loss(l)?;
    let r = 1.0 - (1.0 - l).sqrt();
    Ok(r * r)
}

/// `e^{-x} / (2 - e^{-x})`.
fn early_term(x: f64) -> f64 {
    let e = (-x).exp();
    e / (2.0 - e)
}

/// Early-stopping bound at boundary `s`, stated with the teacher's residual energy above `s`.
pub fn early_stop_bound(teacher: &TeacherModel, s: usize, t: f64) -> Result<f64> {
    let residual = teacher.residual_energy_above(s)?;
    let lk = teacher.eigenvalues[teacher.support - 1];
    let ls1 = teacher.eigenvalues.get(s).copied().unwrap_or(0.0);
    Ok(teacher.loss_te + early_term(lk * t) - (1.0 - (ls1 * t).powi(2)) * residual)
}

/// Alignment-based multiplicative bound at one boundary `s` with alignment `kappa`.
pub fn alignment_bound(teacher: &TeacherModel, s: usize, kappa: f64, t: f64) -> Result<f64> {
    if s < teacher.support {
        return Err(Error::BelowTargetSupport { s, k: teacher.support });
    }
    let lk = teacher.eigenvalues[teacher.support - 1];
    let ls1 = teacher.eigenvalues.get(s).copied().unwrap_or(0.0);
    Ok((1.0 - (1.0 - (ls1 * t).powi(2)) * kappa) * teacher.loss_te + early_term(lk * t))
}

/// Infimum of [`alignment_bound`] over the supplied `(s, kappa_s)` pairs.
pub fn alignment_bound_inf(teacher: &TeacherModel, kappas: &[(usize, f64)], t: f64) -> Result<f64> {
    let mut best = f64::INFINITY;
    for &(s, k) in kappas {
        best = best.min(alignment_bound(teacher, s, k, t)?);
    }
    Ok(best)
}

/// One student in a bootstrap chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStep {
    pub time: f64,
    pub loss_st: f64,
    pub norm2: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainReport {
    pub steps: Vec<ChainStep>,
    pub all_hold: bool,
    pub norms_nonincreasing: bool,
}

/// Train each student on the previous one's predictor; the first learns from the teacher.
pub fn bootstrap_chain(teacher: &TeacherModel, times: &[f64]) -> Result<ChainReport> {
    let bound = bounded_student_lower_bound(teacher.loss_te.min(1.0))?;
    let ng = teacher.energies.len();
    // multiplier p_g of the teacher's group component
    let mut p = vec![1.0; ng];
    let mut prev_norm = teacher.norm2;
    let mut steps = Vec::with_capacity(times.len());
    let mut norms_ok = true;
    for &t in times {
        if !(t >= 0.0) {
            return Err(Error::OutOfDomain { what: "T", value: t });
        }
        let (mut l, mut n2) = (1.0, 0.0);
        for g in 0..ng {
            p[g] *= shrink_factor(teacher.eigenvalues[g] * t);
            l += p[g] * p[g] * teacher.energies[g] - 2.0 * p[g] * teacher.cross[g];
            n2 += p[g] * p[g] * teacher.energies[g];
        }
        norms_ok &= n2 <= prev_norm;
        prev_norm = n2;
        steps.push(ChainStep {
            time: t,
            loss_st: l,
            norm2: n2,
            bound,
            holds: l >= bound - BOUND_SLACK,
        });
    }
    let all_hold = steps.iter().all(|s| s.holds);
    Ok(ChainReport { steps, all_hold, norms_nonincreasing: norms_ok })
}
