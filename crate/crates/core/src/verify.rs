//! Seeded random instances and sweeps that check the loss bounds on them.

use crate::alignment::kappa;
use crate::bounds::{alignment_bound_inf, bootstrap_chain, quad_lower_bound, BOUND_SLACK};
use crate::error::Result;
use crate::features::{random_direction, sample, FeatureEnsemble, Target};
use crate::rng::{salt, Seed};
use crate::spectrum::{linear_spectrum, relu_spectrum, KernelSpectrum, LinearKind, ModelTag, DEFAULT_TRUNC_TOL};
use crate::student::{log_grid, loss_at};
use crate::teacher::{train, TeacherModel};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Input dimension of the relu instances.
pub const RELU_SWEEP_D: usize = 8;

/// A trained teacher together with everything it was built from.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: Seed,
    pub spectrum: KernelSpectrum,
    pub ensemble: FeatureEnsemble,
    pub target: Target,
    pub teacher: TeacherModel,
}

/// Draw a small instance of `model` from `seed`.
///
/// Linear: spectrum with `k` unit eigenvalues and a flat tail, `8 <= d <= 30`,
/// `k <= m <= 2d`, target on the leading block or on all coordinates.
/// Relu: `d = 8`, `9 <= m <= 60`, random linear target.
pub fn random_instance(model: ModelTag, seed: Seed, relu: Option<&KernelSpectrum>) -> Result<Instance> {
    let mut rng = seed.stream(u64::MAX);
    let (spectrum, m, target) = match model {
        ModelTag::LinearDiagonal => {
            let k = rng.random_range(1..=3usize);
            let d = rng.random_range(8..=30usize);
            let m = rng.random_range(k..=2 * d);
            let spectrum = linear_spectrum(&LinearKind::Spiked { k, d })?;
            let spread = rng.random_range(0..3) == 0;
            let width = if spread { d } else { k };
            let mut c = DVector::zeros(d);
            let mut trng = seed.child(salt::TARGET).stream(0);
            for j in 0..width {
                c[j] = trng.sample(StandardNormal);
            }
            let target = Target::coordinate_linear(c, &spectrum)?;
            (spectrum, m, target)
        }
        ModelTag::ReluSphere => {
            let spectrum = match relu {
                Some(s) => s.clone(),
                None => relu_spectrum(RELU_SWEEP_D, DEFAULT_TRUNC_TOL)?,
            };
            let m = rng.random_range(9..=60usize);
            let target = Target::linear_direction(random_direction(spectrum.d, seed.child(salt::TARGET)), &spectrum)?;
            (spectrum, m, target)
        }
    };
    let ensemble = sample(model, m, spectrum.d, &spectrum, seed)?;
    let teacher = train(&ensemble, &spectrum, &target)?;
    Ok(Instance { seed, spectrum, ensemble, target, teacher })
}

/// Boundaries `S >= K` whose leading eigen-count does not exceed `m`.
pub fn admissible_boundaries(inst: &Instance) -> Vec<usize> {
    (inst.teacher.support.max(1)..=inst.spectrum.n_groups())
        .take_while(|&s| inst.spectrum.eigen_count(s) <= inst.ensemble.m as f64)
        .collect()
}

/// Bound checks on one instance across a time grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstanceCheck {
    pub pairs: usize,
    pub quad_violations: usize,
    /// Smallest `L_ST - floor`.
    pub quad_margin: f64,
    pub boundaries: usize,
    pub upper_violations: usize,
    /// Smallest `bound - L_ST`; infinite when no boundary is admissible.
    pub upper_margin: f64,
}

pub fn check_instance(inst: &Instance, times: &[f64]) -> Result<InstanceCheck> {
    let tm = &inst.teacher;
    let floor = quad_lower_bound(tm.loss_te.clamp(0.0, 1.0))?.exact;
    let mut kappas = Vec::new();
    for s in admissible_boundaries(inst) {
        if let Ok(r) = kappa(&inst.ensemble, &inst.spectrum, s) {
            kappas.push((s, r.kappa));
        }
    }
    let mut out = InstanceCheck {
        quad_margin: f64::INFINITY,
        upper_margin: f64::INFINITY,
        boundaries: kappas.len(),
        ..Default::default()
    };
    for &t in times {
        let (l, _) = loss_at(tm, t)?;
        out.pairs += 1;
        let qm = l - floor;
        out.quad_margin = out.quad_margin.min(qm);
        if qm < -BOUND_SLACK {
            out.quad_violations += 1;
        }
        if !kappas.is_empty() {
            let um = alignment_bound_inf(tm, &kappas, t)? - l;
            out.upper_margin = out.upper_margin.min(um);
            if um < -BOUND_SLACK {
                out.upper_violations += 1;
            }
        }
    }
    Ok(out)
}

/// Time grid of the sweeps: `T = 0` and 101 log-spaced points in `[1e-3, 1e5]`.
pub fn sweep_times() -> Vec<f64> {
    let mut t = vec![0.0];
    t.extend(log_grid(1e-3, 1e5, 101).expect("fixed grid"));
    t
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepReport {
    pub instances: usize,
    pub failed_instances: usize,
    pub pairs: usize,
    pub quad_violations: usize,
    pub quad_margin: f64,
    /// Instances with at least one admissible boundary.
    pub upper_instances: usize,
    pub upper_pairs: usize,
    pub upper_violations: usize,
    pub upper_margin: f64,
    pub chains: usize,
    pub chain_violations: usize,
}

impl SweepReport {
    pub fn all_hold(&self) -> bool {
        self.failed_instances == 0 && self.quad_violations == 0 && self.upper_violations == 0 && self.chain_violations == 0
    }
}

/// Check both bounds on `per_model` instances of each model and run `chains` three-step bootstrap chains.
pub fn bound_sweep(per_model: usize, chains: usize, seed: Seed) -> Result<SweepReport> {
    let relu = relu_spectrum(RELU_SWEEP_D, DEFAULT_TRUNC_TOL)?;
    let times = sweep_times();
    let jobs: Vec<(ModelTag, u64)> = [ModelTag::LinearDiagonal, ModelTag::ReluSphere]
        .iter()
        .enumerate()
        .flat_map(|(mi, &model)| (0..per_model as u64).map(move |i| (model, (mi as u64) << 32 | i)))
        .collect();
    let checks: Vec<Option<InstanceCheck>> = jobs
        .par_iter()
        .map(|&(model, i)| {
            let inst = random_instance(model, seed.child(i), Some(&relu)).ok()?;
            check_instance(&inst, &times).ok()
        })
        .collect();
    let mut r = SweepReport { quad_margin: f64::INFINITY, upper_margin: f64::INFINITY, ..Default::default() };
    for c in &checks {
        r.instances += 1;
        let Some(c) = c else {
            r.failed_instances += 1;
            continue;
        };
        r.pairs += c.pairs;
        r.quad_violations += c.quad_violations;
        r.quad_margin = r.quad_margin.min(c.quad_margin);
        if c.boundaries > 0 {
            r.upper_instances += 1;
            r.upper_pairs += c.pairs;
            r.upper_violations += c.upper_violations;
            r.upper_margin = r.upper_margin.min(c.upper_margin);
        }
    }
    let chain_results: Vec<bool> = (0..chains as u64)
        .into_par_iter()
        .map(|i| {
            let model = if i % 2 == 0 { ModelTag::LinearDiagonal } else { ModelTag::ReluSphere };
            let s = seed.child(salt::BOOTSTRAP).child(i);
            let Ok(inst) = random_instance(model, s, Some(&relu)) else {
                return false;
            };
            let mut rng = s.stream(7);
            let times: Vec<f64> = (0..3).map(|_| 10f64.powf(rng.random_range(-2.0..3.0))).collect();
            bootstrap_chain(&inst.teacher, &times).is_ok_and(|c| c.all_hold && c.norms_nonincreasing)
        })
        .collect();
    r.chains = chains;
    r.chain_violations = chain_results.iter().filter(|ok| !**ok).count();
    Ok(r)
}
