//! Random feature ensembles, targets, and their population inner products.
//!
//! ReLU units are directions on the sphere and every inner product is a
//! truncated Gegenbauer series in `u_i . u_j`. Linear units live directly in
//! kernel eigen-coordinates: row `i` of `C` holds `<g_i, e_j>`.

use crate::error::{Error, Result};
use crate::rng::Seed;
use crate::spectrum::{for_each_gegenbauer, relu_sigma, KernelSpectrum, ModelTag};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// The teacher's (or student's) random units.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEnsemble {
    pub model: ModelTag,
    pub d: usize,
    pub m: usize,
    pub seed: Seed,
    /// `m x d`: unit directions (ReLU) or eigen-coefficients (linear).
    pub units: DMatrix<f64>,
}

fn check_model(spectrum: &KernelSpectrum, model: ModelTag) -> Result<()> {
    if spectrum.model != model {
        return Err(Error::ModelMismatch {
            expected: model.to_string(),
            found: spectrum.model.to_string(),
        });
    }
    Ok(())
}

fn gaussian_row(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Draw `m` units. Unit `i` uses random stream `i` of `seed`.
pub fn sample(model: ModelTag, m: usize, d: usize, spectrum: &KernelSpectrum, seed: Seed) -> Result<FeatureEnsemble> {
    check_model(spectrum, model)?;
    if m == 0 {
        return Err(Error::InvalidArgument("ensemble needs m >= 1".into()));
    }
    if spectrum.d != d {
        return Err(Error::InvalidArgument(format!(
            "spectrum dimension {} differs from d = {d}",
            spectrum.d
        )));
    }
    let mut units = DMatrix::zeros(m, d);
    for i in 0..m {
        let mut rng = seed.stream(i as u64);
        let row = match model {
            ModelTag::ReluSphere => loop {
                let z = gaussian_row(&mut rng, d);
                let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    break z.into_iter().map(|x| x / n).collect::<Vec<_>>();
                }
            },
            ModelTag::LinearDiagonal => gaussian_row(&mut rng, d)
                .into_iter()
                .zip(&spectrum.psi)
                .map(|(z, p)| z * p.sqrt())
                .collect(),
        };
        units.row_mut(i).copy_from_slice(&row);
    }
    Ok(FeatureEnsemble { model, d, m, seed, units })
}

/// Uniform random unit vector in `R^d`.
pub fn random_direction(d: usize, seed: Seed) -> DVector<f64> {
    let mut rng = seed.stream(0);
    loop {
        let v = DVector::from_vec(gaussian_row(&mut rng, d));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

impl FeatureEnsemble {
    fn check(&self, spectrum: &KernelSpectrum) -> Result<()> {
        check_model(spectrum, self.model)?;
        if spectrum.d != self.d {
            return Err(Error::InvalidArgument(format!(
                "spectrum dimension {} differs from ensemble dimension {}",
                spectrum.d, self.d
            )));
        }
        if self.model == ModelTag::ReluSphere && spectrum.k_max.is_none() {
            return Err(Error::MissingTruncation);
        }
        Ok(())
    }

    /// Text serialization with a `key=value` header.
    pub fn to_text(&self, spectrum_hash: &str) -> String {
        let mut s = format!(
            "# w2s ensemble v1\nmodel_tag={}\nd={}\nm={}\nseed={}\nspectrum_hash={}\n",
            self.model, self.d, self.m, self.seed, spectrum_hash
        );
        for i in 0..self.m {
            let row: Vec<String> = self.units.row(i).iter().map(|x| format!("{x:e}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// Inverse of [`FeatureEnsemble::to_text`]; returns the recorded spectrum hash too.
    pub fn from_text(text: &str) -> Result<(FeatureEnsemble, String)> {
        let bad = |msg: &str| Error::Parse(format!("ensemble file: {msg}"));
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let mut header = std::collections::HashMap::new();
        for key in ["model_tag", "d", "m", "seed", "spectrum_hash"] {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let (k, v) = line.split_once('=').ok_or_else(|| bad("malformed header line"))?;
            if k != key {
                return Err(bad(&format!("expected `{key}`, found `{k}`")));
            }
            header.insert(key, v.to_string());
        }
        let model: ModelTag = header["model_tag"].parse()?;
        let num = |k: &str| header[k].parse::<u64>().map_err(|_| bad(&format!("bad {k}")));
        let (d, m, seed) = (num("d")? as usize, num("m")? as usize, Seed(num("seed")?));
        let mut data = Vec::with_capacity(m * d);
        for line in lines.by_ref().take(m) {
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|_| bad("bad number"))?);
            }
        }
        if data.len() != m * d {
            return Err(bad("row data does not match m x d"));
        }
        let units = DMatrix::from_row_slice(m, d, &data);
        Ok((FeatureEnsemble { model, d, m, seed, units }, header["spectrum_hash"].clone()))
    }
}

/// Target function `f*`, normalized to unit population norm.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// ReLU model: `f*(x) = sqrt(d) beta . x` with `|beta| = 1`.
    LinearDirection(DVector<f64>),
    /// Linear model: eigen-coefficients of `f*`, unit norm.
    CoordinateLinear(DVector<f64>),
    /// ReLU model: `f*(x) = sqrt(N_k) P_{k,d}(gamma . x)`.
    HarmonicRidge { order: usize, gamma: DVector<f64> },
}

impl Target {
    /// Linear function `x -> beta . x` of the input, normalized.
    ///
    /// For the linear model the coefficients are mapped to eigen-coordinates
    /// (`beta_j sqrt(psi_j)`) first.
    pub fn linear_direction(beta: DVector<f64>, spectrum: &KernelSpectrum) -> Result<Target> {
        if beta.len() != spectrum.d {
            return Err(Error::InvalidTarget(format!("direction has length {} but d = {}", beta.len(), spectrum.d)));
        }
        match spectrum.model {
            ModelTag::ReluSphere => {
                let n = beta.norm();
                if !(n > 0.0) {
                    return Err(Error::InvalidTarget("zero direction".into()));
                }
                Ok(Target::LinearDirection(beta / n))
            }
            ModelTag::LinearDiagonal => {
                let c = DVector::from_iterator(
                    beta.len(),
                    beta.iter().zip(&spectrum.psi).map(|(b, p)| b * p.sqrt()),
                );
                Target::coordinate_linear(c, spectrum)
            }
        }
    }

    /// Equal weight on the first `k` coordinates of the linear model.
    pub fn leading_coordinates(k: usize, spectrum: &KernelSpectrum) -> Result<Target> {
        if k == 0 || k > spectrum.d {
            return Err(Error::InvalidTarget(format!("need 1 <= k <= d, got k = {k}")));
        }
        let c = DVector::from_fn(spectrum.d, |i, _| if i < k { 1.0 } else { 0.0 });
        Target::coordinate_linear(c, spectrum)
    }

    /// Eigen-coefficient target for the linear model.
    pub fn coordinate_linear(coeffs: DVector<f64>, spectrum: &KernelSpectrum) -> Result<Target> {
        if spectrum.model != ModelTag::LinearDiagonal {
            return Err(Error::InvalidTarget("coordinate targets need the linear model".into()));
        }
        if coeffs.len() != spectrum.d {
            return Err(Error::InvalidTarget(format!("{} coefficients but d = {}", coeffs.len(), spectrum.d)));
        }
        if coeffs.iter().zip(&spectrum.psi).any(|(c, p)| *c != 0.0 && *p == 0.0) {
            return Err(Error::InvalidTarget("target has mass on a zero-eigenvalue coordinate".into()));
        }
        let n = coeffs.norm();
        if !(n > 0.0) {
            return Err(Error::InvalidTarget("zero target".into()));
        }
        Ok(Target::CoordinateLinear(coeffs / n))
    }

    /// Single-direction harmonic of order `order` (even, or 1).
    pub fn harmonic_ridge(order: usize, gamma: DVector<f64>, spectrum: &KernelSpectrum) -> Result<Target> {
        if spectrum.model != ModelTag::ReluSphere {
            return Err(Error::InvalidTarget("harmonic ridges need the relu model".into()));
        }
        if order > 1 && order % 2 == 1 {
            return Err(Error::InvalidTarget(format!(
                "order {order} is odd; the relu kernel has no mass there"
            )));
        }
        if spectrum.group_of_order(order).is_none() {
            return Err(Error::InvalidTarget(format!("order {order} lies beyond the truncation")));
        }
        if gamma.len() != spectrum.d {
            return Err(Error::InvalidTarget(format!("direction has length {} but d = {}", gamma.len(), spectrum.d)));
        }
        let n = gamma.norm();
        if !(n > 0.0) {
            return Err(Error::InvalidTarget("zero direction".into()));
        }
        Ok(Target::HarmonicRidge { order, gamma: gamma / n })
    }

    /// Squared population norm from the stored representation.
    pub fn norm2(&self) -> f64 {
        match self {
            Target::LinearDirection(b) => b.norm_squared(),
            Target::CoordinateLinear(c) => c.norm_squared(),
            Target::HarmonicRidge { gamma, .. } => gamma.norm_squared(),
        }
    }

    /// `|P_g f*|^2` for every group.
    pub fn group_mass(&self, spectrum: &KernelSpectrum) -> Vec<f64> {
        let mut out = vec![0.0; spectrum.n_groups()];
        match self {
            Target::LinearDirection(b) => {
                if let Some(g) = spectrum.group_of_order(1) {
                    out[g] = b.norm_squared();
                }
            }
            Target::HarmonicRidge { order, .. } => {
                if let Some(g) = spectrum.group_of_order(*order) {
                    out[g] = 1.0;
                }
            }
            Target::CoordinateLinear(c) => {
                for (g, o) in out.iter_mut().enumerate() {
                    *o = spectrum.coords(g).map(|j| c[j] * c[j]).sum();
                }
            }
        }
        out
    }

    /// Number of leading groups needed to contain the target (`K`).
    pub fn support(&self, spectrum: &KernelSpectrum) -> usize {
        self.group_mass(spectrum)
            .iter()
            .rposition(|&x| x > 0.0)
            .map_or(0, |g| g + 1)
    }
}

/// Coefficients of a truncated Gegenbauer series, indexed by order.
struct Series {
    d: usize,
    k_max: usize,
    coef: Vec<f64>,
}

impl Series {
    /// Series of `mass_g P_{k_g}` over the groups selected by `keep`.
    fn masses(spectrum: &KernelSpectrum, keep: impl Fn(usize) -> bool) -> Series {
        let k_max = spectrum
            .groups
            .iter()
            .enumerate()
            .filter(|(g, _)| keep(*g))
            .map(|(_, x)| x.order)
            .max()
            .unwrap_or(0);
        let mut coef = vec![0.0; k_max + 1];
        for (g, grp) in spectrum.groups.iter().enumerate() {
            if keep(g) {
                coef[grp.order] += grp.mass;
            }
        }
        Series { d: spectrum.d, k_max, coef }
    }

    fn at_one(&self) -> f64 {
        self.coef.iter().sum()
    }

    fn eval(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for_each_gegenbauer(self.k_max, self.d, t, |k, p| acc += self.coef[k] * p);
        acc
    }
}

fn clamp_dot(a: nalgebra::DVectorView<f64>, b: nalgebra::DVectorView<f64>) -> f64 {
    a.dot(&b).clamp(-1.0, 1.0)
}

fn relu_series_gram(u: &DMatrix<f64>, series: &Series) -> DMatrix<f64> {
    let m = u.nrows();
    let ut = u.transpose();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            (i..m)
                .map(|j| {
                    if i == j {
                        series.at_one()
                    } else {
                        series.eval(clamp_dot(ut.column(i), ut.column(j)))
                    }
                })
                .collect()
        })
        .collect();
    let mut out = DMatrix::zeros(m, m);
    for (i, row) in rows.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            out[(i, i + off)] = *v;
            out[(i + off, i)] = *v;
        }
    }
    out
}

fn linear_block_gram(c: &DMatrix<f64>, cols: std::ops::Range<usize>) -> DMatrix<f64> {
    let block = c.columns(cols.start, cols.len());
    block * block.transpose()
}

/// Full Gram matrix `Phi_ij = <g_i, g_j>`.
pub fn gram(ens: &FeatureEnsemble, spectrum: &KernelSpectrum) -> Result<DMatrix<f64>> {
    ens.check(spectrum)?;
    Ok(match ens.model {
        ModelTag::LinearDiagonal => &ens.units * ens.units.transpose(),
        ModelTag::ReluSphere => relu_series_gram(&ens.units, &Series::masses(spectrum, |_| true)),
    })
}

/// Gram matrix of the units projected onto eigengroup `g`.
pub fn order_gram(ens: &FeatureEnsemble, spectrum: &KernelSpectrum, g: usize) -> Result<DMatrix<f64>> {
    ens.check(spectrum)?;
    spectrum.group(g)?;
    Ok(match ens.model {
        ModelTag::LinearDiagonal => linear_block_gram(&ens.units, spectrum.coords(g)),
        ModelTag::ReluSphere => relu_series_gram(&ens.units, &Series::masses(spectrum, |h| h == g)),
    })
}

/// `A_S`: Gram of the units projected onto the leading `s` groups.
pub fn projected_gram(ens: &FeatureEnsemble, spectrum: &KernelSpectrum, s: usize) -> Result<DMatrix<f64>> {
    ens.check(spectrum)?;
    if s > spectrum.n_groups() {
        return Err(Error::UnknownGroup { index: s, groups: spectrum.n_groups() });
    }
    Ok(match ens.model {
        ModelTag::LinearDiagonal => {
            let end = if s == 0 { 0 } else { spectrum.coords(s - 1).end };
            linear_block_gram(&ens.units, 0..end)
        }
        ModelTag::ReluSphere => relu_series_gram(&ens.units, &Series::masses(spectrum, |h| h < s)),
    })
}

/// Cross Gram `<a_i, b_j>` between two ensembles over the same spectrum.
pub fn cross_gram(a: &FeatureEnsemble, b: &FeatureEnsemble, spectrum: &KernelSpectrum) -> Result<DMatrix<f64>> {
    a.check(spectrum)?;
    b.check(spectrum)?;
    Ok(match a.model {
        ModelTag::LinearDiagonal => &a.units * b.units.transpose(),
        ModelTag::ReluSphere => {
            let series = Series::masses(spectrum, |_| true);
            let at = a.units.transpose();
            let bt = b.units.transpose();
            let rows: Vec<Vec<f64>> = (0..a.m)
                .into_par_iter()
                .map(|i| {
                    (0..b.m)
                        .map(|j| series.eval(clamp_dot(at.column(i), bt.column(j))))
                        .collect()
                })
                .collect();
            DMatrix::from_fn(a.m, b.m, |i, j| rows[i][j])
        }
    })
}

/// `v_i = <g_i, f*>`.
pub fn target_cross(ens: &FeatureEnsemble, spectrum: &KernelSpectrum, target: &Target) -> Result<DVector<f64>> {
    ens.check(spectrum)?;
    match (ens.model, target) {
        (ModelTag::LinearDiagonal, Target::CoordinateLinear(c)) => Ok(&ens.units * c),
        (ModelTag::ReluSphere, Target::LinearDirection(b)) => {
            let s = relu_sigma(1, ens.d)? * (ens.d as f64).sqrt();
            Ok(&ens.units * b * s)
        }
        (ModelTag::ReluSphere, Target::HarmonicRidge { order, gamma }) => {
            let k = *order;
            let scale = relu_sigma(k, ens.d)? * (crate::spectrum::ln_harmonic_dim(k, ens.d)? / 2.0).exp();
            let dots = &ens.units * gamma;
            Ok(dots.map(|t| {
                let mut p = 0.0;
                for_each_gegenbauer(k, ens.d, t.clamp(-1.0, 1.0), |i, v| {
                    if i == k {
                        p = v
                    }
                });
                scale * p
            }))
        }
        _ => Err(Error::InvalidTarget(format!("target family does not fit the {} model", ens.model))),
    }
}

/// `w^T G_g w` for every group, with a fixed summation order.
pub fn group_quadratic_forms(ens: &FeatureEnsemble, spectrum: &KernelSpectrum, w: &DVector<f64>) -> Result<Vec<f64>> {
    ens.check(spectrum)?;
    let ng = spectrum.n_groups();
    match ens.model {
        ModelTag::LinearDiagonal => {
            let theta = ens.units.transpose() * w;
            Ok((0..ng)
                .map(|g| spectrum.coords(g).map(|j| theta[j] * theta[j]).sum())
                .collect())
        }
        ModelTag::ReluSphere => {
            let k_max = spectrum.groups.iter().map(|g| g.order).max().unwrap_or(0);
            let mut group_of = vec![usize::MAX; k_max + 1];
            for (g, grp) in spectrum.groups.iter().enumerate() {
                group_of[grp.order] = g;
            }
            let ut = ens.units.transpose();
            let m = ens.m;
            let rows: Vec<Vec<f64>> = (0..m)
                .into_par_iter()
                .map(|i| {
                    let mut acc = vec![0.0; ng];
                    for g in 0..ng {
                        acc[g] += w[i] * w[i];
                    }
                    for j in i + 1..m {
                        let wij = 2.0 * w[i] * w[j];
                        let t = clamp_dot(ut.column(i), ut.column(j));
                        for_each_gegenbauer(k_max, ens.d, t, |k, p| {
                            let g = group_of[k];
                            if g != usize::MAX {
                                acc[g] += wij * p;
                            }
                        });
                    }
                    acc
                })
                .collect();
            let mut out = vec![0.0; ng];
            for row in &rows {
                for g in 0..ng {
                    out[g] += row[g];
                }
            }
            for (g, o) in out.iter_mut().enumerate() {
                *o *= spectrum.groups[g].mass;
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{linear_spectrum, relu_spectrum, LinearKind};

    #[test]
    fn sampling_is_deterministic_and_normalized() {
        let s = relu_spectrum(8, 1e-6).unwrap();
        let a = sample(ModelTag::ReluSphere, 5, 8, &s, Seed(3)).unwrap();
        let b = sample(ModelTag::ReluSphere, 5, 8, &s, Seed(3)).unwrap();
        assert_eq!(a, b);
        for i in 0..5 {
            assert!((a.units.row(i).norm() - 1.0).abs() < 1e-12);
        }
        // prefix stability: unit i depends only on stream i
        let c = sample(ModelTag::ReluSphere, 7, 8, &s, Seed(3)).unwrap();
        assert_eq!(a.units, c.units.rows(0, 5).into_owned());
    }

    #[test]
    fn sample_rejects_mismatch() {
        let s = relu_spectrum(8, 1e-6).unwrap();
        assert!(matches!(
            sample(ModelTag::LinearDiagonal, 3, 8, &s, Seed(0)),
            Err(Error::ModelMismatch { .. })
        ));
        assert!(sample(ModelTag::ReluSphere, 0, 8, &s, Seed(0)).is_err());
    }

    #[test]
    fn relu_pair_mean_is_near_zero() {
        let s = relu_spectrum(32, 1e-4).unwrap();
        let e = sample(ModelTag::ReluSphere, 1000, 32, &s, Seed(11)).unwrap();
        let g = &e.units * e.units.transpose();
        let mut sum = 0.0;
        let mut n = 0.0;
        for i in 0..1000 {
            for j in i + 1..1000 {
                sum += g[(i, j)];
                n += 1.0;
            }
        }
        assert!((sum / n).abs() < 4.0 / f64::sqrt(n));
    }

    #[test]
    fn linear_column_variance_band() {
        let s = linear_spectrum(&LinearKind::HeavyTail { alpha: 1.0, d: 101 }).unwrap();
        let e = sample(ModelTag::LinearDiagonal, 50, 101, &s, Seed(5)).unwrap();
        let col = e.units.column(0);
        let mean = col.mean();
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 49.0;
        assert!((0.5..=1.7).contains(&var), "variance {var}");
    }

    #[test]
    fn identical_units_give_the_trace() {
        let s = relu_spectrum(32, 1e-8).unwrap();
        let mut e = sample(ModelTag::ReluSphere, 2, 32, &s, Seed(1)).unwrap();
        let r0 = e.units.row(0).into_owned();
        e.units.row_mut(1).copy_from(&r0);
        let g = gram(&e, &s).unwrap();
        let full = 1.0 / 64.0;
        assert!(g[(0, 1)] <= full * (1.0 + 1e-12) && g[(0, 1)] >= full * (1.0 - 1e-8));
        assert!((g[(0, 1)] - g[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn linear_gram_of_identity_rows() {
        let s = linear_spectrum(&LinearKind::Custom(vec![1.0, 1.0, 1.0])).unwrap();
        let e = FeatureEnsemble {
            model: ModelTag::LinearDiagonal,
            d: 3,
            m: 3,
            seed: Seed(0),
            units: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])),
        };
        let g = gram(&e, &s).unwrap();
        assert_eq!(g, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 9.0])));
    }

    #[test]
    fn order_grams_partition_the_gram() {
        let s = relu_spectrum(8, 1e-6).unwrap();
        let e = sample(ModelTag::ReluSphere, 6, 8, &s, Seed(9)).unwrap();
        let phi = gram(&e, &s).unwrap();
        let mut sum = DMatrix::zeros(6, 6);
        for g in 0..s.n_groups() {
            sum += order_gram(&e, &s, g).unwrap();
        }
        assert!((sum - &phi).abs().max() < 1e-14);
        // order 1 block: (1/(2d))^2 d (u_i . u_j)
        let g1 = order_gram(&e, &s, s.group_of_order(1).unwrap()).unwrap();
        let dots = &e.units * e.units.transpose();
        let expect = dots * (8.0 / 256.0);
        assert!((g1 - expect).abs().max() < 1e-15);
        assert!(order_gram(&e, &s, s.n_groups()).is_err());
    }

    #[test]
    fn relu_direction_cross_value() {
        let s = relu_spectrum(32, 1e-6).unwrap();
        let e = sample(ModelTag::ReluSphere, 3, 32, &s, Seed(2)).unwrap();
        let beta = e.units.row(0).transpose();
        let t = Target::linear_direction(beta, &s).unwrap();
        let v = target_cross(&e, &s, &t).unwrap();
        assert!((v[0] - 32f64.sqrt() / 64.0).abs() < 1e-15);
    }

    #[test]
    fn linear_cross_is_first_column() {
        let s = linear_spectrum(&LinearKind::Spiked { k: 1, d: 10 }).unwrap();
        let e = sample(ModelTag::LinearDiagonal, 4, 10, &s, Seed(2)).unwrap();
        let mut b = DVector::zeros(10);
        b[0] = 1.0;
        let t = Target::coordinate_linear(b, &s).unwrap();
        let v = target_cross(&e, &s, &t).unwrap();
        assert_eq!(v, e.units.column(0).into_owned());
    }

    #[test]
    fn odd_ridge_rejected() {
        let s = relu_spectrum(8, 1e-6).unwrap();
        let g = random_direction(8, Seed(1));
        assert!(Target::harmonic_ridge(3, g.clone(), &s).is_err());
        assert!(Target::harmonic_ridge(2, g, &s).is_ok());
    }

    #[test]
    fn quadratic_forms_match_order_grams() {
        let s = relu_spectrum(8, 1e-6).unwrap();
        let e = sample(ModelTag::ReluSphere, 5, 8, &s, Seed(4)).unwrap();
        let w = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5, -0.7]);
        let q = group_quadratic_forms(&e, &s, &w).unwrap();
        for g in [0, 1, 2, 5] {
            let gg = order_gram(&e, &s, g).unwrap();
            let direct = w.dot(&(gg * &w));
            assert!((q[g] - direct).abs() < 1e-14 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn text_round_trip() {
        let s = linear_spectrum(&LinearKind::Spiked { k: 1, d: 5 }).unwrap();
        let e = sample(ModelTag::LinearDiagonal, 3, 5, &s, Seed(8)).unwrap();
        let text = e.to_text(&s.hash());
        let (back, h) = FeatureEnsemble::from_text(&text).unwrap();
        assert_eq!(back, e);
        assert_eq!(h, s.hash());
    }
}
