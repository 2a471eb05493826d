//! Seeded sweeps over teacher width: teacher, student trajectory, optimal stopping,
//! confidence intervals, power-law fits and CSV/SVG output.

use crate::bounds::quad_lower_bound;
use crate::config::{CiOf, ExperimentConfig, Stopping, TargetSpec, Tolerances};
use crate::error::{Error, Result};
use crate::features::{random_direction, sample, Target};
use crate::rng::{salt, Seed};
use crate::spectrum::{linear_spectrum, relu_spectrum, KernelSpectrum, ModelTag};
use crate::student::{log_grid, loss_at, refine_minimum, stopping_rule, FiniteWidthFlow};
use crate::teacher::train_with_cutoff;
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// CSV header, fixed at 11 columns.
pub const CSV_COLUMNS: [&str; 11] = [
    "model", "d", "m", "seed", "L_TE", "t_opt", "L_ST", "ratio", "ratio2", "ci_lo", "ci_hi",
];

/// `lambda_min * T` beyond which the student has copied the teacher.
pub const OVERTRAIN_HORIZON: f64 = 40.0;

/// One (m, seed) cell of a sweep. Failed cells carry NaNs and the error text.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub model: ModelTag,
    pub d: usize,
    pub m: usize,
    pub seed: u64,
    pub loss_te: f64,
    pub t_opt: f64,
    pub loss_st: f64,
    pub ratio: f64,
    pub ratio2: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Student loss stays above the quadratic floor on the whole grid.
    pub bound_ok: bool,
    /// `None` when the grid never reaches the overtraining horizon.
    pub overtrain_ok: Option<bool>,
    pub error: Option<String>,
    /// `L_ST(t) / L_TE` on the time grid.
    pub curve: Vec<f64>,
}

impl CellResult {
    fn failed(model: ModelTag, d: usize, m: usize, seed: u64, err: &Error) -> Self {
        CellResult {
            model,
            d,
            m,
            seed,
            loss_te: f64::NAN,
            t_opt: f64::NAN,
            loss_st: f64::NAN,
            ratio: f64::NAN,
            ratio2: f64::NAN,
            ci_lo: f64::NAN,
            ci_hi: f64::NAN,
            bound_ok: false,
            overtrain_ok: None,
            error: Some(err.to_string()),
            curve: Vec::new(),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Per-width aggregate across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthSummary {
    pub m: usize,
    pub d: usize,
    pub n_ok: usize,
    pub loss_te: f64,
    pub loss_st: f64,
    pub ratio: f64,
    pub ratio2: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// OLS line through `(log x, log y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub log_prefactor: f64,
    pub r2: f64,
    pub n_points: usize,
}

impl PowerLawFit {
    pub fn predict(&self, x: f64) -> f64 {
        (self.log_prefactor + self.exponent * x.ln()).exp()
    }
}

/// Fit `y = c x^p` by least squares in log-log coordinates.
pub fn fit_power_law(pairs: &[(f64, f64)]) -> Result<PowerLawFit> {
    if pairs.len() < 2 {
        return Err(Error::BadFit(format!("{} points", pairs.len())));
    }
    if let Some(p) = pairs.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::BadFit(format!("nonpositive or non-finite pair ({}, {})", p.0, p.1)));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::BadFit("all abscissae equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(PowerLawFit { exponent: slope, log_prefactor: intercept, r2, n_points: pairs.len() })
}

/// Median; NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linearly interpolated quantile of sorted data.
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    v[i] + (pos - i as f64) * (v[j] - v[i])
}

/// Percentile-bootstrap interval for the median.
pub fn bootstrap_median_ci(values: &[f64], resamples: usize, level: f64, seed: Seed, stream: u64) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = seed.stream(stream);
    let n = values.len();
    let mut stats = Vec::with_capacity(resamples);
    let mut buf = vec![0.0; n];
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = values[rng.random_range(0..n)];
        }
        stats.push(median(&buf));
    }
    stats.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    (quantile_sorted(&stats, a), quantile_sorted(&stats, 1.0 - a))
}

/// Everything a sweep produces.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config_hash: String,
    pub model: ModelTag,
    pub times: Vec<f64>,
    pub rows: Vec<CellResult>,
    pub summary: Vec<WidthSummary>,
    /// Fit of `L_ST` against `L_TE` over all successful cells.
    pub fit: Option<PowerLawFit>,
    pub manifest: RunManifest,
}

impl ExperimentResult {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.ok()).count()
    }

    pub fn bound_violations(&self) -> usize {
        self.rows.iter().filter(|r| r.ok() && !r.bound_ok).count()
    }

    pub fn overtrain_violations(&self) -> usize {
        self.rows.iter().filter(|r| r.overtrain_ok == Some(false)).count()
    }

    /// Every cell succeeded and every check held.
    pub fn all_ok(&self) -> bool {
        self.failures() == 0 && self.bound_violations() == 0 && self.overtrain_violations() == 0
    }
}

/// Provenance of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub tolerances: Tolerances,
    /// Wall-clock seconds per phase.
    pub phases: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new(config_hash: String, tolerances: Tolerances) -> Self {
        RunManifest {
            config_hash,
            version: env!("CARGO_PKG_VERSION").to_string(),
            tolerances,
            phases: Vec::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("manifest {}\nversion {}\n[tolerances]\n", self.config_hash, self.version);
        for (k, v) in self.tolerances.rows() {
            let _ = writeln!(s, "{k} = {v:e}");
        }
        s.push_str("[phases]\n");
        for (k, v) in &self.phases {
            let _ = writeln!(s, "{k} = {v:.3}s");
        }
        s
    }
}

/// Spectrum for one input dimension.
pub fn build_spectrum(cfg: &ExperimentConfig, d: usize) -> Result<KernelSpectrum> {
    match cfg.spectrum.linear_kind(d) {
        Some(kind) => linear_spectrum(&kind),
        None => relu_spectrum(d, cfg.tolerances.trunc_tol),
    }
}

/// Target for one cell; random directions come from the cell seed.
pub fn build_target(cfg: &ExperimentConfig, spectrum: &KernelSpectrum, seed: Seed) -> Result<Target> {
    let d = spectrum.d;
    match (cfg.model, cfg.target) {
        (ModelTag::LinearDiagonal, TargetSpec::Linear) => {
            Target::leading_coordinates(cfg.spectrum.top_count(), spectrum)
        }
        (ModelTag::ReluSphere, TargetSpec::Linear) => {
            Target::linear_direction(random_direction(d, seed.child(salt::TARGET)), spectrum)
        }
        (ModelTag::ReluSphere, TargetSpec::Ridge { order }) => {
            Target::harmonic_ridge(order, random_direction(d, seed.child(salt::TARGET)), spectrum)
        }
        (ModelTag::LinearDiagonal, TargetSpec::Ridge { .. }) => {
            Err(Error::InvalidTarget("ridge targets need the relu model".into()))
        }
    }
}

fn run_cell(cfg: &ExperimentConfig, spectrum: &KernelSpectrum, times: &[f64], m: usize, seed: u64) -> Result<CellResult> {
    let tol = &cfg.tolerances;
    let s = Seed(seed);
    let ens = sample(cfg.model, m, spectrum.d, spectrum, s)?;
    let target = build_target(cfg, spectrum, s)?;
    let teacher = train_with_cutoff(&ens, spectrum, &target, tol.pinv_rel)?;
    let l_te = teacher.loss_te;

    let flow = match cfg.finite_width_m {
        Some(width) => {
            let student = sample(cfg.model, width, spectrum.d, spectrum, s.child(salt::STUDENT))?;
            Some(FiniteWidthFlow::new(&student, &ens, &teacher, &target, spectrum)?)
        }
        None => None,
    };
    let loss = |t: f64| -> Result<f64> {
        match &flow {
            Some(f) => f.loss_at(t),
            None => Ok(loss_at(&teacher, t)?.0),
        }
    };

    let values: Vec<f64> = times.iter().map(|&t| loss(t)).collect::<Result<_>>()?;
    let (t_opt, l_st) = match cfg.stopping {
        Stopping::Optimal => refine_minimum(times, &values, |t| loss(t).unwrap_or(f64::INFINITY)),
        Stopping::Rule { delta } => {
            let t = stopping_rule(spectrum, teacher.support, delta)?;
            (t, loss(t)?)
        }
    };

    let floor = quad_lower_bound(l_te.clamp(0.0, 1.0))?.exact;
    let bound_ok = values.iter().chain(std::iter::once(&l_st)).all(|&l| l >= floor - tol.bound_slack);

    let overtrain_ok = if flow.is_none() {
        let lam_min = teacher
            .eigenvalues
            .iter()
            .zip(&teacher.energies)
            .filter(|(_, e)| **e > 0.0)
            .map(|(l, _)| *l)
            .fold(f64::INFINITY, f64::min);
        let t_last = times[times.len() - 1];
        (lam_min.is_finite() && lam_min * t_last >= OVERTRAIN_HORIZON && l_te > 0.0)
            .then(|| ((values[values.len() - 1] / l_te) - 1.0).abs() <= tol.overtrain_rel)
    } else {
        None
    };

    Ok(CellResult {
        model: cfg.model,
        d: spectrum.d,
        m,
        seed,
        loss_te: l_te,
        t_opt,
        loss_st: l_st,
        ratio: l_st / l_te,
        ratio2: l_st / (l_te * l_te),
        ci_lo: f64::NAN,
        ci_hi: f64::NAN,
        bound_ok,
        overtrain_ok,
        error: None,
        curve: values.iter().map(|v| v / l_te).collect(),
    })
}

/// Run the sweep on `jobs` worker threads (all cores when `None`).
pub fn run(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentResult> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| run_in_pool(cfg))
}

fn run_in_pool(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut manifest = RunManifest::new(cfg.hash(), cfg.tolerances);
    let clock = Instant::now();
    let times = log_grid(cfg.t_min, cfg.t_max, cfg.t_points)?;

    let dims: Vec<usize> = {
        let mut v: Vec<usize> = cfg.m_list.iter().map(|&m| cfg.d.resolve(m)).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let spectra: BTreeMap<usize, Result<KernelSpectrum>> =
        dims.par_iter().map(|&d| (d, build_spectrum(cfg, d))).collect();
    manifest.phases.push(("spectrum".into(), clock.elapsed().as_secs_f64()));

    let cells: Vec<(usize, u64)> = cfg
        .m_list
        .iter()
        .flat_map(|&m| (0..cfg.seeds as u64).map(move |i| (m, cfg.seed_base + i)))
        .collect();
    let clock = Instant::now();
    let mut rows: Vec<CellResult> = cells
        .par_iter()
        .map(|&(m, seed)| {
            let d = cfg.d.resolve(m);
            let out = match &spectra[&d] {
                Ok(kernel) => run_cell(cfg, kernel, &times, m, seed),
                Err(e) => Err(Error::InvalidSpectrum(e.to_string())),
            };
            out.unwrap_or_else(|e| CellResult::failed(cfg.model, d, m, seed, &e))
        })
        .collect();
    rows.sort_by_key(|r| (r.m, r.seed));
    manifest.phases.push(("cells".into(), clock.elapsed().as_secs_f64()));

    let clock = Instant::now();
    let mut summary = Vec::new();
    for &m in &cfg.m_list {
        let ok: Vec<CellResult> = rows.iter().filter(|r| r.m == m && r.ok()).cloned().collect();
        let pick = |f: fn(&CellResult) -> f64| ok.iter().map(f).collect::<Vec<f64>>();
        let headline = match cfg.ci_of {
            CiOf::Ratio => pick(|r| r.ratio),
            CiOf::Ratio2 => pick(|r| r.ratio2),
        };
        let (lo, hi) = bootstrap_median_ci(
            &headline,
            cfg.bootstrap,
            cfg.ci_level,
            Seed(cfg.seed_base).child(salt::BOOTSTRAP),
            m as u64,
        );
        for r in rows.iter_mut().filter(|r| r.m == m && r.ok()) {
            r.ci_lo = lo;
            r.ci_hi = hi;
        }
        summary.push(WidthSummary {
            m,
            d: cfg.d.resolve(m),
            n_ok: ok.len(),
            loss_te: median(&pick(|r| r.loss_te)),
            loss_st: median(&pick(|r| r.loss_st)),
            ratio: median(&pick(|r| r.ratio)),
            ratio2: median(&pick(|r| r.ratio2)),
            ci_lo: lo,
            ci_hi: hi,
        });
    }
    let pairs: Vec<(f64, f64)> = rows.iter().filter(|r| r.ok()).map(|r| (r.loss_te, r.loss_st)).collect();
    let fit = fit_power_law(&pairs).ok();
    manifest.phases.push(("aggregate".into(), clock.elapsed().as_secs_f64()));

    Ok(ExperimentResult {
        config_hash: manifest.config_hash.clone(),
        model: cfg.model,
        times,
        rows,
        summary,
        fit,
        manifest,
    })
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub model: String,
    pub d: usize,
    pub m: usize,
    pub seed: u64,
    pub values: [f64; 7],
}

/// Result table as CSV, preceded by a `# manifest <hash>` comment line.
pub fn to_csv(result: &ExperimentResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in &result.rows {
        let nums = [r.loss_te, r.t_opt, r.loss_st, r.ratio, r.ratio2, r.ci_lo, r.ci_hi];
        let mut rec = vec![r.model.to_string(), r.d.to_string(), r.m.to_string(), r.seed.to_string()];
        rec.extend(nums.iter().map(|x| format!("{x:e}")));
        w.write_record(&rec)?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(format!("# manifest {}\n{}", result.config_hash, String::from_utf8_lossy(&body)))
}

/// Parse a table written by [`to_csv`]. Returns the manifest hash and the rows.
pub fn parse_csv(text: &str) -> Result<(Option<String>, Vec<CsvRow>)> {
    let hash = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# manifest "))
        .map(|s| s.trim().to_string());
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = rd.headers()?.clone();
    if header.len() != CSV_COLUMNS.len() || header.iter().zip(CSV_COLUMNS).any(|(a, b)| a != b) {
        return Err(Error::Parse(format!("unexpected header {:?}", header)));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let int = |i: usize| rec[i].parse::<u64>().map_err(|_| Error::Parse(format!("bad integer `{}`", &rec[i])));
        let mut values = [0.0; 7];
        for (j, v) in values.iter_mut().enumerate() {
            *v = rec[4 + j].parse().map_err(|_| Error::Parse(format!("bad number `{}`", &rec[4 + j])))?;
        }
        rows.push(CsvRow {
            model: rec[0].to_string(),
            d: int(1)? as usize,
            m: int(2)? as usize,
            seed: int(3)?,
            values,
        });
    }
    Ok((hash, rows))
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

impl Axes {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Axes {
        let mut a = Axes { x0: f64::INFINITY, x1: f64::NEG_INFINITY, y0: f64::INFINITY, y1: f64::NEG_INFINITY };
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            a.x0 = a.x0.min(x);
            a.x1 = a.x1.max(x);
            a.y0 = a.y0.min(y);
            a.y1 = a.y1.max(y);
        }
        if !a.x0.is_finite() {
            return Axes { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        }
        if a.x1 - a.x0 < 1e-12 {
            a.x1 = a.x0 + 1.0;
        }
        if a.y1 - a.y0 < 1e-12 {
            a.y1 = a.y0 + 1.0;
        }
        a
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn svg_frame(title: &str, xlabel: &str, ylabel: &str, axes: &Axes) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W / 2.0,
        xml_escape(title),
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
        W / 2.0,
        H - 15.0,
        xml_escape(xlabel)
    );
    let _ = writeln!(
        s,
        "<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
        H / 2.0,
        H / 2.0,
        xml_escape(ylabel)
    );
    for i in 0..=4 {
        let fx = axes.x0 + (axes.x1 - axes.x0) * i as f64 / 4.0;
        let fy = axes.y0 + (axes.y1 - axes.y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{:.2}</text>",
            axes.px(fx),
            H - PAD + 14.0,
            fx
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{:.2}</text>",
            PAD - 4.0,
            axes.py(fy) + 3.0,
            fy
        );
    }
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn polyline(axes: &Axes, pts: &[(f64, f64)], color: &str) -> String {
    let coords: Vec<String> = pts
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|&(x, y)| format!("{:.2},{:.2}", axes.px(x), axes.py(y)))
        .collect();
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n", coords.join(" "))
}

/// Pointwise median of `L_ST(t)/L_TE` per width against `log10 t`.
pub fn ratio_chart_svg(result: &ExperimentResult) -> String {
    let lt: Vec<f64> = result.times.iter().map(|t| t.log10()).collect();
    let mut series = Vec::new();
    for s in &result.summary {
        let curves: Vec<&Vec<f64>> = result.rows.iter().filter(|r| r.m == s.m && r.ok()).map(|r| &r.curve).collect();
        if curves.is_empty() {
            continue;
        }
        let pts: Vec<(f64, f64)> = lt
            .iter()
            .enumerate()
            .map(|(i, &x)| (x, median(&curves.iter().map(|c| c[i]).collect::<Vec<_>>())))
            .collect();
        series.push((s.m, pts));
    }
    let axes = Axes::fit(series.iter().flat_map(|(_, p)| p.iter().copied()));
    let mut s = svg_frame(
        &format!("{} {}: student/teacher loss ratio", result.model, result.config_hash),
        "log10 t",
        "L_ST / L_TE",
        &axes,
    );
    for (i, (m, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        s.push_str(&polyline(&axes, pts, color));
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">m = {m}</text>",
            W - PAD - 70.0,
            PAD + 16.0 + 14.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Log-log scatter of `L_ST` against `L_TE` with the fitted line.
pub fn fit_chart_svg(result: &ExperimentResult) -> String {
    let pts: Vec<(f64, f64)> = result
        .rows
        .iter()
        .filter(|r| r.ok() && r.loss_te > 0.0 && r.loss_st > 0.0)
        .map(|r| (r.loss_te.log10(), r.loss_st.log10()))
        .collect();
    let axes = Axes::fit(pts.iter().copied());
    let title = match result.fit {
        Some(f) => format!("L_ST vs L_TE: exponent {:.3}, r2 {:.4}", f.exponent, f.r2),
        None => "L_ST vs L_TE".to_string(),
    };
    let mut s = svg_frame(&title, "log10 L_TE", "log10 L_ST", &axes);
    for &(x, y) in &pts {
        let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>", axes.px(x), axes.py(y), COLORS[0]);
    }
    if let Some(f) = result.fit {
        let ln10 = std::f64::consts::LN_10;
        let line = |x: f64| (f.log_prefactor + f.exponent * x * ln10) / ln10;
        s.push_str(&polyline(&axes, &[(axes.x0, line(axes.x0)), (axes.x1, line(axes.x1))], COLORS[1]));
    }
    s.push_str("</svg>\n");
    s
}

/// Write `results.csv`, `ratio.svg`, `fit.svg` and `manifest.txt` under `dir`.
pub fn emit(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    if result.rows.is_empty() {
        return Err(Error::InvalidArgument("nothing to emit".into()));
    }
    std::fs::create_dir_all(dir)?;
    let files = [
        ("results.csv", to_csv(result)?),
        ("ratio.svg", ratio_chart_svg(result)),
        ("fit.svg", fit_chart_svg(result)),
        ("manifest.txt", result.manifest.to_text()),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, SpectrumSpec};

    #[test]
    fn exact_power_law() {
        let pairs: Vec<(f64, f64)> = [0.5, 0.1, 0.02, 0.004].iter().map(|&x| (x, 3.0 * x * x)).collect();
        let f = fit_power_law(&pairs).unwrap();
        assert!((f.exponent - 2.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!((f.log_prefactor - 3f64.ln()).abs() < 1e-12);
        assert!(fit_power_law(&[(1.0, 1.0)]).is_err());
        assert!(fit_power_law(&[(1.0, 1.0), (0.0, 2.0)]).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn ci_brackets_constant_data() {
        let (lo, hi) = bootstrap_median_ci(&[1.5; 5], 200, 0.95, Seed(1), 0);
        assert_eq!((lo, hi), (1.5, 1.5));
    }

    fn smoke_config() -> ExperimentConfig {
        parse_config(
            "model = \"linear\"\nspectrum = \"spiked\"\nd = 40\nm_list = [16]\nseeds = 1\nt_points = 40\n",
            false,
        )
        .unwrap()
    }

    #[test]
    fn smoke_run() {
        let r = run(&smoke_config(), Some(2)).unwrap();
        assert_eq!(r.rows.len(), 1);
        let row = &r.rows[0];
        for x in [row.loss_te, row.t_opt, row.loss_st, row.ratio, row.ratio2, row.ci_lo, row.ci_hi] {
            assert!(x.is_finite());
        }
        assert!(r.all_ok());
    }

    #[test]
    fn csv_round_trip() {
        let r = run(&smoke_config(), Some(1)).unwrap();
        let text = to_csv(&r).unwrap();
        let (hash, rows) = parse_csv(&text).unwrap();
        assert_eq!(hash.as_deref(), Some(r.config_hash.as_str()));
        for (a, b) in rows.iter().zip(&r.rows) {
            let orig = [b.loss_te, b.t_opt, b.loss_st, b.ratio, b.ratio2, b.ci_lo, b.ci_hi];
            for (x, y) in a.values.iter().zip(orig) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!((a.d, a.m, a.seed), (b.d, b.m, b.seed));
        }
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 11);
    }

    #[test]
    fn failed_cells_are_recorded() {
        // odd orders above 1 carry no kernel mass, so every cell fails
        let mut cfg = parse_config(
            "model = \"relu\"\nd = 8\ntarget = \"ridge\"\ntarget_order = 2\nm_list = [4]\nseeds = 2\nt_points = 20\n",
            false,
        )
        .unwrap();
        cfg.target = TargetSpec::Ridge { order: 3 };
        let r = run(&cfg, Some(1)).unwrap();
        assert_eq!(r.failures(), 2);
        assert!(r.rows.iter().all(|x| x.loss_te.is_nan()));
        assert!(!r.all_ok());
    }

    #[test]
    fn heavy_tail_spectrum_is_used() {
        let cfg = parse_config(
            "model = \"linear\"\nspectrum = \"heavy_tail\"\nalpha = 1.0\nd = 21\nm_list = [5]\nseeds = 1\n",
            false,
        )
        .unwrap();
        let s = build_spectrum(&cfg, 21).unwrap();
        assert_eq!(s.n_groups(), 2);
        assert!(matches!(cfg.spectrum, SpectrumSpec::HeavyTail { .. }));
    }
}
