//! Flat key-value experiment configuration.
//!
//! Files are TOML restricted to top-level scalars and arrays. Every problem is
//! collected before returning, so one failed parse reports all of them.

use crate::error::{Error, Result};
use crate::spectrum::{LinearKind, ModelTag, DEFAULT_TRUNC_TOL};
use sha2::{Digest, Sha256};
use std::path::Path;
use toml::{Table, Value};

/// Every key the parser understands.
pub const KNOWN_KEYS: &[&str] = &[
    "name",
    "model",
    "d",
    "d_exponent",
    "d_offset",
    "spectrum",
    "k",
    "alpha",
    "target",
    "target_order",
    "m_list",
    "seeds",
    "seed_base",
    "t_min",
    "t_max",
    "t_points",
    "stopping",
    "delta",
    "ci_of",
    "trunc_tol",
    "bootstrap",
    "ci_level",
    "tol_pinv",
    "tol_bound",
    "finite_width_m",
];

/// Numerical tolerances used by a run. Logged in the manifest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub trunc_tol: f64,
    pub pinv_rel: f64,
    pub bound_slack: f64,
    pub oracle_zero: f64,
    pub nu_residual_rel: f64,
    pub overtrain_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            trunc_tol: DEFAULT_TRUNC_TOL,
            pinv_rel: crate::linalg::PINV_REL,
            bound_slack: crate::bounds::BOUND_SLACK,
            oracle_zero: crate::alignment::ORACLE_ZERO,
            nu_residual_rel: crate::detequiv::NU_RESIDUAL_REL,
            overtrain_rel: 1e-6,
        }
    }
}

impl Tolerances {
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("spectrum.trunc_tol", self.trunc_tol),
            ("teacher.pinv_rel", self.pinv_rel),
            ("bounds.slack", self.bound_slack),
            ("alignment.oracle_zero", self.oracle_zero),
            ("detequiv.nu_residual_rel", self.nu_residual_rel),
            ("experiments.overtrain_rel", self.overtrain_rel),
        ]
    }
}

/// Input dimension, fixed or derived from the teacher width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DRule {
    Fixed(usize),
    /// `d = round(m^exponent) + offset`.
    Power { exponent: f64, offset: usize },
}

impl DRule {
    pub fn resolve(&self, m: usize) -> usize {
        match *self {
            DRule::Fixed(d) => d,
            DRule::Power { exponent, offset } => (m as f64).powf(exponent).round() as usize + offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumSpec {
    Relu,
    /// `k` unit eigenvalues, then `d - k` copies of `(d - k)^(-2/3)`.
    Spiked { k: usize },
    /// One unit eigenvalue, then `d - 1` copies of `sqrt(alpha / (d - 1))`.
    HeavyTail { alpha: f64 },
}

impl SpectrumSpec {
    pub fn linear_kind(&self, d: usize) -> Option<LinearKind> {
        match *self {
            SpectrumSpec::Relu => None,
            SpectrumSpec::Spiked { k } => Some(LinearKind::Spiked { k, d }),
            SpectrumSpec::HeavyTail { alpha } => Some(LinearKind::HeavyTail { alpha, d }),
        }
    }

    /// Number of leading coordinates carrying the linear-model target.
    pub fn top_count(&self) -> usize {
        match *self {
            SpectrumSpec::Spiked { k } => k,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetSpec {
    /// Linear function of the input. Random direction for relu, top coordinates for linear.
    Linear,
    /// Single-direction harmonic of the given order (relu only).
    Ridge { order: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stopping {
    /// Minimize the student loss over time.
    Optimal,
    /// `T = log(1/delta) / lambda_K`.
    Rule { delta: f64 },
}

/// Which ratio the per-m confidence interval describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiOf {
    Ratio,
    Ratio2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelTag,
    pub d: DRule,
    pub spectrum: SpectrumSpec,
    pub target: TargetSpec,
    pub m_list: Vec<usize>,
    pub seeds: usize,
    pub seed_base: u64,
    pub t_min: f64,
    pub t_max: f64,
    pub t_points: usize,
    pub stopping: Stopping,
    pub ci_of: CiOf,
    pub bootstrap: usize,
    pub ci_level: f64,
    pub tolerances: Tolerances,
    pub finite_width_m: Option<usize>,
}

impl ExperimentConfig {
    /// SHA-256 of the canonical rendering, first 16 hex chars.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Stable text rendering with every default filled in.
    pub fn canonical(&self) -> String {
        let d = match self.d {
            DRule::Fixed(d) => format!("d = {d}"),
            DRule::Power { exponent, offset } => format!("d_exponent = {exponent:?}\nd_offset = {offset}"),
        };
        let spectrum = match self.spectrum {
            SpectrumSpec::Relu => "spectrum = \"relu\"".to_string(),
            SpectrumSpec::Spiked { k } => format!("spectrum = \"spiked\"\nk = {k}"),
            SpectrumSpec::HeavyTail { alpha } => format!("spectrum = \"heavy_tail\"\nalpha = {alpha:?}"),
        };
        let target = match self.target {
            TargetSpec::Linear => "target = \"linear\"".to_string(),
            TargetSpec::Ridge { order } => format!("target = \"ridge\"\ntarget_order = {order}"),
        };
        let stopping = match self.stopping {
            Stopping::Optimal => "stopping = \"optimal\"".to_string(),
            Stopping::Rule { delta } => format!("stopping = \"rule\"\ndelta = {delta:?}"),
        };
        let ms: Vec<String> = self.m_list.iter().map(|m| m.to_string()).collect();
        let mut s = format!(
            "name = {:?}\nmodel = \"{}\"\n{d}\n{spectrum}\n{target}\nm_list = [{}]\nseeds = {}\nseed_base = {}\n\
             t_min = {:?}\nt_max = {:?}\nt_points = {}\n{stopping}\nci_of = \"{}\"\nbootstrap = {}\nci_level = {:?}\n\
             trunc_tol = {:?}\ntol_pinv = {:?}\ntol_bound = {:?}\n",
            self.name,
            self.model,
            ms.join(", "),
            self.seeds,
            self.seed_base,
            self.t_min,
            self.t_max,
            self.t_points,
            match self.ci_of {
                CiOf::Ratio => "ratio",
                CiOf::Ratio2 => "ratio2",
            },
            self.bootstrap,
            self.ci_level,
            self.tolerances.trunc_tol,
            self.tolerances.pinv_rel,
            self.tolerances.bound_slack,
        );
        if let Some(m) = self.finite_width_m {
            s.push_str(&format!("finite_width_m = {m}\n"));
        }
        s
    }
}

/// Read and validate a config file.
pub fn load_config(path: &Path, allow_unknown: bool) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
    parse_config(&text, allow_unknown)
}

/// Parse and validate config text; all problems are reported together.
pub fn parse_config(text: &str, allow_unknown: bool) -> Result<ExperimentConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax: {}", e.message())]))?;
    let mut r = Reader { table: &table, errors: Vec::new() };

    for key in table.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) && !allow_unknown {
            r.errors.push(format!("{key}: unknown key"));
        }
    }

    let name = r.string("name").unwrap_or_else(|| "experiment".to_string());
    let model = match r.string("model") {
        Some(s) => match s.parse::<ModelTag>() {
            Ok(m) => Some(m),
            Err(_) => {
                r.errors.push(format!("model: `{s}` is not relu or linear"));
                None
            }
        },
        None => {
            r.errors.push("model: required".into());
            None
        }
    };

    let d_fixed = r.uint("d");
    let d_exp = r.float("d_exponent");
    let d_off = r.uint("d_offset");
    let k = r.uint("k");
    let alpha = r.float("alpha");

    let spectrum = match (model, r.string("spectrum").as_deref()) {
        (Some(ModelTag::ReluSphere), None | Some("relu")) => Some(SpectrumSpec::Relu),
        (Some(ModelTag::ReluSphere), Some(other)) => {
            r.errors.push(format!("spectrum: `{other}` does not apply to the relu model"));
            None
        }
        (Some(ModelTag::LinearDiagonal), Some("spiked")) => {
            let k = k.unwrap_or(1) as usize;
            if k == 0 {
                r.errors.push("k: must be at least 1".into());
            }
            Some(SpectrumSpec::Spiked { k })
        }
        (Some(ModelTag::LinearDiagonal), Some("heavy_tail")) => match alpha {
            Some(a) if a > 0.0 => Some(SpectrumSpec::HeavyTail { alpha: a }),
            Some(a) => {
                r.errors.push(format!("alpha: {a} must be positive"));
                None
            }
            None => {
                r.errors.push("alpha: required for spectrum heavy_tail".into());
                None
            }
        },
        (Some(ModelTag::LinearDiagonal), Some(other)) => {
            r.errors.push(format!("spectrum: `{other}` is not spiked or heavy_tail"));
            None
        }
        (Some(ModelTag::LinearDiagonal), None) => {
            r.errors.push("spectrum: required for the linear model (spiked or heavy_tail)".into());
            None
        }
        (None, _) => None,
    };
    if k.is_some() && !matches!(spectrum, Some(SpectrumSpec::Spiked { .. })) {
        r.errors.push("k: only used with spectrum spiked".into());
    }
    if alpha.is_some() && !matches!(spectrum, Some(SpectrumSpec::HeavyTail { .. })) {
        r.errors.push("alpha: only used with spectrum heavy_tail".into());
    }

    let d = match (d_fixed, d_exp, d_off) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            r.errors.push("d: mutually exclusive with d_exponent/d_offset".into());
            None
        }
        (Some(d), None, None) => Some(DRule::Fixed(d as usize)),
        (None, Some(e), off) => {
            if !(e > 0.0) {
                r.errors.push(format!("d_exponent: {e} must be positive"));
            }
            let default_off = spectrum.map_or(0, |s| s.top_count());
            Some(DRule::Power { exponent: e, offset: off.map_or(default_off, |o| o as usize) })
        }
        (None, None, Some(_)) => {
            r.errors.push("d_offset: needs d_exponent".into());
            None
        }
        (None, None, None) => {
            r.errors.push("d: required (or d_exponent)".into());
            None
        }
    };

    let target = match r.string("target").as_deref() {
        None | Some("linear") => {
            if r.table.contains_key("target_order") {
                r.errors.push("target_order: only used with target ridge".into());
            }
            Some(TargetSpec::Linear)
        }
        Some("ridge") => {
            if model == Some(ModelTag::LinearDiagonal) {
                r.errors.push("target: ridge targets need the relu model".into());
            }
            match r.uint("target_order") {
                Some(o) if o == 1 || o % 2 == 0 => Some(TargetSpec::Ridge { order: o as usize }),
                Some(o) => {
                    r.errors.push(format!("target_order: {o} is odd and above 1; the relu kernel has no mass there"));
                    None
                }
                None => {
                    r.errors.push("target_order: required for target ridge".into());
                    None
                }
            }
        }
        Some(other) => {
            r.errors.push(format!("target: `{other}` is not linear or ridge"));
            None
        }
    };

    let m_list = match r.uint_list("m_list") {
        Some(v) if v.is_empty() => {
            r.errors.push("m_list: must not be empty".into());
            None
        }
        Some(v) => {
            if v.windows(2).any(|w| w[1] <= w[0]) {
                r.errors.push("m_list: must be strictly ascending".into());
            }
            if v.contains(&0) {
                r.errors.push("m_list: widths must be positive".into());
            }
            Some(v.into_iter().map(|x| x as usize).collect::<Vec<_>>())
        }
        None => {
            if !r.table.contains_key("m_list") {
                r.errors.push("m_list: required".into());
            }
            None
        }
    };

    if let (Some(rule), Some(ms), Some(sp)) = (d, m_list.as_ref(), spectrum) {
        for &m in ms {
            let dv = rule.resolve(m);
            if dv < 3 {
                r.errors.push(format!("d: resolves to {dv} < 3 at m = {m}"));
            }
            if sp.top_count() >= dv && sp != SpectrumSpec::Relu {
                r.errors.push(format!("d: resolves to {dv} at m = {m}, not above the leading block"));
            }
        }
    }

    let seeds = r.uint("seeds").unwrap_or(5);
    if seeds == 0 {
        r.errors.push("seeds: must be at least 1".into());
    }
    let seed_base = r.uint("seed_base").unwrap_or(0);
    let t_min = r.float("t_min").unwrap_or(1e-2);
    let t_max = r.float("t_max").unwrap_or(1e6);
    let t_points = r.uint("t_points").unwrap_or(200) as usize;
    if !(t_min > 0.0 && t_max > t_min && t_max.is_finite()) {
        r.errors.push(format!("t_min/t_max: need 0 < t_min < t_max (got {t_min}, {t_max})"));
    }
    if t_points < 2 {
        r.errors.push("t_points: need at least 2".into());
    }

    let delta = r.float("delta");
    let stopping = match r.string("stopping").as_deref() {
        None | Some("optimal") => {
            if delta.is_some() {
                r.errors.push("delta: only used with stopping rule".into());
            }
            Some(Stopping::Optimal)
        }
        Some("rule") => {
            let d = delta.unwrap_or(0.5);
            if !(d > 0.0 && d <= 1.0) {
                r.errors.push(format!("delta: {d} must lie in (0, 1]"));
            }
            Some(Stopping::Rule { delta: d })
        }
        Some(other) => {
            r.errors.push(format!("stopping: `{other}` is not optimal or rule"));
            None
        }
    };

    let ci_of = match r.string("ci_of").as_deref() {
        None => match model {
            Some(ModelTag::LinearDiagonal) => CiOf::Ratio2,
            _ => CiOf::Ratio,
        },
        Some("ratio") => CiOf::Ratio,
        Some("ratio2") => CiOf::Ratio2,
        Some(other) => {
            r.errors.push(format!("ci_of: `{other}` is not ratio or ratio2"));
            CiOf::Ratio
        }
    };

    let bootstrap = r.uint("bootstrap").unwrap_or(1000) as usize;
    if bootstrap == 0 {
        r.errors.push("bootstrap: must be at least 1".into());
    }
    let ci_level = r.float("ci_level").unwrap_or(0.95);
    if !(ci_level > 0.0 && ci_level < 1.0) {
        r.errors.push(format!("ci_level: {ci_level} must lie in (0, 1)"));
    }

    let mut tolerances = Tolerances::default();
    for (key, slot) in [
        ("trunc_tol", &mut tolerances.trunc_tol),
        ("tol_pinv", &mut tolerances.pinv_rel),
        ("tol_bound", &mut tolerances.bound_slack),
    ] {
        if let Some(v) = r.float(key) {
            if !(v > 0.0 && v < 1.0) {
                r.errors.push(format!("{key}: {v} must lie in (0, 1)"));
            }
            *slot = v;
        }
    }

    let finite_width_m = r.uint("finite_width_m").map(|x| x as usize);
    if finite_width_m == Some(0) {
        r.errors.push("finite_width_m: must be positive".into());
    }

    if !r.errors.is_empty() {
        return Err(Error::Config(r.errors));
    }
    Ok(ExperimentConfig {
        name,
        model: model.unwrap(),
        d: d.unwrap(),
        spectrum: spectrum.unwrap(),
        target: target.unwrap(),
        m_list: m_list.unwrap(),
        seeds: seeds as usize,
        seed_base,
        t_min,
        t_max,
        t_points,
        stopping: stopping.unwrap(),
        ci_of,
        bootstrap,
        ci_level,
        tolerances,
        finite_width_m,
    })
}

struct Reader<'a> {
    table: &'a Table,
    errors: Vec<String>,
}

impl Reader<'_> {
    fn string(&mut self, key: &str) -> Option<String> {
        match self.table.get(key)? {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.errors.push(format!("{key}: expected a string"));
                None
            }
        }
    }

    fn uint(&mut self, key: &str) -> Option<u64> {
        match self.table.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            _ => {
                self.errors.push(format!("{key}: expected a nonnegative integer"));
                None
            }
        }
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        match self.table.get(key)? {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.errors.push(format!("{key}: expected a number"));
                None
            }
        }
    }

    fn uint_list(&mut self, key: &str) -> Option<Vec<u64>> {
        match self.table.get(key)? {
            Value::Array(a) => {
                let v: Option<Vec<u64>> = a
                    .iter()
                    .map(|x| match x {
                        Value::Integer(i) if *i >= 0 => Some(*i as u64),
                        _ => None,
                    })
                    .collect();
                if v.is_none() {
                    self.errors.push(format!("{key}: expected an array of nonnegative integers"));
                }
                v
            }
            _ => {
                self.errors.push(format!("{key}: expected an array"));
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "model = \"linear\"\nspectrum = \"spiked\"\nd = 20\nm_list = [4, 8]\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL, false).unwrap();
        assert_eq!(c.seeds, 5);
        assert_eq!(c.spectrum, SpectrumSpec::Spiked { k: 1 });
        assert_eq!(c.stopping, Stopping::Optimal);
        assert_eq!(c.bootstrap, 1000);
        assert_eq!(c.ci_of, CiOf::Ratio2);
        assert_eq!(c.tolerances, Tolerances::default());
    }

    #[test]
    fn descending_m_list_names_the_key() {
        let text = MINIMAL.replace("[4, 8]", "[8, 4]");
        match parse_config(&text, false) {
            Err(Error::Config(errs)) => assert!(errs.iter().any(|e| e.starts_with("m_list"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn d_and_rule_are_exclusive() {
        let text = format!("{MINIMAL}d_exponent = 1.5\n");
        match parse_config(&text, false) {
            Err(Error::Config(errs)) => assert!(errs.iter().any(|e| e.contains("mutually exclusive"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_errors_reported() {
        let text = "model = \"linear\"\nm_list = [3, 2]\nseeds = 0\nfoo = 1\n";
        match parse_config(text, false) {
            Err(Error::Config(errs)) => assert!(errs.len() >= 5, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_need_the_escape_hatch() {
        let text = format!("{MINIMAL}colour = \"blue\"\n");
        assert!(parse_config(&text, false).is_err());
        assert!(parse_config(&text, true).is_ok());
    }

    #[test]
    fn d_rule_resolves() {
        let text = "model = \"linear\"\nspectrum = \"spiked\"\nd_exponent = 1.5\nm_list = [16, 256]\n";
        let c = parse_config(text, false).unwrap();
        assert_eq!(c.d, DRule::Power { exponent: 1.5, offset: 1 });
        assert_eq!(c.d.resolve(16), 65);
        assert_eq!(c.d.resolve(256), 4097);
    }

    #[test]
    fn canonical_round_trips() {
        let c = parse_config(MINIMAL, false).unwrap();
        let again = parse_config(&c.canonical(), false).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
        assert_eq!(c.hash().len(), 16);
    }
}
