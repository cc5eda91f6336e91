//! JSON run configuration.
//!
//! ```json
//! {
//!   "problem": { "key": "concave-hjb-toy", "horizon": 1.0, "params": { "sigma": 0.5 } },
//!   "measure": { "kind": "finite-gaussian-jumps", "intensity": 1.0, "mean": 0.1, "std": 0.3 },
//!   "controls": [ { "a": 0.1, "b": 0.2, "c": 0.0, "k0": 0.0, "k1": 0.0, "jump_scale": null } ],
//!   "scheme": { "n": 50, "samples": 20000, "dx": 0.025, "padding": 3.5, "seed": 7 },
//!   "kappa_rule": { "rule": "fixed", "kappa": 0.1 }
//! }
//! ```
//!
//! Only `problem.key` is required. Errors carry the line and column they refer to.

use std::fmt;
use std::path::Path;

use serde::Deserialize;
use serde_json::value::RawValue;

use crate::bench::problems::{LinearSymbolParams, MertonParams, PortfolioParams, ToyControl, ToyParams};
use crate::bench::{BenchmarkProblem, ProblemKey, ProblemParams};
use crate::error::{Error, Result};
use crate::hjb::RateConstants;
use crate::levy::LevyMeasure;
use crate::scheme::KappaRule;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Optional scheme settings; unset fields fall back to command-line flags or defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub n: Option<usize>,
    pub samples: Option<usize>,
    pub dx: Option<f64>,
    pub padding: Option<f64>,
    pub monotonized: Option<bool>,
    pub seed: Option<u64>,
    pub poisson_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
enum KappaRuleSection {
    Fixed {
        kappa: f64,
    },
    Convergence,
    Rate {
        #[serde(default = "one")]
        theta: f64,
        #[serde(default = "one")]
        second_moment: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl From<KappaRuleSection> for KappaRule {
    fn from(s: KappaRuleSection) -> Self {
        match s {
            KappaRuleSection::Fixed { kappa } => KappaRule::Fixed(kappa),
            KappaRuleSection::Convergence => KappaRule::Convergence,
            KappaRuleSection::Rate { theta, second_moment } => KappaRule::Rate(RateConstants { theta, second_moment }),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemSection<'a> {
    key: ProblemKey,
    horizon: Option<f64>,
    #[serde(borrow)]
    params: Option<&'a RawValue>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document<'a> {
    #[serde(borrow)]
    problem: ProblemSection<'a>,
    measure: Option<LevyMeasure>,
    controls: Option<Vec<ToyControl>>,
    #[serde(default)]
    scheme: SchemeSection,
    kappa_rule: Option<KappaRuleSection>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: BenchmarkProblem,
    pub scheme: SchemeSection,
    pub kappa_rule: Option<KappaRule>,
}

/// Parses a configuration document and builds its benchmark problem.
pub fn parse_config(text: &str) -> std::result::Result<RunConfig, ConfigError> {
    let doc: Document = serde_json::from_str(text).map_err(|e| json_error(&e, 0, text))?;
    let key = doc.problem.key;
    let mut params = match doc.problem.params {
        None => ProblemParams::default_for(key),
        Some(raw) => parse_params(key, raw, text)?,
    };
    if let Some(controls) = doc.controls {
        apply_controls(&mut params, controls).map_err(|m| anchored(text, "controls", m))?;
    }
    let measure = doc.measure.unwrap_or_else(|| BenchmarkProblem::default_measure(key));
    measure.validate().map_err(|e| anchored(text, "measure", e.to_string()))?;
    let horizon = doc.problem.horizon.unwrap_or(1.0);
    let problem = BenchmarkProblem::new(params, measure, horizon).map_err(|e| anchored(text, "problem", e.to_string()))?;
    validate_scheme(&doc.scheme).map_err(|m| anchored(text, "scheme", m))?;
    if let Some(KappaRuleSection::Fixed { kappa }) = doc.kappa_rule {
        if !(kappa >= 0.0) {
            return Err(anchored(text, "kappa_rule", format!("kappa must be >= 0, got {kappa}")));
        }
    }
    Ok(RunConfig { problem, scheme: doc.scheme, kappa_rule: doc.kappa_rule.map(Into::into) })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: cannot read config: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Error::Config(format!("{}:{}:{}: {}", path.display(), e.line, e.column, e.message)))
}

fn parse_params(key: ProblemKey, raw: &RawValue, text: &str) -> std::result::Result<ProblemParams, ConfigError> {
    let src = raw.get();
    let offset = src.as_ptr() as usize - text.as_ptr() as usize;
    let parsed = match key {
        ProblemKey::LinearSymbol => serde_json::from_str::<LinearSymbolParams>(src).map(ProblemParams::LinearSymbol),
        ProblemKey::MertonLinear => serde_json::from_str::<MertonParams>(src).map(ProblemParams::MertonLinear),
        ProblemKey::ConcaveHjbToy => serde_json::from_str::<ToyParams>(src).map(ProblemParams::ConcaveHjbToy),
        ProblemKey::PortfolioNu0 => serde_json::from_str::<PortfolioParams>(src).map(ProblemParams::PortfolioNu0),
    };
    parsed.map_err(|e| json_error(&e, offset, text))
}

/// `controls` replaces the toy problem's control list; for linear-symbol it
/// must hold a single control without discount or running cost.
fn apply_controls(params: &mut ProblemParams, controls: Vec<ToyControl>) -> std::result::Result<(), String> {
    match params {
        ProblemParams::ConcaveHjbToy(p) => {
            if controls.is_empty() {
                return Err("controls must not be empty".into());
            }
            p.controls = controls;
            Ok(())
        }
        ProblemParams::LinearSymbol(p) => match controls.as_slice() {
            [c] if c.c == 0.0 && c.k0 == 0.0 && c.k1 == 0.0 => {
                p.control_a = c.a;
                p.control_b = c.b;
                p.control_jump_scale = c.jump_scale;
                Ok(())
            }
            [_] => Err("linear-symbol control must have c = k0 = k1 = 0".into()),
            _ => Err("linear-symbol takes exactly one control".into()),
        },
        other => Err(format!("problem `{}` does not accept a controls section", other.key())),
    }
}

fn validate_scheme(s: &SchemeSection) -> std::result::Result<(), String> {
    if s.n == Some(0) {
        return Err("scheme.n must be >= 1".into());
    }
    if s.samples == Some(0) {
        return Err("scheme.samples must be >= 1".into());
    }
    if let Some(dx) = s.dx {
        if !(dx > 0.0) {
            return Err(format!("scheme.dx must be > 0, got {dx}"));
        }
    }
    if let Some(p) = s.padding {
        if !(p >= 0.0) {
            return Err(format!("scheme.padding must be >= 0, got {p}"));
        }
    }
    if let Some(t) = s.poisson_threshold {
        if !(t >= 0.0) {
            return Err(format!("scheme.poisson_threshold must be >= 0, got {t}"));
        }
    }
    Ok(())
}

fn json_error(e: &serde_json::Error, offset: usize, text: &str) -> ConfigError {
    let (base_line, base_col) = line_col(text, offset);
    let (line, column) = if e.line() <= 1 { (base_line, base_col + e.column().saturating_sub(1)) } else { (base_line + e.line() - 1, e.column()) };
    let message = e.to_string();
    // serde_json appends its own position, which is relative to the nested value
    let message = match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message,
    };
    ConfigError { line, column, message }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, column)
}

/// Points at the `"section"` key, or the start of the document if absent.
fn anchored(text: &str, section: &str, message: String) -> ConfigError {
    let needle = format!("\"{section}\"");
    let (line, column) = text.find(&needle).map_or((1, 1), |i| line_col(text, i));
    ConfigError { line, column, message: format!("{section}: {message}") }
}
