use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjb::{ControlCoefficients, ControlledProblem};
use crate::jumpdiff::CoefficientField;
use crate::levy::LevyMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKey {
    LinearSymbol,
    MertonLinear,
    ConcaveHjbToy,
    PortfolioNu0,
}

impl ProblemKey {
    pub const ALL: [ProblemKey; 4] =
        [ProblemKey::LinearSymbol, ProblemKey::MertonLinear, ProblemKey::ConcaveHjbToy, ProblemKey::PortfolioNu0];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKey::LinearSymbol => "linear-symbol",
            ProblemKey::MertonLinear => "merton-linear",
            ProblemKey::ConcaveHjbToy => "concave-hjb-toy",
            ProblemKey::PortfolioNu0 => "portfolio-nu0",
        }
    }
}

impl fmt::Display for ProblemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown problem `{s}` (expected one of linear-symbol, merton-linear, concave-hjb-toy, portfolio-nu0)")))
    }
}

/// Constant-coefficient linear equation with terminal value cos(u x).
///
/// The controlled part adds ½ a_c v'' + b_c v' and, when `control_jump_scale`
/// is set, a second compensated jump operator with amplitude s_c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSymbolParams {
    pub mu: f64,
    pub sigma: f64,
    pub eta_scale: f64,
    pub frequency: f64,
    pub control_a: f64,
    pub control_b: f64,
    pub control_jump_scale: Option<f64>,
}

impl Default for LinearSymbolParams {
    fn default() -> Self {
        Self { mu: 0.1, sigma: 0.4, eta_scale: 1.0, frequency: 1.0, control_a: 0.08, control_b: 0.2, control_jump_scale: Some(1.0) }
    }
}

/// Merton-type jump diffusion without control; terminal value is a Gaussian bump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MertonParams {
    pub mu: f64,
    pub sigma: f64,
    pub bump_width: f64,
    pub bump_center: f64,
}

impl Default for MertonParams {
    fn default() -> Self {
        Self { mu: 0.05, sigma: 0.3, bump_width: 2.0, bump_center: 0.0 }
    }
}

/// One control of the concave toy problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyControl {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// k(x) = k0 + k1·sin(x)
    pub k0: f64,
    pub k1: f64,
    pub jump_scale: Option<f64>,
}

/// Two-control concave HJB in d = 1 with a finite jump measure:
/// −v_t − L v − min_α { ½ a_α v'' + b_α v' + c_α v + k_α + J_α v } = 0, v(T) = exp(−x²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyParams {
    pub mu: f64,
    pub sigma: f64,
    pub eta_scale: f64,
    pub controls: Vec<ToyControl>,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            mu: 0.0,
            sigma: 0.5,
            eta_scale: 1.0,
            controls: vec![
                ToyControl { a: 0.15, b: 0.3, c: -0.2, k0: 0.1, k1: 0.1, jump_scale: None },
                ToyControl { a: 0.0, b: -0.3, c: 0.0, k0: 0.05, k1: 0.0, jump_scale: Some(0.5) },
            ],
        }
    }
}

/// sup over θ of θ b p + ½ θ² a² γ on a uniform θ-grid, no jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioParams {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub n_theta: usize,
}

impl Default for PortfolioParams {
    fn default() -> Self {
        Self { a: 0.3, b: 0.1, sigma: 1.0, theta_min: 0.0, theta_max: 3.0, n_theta: 61 }
    }
}

impl PortfolioParams {
    pub fn theta_grid(&self) -> Vec<f64> {
        let n = self.n_theta.max(2);
        (0..n).map(|i| self.theta_min + (self.theta_max - self.theta_min) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.theta_max - self.theta_min) / (self.n_theta.max(2) - 1) as f64
    }

    /// −(b p)² / (2 a² γ), the supremum over all real θ for γ < 0.
    pub fn closed_form(&self, p: f64, gamma: f64) -> f64 {
        -(self.b * p).powi(2) / (2.0 * self.a * self.a * gamma)
    }

    pub fn maximiser(&self, p: f64, gamma: f64) -> f64 {
        -self.b * p / (self.a * self.a * gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "key", rename_all = "kebab-case")]
pub enum ProblemParams {
    LinearSymbol(LinearSymbolParams),
    MertonLinear(MertonParams),
    ConcaveHjbToy(ToyParams),
    PortfolioNu0(PortfolioParams),
}

impl ProblemParams {
    pub fn key(&self) -> ProblemKey {
        match self {
            ProblemParams::LinearSymbol(_) => ProblemKey::LinearSymbol,
            ProblemParams::MertonLinear(_) => ProblemKey::MertonLinear,
            ProblemParams::ConcaveHjbToy(_) => ProblemKey::ConcaveHjbToy,
            ProblemParams::PortfolioNu0(_) => ProblemKey::PortfolioNu0,
        }
    }

    pub fn default_for(key: ProblemKey) -> Self {
        match key {
            ProblemKey::LinearSymbol => ProblemParams::LinearSymbol(LinearSymbolParams::default()),
            ProblemKey::MertonLinear => ProblemParams::MertonLinear(MertonParams::default()),
            ProblemKey::ConcaveHjbToy => ProblemParams::ConcaveHjbToy(ToyParams::default()),
            ProblemKey::PortfolioNu0 => ProblemParams::PortfolioNu0(PortfolioParams::default()),
        }
    }
}

/// A benchmark: controlled problem, measure, terminal function, region of
/// interest and the parameters its oracle needs.
#[derive(Debug, Clone)]
pub struct BenchmarkProblem {
    pub params: ProblemParams,
    pub problem: ControlledProblem,
    pub measure: LevyMeasure,
    pub horizon: f64,
    pub interior_lower: Vec<f64>,
    pub interior_upper: Vec<f64>,
}

fn default_measure(key: ProblemKey) -> LevyMeasure {
    match key {
        ProblemKey::LinearSymbol => LevyMeasure::FiniteGaussianJumps { intensity: 1.0, mean: 0.1, std: 0.25 },
        ProblemKey::MertonLinear => LevyMeasure::FiniteGaussianJumps { intensity: 2.0, mean: -0.1, std: 0.2 },
        ProblemKey::ConcaveHjbToy => LevyMeasure::FiniteGaussianJumps { intensity: 1.0, mean: 0.1, std: 0.3 },
        // ν = 0, represented by an atom the truncation never reaches
        ProblemKey::PortfolioNu0 => LevyMeasure::FinitePointMass { intensity: 0.0, location: 1.0 },
    }
}

fn scalar(a: f64, b: f64, c: f64, k: f64, s: Option<f64>) -> ControlCoefficients {
    ControlCoefficients {
        a: DMatrix::from_element(1, 1, a),
        b: DVector::from_element(1, b),
        c,
        k,
        jump_scale: s.map(|v| DVector::from_element(1, v)),
    }
}

impl BenchmarkProblem {
    pub fn from_key(key: ProblemKey) -> Result<Self> {
        Self::new(ProblemParams::default_for(key), default_measure(key), 1.0)
    }

    pub fn default_measure(key: ProblemKey) -> LevyMeasure {
        default_measure(key)
    }

    pub fn new(params: ProblemParams, measure: LevyMeasure, horizon: f64) -> Result<Self> {
        measure.validate()?;
        if !(horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be > 0, got {horizon}")));
        }
        let problem = match &params {
            ProblemParams::LinearSymbol(p) => {
                let (a, b, s) = (p.control_a, p.control_b, p.control_jump_scale);
                ControlledProblem::new(
                    CoefficientField::constant_1d(p.mu, p.sigma, p.eta_scale),
                    vec![0.0],
                    vec![0.0],
                    Arc::new(move |_, _, _, _| scalar(a, b, 0.0, 0.0, s)),
                )
            }
            ProblemParams::MertonLinear(p) => ControlledProblem::new(
                CoefficientField::constant_1d(p.mu, p.sigma, 1.0),
                vec![0.0],
                vec![0.0],
                Arc::new(|_, _, _, _| ControlCoefficients::zero(1)),
            ),
            ProblemParams::ConcaveHjbToy(p) => {
                if p.controls.is_empty() {
                    return Err(Error::Config("concave-hjb-toy needs at least one control".into()));
                }
                let controls = p.controls.clone();
                ControlledProblem::new(
                    CoefficientField::constant_1d(p.mu, p.sigma, p.eta_scale),
                    (0..controls.len()).map(|i| i as f64).collect(),
                    vec![0.0],
                    Arc::new(move |alpha, _, _, x| {
                        let c = &controls[alpha as usize];
                        scalar(c.a, c.b, c.c, c.k0 + c.k1 * x[0].sin(), c.jump_scale)
                    }),
                )
            }
            ProblemParams::PortfolioNu0(p) => {
                let (a, b) = (p.a, p.b);
                ControlledProblem::new(
                    CoefficientField::constant_1d(0.0, p.sigma, 0.0),
                    vec![0.0],
                    p.theta_grid(),
                    Arc::new(move |_, theta, _, _| scalar(theta * theta * a * a, theta * b, 0.0, 0.0, None)),
                )
            }
        };
        Ok(Self { params, problem, measure, horizon, interior_lower: vec![-1.0], interior_upper: vec![1.0] })
    }

    pub fn key(&self) -> ProblemKey {
        self.params.key()
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        match &self.params {
            ProblemParams::LinearSymbol(p) => (p.frequency * x[0]).cos(),
            ProblemParams::MertonLinear(p) => (-0.5 * p.bump_width * (x[0] - p.bump_center).powi(2)).exp(),
            ProblemParams::ConcaveHjbToy(_) | ProblemParams::PortfolioNu0(_) => (-x[0] * x[0]).exp(),
        }
    }

    /// True when the nonlinearity vanishes identically, so the scheme reduces
    /// to iterated conditional expectations.
    pub fn f_is_zero(&self) -> bool {
        match &self.params {
            ProblemParams::MertonLinear(_) => true,
            ProblemParams::LinearSymbol(p) => p.control_a == 0.0 && p.control_b == 0.0 && p.control_jump_scale.is_none(),
            _ => false,
        }
    }
}
