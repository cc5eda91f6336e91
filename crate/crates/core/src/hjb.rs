//! Inf–sup nonlinearity over finite control grids, the monotonicity constant
//! θ_κ and the truncation-level selection rules.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jumpdiff::CoefficientField;
use crate::levy::{Functionals, LevyMeasure, TruncationLevel};
use crate::linalg;
use crate::mcq::McqEstimate;
use crate::weights::DerivativeTriple;

/// Coefficients of one control at one (t, x).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlCoefficients {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub k: f64,
    /// Separable jump amplitude s^{αβ}; `None` switches the nonlocal term off for this control.
    pub jump_scale: Option<DVector<f64>>,
}

impl ControlCoefficients {
    pub fn zero(d: usize) -> Self {
        Self { a: DMatrix::zeros(d, d), b: DVector::zeros(d), c: 0.0, k: 0.0, jump_scale: None }
    }
}

pub type ControlFn = Arc<dyn Fn(f64, f64, f64, &[f64]) -> ControlCoefficients + Send + Sync>;

/// `coeffs(alpha, beta, t, x)` evaluated over `alpha_grid × beta_grid`; the
/// nonlinearity is min over α of max over β. A singleton `beta_grid` is the concave case.
#[derive(Clone)]
pub struct ControlledProblem {
    pub dominating: CoefficientField,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub coeffs: ControlFn,
}

impl std::fmt::Debug for ControlledProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlledProblem")
            .field("dominating", &self.dominating)
            .field("alpha_grid", &self.alpha_grid)
            .field("beta_grid", &self.beta_grid)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractReport {
    pub max_condition: f64,
    pub max_coefficient_norm: f64,
}

pub type DomainSample = [(f64, Vec<f64>)];

impl ControlledProblem {
    pub fn new(dominating: CoefficientField, alpha_grid: Vec<f64>, beta_grid: Vec<f64>, coeffs: ControlFn) -> Self {
        Self { dominating, alpha_grid, beta_grid, coeffs }
    }

    pub fn dim(&self) -> usize {
        self.dominating.dim()
    }

    pub fn n_controls(&self) -> usize {
        self.alpha_grid.len() * self.beta_grid.len()
    }

    pub fn control(&self, i: usize, j: usize, t: f64, x: &[f64]) -> ControlCoefficients {
        (self.coeffs)(self.alpha_grid[i], self.beta_grid[j], t, x)
    }

    /// Checks 0 ≤ a^{αβ} ≤ σσᵀ and finiteness of every coefficient on the sample.
    pub fn validate(&self, domain: &DomainSample) -> Result<ContractReport> {
        if self.alpha_grid.is_empty() || self.beta_grid.is_empty() {
            return Err(Error::Contract("control grids must be nonempty".into()));
        }
        if domain.is_empty() {
            return Err(Error::Contract("domain sample is empty".into()));
        }
        let field = self.dominating.check(domain)?;
        let d = self.dim();
        let mut max_norm: f64 = 0.0;
        for (t, x) in domain {
            let sigma = self.dominating.sigma(*t, x);
            let big_a = &sigma * sigma.transpose();
            let tol = 1e-12 * big_a.amax().max(1.0);
            for i in 0..self.alpha_grid.len() {
                for j in 0..self.beta_grid.len() {
                    let cc = self.control(i, j, *t, x);
                    let at = || format!("control (alpha #{i}, beta #{j}) at t = {t}, x = {x:?}");
                    if cc.a.shape() != (d, d) || cc.b.len() != d || cc.jump_scale.as_ref().is_some_and(|s| s.len() != d) {
                        return Err(Error::Contract(format!("coefficient dimensions do not match d = {d} for {}", at())));
                    }
                    if (&cc.a - cc.a.transpose()).amax() > tol {
                        return Err(Error::Contract(format!("a is not symmetric for {}", at())));
                    }
                    if !linalg::psd_le(&DMatrix::zeros(d, d), &cc.a, tol) {
                        return Err(Error::Contract(format!("a is not positive semidefinite for {}", at())));
                    }
                    if !linalg::psd_le(&cc.a, &big_a, tol) {
                        return Err(Error::Contract(format!("a exceeds the dominating diffusion sigma sigma^T for {}", at())));
                    }
                    let norm = cc.a.abs().sum() + cc.b.abs().sum() + cc.c.abs() + cc.k.abs();
                    let s_norm = cc.jump_scale.as_ref().map_or(0.0, |s| s.abs().sum());
                    if !norm.is_finite() || !s_norm.is_finite() {
                        return Err(Error::Contract(format!("non-finite coefficient for {}", at())));
                    }
                    max_norm = max_norm.max(norm);
                }
            }
        }
        Ok(ContractReport { max_condition: field.max_condition, max_coefficient_norm: max_norm })
    }

    /// sup over controls and the domain sample of |c^{αβ}|.
    pub fn max_abs_c(&self, domain: &DomainSample) -> f64 {
        let mut out: f64 = 0.0;
        for (t, x) in domain {
            for i in 0..self.alpha_grid.len() {
                for j in 0..self.beta_grid.len() {
                    out = out.max(self.control(i, j, *t, x).c.abs());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaKappa {
    pub value: f64,
    /// `per_control[i][j]` for α index i and β index j.
    pub per_control: Vec<Vec<f64>>,
}

impl ThetaKappa {
    pub fn zero() -> Self {
        Self { value: 0.0, per_control: Vec::new() }
    }
}

/// θ^{αβ} = c + λ_κ + ¼ b_κᵀ (a)⁻ b_κ with b_κ = b − s^{αβ} ∫_{κ<|z|≤1} z ν(dz).
fn theta_single(cc: &ControlCoefficients, lambda: f64, first: f64) -> f64 {
    let b_kappa = match &cc.jump_scale {
        Some(s) if first != 0.0 => &cc.b - s * first,
        _ => cc.b.clone(),
    };
    let quad = if b_kappa.iter().all(|&v| v == 0.0) {
        0.0
    } else {
        (b_kappa.transpose() * linalg::pseudo_inverse_sym(&cc.a) * &b_kappa)[(0, 0)]
    };
    cc.c + lambda + 0.25 * quad
}

pub fn theta_kappa(p: &ControlledProblem, m: &LevyMeasure, kappa: TruncationLevel, domain: &DomainSample) -> Result<ThetaKappa> {
    if domain.is_empty() {
        return Err(Error::InvalidArgument("domain sample is empty".into()));
    }
    let lambda = m.tail_mass(kappa)?;
    let first = m.truncated_first_moment(kappa);
    let mut per_control = vec![vec![0.0f64; p.beta_grid.len()]; p.alpha_grid.len()];
    for (t, x) in domain {
        for (i, row) in per_control.iter_mut().enumerate() {
            for (j, slot) in row.iter_mut().enumerate() {
                let th = theta_single(&p.control(i, j, *t, x), lambda, first).abs();
                *slot = slot.max(th);
            }
        }
    }
    let value = per_control.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    Ok(ThetaKappa { value, per_control })
}

const BISECTION_TOL: f64 = 1e-6;
const KAPPA_CEILING: f64 = 1e8;

/// Smallest κ (to [`BISECTION_TOL`]) with θ_κ ≤ target, or `None` when even the
/// ceiling fails. Returns 0 when κ = 0 is admissible and already satisfies the target.
fn smallest_kappa_below(p: &ControlledProblem, m: &LevyMeasure, domain: &DomainSample, target: f64) -> Result<Option<f64>> {
    let theta = |k: f64| -> Result<f64> { Ok(theta_kappa(p, m, TruncationLevel::new(k)?, domain)?.value) };
    if m.is_finite() && theta(0.0)? <= target {
        return Ok(Some(0.0));
    }
    let mut hi = 1.0;
    while theta(hi)? > target {
        hi *= 2.0;
        if hi > KAPPA_CEILING {
            return Ok(None);
        }
    }
    let mut lo = if m.is_finite() { 0.0 } else { hi / 2.0 };
    if !m.is_finite() {
        while theta(lo)? <= target {
            hi = lo;
            lo /= 2.0;
            if lo < 1e-300 {
                return Err(Error::KappaSearch("theta stays below target as kappa -> 0".into()));
            }
        }
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if theta(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// κ_h = inf{κ : θ_κ ≤ h^{-1/2}} + h, or 0 when κ = 0 already qualifies.
pub fn select_kappa_convergence(p: &ControlledProblem, m: &LevyMeasure, h: f64, domain: &DomainSample) -> Result<TruncationLevel> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be > 0, got {h}")));
    }
    let target = h.powf(-0.5);
    let found = smallest_kappa_below(p, m, domain, target)?.ok_or_else(|| {
        Error::KappaSearch(format!("theta_kappa exceeds h^(-1/2) = {target} for every kappa up to {KAPPA_CEILING}"))
    })?;
    if found == 0.0 {
        return Ok(TruncationLevel::ZERO);
    }
    let shifted = TruncationLevel::new(found + h)?;
    // θ need not be monotone when the first moment jumps across an atom
    if theta_kappa(p, m, shifted, domain)?.value <= target {
        Ok(shifted)
    } else {
        TruncationLevel::new(found)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    pub theta: f64,
    pub second_moment: f64,
}

impl Default for RateConstants {
    fn default() -> Self {
        Self { theta: 1.0, second_moment: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateCondition {
    Theta,
    SecondMoment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateSelection {
    Feasible(TruncationLevel),
    Infeasible {
        failing: RateCondition,
        /// smallest κ meeting the θ bound, if any
        kappa_theta: Option<f64>,
        /// largest κ meeting the second-moment bound
        kappa_moment: f64,
    },
}

/// Smallest κ with θ_κ ≤ C₁ h^{-3/8} and ∫_{|z|≤κ} z² ν ≤ C₂ h^{1/2}.
pub fn select_kappa_rate(
    p: &ControlledProblem,
    m: &LevyMeasure,
    h: f64,
    domain: &DomainSample,
    constants: RateConstants,
) -> Result<RateSelection> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be > 0, got {h}")));
    }
    let theta_target = constants.theta * h.powf(-0.375);
    let moment_target = constants.second_moment * h.sqrt();
    let kappa_moment = largest_kappa_moment_below(m, moment_target)?;
    let kappa_theta = smallest_kappa_below(p, m, domain, theta_target)?;
    match kappa_theta {
        Some(k) if k <= kappa_moment => Ok(RateSelection::Feasible(TruncationLevel::new(k)?)),
        Some(_) => Ok(RateSelection::Infeasible { failing: RateCondition::SecondMoment, kappa_theta, kappa_moment }),
        None => Ok(RateSelection::Infeasible { failing: RateCondition::Theta, kappa_theta, kappa_moment }),
    }
}

fn largest_kappa_moment_below(m: &LevyMeasure, target: f64) -> Result<f64> {
    let moment = |k: f64| -> Result<f64> { Ok(m.small_jump_second_moment(TruncationLevel::new(k)?)) };
    if moment(KAPPA_CEILING)? <= target {
        return Ok(f64::INFINITY);
    }
    let (mut lo, mut hi) = (0.0, KAPPA_CEILING);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if moment(mid)? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECTION_TOL * lo.max(1e-12) {
            break;
        }
    }
    Ok(lo)
}

/// One ν̂ estimate per (α, β) control.
#[derive(Debug, Clone, PartialEq)]
pub struct NuHats {
    n_beta: usize,
    entries: Vec<Option<McqEstimate>>,
}

impl NuHats {
    pub fn new(n_alpha: usize, n_beta: usize) -> Self {
        Self { n_beta, entries: vec![None; n_alpha * n_beta] }
    }

    pub fn insert(&mut self, alpha: usize, beta: usize, est: McqEstimate) {
        self.entries[alpha * self.n_beta + beta] = Some(est);
    }

    pub fn get(&self, alpha: usize, beta: usize) -> Option<&McqEstimate> {
        self.entries.get(alpha * self.n_beta + beta).and_then(Option::as_ref)
    }
}

/// Value of the nonlinearity with the optimizing control indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FValue {
    pub value: f64,
    pub alpha: usize,
    pub beta: usize,
}

/// min_α max_β of ½ a:γ + b·p + (c + θ) r + e^{θ τ} k + [ν̂ − r λ_κ − (p·s) ∫_{κ<|z|≤1} z ν].
#[allow(clippy::too_many_arguments)]
pub fn evaluate_f_with(
    p: &ControlledProblem,
    jumps: &Functionals,
    t: f64,
    x: &[f64],
    triple: &DerivativeTriple,
    nu_hats: &NuHats,
    theta: f64,
    time_to_maturity: f64,
) -> Result<FValue> {
    let k_scale = if theta == 0.0 { 1.0 } else { (theta * time_to_maturity).exp() };
    let mut best = FValue { value: f64::INFINITY, alpha: 0, beta: 0 };
    for i in 0..p.alpha_grid.len() {
        let mut inner = FValue { value: f64::NEG_INFINITY, alpha: i, beta: 0 };
        for j in 0..p.beta_grid.len() {
            let cc = p.control(i, j, t, x);
            let mut v = 0.5 * cc.a.component_mul(&triple.d2).sum() + cc.b.dot(&triple.d1) + (cc.c + theta) * triple.d0 + k_scale * cc.k;
            if let Some(s) = &cc.jump_scale {
                let nu = nu_hats.get(i, j).ok_or(Error::MissingControl { alpha: i, beta: j })?;
                let comp = if jumps.truncated_first_moment == 0.0 { 0.0 } else { triple.d1.dot(s) * jumps.truncated_first_moment };
                v += nu.value - triple.d0 * jumps.tail_mass - comp;
            }
            if v > inner.value {
                inner = FValue { value: v, alpha: i, beta: j };
            }
        }
        if inner.value < best.value {
            best = inner;
        }
    }
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_f(
    p: &ControlledProblem,
    m: &LevyMeasure,
    kappa: TruncationLevel,
    t: f64,
    x: &[f64],
    triple: &DerivativeTriple,
    nu_hats: &NuHats,
) -> Result<FValue> {
    evaluate_f_with(p, &m.functionals(kappa)?, t, x, triple, nu_hats, 0.0, 0.0)
}

/// [`evaluate_f`] with c replaced by c + θ_κ and k by e^{θ_κ (T−t)} k.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_f_monotonized(
    p: &ControlledProblem,
    m: &LevyMeasure,
    kappa: TruncationLevel,
    t: f64,
    x: &[f64],
    triple: &DerivativeTriple,
    nu_hats: &NuHats,
    theta: &ThetaKappa,
    time_to_maturity: f64,
) -> Result<FValue> {
    evaluate_f_with(p, &m.functionals(kappa)?, t, x, triple, nu_hats, theta.value, time_to_maturity)
}
