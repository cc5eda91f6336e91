//! Backward time stepping of the value surface with nested one-step Monte
//! Carlo at every grid node.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hjb::{self, ControlledProblem, FValue, NuHats, RateConstants, RateSelection, ThetaKappa};
use crate::jumpdiff::{substream, LocalDynamics, DEFAULT_POISSON_INVERSION_THRESHOLD};
use crate::levy::{Functionals, LevyMeasure, TruncationLevel};
use crate::mcq::{nu_hat_with_amplitude, McqEstimate};
use crate::weights::estimate_from_values;

/// Uniform tensor grid on a box.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    inv_spacing: Vec<f64>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != counts.len() || lower.is_empty() {
            return Err(Error::InvalidArgument("grid bounds and counts must share a nonzero dimension".into()));
        }
        for k in 0..lower.len() {
            if !(upper[k] > lower[k]) || counts[k] < 2 {
                return Err(Error::InvalidArgument(format!(
                    "grid axis {k} needs lower < upper and at least two nodes, got [{}, {}] with {}",
                    lower[k], upper[k], counts[k]
                )));
            }
        }
        let inv_spacing = (0..lower.len()).map(|k| (counts[k] - 1) as f64 / (upper[k] - lower[k])).collect();
        Ok(Self { lower, upper, counts, inv_spacing })
    }

    /// Box `[lower, upper]` with spacing at most `dx` along every axis.
    pub fn with_spacing(lower: Vec<f64>, upper: Vec<f64>, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::InvalidArgument(format!("grid spacing must be > 0, got {dx}")));
        }
        let counts = lower.iter().zip(&upper).map(|(l, u)| ((u - l) / dx - 1e-9).ceil().max(1.0) as usize + 1).collect();
        Self::new(lower, upper, counts)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.counts[axis] - 1) as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    fn coordinate(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.spacing(axis)
        }
    }

    /// Node coordinates; the first axis varies slowest.
    pub fn node(&self, mut idx: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for axis in (0..d).rev() {
            out[axis] = self.coordinate(axis, idx % self.counts[axis]);
            idx /= self.counts[axis];
        }
        out
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.n_nodes()).map(|i| self.node(i)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(k, &v)| v >= self.lower[k] && v <= self.upper[k])
    }

    /// Multilinear interpolation inside the box, nearest boundary value outside.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let d = self.dim();
        if d == 1 {
            let (i, w) = self.locate(0, x[0]);
            return values[i] * (1.0 - w) + values[i + 1] * w;
        }
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            (base[k], frac[k]) = self.locate(k, x[k]);
        }
        let mut total = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut idx = 0usize;
            for k in 0..d {
                let up = (corner >> k) & 1 == 1;
                weight *= if up { frac[k] } else { 1.0 - frac[k] };
                idx = idx * self.counts[k] + base[k] + up as usize;
            }
            if weight != 0.0 {
                total += weight * values[idx];
            }
        }
        total
    }

    fn locate(&self, axis: usize, v: f64) -> (usize, f64) {
        let n = self.counts[axis];
        let pos = ((v - self.lower[axis]) * self.inv_spacing[axis]).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        (i, pos - i as f64)
    }
}

/// Values per time layer: `values[i][node]` at `t_i = i·h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    pub times: Vec<f64>,
    pub grid: Grid,
    pub values: Vec<Vec<f64>>,
}

impl ValueSurface {
    pub fn interpolate(&self, layer: usize, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values[layer], x)
    }

    /// Rows `(t, x…, value)` for every layer and node.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.grid.dim();
        let header: Vec<String> = if d == 1 {
            vec!["t".into(), "x".into(), "value".into()]
        } else {
            std::iter::once("t".to_string())
                .chain((0..d).map(|k| format!("x{}", k + 1)))
                .chain(std::iter::once("value".to_string()))
                .collect()
        };
        writeln!(out, "{}", header.join(","))?;
        let nodes = self.grid.nodes();
        for (i, layer) in self.values.iter().enumerate() {
            for (node, v) in nodes.iter().zip(layer) {
                write!(out, "{}", self.times[i])?;
                for c in node {
                    write!(out, ",{c}")?;
                }
                writeln!(out, ",{v}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaRule {
    Fixed(f64),
    Convergence,
    Rate(RateConstants),
}

/// Region of interest plus padding; the grid covers both.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDomain {
    pub interior_lower: Vec<f64>,
    pub interior_upper: Vec<f64>,
    pub padding: f64,
    pub dx: f64,
}

impl SpatialDomain {
    pub fn grid(&self) -> Result<Grid> {
        Grid::with_spacing(
            self.interior_lower.iter().map(|l| l - self.padding).collect(),
            self.interior_upper.iter().map(|u| u + self.padding).collect(),
            self.dx,
        )
    }

    pub fn in_interior(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(k, &v)| v >= self.interior_lower[k] - 1e-12 && v <= self.interior_upper[k] + 1e-12)
    }
}

/// Jump sizes are capped at this many units when sizing the padding.
pub const PADDING_JUMP_CAP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub horizon: f64,
    pub n: usize,
    pub domain: SpatialDomain,
    pub samples: usize,
    pub kappa_rule: KappaRule,
    pub monotonized: bool,
    pub seed: u64,
    pub poisson_threshold: f64,
}

impl SchemeConfig {
    pub fn new(horizon: f64, n: usize, domain: SpatialDomain, samples: usize) -> Self {
        Self {
            horizon,
            n,
            domain,
            samples,
            kappa_rule: KappaRule::Convergence,
            monotonized: false,
            seed: 0,
            poisson_threshold: DEFAULT_POISSON_INVERSION_THRESHOLD,
        }
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.n as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.n {
            self.horizon
        } else {
            i as f64 * self.h()
        }
    }

    /// 4·(σ√T + s·√(T ∫_{|z|>κ} min(z², cap²) ν)), maximised over axes and the domain sample.
    pub fn required_padding(&self, p: &ControlledProblem, m: &LevyMeasure, kappa: TruncationLevel) -> Result<f64> {
        let grid = self.domain.grid()?;
        let jump_var = if m.tail_mass(kappa)? > 0.0 { m.tail_capped_second_moment(kappa, PADDING_JUMP_CAP)? } else { 0.0 };
        let mut need: f64 = 0.0;
        for t in [0.0, self.horizon] {
            for x in grid.nodes() {
                let sigma = p.dominating.sigma(t, &x);
                let a = &sigma * sigma.transpose();
                let s = p.dominating.eta_scale(t, &x);
                for k in 0..grid.dim() {
                    let diffusion = a[(k, k)].sqrt() * self.horizon.sqrt();
                    let jumps = s[k].abs() * (self.horizon * jump_var).sqrt();
                    need = need.max(4.0 * (diffusion + jumps));
                }
            }
        }
        Ok(need)
    }

    pub fn validate(&self, p: &ControlledProblem, m: &LevyMeasure, kappa: TruncationLevel) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if self.n == 0 {
            return Err(Error::Config("number of time steps must be >= 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples per node must be >= 1".into()));
        }
        if self.domain.interior_lower.len() != p.dim() || self.domain.interior_upper.len() != p.dim() {
            return Err(Error::Config(format!("spatial domain must have dimension {}", p.dim())));
        }
        let need = self.required_padding(p, m, kappa)?;
        if self.domain.padding < need {
            return Err(Error::Config(format!(
                "box padding {} is below the required {need:.6} (4 x (sigma sqrt(T) + jump spread))",
                self.domain.padding
            )));
        }
        Ok(())
    }
}

/// Everything [`apply_t`] needs besides the surface and the node.
#[derive(Debug, Clone)]
pub struct StepContext<'a> {
    pub problem: &'a ControlledProblem,
    pub measure: &'a LevyMeasure,
    pub kappa: TruncationLevel,
    pub functionals: Functionals,
    pub h: f64,
    pub samples: usize,
    /// θ_κ for the monotonized operator, zero for the plain one.
    pub theta: f64,
    pub horizon: f64,
    pub poisson_threshold: f64,
    /// Skip the extra pass for [`NodeValue::std_error`] when false.
    pub with_std_error: bool,
    /// Mirror Brownian increments in pairs; off by default. Standard errors still
    /// treat the samples as independent.
    pub antithetic: bool,
}

impl<'a> StepContext<'a> {
    pub fn new(problem: &'a ControlledProblem, measure: &'a LevyMeasure, kappa: TruncationLevel, h: f64, samples: usize) -> Result<Self> {
        Ok(Self {
            problem,
            measure,
            kappa,
            functionals: measure.functionals(kappa)?,
            h,
            samples,
            theta: 0.0,
            horizon: 0.0,
            poisson_threshold: DEFAULT_POISSON_INVERSION_THRESHOLD,
            with_std_error: true,
            antithetic: false,
        })
    }

    pub fn monotonized(self, theta: f64, horizon: f64) -> Self {
        Self { theta, horizon, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeValue {
    pub value: f64,
    /// Standard error of the per-sample contributions under the selected control
    /// (NaN when the context skips it).
    pub std_error: f64,
    pub control: (usize, usize),
}

/// T[ψ](t, x) = E[ψ(X̂)] + h F(t, x, D_h ψ, ν̂ψ) on one batch drawn from `rng`.
pub fn apply_t<S, R>(surface: S, ctx: &StepContext<'_>, t: f64, x: &[f64], rng: &mut R) -> Result<NodeValue>
where
    S: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let p = ctx.problem;
    let dynamics = LocalDynamics::with_threshold(&p.dominating, ctx.measure, ctx.kappa, t, x, ctx.h, ctx.poisson_threshold)?;
    let sigma_inv = dynamics.require_sigma_inv()?.clone();
    let batch = if ctx.antithetic { dynamics.antithetic_batch(ctx.samples, rng) } else { dynamics.batch(ctx.samples, rng) };
    let values: Vec<f64> = (0..batch.len()).map(|i| surface(batch.landing(i))).collect();
    let est = estimate_from_values(&values, &batch, &sigma_inv)?;

    let (na, nb) = (p.alpha_grid.len(), p.beta_grid.len());
    let mut nus = NuHats::new(na, nb);
    let mut cache: Vec<(Vec<f64>, McqEstimate)> = Vec::new();
    for i in 0..na {
        for j in 0..nb {
            let Some(s) = p.control(i, j, t, x).jump_scale else { continue };
            let shift: Vec<f64> = s.iter().zip(&dynamics.eta_scale).map(|(a, b)| a - b).collect();
            let nu = match cache.iter().find(|(k, _)| *k == shift) {
                Some((_, v)) => *v,
                None => {
                    let v = nu_hat_with_amplitude(&surface, &values, &batch, &shift)?;
                    cache.push((shift, v));
                    v
                }
            };
            nus.insert(i, j, nu);
        }
    }
    let time_to_maturity = ctx.horizon - t;
    let FValue { value: f, alpha, beta } =
        hjb::evaluate_f_with(p, &ctx.functionals, t, x, &est.triple, &nus, ctx.theta, time_to_maturity)?;
    let value = est.triple.d0 + ctx.h * f;

    let std_error = if !ctx.with_std_error {
        f64::NAN
    } else {
        contribution_std_error(&surface, &values, &batch, &sigma_inv, ctx, &dynamics, t, x, (alpha, beta))
    };
    Ok(NodeValue { value, std_error, control: (alpha, beta) })
}

/// Standard error of the per-sample terms whose mean is T[ψ] under a fixed control.
#[allow(clippy::too_many_arguments)]
fn contribution_std_error<S: Fn(&[f64]) -> f64>(
    surface: &S,
    values: &[f64],
    batch: &crate::jumpdiff::SampleBatch,
    sigma_inv: &DMatrix<f64>,
    ctx: &StepContext<'_>,
    dynamics: &LocalDynamics,
    t: f64,
    x: &[f64],
    (alpha, beta): (usize, usize),
) -> f64 {
    let n = batch.len();
    if n < 2 {
        return 0.0;
    }
    let d = batch.dim();
    let h = ctx.h;
    let cc = ctx.problem.control(alpha, beta, t, x);
    let sit = sigma_inv.transpose();
    let gram = &sit * sigma_inv;
    let k_term = if ctx.theta == 0.0 { cc.k } else { (ctx.theta * (ctx.horizon - t)).exp() * cc.k };
    let jumps = cc.jump_scale.as_ref();
    let shift: Option<Vec<f64>> = jumps.map(|s| s.iter().zip(&dynamics.eta_scale).map(|(a, b)| a - b).collect());
    let lambda = if jumps.is_some() { ctx.functionals.tail_mass } else { 0.0 };
    let first = ctx.functionals.truncated_first_moment;
    let mut u = vec![0.0; d];
    let mut point = vec![0.0; d];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for (i, &psi) in values.iter().enumerate() {
        let w = batch.w(i);
        for (k, uk) in u.iter_mut().enumerate() {
            *uk = (0..d).map(|l| sit[(k, l)] * w[l]).sum();
        }
        let mut lin = 0.0;
        for k in 0..d {
            lin += cc.b[k] * u[k] / h;
            if let Some(s) = jumps {
                lin -= s[k] * first * u[k] / h;
            }
            for l in 0..d {
                lin += 0.5 * cc.a[(k, l)] * (u[k] * u[l] - h * gram[(k, l)]) / (h * h);
            }
        }
        let mut v = psi * (1.0 + h * (lin + cc.c + ctx.theta - lambda)) + h * k_term;
        if let Some(shift) = &shift {
            let marks = batch.marks(i);
            if shift.iter().all(|&s| s == 0.0) {
                v += psi * marks.len() as f64;
            } else {
                let landing = batch.landing(i);
                for &z in marks {
                    for (k, pk) in point.iter_mut().enumerate() {
                        *pk = landing[k] + shift[k] * z;
                    }
                    v += surface(&point);
                }
            }
        }
        sum += v;
        sum_sq += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    (((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) / nf).sqrt()
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub surface: ValueSurface,
    pub kappa: TruncationLevel,
    pub theta: ThetaKappa,
    /// One-step standard errors at t = 0, one per node.
    pub std_errors: Vec<f64>,
}

/// Grid nodes at t = 0 and t = T, the default sample for θ_κ.
pub fn theta_domain_sample(cfg: &SchemeConfig) -> Result<Vec<(f64, Vec<f64>)>> {
    let grid = cfg.domain.grid()?;
    let nodes = grid.nodes();
    Ok([0.0, cfg.horizon].into_iter().flat_map(|t| nodes.iter().map(move |x| (t, x.clone()))).collect())
}

pub fn resolve_kappa(p: &ControlledProblem, m: &LevyMeasure, cfg: &SchemeConfig, domain: &[(f64, Vec<f64>)]) -> Result<TruncationLevel> {
    match cfg.kappa_rule {
        KappaRule::Fixed(k) => {
            let k = TruncationLevel::new(k)?;
            m.check_admissible(k)?;
            Ok(k)
        }
        KappaRule::Convergence => hjb::select_kappa_convergence(p, m, cfg.h(), domain),
        KappaRule::Rate(c) => match hjb::select_kappa_rate(p, m, cfg.h(), domain, c)? {
            RateSelection::Feasible(k) => Ok(k),
            RateSelection::Infeasible { failing, kappa_theta, kappa_moment } => Err(Error::KappaSearch(format!(
                "rate rule infeasible at h = {}: {failing:?} condition fails (smallest kappa for theta: {kappa_theta:?}, largest kappa for second moment: {kappa_moment})",
                cfg.h()
            ))),
        },
    }
}

/// Fills the surface from t = T down to t = 0. The monotonized variant solves
/// for u and returns e^{−θ_κ (T−t)} u.
pub fn solve_backward<G>(p: &ControlledProblem, m: &LevyMeasure, cfg: &SchemeConfig, g: G) -> Result<Solution>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let domain = theta_domain_sample(cfg)?;
    let kappa = resolve_kappa(p, m, cfg, &domain)?;
    solve_backward_with_kappa(p, m, cfg, kappa, &domain, g)
}

pub fn solve_backward_with_kappa<G>(
    p: &ControlledProblem,
    m: &LevyMeasure,
    cfg: &SchemeConfig,
    kappa: TruncationLevel,
    domain: &[(f64, Vec<f64>)],
    g: G,
) -> Result<Solution>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate(p, m, kappa)?;
    let grid = cfg.domain.grid()?;
    let nodes = grid.nodes();
    let theta = hjb::theta_kappa(p, m, kappa, domain)?;
    let h = cfg.h();
    let mut ctx = StepContext::new(p, m, kappa, h, cfg.samples)?;
    ctx.poisson_threshold = cfg.poisson_threshold;
    if cfg.monotonized {
        ctx = ctx.monotonized(theta.value, cfg.horizon);
    }

    let mut values = vec![Vec::new(); cfg.n + 1];
    let mut std_errors = Vec::new();
    values[cfg.n] = nodes.iter().map(|x| g(x)).collect();
    for i in (0..cfg.n).rev() {
        let t = cfg.time(i);
        ctx.with_std_error = i == 0;
        let next = &values[i + 1];
        let surface = |y: &[f64]| grid.interpolate(next, y);
        let layer: Vec<Result<NodeValue>> = nodes
            .par_iter()
            .enumerate()
            .map(|(j, x)| apply_t(surface, &ctx, t, x, &mut substream(cfg.seed, i as u64, j as u64)))
            .collect();
        let mut vals = Vec::with_capacity(nodes.len());
        let mut ses = Vec::with_capacity(nodes.len());
        for (j, r) in layer.into_iter().enumerate() {
            let nv = r?;
            if !nv.value.is_finite() {
                return Err(Error::NonFinite { layer: i, node: j, x: nodes[j].clone() });
            }
            vals.push(nv.value);
            ses.push(nv.std_error);
        }
        values[i] = vals;
        if i == 0 {
            std_errors = ses;
        }
    }
    if cfg.monotonized && theta.value != 0.0 {
        for (i, layer) in values.iter_mut().enumerate() {
            let scale = (-theta.value * (cfg.horizon - cfg.time(i))).exp();
            layer.iter_mut().for_each(|v| *v *= scale);
            if i == 0 {
                std_errors.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    let times = (0..=cfg.n).map(|i| cfg.time(i)).collect();
    Ok(Solution { surface: ValueSurface { times, grid, values }, kappa, theta, std_errors })
}
