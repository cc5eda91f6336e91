//! Reference values computed without the Monte Carlo scheme: a Lévy–Khintchine
//! symbol, a Poisson-conditioning series and a monotone finite-difference solver.

use num_complex::Complex64;

use super::problems::{BenchmarkProblem, LinearSymbolParams, MertonParams, ProblemParams, ToyParams};
use crate::error::{Error, Result};
use crate::levy::{LevyMeasure, TruncationLevel};
use crate::quad::{integrate, QuadOptions};

/// ∫_{|z|>κ} f(z) ν(dz) for finite measures, by adaptive quadrature of the real
/// and imaginary parts.
fn jump_integral<F: Fn(f64) -> Complex64>(m: &LevyMeasure, kappa: f64, f: F) -> Result<Complex64> {
    match *m {
        LevyMeasure::FinitePointMass { intensity, location } => {
            Ok(if location.abs() > kappa { f(location) * intensity } else { Complex64::new(0.0, 0.0) })
        }
        LevyMeasure::FiniteGaussianJumps { mean, std, .. } => {
            let lo = mean - 40.0 * std;
            let hi = mean + 40.0 * std;
            let mut breaks: Vec<f64> =
                [lo, hi, -1.0, 1.0, mean, -kappa, kappa].into_iter().filter(|&b| b >= lo && b <= hi).collect();
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            let opts = QuadOptions::abs(1e-12);
            let dens = |z: f64| m.density(z).unwrap_or(0.0);
            let mut total = Complex64::new(0.0, 0.0);
            for w in breaks.windows(2) {
                if (0.5 * (w[0] + w[1])).abs() <= kappa {
                    continue;
                }
                let re = integrate(|z| f(z).re * dens(z), w[0], w[1], opts)?.value;
                let im = integrate(|z| f(z).im * dens(z), w[0], w[1], opts)?.value;
                total += Complex64::new(re, im);
            }
            Ok(total)
        }
        LevyMeasure::PowerTail { .. } => {
            Err(Error::NoOracle("symbol quadrature for power-tail measures (oscillatory infinite range)".into()))
        }
    }
}

/// Ψ(u) = i μ_κ u − ½(σ² + a_c) u² + i b_c u + ∫_{|z|>κ}(e^{ius z} − 1) ν
///        + ∫_{|z|>κ}(e^{ius_c z} − 1 − i u s_c z 1_{|z|≤1}) ν.
pub fn linear_symbol(p: &LinearSymbolParams, m: &LevyMeasure, kappa: TruncationLevel) -> Result<Complex64> {
    m.check_admissible(kappa)?;
    let k = kappa.value();
    let u = p.frequency;
    let mu_kappa = p.mu - p.eta_scale * m.truncated_first_moment(kappa);
    let i = Complex64::i();
    let mut psi = i * (mu_kappa + p.control_b) * u - 0.5 * (p.sigma * p.sigma + p.control_a) * u * u;
    let s = p.eta_scale;
    psi += jump_integral(m, k, |z| (i * u * s * z).exp() - 1.0)?;
    if let Some(sc) = p.control_jump_scale {
        psi += jump_integral(m, k, |z| {
            let comp = if z.abs() <= 1.0 { i * u * sc * z } else { Complex64::new(0.0, 0.0) };
            (i * u * sc * z).exp() - 1.0 - comp
        })?;
    }
    Ok(psi)
}

pub fn linear_symbol_value(p: &LinearSymbolParams, m: &LevyMeasure, kappa: TruncationLevel, tau: f64, x: f64) -> Result<f64> {
    let psi = linear_symbol(p, m, kappa)?;
    Ok(((psi * tau).exp() * (Complex64::i() * p.frequency * x).exp()).re)
}

/// E[exp(−w (Y − c)² / 2)] for Y ~ N(mean, var).
fn gaussian_bump_expectation(w: f64, c: f64, mean: f64, var: f64) -> f64 {
    let q = 1.0 + w * var;
    (-w * (mean - c).powi(2) / (2.0 * q)).exp() / q.sqrt()
}

/// Poisson weights until the remaining tail drops below `tail_tol`.
fn poisson_series(mean: f64, tail_tol: f64) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut p = (-mean).exp();
    let mut cdf = 0.0;
    for k in 0..100_000u32 {
        out.push(p);
        cdf += p;
        if 1.0 - cdf < tail_tol {
            return Ok(out);
        }
        p *= mean / (k + 1) as f64;
    }
    Err(Error::OracleNonConvergence(format!("Poisson series with mean {mean}: tail still {:e}", 1.0 - cdf)))
}

/// E[g(X_T) | X_t = x] for the Merton dynamics, conditioning on the jump count.
pub fn merton_value(p: &MertonParams, m: &LevyMeasure, kappa: TruncationLevel, tau: f64, x: f64) -> Result<f64> {
    let lambda = m.tail_mass(kappa)?;
    let drift = p.mu - m.truncated_first_moment(kappa);
    let diffusion_var = p.sigma * p.sigma * tau;
    let base = x + drift * tau;
    if lambda == 0.0 {
        return Ok(gaussian_bump_expectation(p.bump_width, p.bump_center, base, diffusion_var));
    }
    let (jm, jv) = match *m {
        LevyMeasure::FiniteGaussianJumps { mean, std, .. } if kappa.value() == 0.0 => (mean, std * std),
        LevyMeasure::FinitePointMass { location, .. } => (location, 0.0),
        _ => return Err(Error::NoOracle(format!("merton series for {m:?} at kappa = {kappa}"))),
    };
    let weights = poisson_series(lambda * tau, 1e-12)?;
    Ok(weights
        .iter()
        .enumerate()
        .map(|(n, w)| {
            let nf = n as f64;
            w * gaussian_bump_expectation(p.bump_width, p.bump_center, base + nf * jm, diffusion_var + nf * jv)
        })
        .sum())
}

/// Resolution of the finite-difference oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSettings {
    pub dx: f64,
    pub dt: f64,
    /// The FD box is [−half_width, half_width].
    pub half_width: f64,
    /// Composite Simpson nodes for the jump integral (odd).
    pub jump_nodes: usize,
}

impl Default for FdSettings {
    fn default() -> Self {
        Self { dx: 0.005, dt: 0.002, half_width: 7.0, jump_nodes: 161 }
    }
}

/// Nodes and weights for ∫_{|z|>κ} · ν(dz), weights rescaled to total λ_κ.
fn jump_rule(m: &LevyMeasure, kappa: TruncationLevel, nodes: usize) -> Result<Vec<(f64, f64)>> {
    let lambda = m.tail_mass(kappa)?;
    if lambda == 0.0 {
        return Ok(Vec::new());
    }
    let k = kappa.value();
    let rule: Vec<(f64, f64)> = match *m {
        LevyMeasure::FinitePointMass { location, .. } => vec![(location, lambda)],
        LevyMeasure::FiniteGaussianJumps { mean, std, .. } => {
            let n = nodes.max(3) | 1;
            let (lo, hi) = (mean - 8.0 * std, mean + 8.0 * std);
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| {
                    let z = lo + i as f64 * step;
                    let simpson = if i == 0 || i == n - 1 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    (z, simpson * step / 3.0 * m.density(z).unwrap_or(0.0))
                })
                .filter(|(z, _)| z.abs() > k)
                .collect()
        }
        LevyMeasure::PowerTail { .. } => return Err(Error::NoOracle("finite-difference oracle needs a finite measure".into())),
    };
    let total: f64 = rule.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Ok(Vec::new());
    }
    Ok(rule.into_iter().map(|(z, w)| (z, w * lambda / total)).collect())
}

struct FdGrid {
    x0: f64,
    dx: f64,
    n: usize,
}

impl FdGrid {
    fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    fn interp(&self, v: &[f64], y: f64) -> f64 {
        let pos = ((y - self.x0) / self.dx).clamp(0.0, (self.n - 1) as f64);
        let i = (pos.floor() as usize).min(self.n - 2);
        let w = pos - i as f64;
        v[i] * (1.0 - w) + v[i + 1] * w
    }
}

/// Thomas algorithm for a tridiagonal system; `lower[0]` and `upper[n-1]` are ignored.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut out = vec![0.0; n];
    out[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = d[i] - c[i] * out[i + 1];
    }
    out
}

/// Tridiagonal coefficients (lower, centre, upper) of ½σ² ∂² + drift ∂ at spacing dx:
/// central differences where monotone, upwind otherwise.
fn local_stencil(diffusion: f64, drift: f64, dx: f64) -> (f64, f64, f64) {
    let d2 = diffusion / (dx * dx);
    if diffusion >= 0.5 * drift.abs() * dx {
        let d1 = drift / (2.0 * dx);
        (d2 - d1, -2.0 * d2, d2 + d1)
    } else if drift > 0.0 {
        (d2, -2.0 * d2 - drift / dx, d2 + drift / dx)
    } else {
        (d2 - drift / dx, -2.0 * d2 + drift / dx, d2)
    }
}

/// Implicit (local terms) / explicit (jumps) policy-iteration solver for the
/// concave toy equation, returning the grid and the values at time `t`.
pub fn toy_fd_solve(
    p: &ToyParams,
    m: &LevyMeasure,
    kappa: TruncationLevel,
    horizon: f64,
    t: f64,
    terminal: impl Fn(f64) -> f64,
    settings: FdSettings,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(settings.dx > 0.0 && settings.dt > 0.0 && settings.half_width > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid finite-difference settings {settings:?}")));
    }
    let n = (2.0 * settings.half_width / settings.dx).round() as usize + 1;
    let grid = FdGrid { x0: -settings.half_width, dx: 2.0 * settings.half_width / (n - 1) as f64, n };
    let tau = horizon - t;
    let steps = ((tau / settings.dt).ceil() as usize).max(1);
    let dt = tau / steps as f64;
    let first = m.truncated_first_moment(kappa);
    let mu_kappa = p.mu - p.eta_scale * first;
    let rule = jump_rule(m, kappa, settings.jump_nodes)?;
    let lambda = m.tail_mass(kappa)?;
    let na = p.controls.len();

    // per control: local stencil and whether it carries its own jump operator
    let stencils: Vec<(f64, f64, f64)> = p
        .controls
        .iter()
        .map(|c| {
            let drift = mu_kappa + c.b - c.jump_scale.map_or(0.0, |s| s * first);
            local_stencil(0.5 * (p.sigma * p.sigma + c.a), drift, grid.dx)
        })
        .collect();
    let xs: Vec<f64> = (0..n).map(|i| grid.x(i)).collect();
    let mut v: Vec<f64> = xs.iter().map(|&x| terminal(x)).collect();
    let mut policy = vec![0usize; n];

    let jump_apply = |v: &[f64], scale: f64| -> Vec<f64> {
        xs.iter()
            .zip(v)
            .map(|(&x, &vx)| rule.iter().map(|&(z, w)| w * grid.interp(v, x + scale * z)).sum::<f64>() - lambda * vx)
            .collect()
    };

    for _ in 0..steps {
        let dom_jump = jump_apply(&v, p.eta_scale);
        let ctrl_jump: Vec<Option<Vec<f64>>> = p.controls.iter().map(|c| c.jump_scale.map(|s| jump_apply(&v, s))).collect();
        // explicit part of every control's right-hand side
        let explicit = |alpha: usize, i: usize| -> f64 {
            let c = &p.controls[alpha];
            let k = c.k0 + c.k1 * xs[i].sin();
            dom_jump[i] + k + ctrl_jump[alpha].as_ref().map_or(0.0, |j| j[i])
        };
        let apply_local = |alpha: usize, u: &[f64], i: usize| -> f64 {
            let (lo, ce, up) = stencils[alpha];
            let left = u[i.saturating_sub(1)];
            let right = u[(i + 1).min(n - 1)];
            lo * left + ce * u[i] + up * right + p.controls[alpha].c * u[i]
        };
        let mut iterate = v.clone();
        let mut converged = false;
        for _ in 0..100 {
            let mut lower = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut upper = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            for i in 0..n {
                let alpha = policy[i];
                let (lo, ce, up) = stencils[alpha];
                diag[i] = 1.0 / dt - ce - p.controls[alpha].c;
                // constant extrapolation folds the ghost node back onto the boundary
                if i == 0 {
                    diag[i] -= lo;
                } else {
                    lower[i] = -lo;
                }
                if i == n - 1 {
                    diag[i] -= up;
                } else {
                    upper[i] = -up;
                }
                rhs[i] = v[i] / dt + explicit(alpha, i);
            }
            iterate = solve_tridiagonal(&lower, &diag, &upper, &rhs);
            let mut changed = false;
            for i in 0..n {
                let mut best = (f64::INFINITY, policy[i]);
                for alpha in 0..na {
                    let val = apply_local(alpha, &iterate, i) + explicit(alpha, i);
                    if val < best.0 - 1e-14 {
                        best = (val, alpha);
                    }
                }
                if best.1 != policy[i] {
                    policy[i] = best.1;
                    changed = true;
                }
            }
            if !changed {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::OracleNonConvergence("policy iteration did not settle within 100 sweeps".into()));
        }
        v = iterate;
    }
    Ok((xs, v))
}

/// Oracle values at time `t` for every point in `xs`.
pub fn oracle_values(prob: &BenchmarkProblem, kappa: TruncationLevel, t: f64, xs: &[Vec<f64>], fd: FdSettings) -> Result<Vec<f64>> {
    let tau = prob.horizon - t;
    match &prob.params {
        ProblemParams::LinearSymbol(p) => {
            let psi = linear_symbol(p, &prob.measure, kappa)?;
            let growth = (psi * tau).exp();
            Ok(xs.iter().map(|x| (growth * (Complex64::i() * p.frequency * x[0]).exp()).re).collect())
        }
        ProblemParams::MertonLinear(p) => xs.iter().map(|x| merton_value(p, &prob.measure, kappa, tau, x[0])).collect(),
        ProblemParams::ConcaveHjbToy(p) => {
            let (grid, values) = toy_fd_solve(p, &prob.measure, kappa, prob.horizon, t, |x| prob.terminal(&[x]), fd)?;
            let g = FdGrid { x0: grid[0], dx: grid[1] - grid[0], n: grid.len() };
            Ok(xs.iter().map(|x| g.interp(&values, x[0])).collect())
        }
        ProblemParams::PortfolioNu0(_) => Err(Error::NoOracle(prob.key().to_string())),
    }
}

pub fn oracle_value(prob: &BenchmarkProblem, kappa: TruncationLevel, t: f64, x: &[f64]) -> Result<f64> {
    Ok(oracle_values(prob, kappa, t, &[x.to_vec()], FdSettings::default())?[0])
}
