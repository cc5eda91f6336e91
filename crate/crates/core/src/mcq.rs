//! Monte Carlo quadrature of Lévy integrals: the ν̂ estimator
//! ν̂ = (1/h) E[φ(X̂) Σ_{i≤N} ζ(Z_i)], the truncated operator built on it,
//! and deterministic quadrature oracles for d = 1.

use crate::error::{Error, Result};
use crate::jumpdiff::{CoefficientField, SampleBatch};
use crate::levy::{LevyMeasure, TruncationLevel};
use crate::quad::{integrate, QuadOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McqEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl McqEstimate {
    /// Mean and standard error of per-sample contributions.
    pub fn from_contributions<I: IntoIterator<Item = f64>>(values: I) -> Result<Self> {
        let (mut n, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            sum += v;
            sum_sq += v * v;
        }
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let nf = n as f64;
        let value = sum / nf;
        let std_error = if n > 1 { (((sum_sq - nf * value * value) / (nf - 1.0)).max(0.0) / nf).sqrt() } else { 0.0 };
        Ok(Self { value, std_error, n_samples: n })
    }
}

/// (1/h)·mean of φ(landing)·Σ ζ(Z_i) over the batch.
pub fn nu_hat<P, Z>(phi: P, zeta: Z, batch: &SampleBatch, h: f64) -> Result<McqEstimate>
where
    P: Fn(&[f64]) -> f64,
    Z: Fn(f64) -> f64,
{
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be > 0, got {h}")));
    }
    McqEstimate::from_contributions((0..batch.len()).map(|i| {
        let y: f64 = batch.marks(i).iter().map(|&z| zeta(z)).sum();
        if y == 0.0 {
            0.0
        } else {
            phi(batch.landing(i)) * y / h
        }
    }))
}

/// ν̂ for a control whose jump amplitude s_c differs from the dominating s:
/// (1/h) Σ_i φ(landing + (s_c − s) Z_i), which has the same expectation as
/// ∫_{|z|>κ} E[φ(X̂ + s_c z)] ν(dz). `values[i]` must equal φ(landing_i).
pub fn nu_hat_with_amplitude<P>(phi: P, values: &[f64], batch: &SampleBatch, shift: &[f64]) -> Result<McqEstimate>
where
    P: Fn(&[f64]) -> f64,
{
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let h = batch.h();
    let unshifted = shift.iter().all(|&s| s == 0.0);
    let mut point = vec![0.0; batch.dim()];
    McqEstimate::from_contributions((0..batch.len()).map(|i| {
        let marks = batch.marks(i);
        if marks.is_empty() {
            return 0.0;
        }
        if unshifted {
            return values[i] * marks.len() as f64 / h;
        }
        let landing = batch.landing(i);
        let mut acc = 0.0;
        for &z in marks {
            for (k, p) in point.iter_mut().enumerate() {
                *p = landing[k] + shift[k] * z;
            }
            acc += phi(&point);
        }
        acc / h
    }))
}

/// I_{κ,h}[φ](x) = ν̂(φ, 1) − φ(x) λ_κ − ∇φ(x)·s(t, x) ∫_{κ<|z|≤1} z ν(dz).
#[allow(clippy::too_many_arguments)]
pub fn levy_operator_mcq<P, G>(
    phi: P,
    grad_phi: G,
    cf: &CoefficientField,
    m: &LevyMeasure,
    kappa: TruncationLevel,
    t: f64,
    x: &[f64],
    h: f64,
    batch: &SampleBatch,
) -> Result<McqEstimate>
where
    P: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let nu = nu_hat(&phi, |_| 1.0, batch, h)?;
    let lambda = m.tail_mass(kappa)?;
    let first = m.truncated_first_moment(kappa);
    let drift: f64 = if first == 0.0 {
        0.0
    } else {
        grad_phi(x).iter().zip(cf.eta_scale(t, x).iter()).map(|(g, s)| g * s).sum::<f64>() * first
    };
    Ok(McqEstimate { value: nu.value - phi(x) * lambda - drift, ..nu })
}

/// Below this jump size the power-tail oracle switches to a derivative-based second difference.
const SMALL_JUMP_SPLIT: f64 = 1e-4;

/// ∫_{|z|>κ} (φ(x + s z) − φ(x) − 1_{|z|≤1} s z φ'(x)) ν(dz) by adaptive quadrature, d = 1.
/// κ = 0 is accepted for power tails and gives the untruncated operator.
#[allow(clippy::too_many_arguments)]
pub fn levy_operator_quadrature<P, D>(
    phi: P,
    dphi: D,
    cf: &CoefficientField,
    m: &LevyMeasure,
    kappa: TruncationLevel,
    t: f64,
    x: f64,
) -> Result<f64>
where
    P: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    levy_operator_quadrature_band(phi, dphi, cf, m, kappa.value(), f64::INFINITY, t, x)
}

/// As [`levy_operator_quadrature`], restricted to jumps with κ < |z| ≤ upper.
#[allow(clippy::too_many_arguments)]
pub fn levy_operator_quadrature_band<P, D>(
    phi: P,
    dphi: D,
    cf: &CoefficientField,
    m: &LevyMeasure,
    lower: f64,
    upper: f64,
    t: f64,
    x: f64,
) -> Result<f64>
where
    P: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    if cf.dim() != 1 {
        return Err(Error::InvalidArgument("quadrature oracle is one-dimensional".into()));
    }
    if !(lower >= 0.0) || !(upper > lower) {
        return Ok(0.0);
    }
    let s = cf.eta_scale(t, &[x])[0];
    let opts = QuadOptions::abs(1e-9);
    let fx = phi(x);
    let slope = s * dphi(x);
    let integrand = |z: f64| {
        let comp = if z.abs() <= 1.0 { slope * z } else { 0.0 };
        phi(x + s * z) - fx - comp
    };
    match *m {
        LevyMeasure::FinitePointMass { intensity, location } => {
            let a = location.abs();
            Ok(if a > lower && a <= upper { intensity * integrand(location) } else { 0.0 })
        }
        LevyMeasure::FiniteGaussianJumps { mean, std, .. } => {
            let lo = (mean - 40.0 * std).max(-upper);
            let hi = (mean + 40.0 * std).min(upper);
            let mut breaks: Vec<f64> = [lo, hi, -1.0, 1.0, mean, -lower, lower]
                .into_iter()
                .filter(|&b| b >= lo && b <= hi)
                .collect();
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            let tol = QuadOptions::abs(opts.abs_tol / breaks.len().max(1) as f64);
            let mut total = 0.0;
            for w in breaks.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                if mid.abs() <= lower {
                    continue;
                }
                total += integrate(|z| integrand(z) * m.density(z).unwrap_or(0.0), w[0], w[1], tol)?.value;
            }
            Ok(total)
        }
        LevyMeasure::PowerTail { amplitude, alpha } => {
            let tol = QuadOptions::abs(opts.abs_tol / 2.0);
            // symmetric measure: the compensator cancels between z and −z
            let paired = |z: f64| (phi(x + s * z) + phi(x - s * z) - 2.0 * fx) * amplitude * z.powf(-1.0 - alpha);
            let mut total = 0.0;
            let inner_hi = upper.min(1.0);
            let split = SMALL_JUMP_SPLIT.clamp(lower, inner_hi);
            if lower < split {
                // trapezoid form of the second difference, O(z²) relative error, no cancellation
                let near = |z: f64| 0.5 * s * z * (dphi(x + s * z) - dphi(x - s * z)) * amplitude * z.powf(-1.0 - alpha);
                // z = split·e^{-u} turns the z^{1-α} singularity into exponential decay
                let u_max = (split.ln() - lower.max(f64::MIN_POSITIVE).ln()).max(0.0);
                total += integrate(
                    |u| {
                        let z = split * (-u).exp();
                        let v = near(z) * z;
                        if v.is_finite() {
                            v
                        } else {
                            0.0
                        }
                    },
                    0.0,
                    u_max,
                    tol,
                )?
                .value;
            }
            if split < inner_hi {
                total += integrate(paired, split, inner_hi, tol)?.value;
            }
            let outer_lo = lower.max(1.0);
            if outer_lo < upper {
                if upper.is_finite() {
                    total += integrate(paired, outer_lo, upper, tol)?.value;
                } else {
                    // z = outer_lo / u maps (outer_lo, ∞) onto (0, 1)
                    let raw = integrate(
                        |u| {
                            if u == 0.0 {
                                return 0.0;
                            }
                            let z = outer_lo / u;
                            (phi(x + s * z) + phi(x - s * z)) * amplitude * z.powf(-1.0 - alpha) * outer_lo / (u * u)
                        },
                        0.0,
                        1.0,
                        tol,
                    )?
                    .value;
                    total += raw - 2.0 * fx * amplitude * outer_lo.powf(-alpha) / alpha;
                }
            }
            Ok(total)
        }
    }
}

/// E[φ(a + b G)] for standard normal G.
fn gaussian_expectation<P: Fn(f64) -> f64>(phi: &P, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if b == 0.0 {
        return Ok(phi(a));
    }
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let f = |g: f64| phi(a + b * g) * (-0.5 * g * g).exp() * norm;
    Ok(integrate(f, -10.0, 0.0, QuadOptions::abs(abs_tol / 2.0))?.value
        + integrate(f, 0.0, 10.0, QuadOptions::abs(abs_tol / 2.0))?.value)
}

/// Poisson weights p_0, p_1, … up to the point where the remaining tail is below `tail_tol`.
fn poisson_weights(mean: f64, tail_tol: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut p = (-mean).exp();
    let mut cdf = 0.0;
    let mut k = 0u32;
    loop {
        out.push(p);
        cdf += p;
        if 1.0 - cdf < tail_tol || k > 10_000 {
            return out;
        }
        k += 1;
        p *= mean / k as f64;
    }
}

/// Exact value of E[ν̂] = ∫_{|z|>κ} ζ(z) E[φ(X̂ + s z)] ν(dz) for d = 1 and
/// coefficients frozen at (t, x), evaluated by a Poisson series over the jump
/// count of X̂ and nested quadrature. Supports point masses at any κ and
/// Gaussian jumps at κ = 0.
#[allow(clippy::too_many_arguments)]
pub fn nu_hat_quadrature<P, Z>(
    phi: P,
    zeta: Z,
    cf: &CoefficientField,
    m: &LevyMeasure,
    kappa: TruncationLevel,
    t: f64,
    x: f64,
    h: f64,
) -> Result<f64>
where
    P: Fn(f64) -> f64,
    Z: Fn(f64) -> f64,
{
    if cf.dim() != 1 {
        return Err(Error::InvalidArgument("quadrature oracle is one-dimensional".into()));
    }
    let lambda = m.tail_mass(kappa)?;
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let s = cf.eta_scale(t, &[x])[0];
    let sigma = cf.sigma(t, &[x])[(0, 0)];
    let base = x + (cf.mu(t, &[x])[0] - s * m.truncated_first_moment(kappa)) * h;
    let weights = poisson_weights(lambda * h, 1e-12);
    let tol = 1e-11;
    match *m {
        LevyMeasure::FinitePointMass { intensity, location } => {
            let mut e = 0.0;
            for (n, p) in weights.iter().enumerate() {
                let mean = base + s * location * (n as f64 + 1.0);
                e += p * gaussian_expectation(&phi, mean, sigma * h.sqrt(), tol)?;
            }
            Ok(intensity * zeta(location) * e)
        }
        LevyMeasure::FiniteGaussianJumps { mean: jm, std: js, .. } if kappa.value() == 0.0 => {
            let lo = jm - 12.0 * js;
            let hi = jm + 12.0 * js;
            let landing_mean = |z: f64| -> Result<f64> {
                let mut e = 0.0;
                for (n, p) in weights.iter().enumerate() {
                    let nf = n as f64;
                    let sd = (sigma * sigma * h + s * s * nf * js * js).sqrt();
                    e += p * gaussian_expectation(&phi, base + s * (nf * jm + z), sd, tol)?;
                }
                Ok(e)
            };
            let failure = std::cell::Cell::new(None);
            let outer = integrate(
                |z| match landing_mean(z) {
                    Ok(v) => zeta(z) * v * m.density(z).unwrap_or(0.0),
                    Err(e) => {
                        failure.set(Some(e));
                        0.0
                    }
                },
                lo,
                hi,
                QuadOptions::abs(1e-9),
            )?;
            if let Some(e) = failure.into_inner() {
                return Err(e);
            }
            Ok(outer.value)
        }
        _ => Err(Error::InvalidArgument(format!("no exact MCQ oracle for {m:?} at kappa = {kappa}"))),
    }
}
