//! One-dimensional Lévy measures with closed-form truncation functionals and
//! exact samplers for the jumps retained above a truncation level.

use rand::Rng;
use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_pieces, QuadOptions};

/// Jump-size cutoff κ ≥ 0.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TruncationLevel(f64);

impl TruncationLevel {
    pub const ZERO: TruncationLevel = TruncationLevel(0.0);

    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || kappa.is_infinite() {
            return Err(Error::InvalidArgument(format!("truncation level must be finite and >= 0, got {kappa}")));
        }
        Ok(Self(kappa))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl std::fmt::Display for TruncationLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LevyMeasure {
    /// `intensity · δ_location`.
    FinitePointMass { intensity: f64, location: f64 },
    /// `intensity · N(mean, std²)`.
    FiniteGaussianJumps { intensity: f64, mean: f64, std: f64 },
    /// Symmetric `amplitude · |z|^{-1-alpha} dz` on ℝ∖{0}, `alpha ∈ (0, 2)`.
    PowerTail { amplitude: f64, alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Functionals {
    pub tail_mass: f64,
    pub truncated_first_moment: f64,
    pub small_jump_second_moment: f64,
}

fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(u: f64) -> f64 {
    0.5 * erfc(-u / std::f64::consts::SQRT_2)
}

fn std_normal_sf(u: f64) -> f64 {
    0.5 * erfc(u / std::f64::consts::SQRT_2)
}

/// P(A < U < B) for standard normal U, written to avoid cancellation in the tails.
fn std_normal_interval(a: f64, b: f64) -> f64 {
    if b <= a {
        0.0
    } else if a >= 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else if b <= 0.0 {
        std_normal_cdf(b) - std_normal_cdf(a)
    } else {
        1.0 - std_normal_cdf(a) - std_normal_sf(b)
    }
}

/// Partial moments (∫1, ∫z, ∫z²) of N(mean, std²) over [a, b].
fn gaussian_partial_moments(mean: f64, std: f64, a: f64, b: f64) -> (f64, f64, f64) {
    if b <= a {
        return (0.0, 0.0, 0.0);
    }
    let lo = (a - mean) / std;
    let hi = (b - mean) / std;
    let p = std_normal_interval(lo, hi);
    let (pa, pb) = (std_normal_pdf(lo), std_normal_pdf(hi));
    let (ta, tb) = (if lo.is_finite() { lo * pa } else { 0.0 }, if hi.is_finite() { hi * pb } else { 0.0 });
    let m1 = mean * p + std * (pa - pb);
    let m2 = (mean * mean + std * std) * p + 2.0 * mean * std * (pa - pb) + std * std * (ta - tb);
    (p, m1, m2)
}

impl LevyMeasure {
    pub fn point_mass(intensity: f64, location: f64) -> Result<Self> {
        let m = LevyMeasure::FinitePointMass { intensity, location };
        m.validate()?;
        Ok(m)
    }

    pub fn gaussian_jumps(intensity: f64, mean: f64, std: f64) -> Result<Self> {
        let m = LevyMeasure::FiniteGaussianJumps { intensity, mean, std };
        m.validate()?;
        Ok(m)
    }

    pub fn power_tail(amplitude: f64, alpha: f64) -> Result<Self> {
        let m = LevyMeasure::PowerTail { amplitude, alpha };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidMeasure(msg));
        match *self {
            LevyMeasure::FinitePointMass { intensity, location } => {
                if !(intensity >= 0.0 && intensity.is_finite()) {
                    return bad(format!("intensity must be finite and >= 0, got {intensity}"));
                }
                if location == 0.0 || !location.is_finite() {
                    return bad(format!("atom location must be finite and non-zero, got {location}"));
                }
            }
            LevyMeasure::FiniteGaussianJumps { intensity, mean, std } => {
                if !(intensity >= 0.0 && intensity.is_finite()) {
                    return bad(format!("intensity must be finite and >= 0, got {intensity}"));
                }
                if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
                    return bad(format!("jump law needs finite mean and std > 0, got N({mean}, {std}^2)"));
                }
            }
            LevyMeasure::PowerTail { amplitude, alpha } => {
                if !(amplitude > 0.0 && amplitude.is_finite()) {
                    return bad(format!("amplitude must be > 0, got {amplitude}"));
                }
                if !(alpha > 0.0 && alpha < 2.0) {
                    return bad(format!("alpha must lie in (0, 2), got {alpha}"));
                }
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        !matches!(self, LevyMeasure::PowerTail { .. })
    }

    pub fn is_symmetric(&self) -> bool {
        match *self {
            LevyMeasure::FinitePointMass { intensity, .. } => intensity == 0.0,
            LevyMeasure::FiniteGaussianJumps { intensity, mean, .. } => intensity == 0.0 || mean == 0.0,
            LevyMeasure::PowerTail { .. } => true,
        }
    }

    /// κ = 0 is admissible only for finite measures.
    pub fn check_admissible(&self, kappa: TruncationLevel) -> Result<()> {
        if kappa.value() == 0.0 && !self.is_finite() {
            return Err(Error::InfiniteMass { kappa: 0.0 });
        }
        Ok(())
    }

    /// λ_κ = ν(|z| > κ).
    pub fn tail_mass(&self, kappa: TruncationLevel) -> Result<f64> {
        self.check_admissible(kappa)?;
        let k = kappa.value();
        Ok(match *self {
            LevyMeasure::FinitePointMass { intensity, location } => {
                if location.abs() > k {
                    intensity
                } else {
                    0.0
                }
            }
            LevyMeasure::FiniteGaussianJumps { intensity, mean, std } => {
                if k == 0.0 {
                    intensity
                } else {
                    intensity * (std_normal_cdf((-k - mean) / std) + std_normal_sf((k - mean) / std))
                }
            }
            LevyMeasure::PowerTail { amplitude, alpha } => 2.0 * amplitude * k.powf(-alpha) / alpha,
        })
    }

    /// ∫_{κ<|z|≤1} z ν(dz); zero once κ ≥ 1.
    pub fn truncated_first_moment(&self, kappa: TruncationLevel) -> f64 {
        let k = kappa.value();
        if k >= 1.0 {
            return 0.0;
        }
        match *self {
            LevyMeasure::FinitePointMass { intensity, location } => {
                if location.abs() > k && location.abs() <= 1.0 {
                    intensity * location
                } else {
                    0.0
                }
            }
            LevyMeasure::FiniteGaussianJumps { intensity, mean, std } => {
                let (_, right, _) = gaussian_partial_moments(mean, std, k, 1.0);
                let (_, left, _) = gaussian_partial_moments(mean, std, -1.0, -k);
                intensity * (right + left)
            }
            LevyMeasure::PowerTail { .. } => 0.0,
        }
    }

    /// ∫_{0<|z|≤κ} z² ν(dz).
    pub fn small_jump_second_moment(&self, kappa: TruncationLevel) -> f64 {
        let k = kappa.value();
        if k == 0.0 {
            return 0.0;
        }
        match *self {
            LevyMeasure::FinitePointMass { intensity, location } => {
                if location.abs() <= k {
                    intensity * location * location
                } else {
                    0.0
                }
            }
            LevyMeasure::FiniteGaussianJumps { intensity, mean, std } => {
                intensity * gaussian_partial_moments(mean, std, -k, k).2
            }
            LevyMeasure::PowerTail { amplitude, alpha } => 2.0 * amplitude * k.powf(2.0 - alpha) / (2.0 - alpha),
        }
    }

    /// ∫_{|z|>κ} |z| ν(dz), infinite for power tails with α ≥ 1.
    pub fn tail_abs_first_moment(&self, kappa: TruncationLevel) -> Result<f64> {
        self.check_admissible(kappa)?;
        let k = kappa.value();
        Ok(match *self {
            LevyMeasure::FinitePointMass { intensity, location } => {
                if location.abs() > k {
                    intensity * location.abs()
                } else {
                    0.0
                }
            }
            LevyMeasure::FiniteGaussianJumps { intensity, mean, std } => {
                let (_, right, _) = gaussian_partial_moments(mean, std, k, f64::INFINITY);
                let (_, left, _) = gaussian_partial_moments(mean, std, f64::NEG_INFINITY, -k);
                intensity * (right - left)
            }
            LevyMeasure::PowerTail { amplitude, alpha } => {
                if alpha <= 1.0 {
                    f64::INFINITY
                } else {
                    2.0 * amplitude * k.powf(1.0 - alpha) / (alpha - 1.0)
                }
            }
        })
    }

    /// ∫_{|z|>κ} min(z², cap²) ν(dz).
    pub fn tail_capped_second_moment(&self, kappa: TruncationLevel, cap: f64) -> Result<f64> {
        self.check_admissible(kappa)?;
        let k = kappa.value();
        let c2 = cap * cap;
        Ok(match *self {
            LevyMeasure::FinitePointMass { intensity, location } => {
                if location.abs() > k {
                    intensity * (location * location).min(c2)
                } else {
                    0.0
                }
            }
            LevyMeasure::FiniteGaussianJumps { intensity, mean, std } => {
                if k >= cap {
                    c2 * self.tail_mass(kappa)?
                } else {
                    let (_, _, inner_r) = gaussian_partial_moments(mean, std, k, cap);
                    let (_, _, inner_l) = gaussian_partial_moments(mean, std, -cap, -k);
                    let outer = std_normal_sf((cap - mean) / std) + std_normal_cdf((-cap - mean) / std);
                    intensity * (inner_r + inner_l + c2 * outer)
                }
            }
            LevyMeasure::PowerTail { amplitude, alpha } => {
                let outer = c2 * 2.0 * amplitude * cap.max(k).powf(-alpha) / alpha;
                let inner = if k < cap {
                    2.0 * amplitude * (cap.powf(2.0 - alpha) - k.powf(2.0 - alpha)) / (2.0 - alpha)
                } else {
                    0.0
                };
                inner + outer
            }
        })
    }

    pub fn functionals(&self, kappa: TruncationLevel) -> Result<Functionals> {
        Ok(Functionals {
            tail_mass: self.tail_mass(kappa)?,
            truncated_first_moment: self.truncated_first_moment(kappa),
            small_jump_second_moment: self.small_jump_second_moment(kappa),
        })
    }

    /// Lebesgue density, `None` for atomic measures.
    pub fn density(&self, z: f64) -> Option<f64> {
        match *self {
            LevyMeasure::FinitePointMass { .. } => None,
            LevyMeasure::FiniteGaussianJumps { intensity, mean, std } => {
                Some(intensity * std_normal_pdf((z - mean) / std) / std)
            }
            LevyMeasure::PowerTail { amplitude, alpha } => {
                if z == 0.0 {
                    Some(f64::INFINITY)
                } else {
                    Some(amplitude * z.abs().powf(-1.0 - alpha))
                }
            }
        }
    }

    /// P(Z ≤ z) under the normalised tail law `1_{|z|>κ} ν(dz) / λ_κ`.
    pub fn tail_cdf(&self, kappa: TruncationLevel, z: f64) -> Result<f64> {
        let k = kappa.value();
        let total = self.tail_mass(kappa)?;
        if total <= 0.0 {
            return Err(Error::CannotSample { kappa: k, tail_mass: total });
        }
        let below = match *self {
            LevyMeasure::FinitePointMass { intensity, location } => {
                if location <= z && location.abs() > k {
                    intensity
                } else {
                    0.0
                }
            }
            LevyMeasure::FiniteGaussianJumps { intensity, mean, std } => {
                let left_end = z.min(-k);
                let mut mass = std_normal_cdf((left_end - mean) / std);
                if z > k {
                    mass += std_normal_interval((k - mean) / std, (z - mean) / std);
                }
                intensity * mass
            }
            LevyMeasure::PowerTail { amplitude, alpha } => {
                let half = amplitude * k.powf(-alpha) / alpha;
                if z <= -k {
                    amplitude * (-z).powf(-alpha) / alpha
                } else if z <= k {
                    half
                } else {
                    2.0 * half - amplitude * z.powf(-alpha) / alpha
                }
            }
        };
        Ok((below / total).clamp(0.0, 1.0))
    }

    /// Closed-form functionals recomputed by adaptive quadrature of the density.
    /// Atomic measures are evaluated directly.
    pub fn functionals_by_quadrature(&self, kappa: TruncationLevel, opts: QuadOptions) -> Result<Functionals> {
        self.check_admissible(kappa)?;
        let k = kappa.value();
        match *self {
            LevyMeasure::FinitePointMass { intensity, location } => {
                let a = location.abs();
                Ok(Functionals {
                    tail_mass: if a > k { intensity } else { 0.0 },
                    truncated_first_moment: if a > k && a <= 1.0 { intensity * location } else { 0.0 },
                    small_jump_second_moment: if a <= k { intensity * location * location } else { 0.0 },
                })
            }
            LevyMeasure::FiniteGaussianJumps { mean, std, .. } => {
                let dens = |z: f64| self.density(z).unwrap_or(0.0);
                let lo = mean - 40.0 * std;
                let hi = mean + 40.0 * std;
                let mut left_breaks = vec![lo.min(-k), -k];
                let mut right_breaks = vec![k, hi.max(k)];
                if mean < -k {
                    left_breaks.insert(1, mean);
                }
                if mean > k {
                    right_breaks.insert(1, mean);
                }
                let tail = integrate_pieces(dens, &left_breaks, opts)?.value
                    + integrate_pieces(dens, &right_breaks, opts)?.value;
                let first = if k < 1.0 {
                    integrate(|z| z * dens(z), k, 1.0, opts)?.value + integrate(|z| z * dens(z), -1.0, -k, opts)?.value
                } else {
                    0.0
                };
                let mut mid = vec![-k, k];
                if mean.abs() < k {
                    mid.insert(1, mean);
                }
                let second = integrate_pieces(|z| z * z * dens(z), &mid, opts)?.value;
                Ok(Functionals { tail_mass: tail, truncated_first_moment: first, small_jump_second_moment: second })
            }
            LevyMeasure::PowerTail { .. } => {
                let dens = |z: f64| self.density(z).unwrap_or(0.0);
                // ∫_κ^∞ f(z) dz = ∫_0^1 f(κ/t) κ/t² dt on each half-line
                let half_tail = integrate(
                    |t| {
                        // dz = z²/κ dt, grouped so neither factor overflows
                        let z = k / t;
                        let v = dens(z) * z * z / k;
                        if v.is_finite() {
                            v
                        } else {
                            0.0
                        }
                    },
                    0.0,
                    1.0,
                    opts,
                )?
                .value;
                let first = if k < 1.0 {
                    integrate(|z| z * dens(z), k, 1.0, opts)?.value + integrate(|z| z * dens(z), -1.0, -k, opts)?.value
                } else {
                    0.0
                };
                // z = κ e^{-s} turns the z^{1-α} singularity at 0 into exponential decay
                let half_second = if k > 0.0 {
                    let s_max = k.ln() - f64::MIN_POSITIVE.ln();
                    integrate(
                        |s| {
                            let z = k * (-s).exp();
                            let v = dens(z) * z * z * z;
                            if v.is_finite() {
                                v
                            } else {
                                0.0
                            }
                        },
                        0.0,
                        s_max,
                        opts,
                    )?
                    .value
                } else {
                    0.0
                };
                Ok(Functionals {
                    tail_mass: 2.0 * half_tail,
                    truncated_first_moment: first,
                    small_jump_second_moment: 2.0 * half_second,
                })
            }
        }
    }
}

/// Exact sampler for the normalised jump law above κ.
#[derive(Debug, Clone, Copy)]
pub struct TailSampler {
    kind: SamplerKind,
}

#[derive(Debug, Clone, Copy)]
enum SamplerKind {
    Atom(f64),
    Gaussian { mean: f64, std: f64, kappa: f64, p_right: f64, p_left: f64 },
    Power { kappa: f64, inv_alpha: f64, p_right: f64 },
}

impl TailSampler {
    pub fn new(m: &LevyMeasure, kappa: TruncationLevel) -> Result<Self> {
        let mass = m.tail_mass(kappa)?;
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::CannotSample { kappa: kappa.value(), tail_mass: mass });
        }
        let k = kappa.value();
        let kind = match *m {
            LevyMeasure::FinitePointMass { location, .. } => SamplerKind::Atom(location),
            LevyMeasure::FiniteGaussianJumps { mean, std, .. } => SamplerKind::Gaussian {
                mean,
                std,
                kappa: k,
                p_right: std_normal_sf((k - mean) / std),
                p_left: std_normal_cdf((-k - mean) / std),
            },
            LevyMeasure::PowerTail { alpha, .. } => SamplerKind::Power { kappa: k, inv_alpha: 1.0 / alpha, p_right: 0.5 },
        };
        Ok(Self { kind })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            SamplerKind::Atom(z) => z,
            SamplerKind::Gaussian { mean, std, kappa, p_right, p_left } => {
                if kappa == 0.0 {
                    return mean + std * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
                let total = p_right + p_left;
                let v = rng.gen::<f64>() * total;
                // open interval (0, 1) draw for the inverse survival function
                let u = (rng.gen::<f64>() + f64::EPSILON * 0.5).min(1.0 - f64::EPSILON);
                if v < p_right {
                    let q = u * p_right;
                    (mean + std * std::f64::consts::SQRT_2 * erfc_inv(2.0 * q)).max(kappa)
                } else {
                    let q = u * p_left;
                    (mean - std * std::f64::consts::SQRT_2 * erfc_inv(2.0 * q)).min(-kappa)
                }
            }
            SamplerKind::Power { kappa, inv_alpha, p_right } => {
                let sign = if rng.gen::<f64>() < p_right { 1.0 } else { -1.0 };
                let u = 1.0 - rng.gen::<f64>();
                sign * kappa * u.powf(-inv_alpha)
            }
        }
    }
}

pub fn sample_truncated_jump<R: Rng + ?Sized>(m: &LevyMeasure, kappa: TruncationLevel, rng: &mut R) -> Result<f64> {
    Ok(TailSampler::new(m, kappa)?.sample(rng))
}
