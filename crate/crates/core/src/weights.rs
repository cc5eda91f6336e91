//! Hermite-type weights H⁰, H¹, H² and the derivative estimators
//! D_h^k ψ(t, x) = E[ψ(X̂) H_k].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jumpdiff::{CoefficientField, LocalDynamics, SampleBatch};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Scalar(f64),
    Vector(DVector<f64>),
    Matrix(DMatrix<f64>),
}

/// H⁰ = 1, H¹ = σ^{-T} w / h, H² = σ^{-T} (w wᵀ − h I) σ^{-1} / h².
pub fn weight(k: usize, cf: &CoefficientField, t: f64, x: &[f64], h: f64, w: &[f64]) -> Result<Weight> {
    if k == 0 {
        return Ok(Weight::Scalar(1.0));
    }
    let sigma = cf.sigma(t, x);
    let sigma_inv = linalg::invert(&sigma).ok_or_else(|| Error::SingularDiffusion {
        t,
        x: x.to_vec(),
        condition: linalg::condition_number(&sigma),
    })?;
    let w = DVector::from_column_slice(w);
    let sit = sigma_inv.transpose();
    match k {
        1 => Ok(Weight::Vector(&sit * w / h)),
        2 => {
            let d = w.len();
            let inner = &w * w.transpose() - DMatrix::identity(d, d) * h;
            Ok(Weight::Matrix(sit * inner * sigma_inv / (h * h)))
        }
        _ => Err(Error::InvalidArgument(format!("weight order must be 0, 1 or 2, got {k}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTriple {
    pub d0: f64,
    pub d1: DVector<f64>,
    pub d2: DMatrix<f64>,
}

impl DerivativeTriple {
    pub fn zeros(d: usize) -> Self {
        Self { d0: 0.0, d1: DVector::zeros(d), d2: DMatrix::zeros(d, d) }
    }
}

/// A derivative triple with the standard errors of each component.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeEstimate {
    pub triple: DerivativeTriple,
    pub se_d0: f64,
    pub se_d1: DVector<f64>,
    pub se_d2: DMatrix<f64>,
    pub n_samples: usize,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean_se(self, n: usize) -> (f64, f64) {
        let nf = n as f64;
        let mean = self.sum / nf;
        if n < 2 {
            return (mean, 0.0);
        }
        let var = ((self.sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
        (mean, (var / nf).sqrt())
    }
}

/// Derivative estimates from precomputed ψ(landing_i) values on a batch.
pub fn estimate_from_values(values: &[f64], batch: &SampleBatch, sigma_inv: &DMatrix<f64>) -> Result<DerivativeEstimate> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    assert_eq!(values.len(), n, "one value per sample");
    let d = batch.dim();
    let h = batch.h();
    if d == 1 {
        return Ok(estimate_scalar(values, batch, sigma_inv[(0, 0)]));
    }
    let sit = sigma_inv.transpose();
    let gram = &sit * sigma_inv;
    let mut m0 = Moments::default();
    let mut m1 = vec![Moments::default(); d];
    let mut m2 = vec![Moments::default(); d * d];
    let mut u = vec![0.0; d];
    for (i, &psi) in values.iter().enumerate() {
        let w = batch.w(i);
        for (k, uk) in u.iter_mut().enumerate() {
            *uk = (0..d).map(|l| sit[(k, l)] * w[l]).sum();
        }
        m0.push(psi);
        for k in 0..d {
            m1[k].push(psi * u[k] / h);
            for l in 0..d {
                m2[k * d + l].push(psi * (u[k] * u[l] - h * gram[(k, l)]) / (h * h));
            }
        }
    }
    let (d0, se_d0) = m0.mean_se(n);
    let mut d1 = DVector::zeros(d);
    let mut se_d1 = DVector::zeros(d);
    for k in 0..d {
        (d1[k], se_d1[k]) = m1[k].mean_se(n);
    }
    let mut d2 = DMatrix::zeros(d, d);
    let mut se_d2 = DMatrix::zeros(d, d);
    for k in 0..d {
        for l in 0..d {
            (d2[(k, l)], se_d2[(k, l)]) = m2[k * d + l].mean_se(n);
        }
    }
    let d2 = (&d2 + d2.transpose()) * 0.5;
    Ok(DerivativeEstimate { triple: DerivativeTriple { d0, d1, d2 }, se_d0, se_d1, se_d2, n_samples: n })
}

fn estimate_scalar(values: &[f64], batch: &SampleBatch, sigma_inv: f64) -> DerivativeEstimate {
    let n = values.len();
    let h = batch.h();
    let mut m0 = Moments::default();
    let mut m1 = Moments::default();
    let mut m2 = Moments::default();
    let g = sigma_inv * sigma_inv;
    for (i, &psi) in values.iter().enumerate() {
        let u = sigma_inv * batch.w(i)[0];
        m0.push(psi);
        m1.push(psi * u / h);
        m2.push(psi * (u * u - h * g) / (h * h));
    }
    let (d0, se_d0) = m0.mean_se(n);
    let (d1, se1) = m1.mean_se(n);
    let (d2, se2) = m2.mean_se(n);
    DerivativeEstimate {
        triple: DerivativeTriple { d0, d1: DVector::from_element(1, d1), d2: DMatrix::from_element(1, 1, d2) },
        se_d0,
        se_d1: DVector::from_element(1, se1),
        se_d2: DMatrix::from_element(1, 1, se2),
        n_samples: n,
    }
}

/// Sample means of ψ(X̂)·H_k over a batch drawn at (t, x) with step h.
pub fn estimate_derivatives<F>(psi: F, batch: &SampleBatch, cf: &CoefficientField, t: f64, x: &[f64], h: f64) -> Result<DerivativeEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if (batch.h() - h).abs() > 1e-15 * h {
        return Err(Error::InvalidArgument(format!("batch drawn with h = {}, estimator called with h = {h}", batch.h())));
    }
    let sigma = cf.sigma(t, x);
    let sigma_inv = linalg::invert(&sigma).ok_or_else(|| Error::SingularDiffusion {
        t,
        x: x.to_vec(),
        condition: linalg::condition_number(&sigma),
    })?;
    let values: Vec<f64> = (0..batch.len()).map(|i| psi(batch.landing(i))).collect();
    estimate_from_values(&values, batch, &sigma_inv)
}

/// Same as [`estimate_derivatives`] with σ^{-1} taken from precomputed dynamics.
pub fn estimate_with_dynamics<F>(psi: F, batch: &SampleBatch, dynamics: &LocalDynamics) -> Result<DerivativeEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    let values: Vec<f64> = (0..batch.len()).map(|i| psi(batch.landing(i))).collect();
    estimate_from_values(&values, batch, dynamics.require_sigma_inv()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jumpdiff::{simulate_batch, substream};
    use crate::levy::{LevyMeasure, TruncationLevel};

    fn no_jumps() -> (LevyMeasure, TruncationLevel) {
        (LevyMeasure::point_mass(1.0, 0.5).unwrap(), TruncationLevel::new(10.0).unwrap())
    }

    #[test]
    fn weight_examples() {
        let cf = CoefficientField::constant_1d(0.0, 2.0, 0.0);
        assert_eq!(weight(0, &cf, 0.0, &[0.0], 0.1, &[0.3]).unwrap(), Weight::Scalar(1.0));
        let Weight::Vector(h1) = weight(1, &cf, 0.0, &[0.0], 0.1, &[0.3]).unwrap() else { panic!() };
        assert!((h1[0] - 1.5).abs() < 1e-14);
        let cf1 = CoefficientField::constant_1d(0.0, 1.0, 0.0);
        let Weight::Matrix(h2) = weight(2, &cf1, 0.0, &[0.0], 0.1, &[0.0]).unwrap() else { panic!() };
        assert!((h2[(0, 0)] + 10.0).abs() < 1e-12);
    }

    #[test]
    fn singular_sigma_is_reported() {
        let cf = CoefficientField::constant_1d(0.0, 0.0, 0.0);
        assert!(matches!(weight(1, &cf, 0.0, &[0.0], 0.1, &[0.3]), Err(Error::SingularDiffusion { .. })));
    }

    #[test]
    fn constants_give_exact_d0_and_centered_derivatives() {
        let cf = CoefficientField::constant_1d(0.2, 0.7, 1.0);
        let m = LevyMeasure::gaussian_jumps(2.0, 0.1, 0.3).unwrap();
        let k = TruncationLevel::ZERO;
        let batch = simulate_batch(&cf, &m, k, 0.0, &[0.0], 0.05, 100_000, &mut substream(1, 0, 0)).unwrap();
        let e = estimate_derivatives(|_| 3.0, &batch, &cf, 0.0, &[0.0], 0.05).unwrap();
        assert_eq!(e.triple.d0, 3.0);
        assert!(e.triple.d1[0].abs() < 3.0 * e.se_d1[0]);
        assert!(e.triple.d2[(0, 0)].abs() < 3.0 * e.se_d2[(0, 0)]);
    }

    #[test]
    fn square_has_second_derivative_two() {
        let cf = CoefficientField::constant_1d(0.0, 1.0, 0.0);
        let (m, k) = no_jumps();
        let batch = simulate_batch(&cf, &m, k, 0.0, &[0.4], 0.1, 100_000, &mut substream(2, 0, 0)).unwrap();
        let e = estimate_derivatives(|y| y[0] * y[0], &batch, &cf, 0.0, &[0.4], 0.1).unwrap();
        assert!((e.triple.d2[(0, 0)] - 2.0).abs() < 3.0 * e.se_d2[(0, 0)]);
        assert!((e.triple.d1[0] - 0.8).abs() < 3.0 * e.se_d1[0]);
    }

    #[test]
    fn affine_gradient_is_unbiased() {
        let cf = CoefficientField::constant(
            DVector::from_vec(vec![0.1, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 0.8]),
            DVector::zeros(2),
        );
        let (m, k) = no_jumps();
        let x = [0.0, 1.0];
        let batch = simulate_batch(&cf, &m, k, 0.0, &x, 0.1, 100_000, &mut substream(3, 0, 0)).unwrap();
        let e = estimate_derivatives(|y| 2.0 * y[0] - y[1] + 1.0, &batch, &cf, 0.0, &x, 0.1).unwrap();
        assert!((e.triple.d1[0] - 2.0).abs() < 3.0 * e.se_d1[0]);
        assert!((e.triple.d1[1] + 1.0).abs() < 3.0 * e.se_d1[1]);
        assert_eq!(e.triple.d2, e.triple.d2.transpose());
    }

    #[test]
    fn linear_in_psi_on_a_shared_batch() {
        let cf = CoefficientField::constant_1d(0.0, 0.5, 1.0);
        let m = LevyMeasure::power_tail(1.0, 1.2).unwrap();
        let k = TruncationLevel::new(0.1).unwrap();
        let batch = simulate_batch(&cf, &m, k, 0.0, &[0.0], 0.02, 5_000, &mut substream(4, 0, 0)).unwrap();
        let f = |y: &[f64]| y[0].sin();
        let g = |y: &[f64]| (-y[0] * y[0]).exp();
        let ef = estimate_derivatives(f, &batch, &cf, 0.0, &[0.0], 0.02).unwrap().triple;
        let eg = estimate_derivatives(g, &batch, &cf, 0.0, &[0.0], 0.02).unwrap().triple;
        let ec = estimate_derivatives(|y| 2.0 * f(y) - 3.0 * g(y), &batch, &cf, 0.0, &[0.0], 0.02).unwrap().triple;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        assert!(close(ec.d0, 2.0 * ef.d0 - 3.0 * eg.d0));
        assert!(close(ec.d1[0], 2.0 * ef.d1[0] - 3.0 * eg.d1[0]));
        assert!(close(ec.d2[(0, 0)], 2.0 * ef.d2[(0, 0)] - 3.0 * eg.d2[(0, 0)]));
    }
}
