//! One-step Euler simulation of the truncated jump–diffusion in compound
//! Poisson form. Every random ingredient of a step is recorded so that the
//! derivative weights and the MCQ estimators can be evaluated on the same draws.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::levy::{LevyMeasure, TailSampler, TruncationLevel};
use crate::linalg;

pub type VectorFn = Arc<dyn Fn(f64, &[f64]) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Poisson means above this are drawn by transformed rejection instead of inversion.
pub const DEFAULT_POISSON_INVERSION_THRESHOLD: f64 = 10.0;

/// Drift μ, diffusion σ and separable jump amplitude s of the dominating
/// process, with η(t, x, z) = s(t, x)·z.
#[derive(Clone)]
pub struct CoefficientField {
    dim: usize,
    mu: VectorFn,
    sigma: MatrixFn,
    eta_scale: VectorFn,
}

impl std::fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientField").field("dim", &self.dim).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldReport {
    pub max_condition: f64,
    /// sup |s(t, x)|, the constant in |η(z)| ≤ C (|z| ∧ 1) for |z| ≤ 1
    pub max_eta_scale: f64,
}

impl CoefficientField {
    pub fn new(dim: usize, mu: VectorFn, sigma: MatrixFn, eta_scale: VectorFn) -> Self {
        Self { dim, mu, sigma, eta_scale }
    }

    pub fn constant(mu: DVector<f64>, sigma: DMatrix<f64>, eta_scale: DVector<f64>) -> Self {
        let dim = mu.len();
        assert_eq!(sigma.nrows(), dim, "sigma must be dim x dim");
        assert_eq!(sigma.ncols(), dim, "sigma must be dim x dim");
        assert_eq!(eta_scale.len(), dim, "eta scale must have length dim");
        Self {
            dim,
            mu: Arc::new(move |_, _| mu.clone()),
            sigma: Arc::new(move |_, _| sigma.clone()),
            eta_scale: Arc::new(move |_, _| eta_scale.clone()),
        }
    }

    pub fn constant_1d(mu: f64, sigma: f64, eta_scale: f64) -> Self {
        Self::constant(DVector::from_element(1, mu), DMatrix::from_element(1, 1, sigma), DVector::from_element(1, eta_scale))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu(&self, t: f64, x: &[f64]) -> DVector<f64> {
        (self.mu)(t, x)
    }

    pub fn sigma(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        (self.sigma)(t, x)
    }

    pub fn eta_scale(&self, t: f64, x: &[f64]) -> DVector<f64> {
        (self.eta_scale)(t, x)
    }

    /// Checks invertibility of σ and boundedness of s on a sample of the domain.
    pub fn check(&self, domain: &[(f64, Vec<f64>)]) -> Result<FieldReport> {
        let mut report = FieldReport { max_condition: 0.0, max_eta_scale: 0.0 };
        for (t, x) in domain {
            let sigma = self.sigma(*t, x);
            let cond = linalg::condition_number(&sigma);
            if !cond.is_finite() || cond > 1e12 {
                return Err(Error::SingularDiffusion { t: *t, x: x.clone(), condition: cond });
            }
            report.max_condition = report.max_condition.max(cond);
            report.max_eta_scale = report.max_eta_scale.max(self.eta_scale(*t, x).norm());
        }
        Ok(report)
    }
}

/// μ_κ(t, x) = μ(t, x) − s(t, x)·∫_{κ<|z|≤1} z ν(dz).
pub fn compensated_drift(cf: &CoefficientField, m: &LevyMeasure, kappa: TruncationLevel, t: f64, x: &[f64]) -> Result<DVector<f64>> {
    m.check_admissible(kappa)?;
    let first = m.truncated_first_moment(kappa);
    Ok(cf.mu(t, x) - cf.eta_scale(t, x) * first)
}

/// Coefficients frozen at one (t, x), shared by every draw of a batch.
#[derive(Debug, Clone)]
pub struct LocalDynamics {
    pub t: f64,
    pub x: Vec<f64>,
    pub h: f64,
    pub kappa: TruncationLevel,
    pub drift: Vec<f64>,
    pub sigma: DMatrix<f64>,
    /// None when σ(t, x) is singular; simulation still works, weights do not.
    pub sigma_inv: Option<DMatrix<f64>>,
    pub eta_scale: Vec<f64>,
    pub tail_mass: f64,
    pub first_moment: f64,
    sampler: Option<TailSampler>,
    poisson: PoissonDraw,
}

#[derive(Debug, Clone)]
enum PoissonDraw {
    Zero,
    Inversion { mean: f64, p0: f64 },
    Rejection(Poisson<f64>),
}

impl PoissonDraw {
    fn new(mean: f64, threshold: f64) -> Result<Self> {
        if mean == 0.0 {
            Ok(PoissonDraw::Zero)
        } else if mean <= threshold {
            Ok(PoissonDraw::Inversion { mean, p0: (-mean).exp() })
        } else {
            Poisson::new(mean)
                .map(PoissonDraw::Rejection)
                .map_err(|e| Error::InvalidArgument(format!("poisson mean {mean}: {e}")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            PoissonDraw::Zero => 0,
            PoissonDraw::Inversion { mean, p0 } => {
                let u: f64 = rng.gen();
                let mut k = 0u32;
                let mut p = *p0;
                let mut cdf = p;
                while u > cdf && p > 0.0 {
                    k += 1;
                    p *= mean / k as f64;
                    cdf += p;
                }
                k
            }
            PoissonDraw::Rejection(d) => d.sample(rng) as u32,
        }
    }
}

impl LocalDynamics {
    pub fn new(cf: &CoefficientField, m: &LevyMeasure, kappa: TruncationLevel, t: f64, x: &[f64], h: f64) -> Result<Self> {
        Self::with_threshold(cf, m, kappa, t, x, h, DEFAULT_POISSON_INVERSION_THRESHOLD)
    }

    pub fn with_threshold(
        cf: &CoefficientField,
        m: &LevyMeasure,
        kappa: TruncationLevel,
        t: f64,
        x: &[f64],
        h: f64,
        poisson_threshold: f64,
    ) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be > 0, got {h}")));
        }
        if x.len() != cf.dim() {
            return Err(Error::InvalidArgument(format!("point has dimension {}, field has {}", x.len(), cf.dim())));
        }
        let tail_mass = m.tail_mass(kappa)?;
        let first_moment = m.truncated_first_moment(kappa);
        let sigma = cf.sigma(t, x);
        let sigma_inv = linalg::invert(&sigma);
        let eta_scale: Vec<f64> = cf.eta_scale(t, x).iter().copied().collect();
        let mu = cf.mu(t, x);
        let drift: Vec<f64> = mu.iter().zip(&eta_scale).map(|(m, s)| m - s * first_moment).collect();
        let sampler = if tail_mass > 0.0 { Some(TailSampler::new(m, kappa)?) } else { None };
        let poisson = PoissonDraw::new(tail_mass * h, poisson_threshold)?;
        Ok(Self { t, x: x.to_vec(), h, kappa, drift, sigma, sigma_inv, eta_scale, tail_mass, first_moment, sampler, poisson })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn require_sigma_inv(&self) -> Result<&DMatrix<f64>> {
        self.sigma_inv.as_ref().ok_or_else(|| Error::SingularDiffusion {
            t: self.t,
            x: self.x.clone(),
            condition: linalg::condition_number(&self.sigma),
        })
    }

    /// landing = x + μ_κ h + σ w + s Σ Z_i, always evaluated in this order.
    pub fn landing_into(&self, w: &[f64], marks: &[f64], out: &mut [f64]) {
        let jump_sum: f64 = marks.iter().sum();
        for (k, o) in out.iter_mut().enumerate() {
            let mut diffusion = 0.0;
            for (l, wl) in w.iter().enumerate() {
                diffusion += self.sigma[(k, l)] * wl;
            }
            *o = self.x[k] + self.drift[k] * self.h + diffusion + self.eta_scale[k] * jump_sum;
        }
    }

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, w: &mut [f64], marks: &mut Vec<f64>) -> u32 {
        let sqrt_h = self.h.sqrt();
        for wl in w.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *wl = sqrt_h * z;
        }
        let n = self.poisson.sample(rng);
        if n > 0 {
            let sampler = self.sampler.as_ref().expect("positive jump count implies a sampler");
            for _ in 0..n {
                marks.push(sampler.sample(rng));
            }
        }
        n
    }

    pub fn step<R: Rng + ?Sized>(&self, rng: &mut R) -> OneStepSample {
        let d = self.dim();
        let mut w = vec![0.0; d];
        let mut marks = Vec::new();
        let n = self.draw_into(rng, &mut w, &mut marks);
        let mut landing = vec![0.0; d];
        self.landing_into(&w, &marks, &mut landing);
        OneStepSample { w, n_jumps: n, marks, landing }
    }

    pub fn batch<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> SampleBatch {
        let d = self.dim();
        let mut batch = SampleBatch {
            dim: d,
            h: self.h,
            w: vec![0.0; count * d],
            n_jumps: Vec::with_capacity(count),
            mark_offsets: Vec::with_capacity(count + 1),
            marks: Vec::new(),
            landing: vec![0.0; count * d],
        };
        batch.mark_offsets.push(0);
        for i in 0..count {
            let start = batch.marks.len();
            let n = self.draw_into(rng, &mut batch.w[i * d..(i + 1) * d], &mut batch.marks);
            batch.n_jumps.push(n);
            batch.mark_offsets.push(batch.marks.len());
            self.landing_into(&batch.w[i * d..(i + 1) * d], &batch.marks[start..], &mut batch.landing[i * d..(i + 1) * d]);
        }
        batch
    }

    /// Like [`batch`](Self::batch), but odd samples reuse the previous draw with W
    /// negated and the same jumps. Off unless a caller asks for it.
    pub fn antithetic_batch<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> SampleBatch {
        let d = self.dim();
        let mut batch = SampleBatch {
            dim: d,
            h: self.h,
            w: vec![0.0; count * d],
            n_jumps: Vec::with_capacity(count),
            mark_offsets: Vec::with_capacity(count + 1),
            marks: Vec::new(),
            landing: vec![0.0; count * d],
        };
        batch.mark_offsets.push(0);
        for i in 0..count {
            let start = batch.marks.len();
            let n = if i % 2 == 0 {
                self.draw_into(rng, &mut batch.w[i * d..(i + 1) * d], &mut batch.marks)
            } else {
                let prev = batch.mark_offsets[i - 1];
                batch.marks.extend_from_within(prev..start);
                for l in 0..d {
                    batch.w[i * d + l] = -batch.w[(i - 1) * d + l];
                }
                batch.n_jumps[i - 1]
            };
            batch.n_jumps.push(n);
            batch.mark_offsets.push(batch.marks.len());
            self.landing_into(&batch.w[i * d..(i + 1) * d], &batch.marks[start..], &mut batch.landing[i * d..(i + 1) * d]);
        }
        batch
    }
}

/// One Euler step: Brownian increment, jump count, marks and landing point.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepSample {
    pub w: Vec<f64>,
    pub n_jumps: u32,
    pub marks: Vec<f64>,
    pub landing: Vec<f64>,
}

impl OneStepSample {
    pub fn reconstruct_landing(&self, dynamics: &LocalDynamics) -> Vec<f64> {
        let mut out = vec![0.0; self.w.len()];
        dynamics.landing_into(&self.w, &self.marks, &mut out);
        out
    }
}

/// Struct-of-arrays storage for a batch of one-step samples drawn at one (t, x).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    h: f64,
    w: Vec<f64>,
    n_jumps: Vec<u32>,
    mark_offsets: Vec<usize>,
    marks: Vec<f64>,
    landing: Vec<f64>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.n_jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_jumps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn w(&self, i: usize) -> &[f64] {
        &self.w[i * self.dim..(i + 1) * self.dim]
    }

    pub fn n_jumps(&self, i: usize) -> u32 {
        self.n_jumps[i]
    }

    pub fn marks(&self, i: usize) -> &[f64] {
        &self.marks[self.mark_offsets[i]..self.mark_offsets[i + 1]]
    }

    pub fn landing(&self, i: usize) -> &[f64] {
        &self.landing[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sample(&self, i: usize) -> OneStepSample {
        OneStepSample {
            w: self.w(i).to_vec(),
            n_jumps: self.n_jumps(i),
            marks: self.marks(i).to_vec(),
            landing: self.landing(i).to_vec(),
        }
    }

    pub fn to_samples(&self) -> Vec<OneStepSample> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }
}

/// Random substream owned by one (layer, node) pair.
pub fn substream(seed: u64, layer: u64, node: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((layer << 32) ^ node);
    rng
}

#[allow(clippy::too_many_arguments)]
pub fn euler_step<R: Rng + ?Sized>(
    cf: &CoefficientField,
    m: &LevyMeasure,
    kappa: TruncationLevel,
    t: f64,
    x: &[f64],
    h: f64,
    rng: &mut R,
) -> Result<OneStepSample> {
    Ok(LocalDynamics::new(cf, m, kappa, t, x, h)?.step(rng))
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_batch<R: Rng + ?Sized>(
    cf: &CoefficientField,
    m: &LevyMeasure,
    kappa: TruncationLevel,
    t: f64,
    x: &[f64],
    h: f64,
    count: usize,
    rng: &mut R,
) -> Result<SampleBatch> {
    if count == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    Ok(LocalDynamics::new(cf, m, kappa, t, x, h)?.batch(count, rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kap(k: f64) -> TruncationLevel {
        TruncationLevel::new(k).unwrap()
    }

    #[test]
    fn antithetic_pairs_mirror_the_brownian_part() {
        let cf = CoefficientField::constant_1d(0.2, 0.5, 1.0);
        let m = LevyMeasure::gaussian_jumps(3.0, 0.1, 0.4).unwrap();
        let dynamics = LocalDynamics::new(&cf, &m, kap(0.0), 0.0, &[0.3], 0.1).unwrap();
        let batch = dynamics.antithetic_batch(101, &mut substream(4, 0, 0));
        let samples = batch.to_samples();
        assert_eq!(samples.len(), 101);
        for pair in samples.chunks_exact(2) {
            assert_eq!(pair[1].w[0], -pair[0].w[0]);
            assert_eq!(pair[1].marks, pair[0].marks);
            assert_eq!(pair[1].reconstruct_landing(&dynamics), pair[1].landing);
        }
    }

    #[test]
    fn compensated_drift_examples() {
        let cf = CoefficientField::constant_1d(0.3, 1.0, 1.0);
        let sym = LevyMeasure::power_tail(1.0, 1.0).unwrap();
        assert_eq!(compensated_drift(&cf, &sym, kap(0.1), 0.0, &[0.0]).unwrap()[0], 0.3);

        let cf0 = CoefficientField::constant_1d(0.0, 1.0, 1.0);
        let atom = LevyMeasure::point_mass(2.0, 0.5).unwrap();
        assert_eq!(compensated_drift(&cf0, &atom, kap(0.1), 0.0, &[0.0]).unwrap()[0], -1.0);

        let g = LevyMeasure::gaussian_jumps(1.0, 0.4, 0.3).unwrap();
        assert_eq!(compensated_drift(&cf, &g, kap(1.0), 0.0, &[0.0]).unwrap()[0], 0.3);
    }

    #[test]
    fn pure_drift_when_no_jumps_and_no_diffusion() {
        let cf = CoefficientField::new(
            1,
            Arc::new(|_, _| DVector::from_element(1, 2.0)),
            Arc::new(|_, _| DMatrix::zeros(1, 1)),
            Arc::new(|_, _| DVector::from_element(1, 1.0)),
        );
        let m = LevyMeasure::point_mass(3.0, 0.5).unwrap();
        let mut rng = substream(1, 0, 0);
        let s = euler_step(&cf, &m, kap(0.6), 0.0, &[1.0], 0.1, &mut rng).unwrap();
        assert_eq!(s.n_jumps, 0);
        assert_eq!(s.landing[0], 1.0 + 2.0 * 0.1);
    }

    #[test]
    fn landing_is_reconstructible_bit_exactly() {
        let cf = CoefficientField::constant(
            DVector::from_vec(vec![0.1, -0.2]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.7]),
            DVector::from_vec(vec![1.0, 0.5]),
        );
        let m = LevyMeasure::power_tail(1.0, 0.8).unwrap();
        let dyn_ = LocalDynamics::new(&cf, &m, kap(0.05), 0.0, &[0.3, -0.1], 0.5).unwrap();
        let mut rng = substream(9, 3, 4);
        let batch = dyn_.batch(500, &mut rng);
        for i in 0..batch.len() {
            let s = batch.sample(i);
            assert_eq!(s.reconstruct_landing(&dyn_), s.landing);
            assert_eq!(s.marks.len(), s.n_jumps as usize);
            assert!(s.marks.iter().all(|z| z.abs() > 0.05));
        }
    }

    #[test]
    fn singleton_batch_matches_single_step() {
        let cf = CoefficientField::constant_1d(0.1, 0.4, 1.0);
        let m = LevyMeasure::gaussian_jumps(5.0, 0.0, 0.3).unwrap();
        let a = simulate_batch(&cf, &m, kap(0.0), 0.0, &[0.0], 0.2, 1, &mut substream(5, 1, 2)).unwrap();
        let b = euler_step(&cf, &m, kap(0.0), 0.0, &[0.0], 0.2, &mut substream(5, 1, 2)).unwrap();
        assert_eq!(a.sample(0), b);
    }

    #[test]
    fn equal_seeds_give_identical_batches() {
        let cf = CoefficientField::constant_1d(0.1, 0.4, 1.0);
        let m = LevyMeasure::power_tail(0.5, 1.5).unwrap();
        let a = simulate_batch(&cf, &m, kap(0.1), 0.0, &[0.0], 0.05, 1000, &mut substream(11, 7, 8)).unwrap();
        let b = simulate_batch(&cf, &m, kap(0.1), 0.0, &[0.0], 0.05, 1000, &mut substream(11, 7, 8)).unwrap();
        assert_eq!(a, b);
        let c = simulate_batch(&cf, &m, kap(0.1), 0.0, &[0.0], 0.05, 1000, &mut substream(11, 7, 9)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_batch_rejected() {
        let cf = CoefficientField::constant_1d(0.0, 1.0, 1.0);
        let m = LevyMeasure::point_mass(1.0, 0.5).unwrap();
        assert!(simulate_batch(&cf, &m, kap(0.0), 0.0, &[0.0], 0.1, 0, &mut substream(0, 0, 0)).is_err());
    }

    #[test]
    fn large_poisson_means_use_rejection_branch() {
        let cf = CoefficientField::constant_1d(0.0, 1.0, 0.0);
        let m = LevyMeasure::gaussian_jumps(200.0, 0.0, 1.0).unwrap();
        let dyn_ = LocalDynamics::new(&cf, &m, kap(0.0), 0.0, &[0.0], 0.5).unwrap();
        assert!(matches!(dyn_.poisson, PoissonDraw::Rejection(_)));
        let batch = dyn_.batch(20_000, &mut substream(3, 0, 0));
        let mean = (0..batch.len()).map(|i| batch.n_jumps(i) as f64).sum::<f64>() / batch.len() as f64;
        // mean 100, standard error 100/sqrt(2e4) ≈ 0.0707
        assert!((mean - 100.0).abs() < 3.0 * (100.0f64 / 20_000.0).sqrt(), "{mean}");
    }
}
