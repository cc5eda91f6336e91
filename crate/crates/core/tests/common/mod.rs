#![allow(dead_code)]

use levy_scheme::bench::problems::{BenchmarkProblem, ProblemKey};
use levy_scheme::hjb::theta_kappa;
use levy_scheme::jumpdiff::substream;
use levy_scheme::levy::TruncationLevel;
use levy_scheme::scheme::{apply_t, StepContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth random surface: a few sinusoids plus Gaussian bumps.
#[derive(Debug, Clone)]
pub struct Surface {
    waves: Vec<(f64, f64, f64)>,
    bumps: Vec<(f64, f64, f64)>,
}

impl Surface {
    pub fn eval(&self, y: f64) -> f64 {
        self.waves.iter().map(|(a, f, p)| a * (f * y + p).sin()).sum::<f64>()
            + self.bumps.iter().map(|(c, m, w)| c * (-(y - m).powi(2) / w).exp()).sum::<f64>()
    }

    fn random(rng: &mut ChaCha8Rng, signed_bumps: bool) -> Self {
        let waves = (0..3).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.2..3.0), rng.gen_range(0.0..6.3))).collect();
        let bumps = (0..2)
            .map(|_| {
                let c: f64 = rng.gen_range(0.0..0.5);
                (if signed_bumps && rng.gen_bool(0.5) { -c } else { c }, rng.gen_range(-1.5..1.5), rng.gen_range(0.05..1.0))
            })
            .collect();
        Self { waves, bumps }
    }

    fn perturbation(rng: &mut ChaCha8Rng, signed: bool) -> Self {
        Self { waves: Vec::new(), ..Self::random(rng, signed) }
    }

    fn plus(&self, other: &Surface) -> Surface {
        Surface { waves: self.waves.clone(), bumps: self.bumps.iter().chain(&other.bumps).copied().collect() }
    }
}

/// sup |δ| for a pure bump perturbation, by dense sampling.
fn sup_norm(delta: &Surface) -> f64 {
    (-20_000..=20_000).map(|i| delta.eval(i as f64 * 5e-4).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PairStats {
    pub pairs: usize,
    pub checks: usize,
    pub monotone_failures: usize,
    pub stability_failures: usize,
    /// most negative (T̄ψ − T̄φ) / combined standard error over ordered pairs
    pub worst_monotone_z: f64,
    /// largest |T̄φ − T̄ψ|∞ / (|φ − ψ|∞ (1 + (C + θ)h)) over all pairs, noise margin excluded
    pub worst_stability_ratio: f64,
}

/// Monotonicity and stability of the monotonized operator on the concave toy
/// problem, with common random numbers for each pair.
pub fn monotone_and_stable(pairs: usize, samples: usize, h: f64, seed: u64) -> PairStats {
    let prob = BenchmarkProblem::from_key(ProblemKey::ConcaveHjbToy).unwrap();
    let kappa = TruncationLevel::ZERO;
    let nodes = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let domain: Vec<(f64, Vec<f64>)> = [0.0, prob.horizon].iter().flat_map(|&t| nodes.iter().map(move |&x| (t, vec![x]))).collect();
    let theta = theta_kappa(&prob.problem, &prob.measure, kappa, &domain).unwrap().value;
    let c_max = prob.problem.max_abs_c(&domain);
    let ctx = StepContext::new(&prob.problem, &prob.measure, kappa, h, samples).unwrap().monotonized(theta, prob.horizon);
    let growth = 1.0 + (c_max + theta) * h;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = PairStats { pairs, worst_monotone_z: f64::INFINITY, ..PairStats::default() };
    for pair in 0..pairs {
        let phi = Surface::random(&mut rng, false);
        let up = Surface::perturbation(&mut rng, false);
        let any = Surface::perturbation(&mut rng, true);
        let psi = phi.plus(&up);
        let chi = phi.plus(&any);
        let sup_any = sup_norm(&any);
        for (j, &x) in nodes.iter().enumerate() {
            let run = |s: &Surface| {
                apply_t(|y: &[f64]| s.eval(y[0]), &ctx, 0.0, &[x], &mut substream(seed, pair as u64, j as u64)).unwrap()
            };
            let (a, b, c) = (run(&phi), run(&psi), run(&chi));
            stats.checks += 1;

            let se = a.std_error.hypot(b.std_error);
            let gap = b.value - a.value;
            stats.worst_monotone_z = stats.worst_monotone_z.min(gap / se);
            if gap < -3.0 * se {
                stats.monotone_failures += 1;
            }

            let se = a.std_error.hypot(c.std_error);
            let diff = (a.value - c.value).abs();
            let bound = sup_any * growth;
            stats.worst_stability_ratio = stats.worst_stability_ratio.max(diff / bound);
            if diff > bound + 3.0 * se {
                stats.stability_failures += 1;
            }
        }
    }
    stats
}
