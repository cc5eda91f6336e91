use levy_scheme::jumpdiff::substream;
use levy_scheme::levy::{LevyMeasure, TailSampler, TruncationLevel};
use levy_scheme::quad::QuadOptions;
use proptest::prelude::*;

const KAPPAS: [f64; 5] = [0.05, 0.1, 0.2, 0.5, 1.0];

fn measures() -> Vec<LevyMeasure> {
    vec![
        LevyMeasure::FinitePointMass { intensity: 2.0, location: 0.3 },
        LevyMeasure::FinitePointMass { intensity: 1.5, location: -0.7 },
        LevyMeasure::FiniteGaussianJumps { intensity: 1.0, mean: 0.1, std: 0.25 },
        LevyMeasure::FiniteGaussianJumps { intensity: 3.0, mean: -0.4, std: 0.7 },
        LevyMeasure::PowerTail { amplitude: 1.0, alpha: 1.0 },
        LevyMeasure::PowerTail { amplitude: 0.5, alpha: 0.5 },
        LevyMeasure::PowerTail { amplitude: 2.0, alpha: 1.5 },
    ]
}

fn rel(closed: f64, quad: f64) -> f64 {
    (closed - quad).abs() / closed.abs().max(1e-6)
}

#[test]
fn closed_forms_agree_with_quadrature() {
    let opts = QuadOptions { abs_tol: 0.0, rel_tol: 1e-11, ..QuadOptions::default() };
    for m in measures() {
        for k in KAPPAS {
            let kappa = TruncationLevel::new(k).unwrap();
            let c = m.functionals(kappa).unwrap();
            let q = m.functionals_by_quadrature(kappa, opts).unwrap();
            for (name, a, b) in [
                ("tail mass", c.tail_mass, q.tail_mass),
                ("first moment", c.truncated_first_moment, q.truncated_first_moment),
                ("second moment", c.small_jump_second_moment, q.small_jump_second_moment),
            ] {
                assert!(rel(a, b) <= 1e-8, "{m:?} kappa {k} {name}: closed {a} quadrature {b}");
            }
        }
    }
}

/// Asymptotic Kolmogorov p-value of the statistic D on n draws.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for j in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(j - 1) * (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn tail_draws_pass_kolmogorov_smirnov() {
    let cases = [
        (LevyMeasure::PowerTail { amplitude: 1.0, alpha: 1.0 }, 0.5),
        (LevyMeasure::PowerTail { amplitude: 0.5, alpha: 0.5 }, 0.1),
        (LevyMeasure::PowerTail { amplitude: 2.0, alpha: 1.7 }, 0.05),
        (LevyMeasure::FiniteGaussianJumps { intensity: 1.0, mean: 0.1, std: 0.25 }, 0.0),
        (LevyMeasure::FiniteGaussianJumps { intensity: 1.0, mean: 0.1, std: 0.25 }, 0.2),
        (LevyMeasure::FiniteGaussianJumps { intensity: 2.0, mean: -0.4, std: 0.7 }, 1.0),
    ];
    let n = 100_000;
    for (i, (m, k)) in cases.into_iter().enumerate() {
        let kappa = TruncationLevel::new(k).unwrap();
        let sampler = TailSampler::new(&m, kappa).unwrap();
        let mut rng = substream(11, i as u64, 0);
        let mut draws: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
        assert!(draws.iter().all(|z| z.abs() > k || k == 0.0));
        draws.sort_by(f64::total_cmp);
        let mut d = 0.0f64;
        for (j, &z) in draws.iter().enumerate() {
            let f = m.tail_cdf(kappa, z).unwrap();
            d = d.max((j + 1) as f64 / n as f64 - f).max(f - j as f64 / n as f64);
        }
        let p = ks_p_value(d, n);
        assert!(p > 1e-3, "{m:?} kappa {k}: D = {d}, p = {p}");
    }
}

#[test]
fn power_tail_mass_split_above_one() {
    // P(|Z| > 1) = tail_mass(1) / tail_mass(0.5) = 2 / 4
    let m = LevyMeasure::PowerTail { amplitude: 1.0, alpha: 1.0 };
    let kappa = TruncationLevel::new(0.5).unwrap();
    let expected = m.tail_mass(TruncationLevel::new(1.0).unwrap()).unwrap() / m.tail_mass(kappa).unwrap();
    assert_eq!(expected, 0.5);
    let sampler = TailSampler::new(&m, kappa).unwrap();
    let mut rng = substream(5, 0, 0);
    let n = 1_000_000;
    let mut above = 0usize;
    let mut sign_sum = 0.0;
    for _ in 0..n {
        let z = sampler.sample(&mut rng);
        above += (z.abs() > 1.0) as usize;
        sign_sum += z.signum();
    }
    let freq = above as f64 / n as f64;
    let se = (expected * (1.0 - expected) / n as f64).sqrt();
    assert!((freq - expected).abs() <= 3.0 * se, "{freq} vs {expected}");
    // symmetric law: sign has mean 0 and variance 1
    let sign_mean = sign_sum / n as f64;
    assert!(sign_mean.abs() <= 3.0 / (n as f64).sqrt(), "{sign_mean}");
}

#[test]
fn atom_law_is_degenerate() {
    let m = LevyMeasure::FinitePointMass { intensity: 3.0, location: 0.5 };
    let sampler = TailSampler::new(&m, TruncationLevel::new(0.1).unwrap()).unwrap();
    let mut rng = substream(1, 2, 3);
    assert!((0..10_000).all(|_| sampler.sample(&mut rng) == 0.5));
}

fn any_measure() -> impl Strategy<Value = LevyMeasure> {
    prop_oneof![
        (0.1..5.0f64, -2.0..2.0f64).prop_map(|(intensity, location)| LevyMeasure::FinitePointMass { intensity, location }),
        (0.1..5.0f64, -1.0..1.0f64, 0.05..1.0f64)
            .prop_map(|(intensity, mean, std)| LevyMeasure::FiniteGaussianJumps { intensity, mean, std }),
        (0.1..3.0f64, 0.1..1.9f64).prop_map(|(amplitude, alpha)| LevyMeasure::PowerTail { amplitude, alpha }),
    ]
}

proptest! {
    #[test]
    fn functionals_are_monotone_in_kappa(m in any_measure(), a in 0.01..3.0f64, b in 0.01..3.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (k1, k2) = (TruncationLevel::new(lo).unwrap(), TruncationLevel::new(hi).unwrap());
        let slack = 1e-12;
        prop_assert!(m.tail_mass(k1).unwrap() >= m.tail_mass(k2).unwrap() * (1.0 - slack));
        prop_assert!(m.small_jump_second_moment(k1) <= m.small_jump_second_moment(k2) * (1.0 + slack) + slack);
    }

    #[test]
    fn draws_lie_strictly_above_kappa(m in any_measure(), k in 0.01..1.5f64, seed: u64) {
        let kappa = TruncationLevel::new(k).unwrap();
        if m.tail_mass(kappa).unwrap() > 0.0 {
            let sampler = TailSampler::new(&m, kappa).unwrap();
            let mut rng = substream(seed, 0, 0);
            for _ in 0..200 {
                let z = sampler.sample(&mut rng);
                prop_assert!(z.abs() > k, "draw {} at kappa {}", z, k);
            }
        }
    }
}
