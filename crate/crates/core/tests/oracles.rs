use levy_scheme::bench::oracles::{oracle_values, toy_fd_solve, FdSettings};
use levy_scheme::bench::problems::{BenchmarkProblem, MertonParams, ProblemKey, ProblemParams, ToyParams};
use levy_scheme::levy::{LevyMeasure, TruncationLevel};

fn toy_at(settings: FdSettings, xs: &[f64]) -> Vec<f64> {
    let m = BenchmarkProblem::default_measure(ProblemKey::ConcaveHjbToy);
    let (grid, values) =
        toy_fd_solve(&ToyParams::default(), &m, TruncationLevel::ZERO, 1.0, 0.0, |x| (-x * x).exp(), settings).unwrap();
    let dx = grid[1] - grid[0];
    xs.iter()
        .map(|&x| {
            let i = ((x - grid[0]) / dx).round() as usize;
            assert!((grid[i] - x).abs() < 1e-9, "{x} is not a node");
            values[i]
        })
        .collect()
}

#[test]
fn toy_finite_differences_are_richardson_consistent() {
    let xs = [-0.8, -0.4, 0.0, 0.4, 0.8];
    let base = FdSettings { dx: 0.04, dt: 0.016, half_width: 7.0, jump_nodes: 161 };
    let levels: Vec<Vec<f64>> = (0..3)
        .map(|r| {
            let f = 2f64.powi(r);
            toy_at(FdSettings { dx: base.dx / f, dt: base.dt / (f * f), ..base }, &xs)
        })
        .collect();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let coarse = diff(&levels[0], &levels[1]);
    let fine = diff(&levels[1], &levels[2]);
    let ratio = coarse / fine;
    assert!((3.0..=5.0).contains(&ratio), "differences {coarse} and {fine}, ratio {ratio}");
}

#[test]
fn merton_without_intensity_is_the_diffusion_value() {
    let params = MertonParams::default();
    let with = BenchmarkProblem::new(
        ProblemParams::MertonLinear(params.clone()),
        LevyMeasure::gaussian_jumps(0.0, -0.1, 0.2).unwrap(),
        1.0,
    )
    .unwrap();
    let xs: Vec<Vec<f64>> = [-0.8, 0.0, 0.3].iter().map(|&x| vec![x]).collect();
    let got = oracle_values(&with, TruncationLevel::ZERO, 0.0, &xs, FdSettings::default()).unwrap();
    // E[exp(−w(x + μ + σW − c)²/2)] with W standard normal
    let (w, var) = (params.bump_width, params.sigma * params.sigma);
    for (x, v) in xs.iter().zip(got) {
        let m = x[0] + params.mu - params.bump_center;
        let exact = (-0.5 * w * m * m / (1.0 + w * var)).exp() / (1.0 + w * var).sqrt();
        assert!((v - exact).abs() < 1e-14, "{v} vs {exact}");
    }
}

#[test]
fn linear_symbol_without_jumps_is_the_gaussian_characteristic_function() {
    let params = levy_scheme::bench::problems::LinearSymbolParams {
        mu: 0.25,
        sigma: 1.0,
        eta_scale: 1.0,
        frequency: 1.0,
        control_a: 0.0,
        control_b: 0.0,
        control_jump_scale: None,
    };
    let prob = BenchmarkProblem::new(ProblemParams::LinearSymbol(params), LevyMeasure::point_mass(0.0, 1.0).unwrap(), 1.0).unwrap();
    let xs: Vec<Vec<f64>> = [-1.0, 0.0, 0.4].iter().map(|&x| vec![x]).collect();
    let got = oracle_values(&prob, TruncationLevel::ZERO, 0.0, &xs, FdSettings::default()).unwrap();
    for (x, v) in xs.iter().zip(got) {
        let exact = (-0.5f64).exp() * (x[0] + 0.25).cos();
        assert!((v - exact).abs() < 1e-14);
    }
}
