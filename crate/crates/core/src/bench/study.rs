use super::oracles::{oracle_values, FdSettings};
use super::problems::{BenchmarkProblem, ProblemKey};
use crate::error::{Error, Result};
use crate::levy::TruncationLevel;
use crate::scheme::{self, KappaRule, SchemeConfig, Solution, SpatialDomain};

/// How the sample budget and spatial step scale along an h-ladder:
/// M(h) = base_samples·(base_h/h)^sample_exponent and dx(h) = base_dx·(h/base_h)^dx_exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyTemplate {
    pub base_h: f64,
    pub base_samples: usize,
    pub sample_exponent: f64,
    pub base_dx: f64,
    pub dx_exponent: f64,
    pub padding: f64,
    pub kappa_rule: KappaRule,
    pub monotonized: bool,
    pub seed: u64,
    /// Finite-difference resolution relative to the scheme (dx/refine, h/refine).
    pub fd_refine: f64,
}

impl Default for StudyTemplate {
    fn default() -> Self {
        Self {
            base_h: 0.1,
            base_samples: 1000,
            sample_exponent: 2.0,
            base_dx: 0.08,
            dx_exponent: 0.75,
            padding: 3.0,
            kappa_rule: KappaRule::Convergence,
            monotonized: false,
            seed: 1,
            fd_refine: 10.0,
        }
    }
}

impl StudyTemplate {
    pub fn samples(&self, h: f64) -> usize {
        ((self.base_samples as f64) * (self.base_h / h).powf(self.sample_exponent)).round().max(1.0) as usize
    }

    pub fn dx(&self, h: f64) -> f64 {
        self.base_dx * (h / self.base_h).powf(self.dx_exponent)
    }
}

/// Number of steps n with n·h = T, rejecting ladders that do not divide the horizon.
pub fn steps_for(horizon: f64, h: f64) -> Result<usize> {
    let n = (horizon / h).round();
    if n < 1.0 || (n * h - horizon).abs() > 1e-9 * horizon {
        return Err(Error::Config(format!("time step {h} does not divide the horizon {horizon}")));
    }
    Ok(n as usize)
}

pub fn config_for(prob: &BenchmarkProblem, h: f64, samples: usize, dx: f64, padding: f64) -> Result<SchemeConfig> {
    let domain = SpatialDomain {
        interior_lower: prob.interior_lower.clone(),
        interior_upper: prob.interior_upper.clone(),
        padding,
        dx,
    };
    Ok(SchemeConfig::new(prob.horizon, steps_for(prob.horizon, h)?, domain, samples))
}

pub fn solve(prob: &BenchmarkProblem, cfg: &SchemeConfig) -> Result<Solution> {
    scheme::solve_backward(&prob.problem, &prob.measure, cfg, |x| prob.terminal(x))
}

/// Interior nodes at t = 0 with scheme value, oracle value and one-step standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeComparison {
    pub x: Vec<f64>,
    pub scheme: f64,
    pub oracle: f64,
    pub std_error: f64,
}

pub fn compare_at_start(prob: &BenchmarkProblem, cfg: &SchemeConfig, sol: &Solution, kappa: TruncationLevel, fd: FdSettings) -> Result<Vec<NodeComparison>> {
    let grid = &sol.surface.grid;
    let interior: Vec<(usize, Vec<f64>)> =
        grid.nodes().into_iter().enumerate().filter(|(_, x)| cfg.domain.in_interior(x)).collect();
    let xs: Vec<Vec<f64>> = interior.iter().map(|(_, x)| x.clone()).collect();
    let oracle = oracle_values(prob, kappa, 0.0, &xs, fd)?;
    Ok(interior
        .into_iter()
        .zip(oracle)
        .map(|((j, x), o)| NodeComparison { x, scheme: sol.surface.values[0][j], oracle: o, std_error: sol.std_errors[j] })
        .collect())
}

pub fn max_error(rows: &[NodeComparison]) -> f64 {
    rows.iter().map(|r| (r.scheme - r.oracle).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub h: f64,
    pub n: usize,
    pub samples: usize,
    pub dx: f64,
    pub kappa: f64,
    pub theta_kappa: f64,
    pub error: f64,
    /// √n times the largest one-step standard error at t = 0, a rough scale of accumulated noise.
    pub noise_floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub key: ProblemKey,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of log(error) against log(h); `None` when skipped.
    pub slope: Option<f64>,
}

impl RateReport {
    pub fn errors_strictly_decrease(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error < w[0].error)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "h,kappa,theta_kappa,error")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.h, r.kappa, r.theta_kappa, r.error)?;
        }
        Ok(())
    }
}

/// Slope of the least-squares line through (ln x, ln y).
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).0
}

/// Ordinary least squares y ≈ slope·x + intercept, returning (slope, intercept, R²).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

/// Solves the problem for every h in the ladder and records the worst interior error at t = 0.
pub fn run_convergence_study(prob: &BenchmarkProblem, ladder: &[f64], template: &StudyTemplate) -> Result<RateReport> {
    if ladder.is_empty() {
        return Err(Error::Config("h-ladder is empty".into()));
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("h-ladder must be strictly decreasing".into()));
    }
    let mut rows = Vec::with_capacity(ladder.len());
    for &h in ladder {
        let dx = template.dx(h);
        let mut cfg = config_for(prob, h, template.samples(h), dx, template.padding)?;
        cfg.kappa_rule = template.kappa_rule;
        cfg.monotonized = template.monotonized;
        cfg.seed = template.seed;
        let sol = solve(prob, &cfg)?;
        if template.kappa_rule == KappaRule::Convergence && sol.theta.value > h.powf(-0.5) {
            return Err(Error::Contract(format!(
                "theta_kappa = {} exceeds h^(-1/2) = {} at h = {h}",
                sol.theta.value,
                h.powf(-0.5)
            )));
        }
        let fd = FdSettings { dx: dx / template.fd_refine, dt: h / template.fd_refine, ..FdSettings::default() };
        let cmp = compare_at_start(prob, &cfg, &sol, sol.kappa, fd)?;
        let worst_se = cmp.iter().map(|c| c.std_error).fold(0.0, f64::max);
        rows.push(RateRow {
            h,
            n: cfg.n,
            samples: cfg.samples,
            dx,
            kappa: sol.kappa.value(),
            theta_kappa: sol.theta.value,
            error: max_error(&cmp),
            noise_floor: worst_se * (cfg.n as f64).sqrt(),
        });
    }
    let slope = if prob.f_is_zero() || rows.len() < 2 {
        None
    } else {
        let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let es: Vec<f64> = rows.iter().map(|r| r.error).collect();
        Some(loglog_slope(&hs, &es))
    };
    Ok(RateReport { key: prob.key(), rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let (s, i, r2) = linear_fit(&xs, &ys);
        assert!((s - 2.0).abs() < 1e-12 && (i + 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        let hs = [0.1, 0.05, 0.025];
        let es: Vec<f64> = hs.iter().map(|h: &f64| 3.0 * h.sqrt()).collect();
        assert!((loglog_slope(&hs, &es) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ladder_must_divide_horizon() {
        assert_eq!(steps_for(1.0, 0.02).unwrap(), 50);
        assert!(steps_for(1.0, 0.03).is_err());
    }
}
