//! Independent baselines: Black–Scholes formulas, direct Monte Carlo of
//! discounted payoffs, finite-difference deltas and nested conditional
//! expectations. None of these touch the chaos machinery.

use serde::Serialize;
use libm::erfc;

use crate::brownian::{union_points, GridView, SeedSpec, StreamLabel};
use crate::chaos::accumulate;
use crate::error::{Error, Result};
use crate::problems::Problem;

/// A Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl OracleEstimate {
    fn from_sums(sum: f64, sum_sq: f64, samples: usize) -> Self {
        let n = samples as f64;
        let mean = sum / n;
        let var = if samples > 1 {
            ((sum_sq - sum * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            stderr: (var / n).sqrt(),
            samples,
        }
    }
}

/// Standard normal CDF through the musl `erfc` port (error within a few ulp,
/// far below 1e-12 absolute), which keeps relative accuracy in the tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn d1_d2(s0: f64, strike: f64, r: f64, vol: f64, horizon: f64) -> (f64, f64) {
    let sd = vol * horizon.sqrt();
    let d1 = ((s0 / strike).ln() + (r + 0.5 * vol * vol) * horizon) / sd;
    (d1, d1 - sd)
}

/// Black–Scholes call price.
pub fn bs_call_price(s0: f64, strike: f64, r: f64, vol: f64, horizon: f64) -> f64 {
    if strike.is_infinite() {
        return 0.0;
    }
    let (d1, d2) = d1_d2(s0, strike, r, vol, horizon);
    s0 * normal_cdf(d1) - strike * (-r * horizon).exp() * normal_cdf(d2)
}

/// `∂C/∂S_0 = Φ(d_1)`.
pub fn bs_call_delta(s0: f64, strike: f64, r: f64, vol: f64, horizon: f64) -> f64 {
    normal_cdf(d1_d2(s0, strike, r, vol, horizon).0)
}

/// Sampling grid for the direct estimators: 0, the monitoring times and `T`.
fn oracle_points(problem: &Problem) -> Vec<f64> {
    union_points(&[0.0, problem.horizon()], &problem.terminal.monitoring_times())
}

fn discount(problem: &Problem) -> Result<f64> {
    let r = problem.driver.discount_rate().ok_or_else(|| {
        Error::Unsupported("direct Monte Carlo pricing needs a zero or linear driver".into())
    })?;
    Ok((-r * problem.horizon()).exp())
}

/// `e^{-rT} E[ξ]` by direct simulation, with asset paths driven by the
/// model drift as configured.
pub fn mc_price(problem: &Problem, samples: usize, seed: u64) -> Result<OracleEstimate> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let disc = discount(problem)?;
    let points = oracle_points(problem);
    let bound = problem.terminal.bind(&points)?;
    let dim = problem.dim();
    let view = GridView::new(&points);
    let seed = SeedSpec::new(seed);
    let cells = points.len() - 1;
    let sums = accumulate(
        samples,
        2,
        || (vec![0.0; dim * cells], vec![0.0; dim * points.len()]),
        |(row, values), n, acc| {
            seed.normals(StreamLabel::oracle(0), n as u64).fill(row);
            view.path_values(row, dim, values);
            let x = disc * bound.eval(values);
            acc[0] += x;
            acc[1] += x * x;
            Ok(())
        },
    )?;
    Ok(OracleEstimate::from_sums(sums[0], sums[1], samples))
}

/// `Z_0` through central differences in the initial prices with common random
/// numbers: `Z^γ = Σ_j ∂Y_0/∂S_0^j Σ_jγ S_0^j`. `bump` is relative to each spot.
pub fn mc_delta(problem: &Problem, samples: usize, bump: f64, seed: u64) -> Result<Vec<OracleEstimate>> {
    if samples == 0 || !(bump > 0.0) {
        return Err(Error::InvalidParameter("need samples and a positive bump".into()));
    }
    let model = problem
        .model()
        .ok_or_else(|| Error::Unsupported("delta baseline needs a market model".into()))?;
    let disc = discount(problem)?;
    let points = oracle_points(problem);
    let bound = problem.terminal.bind(&points)?;
    let dim = problem.dim();
    let view = GridView::new(&points);
    let seed = SeedSpec::new(seed);
    let cells = points.len() - 1;
    let s0 = model.s0.clone();
    let sigma = model.sigma().clone();
    let sums = accumulate(
        samples,
        2 * dim,
        || {
            (
                vec![0.0; dim * cells],
                vec![0.0; dim * points.len()],
                s0.clone(),
                vec![0.0; dim],
            )
        },
        |(row, values, spot, grad), n, acc| {
            seed.normals(StreamLabel::oracle(1), n as u64).fill(row);
            view.path_values(row, dim, values);
            for j in 0..dim {
                let h = bump * s0[j];
                spot[j] = s0[j] + h;
                let up = bound.eval_with_spot(values, spot);
                spot[j] = s0[j] - h;
                let down = bound.eval_with_spot(values, spot);
                spot[j] = s0[j];
                grad[j] = disc * (up - down) / (2.0 * h);
            }
            for g in 0..dim {
                let z: f64 = (0..dim).map(|j| grad[j] * sigma[(j, g)] * s0[j]).sum();
                acc[g] += z;
                acc[dim + g] += z * z;
            }
            Ok(())
        },
    )?;
    Ok((0..dim)
        .map(|g| OracleEstimate::from_sums(sums[g], sums[dim + g], samples))
        .collect())
}

/// `E_t[F]` for one frozen past by resampling the future.
///
/// `points` is a grid containing `t`; `past` holds the path values at the
/// points `<= t` (`l * k_t + k`). `functional` receives the full path values
/// on `points` (`l * points.len() + k`).
pub fn nested_ce(
    points: &[f64],
    t: f64,
    past: &[f64],
    dim: usize,
    inner: usize,
    seed: u64,
    outer: u64,
    functional: impl Fn(&[f64]) -> f64 + Sync,
) -> Result<OracleEstimate> {
    let kt = points
        .iter()
        .position(|&s| s == t)
        .ok_or(Error::NotOnGrid(t))?;
    if past.len() != dim * (kt + 1) || inner == 0 {
        return Err(Error::InvalidParameter("frozen past has the wrong shape".into()));
    }
    let npts = points.len();
    let future = npts - 1 - kt;
    let seed = SeedSpec::new(seed);
    let sums = accumulate(
        inner,
        2,
        || (vec![0.0; dim * future.max(1)], vec![0.0; dim * npts]),
        |(incs, values), n, acc| {
            seed.normals(StreamLabel::oracle(2 + outer), n as u64).fill(&mut incs[..dim * future]);
            for l in 0..dim {
                values[l * npts..l * npts + kt + 1].copy_from_slice(&past[l * (kt + 1)..(l + 1) * (kt + 1)]);
                for k in kt + 1..npts {
                    let dt = points[k] - points[k - 1];
                    values[l * npts + k] = values[l * npts + k - 1] + dt.sqrt() * incs[l * future + k - kt - 1];
                }
            }
            let x = functional(values);
            acc[0] += x;
            acc[1] += x * x;
            Ok(())
        },
    )?;
    Ok(OracleEstimate::from_sums(sums[0], sums[1], inner))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{MarketModel, Payoff, TerminalCondition, Driver};
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert_abs_diff_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(-8.0), 6.22096057427178e-16, epsilon = 1e-28);
    }

    #[test]
    fn bs_limits() {
        let fwd = 1.0 - 0.9 * (-0.01f64).exp();
        assert_abs_diff_eq!(bs_call_price(1.0, 0.9, 0.01, 1e-12, 1.0), fwd, epsilon = 1e-12);
        assert_eq!(bs_call_price(1.0, f64::INFINITY, 0.01, 0.2, 1.0), 0.0);
        assert!(bs_call_price(1.0, 1e6, 0.01, 0.2, 1.0) < 1e-300);
    }

    #[test]
    fn bs_reference_value() {
        // d1 = (ln(1/0.9) + 0.03) / 0.2, d2 = d1 - 0.2, both by hand.
        let d1 = ((1.0f64 / 0.9).ln() + 0.03) / 0.2;
        let d2 = d1 - 0.2;
        assert_abs_diff_eq!(d1, 0.6768025782891316, epsilon = 1e-15);
        let want = normal_cdf(d1) - 0.9 * (-0.01f64).exp() * normal_cdf(d2);
        let got = bs_call_price(1.0, 0.9, 0.01, 0.2, 1.0);
        assert_abs_diff_eq!(got, want, epsilon = 1e-15);
        // Reference from an independent normal CDF implementation.
        assert_abs_diff_eq!(got, 0.1419292021329489, epsilon = 1e-12);
        // Put-call parity through the identity Φ(x) + Φ(-x) = 1.
        let put = 0.9 * (-0.01f64).exp() * normal_cdf(-d2) - normal_cdf(-d1);
        assert_abs_diff_eq!(got - put, 1.0 - 0.9 * (-0.01f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn mc_price_of_constant_is_exact() {
        let mut p = Problem::constant(2.0, 1.0, 1).unwrap();
        p.driver = Driver::linear(0.05);
        let est = mc_price(&p, 1000, 1).unwrap();
        assert_abs_diff_eq!(est.value, 2.0 * (-0.05f64).exp(), epsilon = 1e-12);
        assert!(est.stderr < 1e-12);
    }

    #[test]
    fn mc_vanilla_matches_black_scholes() {
        let p = Problem::vanilla_call(1.0, 0.9, 0.01, 0.2, 1.0).unwrap();
        let bs = bs_call_price(1.0, 0.9, 0.01, 0.2, 1.0);
        let est = mc_price(&p, 200_000, 3).unwrap();
        assert!((est.value - bs).abs() <= 4.0 * est.stderr, "{est:?} vs {bs}");
        let z = mc_delta(&p, 200_000, 0.01, 4).unwrap();
        let want = 0.2 * bs_call_delta(1.0, 0.9, 0.01, 0.2, 1.0);
        // Bump bias of a 1% central difference is far below the noise here.
        assert!((z[0].value - want).abs() <= 4.0 * z[0].stderr + 1e-4, "{:?} vs {want}", z[0]);
    }

    #[test]
    fn delta_of_deterministic_forward() {
        // σ = 0 and ξ = (S_T - 0)_+ = S_0 e^{μT}; Z = ∂Y/∂S_0 · σ S_0 = 0.
        let model = MarketModel::single(1.0, 0.03, 0.0, 0.03).unwrap();
        let t = TerminalCondition {
            payoff: Payoff::VanillaCall { strike: 0.0 },
            horizon: 1.0,
            dim: 1,
            model: Some(model),
        };
        let p = Problem::new("fwd", Driver::linear(0.03), t).unwrap();
        assert_abs_diff_eq!(mc_price(&p, 10, 0).unwrap().value, 1.0, epsilon = 1e-14);
        assert_eq!(mc_delta(&p, 10, 0.01, 0).unwrap()[0].value, 0.0);
    }

    #[test]
    fn nested_examples() {
        let pts = [0.0, 0.5, 1.0];
        let past = [0.0, 0.7];
        let bt = nested_ce(&pts, 0.5, &past, 1, 20_000, 5, 0, |v| v[2]).unwrap();
        assert!((bt.value - 0.7).abs() <= 4.0 * bt.stderr);
        let sq = nested_ce(&pts, 0.5, &past, 1, 20_000, 5, 1, |v| v[2] * v[2]).unwrap();
        assert!((sq.value - (0.49 + 0.5)).abs() <= 4.0 * sq.stderr);
        let c = nested_ce(&pts, 0.5, &past, 1, 100, 5, 2, |_| 3.0).unwrap();
        assert_eq!(c.value, 3.0);
        // At T nothing is resampled.
        let at_end = nested_ce(&pts, 1.0, &[0.0, 0.7, -0.2], 1, 10, 5, 3, |v| v[2]).unwrap();
        assert_abs_diff_eq!(at_end.value, -0.2, epsilon = 1e-15);
        assert!(at_end.stderr < 1e-7);
    }

    #[test]
    fn oracles_are_seed_deterministic() {
        let p = Problem::example1();
        assert_eq!(mc_price(&p, 5000, 9).unwrap(), mc_price(&p, 5000, 9).unwrap());
        assert_ne!(mc_price(&p, 5000, 9).unwrap(), mc_price(&p, 5000, 10).unwrap());
    }
}
