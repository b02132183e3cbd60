//! Drivers, terminal conditions and market models of the test problems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::rational_point;

/// How the borrowing term of the rate-spread driver pairs with `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorrowingForm {
    /// `1ᵀ Σ⁻¹ z`.
    #[default]
    AsStated,
    /// `1ᵀ Σ⁻ᵀ z`, the total amount held in the risky assets when
    /// `Z = Σᵀ diag(S) H`.
    Holdings,
}

/// Deterministic generator `f(t, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Driver {
    Zero,
    /// `f = -r y`.
    Linear { r: f64 },
    /// `f = cos(y + z_1)`.
    Cos,
    /// `f = -r y - θ·z + (R - r)(y - w·z)_-`.
    Borrowing {
        r: f64,
        borrow_rate: f64,
        theta: Vec<f64>,
        weights: Vec<f64>,
    },
}

impl Driver {
    pub fn linear(r: f64) -> Self {
        Driver::Linear { r }
    }

    pub fn cos() -> Self {
        Driver::Cos
    }

    pub fn borrowing(model: &MarketModel, form: BorrowingForm) -> Result<Self> {
        let theta = model.theta()?;
        let ones = DVector::from_element(model.dim(), 1.0);
        let lu = model.sigma.clone().lu();
        let weights = match form {
            BorrowingForm::AsStated => model.sigma.transpose().lu().solve(&ones),
            BorrowingForm::Holdings => lu.solve(&ones),
        }
        .ok_or_else(|| Error::InvalidParameter("volatility matrix is singular".into()))?;
        Ok(Driver::Borrowing {
            r: model.r,
            borrow_rate: model.borrow_rate,
            theta,
            weights: weights.iter().copied().collect(),
        })
    }

    #[inline]
    pub fn eval(&self, _t: f64, y: f64, z: &[f64]) -> f64 {
        match self {
            Driver::Zero => 0.0,
            Driver::Linear { r } => -r * y,
            Driver::Cos => (y + z[0]).cos(),
            Driver::Borrowing {
                r,
                borrow_rate,
                theta,
                weights,
            } => {
                let tz: f64 = theta.iter().zip(z).map(|(a, b)| a * b).sum();
                let wz: f64 = weights.iter().zip(z).map(|(a, b)| a * b).sum();
                let short = (wz - y).max(0.0);
                -r * y - tz + (borrow_rate - r) * short
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Driver::Zero)
    }

    /// Lipschitz constant in `(y, z)` for the Euclidean norm.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Driver::Zero => 0.0,
            Driver::Linear { r } => r.abs(),
            Driver::Cos => 2f64.sqrt(),
            Driver::Borrowing {
                r,
                borrow_rate,
                theta,
                weights,
            } => {
                let spread = (borrow_rate - r).abs();
                let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                r.abs() + spread + norm(theta) + spread * norm(weights)
            }
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, Driver::Zero | Driver::Cos)
    }

    /// Discount rate when the driver is `-r y`, for the pricing baselines.
    pub fn discount_rate(&self) -> Option<f64> {
        match self {
            Driver::Zero => Some(0.0),
            Driver::Linear { r } => Some(*r),
            _ => None,
        }
    }
}

/// Black–Scholes market in `d` assets: `S_t = S_0 ⊙ exp((μ - diag(ΣΣᵀ)/2) t + Σ B_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    pub s0: Vec<f64>,
    pub mu: Vec<f64>,
    pub vols: Vec<f64>,
    pub r: f64,
    pub borrow_rate: f64,
    correlation: DMatrix<f64>,
    sigma: DMatrix<f64>,
    log_drift: Vec<f64>,
}

impl MarketModel {
    /// `Σ_ij = σ_i L_ij` with `C = L Lᵀ`; `correlation` is row-major `d × d`.
    pub fn new(
        s0: Vec<f64>,
        mu: Vec<f64>,
        vols: Vec<f64>,
        correlation: &[f64],
        r: f64,
        borrow_rate: f64,
    ) -> Result<Self> {
        let d = s0.len();
        if d == 0 || mu.len() != d || vols.len() != d || correlation.len() != d * d {
            return Err(Error::InvalidParameter("market model dimensions disagree".into()));
        }
        if s0.iter().any(|&s| !(s > 0.0)) || vols.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidParameter("spots must be positive and volatilities non-negative".into()));
        }
        let corr = DMatrix::from_row_slice(d, d, correlation);
        if (&corr - corr.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidParameter("correlation matrix is not symmetric".into()));
        }
        let chol = corr
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("correlation matrix is not positive definite".into()))?;
        let l = chol.l();
        let sigma = DMatrix::from_fn(d, d, |i, j| vols[i] * l[(i, j)]);
        let log_drift = (0..d)
            .map(|i| mu[i] - 0.5 * sigma.row(i).norm_squared())
            .collect();
        Ok(Self {
            s0,
            mu,
            vols,
            r,
            borrow_rate,
            correlation: corr,
            sigma,
            log_drift,
        })
    }

    /// One asset with `μ`, `σ` and rate `r`.
    pub fn single(s0: f64, mu: f64, vol: f64, r: f64) -> Result<Self> {
        Self::new(vec![s0], vec![mu], vec![vol], &[1.0], r, r)
    }

    /// Row-major equicorrelation matrix with off-diagonal `rho`.
    pub fn equicorrelation(d: usize, rho: f64) -> Vec<f64> {
        (0..d * d)
            .map(|k| if k / d == k % d { 1.0 } else { rho })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.s0.len()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    /// `θ = Σ⁻¹ (μ - r 1)`.
    pub fn theta(&self) -> Result<Vec<f64>> {
        let rhs = DVector::from_iterator(self.dim(), self.mu.iter().map(|m| m - self.r));
        self.sigma
            .clone()
            .lu()
            .solve(&rhs)
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::InvalidParameter("volatility matrix is singular".into()))
    }

    /// Price of asset `i` at time `t` given `B_t`, with spot `s0`.
    #[inline]
    pub fn price_with(&self, i: usize, s0: f64, t: f64, b: impl Fn(usize) -> f64) -> f64 {
        let mut x = self.log_drift[i] * t;
        for k in 0..=i {
            x += self.sigma[(i, k)] * b(k);
        }
        s0 * x.exp()
    }

    #[inline]
    pub fn price(&self, i: usize, t: f64, b: impl Fn(usize) -> f64) -> f64 {
        self.price_with(i, self.s0[i], t, b)
    }

    /// Hedging strategy `H = (Σᵀ diag(S))⁻¹ Z`.
    pub fn hedge(&self, spots: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let a = DMatrix::from_fn(d, d, |i, j| self.sigma[(j, i)] * spots[j]);
        a.lu()
            .solve(&DVector::from_column_slice(z))
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::InvalidParameter("hedge system is singular".into()))
    }
}

/// Prices on a time table from Brownian values laid out `l * times.len() + k`;
/// output is laid out `i * times.len() + k`.
pub fn gbm_path(model: &MarketModel, times: &[f64], brownian: &[f64]) -> Vec<f64> {
    let n = times.len();
    let d = model.dim();
    let mut out = vec![0.0; d * n];
    for i in 0..d {
        for (k, &t) in times.iter().enumerate() {
            out[i * n + k] = model.price(i, t, |l| brownian[l * n + k]);
        }
    }
    out
}

fn position(times: &[f64], t: f64) -> Result<usize> {
    let scale = times.last().copied().unwrap_or(1.0).abs().max(1.0);
    times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-12 * scale)
        .ok_or(Error::MissingMonitoringTime(t))
}

/// `(S_T - K)_+` if `S` stays at or above `barrier` at every monitoring time.
/// `prices` holds one asset on `times`, whose last entry is `T`.
pub fn barrier_call_payoff(
    strike: f64,
    barrier: f64,
    monitoring: &[f64],
    times: &[f64],
    prices: &[f64],
) -> Result<f64> {
    for &t in monitoring {
        if prices[position(times, t)?] < barrier {
            return Ok(0.0);
        }
    }
    Ok((prices[times.len() - 1] - strike).max(0.0))
}

/// `max_k |B_{τ_k}|` over the monitoring times.
pub fn running_max_abs_payoff(monitoring: &[f64], times: &[f64], values: &[f64]) -> Result<f64> {
    monitoring
        .iter()
        .try_fold(0.0f64, |acc, &t| Ok(acc.max(values[position(times, t)?].abs())))
}

/// `(max_j S_T^j - K)_+`.
pub fn max_call_payoff(strike: f64, terminal_prices: &[f64]) -> f64 {
    let best = terminal_prices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (best - strike).max(0.0)
}

/// Payoff families.
#[derive(Debug, Clone, PartialEq)]
pub enum Payoff {
    Constant(f64),
    /// `B^l_T`.
    Brownian { coord: usize },
    /// `(B^1_T)^2`.
    BrownianSquared,
    RunningMaxAbs { monitoring: Vec<f64> },
    /// `(S^1_T - K)_+`.
    VanillaCall { strike: f64 },
    BarrierCall { strike: f64, barrier: f64, monitoring: Vec<f64> },
    MaxCall { strike: f64 },
}

/// Terminal condition `ξ`, a functional of the Brownian path.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCondition {
    pub payoff: Payoff,
    pub horizon: f64,
    pub dim: usize,
    pub model: Option<MarketModel>,
}

impl TerminalCondition {
    /// Times besides `T` at which `ξ` reads the path.
    pub fn monitoring_times(&self) -> Vec<f64> {
        match &self.payoff {
            Payoff::RunningMaxAbs { monitoring } | Payoff::BarrierCall { monitoring, .. } => monitoring.clone(),
            _ => Vec::new(),
        }
    }

    pub fn needs_model(&self) -> bool {
        matches!(
            self.payoff,
            Payoff::VanillaCall { .. } | Payoff::BarrierCall { .. } | Payoff::MaxCall { .. }
        )
    }

    /// Resolves the monitoring times against a sampling grid ending at `T`.
    pub fn bind(&self, points: &[f64]) -> Result<BoundTerminal> {
        let last = *points.last().ok_or_else(|| Error::Grid("empty sampling grid".into()))?;
        if (last - self.horizon).abs() > 1e-12 * self.horizon.max(1.0) {
            return Err(Error::MissingMonitoringTime(self.horizon));
        }
        if self.needs_model() && self.model.is_none() {
            return Err(Error::InvalidParameter("payoff needs a market model".into()));
        }
        let monitoring = self.monitoring_times();
        let positions = monitoring
            .iter()
            .map(|&t| position(points, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundTerminal {
            terminal: self.clone(),
            times: positions.iter().map(|&k| points[k]).collect(),
            positions,
            points: points.len(),
        })
    }
}

/// A terminal condition bound to a sampling grid.
#[derive(Debug, Clone)]
pub struct BoundTerminal {
    terminal: TerminalCondition,
    positions: Vec<usize>,
    times: Vec<f64>,
    points: usize,
}

impl BoundTerminal {
    /// `ξ` from path values laid out `l * points + k`.
    pub fn eval(&self, values: &[f64]) -> f64 {
        let s0 = self.terminal.model.as_ref().map(|m| m.s0.as_slice()).unwrap_or(&[]);
        self.eval_with_spot(values, s0)
    }

    /// As [`BoundTerminal::eval`] with the initial prices replaced by `spot`.
    pub fn eval_with_spot(&self, values: &[f64], spot: &[f64]) -> f64 {
        let n = self.points;
        let end = n - 1;
        let horizon = self.terminal.horizon;
        let at = |l: usize, k: usize| values[l * n + k];
        match &self.terminal.payoff {
            Payoff::Constant(c) => *c,
            Payoff::Brownian { coord } => at(*coord, end),
            Payoff::BrownianSquared => at(0, end).powi(2),
            Payoff::RunningMaxAbs { .. } => self.positions.iter().fold(0.0f64, |acc, &k| acc.max(at(0, k).abs())),
            Payoff::VanillaCall { strike } => {
                let m = self.terminal.model.as_ref().expect("checked at bind");
                (m.price_with(0, spot[0], horizon, |l| at(l, end)) - strike).max(0.0)
            }
            Payoff::BarrierCall { strike, barrier, .. } => {
                let m = self.terminal.model.as_ref().expect("checked at bind");
                for (&k, &t) in self.positions.iter().zip(&self.times) {
                    if m.price_with(0, spot[0], t, |l| at(l, k)) < *barrier {
                        return 0.0;
                    }
                }
                (m.price_with(0, spot[0], horizon, |l| at(l, end)) - strike).max(0.0)
            }
            Payoff::MaxCall { strike } => {
                let m = self.terminal.model.as_ref().expect("checked at bind");
                let best = (0..m.dim())
                    .map(|i| m.price_with(i, spot[i], horizon, |l| at(l, end)))
                    .fold(f64::NEG_INFINITY, f64::max);
                (best - strike).max(0.0)
            }
        }
    }

    pub fn points(&self) -> usize {
        self.points
    }
}

/// Named problem catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemId {
    Example1,
    Example2,
    Example3,
    VanillaCall,
    BtSquared,
    Constant,
    Custom,
}

impl ProblemId {
    pub fn name(self) -> &'static str {
        match self {
            ProblemId::Example1 => "example1",
            ProblemId::Example2 => "example2",
            ProblemId::Example3 => "example3",
            ProblemId::VanillaCall => "vanilla_call",
            ProblemId::BtSquared => "bt_squared",
            ProblemId::Constant => "constant",
            ProblemId::Custom => "custom",
        }
    }
}

impl std::str::FromStr for ProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidParameter(format!("unknown problem '{s}'")))
    }
}

/// Driver choice for custom problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriverSpec {
    Zero,
    Linear { r: f64 },
    Cos,
}

/// Brownian payoff choice for custom problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PayoffSpec {
    Constant { value: f64 },
    Brownian { coord: usize },
    BrownianSquared,
    /// Monitoring at `kT/points` for `k = 0..=points`.
    RunningMaxAbs { points: usize },
}

/// Problem description accepted by configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    pub driver: DriverSpec,
    pub payoff: PayoffSpec,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default = "unit")]
    pub horizon: f64,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

/// A BSDE: driver, terminal condition, dimension and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub name: String,
    pub driver: Driver,
    pub terminal: TerminalCondition,
}

/// Times `kT/n` for `k = 0..=n`.
pub fn uniform_monitoring(horizon: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| rational_point(horizon, k, n)).collect()
}

impl Problem {
    pub fn new(name: impl Into<String>, driver: Driver, terminal: TerminalCondition) -> Result<Self> {
        if !(terminal.horizon > 0.0 && terminal.horizon.is_finite()) {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        if terminal.dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if let Some(m) = &terminal.model {
            if m.dim() != terminal.dim {
                return Err(Error::InvalidParameter("market and Brownian dimensions disagree".into()));
            }
        }
        if let Payoff::Brownian { coord } = terminal.payoff {
            if coord >= terminal.dim {
                return Err(Error::InvalidParameter(format!("coordinate {coord} out of range")));
            }
        }
        if let Driver::Borrowing { theta, .. } = &driver {
            if theta.len() != terminal.dim {
                return Err(Error::InvalidParameter("driver and Brownian dimensions disagree".into()));
            }
        }
        for t in terminal.monitoring_times() {
            if !(0.0..=terminal.horizon).contains(&t) {
                return Err(Error::InvalidParameter(format!("monitoring time {t} outside [0, T]")));
            }
        }
        Ok(Self {
            name: name.into(),
            driver,
            terminal,
        })
    }

    pub fn dim(&self) -> usize {
        self.terminal.dim
    }

    pub fn horizon(&self) -> f64 {
        self.terminal.horizon
    }

    pub fn model(&self) -> Option<&MarketModel> {
        self.terminal.model.as_ref()
    }

    /// Discrete down-and-out call under a linear driver; 1 asset.
    pub fn example1() -> Self {
        let model = MarketModel::single(1.0, 0.01, 0.2, 0.01).expect("valid model");
        let terminal = TerminalCondition {
            payoff: Payoff::BarrierCall {
                strike: 0.9,
                barrier: 0.85,
                monitoring: uniform_monitoring(1.0, 10),
            },
            horizon: 1.0,
            dim: 1,
            model: Some(model),
        };
        Self::new("example1", Driver::linear(0.01), terminal).expect("valid problem")
    }

    /// `ξ = max_k |B_{kT/10}|` with `f = cos(y + z)`.
    pub fn example2() -> Self {
        Self::running_max(1.0, 10)
    }

    /// `ξ = max_k |B_{kT/n}|` with `f = cos(y + z)`.
    pub fn running_max(horizon: f64, n: usize) -> Self {
        let terminal = TerminalCondition {
            payoff: Payoff::RunningMaxAbs {
                monitoring: uniform_monitoring(horizon, n),
            },
            horizon,
            dim: 1,
            model: None,
        };
        Self::new("example2", Driver::cos(), terminal).expect("valid problem")
    }

    /// The five-asset market of the max-call example.
    pub fn example3_market() -> MarketModel {
        MarketModel::new(
            vec![1.0; 5],
            vec![0.02, 0.01, 0.05, 0.03, 0.05],
            vec![0.2, 0.25, 0.18, 0.22, 0.5],
            &MarketModel::equicorrelation(5, 0.3),
            0.02,
            0.1,
        )
        .expect("valid model")
    }

    /// Call on the maximum of five assets with a borrowing spread.
    pub fn example3() -> Self {
        Self::example3_with(BorrowingForm::AsStated)
    }

    pub fn example3_with(form: BorrowingForm) -> Self {
        let model = Self::example3_market();
        let driver = Driver::borrowing(&model, form).expect("valid model");
        let terminal = TerminalCondition {
            payoff: Payoff::MaxCall { strike: 0.9 },
            horizon: 1.0,
            dim: 5,
            model: Some(model),
        };
        Self::new("example3", driver, terminal).expect("valid problem")
    }

    /// `(S_T - K)_+` under `f = -r y`, with `μ = r`.
    pub fn vanilla_call(s0: f64, strike: f64, r: f64, vol: f64, horizon: f64) -> Result<Self> {
        let model = MarketModel::single(s0, r, vol, r)?;
        let terminal = TerminalCondition {
            payoff: Payoff::VanillaCall { strike },
            horizon,
            dim: 1,
            model: Some(model),
        };
        Self::new("vanilla_call", Driver::linear(r), terminal)
    }

    /// `ξ = B_T^2`, `f = 0`.
    pub fn bt_squared(horizon: f64) -> Result<Self> {
        let terminal = TerminalCondition {
            payoff: Payoff::BrownianSquared,
            horizon,
            dim: 1,
            model: None,
        };
        Self::new("bt_squared", Driver::Zero, terminal)
    }

    /// `ξ = c`, `f = 0`.
    pub fn constant(c: f64, horizon: f64, dim: usize) -> Result<Self> {
        let terminal = TerminalCondition {
            payoff: Payoff::Constant(c),
            horizon,
            dim,
            model: None,
        };
        Self::new("constant", Driver::Zero, terminal)
    }

    pub fn custom(spec: &CustomSpec) -> Result<Self> {
        let driver = match spec.driver {
            DriverSpec::Zero => Driver::Zero,
            DriverSpec::Linear { r } => Driver::linear(r),
            DriverSpec::Cos => Driver::Cos,
        };
        let payoff = match &spec.payoff {
            PayoffSpec::Constant { value } => Payoff::Constant(*value),
            PayoffSpec::Brownian { coord } => Payoff::Brownian { coord: *coord },
            PayoffSpec::BrownianSquared => Payoff::BrownianSquared,
            PayoffSpec::RunningMaxAbs { points } => {
                if *points == 0 {
                    return Err(Error::InvalidParameter("running max needs at least one monitoring step".into()));
                }
                Payoff::RunningMaxAbs {
                    monitoring: uniform_monitoring(spec.horizon, *points),
                }
            }
        };
        let terminal = TerminalCondition {
            payoff,
            horizon: spec.horizon,
            dim: spec.dim,
            model: None,
        };
        Self::new("custom", driver, terminal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gbm_examples() {
        let flat = MarketModel::single(1.3, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(gbm_path(&flat, &[0.0, 0.5, 1.0], &[0.0, 0.4, -2.0]), vec![1.3; 3]);

        let m = MarketModel::single(1.0, 0.01, 0.2, 0.01).unwrap();
        let s = gbm_path(&m, &[0.0, 1.0], &[0.0, 0.0]);
        assert_abs_diff_eq!(s[1], (0.01f64 - 0.02).exp(), epsilon = 1e-15);
        let s = gbm_path(&m, &[1.0], &[1.0]);
        assert_abs_diff_eq!(s[0], (0.01f64 - 0.02 + 0.2).exp(), epsilon = 1e-15);
    }

    #[test]
    fn barrier_examples() {
        let mon = uniform_monitoring(1.0, 2);
        let times = [0.0, 0.5, 1.0];
        assert_eq!(barrier_call_payoff(0.9, 0.85, &mon, &times, &[1.0, 0.8, 1.2]).unwrap(), 0.0);
        assert_abs_diff_eq!(barrier_call_payoff(0.9, 0.85, &mon, &times, &[1.0; 3]).unwrap(), 0.1, epsilon = 1e-15);
        assert_eq!(barrier_call_payoff(0.9, 0.85, &mon, &times, &[1.0, 1.0, 0.85]).unwrap(), 0.0);
        assert_eq!(
            barrier_call_payoff(0.9, 0.85, &[0.25], &times, &[1.0; 3]),
            Err(Error::MissingMonitoringTime(0.25))
        );
    }

    #[test]
    fn running_max_examples() {
        let mon = [0.0, 0.5, 1.0];
        assert_eq!(running_max_abs_payoff(&mon, &mon, &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(running_max_abs_payoff(&mon, &mon, &[0.0, 0.6, 1.3]).unwrap(), 1.3);
        assert_eq!(running_max_abs_payoff(&mon, &mon, &[0.0, -2.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn max_call_examples() {
        assert_abs_diff_eq!(max_call_payoff(0.9, &[1.0; 5]), 0.1, epsilon = 1e-15);
        assert_eq!(max_call_payoff(0.9, &[0.5, 0.8]), 0.0);
        assert_abs_diff_eq!(max_call_payoff(0.9, &[0.5, 2.0, 0.1]), 1.1, epsilon = 1e-15);
    }

    #[test]
    fn driver_examples() {
        assert_abs_diff_eq!(Driver::linear(0.01).eval(0.0, 2.0, &[0.0]), -0.02);
        assert_eq!(Driver::Cos.eval(0.0, 0.0, &[0.0]), 1.0);
        let m = Problem::example3_market();
        for form in [BorrowingForm::AsStated, BorrowingForm::Holdings] {
            let f = Driver::borrowing(&m, form).unwrap();
            assert_abs_diff_eq!(f.eval(0.0, 1.0, &[0.0; 5]), -0.02, epsilon = 1e-15);
            // Negative wealth, zero holdings: the spread applies to the debt.
            assert_abs_diff_eq!(f.eval(0.0, -1.0, &[0.0; 5]), 0.02 + 0.08, epsilon = 1e-15);
        }
    }

    #[test]
    fn theta_solves_the_linear_system() {
        let m = Problem::example3_market();
        let theta = m.theta().unwrap();
        let resid = m.sigma() * DVector::from_vec(theta) - DVector::from_iterator(5, m.mu.iter().map(|x| x - m.r));
        assert!(resid.amax() < 1e-12);
        // Rows of the Cholesky factor have unit norm, so each asset keeps its volatility.
        for i in 0..5 {
            assert_abs_diff_eq!(m.sigma().row(i).norm(), m.vols[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn borrowing_weights() {
        let m = Problem::example3_market();
        let z = [0.1, -0.2, 0.3, 0.05, 0.2];
        let s = m.sigma();
        let stated = DVector::from_element(5, 1.0).transpose() * s.clone().try_inverse().unwrap() * DVector::from_row_slice(&z);
        let held = DVector::from_element(5, 1.0).transpose() * s.transpose().try_inverse().unwrap() * DVector::from_row_slice(&z);
        for (form, want) in [(BorrowingForm::AsStated, stated[0]), (BorrowingForm::Holdings, held[0])] {
            if let Driver::Borrowing { weights, .. } = Driver::borrowing(&m, form).unwrap() {
                let got: f64 = weights.iter().zip(&z).map(|(a, b)| a * b).sum();
                assert_abs_diff_eq!(got, want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn hedge_inverts_the_volatility_map() {
        let m = Problem::example3_market();
        let spots = [1.1, 0.9, 1.0, 1.2, 0.7];
        let h = [0.3, 0.1, -0.2, 0.4, 0.05];
        let z: Vec<f64> = (0..5)
            .map(|g| (0..5).map(|j| m.sigma()[(j, g)] * spots[j] * h[j]).sum())
            .collect();
        let back = m.hedge(&spots, &z).unwrap();
        for (a, b) in back.iter().zip(h) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn bound_terminal_reads_monitoring_times() {
        let p = Problem::example1();
        let pts = uniform_monitoring(1.0, 20);
        let bound = p.terminal.bind(&pts).unwrap();
        let values: Vec<f64> = pts.iter().map(|t| 0.1 * t).collect();
        let prices = gbm_path(p.model().unwrap(), &pts, &values);
        let mon = p.terminal.monitoring_times();
        let want = barrier_call_payoff(0.9, 0.85, &mon, &pts, &prices).unwrap();
        assert_abs_diff_eq!(bound.eval(&values), want, epsilon = 1e-15);

        // Values off the monitoring set do not matter.
        let mut wiggled = values.clone();
        wiggled[1] = -40.0;
        assert_eq!(bound.eval(&wiggled), bound.eval(&values));

        let coarse = uniform_monitoring(1.0, 4);
        assert!(matches!(p.terminal.bind(&coarse), Err(Error::MissingMonitoringTime(_))));
    }

    #[test]
    fn problem_ids_parse() {
        assert_eq!("bt_squared".parse::<ProblemId>().unwrap(), ProblemId::BtSquared);
        assert!("nope".parse::<ProblemId>().is_err());
        let spec: CustomSpec = serde_json::from_str(r#"{"driver":{"kind":"linear","r":0.1},"payoff":{"kind":"brownian","coord":0}}"#).unwrap();
        let p = Problem::custom(&spec).unwrap();
        assert_eq!(p.driver, Driver::linear(0.1));
        assert_eq!(p.dim(), 1);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(MarketModel::new(vec![1.0, 1.0], vec![0.0; 2], vec![0.2; 2], &[1.0, 2.0, 2.0, 1.0], 0.0, 0.0).is_err());
        assert!(Problem::constant(1.0, -1.0, 1).is_err());
        assert!(Problem::vanilla_call(-1.0, 1.0, 0.0, 0.2, 1.0).is_err());
    }
}
