//! Run configuration: a flat JSON document, with a few command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use bsde_chaos::problems::{CustomSpec, Problem, ProblemId};
use bsde_chaos::schemes::{EulerParams, PicardParams, Scheme};

/// Parameter swept by `sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "m")]
    Steps,
    #[serde(rename = "M")]
    Cells,
    #[serde(rename = "P")]
    Order,
    #[serde(rename = "N")]
    Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
}

/// Which subcommand a configuration is run under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Run,
    Repeat,
    Sweep,
    Paths,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    pub problem: ProblemId,
    #[serde(default = "default_steps")]
    pub m: usize,
    #[serde(rename = "M", default = "default_cells")]
    pub cells: usize,
    #[serde(rename = "P", default = "default_order")]
    pub order: usize,
    #[serde(rename = "N", default = "default_samples")]
    pub samples: usize,
    #[serde(rename = "Q", default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Brownian dimension; only `constant` lets it vary, elsewhere it must
    /// match the problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Keep all step coefficients (forced on by `paths`).
    #[serde(default)]
    pub retain: bool,
    /// Number of trajectories `K` for `paths`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomSpec>,
    /// Level of the `constant` problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Horizon of `bt_squared`, `constant` and `vanilla_call`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Relative bump of the delta baseline.
    #[serde(default = "default_bump")]
    pub bump: f64,
    /// Optional CSV of per-step diagnostics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<PathBuf>,
}

fn default_scheme() -> Scheme {
    Scheme::Euler
}
fn default_steps() -> usize {
    20
}
fn default_cells() -> usize {
    10
}
fn default_order() -> usize {
    3
}
fn default_samples() -> usize {
    100_000
}
fn default_iterations() -> usize {
    7
}
fn default_bump() -> f64 {
    0.01
}

impl RunConfig {
    /// Defaults for `problem`, as if the JSON held only that key.
    pub fn new(problem: ProblemId) -> Self {
        serde_json::from_value(serde_json::json!({ "problem": problem })).expect("defaults parse")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            anyhow::anyhow!("config field '{path}': {inner}")
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks the parameters and that the fields fit `mode`.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        for (name, v) in [("m", self.m), ("M", self.cells), ("N", self.samples), ("Q", self.iterations)] {
            ensure!(v > 0, "{name} must be positive");
        }
        ensure!(self.samples >= 2, "N must be at least 2");
        ensure!(self.bump > 0.0 && self.bump < 1.0, "bump must lie in (0, 1)");
        if let Some(d) = self.d {
            ensure!(d > 0, "d must be positive");
        }
        if let Some(r) = self.repetitions {
            ensure!(r > 0, "repetitions must be positive");
        }
        if let Some(s) = &self.sweep {
            ensure!(!s.values.is_empty(), "sweep needs at least one value");
            if s.axis != SweepAxis::Order {
                ensure!(s.values.iter().all(|&v| v > 0), "sweep values for {:?} must be positive", s.axis);
            }
        }
        ensure!(
            self.custom.is_some() == (self.problem == ProblemId::Custom),
            "the 'custom' block goes with problem 'custom' and only with it"
        );
        let reps = self.repetitions.unwrap_or(1);
        match mode {
            Mode::Run => {
                ensure!(self.sweep.is_none(), "'run' takes no sweep; use 'sweep'");
                ensure!(reps == 1, "'run' takes no repetitions; use 'repeat'");
            }
            Mode::Repeat => {
                ensure!(self.sweep.is_none(), "'repeat' takes no sweep; use 'sweep'");
                ensure!(self.repetitions.is_some(), "'repeat' needs 'repetitions'");
            }
            Mode::Sweep => ensure!(self.sweep.is_some(), "'sweep' needs a 'sweep' block"),
            Mode::Paths => {
                ensure!(self.scheme == Scheme::Euler, "trajectories need the euler scheme");
                ensure!(self.paths.is_some_and(|k| k > 0), "'paths' needs a positive 'paths' count");
            }
            Mode::Oracle => {}
        }
        self.problem()?;
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem> {
        let horizon = self.horizon.unwrap_or(1.0);
        let fixed = |p: Problem| -> Result<Problem> {
            if let Some(d) = self.d {
                ensure!(d == p.dim(), "problem '{}' has d = {}, config asks for {d}", p.name, p.dim());
            }
            if self.horizon.is_some_and(|h| h != p.horizon()) {
                bail!("problem '{}' has a fixed horizon", p.name);
            }
            Ok(p)
        };
        if self.value.is_some() && self.problem != ProblemId::Constant {
            bail!("'value' only applies to problem 'constant'");
        }
        Ok(match self.problem {
            ProblemId::Example1 => fixed(Problem::example1())?,
            ProblemId::Example2 => fixed(Problem::example2())?,
            ProblemId::Example3 => fixed(Problem::example3())?,
            ProblemId::VanillaCall => fixed(Problem::vanilla_call(1.0, 0.9, 0.01, 0.2, horizon)?)?,
            ProblemId::BtSquared => fixed(Problem::bt_squared(horizon)?)?,
            ProblemId::Constant => Problem::constant(self.value.unwrap_or(1.0), horizon, self.d.unwrap_or(1))?,
            ProblemId::Custom => {
                let spec = self.custom.as_ref().context("problem 'custom' needs a 'custom' block")?;
                ensure!(self.horizon.is_none(), "set the horizon inside the 'custom' block");
                fixed(Problem::custom(spec)?)?
            }
        })
    }

    pub fn euler_params(&self) -> EulerParams {
        let p = EulerParams::new(self.m, self.cells, self.order, self.samples, self.seed);
        if self.retain {
            p.retained()
        } else {
            p
        }
    }

    pub fn picard_params(&self) -> PicardParams {
        PicardParams::new(self.euler_params(), self.iterations)
    }

    /// The configuration of a single point of a sweep.
    pub fn with_axis(&self, axis: SweepAxis, value: usize) -> Self {
        let mut c = self.clone();
        match axis {
            SweepAxis::Steps => c.m = value,
            SweepAxis::Cells => c.cells = value,
            SweepAxis::Order => c.order = value,
            SweepAxis::Samples => c.samples = value,
        }
        c.sweep = None;
        c
    }
}
