//! Result rows: one per solver run, with the fixed CSV header
//! `schema,scheme,problem,m,M,P,N,Q,seed,run,y0,z0_1..z0_d,wall_ms`.

use anyhow::{bail, Context, Result};

use bsde_chaos::problems::ProblemId;
use bsde_chaos::schemes::{Scheme, StepDiagnostics};

use crate::config::RunConfig;

/// Version written in the `schema` column.
pub const SCHEMA: u32 = 1;

const LEADING: [&str; 10] = ["schema", "scheme", "problem", "m", "M", "P", "N", "Q", "seed", "run"];

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub scheme: Scheme,
    pub problem: ProblemId,
    pub m: usize,
    pub cells: usize,
    pub order: usize,
    pub samples: usize,
    pub iterations: usize,
    /// Seed actually used, `master + run`.
    pub seed: u64,
    pub run: usize,
    pub y0: f64,
    pub z0: Vec<f64>,
    pub wall_ms: f64,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl ResultRecord {
    pub fn header(dim: usize) -> Vec<String> {
        let mut h: Vec<String> = LEADING.iter().map(|s| s.to_string()).collect();
        h.push("y0".into());
        h.extend((1..=dim).map(|g| format!("z0_{g}")));
        h.push("wall_ms".into());
        h
    }

    /// Fields in header order. Floats use the shortest representation that
    /// parses back to the same value.
    pub fn fields(&self) -> Vec<String> {
        let mut f = vec![
            SCHEMA.to_string(),
            self.scheme.name().into(),
            self.problem.name().into(),
            self.m.to_string(),
            self.cells.to_string(),
            self.order.to_string(),
            self.samples.to_string(),
            self.iterations.to_string(),
            self.seed.to_string(),
            self.run.to_string(),
            self.y0.to_string(),
        ];
        f.extend(self.z0.iter().map(f64::to_string));
        f.push(format!("{:.3}", self.wall_ms));
        f
    }

    /// Parses a row written by [`fields`](Self::fields). Diagnostics are not
    /// part of the row.
    pub fn parse(header: &csv::StringRecord, row: &csv::StringRecord) -> Result<Self> {
        let get = |name: &str| -> Result<&str> {
            let i = header.iter().position(|h| h == name).with_context(|| format!("missing column '{name}'"))?;
            row.get(i).with_context(|| format!("short row, no '{name}'"))
        };
        let num = |name: &str| -> Result<usize> { get(name)?.parse().with_context(|| format!("column '{name}'")) };
        let float = |name: &str| -> Result<f64> { get(name)?.parse().with_context(|| format!("column '{name}'")) };
        let schema: u32 = get("schema")?.parse()?;
        if schema != SCHEMA {
            bail!("unsupported schema version {schema}");
        }
        let quoted = |s: &str| serde_json::Value::String(s.to_string());
        let dim = header.iter().filter(|h| h.starts_with("z0_")).count();
        Ok(Self {
            scheme: serde_json::from_value(quoted(get("scheme")?)).context("column 'scheme'")?,
            problem: get("problem")?.parse()?,
            m: num("m")?,
            cells: num("M")?,
            order: num("P")?,
            samples: num("N")?,
            iterations: num("Q")?,
            seed: get("seed")?.parse().context("column 'seed'")?,
            run: num("run")?,
            y0: float("y0")?,
            z0: (1..=dim).map(|g| float(&format!("z0_{g}"))).collect::<Result<_>>()?,
            wall_ms: float("wall_ms")?,
            diagnostics: Vec::new(),
        })
    }

    /// The single-run configuration that reproduces this row. Problem
    /// parameters not echoed in the row come from `base`.
    pub fn config(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.scheme = self.scheme;
        c.problem = self.problem;
        c.m = self.m;
        c.cells = self.cells;
        c.order = self.order;
        c.samples = self.samples;
        c.iterations = self.iterations;
        c.seed = self.seed;
        c.repetitions = None;
        c.sweep = None;
        c
    }

    /// Equality of the numeric results, ignoring wall time.
    pub fn same_numbers(&self, other: &Self) -> bool {
        let a = self.fields();
        let b = other.fields();
        a[..a.len() - 1] == b[..b.len() - 1]
    }
}

pub const DIAGNOSTICS_HEADER: [&str; 9] =
    ["row", "run", "kind", "index", "time", "cells", "second_moment", "v_diagnostic", "max_stderr"];

/// Diagnostic rows for result row `row`; the terminal projection comes first.
pub fn diagnostic_fields(row: usize, rec: &ResultRecord, terminal: &StepDiagnostics) -> Vec<Vec<String>> {
    let kind = match rec.scheme {
        Scheme::Euler => "step",
        Scheme::Picard => "iteration",
    };
    std::iter::once(("terminal", terminal))
        .chain(rec.diagnostics.iter().map(|d| (kind, d)))
        .map(|(k, d)| {
            vec![
                row.to_string(),
                rec.run.to_string(),
                k.to_string(),
                d.index.to_string(),
                d.time.to_string(),
                d.cells.to_string(),
                d.second_moment.to_string(),
                d.v_diagnostic.to_string(),
                d.max_stderr.to_string(),
            ]
        })
        .collect()
}
