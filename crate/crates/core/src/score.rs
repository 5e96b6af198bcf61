//! Tabular concrete-score models.
//!
//! A [`ScoreTable`] stores log-ratios `theta[b][x][y]` for `M` time buckets.
//! Evaluation exponentiates, so scores are positive for any finite
//! parameters, and the self-ratio `theta[b][x][x]` is pinned to zero.

use std::collections::hash_map::DefaultHasher;
use std::fmt::{self, Write as _};
use std::hash::Hasher;
use std::path::Path;
use std::str::FromStr;

use crate::ctmc::ForwardProcess;
use crate::error::{Error, Result};
use crate::oracle::{exact_marginal, exact_ratios, DataDistribution};

pub const DEFAULT_BUCKETS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Teacher,
    Student,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(Role::Teacher),
            "student" => Ok(Role::Student),
            other => Err(Error::Parse(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    role: Role,
    states: usize,
    edges: Vec<f64>,
    params: Vec<f64>,
}

impl ScoreTable {
    /// All-zero log-ratios (every score equal to one) on explicit bucket edges.
    pub fn with_edges(role: Role, states: usize, edges: Vec<f64>) -> Result<Self> {
        if states == 0 {
            return Err(Error::domain("score table needs at least one state"));
        }
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::domain("bucket edges must be finite and strictly increasing"));
        }
        let buckets = edges.len() - 1;
        Ok(Self {
            role,
            states,
            edges,
            params: vec![0.0; buckets * states * states],
        })
    }

    /// All-zero table with `buckets` equal-width buckets on `[start, end]`.
    pub fn zeros(role: Role, states: usize, buckets: usize, start: f64, end: f64) -> Result<Self> {
        if buckets == 0 {
            return Err(Error::domain("bucket count must be positive"));
        }
        let width = (end - start) / buckets as f64;
        let mut edges: Vec<f64> = (0..=buckets).map(|b| start + b as f64 * width).collect();
        edges[buckets] = end;
        Self::with_edges(role, states, edges)
    }

    /// All-zero table covering the score domain `[eps, T]` of a process.
    pub fn zeros_for(role: Role, process: &ForwardProcess, buckets: usize) -> Result<Self> {
        Self::zeros(role, process.size(), buckets, process.min_time(), process.horizon())
    }

    /// Teacher whose log-ratios are the exact concrete scores at each bucket
    /// centre.
    pub fn fit_from_oracle(data: &DataDistribution, process: &ForwardProcess, buckets: usize) -> Result<Self> {
        if data.size() != process.size() {
            return Err(Error::shape("data and process sizes differ"));
        }
        let mut table = Self::zeros_for(Role::Teacher, process, buckets)?;
        let n = table.states;
        for b in 0..buckets {
            let marginal = exact_marginal(data, &process.kernel(table.bucket_center(b))?)?;
            for x in 0..n {
                for (y, r) in exact_ratios(&marginal, x)?.into_iter().enumerate() {
                    if y != x {
                        let idx = table.index(b, x, y);
                        table.params[idx] = r.ln();
                    }
                }
            }
        }
        Ok(table)
    }

    /// Deep copy tagged as a student.
    pub fn clone_as_student(&self) -> Self {
        Self {
            role: Role::Student,
            ..self.clone()
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn buckets(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn bucket_center(&self, b: usize) -> f64 {
        0.5 * (self.edges[b] + self.edges[b + 1])
    }

    fn index(&self, b: usize, x: usize, y: usize) -> usize {
        (b * self.states + x) * self.states + y
    }

    /// Flat offset of the log-ratio row `(b, x)` inside [`Self::params`].
    pub fn row_offset(&self, b: usize, x: usize) -> usize {
        self.index(b, x, 0)
    }

    /// Bucket containing `t`; the right end of the domain belongs to the last bucket.
    pub fn bucket_of(&self, t: f64) -> Result<usize> {
        let (lo, hi) = (self.edges[0], self.edges[self.edges.len() - 1]);
        if !(lo..=hi).contains(&t) {
            return Err(Error::domain(format!("time {t} outside score domain [{lo}, {hi}]")));
        }
        let b = self.edges.partition_point(|&e| e <= t);
        Ok(b.saturating_sub(1).min(self.buckets() - 1))
    }

    pub fn log_ratio(&self, b: usize, x: usize, y: usize) -> f64 {
        self.params[self.index(b, x, y)]
    }

    /// Sets one log-ratio. The self-ratio is fixed and cannot be set.
    pub fn set_log_ratio(&mut self, b: usize, x: usize, y: usize, value: f64) -> Result<()> {
        if b >= self.buckets() || x >= self.states || y >= self.states {
            return Err(Error::domain(format!("index ({b}, {x}, {y}) out of range")));
        }
        if x == y {
            return Err(Error::domain("the self-ratio is fixed at one"));
        }
        if !value.is_finite() {
            return Err(Error::domain("log-ratio must be finite"));
        }
        let idx = self.index(b, x, y);
        self.params[idx] = value;
        Ok(())
    }

    /// Adds `delta[y]` to every off-diagonal log-ratio of row `(b, x)`.
    pub fn add_to_row(&mut self, b: usize, x: usize, delta: &[f64]) {
        let offset = self.row_offset(b, x);
        for (y, d) in delta.iter().enumerate() {
            if y != x {
                self.params[offset + y] += d;
            }
        }
    }

    /// Gradient-descent step over the whole table; self-ratios stay at zero.
    pub fn descend(&mut self, grad: &[f64], learning_rate: f64) {
        let n = self.states;
        for (i, (p, g)) in self.params.iter_mut().zip(grad).enumerate() {
            let (x, y) = ((i / n) % n, i % n);
            if x != y {
                *p -= learning_rate * g;
            }
        }
    }

    /// Scores of row `(b, x)`: `exp(theta)` with the self-entry exactly one.
    pub fn eval_bucket(&self, b: usize, x: usize) -> Vec<f64> {
        let offset = self.row_offset(b, x);
        (0..self.states)
            .map(|y| if y == x { 1.0 } else { self.params[offset + y].exp() })
            .collect()
    }

    pub fn eval(&self, t: f64, x: usize) -> Result<Vec<f64>> {
        if x >= self.states {
            return Err(Error::domain(format!("state {x} outside [0, {})", self.states)));
        }
        Ok(self.eval_bucket(self.bucket_of(t)?, x))
    }

    /// Hash of the bucket edges and parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        h.write_usize(self.states);
        for v in self.edges.iter().chain(&self.params) {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }

    /// Plain-text serialisation. Floats use the shortest representation
    /// that parses back to the same bits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |vals: &[f64]| vals.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "cdm-score-table 1");
        let _ = writeln!(out, "role {}", self.role);
        let _ = writeln!(out, "buckets {}", self.buckets());
        let _ = writeln!(out, "states {}", self.states);
        let _ = writeln!(out, "edges {}", join(&self.edges));
        let _ = writeln!(out, "params");
        for row in self.params.chunks(self.states) {
            let _ = writeln!(out, "{}", join(row));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse(format!("missing {what}")));
        let header = next("header")?;
        if header.trim() != "cdm-score-table 1" {
            return Err(Error::Parse(format!("unrecognised header `{header}`")));
        }
        let field = |line: &str, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| Error::Parse(format!("expected `{key} ...`, got `{line}`")))
        };
        let parse_usize = |s: String, key: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("{key}: {e}")))
        };
        let parse_floats = |s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("`{v}`: {e}"))))
                .collect()
        };

        let role: Role = field(next("role")?, "role")?.trim().parse()?;
        let buckets = parse_usize(field(next("buckets")?, "buckets")?, "buckets")?;
        let states = parse_usize(field(next("states")?, "states")?, "states")?;
        let edges = parse_floats(&field(next("edges")?, "edges")?)?;
        if edges.len() != buckets + 1 {
            return Err(Error::Parse(format!(
                "expected {} edges, found {}",
                buckets + 1,
                edges.len()
            )));
        }
        if next("params")?.trim() != "params" {
            return Err(Error::Parse("expected `params`".into()));
        }
        let mut table = Self::with_edges(role, states, edges)?;
        let mut params = Vec::with_capacity(table.params.len());
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let row = parse_floats(line)?;
            if row.len() != states {
                return Err(Error::Parse(format!(
                    "parameter row has {} values, expected {states}",
                    row.len()
                )));
            }
            params.extend(row);
        }
        if params.len() != table.params.len() {
            return Err(Error::Parse(format!(
                "expected {} parameters, found {}",
                table.params.len(),
                params.len()
            )));
        }
        for b in 0..buckets {
            for x in 0..states {
                let v = params[table.index(b, x, x)];
                if v != 0.0 {
                    return Err(Error::Parse(format!("self log-ratio at ({b}, {x}) is {v}, must be 0")));
                }
            }
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse("non-finite parameter".into()));
        }
        table.params = params;
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}
