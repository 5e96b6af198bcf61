//! Experiment configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use cdm_distill::ctmc::{BaseGenerator, ForwardProcess, NoiseSchedule, ScheduleKind, StateSpace};
use cdm_distill::distill::{DistillConfig, WeightFn};
use cdm_distill::oracle::DataDistribution;
use cdm_distill::sampler::TimeGrid;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_states: usize,
    pub p0: DataSpec,
    pub schedule: ScheduleSpec,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub score_buckets: usize,
    /// Step counts evaluated by `eval`.
    pub grids: Vec<usize>,
    #[serde(default, skip_serializing_if = "GridSpacing::is_uniform")]
    pub grid_spacing: GridSpacing,
    pub distill: DistillSpec,
    pub output_dir: PathBuf,
}

/// The data law: an explicit vector or a named generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSpec {
    Explicit(Vec<f64>),
    Named(NamedData),
    Random(RandomData),
    PeakedRandom(PeakedRandomData),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedData {
    Peaked,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomData {
    pub random: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakedRandomData {
    pub peaked_random: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Constant { rate: f64 },
    Geometric { scale: f64, base: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpacing {
    #[default]
    Uniform,
    Geometric,
}

impl GridSpacing {
    fn is_uniform(&self) -> bool {
        *self == GridSpacing::Uniform
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSpec {
    Constant,
    InverseT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSpec {
    #[serde(rename = "K")]
    pub steps: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub weight_fn: WeightSpec,
    pub seed: u64,
    pub batch: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_states: 4,
            p0: DataSpec::PeakedRandom(PeakedRandomData { peaked_random: 0 }),
            schedule: ScheduleSpec::Geometric { scale: 0.1, base: 40.0 },
            horizon: 1.0,
            score_buckets: 32,
            grids: vec![1, 2, 4, 8, 16, 64, 256, 1024],
            grid_spacing: GridSpacing::Uniform,
            distill: DistillSpec {
                steps: 2,
                iterations: 20_000,
                learning_rate: 0.01,
                weight_fn: WeightSpec::Constant,
                seed: 0,
                batch: 8,
            },
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Everything a command needs, built from a validated config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub data: DataDistribution,
    pub process: ForwardProcess,
    pub buckets: usize,
    pub grids: Vec<usize>,
    pub spacing: GridSpacing,
    pub distill: DistillConfig,
}

impl Experiment {
    pub fn grid(&self, steps: usize) -> Result<TimeGrid, CliError> {
        let grid = match self.spacing {
            GridSpacing::Uniform => TimeGrid::uniform(steps, &self.process),
            GridSpacing::Geometric => TimeGrid::geometric(steps, &self.process),
        };
        grid.map_err(|e| CliError::invalid(format!("grids: {e}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::invalid(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Validates every field and builds the model objects. Errors name the
    /// offending field.
    pub fn build(&self) -> Result<Experiment, CliError> {
        let field = |name: &str| {
            let name = name.to_string();
            move |e: cdm_distill::Error| CliError::invalid(format!("{name}: {e}"))
        };
        let n = self.n_states;
        let space = StateSpace::new(n).map_err(field("n_states"))?;
        let data = match &self.p0 {
            DataSpec::Explicit(p) => {
                if p.len() != n {
                    return Err(CliError::invalid(format!(
                        "p0: has {} entries, n_states is {n}",
                        p.len()
                    )));
                }
                DataDistribution::new(p.clone())
            }
            DataSpec::Named(NamedData::Peaked) => DataDistribution::peaked(n),
            DataSpec::Named(NamedData::Uniform) => DataDistribution::uniform(n),
            DataSpec::Random(r) => DataDistribution::random(n, r.random),
            DataSpec::PeakedRandom(r) => DataDistribution::peaked_random(n, r.peaked_random),
        }
        .map_err(field("p0"))?;
        let kind = match self.schedule {
            ScheduleSpec::Constant { rate } => ScheduleKind::Constant { rate },
            ScheduleSpec::Geometric { scale, base } => ScheduleKind::Geometric { scale, base },
        };
        let schedule = NoiseSchedule::new(kind, self.horizon).map_err(field("schedule"))?;
        if self.score_buckets == 0 {
            return Err(CliError::invalid("score_buckets: must be positive"));
        }
        if self.grids.is_empty() || self.grids.contains(&0) {
            return Err(CliError::invalid("grids: need at least one positive step count"));
        }
        let d = &self.distill;
        let distill = DistillConfig {
            steps: d.steps,
            iterations: d.iterations,
            learning_rate: d.learning_rate,
            weight_fn: match d.weight_fn {
                WeightSpec::Constant => WeightFn::Constant,
                WeightSpec::InverseT => WeightFn::InverseT,
            },
            seed: d.seed,
            batch: d.batch,
        };
        distill.validate().map_err(field("distill"))?;
        Ok(Experiment {
            data,
            process: ForwardProcess::new(BaseGenerator::uniform(space), schedule),
            buckets: self.score_buckets,
            grids: self.grids.clone(),
            spacing: self.grid_spacing,
            distill,
        })
    }
}
