//! `distill`, `eval` and `sweep`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cdm_distill::distill::{run_distillation, IterationRecord};
use cdm_distill::sampler::{kl_divergence, pushforward_exact, sample_trajectory, terminal_distribution};
use cdm_distill::score::{Role, ScoreTable};
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};
use crate::error::CliError;

pub const ITERATIONS_HEADER: [&str; 7] = ["iter", "t", "s", "loss", "viol_teacher", "viol_student", "grad_norm"];
pub const EVAL_HEADER: [&str; 5] = ["model", "K", "kl", "nfe", "wall_ms"];

pub const TEACHER_FILE: &str = "teacher.table";
pub const STUDENT_FILE: &str = "student.table";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const EVAL_FILE: &str = "eval.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    seed: u64,
    iterations: usize,
    skipped_iterations: usize,
    skipped_items: usize,
    config: &'a ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct DistillSummary {
    pub teacher: ScoreTable,
    pub student: ScoreTable,
    pub skipped_iterations: usize,
    pub skipped_items: usize,
}

/// Shortest round-trip form; exponents for very small or large values.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::invalid(format!("cannot create output directory {}: {e}", dir.display())))
}

pub fn write_iterations(path: &Path, records: &[IterationRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ITERATIONS_HEADER)?;
    for r in records {
        w.write_record([
            r.iter.to_string(),
            num(r.t),
            num(r.s),
            num(r.loss),
            num(r.viol_teacher),
            num(r.viol_student),
            num(r.grad_norm),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fits the teacher, distills the student, and writes both tables, the
/// iteration log and the manifest into `out`.
pub fn cmd_distill(config: &ExperimentConfig, exp: &Experiment, out: &Path) -> Result<DistillSummary, CliError> {
    let teacher = ScoreTable::fit_from_oracle(&exp.data, &exp.process, exp.buckets)?;
    let outcome = run_distillation(&teacher, &exp.data, &exp.process, &exp.distill)?;
    create_dir(out)?;
    teacher.save(out.join(TEACHER_FILE))?;
    outcome.student.save(out.join(STUDENT_FILE))?;
    write_iterations(&out.join(ITERATIONS_FILE), &outcome.records)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        seed: exp.distill.seed,
        iterations: outcome.records.len(),
        skipped_iterations: outcome.skipped_iterations,
        skipped_items: outcome.skipped_items,
        config,
    };
    let text = toml::to_string(&manifest).expect("manifest is always representable as TOML");
    std::fs::write(out.join(MANIFEST_FILE), text)?;
    Ok(DistillSummary {
        teacher,
        student: outcome.student,
        skipped_iterations: outcome.skipped_iterations,
        skipped_items: outcome.skipped_items,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model: Role,
    pub steps: usize,
    /// `+inf` when the sampler misses part of the data support.
    pub kl: f64,
    pub nfe: usize,
    pub wall_ms: f64,
}

fn load_table(path: &Path, role: Role) -> Result<ScoreTable, CliError> {
    if !path.exists() {
        return Err(CliError::invalid(format!("missing {role} table: {}", path.display())));
    }
    let table = ScoreTable::load(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    if table.role() != role {
        return Err(CliError::invalid(format!(
            "{} holds a {} table, expected {role}",
            path.display(),
            table.role()
        )));
    }
    Ok(table)
}

/// Loads `teacher.table` and `student.table` from `dir`.
pub fn load_tables(dir: &Path) -> Result<Vec<ScoreTable>, CliError> {
    Ok(vec![
        load_table(&dir.join(TEACHER_FILE), Role::Teacher)?,
        load_table(&dir.join(STUDENT_FILE), Role::Student)?,
    ])
}

/// Exact KL of each table's sampler at every configured step count, sorted
/// by `(model, K)`.
pub fn evaluate(exp: &Experiment, tables: &[ScoreTable]) -> Result<Vec<EvalRow>, CliError> {
    let n = exp.process.size();
    let init = terminal_distribution(n);
    let mut rows = Vec::new();
    for table in tables {
        if table.states() != n {
            return Err(CliError::invalid(format!(
                "{} table has {} states, config has {n}",
                table.role(),
                table.states()
            )));
        }
        for &k in &exp.grids {
            let grid = exp.grid(k)?;
            let start = Instant::now();
            let law = pushforward_exact(table, &exp.process, &grid, &init)?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            rows.push(EvalRow {
                model: table.role(),
                steps: k,
                kl: kl_divergence(exp.data.probs(), &law),
                nfe: k,
                wall_ms,
            });
        }
    }
    rows.sort_by_key(|r| (r.model.to_string(), r.steps));
    Ok(rows)
}

pub fn write_eval(path: &Path, rows: &[EvalRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EVAL_HEADER)?;
    for r in rows {
        w.write_record([
            r.model.to_string(),
            r.steps.to_string(),
            num(r.kl),
            r.nfe.to_string(),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Monte Carlo cross-check of the exact laws: `draws` trajectories per
/// `(model, K)`.
pub fn write_histograms(
    path: &Path,
    exp: &Experiment,
    tables: &[ScoreTable],
    draws: usize,
    seed: u64,
) -> Result<(), CliError> {
    let n = exp.process.size();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "K", "state", "exact", "sampled"])?;
    let mut rng = cdm_distill::seeded_rng(seed);
    for table in tables {
        for &k in &exp.grids {
            let grid = exp.grid(k)?;
            let exact = pushforward_exact(table, &exp.process, &grid, &terminal_distribution(n))?;
            let mut counts = vec![0usize; n];
            for _ in 0..draws {
                let path = sample_trajectory(table, &exp.process, &grid, &mut rng)?;
                counts[*path.last().expect("trajectories are never empty")] += 1;
            }
            for x in 0..n {
                w.write_record([
                    table.role().to_string(),
                    k.to_string(),
                    x.to_string(),
                    num(exact[x]),
                    num(counts[x] as f64 / draws as f64),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_eval(exp: &Experiment, dir: &Path, histogram_draws: Option<usize>) -> Result<Vec<EvalRow>, CliError> {
    let tables = load_tables(dir)?;
    let rows = evaluate(exp, &tables)?;
    write_eval(&dir.join(EVAL_FILE), &rows)?;
    if let Some(draws) = histogram_draws {
        write_histograms(&dir.join(HISTOGRAM_FILE), exp, &tables, draws, exp.distill.seed)?;
    }
    Ok(rows)
}

/// Distills and evaluates every `(seed, K)` pair; each cell gets its own
/// subdirectory and one summary CSV collects all rows.
pub fn cmd_sweep(config: &ExperimentConfig, seeds: &[u64], targets: &[usize], out: &Path) -> Result<PathBuf, CliError> {
    if seeds.is_empty() || targets.is_empty() {
        return Err(CliError::invalid("sweep needs at least one seed and one K"));
    }
    create_dir(out)?;
    let summary = out.join(SWEEP_FILE);
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record(["seed", "target_K", "model", "K", "kl", "nfe"])?;
    for &seed in seeds {
        for &target in targets {
            let mut cell = config.clone();
            cell.distill.seed = seed;
            cell.distill.steps = target;
            let exp = cell.build()?;
            let dir = out.join(format!("seed{seed}_K{target}"));
            let result = cmd_distill(&cell, &exp, &dir)?;
            for r in evaluate(&exp, &[result.teacher, result.student])? {
                w.write_record([
                    seed.to_string(),
                    target.to_string(),
                    r.model.to_string(),
                    r.steps.to_string(),
                    num(r.kl),
                    r.nfe.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(summary)
}
