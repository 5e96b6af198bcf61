//! Oracle identity suite run by `cdmd verify`.

use std::path::Path;

use cdm_distill::ctmc::{transition_matrix_series, ForwardKernel, ForwardProcess};
use cdm_distill::oracle::{
    check_markov_mixture, exact_marginal, exact_posterior, exact_ratios, jensen_gap_check, TripleJoint,
};
use cdm_distill::posterior::RatioMatrix;
use serde::Serialize;

use crate::config::Experiment;
use crate::error::CliError;

pub const KERNEL_TOL: f64 = 1e-9;
pub const ROW_SUM_TOL: f64 = 1e-12;
pub const RECOVERY_TOL: f64 = 1e-8;
pub const JENSEN_TOL: f64 = 1e-12;

/// Source of forward kernels under test. The default is the closed form;
/// tests swap in broken kernels to exercise the failure path.
pub trait KernelProvider {
    fn kernel(&self, process: &ForwardProcess, t: f64) -> cdm_distill::Result<ForwardKernel> {
        process.kernel(t)
    }

    fn kernel_between(&self, process: &ForwardProcess, s: f64, t: f64) -> cdm_distill::Result<ForwardKernel> {
        process.kernel_between(s, t)
    }
}

pub struct ClosedForm;

impl KernelProvider for ClosedForm {}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct JensenPair {
    pub teacher_mse: f64,
    pub student_mse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub n_states: usize,
    pub passed: bool,
    pub check: Vec<Check>,
    pub jensen: JensenPair,
}

impl VerifyReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report is always representable as TOML")
    }
}

fn check(name: &str, max_deviation: f64, tolerance: f64) -> Check {
    Check {
        name: name.to_string(),
        max_deviation,
        tolerance,
        passed: max_deviation <= tolerance,
    }
}

fn probe_times(process: &ForwardProcess) -> Vec<f64> {
    let horizon = process.horizon();
    let mut times = vec![process.min_time()];
    times.extend([0.05, 0.1, 0.25, 0.5, 0.75, 1.0].map(|f| f * horizon));
    times
}

pub const REPORT_FILE: &str = "verify_report.toml";

/// Runs the suite and writes the report into `out`. A failed identity is a
/// validation failure; the report is written either way.
pub fn cmd_verify(exp: &Experiment, kernels: &dyn KernelProvider, out: &Path) -> Result<VerifyReport, CliError> {
    let report = run_verify(exp, kernels)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(REPORT_FILE), report.to_toml())?;
    if !report.passed {
        let failed: Vec<&str> = report
            .check
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        return Err(CliError::invalid(format!("identities failed: {}", failed.join(", "))));
    }
    Ok(report)
}

pub fn run_verify(exp: &Experiment, kernels: &dyn KernelProvider) -> Result<VerifyReport, CliError> {
    let process = &exp.process;
    let n = process.size();
    let times = probe_times(process);
    let mut checks = Vec::new();

    let mut series_dev: f64 = 0.0;
    let mut row_dev: f64 = 0.0;
    for &t in &times {
        let kernel = kernels.kernel(process, t)?;
        let series = transition_matrix_series(&process.generator, kernel.tau);
        series_dev = series_dev.max((&kernel.probs - series).amax());
        for x in 0..n {
            row_dev = row_dev.max((kernel.probs.row(x).sum() - 1.0).abs());
        }
    }
    checks.push(check("kernel_matches_series", series_dev, KERNEL_TOL));
    checks.push(check("kernel_rows_sum_to_one", row_dev, ROW_SUM_TOL));

    let mut ck_dev: f64 = 0.0;
    for (i, &s) in times.iter().enumerate() {
        for &t in &times[i..] {
            let direct = kernels.kernel(process, t)?.probs;
            let composed = kernels.kernel(process, s)?.probs * kernels.kernel_between(process, s, t)?.probs;
            ck_dev = ck_dev.max((direct - composed).amax());
        }
    }
    checks.push(check("chapman_kolmogorov", ck_dev, KERNEL_TOL));

    let mut mixture_dev: f64 = 0.0;
    for (i, &s) in times.iter().enumerate() {
        for &t in &times[i..] {
            mixture_dev = mixture_dev.max(check_markov_mixture(&exp.data, process, s, t)?);
        }
    }
    checks.push(check("markov_mixture", mixture_dev, KERNEL_TOL));

    let mut recovery_dev: f64 = 0.0;
    for &t in &times[1..] {
        let kernel = kernels.kernel(process, t)?;
        let marginal = exact_marginal(&exp.data, &kernel)?;
        for x in 0..n {
            let recovered = RatioMatrix::build(&kernel, x)?.recover(&exact_ratios(&marginal, x)?)?;
            let bayes = exact_posterior(&exp.data, &kernel, &marginal, x)?;
            for (a, b) in recovered.iter().zip(&bayes) {
                recovery_dev = recovery_dev.max((a - b).abs());
            }
        }
    }
    checks.push(check("posterior_recovery", recovery_dev, RECOVERY_TOL));

    let horizon = process.horizon();
    let joint = TripleJoint::from_forward_chain(&exp.data, process, 0.3 * horizon, 0.6 * horizon)?;
    let jensen = jensen_gap_check(&joint, &joint.clean_mean_given_teacher_state())?;
    checks.push(check(
        "jensen_student_not_worse",
        (jensen.student_mse - jensen.teacher_mse).max(0.0),
        JENSEN_TOL,
    ));
    checks.push(check(
        "jensen_gap_is_teacher_variance",
        (jensen.teacher_mse - jensen.student_mse - jensen.teacher_variance).abs(),
        JENSEN_TOL,
    ));

    Ok(VerifyReport {
        n_states: n,
        passed: checks.iter().all(|c| c.passed),
        check: checks,
        jensen: JensenPair {
            teacher_mse: jensen.teacher_mse,
            student_mse: jensen.student_mse,
        },
    })
}
