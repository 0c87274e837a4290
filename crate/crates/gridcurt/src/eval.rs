//! Evaluation harness: per-task records, category summaries, scatter CSV
//! emission, and timing comparisons between the agent and the OPF.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_admittance, Grid};
use crate::opf::{solve_opf, OpfOptions, ViolationReport};
use crate::powerflow::{solve_power_flow_with, PfOptions};
use crate::rl::{AgentCheckpoint, EnvConfig, GridEnv};
use crate::scenario::{Dataset, SupplyTask};

/// Outcome of running one decision procedure (agent or OPF) on one task.
/// `resolved_*` flags hold only where the matching `pre_*` flag is set;
/// every one is certified by an independent power flow at the final
/// setpoints. `decision_time_s` is filled by `bench` and the OPF runner
/// only, so plain evaluation output stays byte-reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_index: u64,
    pub pre_upper: bool,
    pub pre_lower: bool,
    pub pre_overload: bool,
    pub pre_any: bool,
    pub resolved_upper: bool,
    pub resolved_lower: bool,
    pub resolved_overload: bool,
    pub resolved_all: bool,
    pub post_violation: bool,
    pub max_loading_post: f64,
    pub min_voltage_post: f64,
    pub max_voltage_post: f64,
    pub relative_p_curtailment: Option<f64>,
    pub relative_q_curtailment: Option<f64>,
    /// Summed active flexibility width (p.u.).
    pub available_flex: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_time_s: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryStat {
    pub count: usize,
    pub solved: usize,
    pub solved_pct: Option<f64>,
}

impl CategoryStat {
    fn tally(records: &[EvalRecord], pre: impl Fn(&EvalRecord) -> bool, ok: impl Fn(&EvalRecord) -> bool) -> Self {
        let count = records.iter().filter(|r| pre(r)).count();
        let solved = records.iter().filter(|r| pre(r) && ok(r)).count();
        let solved_pct = (count > 0).then(|| 100.0 * solved as f64 / count as f64);
        CategoryStat { count, solved, solved_pct }
    }
}

/// Violation counts and resolution percentages per category, plus average
/// timings when measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub total: CategoryStat,
    pub upper_voltage: CategoryStat,
    pub lower_voltage: CategoryStat,
    pub asset_overload: CategoryStat,
    pub train_total_s: Option<f64>,
    pub inference_per_task_s: Option<f64>,
    pub opf_per_task_s: Option<f64>,
}

impl SummaryTable {
    pub fn from_records(records: &[EvalRecord]) -> Self {
        SummaryTable {
            total: CategoryStat::tally(records, |r| r.pre_any, |r| r.resolved_all),
            upper_voltage: CategoryStat::tally(records, |r| r.pre_upper, |r| r.resolved_upper),
            lower_voltage: CategoryStat::tally(records, |r| r.pre_lower, |r| r.resolved_lower),
            asset_overload: CategoryStat::tally(records, |r| r.pre_overload, |r| r.resolved_overload),
            train_total_s: None,
            inference_per_task_s: None,
            opf_per_task_s: None,
        }
    }
}

/// Ratio of curtailed power to available flexibility, per component.
/// Absent when the respective flexibility is zero.
pub fn relative_curtailment(task: &SupplyTask, p_set: &[f64], q_set: &[f64]) -> (Option<f64>, Option<f64>) {
    let p_width: f64 = task.flex.iter().map(|f| (f.p_max - f.p_min).abs()).sum();
    let q_width: f64 = task.flex.iter().map(|f| (f.q_max - f.q_min).abs()).sum();
    let p_moved: f64 = task
        .flex
        .iter()
        .zip(p_set)
        .map(|(f, &p)| (task.p_ref[f.bus] - p).abs())
        .sum();
    let q_moved: f64 = task
        .flex
        .iter()
        .zip(q_set)
        .map(|(f, &q)| (task.q_ref[f.bus] - q).abs())
        .sum();
    let p_ratio = (p_width > 0.0).then(|| p_moved / p_width);
    let q_ratio = (q_width > 0.0).then(|| q_moved / q_width);
    (p_ratio, q_ratio)
}

fn record_for(
    grid: &Grid,
    task: &SupplyTask,
    pre: &ViolationReport,
    p_set: &[f64],
    q_set: &[f64],
    tol: f64,
) -> Result<EvalRecord> {
    // Independent certification: a fresh power flow at the final
    // setpoints, not the environment's internal bookkeeping.
    let inj = task.injections_with(grid, p_set, q_set)?;
    let ybus = build_admittance(grid);
    let sol = solve_power_flow_with(grid, &ybus, &inj, &PfOptions::default())?;
    let post = ViolationReport::from_solution(grid, &sol, tol);

    let (p_ratio, q_ratio) = relative_curtailment(task, p_set, q_set);
    let available_flex = task.flex.iter().map(|f| (f.p_max - f.p_min).abs()).sum();
    let (min_v, max_v) = sol
        .v_mag
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(EvalRecord {
        task_index: task.index,
        pre_upper: pre.upper_voltage,
        pre_lower: pre.lower_voltage,
        pre_overload: pre.asset_overload,
        pre_any: pre.has_violation,
        resolved_upper: pre.upper_voltage && post.max_upper_voltage_excess <= tol,
        resolved_lower: pre.lower_voltage && post.max_lower_voltage_excess <= tol,
        resolved_overload: pre.asset_overload && post.max_loading_excess <= tol,
        resolved_all: pre.has_violation && !post.has_violation,
        post_violation: post.has_violation,
        max_loading_post: sol.loading.iter().fold(0.0_f64, |a, &l| a.max(l)),
        min_voltage_post: min_v,
        max_voltage_post: max_v,
        relative_p_curtailment: p_ratio,
        relative_q_curtailment: q_ratio,
        available_flex,
        decision_time_s: None,
    })
}

fn pre_report(grid: &Grid, task: &SupplyTask, tol: f64) -> Result<ViolationReport> {
    match &task.labels {
        Some(labels) => Ok(labels.clone()),
        None => {
            let (p, q) = task.reference_setpoints();
            crate::opf::check_feasibility(grid, task, &p, &q, tol)
        }
    }
}

/// Runs an arbitrary policy over every task of the dataset: a full episode
/// with persistent setpoints, judged on the final step's state. Returns one
/// record per task in dataset order.
pub fn evaluate_policy(
    grid: &Grid,
    dataset: &Dataset,
    env_config: &EnvConfig,
    tol: f64,
    policy: impl Fn(&[f64]) -> Vec<f64> + Sync,
) -> Result<(Vec<EvalRecord>, SummaryTable)> {
    if dataset.grid_hash != grid.content_hash() {
        return Err(Error::Dataset("dataset belongs to a different grid".into()));
    }
    let template = GridEnv::new(grid.clone(), env_config.clone())?;
    let records: Vec<EvalRecord> = dataset
        .tasks
        .par_iter()
        .map(|task| -> Result<EvalRecord> {
            let mut env = template.clone();
            let pre = pre_report(grid, task, tol)?;
            let last = env.rollout(task.clone(), &policy)?;
            record_for(grid, task, &pre, &last.info.p_set, &last.info.q_set, tol)
        })
        .collect::<Result<_>>()?;
    let summary = SummaryTable::from_records(&records);
    Ok((records, summary))
}

/// Evaluates a trained agent greedily (no exploration noise) against its
/// grid. Fails when the checkpoint was trained on a different grid.
pub fn evaluate(
    checkpoint: &AgentCheckpoint,
    grid: &Grid,
    dataset: &Dataset,
    tol: f64,
) -> Result<(Vec<EvalRecord>, SummaryTable)> {
    let grid_hash = grid.content_hash();
    if checkpoint.grid_hash != grid_hash {
        return Err(Error::GridHashMismatch {
            checkpoint: checkpoint.grid_hash.clone(),
            grid: grid_hash,
        });
    }
    let env_config = EnvConfig {
        steps_per_task: checkpoint.config.steps_per_task,
        lambda: checkpoint.config.lambda,
        feasibility_tol: tol,
        pf: PfOptions::default(),
    };
    let agent = &checkpoint.agent;
    evaluate_policy(grid, dataset, &env_config, tol, |obs| {
        agent.act(obs).expect("observation matches the trained network")
    })
}

/// Runs the OPF baseline over every task; `decision_time_s` carries each
/// solve's wall time.
pub fn evaluate_opf(
    grid: &Grid,
    dataset: &Dataset,
    opts: &OpfOptions,
    tol: f64,
) -> Result<(Vec<EvalRecord>, SummaryTable)> {
    if dataset.grid_hash != grid.content_hash() {
        return Err(Error::Dataset("dataset belongs to a different grid".into()));
    }
    let records: Vec<EvalRecord> = dataset
        .tasks
        .par_iter()
        .map(|task| -> Result<EvalRecord> {
            let pre = pre_report(grid, task, tol)?;
            let sol = solve_opf(grid, task, opts)?;
            let mut record = record_for(grid, task, &pre, &sol.p_set, &sol.q_set, tol)?;
            record.decision_time_s = Some(sol.solve_time);
            Ok(record)
        })
        .collect::<Result<_>>()?;
    let mut summary = SummaryTable::from_records(&records);
    let times: Vec<f64> = records.iter().filter_map(|r| r.decision_time_s).collect();
    if !times.is_empty() {
        summary.opf_per_task_s = Some(times.iter().sum::<f64>() / times.len() as f64);
    }
    Ok((records, summary))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScatterMode {
    /// x: relative P curtailment, y: worst post-action loading.
    LoadingVsP,
    /// x: relative P curtailment, y: lowest post-action voltage.
    VminVsP,
    /// x: relative Q curtailment, y: worst post-action loading.
    LoadingVsQ,
}

impl FromStr for ScatterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loading_vs_p" => Ok(ScatterMode::LoadingVsP),
            "vmin_vs_p" => Ok(ScatterMode::VminVsP),
            "loading_vs_q" => Ok(ScatterMode::LoadingVsQ),
            other => Err(Error::Config(format!(
                "unknown scatter mode '{other}' (expected loading_vs_p, vmin_vs_p, or loading_vs_q)"
            ))),
        }
    }
}

/// One CSV row per task and series; the colour column is the available
/// flexibility converted to kW. Output is deterministic given the records.
pub fn emit_scatter(
    rl_records: &[EvalRecord],
    opf_records: Option<&[EvalRecord]>,
    mode: ScatterMode,
    base_mva: f64,
) -> Result<String> {
    if rl_records.is_empty() {
        return Err(Error::Dataset("no records to plot".into()));
    }
    let mut out = String::from("series,task,x,y,flex_kw\n");
    let mut push = |series: &str, records: &[EvalRecord]| {
        for r in records {
            let x = match mode {
                ScatterMode::LoadingVsP | ScatterMode::VminVsP => r.relative_p_curtailment,
                ScatterMode::LoadingVsQ => r.relative_q_curtailment,
            }
            .unwrap_or(0.0);
            let y = match mode {
                ScatterMode::LoadingVsP | ScatterMode::LoadingVsQ => r.max_loading_post,
                ScatterMode::VminVsP => r.min_voltage_post,
            };
            let flex_kw = r.available_flex * base_mva * 1000.0;
            writeln!(out, "{series},{},{x},{y},{flex_kw}", r.task_index).expect("string write");
        }
    };
    push("rl", rl_records);
    if let Some(opf) = opf_records {
        push("opf", opf);
    }
    Ok(out)
}

/// Timing comparison on identical tasks: median over `repeats` of the mean
/// per-task wall time for the agent's full decision rollout and for the
/// OPF.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub inference_per_task_s: f64,
    pub opf_per_task_s: f64,
    pub tasks_used: usize,
    pub repeats: usize,
}

impl BenchReport {
    pub fn merge_into(&self, summary: &mut SummaryTable) {
        summary.inference_per_task_s = Some(self.inference_per_task_s);
        summary.opf_per_task_s = Some(self.opf_per_task_s);
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    values[values.len() / 2]
}

pub fn bench(
    grid: &Grid,
    dataset: &Dataset,
    checkpoint: &AgentCheckpoint,
    opf_opts: &OpfOptions,
    repeats: usize,
) -> Result<BenchReport> {
    if dataset.len() < 20 {
        return Err(Error::Dataset(format!(
            "bench needs at least 20 tasks, dataset holds {}",
            dataset.len()
        )));
    }
    if checkpoint.grid_hash != grid.content_hash() {
        return Err(Error::GridHashMismatch {
            checkpoint: checkpoint.grid_hash.clone(),
            grid: grid.content_hash(),
        });
    }
    let repeats = repeats.max(1);
    // A fixed slice keeps the comparison affordable on large test sets.
    // Violating tasks come first: those are the states where both methods
    // do real work.
    let mut picked: Vec<usize> = dataset.violating_task_ids().into_iter().take(20).collect();
    for id in 0..dataset.len() {
        if picked.len() >= 20 {
            break;
        }
        if !picked.contains(&id) {
            picked.push(id);
        }
    }
    let tasks: Vec<&SupplyTask> = picked.iter().map(|&id| &dataset.tasks[id]).collect();

    let env_config = EnvConfig {
        steps_per_task: checkpoint.config.steps_per_task,
        lambda: checkpoint.config.lambda,
        feasibility_tol: checkpoint.config.feasibility_tol,
        pf: PfOptions::default(),
    };
    let mut env = GridEnv::new(grid.clone(), env_config)?;
    let agent = &checkpoint.agent;

    let mut agent_means = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let begin = Instant::now();
        for task in &tasks {
            env.rollout((*task).clone(), |obs| agent.act(obs).expect("observation fits"))?;
        }
        agent_means.push(begin.elapsed().as_secs_f64() / tasks.len() as f64);
    }

    let mut opf_means = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let begin = Instant::now();
        for task in &tasks {
            solve_opf(grid, task, opf_opts)?;
        }
        opf_means.push(begin.elapsed().as_secs_f64() / tasks.len() as f64);
    }

    Ok(BenchReport {
        inference_per_task_s: median(agent_means),
        opf_per_task_s: median(opf_means),
        tasks_used: tasks.len(),
        repeats,
    })
}
