//! The grid environment: applies curtailment setpoints, re-solves the
//! physics, and exposes only the observable slice of the state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_admittance, AdmittanceMatrix, Grid};
use crate::opf::ViolationReport;
use crate::powerflow::{solve_power_flow_with, InjectionSet, PfOptions, PowerFlowSolution};
use crate::scenario::{FlexBox, SupplyTask};

use super::reward::{compute_reward, RewardTerms};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Consecutive presentations of one task before the episode ends.
    pub steps_per_task: usize,
    /// Reward normalizer factor; must exceed 1.
    pub lambda: f64,
    pub feasibility_tol: f64,
    pub pf: PfOptions,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            steps_per_task: 5,
            lambda: 2.0,
            feasibility_tol: crate::opf::DEFAULT_FEASIBILITY_TOL,
            pf: PfOptions::default(),
        }
    }
}

/// Observation layout: for every observable bus (ascending id) the triple
/// (P, Q, V), then for every controllable bus its four box bounds.
pub fn observation_vector(
    observable: &[usize],
    inj: &InjectionSet,
    v_mag: &[f64],
    flex: &[FlexBox],
) -> Vec<f64> {
    let mut obs = Vec::with_capacity(3 * observable.len() + 4 * flex.len());
    for &bus in observable {
        obs.push(inj.p[bus]);
        obs.push(inj.q[bus]);
        obs.push(v_mag[bus]);
    }
    for f in flex {
        obs.push(f.p_min);
        obs.push(f.p_max);
        obs.push(f.q_min);
        obs.push(f.q_max);
    }
    obs
}

/// Result of one environment step.
#[derive(Clone, Debug)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Full-state diagnostics the agent never sees; evaluation reads them.
#[derive(Clone, Debug)]
pub struct StepInfo {
    pub report: ViolationReport,
    pub terms: RewardTerms,
    pub p_set: Vec<f64>,
    pub q_set: Vec<f64>,
}

/// Single-task episodic environment. One instance is single-threaded;
/// clone it for concurrent rollouts.
#[derive(Clone)]
pub struct GridEnv {
    grid: Grid,
    ybus: AdmittanceMatrix,
    config: EnvConfig,
    observable: Vec<usize>,
    controllable: Vec<usize>,
    task: Option<SupplyTask>,
    p_set: Vec<f64>,
    q_set: Vec<f64>,
    injections: InjectionSet,
    last_solution: Option<PowerFlowSolution>,
    steps_taken: usize,
}

impl GridEnv {
    pub fn new(grid: Grid, config: EnvConfig) -> Result<Self> {
        let controllable = grid.controllable_buses();
        if controllable.is_empty() {
            return Err(Error::Env("environment needs at least one controllable bus".into()));
        }
        if config.steps_per_task == 0 {
            return Err(Error::Config("steps_per_task must be >= 1".into()));
        }
        let observable = grid.observable_buses();
        let ybus = build_admittance(&grid);
        let n = grid.bus_count();
        Ok(GridEnv {
            grid,
            ybus,
            config,
            observable,
            controllable,
            task: None,
            p_set: vec![],
            q_set: vec![],
            injections: InjectionSet::zeros(n),
            last_solution: None,
            steps_taken: 0,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn observation_dim(&self) -> usize {
        3 * self.observable.len() + 4 * self.controllable.len()
    }

    pub fn action_dim(&self) -> usize {
        2 * self.controllable.len()
    }

    /// Current controllable setpoints; persists across the steps of one
    /// task.
    pub fn setpoints(&self) -> (&[f64], &[f64]) {
        (&self.p_set, &self.q_set)
    }

    /// Loads a task at its uncurtailed operating point and returns the
    /// first observation. Tasks whose reference power flow diverges are
    /// rejected; the dataset factory filters those out beforehand.
    pub fn reset(&mut self, task: SupplyTask) -> Result<Vec<f64>> {
        task.check_matches(&self.grid)?;
        let inj = task.reference_injections();
        let sol = solve_power_flow_with(&self.grid, &self.ybus, &inj, &self.config.pf)?;
        if !sol.converged {
            return Err(Error::TaskRejected(format!(
                "power flow diverged at the reference state of task {}",
                task.index
            )));
        }
        let (p_set, q_set) = task.reference_setpoints();
        self.p_set = p_set;
        self.q_set = q_set;
        self.injections = inj;
        let obs = observation_vector(&self.observable, &self.injections, &sol.v_mag, &task.flex);
        self.last_solution = Some(sol);
        self.task = Some(task);
        self.steps_taken = 0;
        Ok(obs)
    }

    /// Maps the action into the flexibility boxes and updates the stored
    /// setpoints and injections without re-solving. Components are clipped
    /// to [-1, 1]; -1 is the lower bound, +1 the upper.
    pub fn apply_action(&mut self, action: &[f64]) -> Result<InjectionSet> {
        let task = self.task.as_ref().ok_or_else(|| Error::Env("reset the environment first".into()))?;
        let k = self.controllable.len();
        if action.len() != 2 * k {
            return Err(Error::Dimension(format!(
                "action of length {}, environment expects {}",
                action.len(),
                2 * k
            )));
        }
        for (j, f) in task.flex.iter().enumerate() {
            let a_p = action[2 * j].clamp(-1.0, 1.0);
            let a_q = action[2 * j + 1].clamp(-1.0, 1.0);
            self.p_set[j] = f.p_min + (a_p + 1.0) / 2.0 * (f.p_max - f.p_min);
            self.q_set[j] = f.q_min + (a_q + 1.0) / 2.0 * (f.q_max - f.q_min);
        }
        self.injections = task.injections_with(&self.grid, &self.p_set, &self.q_set)?;
        Ok(self.injections.clone())
    }

    /// Applies the action, re-solves the grid, and scores the outcome. The
    /// reward reads the full state; the observation only the observable
    /// buses.
    pub fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.task.is_none() {
            return Err(Error::Env("reset the environment first".into()));
        }
        if self.steps_taken >= self.config.steps_per_task {
            return Err(Error::Env("stepping a done environment".into()));
        }
        self.apply_action(action)?;
        let task = self.task.as_ref().expect("task present");

        let sol = solve_power_flow_with(&self.grid, &self.ybus, &self.injections, &self.config.pf)?;
        let terms = compute_reward(&self.grid, task, &sol, &self.p_set, self.config.lambda)?;
        let report = ViolationReport::from_solution(&self.grid, &sol, self.config.feasibility_tol);
        let observation =
            observation_vector(&self.observable, &self.injections, &sol.v_mag, &task.flex);

        self.steps_taken += 1;
        let done = self.steps_taken >= self.config.steps_per_task;
        let reward = terms.reward;
        self.last_solution = Some(sol);
        Ok(Step {
            observation,
            reward,
            done,
            info: StepInfo { report, terms, p_set: self.p_set.clone(), q_set: self.q_set.clone() },
        })
    }

    /// Greedy rollout of a full episode; returns the final step.
    pub fn rollout(&mut self, task: SupplyTask, mut policy: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Step> {
        let mut obs = self.reset(task)?;
        let mut last = None;
        for _ in 0..self.config.steps_per_task {
            let action = policy(&obs);
            let step = self.step(&action)?;
            obs = step.observation.clone();
            last = Some(step);
        }
        Ok(last.expect("steps_per_task >= 1"))
    }
}
