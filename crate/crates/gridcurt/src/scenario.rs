//! Supply-task dataset factory: synthetic load and PV time series,
//! violation labelling, and augmentation of critical states.
//!
//! Profile shapes are parametric so datasets are reproducible from
//! (grid, config, seed) alone:
//!
//! * household load: a diurnal double-peak shape over the hour of day
//!   (see [`load_shape`]), scaled by the peak and a per-bus weight, with
//!   multiplicative lognormal noise
//! * PV: a clear-sky half-sine between 06:00 and 18:00 ([`pv_shape`]),
//!   scaled by a seasonal factor ([`seasonal_factor`]) and subject to
//!   random cloud dropout
//! * reactive power: fixed power factor for loads, unity for PV
//!
//! The per-step RNG is keyed by (seed, step), so parallel and serial
//! generation produce identical bytes.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::opf::{check_feasibility, ViolationReport};
use crate::powerflow::InjectionSet;

/// Per-controllable-bus flexibility box of one supply task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlexBox {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

/// One quarter-hour operating point: uncurtailed injections for every bus
/// plus the flexibility boxes of the controllable buses (ascending bus id).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupplyTask {
    pub index: u64,
    pub p_ref: Vec<f64>,
    pub q_ref: Vec<f64>,
    pub flex: Vec<FlexBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<ViolationReport>,
}

impl SupplyTask {
    /// Builds a task from reference injections. Controllable references are
    /// clamped into the bus's static bounds; the task box then spans from
    /// zero to the reference (curtailment moves an injection towards zero),
    /// intersected with the static bounds. Reactive boxes are the static
    /// bounds.
    pub fn from_refs(grid: &Grid, index: u64, p_ref: Vec<f64>, q_ref: Vec<f64>) -> Result<Self> {
        let n = grid.bus_count();
        if p_ref.len() != n || q_ref.len() != n {
            return Err(Error::Dimension("reference injections do not match grid size".into()));
        }
        let mut task = SupplyTask { index, p_ref, q_ref, flex: Vec::new(), labels: None };
        for &id in &grid.controllable_buses() {
            let bus = &grid.buses[id];
            let p = task.p_ref[id].clamp(bus.p_min, bus.p_max);
            let q = task.q_ref[id].clamp(bus.q_min, bus.q_max);
            task.p_ref[id] = p;
            task.q_ref[id] = q;
            task.flex.push(FlexBox {
                bus: id,
                p_min: p.min(0.0).max(bus.p_min),
                p_max: p.max(0.0).min(bus.p_max),
                q_min: bus.q_min,
                q_max: bus.q_max,
            });
        }
        Ok(task)
    }

    /// The uncurtailed operating point.
    pub fn reference_injections(&self) -> InjectionSet {
        InjectionSet { p: self.p_ref.clone(), q: self.q_ref.clone() }
    }

    /// Reference injections with the controllable buses overridden by the
    /// given setpoints (ascending bus-id order).
    pub fn injections_with(&self, grid: &Grid, p_set: &[f64], q_set: &[f64]) -> Result<InjectionSet> {
        let controllable = grid.controllable_buses();
        if p_set.len() != controllable.len() || q_set.len() != controllable.len() {
            return Err(Error::Dimension(format!(
                "setpoint vectors of length {}/{} for {} controllable buses",
                p_set.len(),
                q_set.len(),
                controllable.len()
            )));
        }
        let mut inj = self.reference_injections();
        for (j, &bus) in controllable.iter().enumerate() {
            inj.p[bus] = p_set[j];
            inj.q[bus] = q_set[j];
        }
        Ok(inj)
    }

    /// Reference setpoints at the controllable buses.
    pub fn reference_setpoints(&self) -> (Vec<f64>, Vec<f64>) {
        let p = self.flex.iter().map(|f| self.p_ref[f.bus]).collect();
        let q = self.flex.iter().map(|f| self.q_ref[f.bus]).collect();
        (p, q)
    }

    /// Verifies that the task belongs to this grid: vector lengths, box
    /// alignment with the controllable buses, box ordering, and references
    /// inside their boxes.
    pub fn check_matches(&self, grid: &Grid) -> Result<()> {
        let n = grid.bus_count();
        if self.p_ref.len() != n || self.q_ref.len() != n {
            return Err(Error::Dimension("task injection vectors do not match grid size".into()));
        }
        let controllable = grid.controllable_buses();
        if self.flex.len() != controllable.len() {
            return Err(Error::Dimension(format!(
                "task has {} flexibility boxes, grid has {} controllable buses",
                self.flex.len(),
                controllable.len()
            )));
        }
        for (f, &bus) in self.flex.iter().zip(&controllable) {
            if f.bus != bus {
                return Err(Error::Dimension(format!(
                    "flexibility box for bus {} does not match controllable bus {bus}",
                    f.bus
                )));
            }
            if f.p_min > f.p_max || f.q_min > f.q_max {
                return Err(Error::Dataset(format!("inverted flexibility box at bus {bus}")));
            }
            let eps = 1e-9;
            if self.p_ref[bus] < f.p_min - eps || self.p_ref[bus] > f.p_max + eps {
                return Err(Error::Dataset(format!(
                    "reference injection at bus {bus} lies outside its flexibility box"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Augmented,
}

/// An ordered list of supply tasks tied to one grid. Augmented datasets are
/// used for training only; the original set is the held-out test data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub grid_hash: String,
    pub provenance: Provenance,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Tasks dropped because the uncurtailed power flow diverged; they
    /// carry no valid label and appear in neither split.
    pub excluded_non_physical: usize,
    pub tasks: Vec<SupplyTask>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    grid_hash: String,
    provenance: Provenance,
    seed: u64,
    config: serde_json::Value,
    excluded_non_physical: usize,
    task_count: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Indices of labeled tasks whose uncurtailed state violates a limit.
    pub fn violating_task_ids(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.labels.as_ref().is_some_and(|l| l.has_violation))
            .map(|(i, _)| i)
            .collect()
    }

    /// One header line followed by one task per line.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        let header = DatasetHeader {
            grid_hash: self.grid_hash.clone(),
            provenance: self.provenance,
            seed: self.seed,
            config: self.config.clone(),
            excluded_non_physical: self.excluded_non_physical,
            task_count: self.tasks.len(),
        };
        out.push_str(&serde_json::to_string(&header)?);
        out.push('\n');
        for task in &self.tasks {
            out.push_str(&serde_json::to_string(task)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: DatasetHeader = serde_json::from_str(
            lines.next().ok_or_else(|| Error::Dataset("empty dataset file".into()))?,
        )?;
        let tasks: Vec<SupplyTask> =
            lines.map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
        if tasks.len() != header.task_count {
            return Err(Error::Dataset(format!(
                "header announces {} tasks, file holds {}",
                header.task_count,
                tasks.len()
            )));
        }
        Ok(Dataset {
            grid_hash: header.grid_hash,
            provenance: header.provenance,
            seed: header.seed,
            config: header.config,
            excluded_non_physical: header.excluded_non_physical,
            tasks,
        })
    }
}

/// Configuration of the synthetic annual-style profile generator. Peaks are
/// in per-unit on the system base.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileConfig {
    /// Number of quarter-hour steps to generate.
    pub n_steps: usize,
    /// Peak household consumption per bus (positive).
    pub household_peak: f64,
    /// Clear-sky peak PV generation per PV bus (zero disables PV).
    pub pv_peak: f64,
    /// Lognormal sigma of the load noise; also drives cloud dropout.
    pub noise_level: f64,
    /// Buses carrying PV instead of a household load.
    pub pv_buses: Vec<usize>,
    /// Inductive power factor of household loads.
    #[serde(default = "default_power_factor")]
    pub power_factor: f64,
    /// Day of year of the first generated step.
    #[serde(default = "default_start_day")]
    pub start_day: u32,
}

fn default_power_factor() -> f64 {
    0.95
}

fn default_start_day() -> u32 {
    150
}

/// Diurnal double-peak household shape over the hour of day.
pub fn load_shape(hour: f64) -> f64 {
    0.30 + 0.30 * (-(hour - 8.5).powi(2) / 6.0).exp()
        + 0.70 * (-(hour - 19.0).powi(2) / 8.0).exp()
        + 0.10 * (-(hour - 13.0).powi(2) / 18.0).exp()
}

/// Clear-sky PV bell between 06:00 and 18:00.
pub fn pv_shape(hour: f64) -> f64 {
    if hour <= 6.0 || hour >= 18.0 {
        0.0
    } else {
        (PI * (hour - 6.0) / 12.0).sin()
    }
}

/// Seasonal irradiation factor peaking at the summer solstice.
pub fn seasonal_factor(day_of_year: f64) -> f64 {
    0.65 + 0.35 * (TAU * (day_of_year - 172.0) / 365.25).cos()
}

fn task_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates an unlabeled dataset of supply tasks. Deterministic in
/// (grid, config, seed).
pub fn generate_profiles(grid: &Grid, config: &ProfileConfig, seed: u64) -> Result<Dataset> {
    if config.n_steps == 0 {
        return Err(Error::Config("n_steps must be >= 1".into()));
    }
    if config.household_peak <= 0.0 {
        return Err(Error::Config("household_peak must be positive".into()));
    }
    if config.pv_peak < 0.0 {
        return Err(Error::Config("pv_peak must be non-negative".into()));
    }
    if !(0.0..=1.0).contains(&config.power_factor) || config.power_factor == 0.0 {
        return Err(Error::Config("power_factor must lie in (0, 1]".into()));
    }
    let n = grid.bus_count();
    let slack = grid.slack_bus();
    let mut is_pv = vec![false; n];
    for &bus in &config.pv_buses {
        if bus >= n || bus == slack {
            return Err(Error::Config(format!("pv bus {bus} is not a valid non-slack bus")));
        }
        is_pv[bus] = true;
    }

    // Static per-bus size weights, drawn once from the base stream.
    let mut weight_rng = task_rng(seed, 0);
    let weights: Vec<f64> = (0..n).map(|_| 0.7 + 0.6 * weight_rng.random::<f64>()).collect();

    let q_factor = (1.0 / config.power_factor.powi(2) - 1.0).sqrt();
    let cloud_prob = (0.3 * config.noise_level).clamp(0.0, 0.9);

    let mut tasks = Vec::with_capacity(config.n_steps);
    for t in 0..config.n_steps {
        let mut rng = task_rng(seed, t as u64 + 1);
        let hour = (t % 96) as f64 * 0.25;
        let day = config.start_day as f64 + (t / 96) as f64;

        let mut p_ref = vec![0.0; n];
        let mut q_ref = vec![0.0; n];
        for i in 0..n {
            if i == slack {
                continue;
            }
            if is_pv[i] {
                let cloud = if rng.random::<f64>() < cloud_prob {
                    0.15 + 0.45 * rng.random::<f64>()
                } else {
                    1.0
                };
                p_ref[i] =
                    config.pv_peak * weights[i] * pv_shape(hour) * seasonal_factor(day) * cloud;
            } else {
                let z: f64 = rng.sample(StandardNormal);
                p_ref[i] = -config.household_peak
                    * weights[i]
                    * load_shape(hour)
                    * (config.noise_level * z).exp();
                q_ref[i] = p_ref[i] * q_factor;
            }
        }
        tasks.push(SupplyTask::from_refs(grid, t as u64, p_ref, q_ref)?);
    }

    Ok(Dataset {
        grid_hash: grid.content_hash(),
        provenance: Provenance::Original,
        seed,
        config: serde_json::to_value(config)?,
        excluded_non_physical: 0,
        tasks,
    })
}

/// Labels every task with the violation report of its uncurtailed state.
/// Tasks whose power flow diverges carry no valid label; they are dropped
/// and counted in `excluded_non_physical`.
pub fn label_violations(grid: &Grid, dataset: Dataset, tol: f64) -> Result<Dataset> {
    let mut out = Dataset { tasks: Vec::with_capacity(dataset.tasks.len()), ..dataset };
    for mut task in dataset.tasks {
        let (p_set, q_set) = task.reference_setpoints();
        let report = check_feasibility(grid, &task, &p_set, &q_set, tol)?;
        if report.non_physical {
            out.excluded_non_physical += 1;
            continue;
        }
        task.labels = Some(report);
        out.tasks.push(task);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Std-dev of the truncated Gaussian bound noise, relative to the box
    /// width.
    pub bound_noise_sigma: f64,
    /// Minimum share of lower-voltage-band tasks among violating augmented
    /// tasks, reached by replication.
    pub lower_band_target_fraction: f64,
    /// Augmented tasks emitted per source task.
    pub multiplier: usize,
}

/// Perturbs one active-power box, preserving ordering and the sign
/// convention of the original box (generator boxes stay non-negative,
/// load boxes non-positive).
fn perturb_box(lo: f64, hi: f64, sigma: f64, z_lo: f64, z_hi: f64) -> (f64, f64) {
    let width = hi - lo;
    if sigma <= 0.0 || width <= 0.0 {
        return (lo, hi);
    }
    let mut new_lo = lo + sigma * width * z_lo.clamp(-2.0, 2.0);
    let mut new_hi = hi + sigma * width * z_hi.clamp(-2.0, 2.0);
    if lo >= 0.0 {
        new_lo = new_lo.max(0.0);
    }
    if hi <= 0.0 {
        new_hi = new_hi.min(0.0);
    }
    if new_lo > new_hi {
        if lo >= 0.0 {
            new_hi = new_lo;
        } else if hi <= 0.0 {
            new_lo = new_hi;
        } else {
            std::mem::swap(&mut new_lo, &mut new_hi);
        }
    }
    (new_lo, new_hi)
}

/// Emits `multiplier` perturbed copies of every task: active-power bounds
/// receive truncated Gaussian noise and the reference setpoint of every
/// controllable bus moves to its perturbed maximum. Each copy is relabeled;
/// lower-voltage-band tasks are then replicated until they reach the
/// configured share of violating tasks (when any exist to replicate).
pub fn augment(
    grid: &Grid,
    dataset: &Dataset,
    config: &AugmentConfig,
    seed: u64,
) -> Result<Dataset> {
    if config.multiplier < 1 {
        return Err(Error::Config("augmentation multiplier must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&config.lower_band_target_fraction) {
        return Err(Error::Config("lower_band_target_fraction must lie in [0, 1)".into()));
    }
    if dataset.tasks.iter().any(|t| t.labels.is_none()) {
        return Err(Error::Dataset("augmentation requires a labeled dataset".into()));
    }
    if dataset.grid_hash != grid.content_hash() {
        return Err(Error::Dataset("dataset was generated from a different grid".into()));
    }

    let tol = dataset
        .tasks
        .first()
        .map(|_| crate::opf::DEFAULT_FEASIBILITY_TOL)
        .unwrap_or(crate::opf::DEFAULT_FEASIBILITY_TOL);

    let mut excluded = 0usize;
    let mut tasks = Vec::with_capacity(dataset.tasks.len() * config.multiplier);
    for (src_idx, source) in dataset.tasks.iter().enumerate() {
        for copy in 0..config.multiplier {
            let stream = (src_idx * config.multiplier + copy) as u64 + 1;
            let mut rng = task_rng(seed, stream);
            let mut task = source.clone();
            for f in &mut task.flex {
                let z_lo: f64 = rng.sample(StandardNormal);
                let z_hi: f64 = rng.sample(StandardNormal);
                let (lo, hi) = perturb_box(f.p_min, f.p_max, config.bound_noise_sigma, z_lo, z_hi);
                f.p_min = lo;
                f.p_max = hi;
                task.p_ref[f.bus] = hi;
            }
            let (p_set, q_set) = task.reference_setpoints();
            let report = check_feasibility(grid, &task, &p_set, &q_set, tol)?;
            if report.non_physical {
                excluded += 1;
                continue;
            }
            task.labels = Some(report);
            tasks.push(task);
        }
    }

    // Rebalance: replicate lower-band tasks until they reach the target
    // share of violating tasks.
    let lb_ids: Vec<usize> = tasks
        .iter()
        .enumerate()
        .filter(|(_, t)| t.labels.as_ref().is_some_and(|l| l.lower_voltage))
        .map(|(i, _)| i)
        .collect();
    let violating = tasks
        .iter()
        .filter(|t| t.labels.as_ref().is_some_and(|l| l.has_violation))
        .count();
    let f = config.lower_band_target_fraction;
    if !lb_ids.is_empty() && violating > 0 && f > 0.0 {
        let need = f * violating as f64 - lb_ids.len() as f64;
        if need > 0.0 {
            let copies = (need / (1.0 - f)).ceil() as usize;
            for j in 0..copies {
                tasks.push(tasks[lb_ids[j % lb_ids.len()]].clone());
            }
        }
    }

    Ok(Dataset {
        grid_hash: dataset.grid_hash.clone(),
        provenance: Provenance::Augmented,
        seed,
        config: serde_json::to_value(config)?,
        excluded_non_physical: excluded,
        tasks,
    })
}

/// Train/test split by provenance: the non-augmented original set is held
/// out for testing, training uses the augmented set only.
#[derive(Clone, Debug)]
pub struct SplitDatasets {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn split(original: &Dataset, augmented: &Dataset) -> Result<SplitDatasets> {
    if original.provenance != Provenance::Original {
        return Err(Error::Dataset("test split must come from an original dataset".into()));
    }
    if augmented.provenance != Provenance::Augmented {
        return Err(Error::Dataset("train split must come from an augmented dataset".into()));
    }
    if original.grid_hash != augmented.grid_hash {
        return Err(Error::Dataset("datasets belong to different grids".into()));
    }
    Ok(SplitDatasets { train: augmented.clone(), test: original.clone() })
}
