//! Newton-Raphson AC power flow in polar form.
//!
//! Every non-slack bus is a PQ bus; the slack bus holds 1.0 p.u. at angle
//! zero and balances the system. The solver is a pure function of its
//! inputs: identical inputs produce bit-identical solutions, and multiple
//! solves may run concurrently on a shared grid.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_admittance, AdmittanceMatrix, Grid};

/// Per-bus complex power injections, generation positive. Entries at the
/// slack bus are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionSet {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InjectionSet {
    pub fn zeros(n: usize) -> Self {
        InjectionSet { p: vec![0.0; n], q: vec![0.0; n] }
    }

    fn check_dims(&self, n: usize) -> Result<()> {
        if self.p.len() != n || self.q.len() != n {
            return Err(Error::Dimension(format!(
                "injection vectors have lengths {}/{}, grid has {} buses",
                self.p.len(),
                self.q.len(),
                n
            )));
        }
        if self.p.iter().chain(self.q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("injection set".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PfOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Start from 1.0 p.u. at angle zero. When false, `start` supplies the
    /// initial state (falling back to flat if absent).
    pub flat_start: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions { tolerance: 1e-8, max_iterations: 30, flat_start: true, start: None }
    }
}

/// Converged (or last-iterate) AC state. Non-convergence is a value, not an
/// error: the caller decides what a diverged case means.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    /// Net injections computed from the voltage state, including the slack
    /// balance.
    pub p_bus: Vec<f64>,
    pub q_bus: Vec<f64>,
    pub s_from: Vec<Complex64>,
    pub s_to: Vec<Complex64>,
    /// Per-line apparent-power loading relative to the rating; 1.0 is at
    /// rating, taken at the worse end.
    pub loading: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
    pub singular_jacobian: bool,
}

/// Solves the power flow, building the admittance matrix internally.
pub fn solve_power_flow(grid: &Grid, inj: &InjectionSet, opts: &PfOptions) -> Result<PowerFlowSolution> {
    let ybus = build_admittance(grid);
    solve_power_flow_with(grid, &ybus, inj, opts)
}

/// Solves the power flow against a pre-built admittance matrix. Useful in
/// hot loops that re-solve the same grid with varying injections.
pub fn solve_power_flow_with(
    grid: &Grid,
    ybus: &AdmittanceMatrix,
    inj: &InjectionSet,
    opts: &PfOptions,
) -> Result<PowerFlowSolution> {
    let n = grid.bus_count();
    inj.check_dims(n)?;
    if opts.tolerance <= 0.0 {
        return Err(Error::Config("power flow tolerance must be > 0".into()));
    }

    let slack = grid.slack_bus();
    let free: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = free.len();

    let (mut v_mag, mut v_ang) = match (&opts.start, opts.flat_start) {
        (Some((vm, va)), false) if vm.len() == n && va.len() == n => (vm.clone(), va.clone()),
        _ => (vec![1.0; n], vec![0.0; n]),
    };
    v_mag[slack] = 1.0;
    v_ang[slack] = 0.0;

    let mut converged = false;
    let mut singular = false;
    let mut iterations = 0;
    let mut max_mismatch = f64::INFINITY;

    for iter in 0..=opts.max_iterations {
        let (p_calc, q_calc) = bus_power(ybus, &v_mag, &v_ang);
        max_mismatch = free
            .iter()
            .flat_map(|&i| [(p_calc[i] - inj.p[i]).abs(), (q_calc[i] - inj.q[i]).abs()])
            .fold(0.0, f64::max);
        iterations = iter;
        if !max_mismatch.is_finite() {
            break;
        }
        if max_mismatch <= opts.tolerance {
            converged = true;
            break;
        }
        if iter == opts.max_iterations {
            break;
        }

        let jac = jacobian(ybus, &v_mag, &v_ang, &p_calc, &q_calc, &free);
        let mut rhs = DVector::zeros(2 * m);
        for (a, &i) in free.iter().enumerate() {
            rhs[a] = inj.p[i] - p_calc[i];
            rhs[a + m] = inj.q[i] - q_calc[i];
        }
        let lu = jac.lu();
        let Some(dx) = lu.solve(&rhs) else {
            singular = true;
            break;
        };
        for (a, &i) in free.iter().enumerate() {
            v_ang[i] += dx[a];
            v_mag[i] += dx[a + m];
        }
        if v_mag.iter().any(|v| !v.is_finite() || *v <= 0.0)
            || v_ang.iter().any(|a| !a.is_finite())
        {
            // Iterate left the physical region; report the divergence.
            break;
        }
    }

    let (p_bus, q_bus) = bus_power(ybus, &v_mag, &v_ang);
    let (s_from, s_to, loading) = branch_flows(grid, &v_mag, &v_ang);
    Ok(PowerFlowSolution {
        v_mag,
        v_ang,
        p_bus,
        q_bus,
        s_from,
        s_to,
        loading,
        converged,
        iterations,
        max_mismatch,
        singular_jacobian: singular,
    })
}

/// Per-bus P/Q residuals of the nodal power balance: calculated minus
/// specified. Entries at the slack bus compare against the provided
/// injection values and carry no meaning for convergence.
pub fn mismatch(
    grid: &Grid,
    inj: &InjectionSet,
    v_mag: &[f64],
    v_ang: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = grid.bus_count();
    inj.check_dims(n)?;
    if v_mag.len() != n || v_ang.len() != n {
        return Err(Error::Dimension("voltage state length does not match grid".into()));
    }
    let ybus = build_admittance(grid);
    let (p_calc, q_calc) = bus_power(&ybus, v_mag, v_ang);
    let dp = (0..n).map(|i| p_calc[i] - inj.p[i]).collect();
    let dq = (0..n).map(|i| q_calc[i] - inj.q[i]).collect();
    Ok((dp, dq))
}

/// Terminal complex flows of every line and the relative loading
/// max(|S_from|, |S_to|) / s_max.
pub fn branch_flows(
    grid: &Grid,
    v_mag: &[f64],
    v_ang: &[f64],
) -> (Vec<Complex64>, Vec<Complex64>, Vec<f64>) {
    let volts: Vec<Complex64> =
        v_mag.iter().zip(v_ang).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
    let mut s_from = Vec::with_capacity(grid.lines.len());
    let mut s_to = Vec::with_capacity(grid.lines.len());
    let mut loading = Vec::with_capacity(grid.lines.len());
    for line in &grid.lines {
        let series = Complex64::new(line.r, line.x).inv();
        let shunt = Complex64::new(0.0, line.b_shunt / 2.0);
        let vf = volts[line.from_bus];
        let vt = volts[line.to_bus];
        let i_from = (vf - vt) * series + vf * shunt;
        let i_to = (vt - vf) * series + vt * shunt;
        let sf = vf * i_from.conj();
        let st = vt * i_to.conj();
        s_from.push(sf);
        s_to.push(st);
        loading.push(sf.norm().max(st.norm()) / line.s_max);
    }
    (s_from, s_to, loading)
}

/// Net complex power V_i * conj(sum_j Y_ij V_j) at every bus, split into
/// real and reactive parts.
fn bus_power(ybus: &AdmittanceMatrix, v_mag: &[f64], v_ang: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = ybus.dimension();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut sum = Complex64::ZERO;
        for &(j, y) in ybus.row(i) {
            sum += y * Complex64::from_polar(v_mag[j], v_ang[j]);
        }
        let s = Complex64::from_polar(v_mag[i], v_ang[i]) * sum.conj();
        p[i] = s.re;
        q[i] = s.im;
    }
    (p, q)
}

/// Full polar Jacobian over the free buses, ordered [dP; dQ] rows by
/// [d_theta; d_vmag] columns; rebuilt from scratch every iteration.
fn jacobian(
    ybus: &AdmittanceMatrix,
    v_mag: &[f64],
    v_ang: &[f64],
    p_calc: &[f64],
    q_calc: &[f64],
    free: &[usize],
) -> DMatrix<f64> {
    let m = free.len();
    let n = ybus.dimension();
    let mut col_of = vec![usize::MAX; n];
    for (a, &i) in free.iter().enumerate() {
        col_of[i] = a;
    }

    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    for (row, &i) in free.iter().enumerate() {
        let vi = v_mag[i];
        for &(j, y) in ybus.row(i) {
            let (g, b) = (y.re, y.im);
            if j == i {
                // dP_i/d_theta_i, dP_i/dV_i, dQ_i/d_theta_i, dQ_i/dV_i
                jac[(row, row)] = -q_calc[i] - b * vi * vi;
                jac[(row, m + row)] = p_calc[i] / vi + g * vi;
                jac[(m + row, row)] = p_calc[i] - g * vi * vi;
                jac[(m + row, m + row)] = q_calc[i] / vi - b * vi;
            } else if col_of[j] != usize::MAX {
                let col = col_of[j];
                let vj = v_mag[j];
                let theta = v_ang[i] - v_ang[j];
                let (sin, cos) = theta.sin_cos();
                jac[(row, col)] = vi * vj * (g * sin - b * cos);
                jac[(row, m + col)] = vi * (g * cos + b * sin);
                jac[(m + row, col)] = -vi * vj * (g * cos + b * sin);
                jac[(m + row, m + col)] = vi * (g * sin - b * cos);
            }
        }
    }
    jac
}
