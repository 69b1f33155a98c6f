//! Piecewise-constant leader controls, the admissible set, the L1 control
//! cost and the running-cost library.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::kernels::norm_sq;
use crate::measures::{w1_with_plan, Configuration, EmpiricalMeasure};
use crate::sum::{compensated_sum, CompensatedVec};

const MODULE: &str = "control";

/// `u: [0, T] -> (R^d)^m`, constant on each of `n_cells` equal cells.
/// Values are stored cell-major: `values[(cell * m + k) * d + j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    pub n_cells: usize,
    pub leaders: usize,
    pub dim: usize,
    pub horizon: f64,
    pub radius: f64,
    pub values: Vec<f64>,
}

impl ControlSignal {
    pub fn new(n_cells: usize, leaders: usize, dim: usize, horizon: f64, radius: f64, values: Vec<f64>) -> Result<Self> {
        if n_cells == 0 || leaders == 0 || dim == 0 {
            return Err(Error::invalid(MODULE, "cells, leaders and dimension must be positive"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(MODULE, "horizon must be positive"));
        }
        if !(radius > 0.0) || radius.is_nan() {
            return Err(Error::invalid(MODULE, "admissible radius must be positive"));
        }
        if values.len() != n_cells * leaders * dim {
            return Err(Error::dims(MODULE, n_cells * leaders * dim, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(MODULE, "control values must be finite"));
        }
        Ok(Self {
            n_cells,
            leaders,
            dim,
            horizon,
            radius,
            values,
        })
    }

    pub fn zeros(n_cells: usize, leaders: usize, dim: usize, horizon: f64, radius: f64) -> Result<Self> {
        Self::new(n_cells, leaders, dim, horizon, radius, vec![0.0; n_cells * leaders * dim])
    }

    /// Same shape, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.n_cells, self.leaders, self.dim, self.horizon, self.radius, values)
    }

    pub fn cell_duration(&self) -> f64 {
        self.horizon / self.n_cells as f64
    }

    /// All leader values of one cell (`m * d` entries).
    pub fn cell(&self, cell: usize) -> &[f64] {
        let s = self.leaders * self.dim;
        &self.values[cell * s..(cell + 1) * s]
    }

    pub fn value(&self, cell: usize, leader: usize) -> &[f64] {
        let base = (cell * self.leaders + leader) * self.dim;
        &self.values[base..base + self.dim]
    }

    /// Cell index active at time `t` (right-continuous, last cell closed).
    pub fn cell_at(&self, t: f64) -> usize {
        let c = (t / self.cell_duration()).floor();
        (c.max(0.0) as usize).min(self.n_cells - 1)
    }

    pub fn is_admissible(&self) -> bool {
        self.values
            .chunks_exact(self.dim)
            .all(|v| norm_sq(v).sqrt() <= self.radius)
    }

    /// Share of `(cell, leader)` blocks that are exactly zero.
    pub fn sparsity_fraction(&self) -> f64 {
        let blocks = self.n_cells * self.leaders;
        let zeros = self
            .values
            .chunks_exact(self.dim)
            .filter(|v| v.iter().all(|&x| x == 0.0))
            .count();
        zeros as f64 / blocks as f64
    }

    /// Per-leader share of exactly-zero cells.
    pub fn sparsity_per_leader(&self) -> Vec<f64> {
        (0..self.leaders)
            .map(|k| {
                let zeros = (0..self.n_cells)
                    .filter(|&c| self.value(c, k).iter().all(|&x| x == 0.0))
                    .count();
                zeros as f64 / self.n_cells as f64
            })
            .collect()
    }

    /// CSV, cell-major: `cell, t_start, t_end, leader, u1..ud`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["cell".to_string(), "t_start".into(), "t_end".into(), "leader".into()];
        header.extend((1..=self.dim).map(|j| format!("u{j}")));
        w.write_record(&header)?;
        let dt = self.cell_duration();
        for c in 0..self.n_cells {
            for k in 0..self.leaders {
                let mut row = vec![
                    c.to_string(),
                    (c as f64 * dt).to_string(),
                    ((c + 1) as f64 * dt).to_string(),
                    k.to_string(),
                ];
                row.extend(self.value(c, k).iter().map(|x| x.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Radial projection of `v` onto the closed ball `B(0, radius)`, in place.
/// The result satisfies `|v| <= radius` as evaluated, so projecting twice is
/// a bitwise no-op.
pub(crate) fn project_ball(v: &mut [f64], radius: f64) {
    let n = norm_sq(v).sqrt();
    if n <= radius {
        return;
    }
    let s = radius / n;
    v.iter_mut().for_each(|x| *x *= s);
    while norm_sq(v).sqrt() > radius {
        v.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
    }
}

/// Project each `(cell, leader)` block onto `B(0, U)`.
pub fn project_admissible(u: &ControlSignal) -> ControlSignal {
    let mut out = u.clone();
    let d = u.dim;
    for block in out.values.chunks_exact_mut(d) {
        project_ball(block, u.radius);
    }
    out
}

/// `(1/m) sum_k int_0^T |u_k(t)| dt`, exact for piecewise-constant signals.
pub fn control_l1_cost(u: &ControlSignal) -> f64 {
    let total = compensated_sum(u.values.chunks_exact(u.dim).map(|v| norm_sq(v).sqrt()));
    total * u.cell_duration() / u.leaders as f64
}

/// `int_0^t u(s) ds` for every leader (`m * d` entries).
pub fn control_primitive(u: &ControlSignal, t: f64) -> Result<Vec<f64>> {
    if !(0.0..=u.horizon).contains(&t) {
        return Err(Error::invalid(MODULE, format!("time {t} outside [0, {}]", u.horizon)));
    }
    let dt = u.cell_duration();
    let s = u.leaders * u.dim;
    let mut acc = CompensatedVec::zeros(s);
    let full = ((t / dt).floor() as usize).min(u.n_cells);
    for c in 0..full {
        acc.add_scaled(dt, u.cell(c));
    }
    if full < u.n_cells {
        let rest = t - full as f64 * dt;
        if rest > 0.0 {
            acc.add_scaled(rest, u.cell(full));
        }
    }
    Ok(acc.value())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RunningCostFamily {
    /// `int |v - mean_v(mu)|^2 dmu`.
    VelocityConsensus,
    /// `(1/m) sum_k (|y_k - y*|^2 + |w_k - w*|^2)`.
    LeaderTracking { target_y: Vec<f64>, target_w: Vec<f64> },
    /// `W1(mu, target)`.
    MeasureTarget { target: EmpiricalMeasure },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningCost {
    pub family: RunningCostFamily,
    pub weight: f64,
}

impl RunningCost {
    pub fn new(family: RunningCostFamily, weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::invalid(MODULE, "running-cost weight must be finite and nonnegative"));
        }
        if let RunningCostFamily::MeasureTarget { target } = &family {
            if target.is_empty() {
                return Err(Error::invalid(MODULE, "measure_target needs a nonempty target"));
            }
        }
        Ok(Self { family, weight })
    }

    pub fn velocity_consensus(weight: f64) -> Result<Self> {
        Self::new(RunningCostFamily::VelocityConsensus, weight)
    }

    /// `L` vanishes identically.
    pub fn is_trivial(&self) -> bool {
        self.weight == 0.0
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match &self.family {
            RunningCostFamily::VelocityConsensus => Ok(()),
            RunningCostFamily::LeaderTracking { target_y, target_w } => {
                if target_y.len() != dim || target_w.len() != dim {
                    return Err(Error::dims(MODULE, dim, target_y.len()));
                }
                Ok(())
            }
            RunningCostFamily::MeasureTarget { target } => {
                if target.dim() != dim {
                    return Err(Error::dims(MODULE, dim, target.dim()));
                }
                if target.is_empty() {
                    return Err(Error::invalid(MODULE, "measure_target needs a nonempty target"));
                }
                Ok(())
            }
        }
    }
}

/// `gamma_L * L(y, w, mu)`; `leaders` holds `[y_k, w_k]` phase points.
pub fn running_cost(cost: &RunningCost, leaders: &[f64], mu: &EmpiricalMeasure) -> Result<f64> {
    let d = mu.dim();
    cost.check_dim(d)?;
    if leaders.is_empty() || !leaders.len().is_multiple_of(2 * d) {
        return Err(Error::invalid(MODULE, "leaders must be [y, w] blocks of the measure's dimension"));
    }
    if cost.weight == 0.0 {
        return Ok(0.0);
    }
    let raw = match &cost.family {
        RunningCostFamily::VelocityConsensus => {
            if mu.is_empty() {
                0.0
            } else {
                let mean = mu.mean_velocity();
                compensated_sum(mu.flat().chunks_exact(2 * d).zip(mu.weights()).map(|(a, &w)| {
                    w * a[d..].iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>()
                }))
            }
        }
        RunningCostFamily::LeaderTracking { target_y, target_w } => {
            let m = leaders.len() / (2 * d);
            compensated_sum(leaders.chunks_exact(2 * d).map(|p| {
                sq_dist(&p[..d], target_y) + sq_dist(&p[d..], target_w)
            })) / m as f64
        }
        RunningCostFamily::MeasureTarget { target } => {
            if mu.is_empty() {
                return Err(Error::invalid(MODULE, "measure_target needs followers"));
            }
            w1_with_plan(mu, target)?.cost
        }
    };
    Ok(cost.weight * raw)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Running cost of a configuration (followers as a uniform measure).
pub fn running_cost_at(cost: &RunningCost, c: &Configuration) -> Result<f64> {
    running_cost(cost, c.leaders(), &c.followers_as_measure()?)
}

/// Gradient of `running_cost_at` with respect to the configuration.
///
/// For `measure_target` this is the gradient for the optimal plan returned
/// by the solver (a subgradient where the plan is not unique).
pub fn running_cost_gradient(cost: &RunningCost, c: &Configuration) -> Result<Configuration> {
    let d = c.dim();
    let m = c.num_leaders();
    let n = c.num_followers();
    cost.check_dim(d)?;
    let mut g = Configuration::zeros(d, m, n);
    if cost.weight == 0.0 {
        return Ok(g);
    }
    let gamma = cost.weight;
    match &cost.family {
        RunningCostFamily::VelocityConsensus => {
            if n == 0 {
                return Ok(g);
            }
            let mean = c.followers_as_measure()?.mean_velocity();
            let scale = 2.0 * gamma / n as f64;
            for (gi, xi) in g.followers_mut().chunks_exact_mut(2 * d).zip(c.followers().chunks_exact(2 * d)) {
                for j in 0..d {
                    gi[d + j] = scale * (xi[d + j] - mean[j]);
                }
            }
        }
        RunningCostFamily::LeaderTracking { target_y, target_w } => {
            let scale = 2.0 * gamma / m as f64;
            for (gk, pk) in g.leaders_mut().chunks_exact_mut(2 * d).zip(c.leaders().chunks_exact(2 * d)) {
                for j in 0..d {
                    gk[j] = scale * (pk[j] - target_y[j]);
                    gk[d + j] = scale * (pk[d + j] - target_w[j]);
                }
            }
        }
        RunningCostFamily::MeasureTarget { target } => {
            let mu = c.followers_as_measure()?;
            if mu.is_empty() {
                return Err(Error::invalid(MODULE, "measure_target needs followers"));
            }
            let plan = w1_with_plan(&mu, target)?.plan;
            let s = 2 * d;
            for (i, j, mass) in plan {
                let a = c.follower(i);
                let b = target.atom(j);
                let r = sq_dist(a, b).sqrt();
                if r > 0.0 {
                    let gi = &mut g.followers_mut()[i * s..(i + 1) * s];
                    for q in 0..s {
                        gi[q] += gamma * mass * (a[q] - b[q]) / r;
                    }
                }
            }
        }
    }
    Ok(g)
}

/// Trapezoid weights for the time nodes `times`.
pub(crate) fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let h = times[k + 1] - times[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

/// `int_0^T L dt` along a trajectory by the composite trapezoid rule on
/// its time grid (second order in the step for smooth integrands).
pub fn running_cost_integral(traj: &Trajectory, cost: &RunningCost) -> Result<f64> {
    if cost.is_trivial() {
        return Ok(0.0);
    }
    let w = trapezoid_weights(&traj.times);
    let mut terms = Vec::with_capacity(w.len());
    for (wk, state) in w.iter().zip(&traj.states) {
        terms.push(wk * running_cost_at(cost, state)?);
    }
    Ok(compensated_sum(terms))
}

/// `int_0^T L dt + control_l1_cost(u)`.
pub fn total_cost(traj: &Trajectory, u: &ControlSignal, cost: &RunningCost) -> Result<f64> {
    check_alignment(traj, u)?;
    Ok(running_cost_integral(traj, cost)? + control_l1_cost(u))
}

fn check_alignment(traj: &Trajectory, u: &ControlSignal) -> Result<()> {
    let (Some(&t0), Some(&t1)) = (traj.times.first(), traj.times.last()) else {
        return Err(Error::invalid(MODULE, "empty trajectory"));
    };
    let tol = 1e-12 * u.horizon.max(1.0);
    if t0.abs() > tol || (t1 - u.horizon).abs() > tol {
        return Err(Error::invalid(MODULE, "trajectory does not span the control horizon"));
    }
    let dt = u.cell_duration();
    for c in 1..u.n_cells {
        let b = c as f64 * dt;
        let k = traj.times.partition_point(|&t| t < b - tol);
        if k >= traj.times.len() || (traj.times[k] - b).abs() > tol {
            return Err(Error::invalid(MODULE, format!("control breakpoint {b} is not a grid node")));
        }
    }
    Ok(())
}
