//! Time integration of the controlled leader-follower system
//!
//! ```text
//! y_k' = w_k,  w_k' = (H * mu_N)(y_k, w_k) + (H * mu_m)(y_k, w_k) + u_k
//! x_i' = v_i,  v_i' = (H * mu_N)(x_i, v_i) + (H * mu_m)(x_i, v_i)
//! ```
//!
//! with classical RK4 on a grid that contains every control breakpoint, so
//! each step sees a constant control and a smooth right-hand side.

pub(crate) mod forces;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::control::ControlSignal;
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::measures::{config_norm, Configuration};

const MODULE: &str = "dynamics";

/// Uniform steps of size `T / n_steps`, split at the `n_cells` control
/// breakpoints `c T / n_cells`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_steps: usize,
    pub n_cells: usize,
}

/// One integrator step: `[t0, t1]` under control cell `cell`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub t0: f64,
    pub t1: f64,
    pub cell: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize, n_cells: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(MODULE, "horizon must be positive"));
        }
        if n_steps == 0 || n_cells == 0 {
            return Err(Error::invalid(MODULE, "n_steps and n_cells must be positive"));
        }
        Ok(Self {
            horizon,
            n_steps,
            n_cells,
        })
    }

    /// `h = min(T / 200, (T / n_cells) / 4)`.
    pub fn with_default_step(horizon: f64, n_cells: usize) -> Result<Self> {
        Self::new(horizon, 200.max(4 * n_cells), n_cells)
    }

    /// Steps in time order. Node positions are merged as exact rationals of
    /// the horizon, so breakpoints that coincide with step nodes do not
    /// produce sliver steps.
    pub fn steps(&self) -> Vec<Step> {
        let l = self.n_steps / gcd(self.n_steps, self.n_cells) * self.n_cells;
        let a = l / self.n_steps;
        let b = l / self.n_cells;
        let mut ticks: Vec<usize> = (0..=self.n_steps).map(|i| i * a).collect();
        ticks.extend((1..self.n_cells).map(|k| k * b));
        ticks.sort_unstable();
        ticks.dedup();
        let t = |p: usize| {
            if p == l {
                self.horizon
            } else {
                self.horizon * (p as f64 / l as f64)
            }
        };
        ticks
            .windows(2)
            .map(|w| Step {
                t0: t(w[0]),
                t1: t(w[1]),
                cell: w[0] / b,
            })
            .collect()
    }

    pub fn times(&self) -> Vec<f64> {
        let steps = self.steps();
        let mut times = Vec::with_capacity(steps.len() + 1);
        times.push(0.0);
        times.extend(steps.iter().map(|s| s.t1));
        times
    }
}

/// States on the grid nodes; `controls[k]` is the control applied during
/// step `k` (so `controls.len() == states.len() - 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Configuration>,
    pub controls: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &Configuration {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// CSV, time-major: `step, t, role, index, x1..xd, v1..vd`, writing
    /// every `cadence`-th node plus the final one.
    pub fn write_csv<W: Write>(&self, writer: W, cadence: usize) -> Result<()> {
        let cadence = cadence.max(1);
        let d = self.states[0].dim();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["step".to_string(), "t".into(), "role".into(), "index".into()];
        header.extend((1..=d).map(|j| format!("x{j}")));
        header.extend((1..=d).map(|j| format!("v{j}")));
        w.write_record(&header)?;
        let last = self.states.len() - 1;
        for (k, (t, c)) in self.times.iter().zip(&self.states).enumerate() {
            if k % cadence != 0 && k != last {
                continue;
            }
            for (role, flat) in [("leader", c.leaders()), ("follower", c.followers())] {
                for (i, p) in flat.chunks_exact(2 * d).enumerate() {
                    let mut row = vec![k.to_string(), t.to_string(), role.to_string(), i.to_string()];
                    row.extend(p.iter().map(|x| x.to_string()));
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// JSON snapshots at the same cadence as [`Trajectory::write_csv`].
    pub fn snapshots_json(&self, cadence: usize) -> serde_json::Value {
        let cadence = cadence.max(1);
        let last = self.states.len() - 1;
        let snaps: Vec<serde_json::Value> = self
            .times
            .iter()
            .zip(&self.states)
            .enumerate()
            .filter(|(k, _)| k % cadence == 0 || *k == last)
            .map(|(k, (t, c))| {
                serde_json::json!({
                    "step": k,
                    "t": t,
                    "leaders": c.leaders(),
                    "followers": c.followers(),
                })
            })
            .collect();
        serde_json::json!({ "dim": self.states[0].dim(), "snapshots": snaps })
    }
}

fn check_shapes(c: &Configuration, u_len: usize, kernel: &Kernel) -> Result<()> {
    if c.dim() != kernel.dim {
        return Err(Error::dims(MODULE, kernel.dim, c.dim()));
    }
    if u_len != c.num_leaders() * c.dim() {
        return Err(Error::dims(MODULE, c.num_leaders() * c.dim(), u_len));
    }
    Ok(())
}

/// Tangent `g(zeta) = (w, H*(mu_N + mu_m)(y, w) + u, v, H*(mu_N + mu_m)(x, v))`
/// for the leader control values `u_now` (`m * d` entries).
pub fn rhs(c: &Configuration, u_now: &[f64], kernel: &Kernel) -> Result<Configuration> {
    check_shapes(c, u_now.len(), kernel)?;
    let mut out = Configuration::zeros(c.dim(), c.num_leaders(), c.num_followers());
    forces::field(kernel, c, u_now, &mut out);
    Ok(out)
}

/// Stage inputs `z2, z3, z4` of one RK4 step (`z1` is the step's start state).
pub(crate) type StageInputs = [Configuration; 3];

fn rk4_step(kernel: &Kernel, z1: &Configuration, u: &[f64], h: f64, keep_stages: bool) -> (Configuration, Option<StageInputs>) {
    let (d, m, n) = (z1.dim(), z1.num_leaders(), z1.num_followers());
    let mut k = Configuration::zeros(d, m, n);
    let mut next = z1.clone();

    forces::field(kernel, z1, u, &mut k);
    next.axpy(h / 6.0, &k);
    let mut z2 = z1.clone();
    z2.axpy(0.5 * h, &k);

    forces::field(kernel, &z2, u, &mut k);
    next.axpy(h / 3.0, &k);
    let mut z3 = z1.clone();
    z3.axpy(0.5 * h, &k);

    forces::field(kernel, &z3, u, &mut k);
    next.axpy(h / 3.0, &k);
    let mut z4 = z1.clone();
    z4.axpy(h, &k);

    forces::field(kernel, &z4, u, &mut k);
    next.axpy(h / 6.0, &k);

    let stages = keep_stages.then_some([z2, z3, z4]);
    (next, stages)
}

pub(crate) fn integrate_inner(
    c0: &Configuration,
    control: &ControlSignal,
    kernel: &Kernel,
    grid: &TimeGrid,
    keep_stages: bool,
) -> Result<(Trajectory, Vec<StageInputs>)> {
    check_shapes(c0, control.leaders * control.dim, kernel)?;
    if control.leaders != c0.num_leaders() {
        return Err(Error::invalid(MODULE, "control and configuration disagree on the number of leaders"));
    }
    if !c0.is_finite() {
        return Err(Error::invalid(MODULE, "initial configuration is not finite"));
    }
    if grid.n_cells != control.n_cells || (grid.horizon - control.horizon).abs() > 1e-12 * control.horizon {
        return Err(Error::invalid(MODULE, "time grid and control disagree on cells or horizon"));
    }
    if !control.is_admissible() {
        return Err(Error::invalid(MODULE, "control is not admissible"));
    }
    let steps = grid.steps();
    let mut times = Vec::with_capacity(steps.len() + 1);
    let mut states = Vec::with_capacity(steps.len() + 1);
    let mut controls = Vec::with_capacity(steps.len());
    let mut stages = Vec::new();
    times.push(0.0);
    states.push(c0.clone());
    for (idx, st) in steps.iter().enumerate() {
        let u = control.cell(st.cell);
        let (next, stage) = rk4_step(kernel, states.last().unwrap(), u, st.t1 - st.t0, keep_stages);
        if !next.is_finite() {
            return Err(Error::IntegrationFailure { step: idx, time: st.t1 });
        }
        if let Some(s) = stage {
            stages.push(s);
        }
        times.push(st.t1);
        states.push(next);
        controls.push(u.to_vec());
    }
    Ok((Trajectory { times, states, controls }, stages))
}

/// RK4 solution of the controlled system on `grid`.
pub fn integrate(c0: &Configuration, control: &ControlSignal, kernel: &Kernel, grid: &TimeGrid) -> Result<Trajectory> {
    Ok(integrate_inner(c0, control, kernel, grid, false)?.0)
}

/// A-priori bounds on a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelopes {
    /// `C_bar = 1 + 4 C + U`.
    pub c_bar: f64,
    /// `(||zeta0|| + C_bar T) exp(C_bar T)`.
    pub growth_bound: f64,
    /// `C_bar (1 + growth_bound)`.
    pub lipschitz_bound: f64,
}

/// Growth and time-Lipschitz envelopes for trajectories started at `c0`.
///
/// With `|H(xi)| <= C (1 + |xi|)` the right-hand side obeys
/// `||g(zeta)|| <= (1 + 4C) ||zeta|| + 4C + U <= C_bar (1 + ||zeta||)` in the
/// configuration norm, for any `N` and `m`: each convolution contributes
/// `C (1 + |xi| + first moment)`, the two populations together give the
/// factor 4, and the control adds at most `U`. Gronwall then yields the
/// growth bound, and integrating `g` yields the Lipschitz bound.
pub fn envelopes(c0: &Configuration, kernel: &Kernel, admissible_radius: f64, horizon: f64) -> Envelopes {
    let c_bar = 1.0 + 4.0 * kernel.growth_constant + admissible_radius;
    let growth_bound = (config_norm(c0) + c_bar * horizon) * (c_bar * horizon).exp();
    Envelopes {
        c_bar,
        growth_bound,
        lipschitz_bound: c_bar * (1.0 + growth_bound),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_splits_at_breakpoints() {
        let g = TimeGrid::new(1.0, 4, 3).unwrap();
        let steps = g.steps();
        let t0: Vec<f64> = steps.iter().map(|s| s.t0).collect();
        assert_eq!(steps.len(), 6);
        assert_eq!(t0, vec![0.0, 0.25, 1.0 / 3.0, 0.5, 2.0 / 3.0, 0.75]);
        let cells: Vec<usize> = steps.iter().map(|s| s.cell).collect();
        assert_eq!(cells, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(steps.last().unwrap().t1, 1.0);
    }

    #[test]
    fn aligned_grid_has_no_extra_nodes() {
        let g = TimeGrid::new(2.0, 8, 4).unwrap();
        assert_eq!(g.steps().len(), 8);
        assert_eq!(TimeGrid::with_default_step(1.0, 100).unwrap().n_steps, 400);
        assert_eq!(TimeGrid::with_default_step(1.0, 10).unwrap().n_steps, 200);
    }

    #[test]
    fn zero_kernel_zero_control_tangent() {
        let k = Kernel::zero(1).unwrap();
        let c = Configuration::from_blocks(1, &[0.5], &[2.0], &[1.0, -1.0], &[3.0, -4.0]).unwrap();
        let g = rhs(&c, &[0.0], &k).unwrap();
        assert_eq!(g.leaders(), &[2.0, 0.0]);
        assert_eq!(g.followers(), &[3.0, 0.0, -4.0, 0.0]);
    }

    #[test]
    fn single_leader_feels_only_control() {
        let k = Kernel::zero(2).unwrap();
        let c = Configuration::from_blocks(2, &[1.0, 1.0], &[0.5, -0.5], &[], &[]).unwrap();
        let g = rhs(&c, &[0.3, 0.7], &k).unwrap();
        assert_eq!(g.leaders(), &[0.5, -0.5, 0.3, 0.7]);
    }

    #[test]
    fn symmetric_pair_alignment_by_hand() {
        // Leader (x=0, w=1), follower (x=0, v=-1), a = 1, s = -1.
        // Leader: -[(1 - (-1)) / 1] - [(1 - 1) / 1] = -2.
        // Follower: -[(-1 - (-1))] - [(-1 - 1)] = 2.
        let k = Kernel::cucker_smale(1, 1.0, 1.0, 0.0, -1.0).unwrap();
        let c = Configuration::from_blocks(1, &[0.0], &[1.0], &[0.0], &[-1.0]).unwrap();
        let g = rhs(&c, &[0.0], &k).unwrap();
        assert_eq!(g.leaders(), &[1.0, -2.0]);
        assert_eq!(g.followers(), &[-1.0, 2.0]);
    }

    #[test]
    fn rhs_rejects_shape_errors() {
        let k = Kernel::zero(2).unwrap();
        let c = Configuration::from_blocks(1, &[0.0], &[0.0], &[], &[]).unwrap();
        assert!(rhs(&c, &[0.0], &k).is_err());
        let k = Kernel::zero(1).unwrap();
        assert!(rhs(&c, &[0.0, 1.0], &k).is_err());
    }

    #[test]
    fn free_streaming_is_exact() {
        let k = Kernel::zero(1).unwrap();
        let c0 = Configuration::from_blocks(1, &[0.0], &[0.0], &[1.0, -2.0], &[0.5, 1.5]).unwrap();
        let u = ControlSignal::zeros(1, 1, 1, 2.0, 1.0).unwrap();
        let grid = TimeGrid::new(2.0, 50, 1).unwrap();
        let traj = integrate(&c0, &u, &k, &grid).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert!((s.follower(0)[0] - (1.0 + 0.5 * t)).abs() <= 1e-12);
            assert!((s.follower(1)[0] - (-2.0 + 1.5 * t)).abs() <= 1e-12);
            assert_eq!(s.follower(0)[1], 0.5);
        }
    }

    #[test]
    fn constant_control_double_integrator() {
        let k = Kernel::zero(1).unwrap();
        let (y0, w0, c) = (0.3, -0.4, 0.9);
        let c0 = Configuration::from_blocks(1, &[y0], &[w0], &[], &[]).unwrap();
        let u = ControlSignal::new(1, 1, 1, 1.5, 1.0, vec![c]).unwrap();
        let traj = integrate(&c0, &u, &k, &TimeGrid::new(1.5, 30, 1).unwrap()).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let l = s.leader(0);
            assert!((l[1] - (w0 + c * t)).abs() <= 1e-12);
            assert!((l[0] - (y0 + w0 * t + 0.5 * c * t * t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn integrate_rejects_inadmissible_control() {
        let k = Kernel::zero(1).unwrap();
        let c0 = Configuration::from_blocks(1, &[0.0], &[0.0], &[], &[]).unwrap();
        let u = ControlSignal::new(1, 1, 1, 1.0, 1.0, vec![2.0]).unwrap();
        assert!(integrate(&c0, &u, &k, &TimeGrid::new(1.0, 4, 1).unwrap()).is_err());
    }

    #[test]
    fn blow_up_reports_step() {
        // Stiff alignment with a step far beyond the stability limit.
        let k = Kernel::cucker_smale(1, 1e300, 1.0, 0.0, -1.0).unwrap();
        let c0 = Configuration::from_blocks(1, &[0.0], &[1.0], &[0.0], &[-1.0]).unwrap();
        let u = ControlSignal::zeros(1, 1, 1, 1.0, 1.0).unwrap();
        let err = integrate(&c0, &u, &k, &TimeGrid::new(1.0, 2, 1).unwrap()).unwrap_err();
        assert!(matches!(err, Error::IntegrationFailure { .. }), "{err:?}");
    }

    #[test]
    fn envelope_plug_in() {
        // ||zeta0|| = 1 and C_bar = 1 (C = 0, U = 0+) at T = 1 give 2e.
        let k = Kernel::zero(1).unwrap();
        let c0 = Configuration::from_blocks(1, &[1.0], &[0.0], &[], &[]).unwrap();
        let e = envelopes(&c0, &k, 0.0, 1.0);
        assert_eq!(e.c_bar, 1.0);
        assert!((e.growth_bound - 2.0 * std::f64::consts::E).abs() < 1e-15);
        let e0 = envelopes(&Configuration::from_blocks(1, &[0.0], &[0.0], &[], &[]).unwrap(), &k, 1.0, 1e-9);
        assert!(e0.growth_bound < 1e-8);
    }
}
