//! Sparse optimal control of the finite-`N` system by proximal gradient.
//!
//! The objective is `J(u) = int_0^T L(y, w, mu_N) dt + (1/m) sum_k int |u_k| dt`
//! on piecewise-constant controls in `B(0, U)`. The smooth part is
//! differentiated exactly through the RK4 transcription (discrete adjoint);
//! the L1 term and the ball constraint are handled by a closed-form prox.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{
    control_l1_cost, project_ball, running_cost_gradient, running_cost_integral, trapezoid_weights, ControlSignal,
    RunningCost,
};
use crate::dynamics::{forces, integrate_inner, StageInputs, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::kernels::{norm_sq, Kernel};
use crate::measures::Configuration;

const MODULE: &str = "sparse_optimizer";

/// Largest number of lattice candidates `brute_force_solve` will simulate.
pub const BRUTE_FORCE_BUDGET: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    /// Step `eta` of the first iteration.
    pub initial_step: f64,
    /// Backtracking factor in `(0, 1)`.
    pub backtrack: f64,
    /// Steps below this count as "no acceptable step".
    pub min_step: f64,
    /// `tol_J = tol_j_rel * (1 + |J_0|)`.
    pub tol_j_rel: f64,
    /// `tol_u = tol_u_rel * U`.
    pub tol_u_rel: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            initial_step: 1.0,
            backtrack: 0.5,
            min_step: 1e-12,
            tol_j_rel: 1e-8,
            tol_u_rel: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimalControlProblem {
    pub initial: Configuration,
    pub kernel: Kernel,
    pub cost: RunningCost,
    pub grid: TimeGrid,
    /// Admissible radius `U`.
    pub radius: f64,
    pub settings: OptimizerSettings,
}

impl OptimalControlProblem {
    pub fn new(initial: Configuration, kernel: Kernel, cost: RunningCost, grid: TimeGrid, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || radius.is_nan() {
            return Err(Error::invalid(MODULE, "admissible radius must be positive"));
        }
        if kernel.dim != initial.dim() {
            return Err(Error::dims(MODULE, initial.dim(), kernel.dim));
        }
        if !initial.is_finite() {
            return Err(Error::invalid(MODULE, "initial configuration is not finite"));
        }
        Ok(Self {
            initial,
            kernel,
            cost,
            grid,
            radius,
            settings: OptimizerSettings::default(),
        })
    }

    pub fn with_settings(mut self, settings: OptimizerSettings) -> Result<Self> {
        let s = settings;
        if !(s.initial_step > 0.0 && s.min_step > 0.0 && s.min_step <= s.initial_step) {
            return Err(Error::invalid(MODULE, "steps must satisfy 0 < min_step <= initial_step"));
        }
        if !(s.backtrack > 0.0 && s.backtrack < 1.0) {
            return Err(Error::invalid(MODULE, "backtracking factor must lie in (0, 1)"));
        }
        if !(s.tol_j_rel >= 0.0 && s.tol_u_rel >= 0.0) {
            return Err(Error::invalid(MODULE, "tolerances must be nonnegative"));
        }
        self.settings = s;
        Ok(self)
    }

    pub fn num_leaders(&self) -> usize {
        self.initial.num_leaders()
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    /// The zero control on this problem's cells.
    pub fn zero_control(&self) -> ControlSignal {
        ControlSignal::zeros(self.grid.n_cells, self.num_leaders(), self.dim(), self.grid.horizon, self.radius)
            .expect("validated problem")
    }

    fn check_control(&self, u: &ControlSignal) -> Result<()> {
        if u.n_cells != self.grid.n_cells || u.leaders != self.num_leaders() || u.dim != self.dim() {
            return Err(Error::invalid(MODULE, "control shape does not match the problem"));
        }
        if u.radius != self.radius {
            return Err(Error::invalid(MODULE, "control radius does not match the problem"));
        }
        if !u.is_admissible() {
            return Err(Error::invalid(MODULE, "control is not admissible"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub control: ControlSignal,
    /// `J*`.
    pub cost: f64,
    /// Objective after every accepted iterate, starting with `J(u0)`.
    pub history: Vec<f64>,
    /// Share of exactly-zero `(cell, leader)` blocks.
    pub sparsity_fraction: f64,
    pub sparsity_per_leader: Vec<f64>,
    pub converged: bool,
    /// No step down to `min_step` decreased the objective.
    pub stalled: bool,
    pub iterations: usize,
    /// Forward simulations performed.
    pub evaluations: usize,
    pub seed: u64,
}

impl SolveReport {
    fn new(control: ControlSignal, cost: f64, history: Vec<f64>, seed: u64) -> Self {
        Self {
            sparsity_fraction: control.sparsity_fraction(),
            sparsity_per_leader: control.sparsity_per_leader(),
            control,
            cost,
            history,
            converged: false,
            stalled: false,
            iterations: 0,
            evaluations: 0,
            seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `iteration, objective`.
    pub fn write_history_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "objective"])?;
        for (i, j) in self.history.iter().enumerate() {
            w.write_record([i.to_string(), j.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Forward {
    traj: Trajectory,
    stages: Vec<StageInputs>,
    smooth: f64,
}

fn forward(p: &OptimalControlProblem, u: &ControlSignal) -> Result<Forward> {
    let (traj, stages) = integrate_inner(&p.initial, u, &p.kernel, &p.grid, !p.cost.is_trivial())?;
    let smooth = running_cost_integral(&traj, &p.cost)?;
    Ok(Forward { traj, stages, smooth })
}

/// Reverse sweep through a stored forward pass.
fn backward(p: &OptimalControlProblem, u: &ControlSignal, fw: &Forward) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; u.values.len()];
    if p.cost.is_trivial() {
        return Ok(grad);
    }
    let c0 = &p.initial;
    let (d, m, n) = (c0.dim(), c0.num_leaders(), c0.num_followers());
    let s = 2 * d;
    let cell_len = m * d;
    let steps = p.grid.steps();
    let w = trapezoid_weights(&fw.traj.times);
    let states = &fw.traj.states;

    let mut lam = Configuration::zeros(d, m, n);
    lam.axpy(w[steps.len()], &running_cost_gradient(&p.cost, &states[steps.len()])?);

    let mut kbar = Configuration::zeros(d, m, n);
    let mut zbar = [
        Configuration::zeros(d, m, n),
        Configuration::zeros(d, m, n),
        Configuration::zeros(d, m, n),
        Configuration::zeros(d, m, n),
    ];
    for (idx, st) in steps.iter().enumerate().rev() {
        let h = st.t1 - st.t0;
        let z1 = &states[idx];
        let [z2, z3, z4] = &fw.stages[idx];
        let stage_states = [z1, z2, z3, z4];
        // next = z1 + sum_i lam_w[i] k_i and z_{i+1} = z1 + feed[i] k_i.
        let lam_w = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
        let feed = [0.5 * h, 0.5 * h, h];
        let g_cell = &mut grad[st.cell * cell_len..(st.cell + 1) * cell_len];
        for i in (0..4).rev() {
            kbar.zero_out();
            kbar.axpy(lam_w[i], &lam);
            if i < 3 {
                kbar.axpy(feed[i], &zbar[i + 1]);
            }
            for (k, g) in g_cell.chunks_exact_mut(d).enumerate() {
                for (gj, q) in g.iter_mut().zip(&kbar.leaders()[k * s + d..(k + 1) * s]) {
                    *gj += q;
                }
            }
            forces::field_vjp(&p.kernel, stage_states[i], &kbar, &mut zbar[i]);
        }
        for zb in &zbar {
            lam.axpy(1.0, zb);
        }
        lam.axpy(w[idx], &running_cost_gradient(&p.cost, z1)?);
    }
    Ok(grad)
}

/// Gradient of the discretized `int_0^T L dt` with respect to every control
/// cell value, in `ControlSignal::values` layout.
pub fn smooth_gradient(p: &OptimalControlProblem, u: &ControlSignal) -> Result<Vec<f64>> {
    p.check_control(u)?;
    let fw = forward(p, u)?;
    backward(p, u, &fw)
}

/// Discretized smooth part `int_0^T L dt`.
pub fn smooth_objective(p: &OptimalControlProblem, u: &ControlSignal) -> Result<f64> {
    p.check_control(u)?;
    let (traj, _) = integrate_inner(&p.initial, u, &p.kernel, &p.grid, false)?;
    running_cost_integral(&traj, &p.cost)
}

/// Full discretized objective `J(u)`.
pub fn objective(p: &OptimalControlProblem, u: &ControlSignal) -> Result<f64> {
    Ok(smooth_objective(p, u)? + control_l1_cost(u))
}

/// Radial soft-shrinkage by `threshold`, then radial projection onto
/// `B(0, radius)`. Blocks with `|v| <= threshold` become exact zeros.
pub fn prox_l1_ball(v: &[f64], threshold: f64, radius: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    prox_in_place(&mut out, threshold, radius);
    out
}

fn prox_in_place(v: &mut [f64], threshold: f64, radius: f64) {
    let r = norm_sq(v).sqrt();
    if r <= threshold {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let s = (r - threshold) / r;
    v.iter_mut().for_each(|x| *x *= s);
    project_ball(v, radius);
}

fn max_block_change(a: &[f64], b: &[f64], d: usize) -> f64 {
    a.chunks_exact(d)
        .zip(b.chunks_exact(d))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Proximal gradient with backtracking from `u0`.
///
/// A trial step `eta` is accepted when the smooth part satisfies the usual
/// quadratic upper-bound test and the full objective does not increase, so
/// the reported history is non-increasing. The next iteration starts from
/// `eta / backtrack`. With `L == 0` the smooth part
/// is constant and the minimizer `u == 0` is returned after one step.
/// `seed` is recorded only; the iteration is deterministic.
pub fn solve(p: &OptimalControlProblem, u0: &ControlSignal, seed: u64) -> Result<SolveReport> {
    p.check_control(u0)?;
    let st = p.settings;
    let d = u0.dim;
    let block_weight = u0.cell_duration() / u0.leaders as f64;

    let mut fw = forward(p, u0)?;
    let mut u = u0.clone();
    let mut j = fw.smooth + control_l1_cost(&u);
    let mut history = vec![j];
    let mut evaluations = 1;

    if p.cost.is_trivial() {
        let zero = p.zero_control();
        let mut rep = SolveReport::new(zero, 0.0, vec![j, 0.0], seed);
        rep.converged = true;
        rep.iterations = 1;
        rep.evaluations = evaluations;
        return Ok(rep);
    }

    let tol_j = st.tol_j_rel * (1.0 + j.abs());
    let tol_u = st.tol_u_rel * p.radius;
    let mut eta = st.initial_step;
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0;

    while iterations < st.max_iters {
        let grad = backward(p, &u, &fw)?;
        let mut step = eta;
        let mut accepted = None;
        let mut fixed_point = false;
        while step >= st.min_step {
            let mut cand = u.values.clone();
            for (c, g) in cand.iter_mut().zip(&grad) {
                *c -= step * g;
            }
            let tau = step * block_weight;
            for block in cand.chunks_exact_mut(d) {
                prox_in_place(block, tau, p.radius);
            }
            if cand == u.values {
                fixed_point = true;
                break;
            }
            let cand = u.with_values(cand)?;
            let cfw = forward(p, &cand)?;
            evaluations += 1;
            let du: Vec<f64> = cand.values.iter().zip(&u.values).map(|(a, b)| a - b).collect();
            let lin: f64 = grad.iter().zip(&du).map(|(g, x)| g * x).sum();
            let model = fw.smooth + lin + norm_sq(&du) / (2.0 * step);
            let cj = cfw.smooth + control_l1_cost(&cand);
            if cfw.smooth <= model && cj <= j {
                accepted = Some((cand, cfw, cj));
                break;
            }
            step *= st.backtrack;
        }
        if fixed_point {
            converged = true;
            break;
        }
        let Some((cand, cfw, cj)) = accepted else {
            stalled = true;
            break;
        };
        iterations += 1;
        let dj = (j - cj).abs();
        let du = max_block_change(&cand.values, &u.values, d);
        u = cand;
        fw = cfw;
        j = cj;
        history.push(j);
        eta = step / st.backtrack;
        if dj <= tol_j && du <= tol_u {
            converged = true;
            break;
        }
    }

    let mut rep = SolveReport::new(u, j, history, seed);
    rep.converged = converged;
    rep.stalled = stalled;
    rep.iterations = iterations;
    rep.evaluations = evaluations;
    Ok(rep)
}

/// Lattice values `U (2i - (L - 1)) / (L - 1)`, `i = 0..L`.
pub fn lattice_levels(radius: f64, levels: usize) -> Vec<f64> {
    let l = levels as f64 - 1.0;
    (0..levels).map(|i| radius * (2.0 * i as f64 - l) / l).collect()
}

/// Exhaustive minimization of `J` over the per-coordinate lattice
/// (blocks outside `B(0, U)` skipped). Ties go to the lowest candidate
/// index, with the first coordinate most significant.
pub fn brute_force_solve(p: &OptimalControlProblem, levels_per_axis: usize) -> Result<SolveReport> {
    if levels_per_axis < 2 {
        return Err(Error::invalid(MODULE, "need at least two lattice levels per axis"));
    }
    let template = p.zero_control();
    let coords = template.values.len();
    let candidates = (levels_per_axis as u128).checked_pow(coords as u32).unwrap_or(u128::MAX);
    if candidates > BRUTE_FORCE_BUDGET {
        return Err(Error::BudgetExceeded {
            candidates,
            budget: BRUTE_FORCE_BUDGET,
        });
    }
    let grid = lattice_levels(p.radius, levels_per_axis);
    let d = template.dim;
    let decode = |mut idx: u64| -> Vec<f64> {
        let mut v = vec![0.0; coords];
        for slot in v.iter_mut().rev() {
            *slot = grid[(idx % levels_per_axis as u64) as usize];
            idx /= levels_per_axis as u64;
        }
        v
    };
    let best = (0..candidates as u64)
        .into_par_iter()
        .map(|idx| -> Result<Option<(f64, u64)>> {
            let v = decode(idx);
            if v.chunks_exact(d).any(|b| norm_sq(b).sqrt() > p.radius) {
                return Ok(None);
            }
            let u = template.with_values(v)?;
            Ok(Some((objective(p, &u)?, idx)))
        })
        .try_reduce(|| None, |a, b| Ok(pick_lower(a, b)))?;
    let evaluated = (0..candidates as u64)
        .filter(|&i| decode(i).chunks_exact(d).all(|b| norm_sq(b).sqrt() <= p.radius))
        .count();
    let (cost, idx) = best.ok_or_else(|| Error::invalid(MODULE, "lattice has no admissible candidate"))?;
    let mut rep = SolveReport::new(template.with_values(decode(idx))?, cost, vec![cost], 0);
    rep.converged = true;
    rep.evaluations = evaluated;
    Ok(rep)
}

fn pick_lower(a: Option<(f64, u64)>, b: Option<(f64, u64)>) -> Option<(f64, u64)> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => {
            if (x.0, x.1) <= (y.0, y.1) || y.0.is_nan() {
                Some(x)
            } else {
                Some(y)
            }
        }
    }
}

/// First-order bound on how far the lattice minimum can sit above the
/// continuous minimum near `u_lat`: every point of the box is within
/// `(h / 2) sqrt(n)` of a lattice point (`h` the spacing, `n` the number of
/// coordinates), and `J` changes at rate at most
/// `|grad S(u_lat)| + sqrt(n_cells m) T / (n_cells m)` there.
pub fn lattice_gap_bound(p: &OptimalControlProblem, levels_per_axis: usize, u_lat: &ControlSignal) -> Result<f64> {
    if levels_per_axis < 2 {
        return Err(Error::invalid(MODULE, "need at least two lattice levels per axis"));
    }
    let g = smooth_gradient(p, u_lat)?;
    let blocks = (u_lat.n_cells * u_lat.leaders) as f64;
    let slope = norm_sq(&g).sqrt() + blocks.sqrt() * u_lat.cell_duration() / u_lat.leaders as f64;
    let spacing = 2.0 * p.radius / (levels_per_axis as f64 - 1.0);
    Ok(0.5 * spacing * (g.len() as f64).sqrt() * slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::RunningCostFamily;

    fn tracking_problem(n_cells: usize, horizon: f64) -> OptimalControlProblem {
        let c0 = Configuration::from_blocks(1, &[0.0], &[0.5], &[], &[]).unwrap();
        let cost = RunningCost::new(
            RunningCostFamily::LeaderTracking {
                target_y: vec![0.0],
                target_w: vec![2.0],
            },
            1.0,
        )
        .unwrap();
        let grid = TimeGrid::new(horizon, 40, n_cells).unwrap();
        OptimalControlProblem::new(c0, Kernel::zero(1).unwrap(), cost, grid, 10.0).unwrap()
    }

    #[test]
    fn prox_examples() {
        let v = prox_l1_ball(&[2.0, 0.0], 0.5, f64::INFINITY);
        assert_eq!(v, vec![1.5, 0.0]);
        assert_eq!(prox_l1_ball(&[0.3, -0.4], 0.5, 1.0), vec![0.0, 0.0]);
        let p = prox_l1_ball(&[3.0, 4.0], 0.0, 1.0);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert!(norm_sq(&p).sqrt() <= 1.0);
    }

    #[test]
    fn trivial_cost_gives_zero_gradient_and_zero_control() {
        let mut p = tracking_problem(3, 1.0);
        p.cost.weight = 0.0;
        let u = p.zero_control().with_values(vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(smooth_gradient(&p, &u).unwrap(), vec![0.0; 3]);
        let rep = solve(&p, &u, 1).unwrap();
        assert_eq!(rep.control.values, vec![0.0; 3]);
        assert_eq!(rep.cost, 0.0);
        assert_eq!(rep.sparsity_fraction, 1.0);
    }

    #[test]
    fn single_cell_tracking_gradient_matches_calculus() {
        // w(t) = w0 + c t, y(t) = w0 t + c t^2 / 2, targets w* = 2, y* = 0.
        let p = tracking_problem(1, 1.0);
        let c = 0.7;
        let u = p.zero_control().with_values(vec![c]).unwrap();
        let g = smooth_gradient(&p, &u).unwrap()[0];
        let (w0, ws, t) = (0.5, 2.0, 1.0_f64);
        // d/dc int (w0 + c s - ws)^2 ds = int 2 (w0 + c s - ws) s ds
        let dw = 2.0 * ((w0 - ws) * t * t / 2.0 + c * t.powi(3) / 3.0);
        // d/dc int (w0 s + c s^2/2)^2 ds = int 2 (w0 s + c s^2 / 2) s^2 / 2 ds
        let dy = w0 * t.powi(4) / 4.0 + c * t.powi(5) / 10.0;
        let exact = dw + dy;
        // Trapezoid quadrature on 40 steps: O(h^2) away from the integral.
        assert!((g - exact).abs() < 1e-3, "{g} vs {exact}");
        let eps = 1e-5;
        let fd = (smooth_objective(&p, &u.with_values(vec![c + eps]).unwrap()).unwrap()
            - smooth_objective(&p, &u.with_values(vec![c - eps]).unwrap()).unwrap())
            / (2.0 * eps);
        assert!((g - fd).abs() <= 1e-8 * fd.abs().max(1.0));
    }

    #[test]
    fn adjoint_matches_finite_differences_with_interaction() {
        let c0 = Configuration::from_blocks(
            2,
            &[0.1, -0.2, 0.8, 0.3],
            &[0.4, 0.0, -0.3, 0.2],
            &[0.5, 0.5, -0.4, 0.1, 0.0, -0.7],
            &[0.1, 0.2, -0.3, 0.0, 0.6, -0.1],
        )
        .unwrap();
        let cost = RunningCost::velocity_consensus(1.5).unwrap();
        let grid = TimeGrid::new(1.0, 12, 3).unwrap();
        let p = OptimalControlProblem::new(c0, Kernel::cucker_smale_default(2).unwrap(), cost, grid, 5.0).unwrap();
        let vals: Vec<f64> = (0..12).map(|i| ((i as f64) * 0.77).sin()).collect();
        let u = p.zero_control().with_values(vals).unwrap();
        let g = smooth_gradient(&p, &u).unwrap();
        let eps = 1e-5;
        let mut fd = Vec::new();
        for i in 0..g.len() {
            let mut a = u.values.clone();
            let mut b = u.values.clone();
            a[i] += eps;
            b[i] -= eps;
            let fa = smooth_objective(&p, &u.with_values(a).unwrap()).unwrap();
            let fb = smooth_objective(&p, &u.with_values(b).unwrap()).unwrap();
            fd.push((fa - fb) / (2.0 * eps));
        }
        let scale = fd.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let err = g.iter().zip(&fd).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(scale > 1e-4);
        assert!(err <= 1e-6 * scale, "err {err}, scale {scale}");
    }

    #[test]
    fn solve_decreases_objective_monotonically() {
        let p = tracking_problem(4, 1.0);
        let rep = solve(&p, &p.zero_control(), 0).unwrap();
        assert!(rep.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(rep.cost < rep.history[0]);
        assert!(rep.control.is_admissible());
        assert!(!rep.stalled);
    }

    #[test]
    fn brute_force_budget_and_nesting() {
        let p = tracking_problem(2, 1.0);
        assert!(matches!(brute_force_solve(&p, 1001), Err(Error::BudgetExceeded { .. })));
        let coarse = brute_force_solve(&p, 3).unwrap();
        let fine = brute_force_solve(&p, 9).unwrap();
        assert!(fine.cost <= coarse.cost);
        assert_eq!(coarse.evaluations, 9);
    }

    #[test]
    fn brute_force_three_levels_is_argmin() {
        let p = tracking_problem(1, 1.0);
        let rep = brute_force_solve(&p, 3).unwrap();
        let costs: Vec<f64> = [-10.0, 0.0, 10.0]
            .iter()
            .map(|&c| objective(&p, &p.zero_control().with_values(vec![c]).unwrap()).unwrap())
            .collect();
        let best = costs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(rep.cost, best);
    }

    #[test]
    fn lattice_levels_are_symmetric() {
        assert_eq!(lattice_levels(2.0, 3), vec![-2.0, 0.0, 2.0]);
        assert_eq!(lattice_levels(1.0, 2), vec![-1.0, 1.0]);
    }
}
