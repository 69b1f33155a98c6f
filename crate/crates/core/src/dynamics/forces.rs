//! Direct `O((N + m)^2)` evaluation of the interaction field and of its
//! transposed Jacobian.
//!
//! Each agent's sum runs over a canonically sorted copy of the atoms, and
//! agents are processed independently (in parallel when large), so the output
//! bits depend neither on agent labels nor on the number of worker threads.

use rayon::prelude::*;

use crate::kernels::{cs_rate, Kernel, KernelFamily};
use crate::measures::Configuration;
use crate::sum::canonical_order;

/// Agents per rayon task; below this the loop stays sequential.
const PAR_CHUNK: usize = 32;

/// Phase points of one population, sorted canonically.
struct SortedAtoms {
    points: Vec<f64>,
}

impl SortedAtoms {
    fn new(flat: &[f64], stride: usize) -> Self {
        let order = canonical_order(flat, stride, None);
        let mut points = Vec::with_capacity(flat.len());
        for &i in &order {
            points.extend_from_slice(&flat[i * stride..(i + 1) * stride]);
        }
        Self { points }
    }
}

/// `sum_l H(query - atom_l)` over sorted atoms, added to `acc`.
#[inline]
fn accumulate(kernel: &Kernel, query: &[f64], atoms: &SortedAtoms, d: usize, diff: &mut [f64], h: &mut [f64], acc: &mut [f64]) {
    if let KernelFamily::CuckerSmale {
        strength,
        scale,
        exponent,
        sign,
    } = kernel.family
    {
        let (qx, qv) = query.split_at(d);
        for atom in atoms.points.chunks_exact(2 * d) {
            let (ax, av) = atom.split_at(d);
            let r2: f64 = qx.iter().zip(ax).map(|(a, b)| (a - b) * (a - b)).sum();
            let rate = sign * cs_rate(strength, scale, exponent, r2);
            for ((o, a), b) in acc.iter_mut().zip(qv).zip(av) {
                *o += rate * (a - b);
            }
        }
        return;
    }
    for atom in atoms.points.chunks_exact(2 * d) {
        for ((o, q), a) in diff.iter_mut().zip(query).zip(atom) {
            *o = q - a;
        }
        kernel.eval_into(&diff[..d], &diff[d..], h);
        for (o, x) in acc.iter_mut().zip(h.iter()) {
            *o += x;
        }
    }
}

fn for_each_agent<F>(out: &mut [f64], stride: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let agents = out.len() / stride.max(1);
    if agents >= 2 * PAR_CHUNK {
        out.par_chunks_mut(stride * PAR_CHUNK)
            .enumerate()
            .for_each(|(chunk, block)| {
                for (j, slot) in block.chunks_exact_mut(stride).enumerate() {
                    f(chunk * PAR_CHUNK + j, slot);
                }
            });
    } else {
        for (i, slot) in out.chunks_exact_mut(stride).enumerate() {
            f(i, slot);
        }
    }
}

/// Right-hand side `g(zeta)` with leader controls `u` (`m * d` entries).
pub(crate) fn field(kernel: &Kernel, c: &Configuration, u: &[f64], out: &mut Configuration) {
    let d = c.dim();
    let s = 2 * d;
    let m = c.num_leaders();
    let n = c.num_followers();
    let zero = kernel.is_zero();
    let lead_atoms = if zero { None } else { Some(SortedAtoms::new(c.leaders(), s)) };
    let foll_atoms = if zero || n == 0 { None } else { Some(SortedAtoms::new(c.followers(), s)) };
    let inv_m = 1.0 / m as f64;
    let inv_n = if n == 0 { 0.0 } else { 1.0 / n as f64 };

    let force = |query: &[f64], slot: &mut [f64]| {
        slot.iter_mut().for_each(|x| *x = 0.0);
        let (Some(la), fa) = (&lead_atoms, &foll_atoms) else {
            return;
        };
        let mut diff = vec![0.0; s];
        let mut h = vec![0.0; d];
        let mut f_part = vec![0.0; d];
        let mut l_part = vec![0.0; d];
        if let Some(fa) = fa {
            accumulate(kernel, query, fa, d, &mut diff, &mut h, &mut f_part);
        }
        accumulate(kernel, query, la, d, &mut diff, &mut h, &mut l_part);
        for j in 0..d {
            slot[j] = inv_n * f_part[j] + inv_m * l_part[j];
        }
    };

    let leaders = c.leaders();
    for_each_agent(out.leaders_mut(), s, |k, slot| {
        let p = &leaders[k * s..(k + 1) * s];
        let (pos, vel) = slot.split_at_mut(d);
        force(p, vel);
        for j in 0..d {
            vel[j] += u[k * d + j];
        }
        pos.copy_from_slice(&p[d..]);
    });
    let followers = c.followers();
    for_each_agent(out.followers_mut(), s, |i, slot| {
        let p = &followers[i * s..(i + 1) * s];
        let (pos, vel) = slot.split_at_mut(d);
        force(p, vel);
        pos.copy_from_slice(&p[d..]);
    });
}

#[inline]
fn pair_vjp(kernel: &Kernel, dx: &[f64], dv: &[f64], lam: &[f64], gx: &mut [f64], gv: &mut [f64]) {
    if let KernelFamily::CuckerSmale {
        strength,
        scale,
        exponent,
        sign,
    } = kernel.family
    {
        let r2: f64 = dx.iter().map(|x| x * x).sum();
        let a = sign * cs_rate(strength, scale, exponent, r2);
        let lv: f64 = lam.iter().zip(dv).map(|(l, v)| l * v).sum();
        let cx = -2.0 * exponent * a * lv / (scale * scale + r2);
        for (g, x) in gx.iter_mut().zip(dx) {
            *g += cx * x;
        }
        for (g, l) in gv.iter_mut().zip(lam) {
            *g += a * l;
        }
        return;
    }
    kernel.vjp_acc(dx, dv, lam, 1.0, gx, gv);
}

/// Transposed Jacobian of the state part of `g` applied to `q`:
/// `out = (dg/dzeta)^T q`. The control enters additively, so its adjoint is
/// just the leaders' velocity slots of `q`.
pub(crate) fn field_vjp(kernel: &Kernel, c: &Configuration, q: &Configuration, out: &mut Configuration) {
    let d = c.dim();
    let s = 2 * d;
    let m = c.num_leaders();
    let n = c.num_followers();
    let inv_m = 1.0 / m as f64;
    let inv_n = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let zero = kernel.is_zero();

    // Agent records `[phase point, velocity adjoint]`, sorted by phase point,
    // for the "agent as atom" sums; weights travel with the population.
    let pack = |flat: &[f64], adj: &[f64]| -> Vec<f64> {
        let order = canonical_order(flat, s, None);
        let mut v = Vec::with_capacity(order.len() * (s + d));
        for &i in &order {
            v.extend_from_slice(&flat[i * s..(i + 1) * s]);
            v.extend_from_slice(&adj[i * s + d..(i + 1) * s]);
        }
        v
    };
    let (lead_rec, foll_rec) = if zero {
        (Vec::new(), Vec::new())
    } else {
        (pack(c.leaders(), q.leaders()), pack(c.followers(), q.followers()))
    };

    // Contribution for agent r with phase point p, velocity adjoint lam and
    // population weight w_r:
    //   sum_j w_j J(p - xi_j)^T lam  -  w_r sum_p' J(xi_p' - p)^T lam_p'
    let agent = |p: &[f64], lam: &[f64], w_r: f64, slot: &mut [f64]| {
        slot.iter_mut().for_each(|x| *x = 0.0);
        if zero {
            return;
        }
        let mut diff = vec![0.0; s];
        let mut part = vec![0.0; s];
        // p as query.
        for (recs, w) in [(&foll_rec, inv_n), (&lead_rec, inv_m)] {
            if recs.is_empty() {
                continue;
            }
            part.iter_mut().for_each(|x| *x = 0.0);
            for rec in recs.chunks_exact(s + d) {
                for ((o, a), b) in diff.iter_mut().zip(p).zip(&rec[..s]) {
                    *o = a - b;
                }
                let (gx, gv) = part.split_at_mut(d);
                pair_vjp(kernel, &diff[..d], &diff[d..], lam, gx, gv);
            }
            for (o, x) in slot.iter_mut().zip(&part) {
                *o += w * x;
            }
        }
        // p as atom of its own population, seen by every query agent.
        part.iter_mut().for_each(|x| *x = 0.0);
        for recs in [&lead_rec, &foll_rec] {
            for rec in recs.chunks_exact(s + d) {
                for ((o, a), b) in diff.iter_mut().zip(&rec[..s]).zip(p) {
                    *o = a - b;
                }
                let (gx, gv) = part.split_at_mut(d);
                pair_vjp(kernel, &diff[..d], &diff[d..], &rec[s..], gx, gv);
            }
        }
        for (o, x) in slot.iter_mut().zip(&part) {
            *o -= w_r * x;
        }
    };

    let leaders = c.leaders();
    let q_lead = q.leaders();
    for_each_agent(out.leaders_mut(), s, |k, slot| {
        let p = &leaders[k * s..(k + 1) * s];
        let lam = &q_lead[k * s + d..(k + 1) * s];
        agent(p, lam, inv_m, slot);
        for j in 0..d {
            slot[d + j] += q_lead[k * s + j];
        }
    });
    let followers = c.followers();
    let q_foll = q.followers();
    for_each_agent(out.followers_mut(), s, |i, slot| {
        let p = &followers[i * s..(i + 1) * s];
        let lam = &q_foll[i * s + d..(i + 1) * s];
        agent(p, lam, inv_n, slot);
        for j in 0..d {
            slot[d + j] += q_foll[i * s + j];
        }
    });
}
