//! Empirical measures on phase space `R^{2d}`, leader-follower
//! configurations, the metric on `(leaders, measure)` states and exact
//! Wasserstein-1 distances.

mod assignment;
mod sampling;
mod transport;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use assignment::solve_assignment;
pub use sampling::{sample_initial_measure, sample_initial_measure_with, InitialDensitySpec, SamplingScheme};
pub use transport::{solve_transport, TransportSolution};

use crate::error::{Error, Result};
use crate::kernels::norm_sq;
use crate::sum::lex_cmp;

const MODULE: &str = "measures";
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Weighted atoms in `R^{2d}`; each atom is `[x_1..x_d, v_1..v_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid(MODULE, "dimension must be positive"));
        }
        if atoms.len() != weights.len() * 2 * dim {
            return Err(Error::dims(MODULE, weights.len() * 2 * dim, atoms.len()));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid(MODULE, "atoms must be finite"));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::invalid(MODULE, "weights must be positive"));
        }
        if !weights.is_empty() {
            let total = crate::sum::compensated_sum(weights.iter().copied());
            if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::invalid(MODULE, format!("weights sum to {total}, not 1")));
            }
        }
        Ok(Self { dim, atoms, weights })
    }

    /// Uniform weights `1/n` over the given atoms.
    pub fn uniform(dim: usize, atoms: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid(MODULE, "dimension must be positive"));
        }
        if !atoms.len().is_multiple_of(2 * dim) {
            return Err(Error::invalid(MODULE, "atom buffer length is not a multiple of 2d"));
        }
        let n = atoms.len() / (2 * dim);
        Self::new(dim, atoms, vec![1.0 / n as f64; n])
    }

    /// The measure with no atoms; every distance and convolution rejects it.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            atoms: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        let s = 2 * self.dim;
        &self.atoms[i * s..(i + 1) * s]
    }

    pub fn flat(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.iter().all(|&w| w == self.weights[0])
    }

    /// `sup |atom|`.
    pub fn support_radius(&self) -> f64 {
        self.atoms
            .chunks_exact(2 * self.dim)
            .map(|a| norm_sq(a).sqrt())
            .fold(0.0, f64::max)
    }

    /// Mean velocity `int v dmu`.
    pub fn mean_velocity(&self) -> Vec<f64> {
        let d = self.dim;
        let mut acc = crate::sum::CompensatedVec::zeros(d);
        for (a, &w) in self.atoms.chunks_exact(2 * d).zip(&self.weights) {
            acc.add_scaled(w, &a[d..]);
        }
        acc.value()
    }

    /// CSV with columns `x1..xd, v1..vd, weight`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let d = self.dim;
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
        header.extend((1..=d).map(|k| format!("v{k}")));
        header.push("weight".into());
        w.write_record(&header)?;
        for (a, wt) in self.atoms.chunks_exact(2 * d).zip(&self.weights) {
            let mut row: Vec<String> = a.iter().map(|c| c.to_string()).collect();
            row.push(wt.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let cols = rd.headers()?.len();
        if cols < 3 || (cols - 1) % 2 != 0 {
            return Err(Error::invalid(MODULE, "measure CSV needs columns x1..xd, v1..vd, weight"));
        }
        let dim = (cols - 1) / 2;
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(MODULE, format!("bad number in measure CSV: {e}")))?;
            atoms.extend_from_slice(&vals[..2 * dim]);
            weights.push(vals[2 * dim]);
        }
        Self::new(dim, atoms, weights)
    }
}

/// Full state of `m` leaders and `N` followers. Each agent is stored as a
/// phase point `[position, velocity]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    dim: usize,
    leaders: Vec<f64>,
    followers: Vec<f64>,
}

impl Configuration {
    /// `leaders` holds `m` phase points `[y_k, w_k]`, `followers` holds `N`
    /// phase points `[x_i, v_i]`.
    pub fn new(dim: usize, leaders: Vec<f64>, followers: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid(MODULE, "dimension must be positive"));
        }
        let s = 2 * dim;
        if leaders.is_empty() || !leaders.len().is_multiple_of(s) {
            return Err(Error::invalid(MODULE, "need at least one leader, stored as [y, w] blocks"));
        }
        if !followers.len().is_multiple_of(s) {
            return Err(Error::invalid(MODULE, "followers must be stored as [x, v] blocks"));
        }
        if leaders.iter().chain(&followers).any(|c| !c.is_finite()) {
            return Err(Error::invalid(MODULE, "configuration entries must be finite"));
        }
        Ok(Self { dim, leaders, followers })
    }

    /// Build from separate position and velocity blocks (`m x d` / `N x d`).
    pub fn from_blocks(dim: usize, y: &[f64], w: &[f64], x: &[f64], v: &[f64]) -> Result<Self> {
        if y.len() != w.len() || x.len() != v.len() || !y.len().is_multiple_of(dim) || !x.len().is_multiple_of(dim) {
            return Err(Error::invalid(MODULE, "position and velocity blocks must match"));
        }
        let interleave = |p: &[f64], q: &[f64]| {
            p.chunks_exact(dim)
                .zip(q.chunks_exact(dim))
                .flat_map(|(a, b)| a.iter().chain(b).copied())
                .collect::<Vec<_>>()
        };
        Self::new(dim, interleave(y, w), interleave(x, v))
    }

    pub fn from_parts(dim: usize, leaders: Vec<f64>, followers: &EmpiricalMeasure) -> Result<Self> {
        if followers.dim() != dim {
            return Err(Error::dims(MODULE, dim, followers.dim()));
        }
        Self::new(dim, leaders, followers.flat().to_vec())
    }

    pub(crate) fn zeros(dim: usize, m: usize, n: usize) -> Self {
        Self {
            dim,
            leaders: vec![0.0; 2 * dim * m],
            followers: vec![0.0; 2 * dim * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_leaders(&self) -> usize {
        self.leaders.len() / (2 * self.dim)
    }

    pub fn num_followers(&self) -> usize {
        self.followers.len() / (2 * self.dim)
    }

    pub fn leaders(&self) -> &[f64] {
        &self.leaders
    }

    pub fn followers(&self) -> &[f64] {
        &self.followers
    }

    pub(crate) fn leaders_mut(&mut self) -> &mut [f64] {
        &mut self.leaders
    }

    pub(crate) fn followers_mut(&mut self) -> &mut [f64] {
        &mut self.followers
    }

    pub fn leader(&self, k: usize) -> &[f64] {
        let s = 2 * self.dim;
        &self.leaders[k * s..(k + 1) * s]
    }

    pub fn follower(&self, i: usize) -> &[f64] {
        let s = 2 * self.dim;
        &self.followers[i * s..(i + 1) * s]
    }

    pub fn followers_as_measure(&self) -> Result<EmpiricalMeasure> {
        if self.followers.is_empty() {
            return Ok(EmpiricalMeasure::empty(self.dim));
        }
        EmpiricalMeasure::uniform(self.dim, self.followers.clone())
    }

    pub fn leaders_as_measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::uniform(self.dim, self.leaders.clone())
    }

    pub fn phase_state(&self) -> Result<PhaseState> {
        Ok(PhaseState {
            dim: self.dim,
            leaders: self.leaders.clone(),
            followers: self.followers_as_measure()?,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.leaders.iter().chain(&self.followers).all(|c| c.is_finite())
    }

    /// `self += alpha * other`.
    pub(crate) fn axpy(&mut self, alpha: f64, other: &Configuration) {
        for (a, b) in self.leaders.iter_mut().zip(&other.leaders) {
            *a += alpha * b;
        }
        for (a, b) in self.followers.iter_mut().zip(&other.followers) {
            *a += alpha * b;
        }
    }

    pub(crate) fn zero_out(&mut self) {
        self.leaders.iter_mut().for_each(|x| *x = 0.0);
        self.followers.iter_mut().for_each(|x| *x = 0.0);
    }

    /// Componentwise difference `self - other` (same shape assumed).
    pub fn difference(&self, other: &Configuration) -> Result<Configuration> {
        if self.dim != other.dim || self.leaders.len() != other.leaders.len() || self.followers.len() != other.followers.len() {
            return Err(Error::invalid(MODULE, "configurations have different shapes"));
        }
        Ok(Configuration {
            dim: self.dim,
            leaders: self.leaders.iter().zip(&other.leaders).map(|(a, b)| a - b).collect(),
            followers: self.followers.iter().zip(&other.followers).map(|(a, b)| a - b).collect(),
        })
    }

    /// Permute followers: follower `i` of the result is follower `perm[i]` of `self`.
    pub fn permute_followers(&self, perm: &[usize]) -> Configuration {
        let s = 2 * self.dim;
        let mut followers = Vec::with_capacity(self.followers.len());
        for &p in perm {
            followers.extend_from_slice(&self.followers[p * s..(p + 1) * s]);
        }
        Configuration {
            dim: self.dim,
            leaders: self.leaders.clone(),
            followers,
        }
    }
}

/// A point of the state space: leader phase points plus the follower measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub dim: usize,
    pub leaders: Vec<f64>,
    pub followers: EmpiricalMeasure,
}

fn euclid(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `(1/m) sum_k (|y_k| + |w_k|) + (1/N) sum_i (|x_i| + |v_i|)`, with the
/// follower term dropped when `N = 0`.
pub fn config_norm(c: &Configuration) -> f64 {
    let d = c.dim;
    let block = |flat: &[f64]| -> f64 {
        let n = flat.len() / (2 * d);
        if n == 0 {
            return 0.0;
        }
        let s = crate::sum::compensated_sum(
            flat.chunks_exact(2 * d).map(|p| euclid(&p[..d]) + euclid(&p[d..])),
        );
        s / n as f64
    };
    block(&c.leaders) + block(&c.followers)
}

/// `(1/m) sum_k (|y_k - y'_k| + |w_k - w'_k|) + W1(mu, mu')`.
pub fn x_metric(a: &PhaseState, b: &PhaseState) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::dims(MODULE, a.dim, b.dim));
    }
    if a.leaders.len() != b.leaders.len() {
        return Err(Error::invalid(MODULE, "leader counts differ"));
    }
    let d = a.dim;
    let m = a.leaders.len() / (2 * d);
    let leader_part = if m == 0 {
        0.0
    } else {
        crate::sum::compensated_sum(
            a.leaders
                .chunks_exact(2 * d)
                .zip(b.leaders.chunks_exact(2 * d))
                .map(|(p, q)| dist(&p[..d], &q[..d]) + dist(&p[d..], &q[d..])),
        ) / m as f64
    };
    let measure_part = match (a.followers.is_empty(), b.followers.is_empty()) {
        (true, true) => 0.0,
        (false, false) => w1_distance(&a.followers, &b.followers)?,
        _ => return Err(Error::invalid(MODULE, "cannot compare an empty follower measure with a nonempty one")),
    };
    Ok(leader_part + measure_part)
}

fn check_pair(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
    if mu.dim != nu.dim {
        return Err(Error::dims(MODULE, mu.dim, nu.dim));
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::invalid(MODULE, "Wasserstein distance of an empty measure"));
    }
    Ok(())
}

fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Vec<f64> {
    let s = 2 * mu.dim;
    let mut c = Vec::with_capacity(mu.len() * nu.len());
    for a in mu.atoms.chunks_exact(s) {
        for b in nu.atoms.chunks_exact(s) {
            c.push(dist(a, b));
        }
    }
    c
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Optimal plan as `(i, j, mass)` triples together with the W1 value.
pub(crate) fn w1_with_plan(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<TransportSolution> {
    check_pair(mu, nu)?;
    let cost = cost_matrix(mu, nu);
    let (n1, n2) = (mu.len(), nu.len());
    if mu.is_uniform() && nu.is_uniform() {
        if n1 == n2 {
            let assign = solve_assignment(n1, &cost)?;
            let w = 1.0 / n1 as f64;
            let total = crate::sum::compensated_sum(assign.iter().enumerate().map(|(i, &j)| cost[i * n2 + j]));
            return Ok(TransportSolution {
                cost: total / n1 as f64,
                plan: assign.iter().enumerate().map(|(i, &j)| (i, j, w)).collect(),
            });
        }
        // Integer supplies L/n1 and demands L/n2 keep every pivot exact.
        let l = n1 / gcd(n1, n2) * n2;
        let supply = vec![(l / n1) as f64; n1];
        let demand = vec![(l / n2) as f64; n2];
        let sol = solve_transport(&supply, &demand, &cost)?;
        let scale = l as f64;
        return Ok(TransportSolution {
            cost: sol.cost / scale,
            plan: sol.plan.into_iter().map(|(i, j, f)| (i, j, f / scale)).collect(),
        });
    }
    solve_transport(&mu.weights, &nu.weights, &cost)
}

/// Exact Wasserstein-1 distance with Euclidean ground cost on `R^{2d}`.
///
/// Uniform measures with equal atom counts go through the assignment
/// solver; everything else through the network simplex.
///
/// The pair is put in a canonical order first, so the value is bitwise
/// symmetric in its arguments.
pub fn w1_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    let swap = mu
        .atoms
        .len()
        .cmp(&nu.atoms.len())
        .then_with(|| lex_cmp(&mu.atoms, &nu.atoms))
        .then_with(|| lex_cmp(&mu.weights, &nu.weights))
        .is_gt();
    let (first, second) = if swap { (nu, mu) } else { (mu, nu) };
    Ok(w1_with_plan(first, second)?.cost)
}

/// Same as [`w1_distance`] but always through the transportation simplex;
/// exposed for cross-checking the assignment route.
pub fn w1_distance_simplex(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    check_pair(mu, nu)?;
    Ok(solve_transport(&mu.weights, &nu.weights, &cost_matrix(mu, nu))?.cost)
}

/// `(1/m) sum_k |xi_k - xi'_{pairing[k]}|` for uniform measures with equal
/// counts; `pairing = None` means the identity. Always an upper bound for W1.
pub fn w1_atomic_upper_bound(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, pairing: Option<&[usize]>) -> Result<f64> {
    check_pair(mu, nu)?;
    if mu.len() != nu.len() {
        return Err(Error::invalid(MODULE, "atomic bound needs equal atom counts"));
    }
    if !mu.is_uniform() || !nu.is_uniform() {
        return Err(Error::invalid(MODULE, "atomic bound needs uniform weights"));
    }
    let n = mu.len();
    if let Some(p) = pairing {
        let mut seen = vec![false; n];
        if p.len() != n || p.iter().any(|&j| j >= n || std::mem::replace(&mut seen[j], true)) {
            return Err(Error::invalid(MODULE, "pairing must be a permutation"));
        }
    }
    let total = crate::sum::compensated_sum((0..n).map(|k| {
        let j = pairing.map_or(k, |p| p[k]);
        dist(mu.atom(k), nu.atom(j))
    }));
    Ok(total / n as f64)
}

/// Image measure `map # mu`: atoms mapped pointwise, weights kept.
pub fn push_forward<F>(map: F, mu: &EmpiricalMeasure) -> Result<EmpiricalMeasure>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let s = 2 * mu.dim;
    let mut atoms = Vec::with_capacity(mu.atoms.len());
    for a in mu.atoms.chunks_exact(s) {
        let img = map(a);
        if img.len() != s {
            return Err(Error::dims(MODULE, s, img.len()));
        }
        if img.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(MODULE, "push-forward produced a non-finite atom"));
        }
        atoms.extend_from_slice(&img);
    }
    Ok(EmpiricalMeasure {
        dim: mu.dim,
        atoms,
        weights: mu.weights.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(1, points.iter().flat_map(|&p| [p, 0.0]).collect()).unwrap()
    }

    #[test]
    fn config_norm_examples() {
        let c = Configuration::from_blocks(1, &[3.0], &[4.0], &[0.0], &[0.0]).unwrap();
        assert_eq!(config_norm(&c), 7.0);
        let z = Configuration::from_blocks(2, &[0.0; 2], &[0.0; 2], &[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(config_norm(&z), 0.0);
        let c = Configuration::from_blocks(
            2,
            &[3.0, 4.0, 0.0, 0.0],
            &[0.0; 4],
            &[1.0, 0.0, 0.0, 1.0],
            &[0.0; 4],
        )
        .unwrap();
        assert_eq!(config_norm(&c), 3.5);
    }

    #[test]
    fn config_norm_without_followers() {
        let c = Configuration::from_blocks(1, &[3.0], &[-1.0], &[], &[]).unwrap();
        assert_eq!(config_norm(&c), 4.0);
    }

    #[test]
    fn x_metric_examples() {
        let mu = line(&[0.0]);
        let a = PhaseState {
            dim: 1,
            leaders: vec![0.0, 0.0],
            followers: mu.clone(),
        };
        assert_eq!(x_metric(&a, &a).unwrap(), 0.0);
        let b = PhaseState {
            leaders: vec![1.0, 2.0],
            ..a.clone()
        };
        assert_eq!(x_metric(&a, &b).unwrap(), 3.0);
        let c = PhaseState {
            followers: line(&[1.0]),
            ..a.clone()
        };
        assert_eq!(x_metric(&a, &c).unwrap(), 1.0);
        let bad = PhaseState {
            leaders: vec![0.0; 4],
            ..a.clone()
        };
        assert!(x_metric(&a, &bad).is_err());
    }

    #[test]
    fn w1_examples() {
        assert_eq!(w1_distance(&line(&[0.5]), &line(&[-1.5])).unwrap(), 2.0);
        assert_eq!(w1_distance(&line(&[0.0, 1.0]), &line(&[0.0, 3.0])).unwrap(), 1.0);
        assert_eq!(w1_distance(&line(&[0.0]), &line(&[-1.0, 1.0])).unwrap(), 1.0);
    }

    #[test]
    fn w1_rejects_empty() {
        assert!(w1_distance(&EmpiricalMeasure::empty(1), &line(&[0.0])).is_err());
    }

    #[test]
    fn atomic_bound_examples() {
        let mu = line(&[0.0, 1.0]);
        let nu = line(&[0.0, 3.0]);
        assert_eq!(w1_atomic_upper_bound(&mu, &mu, None).unwrap(), 0.0);
        assert_eq!(w1_atomic_upper_bound(&mu, &nu, None).unwrap(), 1.0);
        assert_eq!(w1_atomic_upper_bound(&mu, &nu, Some(&[1, 0])).unwrap(), 2.0);
        assert!(w1_atomic_upper_bound(&mu, &line(&[0.0]), None).is_err());
        assert!(w1_atomic_upper_bound(&mu, &nu, Some(&[0, 0])).is_err());
    }

    #[test]
    fn push_forward_identity_and_translation() {
        let mu = EmpiricalMeasure::uniform(1, vec![0.0, 1.0, 2.0, -1.0, 0.5, 0.5]).unwrap();
        let same = push_forward(|p| p.to_vec(), &mu).unwrap();
        assert_eq!(w1_distance(&same, &mu).unwrap(), 0.0);
        let shifted = push_forward(|p| vec![p[0] + 3.0, p[1] + 4.0], &mu).unwrap();
        assert!((w1_distance(&shifted, &mu).unwrap() - 5.0).abs() < 1e-12);
        assert!(push_forward(|_| vec![f64::NAN, 0.0], &mu).is_err());
    }

    #[test]
    fn measure_validation() {
        assert!(EmpiricalMeasure::new(1, vec![0.0, 0.0], vec![0.5]).is_err());
        assert!(EmpiricalMeasure::new(1, vec![0.0, 0.0, 1.0, 1.0], vec![0.5, -0.5 + 1.0]).is_ok());
        assert!(EmpiricalMeasure::new(1, vec![f64::INFINITY, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let mu = EmpiricalMeasure::new(1, vec![0.1, -2.0, 3.0, 4.5], vec![0.25, 0.75]).unwrap();
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,v1,weight\n"));
        assert_eq!(EmpiricalMeasure::read_csv(buf.as_slice()).unwrap(), mu);
    }
}
