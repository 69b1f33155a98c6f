//! Interaction kernels `H: R^{2d} -> R^d` with sublinear growth, and their
//! convolution against empirical measures.
//!
//! A phase point is laid out as `[x_1..x_d, v_1..v_d]`. Every family is
//! finite at the origin and vanishes there, so the self-interaction term of a
//! convolution is harmless.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::sum::{canonical_order, CompensatedVec};

const MODULE: &str = "kernels";

/// Exponent of the attraction term in the repulsion-attraction family.
const ATTRACTION_EXPONENT: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `H(x, v) = s * K / (sigma^2 + |x|^2)^beta * v`.
    CuckerSmale {
        strength: f64,
        scale: f64,
        exponent: f64,
        sign: f64,
    },
    /// `H(x, v) = f(max(|x|, eps)) * x` with `f(r) = sigma_r / r^4 - sigma_a / r^0.4`.
    RepulsionAttraction {
        sigma_r: f64,
        sigma_a: f64,
        regularizer: f64,
    },
    Zero,
    /// Alignment law `H(x, v) = a(|x|) * v` with `a` piecewise linear through
    /// `(radii[i], rates[i])` and held constant outside the table.
    Table { radii: Vec<f64>, rates: Vec<f64> },
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::CuckerSmale { .. } => "cucker_smale",
            KernelFamily::RepulsionAttraction { .. } => "repulsion_attraction",
            KernelFamily::Zero => "zero",
            KernelFamily::Table { .. } => "custom_table",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub growth_constant: f64,
    pub dim: usize,
}

/// Axis-aligned box in `R^{2d}` used for sampling checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn cube(len: usize, half_width: f64) -> Self {
        Self {
            lo: vec![-half_width; len],
            hi: vec![half_width; len],
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for ((o, &lo), &hi) in out.iter_mut().zip(&self.lo).zip(&self.hi) {
            *o = lo + (hi - lo) * rng.random::<f64>();
        }
    }
}

impl Kernel {
    /// Cucker-Smale alignment kernel with rate `a(r) = K / (sigma^2 + r^2)^beta`.
    pub fn cucker_smale(dim: usize, strength: f64, scale: f64, exponent: f64, sign: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(strength > 0.0 && strength.is_finite()) {
            return Err(Error::invalid(MODULE, "cucker_smale strength must be positive"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(MODULE, "cucker_smale scale must be positive"));
        }
        if !(exponent >= 0.0 && exponent.is_finite()) {
            return Err(Error::invalid(MODULE, "cucker_smale exponent must be nonnegative"));
        }
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::invalid(MODULE, "cucker_smale sign must be +1 or -1"));
        }
        // a(r) <= K sigma^{-2 beta}, and |v| <= |xi|.
        let growth = strength * scale.powf(-2.0 * exponent);
        Ok(Self {
            family: KernelFamily::CuckerSmale {
                strength,
                scale,
                exponent,
                sign,
            },
            growth_constant: growth,
            dim,
        })
    }

    /// Defaults: `K = 1`, `sigma = 1`, `beta = 0.45`, alignment sign.
    pub fn cucker_smale_default(dim: usize) -> Result<Self> {
        Self::cucker_smale(dim, 1.0, 1.0, 0.45, -1.0)
    }

    pub fn repulsion_attraction(dim: usize, sigma_r: f64, sigma_a: f64, regularizer: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(sigma_r >= 0.0 && sigma_r.is_finite() && sigma_a >= 0.0 && sigma_a.is_finite()) {
            return Err(Error::invalid(MODULE, "repulsion_attraction sigmas must be nonnegative"));
        }
        if !(regularizer > 0.0 && regularizer.is_finite()) {
            return Err(Error::invalid(MODULE, "repulsion_attraction regularizer must be positive"));
        }
        // |f(max(r, eps))| r / (1 + r) <= sigma_r / eps^3 + sigma_a for every r >= 0.
        let growth = sigma_r / regularizer.powi(3) + sigma_a;
        if !growth.is_finite() {
            return Err(Error::invalid(MODULE, "repulsion_attraction regularizer too small for a finite growth bound"));
        }
        Ok(Self {
            family: KernelFamily::RepulsionAttraction {
                sigma_r,
                sigma_a,
                regularizer,
            },
            growth_constant: growth,
            dim,
        })
    }

    pub fn zero(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            family: KernelFamily::Zero,
            growth_constant: 0.0,
            dim,
        })
    }

    pub fn table(dim: usize, radii: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        if radii.is_empty() || radii.len() != rates.len() {
            return Err(Error::invalid(MODULE, "table needs equally many radii and rates (at least one)"));
        }
        if radii.iter().chain(&rates).any(|v| !v.is_finite()) {
            return Err(Error::invalid(MODULE, "table entries must be finite"));
        }
        if radii[0] < 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(MODULE, "table radii must be nonnegative and strictly increasing"));
        }
        let growth = rates.iter().fold(0.0_f64, |acc, r| acc.max(r.abs()));
        Ok(Self {
            family: KernelFamily::Table { radii, rates },
            growth_constant: growth,
            dim,
        })
    }

    /// Replace the analytic growth constant by a declared one.
    pub fn with_growth_constant(mut self, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::invalid(MODULE, "growth constant must be finite and nonnegative"));
        }
        self.growth_constant = c;
        Ok(self)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.family, KernelFamily::Zero)
    }

    /// Validated evaluation of `H(dx, dv)`.
    pub fn eval(&self, dx: &[f64], dv: &[f64]) -> Result<Vec<f64>> {
        if dx.len() != self.dim {
            return Err(Error::dims(MODULE, self.dim, dx.len()));
        }
        if dv.len() != self.dim {
            return Err(Error::dims(MODULE, self.dim, dv.len()));
        }
        if dx.iter().chain(dv).any(|v| !v.is_finite()) {
            return Err(Error::invalid(MODULE, "non-finite kernel argument"));
        }
        let mut out = vec![0.0; self.dim];
        self.eval_into(dx, dv, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation; `out` has length `dim`.
    #[inline]
    pub fn eval_into(&self, dx: &[f64], dv: &[f64], out: &mut [f64]) {
        match &self.family {
            KernelFamily::CuckerSmale {
                strength,
                scale,
                exponent,
                sign,
            } => {
                let a = sign * cs_rate(*strength, *scale, *exponent, norm_sq(dx));
                for (o, &v) in out.iter_mut().zip(dv) {
                    *o = a * v;
                }
            }
            KernelFamily::RepulsionAttraction {
                sigma_r,
                sigma_a,
                regularizer,
            } => {
                let r = norm_sq(dx).sqrt().max(*regularizer);
                let f = ra_profile(*sigma_r, *sigma_a, r);
                for (o, &x) in out.iter_mut().zip(dx) {
                    *o = f * x;
                }
            }
            KernelFamily::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            KernelFamily::Table { radii, rates } => {
                let (a, _) = table_rate(radii, rates, norm_sq(dx).sqrt());
                for (o, &v) in out.iter_mut().zip(dv) {
                    *o = a * v;
                }
            }
        }
    }

    /// Vector-Jacobian product: accumulates `lambda^T dH/d(dx)` into `gx` and
    /// `lambda^T dH/d(dv)` into `gv`, scaled by `alpha`.
    ///
    /// The repulsion-attraction family is differentiated piecewise; on the
    /// sphere `|dx| = eps` the inner branch is used.
    #[inline]
    pub fn vjp_acc(&self, dx: &[f64], dv: &[f64], lambda: &[f64], alpha: f64, gx: &mut [f64], gv: &mut [f64]) {
        match &self.family {
            KernelFamily::CuckerSmale {
                strength,
                scale,
                exponent,
                sign,
            } => {
                let r2 = norm_sq(dx);
                let base = scale * scale + r2;
                let a = cs_rate(*strength, *scale, *exponent, r2);
                // d a / d dx = -2 beta a / (sigma^2 + r^2) * dx
                let lv = dot(lambda, dv);
                let cx = alpha * sign * lv * (-2.0 * exponent * a / base);
                let cv = alpha * sign * a;
                for (g, &x) in gx.iter_mut().zip(dx) {
                    *g += cx * x;
                }
                for (g, &l) in gv.iter_mut().zip(lambda) {
                    *g += cv * l;
                }
            }
            KernelFamily::RepulsionAttraction {
                sigma_r,
                sigma_a,
                regularizer,
            } => {
                let r = norm_sq(dx).sqrt();
                let lx = dot(lambda, dx);
                if r > *regularizer {
                    let f = ra_profile(*sigma_r, *sigma_a, r);
                    let fp = -4.0 * sigma_r * r.powi(-5)
                        + ATTRACTION_EXPONENT * sigma_a * r.powf(-ATTRACTION_EXPONENT - 1.0);
                    let c = alpha * fp * lx / r;
                    for ((g, &l), &x) in gx.iter_mut().zip(lambda).zip(dx) {
                        *g += alpha * f * l + c * x;
                    }
                } else {
                    let f = ra_profile(*sigma_r, *sigma_a, *regularizer);
                    for (g, &l) in gx.iter_mut().zip(lambda) {
                        *g += alpha * f * l;
                    }
                }
            }
            KernelFamily::Zero => {}
            KernelFamily::Table { radii, rates } => {
                let r = norm_sq(dx).sqrt();
                let (a, slope) = table_rate(radii, rates, r);
                let lv = dot(lambda, dv);
                if r > 0.0 && slope != 0.0 {
                    let c = alpha * slope * lv / r;
                    for (g, &x) in gx.iter_mut().zip(dx) {
                        *g += c * x;
                    }
                }
                for (g, &l) in gv.iter_mut().zip(lambda) {
                    *g += alpha * a * l;
                }
            }
        }
    }

    /// Frobenius norm of the `d x 2d` Jacobian at `(dx, dv)`; an upper bound
    /// for the local operator norm.
    pub fn jacobian_norm(&self, dx: &[f64], dv: &[f64]) -> f64 {
        let d = self.dim;
        let mut e = vec![0.0; d];
        let mut gx = vec![0.0; d];
        let mut gv = vec![0.0; d];
        let mut total = 0.0;
        for row in 0..d {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[row] = 1.0;
            gx.iter_mut().for_each(|x| *x = 0.0);
            gv.iter_mut().for_each(|x| *x = 0.0);
            self.vjp_acc(dx, dv, &e, 1.0, &mut gx, &mut gv);
            total += norm_sq(&gx) + norm_sq(&gv);
        }
        total.sqrt()
    }

    /// Largest sampled Jacobian norm over the cube `[-radius, radius]^{2d}`,
    /// used as the kernel's Lipschitz modulus on that compact.
    pub fn estimate_lipschitz(&self, radius: f64, n_samples: usize, seed: u64) -> f64 {
        let d = self.dim;
        let bx = SampleBox::cube(2 * d, radius);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; 2 * d];
        // The origin and the corners are included explicitly: for every
        // shipped family the supremum sits at one of them or in the interior.
        let mut best = self.jacobian_norm(&p[..d], &p[d..]);
        for corner in [radius, -radius] {
            p.iter_mut().for_each(|x| *x = corner);
            best = best.max(self.jacobian_norm(&p[..d], &p[d..]));
        }
        for _ in 0..n_samples {
            bx.sample(&mut rng, &mut p);
            best = best.max(self.jacobian_norm(&p[..d], &p[d..]));
        }
        best
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid(MODULE, "dimension must be positive"));
    }
    Ok(())
}

#[inline]
pub(crate) fn cs_rate(strength: f64, scale: f64, exponent: f64, r2: f64) -> f64 {
    let base = scale * scale + r2;
    if exponent == 0.0 {
        strength
    } else if exponent == 0.5 {
        strength / base.sqrt()
    } else if exponent == 1.0 {
        strength / base
    } else {
        strength * base.powf(-exponent)
    }
}

#[inline]
fn ra_profile(sigma_r: f64, sigma_a: f64, r: f64) -> f64 {
    sigma_r / r.powi(4) - sigma_a / r.powf(ATTRACTION_EXPONENT)
}

/// Piecewise-linear rate and its slope at `r`.
fn table_rate(radii: &[f64], rates: &[f64], r: f64) -> (f64, f64) {
    let n = radii.len();
    if r <= radii[0] {
        return (rates[0], 0.0);
    }
    if r >= radii[n - 1] {
        return (rates[n - 1], 0.0);
    }
    let k = radii.partition_point(|&x| x <= r) - 1;
    let slope = (rates[k + 1] - rates[k]) / (radii[k + 1] - radii[k]);
    (rates[k] + slope * (r - radii[k]), slope)
}

#[inline]
pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(H * mu)(query) = sum_l w_l H(query - xi_l)`.
///
/// Atoms are visited in canonical (lexicographic) order and accumulated with
/// compensated summation, so the result is bitwise independent of the order
/// in which the measure lists its atoms.
pub fn convolve_empirical(kernel: &Kernel, atoms: &EmpiricalMeasure, query: &[f64]) -> Result<Vec<f64>> {
    let d = kernel.dim;
    if atoms.dim() != d {
        return Err(Error::dims(MODULE, d, atoms.dim()));
    }
    if query.len() != 2 * d {
        return Err(Error::dims(MODULE, 2 * d, query.len()));
    }
    if atoms.is_empty() {
        return Err(Error::invalid(MODULE, "cannot convolve against an empty measure"));
    }
    if query.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(MODULE, "non-finite query point"));
    }
    let order = canonical_order(atoms.flat(), 2 * d, Some(atoms.weights()));
    let mut acc = CompensatedVec::zeros(d);
    let mut diff = vec![0.0; 2 * d];
    let mut h = vec![0.0; d];
    for &l in &order {
        let atom = atoms.atom(l);
        for ((o, q), a) in diff.iter_mut().zip(query).zip(atom) {
            *o = q - a;
        }
        kernel.eval_into(&diff[..d], &diff[d..], &mut h);
        acc.add_scaled(atoms.weights()[l], &h);
    }
    Ok(acc.value())
}

/// Result of an empirical growth check.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthEstimate {
    pub estimate: f64,
    pub witness: Vec<f64>,
}

/// Max of `|H(xi)| / (1 + |xi|)` over seeded uniform samples of `sample_box`.
/// Fails when the estimate exceeds the kernel's declared constant.
pub fn estimate_growth_constant(
    kernel: &Kernel,
    sample_box: &SampleBox,
    n_samples: usize,
    seed: u64,
) -> Result<GrowthEstimate> {
    let d = kernel.dim;
    if n_samples == 0 {
        return Err(Error::invalid(MODULE, "n_samples must be at least 1"));
    }
    if sample_box.lo.len() != 2 * d || sample_box.hi.len() != 2 * d {
        return Err(Error::dims(MODULE, 2 * d, sample_box.lo.len()));
    }
    if sample_box.lo.iter().zip(&sample_box.hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
        return Err(Error::invalid(MODULE, "sample box bounds must be finite with lo <= hi"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![0.0; 2 * d];
    let mut h = vec![0.0; d];
    let mut best = GrowthEstimate {
        estimate: 0.0,
        witness: p.clone(),
    };
    for _ in 0..n_samples {
        sample_box.sample(&mut rng, &mut p);
        kernel.eval_into(&p[..d], &p[d..], &mut h);
        let ratio = norm_sq(&h).sqrt() / (1.0 + norm_sq(&p).sqrt());
        if ratio > best.estimate {
            best.estimate = ratio;
            best.witness.copy_from_slice(&p);
        }
    }
    if best.estimate > kernel.growth_constant {
        return Err(Error::GrowthViolation {
            estimate: best.estimate,
            declared: kernel.growth_constant,
            witness: best.witness,
        });
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cucker_smale_beta_zero_is_linear_alignment() {
        let k = Kernel::cucker_smale(2, 1.0, 1.0, 0.0, -1.0).unwrap();
        assert_eq!(k.eval(&[3.0, 4.0], &[1.0, 0.0]).unwrap(), vec![-1.0, 0.0]);
    }

    #[test]
    fn repulsion_attraction_balances_at_unit_distance() {
        let k = Kernel::repulsion_attraction(2, 1.0, 1.0, 1e-6).unwrap();
        assert_eq!(k.eval(&[1.0, 0.0], &[7.0, -3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn every_family_vanishes_at_origin() {
        let kernels = [
            Kernel::cucker_smale_default(2).unwrap(),
            Kernel::repulsion_attraction(2, 1.0, 1.0, 1e-3).unwrap(),
            Kernel::zero(2).unwrap(),
            Kernel::table(2, vec![0.0, 1.0], vec![1.0, 0.5]).unwrap(),
        ];
        for k in &kernels {
            assert_eq!(k.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0], "{:?}", k.family);
        }
    }

    #[test]
    fn eval_rejects_bad_input() {
        let k = Kernel::cucker_smale_default(2).unwrap();
        assert!(matches!(k.eval(&[1.0], &[1.0, 0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(k.eval(&[f64::NAN, 0.0], &[1.0, 0.0]), Err(Error::InvalidInput { .. })));
    }

    #[test]
    fn constructor_validation() {
        assert!(Kernel::cucker_smale(1, 0.0, 1.0, 0.0, -1.0).is_err());
        assert!(Kernel::cucker_smale(1, 1.0, 1.0, 0.0, 0.5).is_err());
        assert!(Kernel::repulsion_attraction(1, 1.0, 1.0, 0.0).is_err());
        assert!(Kernel::table(1, vec![1.0, 0.5], vec![1.0, 1.0]).is_err());
        assert!(Kernel::zero(0).is_err());
    }

    #[test]
    fn two_atom_hand_summation() {
        let k = Kernel::cucker_smale(1, 1.0, 1.0, 0.0, -1.0).unwrap();
        let mu = EmpiricalMeasure::uniform(1, vec![0.0, 1.0, 0.0, 3.0]).unwrap();
        // -(0 - 1)/2 - (0 - 3)/2 = 2
        assert_eq!(convolve_empirical(&k, &mu, &[0.0, 0.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn single_atom_at_query_gives_zero() {
        let k = Kernel::cucker_smale_default(2).unwrap();
        let mu = EmpiricalMeasure::uniform(2, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        assert_eq!(convolve_empirical(&k, &mu, &[0.3, -1.0, 2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn convolution_rejects_empty_measure() {
        let k = Kernel::zero(1).unwrap();
        let mu = EmpiricalMeasure::empty(1);
        assert!(convolve_empirical(&k, &mu, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_kernel_growth_estimate_is_zero() {
        let k = Kernel::zero(2).unwrap();
        let est = estimate_growth_constant(&k, &SampleBox::cube(4, 5.0), 100, 1).unwrap();
        assert_eq!(est.estimate, 0.0);
    }

    #[test]
    fn cucker_smale_growth_estimate_approaches_strength() {
        // sup 2|v| / (1 + |(x, v)|) = 2, approached for |v| >> 1 and x = 0.
        let k = Kernel::cucker_smale(1, 2.0, 1.0, 0.0, 1.0).unwrap();
        let bx = SampleBox {
            lo: vec![-1e-3, 1e6],
            hi: vec![1e-3, 2e6],
        };
        let est = estimate_growth_constant(&k, &bx, 200, 3).unwrap();
        assert!(est.estimate <= 2.0);
        assert!(est.estimate > 1.999);
    }

    #[test]
    fn capped_repulsion_has_finite_growth() {
        let k = Kernel::repulsion_attraction(1, 100.0, 1.0, 1e-6).unwrap();
        let bx = SampleBox {
            lo: vec![-1e-6, -1.0],
            hi: vec![1e-6, 1.0],
        };
        let est = estimate_growth_constant(&k, &bx, 500, 5).unwrap();
        assert!(est.estimate.is_finite());
        // At r = eps the capped value is |f(eps)| * eps = sigma_r / eps^3 (to leading order).
        let at_cap = k.eval(&[1e-6], &[0.0]).unwrap()[0].abs();
        assert!(at_cap <= k.growth_constant * (1.0 + 1e-6));
        assert!(at_cap.is_finite());
    }

    #[test]
    fn growth_violation_reports_witness() {
        let k = Kernel::cucker_smale(1, 2.0, 1.0, 0.0, 1.0)
            .unwrap()
            .with_growth_constant(0.5)
            .unwrap();
        let err = estimate_growth_constant(&k, &SampleBox::cube(2, 10.0), 200, 9).unwrap_err();
        match err {
            Error::GrowthViolation { witness, estimate, declared } => {
                assert_eq!(witness.len(), 2);
                assert!(estimate > declared);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn fd_check(k: &Kernel, dx: &[f64], dv: &[f64], lambda: &[f64]) {
        let d = k.dim;
        let mut gx = vec![0.0; d];
        let mut gv = vec![0.0; d];
        k.vjp_acc(dx, dv, lambda, 1.0, &mut gx, &mut gv);
        let h = 1e-6;
        let f = |px: &[f64], pv: &[f64]| dot(lambda, &k.eval(px, pv).unwrap());
        for j in 0..d {
            let mut p = dx.to_vec();
            p[j] += h;
            let up = f(&p, dv);
            p[j] -= 2.0 * h;
            let dn = f(&p, dv);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - gx[j]).abs() <= 1e-6 * (1.0 + fd.abs()), "x{j}: {fd} vs {}", gx[j]);
            let mut p = dv.to_vec();
            p[j] += h;
            let up = f(dx, &p);
            p[j] -= 2.0 * h;
            let dn = f(dx, &p);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - gv[j]).abs() <= 1e-6 * (1.0 + fd.abs()), "v{j}: {fd} vs {}", gv[j]);
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let dx = [0.7, -1.2];
        let dv = [0.4, 2.0];
        let lambda = [1.3, -0.6];
        fd_check(&Kernel::cucker_smale_default(2).unwrap(), &dx, &dv, &lambda);
        fd_check(&Kernel::cucker_smale(2, 2.0, 0.5, 1.5, 1.0).unwrap(), &dx, &dv, &lambda);
        fd_check(&Kernel::repulsion_attraction(2, 0.5, 1.0, 1e-3).unwrap(), &dx, &dv, &lambda);
        fd_check(&Kernel::table(2, vec![0.0, 1.0, 3.0], vec![1.0, 0.5, 0.1]).unwrap(), &dx, &dv, &lambda);
    }
}
