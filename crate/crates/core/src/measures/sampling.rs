use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::kernels::norm_sq;

const MODULE: &str = "measures";

/// Initial follower density. Points live in `R^{2d}` as `[x, v]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum InitialDensitySpec {
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    /// Isotropic Gaussian `N(mean, scale^2 I)` conditioned on
    /// `|xi - mean| <= radius`.
    GaussianTruncated { mean: Vec<f64>, scale: f64, radius: f64 },
    /// Mixture of two truncated Gaussians; `first_weight` is the
    /// probability of the first center.
    TwoCluster {
        centers: [Vec<f64>; 2],
        scale: f64,
        radius: f64,
        first_weight: f64,
    },
}

impl InitialDensitySpec {
    /// Phase-space dimension `2d`.
    pub fn phase_len(&self) -> usize {
        match self {
            InitialDensitySpec::UniformBox { lo, .. } => lo.len(),
            InitialDensitySpec::GaussianTruncated { mean, .. } => mean.len(),
            InitialDensitySpec::TwoCluster { centers, .. } => centers[0].len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.phase_len();
        if len == 0 || !len.is_multiple_of(2) {
            return Err(Error::invalid(MODULE, "density points must have even, positive length 2d"));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            InitialDensitySpec::UniformBox { lo, hi } => {
                if hi.len() != len || !finite(lo) || !finite(hi) || lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(Error::invalid(MODULE, "uniform-box needs finite bounds with lo <= hi"));
                }
            }
            InitialDensitySpec::GaussianTruncated { mean, scale, radius } => {
                if !finite(mean) || !(*scale >= 0.0 && scale.is_finite()) || !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::invalid(MODULE, "gaussian-truncated needs finite mean, scale >= 0, radius > 0"));
                }
            }
            InitialDensitySpec::TwoCluster {
                centers,
                scale,
                radius,
                first_weight,
            } => {
                if centers[1].len() != len || !finite(&centers[0]) || !finite(&centers[1]) {
                    return Err(Error::invalid(MODULE, "two-cluster centers must be finite and of equal length"));
                }
                if !(*scale >= 0.0 && scale.is_finite()) || !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::invalid(MODULE, "two-cluster needs scale >= 0, radius > 0"));
                }
                if !(0.0..=1.0).contains(first_weight) {
                    return Err(Error::invalid(MODULE, "two-cluster first_weight must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Radius `R` of a ball `B(0, R)` containing the support.
    pub fn support_radius(&self) -> f64 {
        match self {
            InitialDensitySpec::UniformBox { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l.abs().max(h.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
            InitialDensitySpec::GaussianTruncated { mean, radius, .. } => norm_sq(mean).sqrt() + radius,
            InitialDensitySpec::TwoCluster { centers, radius, .. } => {
                norm_sq(&centers[0]).sqrt().max(norm_sq(&centers[1]).sqrt()) + radius
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            InitialDensitySpec::UniformBox { lo, hi } => {
                for ((o, l), h) in out.iter_mut().zip(lo).zip(hi) {
                    *o = l + (h - l) * rng.random::<f64>();
                }
            }
            InitialDensitySpec::GaussianTruncated { mean, scale, radius } => {
                draw_truncated(rng, mean, *scale, *radius, out);
            }
            InitialDensitySpec::TwoCluster {
                centers,
                scale,
                radius,
                first_weight,
            } => {
                let c = if rng.random::<f64>() < *first_weight { &centers[0] } else { &centers[1] };
                draw_truncated(rng, c, *scale, *radius, out);
            }
        }
    }
}

fn draw_truncated(rng: &mut ChaCha8Rng, mean: &[f64], scale: f64, radius: f64, out: &mut [f64]) {
    if scale == 0.0 {
        out.copy_from_slice(mean);
        return;
    }
    loop {
        let mut r2 = 0.0;
        for (o, m) in out.iter_mut().zip(mean) {
            let z: f64 = rng.sample(StandardNormal);
            *o = m + scale * z;
            r2 += (scale * z) * (scale * z);
        }
        if r2 <= radius * radius {
            return;
        }
    }
}

/// How atoms are drawn from an [`InitialDensitySpec`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingScheme {
    /// Independent draws from a seeded ChaCha stream.
    #[default]
    Random,
    /// Owen-scrambled Sobol' points keyed by the seed. Only for `uniform-box`
    /// densities; any prefix of length `2^k` is a balanced net.
    Sobol,
}

/// `n` atoms drawn with `scheme`; prefix-stable for both schemes.
pub fn sample_initial_measure_with(
    spec: &InitialDensitySpec,
    n: usize,
    seed: u64,
    scheme: SamplingScheme,
) -> Result<EmpiricalMeasure> {
    match scheme {
        SamplingScheme::Random => sample_initial_measure(spec, n, seed),
        SamplingScheme::Sobol => {
            spec.validate()?;
            let InitialDensitySpec::UniformBox { lo, hi } = spec else {
                return Err(Error::invalid(MODULE, "sobol sampling needs a uniform-box density"));
            };
            if n == 0 || n > u32::MAX as usize {
                return Err(Error::invalid(MODULE, "sobol sample size must lie in [1, 2^32)"));
            }
            let len = lo.len();
            if len > sobol_burley::NUM_DIMENSIONS as usize {
                return Err(Error::invalid(MODULE, "too many phase coordinates for sobol sampling"));
            }
            let key = (seed ^ (seed >> 32)) as u32;
            let mut atoms = Vec::with_capacity(n * len);
            for i in 0..n as u32 {
                for j in 0..len {
                    let u = f64::from(sobol_burley::sample(i, j as u32, key));
                    atoms.push(lo[j] + (hi[j] - lo[j]) * u);
                }
            }
            EmpiricalMeasure::uniform(len / 2, atoms)
        }
    }
}

/// `n` i.i.d. atoms with uniform weights, drawn sequentially from one
/// ChaCha stream keyed by `seed`. Sampling is prefix-stable: the first `n`
/// atoms for a seed do not depend on how many atoms are requested.
pub fn sample_initial_measure(spec: &InitialDensitySpec, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid(MODULE, "sample size must be at least 1"));
    }
    let len = spec.phase_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut atoms = vec![0.0; n * len];
    for chunk in atoms.chunks_exact_mut(len) {
        spec.draw(&mut rng, chunk);
    }
    EmpiricalMeasure::uniform(len / 2, atoms)
}
