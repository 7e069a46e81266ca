//! Gaussian target model and the chance constraint on the ego-to-target
//! distance.
//!
//! The probabilistic requirement `P(|x_tgt - x + y_tgt - y| >= d_min) >= alpha`
//! is replaced by linear bounds on `x + y`. Two readings are offered, see
//! [`ChanceMode`]. A seeded Monte-Carlo estimator checks either against the
//! original probabilistic event.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ChanceError;

/// How the chance constraint is turned into deterministic rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChanceMode {
    /// Two-sided band `lower <= x + y <= upper` from [`det_equiv_bounds`].
    #[default]
    PaperLiteral,
    /// One-sided `x + y <= separation_bound(..)`, for an ego trailing the
    /// target.
    Separation,
}

/// Confidence level and minimum distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChanceParams {
    pub alpha: f64,
    pub d_min: f64,
}

impl ChanceParams {
    pub fn new(alpha: f64, d_min: f64) -> Result<Self, ChanceError> {
        let cp = Self { alpha, d_min };
        cp.validate()?;
        Ok(cp)
    }

    pub fn validate(&self) -> Result<(), ChanceError> {
        if !(self.alpha > 0.5 && self.alpha < 1.0) {
            return Err(ChanceError::Invalid(format!(
                "alpha {} outside (0.5, 1)",
                self.alpha
            )));
        }
        if !(self.d_min > 0.0 && self.d_min.is_finite()) {
            return Err(ChanceError::Invalid(format!(
                "d_min {} must be finite and > 0",
                self.d_min
            )));
        }
        Ok(())
    }
}

/// Target position distribution sampled on the planning grid: independent
/// Gaussians per node with constant standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl TargetModel {
    pub fn new(
        mu_x: Vec<f64>,
        mu_y: Vec<f64>,
        sigma_x: f64,
        sigma_y: f64,
    ) -> Result<Self, ChanceError> {
        if mu_x.len() != mu_y.len() {
            return Err(ChanceError::Shape {
                expected: mu_x.len(),
                got: mu_y.len(),
            });
        }
        if !mu_x.iter().chain(&mu_y).all(|v| v.is_finite()) {
            return Err(ChanceError::Invalid("target means must be finite".into()));
        }
        if !(sigma_x >= 0.0 && sigma_y >= 0.0 && sigma_x.is_finite() && sigma_y.is_finite()) {
            return Err(ChanceError::Invalid(
                "standard deviations must be finite and >= 0".into(),
            ));
        }
        Ok(Self {
            mu_x,
            mu_y,
            sigma_x,
            sigma_y,
        })
    }

    pub fn len(&self) -> usize {
        self.mu_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_x.is_empty()
    }

    /// Standard deviation of `x_tgt + y_tgt`.
    pub fn sigma_sum(&self) -> f64 {
        self.sigma_x.hypot(self.sigma_y)
    }

    pub fn mu_sum(&self, k: usize) -> f64 {
        self.mu_x[k] + self.mu_y[k]
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of the standard normal CDF.
///
/// A rational approximation (relative error about 1e-9) is polished by one
/// Halley step against [`normal_cdf`].
pub fn normal_quantile(p: f64) -> Result<f64, ChanceError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ChanceError::Domain(p));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let mut x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };

    // Halley refinement; the error is taken from the tail that keeps it
    // well conditioned.
    let e = if x < 0.0 {
        normal_cdf(x) - p
    } else {
        (1.0 - p) - normal_cdf(-x)
    };
    let u = e / normal_pdf(x);
    x -= u / (1.0 + 0.5 * x * u);
    Ok(x)
}

/// Two-sided band `(lower, upper)` on `x + y` at one node, as used by
/// [`ChanceMode::PaperLiteral`].
pub fn det_equiv_bounds(
    mu_x: f64,
    mu_y: f64,
    sigma_x: f64,
    sigma_y: f64,
    cp: &ChanceParams,
) -> Result<(f64, f64), ChanceError> {
    let mu = mu_x + mu_y;
    let s = sigma_x.hypot(sigma_y);
    let lower = mu - cp.d_min + s * normal_quantile(1.0 - cp.alpha / 2.0)?;
    let upper = mu + cp.d_min + s * normal_quantile(cp.alpha / 2.0)?;
    Ok((lower, upper))
}

/// One-sided upper bound on `x + y` that keeps a trailing ego at least
/// `d_min` behind the target with probability `alpha`.
pub fn separation_bound(
    mu_x: f64,
    mu_y: f64,
    sigma_x: f64,
    sigma_y: f64,
    cp: &ChanceParams,
) -> Result<f64, ChanceError> {
    let s = sigma_x.hypot(sigma_y);
    Ok(mu_x + mu_y - cp.d_min + s * normal_quantile(1.0 - cp.alpha)?)
}

/// Monte-Carlo estimate of the per-node probability of the safe event.
#[derive(Debug, Clone, PartialEq)]
pub struct ChanceEstimate {
    pub per_node: Vec<f64>,
    /// Smallest per-node estimate over the horizon.
    pub horizon_min: f64,
}

/// Estimates `P(|x_tgt + y_tgt - ego_sum| >= d_min)` at every node by
/// sampling the target Gaussians. Deterministic for a fixed seed.
pub fn chance_satisfaction_mc(
    ego_sum: &[f64],
    tm: &TargetModel,
    cp: &ChanceParams,
    n_samples: usize,
    seed: u64,
) -> Result<ChanceEstimate, ChanceError> {
    if ego_sum.len() != tm.len() {
        return Err(ChanceError::Shape {
            expected: tm.len(),
            got: ego_sum.len(),
        });
    }
    if n_samples < 1000 {
        return Err(ChanceError::Invalid(format!(
            "n_samples {n_samples} below the minimum of 1000"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = Normal::new(0.0, tm.sigma_x).map_err(|e| ChanceError::Invalid(e.to_string()))?;
    let ny = Normal::new(0.0, tm.sigma_y).map_err(|e| ChanceError::Invalid(e.to_string()))?;
    let per_node: Vec<f64> = ego_sum
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let gap = tm.mu_sum(k) - e;
            let hits = (0..n_samples)
                .filter(|_| {
                    let d = gap + nx.sample(&mut rng) + ny.sample(&mut rng);
                    d.abs() >= cp.d_min
                })
                .count();
            hits as f64 / n_samples as f64
        })
        .collect();
    let horizon_min = per_node.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ChanceEstimate {
        per_node,
        horizon_min,
    })
}
