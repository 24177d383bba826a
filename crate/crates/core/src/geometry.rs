//! Cell geometry, ED placement and fractional power control.
//!
//! EDs are spread uniformly over the annulus `r_min <= d <= r_max` around the
//! ES. An ED at distance `d` is received with power `(d / r_ref)^(-α_eff)`
//! where `α_eff = α - β` is what remains of the path loss after power
//! control. `λ` is the mean of that power over the placement distribution and
//! is the single number through which path loss, power control and cell size
//! enter the detector statistics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold on `|α_eff - 2|` below which the logarithmic branch of `λ` is used.
pub const LOG_BRANCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    /// Minimum ED distance in meters.
    pub r_min: f64,
    /// Cell radius in meters.
    pub r_max: f64,
    /// Distance at which the per-ED SNR equals `1 / noise_var`.
    pub r_ref: f64,
    /// Path-loss exponent.
    pub alpha: f64,
    /// Compensated part of the path-loss exponent, `0 <= beta <= alpha`.
    pub beta: f64,
    /// Noise variance per subcarrier (linear).
    pub noise_var: f64,
    /// Number of EDs `K`.
    pub num_eds: usize,
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.r_min,
            self.r_max,
            self.r_ref,
            self.alpha,
            self.beta,
            self.noise_var,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("cell", "all parameters must be finite"));
        }
        if !(self.r_ref > 0.0) {
            return Err(Error::config(
                "cell.r_ref",
                format!("must be positive (got {})", self.r_ref),
            ));
        }
        if self.r_min < self.r_ref {
            return Err(Error::config(
                "cell.r_min",
                format!("must be >= r_ref ({} < {})", self.r_min, self.r_ref),
            ));
        }
        if self.r_max <= self.r_min {
            return Err(Error::config(
                "cell.r_max",
                format!("must exceed r_min ({} <= {})", self.r_max, self.r_min),
            ));
        }
        if self.alpha < 0.0 {
            return Err(Error::config("cell.alpha", "must be nonnegative"));
        }
        if self.beta < 0.0 || self.beta > self.alpha {
            return Err(Error::config(
                "cell.beta",
                format!(
                    "must lie in [0, alpha] (got {}, alpha {})",
                    self.beta, self.alpha
                ),
            ));
        }
        if self.noise_var < 0.0 {
            return Err(Error::config("cell.noise_var", "must be nonnegative"));
        }
        if self.num_eds == 0 {
            return Err(Error::config("cell.num_eds", "must be at least 1"));
        }
        Ok(())
    }

    pub fn alpha_eff(&self) -> f64 {
        self.alpha - self.beta
    }

    /// Reference SNR `1 / σ_n²` in dB.
    pub fn snr_db(&self) -> f64 {
        -10.0 * self.noise_var.log10()
    }
}

/// Deterministic placement used for the training experiments: squared
/// distances are uniformly spaced between `r_min²` and `r_max²`.
pub fn ed_link_distances(cfg: &CellConfig) -> Vec<f64> {
    let k = cfg.num_eds;
    if k <= 1 {
        return vec![cfg.r_min; k];
    }
    let lo = cfg.r_min * cfg.r_min;
    let span = cfg.r_max * cfg.r_max - lo;
    (0..k)
        .map(|i| {
            if i == k - 1 {
                cfg.r_max
            } else {
                (lo + i as f64 * span / (k - 1) as f64).sqrt()
            }
        })
        .collect()
}

/// Inverse-CDF transform of a uniform `u ∈ [0, 1)` to a link distance.
pub fn link_distance_from_uniform(cfg: &CellConfig, u: f64) -> f64 {
    let lo = cfg.r_min * cfg.r_min;
    (lo + u * (cfg.r_max * cfg.r_max - lo)).sqrt()
}

/// Draw a link distance for an ED placed uniformly in the annulus.
pub fn sample_link_distance<R: Rng + ?Sized>(cfg: &CellConfig, rng: &mut R) -> f64 {
    link_distance_from_uniform(cfg, rng.random::<f64>())
}

/// Received power `(d / r_ref)^(-α_eff)` after power control.
pub fn received_power(d: f64, cfg: &CellConfig) -> Result<f64> {
    if !(d >= cfg.r_ref) {
        return Err(Error::OutOfRange(format!(
            "link distance {d} m is below the reference distance {} m",
            cfg.r_ref
        )));
    }
    let a = cfg.alpha_eff();
    if a == 0.0 {
        return Ok(1.0);
    }
    Ok((d / cfg.r_ref).powf(-a))
}

/// `λ = E[(d / r_ref)^(-α_eff)]` with `d` drawn from the annulus placement.
pub fn lambda_param(cfg: &CellConfig) -> f64 {
    lambda_for(cfg.r_min, cfg.r_max, cfg.r_ref, cfg.alpha_eff())
}

/// [`lambda_param`] for explicit geometry, convenient for sweeps.
pub fn lambda_for(r_min: f64, r_max: f64, r_ref: f64, alpha_eff: f64) -> f64 {
    let norm = 2.0 * r_ref.powf(alpha_eff) / (r_max * r_max - r_min * r_min);
    if (alpha_eff - 2.0).abs() < LOG_BRANCH_TOL {
        norm * (r_max / r_min).ln()
    } else {
        let e = 2.0 - alpha_eff;
        norm * (r_min.powf(e) - r_max.powf(e)) / (alpha_eff - 2.0)
    }
}
