//! Response-distribution dynamics: exponent tilts applied between
//! iterations.
//!
//! Both maps raise every probability to a power and renormalize. A factor of
//! 1 is the identity; above 1 the distribution's majority cells gain share
//! (accentuation), below 1 they lose share toward uniform (blunting). The
//! time-driven shift applies every iteration; the recruitment-driven bias
//! scales its exponent with the fraction of resources the site just
//! received, so unrecruited sites never move from it.

use serde::{Deserialize, Serialize};

use crate::demographics::{JointDistribution, SiteModel};
use crate::error::{CoreError, Result};

/// Per-site dynamics factors. `shift_factor` drives the time-based tilt,
/// `bias_factor` the recruitment-induced tilt; both equal to 1 gives the
/// static case. The bias applies before the shift within one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct DynamicsConfig {
    pub shift_factor: f64,
    pub bias_factor: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            shift_factor: 1.0,
            bias_factor: 1.0,
        }
    }
}

impl DynamicsConfig {
    pub fn new(shift_factor: f64, bias_factor: f64) -> Result<Self> {
        if !shift_factor.is_finite()
            || shift_factor <= 0.0
            || !bias_factor.is_finite()
            || bias_factor <= 0.0
        {
            return Err(CoreError::InvalidParameter(format!(
                "dynamics factors must be positive (shift {shift_factor}, bias {bias_factor})"
            )));
        }
        Ok(Self {
            shift_factor,
            bias_factor,
        })
    }

    pub fn is_static(&self) -> bool {
        self.shift_factor == 1.0 && self.bias_factor == 1.0
    }
}

/// Raises each entry to `exponent` and renormalizes, with `0^e = 0`.
fn tilt(d: &[f64], exponent: f64) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = d
        .iter()
        .map(|&p| if p == 0.0 { 0.0 } else { p.powf(exponent) })
        .collect();
    let sum: f64 = out.iter().sum();
    // Cannot occur for a valid distribution and positive exponent.
    if !sum.is_finite() || sum <= 0.0 {
        return Err(CoreError::InvalidDistribution(format!(
            "exponent tilt produced invalid total mass {sum}"
        )));
    }
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

/// Time-driven shift: `out[i] = d[i]^factor / Σ_k d[k]^factor`.
pub fn distribution_shift(d: &[f64], shift_factor: f64) -> Result<Vec<f64>> {
    if !shift_factor.is_finite() || shift_factor <= 0.0 {
        return Err(CoreError::InvalidParameter(format!(
            "shift factor must be positive, got {shift_factor}"
        )));
    }
    if shift_factor == 1.0 {
        return Ok(d.to_vec());
    }
    tilt(d, shift_factor)
}

/// Recruitment-driven bias with exponent `1 + allocated_fraction * (bias_factor - 1)`.
/// Identical to [`distribution_shift`] with that exponent.
pub fn causal_bias(d: &[f64], allocated_fraction: f64, bias_factor: f64) -> Result<Vec<f64>> {
    if !bias_factor.is_finite() || bias_factor <= 0.0 {
        return Err(CoreError::InvalidParameter(format!(
            "bias factor must be positive, got {bias_factor}"
        )));
    }
    if !(0.0..=1.0).contains(&allocated_fraction) {
        return Err(CoreError::InvalidParameter(format!(
            "allocated fraction must lie in [0, 1], got {allocated_fraction}"
        )));
    }
    let exponent = 1.0 + allocated_fraction * (bias_factor - 1.0);
    if exponent == 1.0 {
        return Ok(d.to_vec());
    }
    tilt(d, exponent)
}

/// Advances a site's response distribution by one iteration: the bias reacts
/// to the fraction of resources just allocated to the site, then the
/// time-driven shift applies.
pub fn step_dynamics(site: &SiteModel, allocated_fraction: f64) -> Result<SiteModel> {
    let biased = causal_bias(
        site.response.probs(),
        allocated_fraction,
        site.dynamics.bias_factor,
    )?;
    let shifted = distribution_shift(&biased, site.dynamics.shift_factor)?;
    Ok(SiteModel {
        name: site.name.clone(),
        response: JointDistribution::from_probs(shifted)?,
        dynamics: site.dynamics,
    })
}
