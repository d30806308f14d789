//! Spectral EMA with hysteresis: picks the guidance branch for each step.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::GuidanceConfig;
use crate::tensor::{energy_per_sample, ensure_same_shape, Element, Tensor4};

/// Guidance branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Conservative: zero-projected residual, band-reweighted, no rescale.
    #[serde(rename = "CFGZeroFD")]
    CfgZeroFd,
    /// Detail-seeking: band-reweighted CFG followed by std rescale.
    #[serde(rename = "RescaleFDG")]
    RescaleFdg,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::CfgZeroFd => "CFGZeroFD",
            Mode::RescaleFdg => "RescaleFDG",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// EMA of the high-frequency ratio plus the current mode. The only state
/// carried between guidance steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub rho: f64,
    pub mode: Mode,
    pub initialized: bool,
    pub step_index: u64,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self {
            rho: 0.0,
            mode: Mode::CfgZeroFd,
            initialized: false,
            step_index: 0,
        }
    }
}

impl ControllerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds one observation into the EMA and applies the hysteresis rule.
    ///
    /// The first observation seeds the EMA directly.
    pub fn update(&self, r_hf: f64, cfg: &GuidanceConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&r_hf) {
            return Err(Error::RatioRange(r_hf));
        }
        let rho = if self.initialized {
            cfg.beta_ema * self.rho + (1.0 - cfg.beta_ema) * r_hf
        } else {
            r_hf
        };
        Ok(Self {
            rho,
            mode: next_mode(self.mode, rho, cfg),
            initialized: true,
            step_index: self.step_index + 1,
        })
    }
}

/// Hysteresis rule. Inclusive at both thresholds; inside the open band the
/// mode is kept.
pub fn next_mode(current: Mode, rho: f64, cfg: &GuidanceConfig) -> Mode {
    let (high, low) = if cfg.invert_mode_map {
        (Mode::CfgZeroFd, Mode::RescaleFdg)
    } else {
        (Mode::RescaleFdg, Mode::CfgZeroFd)
    };
    if rho >= cfg.tau_hi {
        high
    } else if rho <= cfg.tau_lo {
        low
    } else {
        current
    }
}

/// `|high|^2 / (|low|^2 + |high|^2)` per sample, with `0/0 -> 0`.
pub fn hf_ratio_per_sample<T: Element>(low: &Tensor4<T>, high: &Tensor4<T>) -> Result<Vec<f64>> {
    ensure_same_shape(low.shape(), high.shape())?;
    let el = energy_per_sample(low);
    let eh = energy_per_sample(high);
    Ok(el
        .iter()
        .zip(&eh)
        .map(|(&l, &h)| ratio(l, h))
        .collect())
}

pub(crate) fn ratio(low_energy: f64, high_energy: f64) -> f64 {
    let total = low_energy + high_energy;
    if total > 0.0 {
        (high_energy / total).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Batch mean of [`hf_ratio_per_sample`]; drives one shared mode per step.
pub fn hf_ratio<T: Element>(low: &Tensor4<T>, high: &Tensor4<T>) -> Result<f64> {
    let per = hf_ratio_per_sample(low, high)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}
