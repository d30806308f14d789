//! Per-step guidance rules: band reweighting, std rescale, zero-projection,
//! mask gating and the combined two-branch step.
//!
//! Internally everything runs on `f64` copies of the `f32` predictions. The
//! difference of two `f32` values is exact in `f64`, which keeps the band
//! partition `low + high == delta` and the scale-1 CFG reduction exact.

use serde::{Deserialize, Serialize};

use crate::controller::{hf_ratio_per_sample, ControllerState, Mode};
use crate::error::{Error, Result};
use crate::tensor::{
    dot_per_sample, energy_per_sample, ensure_same_shape, gaussian_blur, mean_per_sample,
    std_per_sample, Element, GaussianKernel, Tensor4,
};

/// Floor on `std(y_cfg)` in [`rescale_to_std`].
pub const RESCALE_EPS: f64 = 1e-8;
/// Below this `<y_u, y_u>` the projection coefficient is defined as 0.
pub const PROJECTION_EPS: f64 = 1e-12;

/// Scalar knobs of the guidance step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Guidance scale.
    #[serde(rename = "s")]
    pub scale: f64,
    /// Mix between the std-matched and raw guided prediction.
    pub alpha_rescale: f64,
    /// Gain on the Gaussian low band, in `[0, 1]`.
    pub lambda_low: f64,
    /// Gain on the residual high band, `>= 1`.
    pub lambda_high: f64,
    /// Gaussian sigma (pixels) for the band split.
    pub sigma_split: f64,
    pub beta_ema: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
    /// Re-center on the mean before matching std (off: pure gain).
    pub rescale_recenters: bool,
    /// Map high `rho` to the conservative branch instead.
    pub invert_mode_map: bool,
    /// Bypass the controller's branch choice. The controller still updates.
    pub force_mode: Option<Mode>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            scale: 4.5,
            alpha_rescale: 0.7,
            lambda_low: 0.6,
            lambda_high: 1.3,
            sigma_split: 1.0,
            beta_ema: 0.8,
            tau_lo: 0.45,
            tau_hi: 0.60,
            rescale_recenters: false,
            invert_mode_map: false,
            force_mode: None,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("s", self.scale),
            ("alpha_rescale", self.alpha_rescale),
            ("lambda_low", self.lambda_low),
            ("lambda_high", self.lambda_high),
            ("sigma_split", self.sigma_split),
            ("beta_ema", self.beta_ema),
            ("tau_lo", self.tau_lo),
            ("tau_hi", self.tau_hi),
        ];
        for (key, v) in finite {
            if !v.is_finite() {
                return Err(Error::config(key, format!("must be finite, got {v}")));
            }
        }
        if self.scale <= 0.0 {
            return Err(Error::config("s", format!("must be > 0, got {}", self.scale)));
        }
        if !(0.0..=1.0).contains(&self.alpha_rescale) {
            return Err(Error::config("alpha_rescale", format!("must be in [0, 1], got {}", self.alpha_rescale)));
        }
        if !(0.0..=1.0).contains(&self.lambda_low) {
            return Err(Error::config("lambda_low", format!("must be in [0, 1], got {}", self.lambda_low)));
        }
        if self.lambda_high < 1.0 {
            return Err(Error::config("lambda_high", format!("must be >= 1, got {}", self.lambda_high)));
        }
        if self.sigma_split <= 0.0 {
            return Err(Error::config("sigma_split", format!("must be > 0, got {}", self.sigma_split)));
        }
        if !(self.beta_ema > 0.0 && self.beta_ema < 1.0) {
            return Err(Error::config("beta_ema", format!("must be in (0, 1), got {}", self.beta_ema)));
        }
        if !(0.0 < self.tau_lo && self.tau_lo < self.tau_hi && self.tau_hi < 1.0) {
            return Err(Error::config(
                "tau_lo, tau_hi",
                format!(
                    "need 0 < tau_lo < tau_hi < 1, got tau_lo = {}, tau_hi = {}",
                    self.tau_lo, self.tau_hi
                ),
            ));
        }
        Ok(())
    }

    fn kernel(&self) -> Result<GaussianKernel> {
        GaussianKernel::new(self.sigma_split)
    }
}

/// Result of [`fdg_reweight`]. `low + high == delta` holds elementwise.
#[derive(Debug, Clone)]
pub struct FdgBands {
    pub tilde: Tensor4<f64>,
    pub low: Tensor4<f64>,
    pub high: Tensor4<f64>,
}

/// Splits `delta` into a Gaussian low band and the subtractive high band and
/// returns `lambda_low * low + lambda_high * high` alongside both bands.
pub fn fdg_reweight<T: Element>(delta: &Tensor4<T>, cfg: &GuidanceConfig) -> Result<FdgBands> {
    delta.check_finite()?;
    let d: Tensor4<f64> = delta.cast();
    // low band on the f32 grid so that `d - low` is exact in f64
    let low = gaussian_blur(&d, &cfg.kernel()?).map(|v| v as f32 as f64);
    let high = d.zip_map(&low, |x, l| x - l)?;
    let tilde = low.zip_map(&high, |l, h| cfg.lambda_low * l + cfg.lambda_high * h)?;
    Ok(FdgBands { tilde, low, high })
}

/// Gain-only std matching blended with the input:
/// `alpha * y * (target / max(std(y), eps)) + (1 - alpha) * y`, per sample.
pub fn rescale_to_std<T: Element>(y_cfg: &Tensor4<T>, target_std: &[f64], alpha: f64) -> Result<Tensor4<T>> {
    rescale_to_std_with(y_cfg, target_std, alpha, false)
}

/// [`rescale_to_std`] with optional mean re-centering, where the gain is
/// applied about the sample mean instead of zero.
pub fn rescale_to_std_with<T: Element>(
    y_cfg: &Tensor4<T>,
    target_std: &[f64],
    alpha: f64,
    recenter: bool,
) -> Result<Tensor4<T>> {
    let shape = y_cfg.shape();
    if target_std.len() != shape.n {
        return Err(Error::config(
            "target_std",
            format!("expected {} values, got {}", shape.n, target_std.len()),
        ));
    }
    if let Some(t) = target_std.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::config("target_std", format!("must be finite and >= 0, got {t}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("alpha_rescale", format!("must be in [0, 1], got {alpha}")));
    }
    let stds = std_per_sample(y_cfg);
    let means = if recenter {
        mean_per_sample(y_cfg)
    } else {
        vec![0.0; shape.n]
    };
    let len = shape.sample_len();
    let data = y_cfg
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = i / len;
            let gain = target_std[s] / stds[s].max(RESCALE_EPS);
            let v = v.to_f64();
            let scaled = (v - means[s]) * gain + means[s];
            T::from_f64(alpha * scaled + (1.0 - alpha) * v)
        })
        .collect();
    Tensor4::new(shape, data)
}

/// Zero-projection residual and coefficients.
#[derive(Debug, Clone)]
pub struct Projection<T: Element> {
    pub residual: Tensor4<T>,
    pub alpha_par: Vec<f64>,
    /// Samples where `<y_u, y_u>` fell below [`PROJECTION_EPS`] and the
    /// coefficient was set to 0.
    pub degenerate: Vec<bool>,
}

/// Removes from `y_c` its component along `y_u`, per sample.
pub fn zero_project<T: Element>(y_c: &Tensor4<T>, y_u: &Tensor4<T>) -> Result<Projection<T>> {
    let cu = dot_per_sample(y_c, y_u)?;
    let uu = energy_per_sample(y_u);
    let degenerate: Vec<bool> = uu.iter().map(|&e| e <= PROJECTION_EPS).collect();
    let alpha_par: Vec<f64> = cu
        .iter()
        .zip(&uu)
        .zip(&degenerate)
        .map(|((&c, &u), &deg)| if deg { 0.0 } else { c / u })
        .collect();
    let len = y_c.shape().sample_len();
    let data = y_c
        .data()
        .iter()
        .zip(y_u.data())
        .enumerate()
        .map(|(i, (&c, &u))| T::from_f64(c.to_f64() - alpha_par[i / len] * u.to_f64()))
        .collect();
    Ok(Projection {
        residual: Tensor4::new(y_c.shape(), data)?,
        alpha_par,
        degenerate,
    })
}

/// Elementwise gate; a single-channel mask broadcasts across channels.
pub fn apply_mask<T: Element, M: Element>(delta: &Tensor4<T>, mask: &Tensor4<M>) -> Result<Tensor4<T>> {
    let (ds, ms) = (delta.shape(), mask.shape());
    if ms.n != ds.n || ms.h != ds.h || ms.w != ds.w || (ms.c != 1 && ms.c != ds.c) {
        return Err(Error::ShapeMismatch { left: ds, right: ms });
    }
    if let Some(index) = mask
        .data()
        .iter()
        .position(|v| !(0.0..=1.0).contains(&v.to_f64()))
    {
        return Err(Error::MaskRange {
            index,
            value: mask.data()[index].to_f64(),
        });
    }
    let plane = ds.plane_len();
    let data = delta
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let b = i / ds.sample_len();
            let p = i % plane;
            let mi = if ms.c == 1 { b * plane + p } else { i };
            T::from_f64(v.to_f64() * mask.data()[mi].to_f64())
        })
        .collect();
    Tensor4::new(ds, data)
}

/// Per-sample quantities recorded by [`zeresfdg_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    /// `|delta_low|^2` per sample.
    pub energy_low: Vec<f64>,
    /// `|delta_high|^2` per sample.
    pub energy_high: Vec<f64>,
    pub alpha_par: Vec<f64>,
    pub projection_degenerate: Vec<bool>,
    pub std_cond: Vec<f64>,
    /// Std of the guided prediction before any rescale.
    pub std_guided: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GuidedOutput {
    pub y: Tensor4<f32>,
    /// High-frequency ratio per sample.
    pub r_hf: Vec<f64>,
    /// Batch mean of `r_hf`; what the controller saw.
    pub r_hf_mean: f64,
    pub mode_used: Mode,
    pub diagnostics: StepDiagnostics,
}

/// One guidance step.
///
/// Splits `y_c - y_u` into bands, feeds the high-frequency ratio to the
/// controller, then evaluates the branch the updated controller selects:
///
/// * `CFGZeroFD`: `y = alpha_par * y_u + s * mask * FDG(y_c - alpha_par * y_u)`
/// * `RescaleFDG`: `y_cfg = y_u + s * mask * FDG(y_c - y_u)`, then std rescale
///   against `std(y_c)` mixed by `alpha_rescale`.
pub fn zeresfdg_step(
    y_c: &Tensor4<f32>,
    y_u: &Tensor4<f32>,
    cfg: &GuidanceConfig,
    state: &ControllerState,
    mask: Option<&Tensor4<f32>>,
) -> Result<(GuidedOutput, ControllerState)> {
    cfg.validate()?;
    ensure_same_shape(y_c.shape(), y_u.shape())?;
    let yc: Tensor4<f64> = y_c.cast();
    let yu: Tensor4<f64> = y_u.cast();

    let delta = yc.zip_map(&yu, |c, u| c - u)?;
    let bands = fdg_reweight(&delta, cfg)?;
    let r_hf = hf_ratio_per_sample(&bands.low, &bands.high)?;
    let r_hf_mean = r_hf.iter().sum::<f64>() / r_hf.len() as f64;
    let next = state.update(r_hf_mean, cfg)?;
    let mode = cfg.force_mode.unwrap_or(next.mode);

    let projection = zero_project(&yc, &yu)?;
    let gate = |t: Tensor4<f64>| match mask {
        Some(g) => apply_mask(&t, g),
        None => Ok(t),
    };
    let std_cond = std_per_sample(&yc);

    let (y, std_guided) = match mode {
        Mode::CfgZeroFd => {
            let tilde = gate(fdg_reweight(&projection.residual, cfg)?.tilde)?;
            let len = yu.shape().sample_len();
            let data = yu
                .data()
                .iter()
                .zip(tilde.data())
                .enumerate()
                .map(|(i, (&u, &t))| projection.alpha_par[i / len] * u + cfg.scale * t)
                .collect();
            let y = Tensor4::new(yu.shape(), data)?;
            let std_guided = std_per_sample(&y);
            (y, std_guided)
        }
        Mode::RescaleFdg => {
            let tilde = gate(bands.tilde.clone())?;
            let y_cfg = yu.zip_map(&tilde, |u, t| u + cfg.scale * t)?;
            let std_guided = std_per_sample(&y_cfg);
            let y = rescale_to_std_with(&y_cfg, &std_cond, cfg.alpha_rescale, cfg.rescale_recenters)?;
            (y, std_guided)
        }
    };

    let out = GuidedOutput {
        y: y.cast(),
        r_hf,
        r_hf_mean,
        mode_used: mode,
        diagnostics: StepDiagnostics {
            energy_low: energy_per_sample(&bands.low),
            energy_high: energy_per_sample(&bands.high),
            alpha_par: projection.alpha_par,
            projection_degenerate: projection.degenerate,
            std_cond,
            std_guided,
        },
    };
    Ok((out, next))
}
