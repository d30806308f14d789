//! Deterministic Euler loop over analytic noise predictors.
//!
//! The toy model predicts the exact noise residual toward a fixed target
//! image for each branch, `y = (x_t - target) / sigma`, which is enough to
//! drive the guidance step, the controller and both stabilizer stages with
//! reproducible inputs.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerState, Mode};
use crate::error::{Error, Result};
use crate::guidance::{zeresfdg_step, GuidanceConfig};
use crate::qsilk::{alpha_ramp, micro_detail_inject, quantile_clamp, DepthMap, QSilkConfig};
use crate::tensor::{ensure_same_shape, Shape4, Tensor4};

pub const DEFAULT_SIGMA_MIN: f64 = 0.03;
pub const DEFAULT_SIGMA_MAX: f64 = 14.6;
pub const DEFAULT_KARRAS_RHO: f64 = 7.0;

/// Strictly decreasing noise levels ending in 0; `steps + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSchedule {
    sigmas: Vec<f64>,
}

impl SigmaSchedule {
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(Error::Schedule("need at least one step".into()));
        }
        if *sigmas.last().unwrap() != 0.0 {
            return Err(Error::Schedule("final sigma must be 0".into()));
        }
        if sigmas.iter().any(|s| !s.is_finite()) {
            return Err(Error::Schedule("sigmas must be finite".into()));
        }
        if let Some(i) = sigmas.windows(2).position(|w| w[1] >= w[0]) {
            return Err(Error::Schedule(format!(
                "not strictly decreasing at index {}: {} -> {}",
                i,
                sigmas[i],
                sigmas[i + 1]
            )));
        }
        Ok(Self { sigmas })
    }

    /// Power interpolation between `sigma_max` and `sigma_min` in
    /// `sigma^(1/rho)` space, followed by a terminal 0.
    pub fn karras(steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("steps must be >= 1".into()));
        }
        if !(sigma_min > 0.0 && sigma_max > sigma_min && rho > 0.0) {
            return Err(Error::Schedule(format!(
                "need 0 < sigma_min < sigma_max and rho > 0, got {sigma_min}, {sigma_max}, {rho}"
            )));
        }
        let (lo, hi) = (sigma_min.powf(1.0 / rho), sigma_max.powf(1.0 / rho));
        let mut sigmas: Vec<f64> = (0..steps)
            .map(|i| match i {
                0 => sigma_max,
                i if i == steps - 1 => sigma_min,
                i => {
                    let t = i as f64 / (steps - 1) as f64;
                    (hi + t * (lo - hi)).powf(rho)
                }
            })
            .collect();
        sigmas.push(0.0);
        Self::from_sigmas(sigmas)
    }

    pub fn default_for(steps: usize) -> Result<Self> {
        Self::karras(steps, DEFAULT_SIGMA_MIN, DEFAULT_SIGMA_MAX, DEFAULT_KARRAS_RHO)
    }

    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

/// Pair of fixed targets the two branches denoise toward.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub target_cond: Tensor4<f32>,
    pub target_uncond: Tensor4<f32>,
    pub noise_seed: u64,
}

impl ToyModel {
    pub fn new(target_cond: Tensor4<f32>, target_uncond: Tensor4<f32>, noise_seed: u64) -> Result<Self> {
        ensure_same_shape(target_cond.shape(), target_uncond.shape())?;
        Ok(Self {
            target_cond,
            target_uncond,
            noise_seed,
        })
    }

    pub fn shape(&self) -> Shape4 {
        self.target_cond.shape()
    }

    /// Initial latent: ChaCha8 stream seeded with `noise_seed`, standard
    /// normal samples in storage order, scaled by `sigma`.
    pub fn initial_latent(&self, sigma: f64) -> Tensor4<f32> {
        seeded_normal(self.shape(), self.noise_seed).scale(sigma)
    }
}

/// Standard normal tensor from a ChaCha8 stream, filled in storage order.
pub fn seeded_normal(shape: Shape4, seed: u64) -> Tensor4<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(shape, |_, _, _, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v as f32
    })
}

/// `(y_c, y_u)` with `y = (x_t - target) / sigma` for each branch.
pub fn predict_pair(model: &ToyModel, x_t: &Tensor4<f32>, sigma: f64) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Sigma(sigma));
    }
    let residual = |target: &Tensor4<f32>| x_t.zip_map(target, |x, t| ((x as f64 - t as f64) / sigma) as f32);
    Ok((residual(&model.target_cond)?, residual(&model.target_uncond)?))
}

/// One row per sampler step. Batch quantities are means over samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step_index: usize,
    pub sigma: f64,
    pub r_hf: f64,
    pub rho: f64,
    pub mode: Mode,
    pub std_yc: f64,
    pub std_ycfg: f64,
    pub alpha_par_mean: f64,
    pub clamp_fraction: f64,
    pub alpha_t: f64,
}

impl StepTrace {
    pub const CSV_HEADER: &'static str =
        "step_index,sigma,r_hf,rho,mode,std_yc,std_ycfg,alpha_par_mean,clamp_fraction,alpha_t";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step_index,
            self.sigma,
            self.r_hf,
            self.rho,
            self.mode,
            self.std_yc,
            self.std_ycfg,
            self.alpha_par_mean,
            self.clamp_fraction,
            self.alpha_t
        )
    }
}

/// Fixed-column CSV with a header line; floats in shortest round-trip form.
pub fn traces_to_csv(traces: &[StepTrace]) -> String {
    let mut out = String::from(StepTrace::CSV_HEADER);
    out.push('\n');
    for t in traces {
        let _ = writeln!(out, "{}", t.csv_row());
    }
    out
}

pub fn traces_to_json(traces: &[StepTrace]) -> Result<String> {
    Ok(serde_json::to_string_pretty(traces)?)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub final_image: Tensor4<f32>,
    pub traces: Vec<StepTrace>,
    pub final_state: ControllerState,
}

impl RunOutput {
    pub fn mode_switches(&self) -> usize {
        self.traces.windows(2).filter(|w| w[0].mode != w[1].mode).count()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Full sampling loop. Per step:
///
/// 1. `(y_c, y_u)` from the toy model, guided prediction `y` from
///    [`zeresfdg_step`];
/// 2. denoised estimate `x0 = x - sigma * y`, quantile-clamped;
/// 3. on tail steps, micro-detail injection on `x0`;
/// 4. Euler update `x = x0 + sigma_next * y`.
///
/// Errors carry the failing step index.
pub fn run(
    model: &ToyModel,
    schedule: &SigmaSchedule,
    gcfg: &GuidanceConfig,
    qcfg: &QSilkConfig,
    mask: Option<&Tensor4<f32>>,
    depth: Option<&DepthMap>,
) -> Result<RunOutput> {
    gcfg.validate()?;
    qcfg.validate()?;
    let steps = schedule.steps();
    let sigmas = schedule.sigmas();
    let mut x = model.initial_latent(sigmas[0]);
    let mut state = ControllerState::new();
    let mut traces = Vec::with_capacity(steps);

    for i in 0..steps {
        let (sigma, sigma_next) = (sigmas[i], sigmas[i + 1]);
        let step = || -> Result<_> {
            let (y_c, y_u) = predict_pair(model, &x, sigma)?;
            let (out, next) = zeresfdg_step(&y_c, &y_u, gcfg, &state, mask)?;
            out.y.check_finite()?;
            let mut x0 = x.zip_map(&out.y, |xv, yv| (xv as f64 - sigma * yv as f64) as f32)?;
            let mut clamp_fraction = 0.0;
            if qcfg.clamp_enabled {
                let (clamped, stats) = quantile_clamp(&x0, qcfg)?;
                x0 = clamped;
                clamp_fraction = stats.mean_fraction();
            }
            let alpha_t = if qcfg.inject_enabled { alpha_ramp(i, steps, qcfg)? } else { 0.0 };
            if alpha_t > 0.0 {
                x0 = micro_detail_inject(&x0, depth, alpha_t, qcfg)?;
            }
            let x_next = x0.zip_map(&out.y, |a, yv| (a as f64 + sigma_next * yv as f64) as f32)?;
            x_next.check_finite()?;
            let d = &out.diagnostics;
            let trace = StepTrace {
                step_index: i,
                sigma,
                r_hf: out.r_hf_mean,
                rho: next.rho,
                mode: out.mode_used,
                std_yc: mean(&d.std_cond),
                std_ycfg: mean(&d.std_guided),
                alpha_par_mean: mean(&d.alpha_par),
                clamp_fraction,
                alpha_t,
            };
            Ok((x_next, next, trace))
        };
        let (x_next, next, trace) = step().map_err(|e| e.at_step(i))?;
        x = x_next;
        state = next;
        traces.push(trace);
    }

    Ok(RunOutput {
        final_image: x,
        traces,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> Shape4 {
        Shape4::new(1, 2, 8, 8).unwrap()
    }

    #[test]
    fn karras_schedule_shape() {
        let s = SigmaSchedule::default_for(25).unwrap();
        assert_eq!(s.steps(), 25);
        assert_eq!(s.sigmas().len(), 26);
        assert!((s.sigmas()[0] - 14.6).abs() < 1e-12);
        assert!((s.sigmas()[24] - 0.03).abs() < 1e-12);
        assert_eq!(s.sigmas()[25], 0.0);
        let one = SigmaSchedule::default_for(1).unwrap();
        assert_eq!(one.sigmas(), &[DEFAULT_SIGMA_MAX, 0.0]);
    }

    #[test]
    fn schedule_validation() {
        assert!(SigmaSchedule::from_sigmas(vec![1.0, 1.0, 0.0]).is_err());
        assert!(SigmaSchedule::from_sigmas(vec![1.0, 0.5]).is_err());
        assert!(SigmaSchedule::from_sigmas(vec![0.0]).is_err());
        assert!(SigmaSchedule::default_for(0).is_err());
    }

    #[test]
    fn predict_pair_examples() {
        let t = seeded_normal(shape(), 1);
        let u = seeded_normal(shape(), 2);
        let m = ToyModel::new(t.clone(), u, 0).unwrap();
        let (yc, _) = predict_pair(&m, &t, 3.0).unwrap();
        assert!(yc.data().iter().all(|&v| v == 0.0));

        let same = ToyModel::new(t.clone(), t.clone(), 0).unwrap();
        let x = seeded_normal(shape(), 3);
        let (a, b) = predict_pair(&same, &x, 0.7).unwrap();
        assert_eq!(a, b);

        let n = Tensor4::<f32>::from_fn(shape(), |_, c, y, x| (c + y) as f32 - x as f32 * 0.5);
        let x = t.zip_map(&n, |tv, nv| tv + 2.0 * nv).unwrap();
        let (yc, _) = predict_pair(&m, &x, 2.0).unwrap();
        for (a, b) in yc.data().iter().zip(n.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(matches!(predict_pair(&m, &x, 0.0), Err(Error::Sigma(_))));
    }

    #[test]
    fn zero_targets_denoise_to_zero() {
        let z = Tensor4::<f32>::zeros(shape());
        for seed in [0, 7] {
            let m = ToyModel::new(z.clone(), z.clone(), seed).unwrap();
            let out = run(
                &m,
                &SigmaSchedule::default_for(25).unwrap(),
                &GuidanceConfig::default(),
                &QSilkConfig::default(),
                None,
                None,
            )
            .unwrap();
            assert!(out.final_image.data().iter().all(|v| v.abs() < 1e-3));
            assert_eq!(out.traces.len(), 25);
        }
    }

    #[test]
    fn csv_layout() {
        let t = StepTrace {
            step_index: 3,
            sigma: 0.5,
            r_hf: 0.25,
            rho: 0.1,
            mode: Mode::RescaleFdg,
            std_yc: 1.0,
            std_ycfg: 2.0,
            alpha_par_mean: 0.3,
            clamp_fraction: 0.002,
            alpha_t: 0.0,
        };
        let csv = traces_to_csv(&[t]);
        assert_eq!(
            csv,
            format!("{}\n3,0.5,0.25,0.1,RescaleFDG,1,2,0.3,0.002,0\n", StepTrace::CSV_HEADER)
        );
        assert!(traces_to_json(&[]).unwrap().starts_with('['));
    }
}
