//! Inference-time stabilizer: per-sample quantile clamp of the denoised
//! estimate, and a late-schedule high-pass injection gated by edges and depth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    gaussian_blur, quantile_sorted, sobel_magnitude, ensure_same_shape, GaussianKernel, Shape4, Tensor4,
};
use crate::parallel::map_range;

/// Shape of the injection ramp over the schedule tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ramp {
    #[default]
    Smoothstep,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QSilkConfig {
    pub clamp_enabled: bool,
    /// Lower clamp quantile level.
    pub q_lo: f64,
    /// Upper clamp quantile level.
    pub q_hi: f64,
    pub inject_enabled: bool,
    /// Injection strength reached on the final step.
    pub alpha_max: f64,
    /// Fraction of steps, counted from the end, over which injection ramps in.
    pub tail_fraction: f64,
    /// Gaussian sigma of the detail high-pass.
    pub sigma_detail: f64,
    /// 1 gives the full inverse-edge gate, 0 disables it.
    pub edge_gate_strength: f64,
    pub depth_gate_enabled: bool,
    pub ramp: Ramp,
}

impl Default for QSilkConfig {
    fn default() -> Self {
        Self {
            clamp_enabled: true,
            q_lo: 0.001,
            q_hi: 0.999,
            inject_enabled: true,
            alpha_max: 0.08,
            tail_fraction: 0.2,
            sigma_detail: 1.0,
            edge_gate_strength: 1.0,
            depth_gate_enabled: true,
            ramp: Ramp::Smoothstep,
        }
    }
}

impl QSilkConfig {
    /// Both stages off.
    pub fn disabled() -> Self {
        Self {
            clamp_enabled: false,
            inject_enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.q_lo && self.q_lo < self.q_hi && self.q_hi <= 1.0) {
            return Err(Error::config(
                "q_lo, q_hi",
                format!("need 0 <= q_lo < q_hi <= 1, got q_lo = {}, q_hi = {}", self.q_lo, self.q_hi),
            ));
        }
        if !(self.alpha_max.is_finite() && self.alpha_max >= 0.0) {
            return Err(Error::config("alpha_max", format!("must be >= 0, got {}", self.alpha_max)));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(Error::config("tail_fraction", format!("must be in (0, 1], got {}", self.tail_fraction)));
        }
        if !(self.sigma_detail.is_finite() && self.sigma_detail > 0.0) {
            return Err(Error::config("sigma_detail", format!("must be > 0, got {}", self.sigma_detail)));
        }
        if !(0.0..=1.0).contains(&self.edge_gate_strength) {
            return Err(Error::config(
                "edge_gate_strength",
                format!("must be in [0, 1], got {}", self.edge_gate_strength),
            ));
        }
        Ok(())
    }

    /// Number of leading steps with no injection: `ceil((1 - tail) * steps)`,
    /// capped so the final step is always in the tail.
    pub fn tail_start(&self, total_steps: usize) -> usize {
        let start = ((1.0 - self.tail_fraction) * total_steps as f64 - 1e-9).ceil().max(0.0) as usize;
        start.min(total_steps.saturating_sub(1))
    }
}

/// Per-sample clamp bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampStats {
    /// Elements whose value changed, non-finite ones included.
    pub clipped: Vec<usize>,
    pub non_finite: Vec<usize>,
    pub fraction: Vec<f64>,
    pub bounds: Vec<(f32, f32)>,
}

impl ClampStats {
    pub fn mean_fraction(&self) -> f64 {
        self.fraction.iter().sum::<f64>() / self.fraction.len() as f64
    }

    pub fn total_clipped(&self) -> usize {
        self.clipped.iter().sum()
    }
}

/// Clips each sample into its own `[quantile(q_lo), quantile(q_hi)]`.
///
/// Quantiles are taken over the finite elements only. Bounds are rounded
/// inward to `f32`. `+inf` maps to the upper bound, `-inf` to the lower, and
/// NaN is treated as 0 before clipping. A sample with no finite element
/// becomes all zeros.
pub fn quantile_clamp(x: &Tensor4<f32>, cfg: &QSilkConfig) -> Result<(Tensor4<f32>, ClampStats)> {
    cfg.validate()?;
    let shape = x.shape();
    let len = shape.sample_len();
    let per_sample = map_range(shape.n, |s| {
        let xs = x.sample(s);
        let mut finite: Vec<f64> = xs.iter().filter(|v| v.is_finite()).map(|&v| v as f64).collect();
        finite.sort_unstable_by(f64::total_cmp);
        let (lo, hi) = if finite.is_empty() {
            (0.0, 0.0)
        } else {
            inward_bounds(quantile_sorted(&finite, cfg.q_lo), quantile_sorted(&finite, cfg.q_hi))
        };
        let mut clipped = 0usize;
        let mut non_finite = 0usize;
        let out: Vec<f32> = xs
            .iter()
            .map(|&v| {
                let c = if v.is_nan() {
                    non_finite += 1;
                    0.0f32.clamp(lo, hi)
                } else {
                    if v.is_infinite() {
                        non_finite += 1;
                    }
                    v.clamp(lo, hi)
                };
                if c.to_bits() != v.to_bits() {
                    clipped += 1;
                }
                c
            })
            .collect();
        (out, clipped, non_finite, (lo, hi))
    });

    let mut data = Vec::with_capacity(shape.len());
    let mut stats = ClampStats {
        clipped: Vec::with_capacity(shape.n),
        non_finite: Vec::with_capacity(shape.n),
        fraction: Vec::with_capacity(shape.n),
        bounds: Vec::with_capacity(shape.n),
    };
    for (out, clipped, non_finite, bounds) in per_sample {
        data.extend_from_slice(&out);
        stats.clipped.push(clipped);
        stats.non_finite.push(non_finite);
        stats.fraction.push(clipped as f64 / len as f64);
        stats.bounds.push(bounds);
    }
    Ok((Tensor4::new(shape, data)?, stats))
}

fn inward_bounds(lo: f64, hi: f64) -> (f32, f32) {
    let mut l = lo as f32;
    if (l as f64) < lo {
        l = l.next_up();
    }
    let mut h = hi as f32;
    if (h as f64) > hi {
        h = h.next_down();
    }
    if l > h {
        // both bounds fall between the same two f32 neighbours
        let m = ((lo + hi) / 2.0) as f32;
        (m, m)
    } else {
        (l, h)
    }
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// Injection strength for `step_index` of `total_steps`.
///
/// Zero before the tail. Over the tail, progress `u` runs from `1 / L` on
/// the first tail step to 1 on the final step (`L` tail steps), so the ramp
/// starts from zero just before the tail and reaches `alpha_max` at the end.
pub fn alpha_ramp(step_index: usize, total_steps: usize, cfg: &QSilkConfig) -> Result<f64> {
    if step_index >= total_steps {
        return Err(Error::StepIndex {
            index: step_index,
            total: total_steps,
        });
    }
    let start = cfg.tail_start(total_steps);
    if step_index < start {
        return Ok(0.0);
    }
    let u = (step_index + 1 - start) as f64 / (total_steps - start) as f64;
    let shaped = match cfg.ramp {
        Ramp::Smoothstep => smoothstep(u),
        Ramp::Linear => u,
    };
    Ok(cfg.alpha_max * shaped)
}

/// Single-channel depth map; larger values are nearer.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Tensor4<f32>,
}

impl DepthMap {
    pub fn new(values: Tensor4<f32>) -> Result<Self> {
        let s = values.shape();
        if s.c != 1 {
            return Err(Error::InvalidShape {
                dims: s.dims(),
                reason: "depth map must have one channel".into(),
            });
        }
        values.check_finite()?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &Tensor4<f32> {
        &self.values
    }

    /// Per-sample min-max normalization into `[0, 1]`; a constant sample
    /// maps to all ones.
    pub fn normalized(&self) -> Tensor4<f64> {
        let mut out: Tensor4<f64> = self.values.cast();
        normalize01(&mut out, 1.0);
        out
    }
}

/// Min-max normalizes each sample in place; flat samples become `flat`.
fn normalize01(t: &mut Tensor4<f64>, flat: f64) {
    let len = t.shape().sample_len();
    for sample in t.data_mut().chunks_mut(len) {
        let (lo, hi) = sample
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let range = hi - lo;
        for v in sample.iter_mut() {
            *v = if range > 0.0 { (*v - lo) / range } else { flat };
        }
    }
}

/// Inverse edge gate `1 - strength * |sobel| / max|sobel|` per sample, shape
/// `(n, 1, h, w)`. A sample without edges gets gate 1 everywhere.
pub fn edge_gate(x: &Tensor4<f32>, strength: f64) -> Result<Tensor4<f64>> {
    let mag = sobel_magnitude(&x.cast::<f64>())?;
    let len = mag.shape().sample_len();
    let mut gate = mag;
    for sample in gate.data_mut().chunks_mut(len) {
        let max = sample.iter().cloned().fold(0.0f64, f64::max);
        for v in sample.iter_mut() {
            *v = if max > 0.0 { 1.0 - strength * (*v / max) } else { 1.0 };
        }
    }
    Ok(gate)
}

/// Adds `alpha_t * g_edge * g_depth * (x - blur(x))`, gates broadcast over
/// channels.
pub fn micro_detail_inject(
    x: &Tensor4<f32>,
    depth: Option<&DepthMap>,
    alpha_t: f64,
    cfg: &QSilkConfig,
) -> Result<Tensor4<f32>> {
    cfg.validate()?;
    x.check_finite()?;
    let shape = x.shape();
    let gate_shape = shape.with_channels(1);
    if let Some(d) = depth {
        ensure_same_shape(gate_shape, d.values().shape())?;
    }
    if alpha_t == 0.0 {
        return Ok(x.clone());
    }
    let xf: Tensor4<f64> = x.cast();
    let blurred = gaussian_blur(&xf, &GaussianKernel::new(cfg.sigma_detail)?);
    let g_edge = edge_gate(x, cfg.edge_gate_strength)?;
    let g_depth = match depth {
        Some(d) if cfg.depth_gate_enabled => d.normalized(),
        _ => Tensor4::ones(gate_shape),
    };
    let data = (0..shape.len())
        .map(|i| {
            let gi = gate_index(shape, i);
            let hp = xf.data()[i] - blurred.data()[i];
            let v = xf.data()[i] + alpha_t * g_edge.data()[gi] * g_depth.data()[gi] * hp;
            v as f32
        })
        .collect();
    Tensor4::new(shape, data)
}

#[inline]
fn gate_index(shape: Shape4, i: usize) -> usize {
    let plane = shape.plane_len();
    (i / shape.sample_len()) * plane + i % plane
}
