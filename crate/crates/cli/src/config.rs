//! Experiment configuration: one JSON file with every knob of a run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zeresfdg::qsilk::DepthMap;
use zeresfdg::sampler::{
    seeded_normal, SigmaSchedule, ToyModel, DEFAULT_KARRAS_RHO, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN,
};
use zeresfdg::tensor::read_tensor;
use zeresfdg::{GuidanceConfig, QSilkConfig, Shape4, Tensor4};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub guidance: GuidanceConfig,
    pub qsilk: QSilkConfig,
    pub run: RunConfig,
    pub model: ModelSpec,
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub steps: usize,
    /// Seed of the initial latent.
    pub seed: u64,
    pub shape: Shape4,
    pub schedule: ScheduleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 25,
            seed: 0,
            shape: Shape4 { n: 1, c: 4, h: 64, w: 64 },
            schedule: ScheduleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
            rho: DEFAULT_KARRAS_RHO,
        }
    }
}

/// Named image generator. `file` paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case", deny_unknown_fields)]
pub enum Pattern {
    Constant { value: f32 },
    /// `+amplitude` / `-amplitude` squares of `cell` pixels.
    Checkerboard { cell: usize, amplitude: f32 },
    /// `amplitude * distance / max_distance` from the image centre, in `[0, amplitude]`.
    RadialGradient { amplitude: f32 },
    /// Standard normal noise times `amplitude`.
    SeededNoise { seed: u64, amplitude: f32 },
    /// Raw tensor with JSON sidecar.
    File { path: PathBuf },
}

impl Pattern {
    pub fn generate(&self, shape: Shape4, base_dir: &Path) -> Result<Tensor4<f32>, CliError> {
        let t = match self {
            Pattern::Constant { value } => Tensor4::full(shape, *value),
            Pattern::Checkerboard { cell, amplitude } => {
                let cell = (*cell).max(1);
                Tensor4::from_fn(shape, |_, _, y, x| {
                    if (y / cell + x / cell) % 2 == 0 {
                        *amplitude
                    } else {
                        -*amplitude
                    }
                })
            }
            Pattern::RadialGradient { amplitude } => {
                let cy = (shape.h as f64 - 1.0) / 2.0;
                let cx = (shape.w as f64 - 1.0) / 2.0;
                let max = (cy * cy + cx * cx).sqrt().max(f64::MIN_POSITIVE);
                Tensor4::from_fn(shape, |_, _, y, x| {
                    let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                    (*amplitude as f64 * d / max) as f32
                })
            }
            Pattern::SeededNoise { seed, amplitude } => seeded_normal(shape, *seed).scale(*amplitude as f64),
            Pattern::File { path } => {
                let t = read_tensor(base_dir.join(path)).map_err(|e| CliError::config(path.display().to_string(), e))?;
                if t.shape() != shape {
                    return Err(CliError::Config(format!(
                        "`{}`: tensor shape {} does not match expected {}",
                        path.display(),
                        t.shape(),
                        shape
                    )));
                }
                t
            }
        };
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub cond: Pattern,
    pub uncond: Pattern,
    /// Spatial guidance gate, one channel, values in `[0, 1]`.
    pub mask: Option<Pattern>,
    /// Depth map for the injection gate, one channel, larger = nearer.
    pub depth: Option<Pattern>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            cond: Pattern::Checkerboard { cell: 8, amplitude: 1.0 },
            uncond: Pattern::RadialGradient { amplitude: 1.0 },
            mask: None,
            depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory when `--out` is not given.
    pub dir: Option<PathBuf>,
    pub trace_csv: bool,
    pub trace_json: bool,
    pub final_tensor: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            trace_csv: true,
            trace_json: true,
            final_tensor: true,
        }
    }
}

/// Everything a run needs, materialized from a config.
pub struct Prepared {
    pub model: ToyModel,
    pub schedule: SigmaSchedule,
    pub mask: Option<Tensor4<f32>>,
    pub depth: Option<DepthMap>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.guidance.validate().map_err(CliError::from_core)?;
        self.qsilk.validate().map_err(CliError::from_core)?;
        if self.run.steps == 0 {
            return Err(CliError::config("run.steps", "must be >= 1"));
        }
        Ok(())
    }

    pub fn prepare(&self, base_dir: &Path) -> Result<Prepared, CliError> {
        let shape = self.run.shape;
        let gate_shape = shape.with_channels(1);
        let model = ToyModel::new(
            self.model.cond.generate(shape, base_dir)?,
            self.model.uncond.generate(shape, base_dir)?,
            self.run.seed,
        )
        .map_err(CliError::from_core)?;
        let s = &self.run.schedule;
        let schedule = SigmaSchedule::karras(self.run.steps, s.sigma_min, s.sigma_max, s.rho)
            .map_err(|e| CliError::config("run.schedule", e))?;
        let mask = self
            .model
            .mask
            .as_ref()
            .map(|p| p.generate(gate_shape, base_dir))
            .transpose()?;
        if let Some(m) = &mask {
            if let Some(v) = m.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(CliError::config("model.mask", format!("values must lie in [0, 1], found {v}")));
            }
        }
        let depth = self
            .model
            .depth
            .as_ref()
            .map(|p| p.generate(gate_shape, base_dir))
            .transpose()?
            .map(DepthMap::new)
            .transpose()
            .map_err(|e| CliError::config("model.depth", e))?;
        Ok(Prepared {
            model,
            schedule,
            mask,
            depth,
        })
    }
}
