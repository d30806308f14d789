//! `run`, `sweep` and `verify-golden`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use zeresfdg::parallel::{map_items, with_workers};
use zeresfdg::sampler::{traces_to_csv, traces_to_json};
use zeresfdg::tensor::{l2_distance, tensor_to_le_bytes, Sidecar};
use zeresfdg::{run, Mode};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_CSV: &str = "trace.csv";
pub const TRACE_JSON: &str = "trace.json";
pub const FINAL_TENSOR: &str = "final.f32";
pub const FINAL_SIDECAR: &str = "final.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    pub final_mode: Mode,
    pub mode_switches: usize,
    pub l2_to_cond: f64,
    pub l2_to_uncond: f64,
    /// Clipped elements over all elements of all steps.
    pub total_clamp_fraction: f64,
    pub final_finite: bool,
}

/// In-memory result of one run: summary plus every artifact as bytes.
pub struct Artifacts {
    pub summary: RunSummary,
    pub files: Vec<(&'static str, Vec<u8>)>,
}

impl Artifacts {
    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| *n == name).map(|(_, b)| b.as_slice())
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Runs a validated config. `base_dir` resolves `file` patterns.
pub fn execute(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Artifacts, CliError> {
    cfg.validate()?;
    let prep = cfg.prepare(base_dir)?;
    let out = run(
        &prep.model,
        &prep.schedule,
        &cfg.guidance,
        &cfg.qsilk,
        prep.mask.as_ref(),
        prep.depth.as_ref(),
    )
    .map_err(CliError::from_core)?;
    let img = &out.final_image;
    let summary = RunSummary {
        steps: out.traces.len(),
        final_mode: out.final_state.mode,
        mode_switches: out.mode_switches(),
        l2_to_cond: l2_distance(img, &prep.model.target_cond).map_err(CliError::from_core)?,
        l2_to_uncond: l2_distance(img, &prep.model.target_uncond).map_err(CliError::from_core)?,
        total_clamp_fraction: out.traces.iter().map(|t| t.clamp_fraction).sum::<f64>() / out.traces.len() as f64,
        final_finite: img.is_finite(),
    };
    let mut files = vec![(CONFIG_FILE, cfg.to_json().into_bytes())];
    if cfg.outputs.trace_csv {
        files.push((TRACE_CSV, traces_to_csv(&out.traces).into_bytes()));
    }
    if cfg.outputs.trace_json {
        let mut s = traces_to_json(&out.traces).map_err(CliError::from_core)?;
        s.push('\n');
        files.push((TRACE_JSON, s.into_bytes()));
    }
    if cfg.outputs.final_tensor {
        files.push((FINAL_TENSOR, tensor_to_le_bytes(img)));
        files.push((FINAL_SIDECAR, json_bytes(&Sidecar { shape: img.shape() })));
    }
    files.push((SUMMARY_FILE, json_bytes(&summary)));
    Ok(Artifacts { summary, files })
}

fn base_dir_of(config_path: &Path) -> PathBuf {
    config_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.outputs.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub fn cmd_run(config_path: &Path, out: Option<&Path>, workers: Option<usize>) -> Result<RunSummary, CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let dir = output_dir(&cfg, out);
    let art = with_workers(workers, || execute(&cfg, &base_dir_of(config_path)))?;
    art.write_to(&dir)?;
    Ok(art.summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub dir: String,
    #[serde(flatten)]
    pub summary: RunSummary,
}

pub const SWEEP_CSV_HEADER: &str =
    "value,dir,steps,final_mode,mode_switches,l2_to_cond,l2_to_uncond,total_clamp_fraction,final_finite";

impl SweepRow {
    fn csv_row(&self) -> String {
        let s = &self.summary;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.value,
            self.dir,
            s.steps,
            s.final_mode,
            s.mode_switches,
            s.l2_to_cond,
            s.l2_to_uncond,
            s.total_clamp_fraction,
            s.final_finite
        )
    }
}

const SECTIONS: [&str; 3] = ["guidance", "qsilk", "run"];

/// Sets a numeric knob. `axis` is a leaf name (`s`, `lambda_high`,
/// `alpha_max`) or a dotted path (`run.schedule.rho`).
pub fn set_axis(cfg: &ExperimentConfig, axis: &str, value: f64) -> Result<ExperimentConfig, CliError> {
    let mut root = serde_json::to_value(cfg).expect("config serializes");
    let slot = locate(&mut root, axis)?;
    *slot = match slot {
        Value::Number(n) if n.is_u64() || n.is_i64() => {
            if value.fract() != 0.0 || value < 0.0 {
                return Err(CliError::config(axis, format!("expects a non-negative integer, got {value}")));
            }
            Value::from(value as u64)
        }
        Value::Number(_) => serde_json::Number::from_f64(value)
            .map(Value::Number)
            .ok_or_else(|| CliError::config(axis, format!("value {value} is not finite")))?,
        _ => return Err(CliError::config(axis, "is not a numeric parameter")),
    };
    let text = serde_json::to_string(&root).expect("value serializes");
    ExperimentConfig::from_json(&text)
}

fn locate<'a>(root: &'a mut Value, axis: &str) -> Result<&'a mut Value, CliError> {
    if axis.contains('.') {
        return root
            .pointer_mut(&format!("/{}", axis.replace('.', "/")))
            .ok_or_else(|| CliError::Usage(format!("unknown sweep axis `{axis}`")));
    }
    let hits: Vec<&str> = SECTIONS
        .iter()
        .copied()
        .filter(|s| root.get(s).and_then(|v| v.get(axis)).is_some())
        .collect();
    match hits.as_slice() {
        [section] => Ok(root.get_mut(*section).and_then(|v| v.get_mut(axis)).expect("checked")),
        [] => Err(CliError::Usage(format!("unknown sweep axis `{axis}`"))),
        many => Err(CliError::Usage(format!(
            "sweep axis `{axis}` is ambiguous, use one of: {}",
            many.iter().map(|s| format!("{s}.{axis}")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

pub fn parse_values(text: &str) -> Result<Vec<f64>, CliError> {
    let values: Vec<f64> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("invalid sweep value `{s}`")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("--values needs at least one number".into()));
    }
    Ok(values)
}

/// One run per value, in parallel across values; each run lands in its own
/// subdirectory and can be checked with `verify-golden`.
pub fn cmd_sweep(
    config_path: &Path,
    axis: &str,
    values: &[f64],
    out: Option<&Path>,
    workers: Option<usize>,
) -> Result<Vec<SweepRow>, CliError> {
    let base = ExperimentConfig::load(config_path)?;
    let dir = output_dir(&base, out);
    let leaf = axis.rsplit('.').next().unwrap_or(axis);
    let jobs: Vec<(usize, f64, ExperimentConfig)> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| set_axis(&base, axis, v).map(|c| (i, v, c)))
        .collect::<Result<_, _>>()?;
    let base_dir = base_dir_of(config_path);
    let results = with_workers(workers, || {
        map_items(jobs, |(i, v, cfg)| {
            let name = format!("{i:02}_{leaf}_{v}");
            execute(&cfg, &base_dir).and_then(|art| {
                art.write_to(&dir.join(&name))?;
                Ok(SweepRow {
                    value: v,
                    dir: name,
                    summary: art.summary,
                })
            })
        })
    });
    let rows: Vec<SweepRow> = results.into_iter().collect::<Result<_, _>>()?;
    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    fs::write(dir.join("sweep_summary.csv"), csv)?;
    fs::write(dir.join("sweep_summary.json"), json_bytes(&rows))?;
    Ok(rows)
}

/// Golden cases under `dir`: the directory itself if it holds a config,
/// else every immediate subdirectory that does.
pub fn golden_cases(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if dir.join(CONFIG_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries =
        fs::read_dir(dir).map_err(|e| CliError::Usage(format!("cannot read golden dir {}: {e}", dir.display())))?;
    let mut cases: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(CONFIG_FILE).is_file())
        .collect();
    cases.sort();
    if cases.is_empty() {
        return Err(CliError::Usage(format!("no golden cases found in {}", dir.display())));
    }
    Ok(cases)
}

/// Re-runs every case and byte-compares its artifacts.
pub fn cmd_verify_golden(dir: &Path, workers: Option<usize>) -> Result<usize, CliError> {
    let cases = golden_cases(dir)?;
    let mut report = Vec::new();
    for case in &cases {
        let cfg = ExperimentConfig::load(&case.join(CONFIG_FILE))?;
        let art = with_workers(workers, || execute(&cfg, case))?;
        for (name, fresh) in &art.files {
            if *name == CONFIG_FILE {
                continue;
            }
            let path = case.join(name);
            let stored = fs::read(&path)
                .map_err(|e| CliError::Usage(format!("missing golden file {}: {e}", path.display())))?;
            if let Some(diff) = first_difference(name, &stored, fresh) {
                report.push(format!("{}: {diff}", path.display()));
            }
        }
    }
    if report.is_empty() {
        Ok(cases.len())
    } else {
        Err(CliError::Mismatch(report.join("\n")))
    }
}

/// Human-readable location of the first difference, or `None` if equal.
pub fn first_difference(name: &str, stored: &[u8], fresh: &[u8]) -> Option<String> {
    if stored == fresh {
        return None;
    }
    if name == FINAL_TENSOR {
        let n = stored.len().min(fresh.len()) / 4;
        let at = (0..n).find(|&i| stored[4 * i..4 * i + 4] != fresh[4 * i..4 * i + 4]);
        return Some(match at {
            Some(i) => {
                let val = |b: &[u8]| f32::from_le_bytes(b[4 * i..4 * i + 4].try_into().unwrap());
                format!("first differing element {i}: golden {} vs fresh {}", val(stored), val(fresh))
            }
            None => format!("length differs: golden {} bytes vs fresh {} bytes", stored.len(), fresh.len()),
        });
    }
    let (a, b) = (String::from_utf8_lossy(stored), String::from_utf8_lossy(fresh));
    let (mut la, mut lb) = (a.lines(), b.lines());
    let mut line = 1;
    loop {
        match (la.next(), lb.next()) {
            (Some(x), Some(y)) if x == y => line += 1,
            (x, y) => {
                let what = if name == TRACE_CSV && line > 1 {
                    format!("first differing step {}", line - 2)
                } else {
                    format!("first differing line {line}")
                };
                return Some(format!(
                    "{what}: golden `{}` vs fresh `{}`",
                    x.unwrap_or("<eof>"),
                    y.unwrap_or("<eof>")
                ));
            }
        }
    }
}
