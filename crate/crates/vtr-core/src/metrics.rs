//! Run metrics: raw per-frame and per-localisation rows, derived summary
//! statistics and file emission.
//!
//! Raw rows and the summary are deterministic for a seeded run and are
//! emitted with stable formatting, so repeated runs are byte-identical.
//! Stage execution times are wall-clock measurements and inherently
//! non-deterministic; they go to a separate timings file that is excluded
//! from any byte-identity expectations.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metrics i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics serialisation: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse error in {file} line {line}: {detail}")]
    Parse {
        file: String,
        line: usize,
        detail: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    JsonLines,
}

/// One visual-odometry frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub time_s: f64,
    /// "learn" or "return".
    pub phase: String,
    pub frame: u64,
    pub vo_success: bool,
    pub vo_inliers: u64,
    pub keyframe: Option<u64>,
    /// Vision-estimated distance to the reference path (return phase only).
    pub cross_track_m: Option<f64>,
    /// Ground-truth distance to the taught path (return phase only).
    pub cross_track_true_m: Option<f64>,
    pub speed_mps: f64,
}

/// One localisation attempt (per return keyframe).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRow {
    pub time_s: f64,
    pub leaf: u64,
    pub trunk: u64,
    pub success: bool,
    pub inliers: u64,
    pub matches: u64,
    /// Orientation error magnitude of the estimated vehicle-frame T_lt.
    pub rot_err_vehicle_rad: Option<f64>,
    /// Orientation error magnitude of the camera-frame error transform.
    pub rot_err_camera_rad: Option<f64>,
    /// Failure detail for failed attempts (empty when successful).
    #[serde(default)]
    pub error: String,
}

/// One control command (50 Hz, return phase).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRow {
    pub time_s: f64,
    pub z_velocity: f64,
    pub yaw_rate: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Aggregated wall-clock timing of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub count: u64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

/// Wall-clock accumulator for the pipeline stages.
#[derive(Debug, Clone, Default)]
pub struct TimingCollector {
    entries: Vec<(String, u64, f64, f64)>, // stage, count, sum_ms, max_ms
}

impl TimingCollector {
    pub fn record(&mut self, stage: &str, elapsed: Duration) {
        let ms = elapsed.as_secs_f64() * 1e3;
        if let Some(e) = self.entries.iter_mut().find(|e| e.0 == stage) {
            e.1 += 1;
            e.2 += ms;
            e.3 = e.3.max(ms);
        } else {
            self.entries.push((stage.to_string(), 1, ms, ms));
        }
    }

    pub fn merge(&mut self, other: TimingCollector) {
        for (stage, count, sum, max) in other.entries {
            if let Some(e) = self.entries.iter_mut().find(|e| e.0 == stage) {
                e.1 += count;
                e.2 += sum;
                e.3 = e.3.max(max);
            } else {
                self.entries.push((stage, count, sum, max));
            }
        }
    }

    pub fn finish(&self) -> Vec<StageTiming> {
        self.entries
            .iter()
            .map(|(stage, count, sum, max)| StageTiming {
                stage: stage.clone(),
                count: *count,
                mean_ms: if *count > 0 { sum / *count as f64 } else { 0.0 },
                max_ms: *max,
            })
            .collect()
    }
}

/// Run-level metadata carried into the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunMeta {
    pub scenario: String,
    pub exit: String,
    pub completed: bool,
    pub teach_keyframes: u64,
    pub return_keyframes: u64,
    pub localization_attempts: u64,
    pub localization_failures: u64,
    pub max_consecutive_localization_failures: u64,
    pub payload_cache_misses: u64,
    pub path_length_m: f64,
    pub return_duration_s: f64,
}

/// The full report of one scenario run.
#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub frames: Vec<FrameRow>,
    pub localizations: Vec<LocalizationRow>,
    pub commands: Vec<CommandRow>,
    pub timings: Vec<StageTiming>,
    pub meta: RunMeta,
}

/// Order statistics of one series. Median of an even-length series is the
/// mean of the two middle elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SeriesStats {
    pub count: u64,
    pub median: f64,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl SeriesStats {
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let variance = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Self {
            count: n as u64,
            median,
            mean,
            variance,
            min: sorted[0],
            max: sorted[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Summary {
    pub meta: RunMeta,
    pub localization_inliers: SeriesStats,
    pub cross_track_m: SeriesStats,
    pub cross_track_true_m: SeriesStats,
    pub rot_err_vehicle_rad: SeriesStats,
    pub rot_err_camera_rad: SeriesStats,
    pub vo_inliers: SeriesStats,
}

impl MetricsReport {
    /// Summary statistics, recomputable from the raw rows.
    pub fn summary(&self) -> Summary {
        let loc_inliers: Vec<f64> = self
            .localizations
            .iter()
            .filter(|l| l.success)
            .map(|l| l.inliers as f64)
            .collect();
        let cross: Vec<f64> = self.frames.iter().filter_map(|f| f.cross_track_m).collect();
        let cross_true: Vec<f64> = self
            .frames
            .iter()
            .filter_map(|f| f.cross_track_true_m)
            .collect();
        let rot_v: Vec<f64> = self
            .localizations
            .iter()
            .filter_map(|l| l.rot_err_vehicle_rad)
            .collect();
        let rot_c: Vec<f64> = self
            .localizations
            .iter()
            .filter_map(|l| l.rot_err_camera_rad)
            .collect();
        let vo: Vec<f64> = self
            .frames
            .iter()
            .filter(|f| f.vo_success)
            .map(|f| f.vo_inliers as f64)
            .collect();
        Summary {
            meta: self.meta.clone(),
            localization_inliers: SeriesStats::from_values(&loc_inliers),
            cross_track_m: SeriesStats::from_values(&cross),
            cross_track_true_m: SeriesStats::from_values(&cross_true),
            rot_err_vehicle_rad: SeriesStats::from_values(&rot_v),
            rot_err_camera_rad: SeriesStats::from_values(&rot_c),
            vo_inliers: SeriesStats::from_values(&vo),
        }
    }

    /// Write the raw rows, summary and timings under `dir`. Returns the
    /// paths written. Raw and summary files are deterministic; timings are
    /// not and live in their own file.
    pub fn emit(&self, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>, MetricsError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();

        match format {
            OutputFormat::Csv => {
                written.push(self.write_frames_csv(&dir.join("frames.csv"))?);
                written.push(self.write_localizations_csv(&dir.join("localization.csv"))?);
                written.push(self.write_commands_csv(&dir.join("commands.csv"))?);
            }
            OutputFormat::JsonLines => {
                written.push(write_jsonl(&dir.join("frames.jsonl"), &self.frames)?);
                written.push(write_jsonl(
                    &dir.join("localization.jsonl"),
                    &self.localizations,
                )?);
                written.push(write_jsonl(&dir.join("commands.jsonl"), &self.commands)?);
            }
        }

        let summary_path = dir.join("summary.json");
        let mut f = std::fs::File::create(&summary_path)?;
        serde_json::to_writer_pretty(&mut f, &self.summary())?;
        f.write_all(b"\n")?;
        written.push(summary_path);

        let timings_path = dir.join("timings.csv");
        let mut f = std::fs::File::create(&timings_path)?;
        writeln!(f, "stage,count,mean_ms,max_ms")?;
        for t in &self.timings {
            writeln!(f, "{},{},{},{}", t.stage, t.count, t.mean_ms, t.max_ms)?;
        }
        written.push(timings_path);

        Ok(written)
    }

    fn write_frames_csv(&self, path: &Path) -> Result<PathBuf, MetricsError> {
        let mut f = std::fs::File::create(path)?;
        writeln!(
            f,
            "time_s,phase,frame,vo_success,vo_inliers,keyframe,cross_track_m,cross_track_true_m,speed_mps"
        )?;
        for r in &self.frames {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{}",
                r.time_s,
                r.phase,
                r.frame,
                r.vo_success,
                r.vo_inliers,
                opt(r.keyframe.map(|v| v as f64)),
                opt(r.cross_track_m),
                opt(r.cross_track_true_m),
                r.speed_mps
            )?;
        }
        Ok(path.to_path_buf())
    }

    fn write_localizations_csv(&self, path: &Path) -> Result<PathBuf, MetricsError> {
        let mut f = std::fs::File::create(path)?;
        writeln!(
            f,
            "time_s,leaf,trunk,success,inliers,matches,rot_err_vehicle_rad,rot_err_camera_rad,error"
        )?;
        for r in &self.localizations {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{}",
                r.time_s,
                r.leaf,
                r.trunk,
                r.success,
                r.inliers,
                r.matches,
                opt(r.rot_err_vehicle_rad),
                opt(r.rot_err_camera_rad),
                r.error.replace(',', ";")
            )?;
        }
        Ok(path.to_path_buf())
    }

    fn write_commands_csv(&self, path: &Path) -> Result<PathBuf, MetricsError> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "time_s,z_velocity,yaw_rate,pitch,roll")?;
        for r in &self.commands {
            writeln!(
                f,
                "{},{},{},{},{}",
                r.time_s, r.z_velocity, r.yaw_rate, r.pitch, r.roll
            )?;
        }
        Ok(path.to_path_buf())
    }

    /// Parse rows back from an emitted directory (both formats). Used to
    /// check that the summary is recomputable from the raw files.
    pub fn parse_rows(dir: &Path, format: OutputFormat) -> Result<MetricsReport, MetricsError> {
        let mut report = MetricsReport::default();
        match format {
            OutputFormat::Csv => {
                report.frames = parse_frames_csv(&dir.join("frames.csv"))?;
                report.localizations = parse_localizations_csv(&dir.join("localization.csv"))?;
            }
            OutputFormat::JsonLines => {
                report.frames = read_jsonl(&dir.join("frames.jsonl"))?;
                report.localizations = read_jsonl(&dir.join("localization.jsonl"))?;
            }
        }
        Ok(report)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<PathBuf, MetricsError> {
    let mut f = std::fs::File::create(path)?;
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    Ok(path.to_path_buf())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, MetricsError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(line)?);
    }
    Ok(rows)
}

fn parse_f64_opt(s: &str) -> Option<f64> {
    if s.is_empty() {
        None
    } else {
        s.parse().ok()
    }
}

fn parse_frames_csv(path: &Path) -> Result<Vec<FrameRow>, MetricsError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(MetricsError::Parse {
                file: path.display().to_string(),
                line: i + 1,
                detail: format!("expected 9 columns, got {}", cols.len()),
            });
        }
        rows.push(FrameRow {
            time_s: cols[0].parse().unwrap_or(f64::NAN),
            phase: cols[1].to_string(),
            frame: cols[2].parse().unwrap_or(0),
            vo_success: cols[3] == "true",
            vo_inliers: cols[4].parse().unwrap_or(0),
            keyframe: parse_f64_opt(cols[5]).map(|v| v as u64),
            cross_track_m: parse_f64_opt(cols[6]),
            cross_track_true_m: parse_f64_opt(cols[7]),
            speed_mps: cols[8].parse().unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}

fn parse_localizations_csv(path: &Path) -> Result<Vec<LocalizationRow>, MetricsError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(MetricsError::Parse {
                file: path.display().to_string(),
                line: i + 1,
                detail: format!("expected 9 columns, got {}", cols.len()),
            });
        }
        rows.push(LocalizationRow {
            time_s: cols[0].parse().unwrap_or(f64::NAN),
            leaf: cols[1].parse().unwrap_or(0),
            trunk: cols[2].parse().unwrap_or(0),
            success: cols[3] == "true",
            inliers: cols[4].parse().unwrap_or(0),
            matches: cols[5].parse().unwrap_or(0),
            rot_err_vehicle_rad: parse_f64_opt(cols[6]),
            rot_err_camera_rad: parse_f64_opt(cols[7]),
            error: cols[8].to_string(),
        });
    }
    Ok(rows)
}
