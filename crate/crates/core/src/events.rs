//! Gaze event segmentation: 1€ smoothing, velocity, fixation detection,
//! fixation-to-fixation shift extraction and the mirror/clean step that turns
//! signed shifts into `(eccentricity, head contribution)` pairs.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Trace;
use crate::models::ECC_MAX;

/// Slack for comparing padded interval bounds against sample times.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventError {
    #[error("timestamps must increase strictly (index {index})")]
    NonMonotonicTime { index: usize },
    #[error("series lengths differ: {timestamps} timestamps vs {values} values")]
    LengthMismatch { timestamps: usize, values: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("need at least 2 fixations to form a shift, got {0}")]
    TooFewFixations(usize),
    #[error("invalid filter configuration: {0}")]
    InvalidFilter(&'static str),
}

/// 1€ filter parameters. Cutoffs in Hz, `beta` multiplies the speed in deg/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_cutoff: f64,
    pub beta: f64,
    pub derivative_cutoff: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { min_cutoff: 1.0, beta: 0.0, derivative_cutoff: 1.0 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), EventError> {
        if !(self.min_cutoff > 0.0) {
            return Err(EventError::InvalidFilter("min_cutoff must be > 0"));
        }
        if !(self.beta >= 0.0) {
            return Err(EventError::InvalidFilter("beta must be >= 0"));
        }
        if !(self.derivative_cutoff > 0.0) {
            return Err(EventError::InvalidFilter("derivative_cutoff must be > 0"));
        }
        Ok(())
    }
}

/// Fixation detection thresholds. Durations in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub threshold_deg_s: f64,
    pub min_dur_ms: f64,
    pub pad_ms: f64,
    pub merge_gap_ms: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { threshold_deg_s: 15.0, min_dur_ms: 60.0, pad_ms: 10.0, merge_gap_ms: 20.0 }
    }
}

/// Everything that shapes a [`ShiftSet`]; recorded with it as provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventConfig {
    pub filter: FilterConfig,
    pub detection: DetectionConfig,
    pub max_ecc_deg: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            detection: DetectionConfig::default(),
            max_ecc_deg: ECC_MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixationEvent {
    pub start: f64,
    pub end: f64,
}

impl FixationEvent {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    Negative,
}

/// One fixation-to-fixation transition. `x` and `y` are signed until
/// [`symmetrize_and_clean`] runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeShift {
    pub participant_id: String,
    pub trial_id: String,
    pub x: f64,
    pub y: f64,
    pub direction: Direction,
}

impl GazeShift {
    pub fn new(participant_id: &str, trial_id: &str, x: f64, y: f64) -> Self {
        Self {
            participant_id: participant_id.to_string(),
            trial_id: trial_id.to_string(),
            x,
            y,
            direction: if x < 0.0 { Direction::Negative } else { Direction::Positive },
        }
    }
}

/// Cleaned, mirrored shifts of one participant: `0 <= y <= x <= max_ecc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSet {
    pub participant_id: String,
    pub shifts: Vec<GazeShift>,
    pub provenance: EventConfig,
    pub removed_large: usize,
    pub removed_outliers: usize,
}

impl ShiftSet {
    /// Wraps already-clean `(x, y)` pairs, e.g. synthetic data or a shift CSV.
    pub fn from_pairs(participant_id: &str, pairs: &[(f64, f64)]) -> Self {
        Self {
            participant_id: participant_id.to_string(),
            shifts: pairs.iter().map(|&(x, y)| GazeShift::new(participant_id, "", x, y)).collect(),
            provenance: EventConfig::default(),
            removed_large: 0,
            removed_outliers: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn xs(&self) -> Vec<f64> {
        self.shifts.iter().map(|s| s.x).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.shifts.iter().map(|s| s.y).collect()
    }
}

fn check_series(ts: &[f64], values: &[f64]) -> Result<(), EventError> {
    if ts.len() != values.len() {
        return Err(EventError::LengthMismatch { timestamps: ts.len(), values: values.len() });
    }
    if let Some(i) = ts.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(EventError::NonMonotonicTime { index: i + 1 });
    }
    Ok(())
}

fn smoothing_factor(dt: f64, cutoff: f64) -> f64 {
    let r = 2.0 * PI * cutoff * dt;
    r / (r + 1.0)
}

/// 1€ filter over a timestamped series; the first output equals the first input.
pub fn one_euro_filter(ts: &[f64], values: &[f64], cfg: &FilterConfig) -> Result<Vec<f64>, EventError> {
    cfg.validate()?;
    check_series(ts, values)?;
    let mut out = Vec::with_capacity(values.len());
    let Some(&first) = values.first() else {
        return Ok(out);
    };
    out.push(first);
    let (mut x_prev, mut dx_prev) = (first, 0.0);
    for i in 1..values.len() {
        let dt = ts[i] - ts[i - 1];
        let dx = (values[i] - x_prev) / dt;
        let a_d = smoothing_factor(dt, cfg.derivative_cutoff);
        let dx_hat = a_d * dx + (1.0 - a_d) * dx_prev;
        let cutoff = cfg.min_cutoff + cfg.beta * dx_hat.abs();
        let a = smoothing_factor(dt, cutoff);
        let x_hat = a * values[i] + (1.0 - a) * x_prev;
        out.push(x_hat);
        x_prev = x_hat;
        dx_prev = dx_hat;
    }
    Ok(out)
}

/// Angular velocity in deg/s: central differences inside, one-sided at the ends.
pub fn angular_velocity(ts: &[f64], yaw: &[f64]) -> Result<Vec<f64>, EventError> {
    check_series(ts, yaw)?;
    let n = ts.len();
    if n < 2 {
        return Err(EventError::TooFewSamples { needed: 2, got: n });
    }
    let mut v = Vec::with_capacity(n);
    v.push((yaw[1] - yaw[0]) / (ts[1] - ts[0]));
    for i in 1..n - 1 {
        v.push((yaw[i + 1] - yaw[i - 1]) / (ts[i + 1] - ts[i - 1]));
    }
    v.push((yaw[n - 1] - yaw[n - 2]) / (ts[n - 1] - ts[n - 2]));
    Ok(v)
}

/// Velocity-threshold fixation detection.
///
/// Runs of samples with `|v| < threshold` lasting at least `min_dur_ms` become
/// candidates; each is padded by `pad_ms` (clamped to the series bounds) and
/// candidates closer than `merge_gap_ms` are merged.
pub fn detect_fixations(ts: &[f64], velocity: &[f64], cfg: &DetectionConfig) -> Vec<FixationEvent> {
    let n = ts.len().min(velocity.len());
    if n == 0 {
        return Vec::new();
    }
    let min_dur = cfg.min_dur_ms / 1000.0;
    let pad = cfg.pad_ms / 1000.0;
    let merge_gap = cfg.merge_gap_ms / 1000.0;
    let (t_first, t_last) = (ts[0], ts[n - 1]);

    let mut candidates = Vec::new();
    let mut i = 0;
    while i < n {
        if velocity[i].abs() < cfg.threshold_deg_s {
            let mut j = i;
            while j + 1 < n && velocity[j + 1].abs() < cfg.threshold_deg_s {
                j += 1;
            }
            if ts[j] - ts[i] >= min_dur - TIME_EPS {
                candidates.push(FixationEvent {
                    start: (ts[i] - pad).max(t_first),
                    end: (ts[j] + pad).min(t_last),
                });
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    let mut merged: Vec<FixationEvent> = Vec::with_capacity(candidates.len());
    for c in candidates {
        match merged.last_mut() {
            Some(last) if c.start - last.end < merge_gap => last.end = last.end.max(c.end),
            _ => merged.push(c),
        }
    }
    merged
}

/// One shift per consecutive fixation pair, measured between the last sample
/// of the earlier fixation and the first sample of the later one.
pub fn extract_shifts(trace: &Trace, fixations: &[FixationEvent]) -> Result<Vec<GazeShift>, EventError> {
    if fixations.len() < 2 {
        return Err(EventError::TooFewFixations(fixations.len()));
    }
    let ts = &trace.timestamps;
    let mut shifts = Vec::with_capacity(fixations.len() - 1);
    for pair in fixations.windows(2) {
        let after_end = ts.partition_point(|&t| t <= pair[0].end + TIME_EPS);
        let Some(a) = after_end.checked_sub(1) else { continue };
        let b = ts.partition_point(|&t| t < pair[1].start - TIME_EPS);
        if b >= ts.len() || b <= a {
            continue;
        }
        shifts.push(GazeShift::new(
            &trace.participant_id,
            &trace.trial_id,
            trace.gaze_yaw[b] - trace.gaze_yaw[a],
            trace.head_yaw[b] - trace.head_yaw[a],
        ));
    }
    Ok(shifts)
}

/// Fixations of one trace under `cfg`.
pub fn trace_fixations(trace: &Trace, cfg: &EventConfig) -> Result<Vec<FixationEvent>, EventError> {
    let smoothed = one_euro_filter(&trace.timestamps, &trace.gaze_yaw, &cfg.filter)?;
    let velocity = angular_velocity(&trace.timestamps, &smoothed)?;
    Ok(detect_fixations(&trace.timestamps, &velocity, &cfg.detection))
}

/// Signed shifts of one trace: smoothing, velocity, fixations, extraction.
/// A trace with fewer than two fixations contributes no shifts.
pub fn detect_shifts(trace: &Trace, cfg: &EventConfig) -> Result<Vec<GazeShift>, EventError> {
    let fixations = trace_fixations(trace, cfg)?;
    match extract_shifts(trace, &fixations) {
        Err(EventError::TooFewFixations(_)) => Ok(Vec::new()),
        other => other,
    }
}

/// Mirrors negative-direction shifts onto the positive axis, zeroes head
/// movement opposing the target, then drops shifts beyond `max_ecc_deg` and
/// shifts whose head contribution exceeds the eccentricity.
pub fn symmetrize_and_clean(participant_id: &str, shifts: &[GazeShift], cfg: &EventConfig) -> ShiftSet {
    let mut out = Vec::with_capacity(shifts.len());
    let (mut removed_large, mut removed_outliers) = (0, 0);
    for s in shifts {
        let (x, mut y) = if s.x < 0.0 { (-s.x, -s.y) } else { (s.x, s.y) };
        if y <= 0.0 {
            y = 0.0;
        }
        if x > cfg.max_ecc_deg {
            removed_large += 1;
            continue;
        }
        if y > x {
            removed_outliers += 1;
            continue;
        }
        out.push(GazeShift { x, y, ..s.clone() });
    }
    ShiftSet {
        participant_id: participant_id.to_string(),
        shifts: out,
        provenance: *cfg,
        removed_large,
        removed_outliers,
    }
}
