//! Raw gaze/head stream parsing, alignment onto the gaze clock and the
//! per-trial / per-participant sanity checks.
//!
//! Canonical stream CSV: `participant_id,trial_id,timestamp_s,yaw_deg`, one
//! stream per file. Lines starting with `#` are ignored.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACE_HEADER: [&str; 4] = ["participant_id", "trial_id", "timestamp_s", "yaw_deg"];

/// Jumps larger than this between consecutive samples are treated as a wrap.
const UNWRAP_THRESHOLD_DEG: f64 = 180.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("missing column `{column}`")]
    MissingColumn { column: String },
    #[error("line {line}: column `{column}` is not a finite number: `{value}`")]
    BadValue { line: u64, column: String, value: String },
    #[error("line {line}: timestamp {timestamp} does not increase strictly")]
    NonMonotonicTime { line: u64, timestamp: f64 },
    #[error("line {line}: `{column}` changes within one stream file")]
    InconsistentIds { line: u64, column: String },
    #[error("stream file has no samples")]
    EmptyFile,
    #[error("gaze stream ({gaze}) and head stream ({head}) describe different recordings")]
    IdMismatch { gaze: String, head: String },
    #[error("gaze and head streams share no time window")]
    NoOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Gaze,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawStream {
    pub participant_id: String,
    pub trial_id: String,
    pub kind: StreamKind,
    pub samples: Vec<Sample>,
}

impl RawStream {
    pub fn timestamps(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn yaws(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.yaw).collect()
    }

    /// Same stream with every yaw sign-flipped.
    pub fn negated(&self) -> RawStream {
        RawStream {
            samples: self.samples.iter().map(|s| Sample { t: s.t, yaw: -s.yaw }).collect(),
            ..self.clone()
        }
    }
}

/// Gaze and head yaw on the gaze clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub participant_id: String,
    pub trial_id: String,
    pub timestamps: Vec<f64>,
    pub gaze_yaw: Vec<f64>,
    pub head_yaw: Vec<f64>,
    /// Length of the shared time window of the two streams, seconds.
    pub overlap_s: f64,
    /// Largest sampling gap of either stream inside the shared window, seconds.
    pub max_gap_s: f64,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

pub fn load_trace_csv(path: &Path, kind: StreamKind) -> Result<RawStream, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_trace_csv(file, kind)
}

/// Parses one canonical stream. Rows are sorted by time; duplicated
/// timestamps are rejected with the line number of the second occurrence.
pub fn read_trace_csv<R: Read>(reader: R, kind: StreamKind) -> Result<RawStream, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let csv_err = |e: csv::Error| IngestError::Csv {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(TRACE_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn { column: name.to_string() })?;
    }

    let mut ids: Option<(String, String)> = None;
    let mut rows: Vec<(u64, Sample)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(cols[i]).unwrap_or("");
        let number = |i: usize| -> Result<f64, IngestError> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| IngestError::BadValue {
                    line,
                    column: TRACE_HEADER[i].to_string(),
                    value: field(i).to_string(),
                })
        };
        let (pid, tid) = (field(0), field(1));
        match &ids {
            None => ids = Some((pid.to_string(), tid.to_string())),
            Some((p, t)) => {
                if p != pid {
                    return Err(IngestError::InconsistentIds { line, column: "participant_id".into() });
                }
                if t != tid {
                    return Err(IngestError::InconsistentIds { line, column: "trial_id".into() });
                }
            }
        }
        rows.push((line, Sample { t: number(2)?, yaw: number(3)? }));
    }

    let (participant_id, trial_id) = ids.ok_or(IngestError::EmptyFile)?;
    rows.sort_by(|a, b| a.1.t.total_cmp(&b.1.t));
    for w in rows.windows(2) {
        if w[1].1.t <= w[0].1.t {
            let (line, s) = if w[1].0 > w[0].0 { w[1] } else { w[0] };
            return Err(IngestError::NonMonotonicTime { line, timestamp: s.t });
        }
    }
    Ok(RawStream {
        participant_id,
        trial_id,
        kind,
        samples: rows.into_iter().map(|(_, s)| s).collect(),
    })
}

pub fn write_trace_csv<W: std::io::Write>(writer: W, stream: &RawStream) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for s in &stream.samples {
        w.write_record([
            stream.participant_id.as_str(),
            stream.trial_id.as_str(),
            &s.t.to_string(),
            &s.yaw.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Removes ±360° jumps so consecutive samples never differ by more than 180°.
pub fn unwrap_degrees(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &v in values {
        if let Some(p) = prev {
            let d = v - p;
            if d > UNWRAP_THRESHOLD_DEG {
                offset -= 360.0 * ((d - UNWRAP_THRESHOLD_DEG) / 360.0).ceil();
            } else if d < -UNWRAP_THRESHOLD_DEG {
                offset += 360.0 * ((-d - UNWRAP_THRESHOLD_DEG) / 360.0).ceil();
            }
        }
        prev = Some(v);
        out.push(v + offset);
    }
    out
}

/// Linearly interpolates `values` (sampled at strictly increasing `ts`) at `t`.
/// `t` must lie in `[ts[0], ts[last]]`; sample instants are reproduced exactly.
fn interpolate_at(ts: &[f64], values: &[f64], cursor: &mut usize, t: f64) -> f64 {
    while *cursor + 1 < ts.len() && ts[*cursor + 1] <= t {
        *cursor += 1;
    }
    let i = *cursor;
    if ts[i] == t || i + 1 == ts.len() {
        return values[i];
    }
    let (t0, t1) = (ts[i], ts[i + 1]);
    values[i] + (values[i + 1] - values[i]) * (t - t0) / (t1 - t0)
}

/// Puts head yaw on the gaze timestamps inside the shared window. Head yaw is
/// unwrapped first and stays unwrapped in the output.
pub fn align_head_to_gaze(gaze: &RawStream, head: &RawStream) -> Result<Trace, IngestError> {
    if gaze.participant_id != head.participant_id || gaze.trial_id != head.trial_id {
        return Err(IngestError::IdMismatch {
            gaze: format!("{}/{}", gaze.participant_id, gaze.trial_id),
            head: format!("{}/{}", head.participant_id, head.trial_id),
        });
    }
    let (Some(g0), Some(h0)) = (gaze.samples.first(), head.samples.first()) else {
        return Err(IngestError::EmptyFile);
    };
    let lo = g0.t.max(h0.t);
    let hi = gaze.samples.last().unwrap().t.min(head.samples.last().unwrap().t);
    if hi <= lo {
        return Err(IngestError::NoOverlap);
    }

    let head_t = head.timestamps();
    let head_yaw = unwrap_degrees(&head.yaws());

    let mut cursor = 0;
    let mut timestamps = Vec::new();
    let mut gaze_yaw = Vec::new();
    let mut head_out = Vec::new();
    for s in gaze.samples.iter().filter(|s| s.t >= lo && s.t <= hi) {
        timestamps.push(s.t);
        gaze_yaw.push(s.yaw);
        head_out.push(interpolate_at(&head_t, &head_yaw, &mut cursor, s.t));
    }
    if timestamps.is_empty() {
        return Err(IngestError::NoOverlap);
    }

    let gaze_gap = max_gap(&timestamps);
    // Head samples bracketing the window count too.
    let first = head_t.partition_point(|&t| t < lo).saturating_sub(1);
    let last = (head_t.partition_point(|&t| t <= hi) + 1).min(head_t.len());
    let head_gap = max_gap(&head_t[first..last]);

    Ok(Trace {
        participant_id: gaze.participant_id.clone(),
        trial_id: gaze.trial_id.clone(),
        timestamps,
        gaze_yaw,
        head_yaw: head_out,
        overlap_s: hi - lo,
        max_gap_s: gaze_gap.max(head_gap),
    })
}

fn max_gap(ts: &[f64]) -> f64 {
    ts.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SanityConfig {
    /// A trial passes only if the streams overlap for strictly longer than this.
    pub min_overlap_s: f64,
    /// Longest tolerated sampling gap inside the overlap.
    pub max_gap_s: f64,
    pub expected_trials: usize,
}

impl Default for SanityConfig {
    fn default() -> Self {
        Self { min_overlap_s: 25.0, max_gap_s: 0.5, expected_trials: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    ShortOverlap,
    Discontinuity,
    MissingStream,
}

/// One JSON line per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub participant_id: String,
    pub trial_id: String,
    pub overlap_seconds: f64,
    pub gap_max_seconds: f64,
    pub verdict: Verdict,
    pub reason: Option<FailReason>,
}

impl SanityReport {
    pub fn missing_stream(participant_id: &str, trial_id: &str) -> Self {
        Self {
            participant_id: participant_id.to_string(),
            trial_id: trial_id.to_string(),
            overlap_seconds: 0.0,
            gap_max_seconds: 0.0,
            verdict: Verdict::Fail,
            reason: Some(FailReason::MissingStream),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

pub fn sanity_check(trace: &Trace, cfg: &SanityConfig) -> SanityReport {
    let reason = if trace.overlap_s <= cfg.min_overlap_s {
        Some(FailReason::ShortOverlap)
    } else if trace.max_gap_s > cfg.max_gap_s {
        Some(FailReason::Discontinuity)
    } else {
        None
    };
    SanityReport {
        participant_id: trace.participant_id.clone(),
        trial_id: trace.trial_id.clone(),
        overlap_seconds: trace.overlap_s,
        gap_max_seconds: trace.max_gap_s,
        verdict: if reason.is_some() { Verdict::Fail } else { Verdict::Pass },
        reason,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantVerdict {
    pub participant_id: String,
    pub passing_trials: usize,
    pub expected_trials: usize,
    pub verdict: Verdict,
}

/// A participant is kept only with at least the expected number of passing trials.
pub fn check_participant(
    participant_id: &str,
    reports: &[SanityReport],
    expected_trials: usize,
) -> ParticipantVerdict {
    let passing_trials = reports
        .iter()
        .filter(|r| r.participant_id == participant_id && r.passed())
        .count();
    ParticipantVerdict {
        participant_id: participant_id.to_string(),
        passing_trials,
        expected_trials,
        verdict: if passing_trials >= expected_trials { Verdict::Pass } else { Verdict::Fail },
    }
}
