//! Trial- and participant-level orchestration of ingest and event detection.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::Result;
use crate::events::{detect_shifts, symmetrize_and_clean, EventConfig, GazeShift, ShiftSet};
use crate::ingest::{align_head_to_gaze, RawStream, Trace};

/// Groups traces by participant, keeping trial order within each group.
pub fn group_by_participant(traces: Vec<Trace>) -> BTreeMap<String, Vec<Trace>> {
    let mut out: BTreeMap<String, Vec<Trace>> = BTreeMap::new();
    for t in traces {
        out.entry(t.participant_id.clone()).or_default().push(t);
    }
    out
}

/// Aligns a gaze/head pair and returns its signed shifts.
pub fn trial_shifts(gaze: &RawStream, head: &RawStream, cfg: &EventConfig) -> Result<Vec<GazeShift>> {
    let trace = align_head_to_gaze(gaze, head)?;
    Ok(detect_shifts(&trace, cfg)?)
}

/// Signed shifts of all traces, in trace order.
pub fn signed_shifts(traces: &[Trace], cfg: &EventConfig) -> Result<Vec<GazeShift>> {
    let per_trace: Vec<Vec<GazeShift>> = traces
        .par_iter()
        .map(|t| detect_shifts(t, cfg))
        .collect::<Result<_, _>>()?;
    Ok(per_trace.into_iter().flatten().collect())
}

/// Cleaned shift set of one participant from all of their traces.
pub fn participant_shift_set(participant_id: &str, traces: &[Trace], cfg: &EventConfig) -> Result<ShiftSet> {
    let signed = signed_shifts(traces, cfg)?;
    Ok(symmetrize_and_clean(participant_id, &signed, cfg))
}
