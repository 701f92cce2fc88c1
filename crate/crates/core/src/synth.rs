//! Ground-truth-known synthetic data: `(x, y)` shift sets drawn from a soft
//! hinge, and raw gaze/head traces made of fixation plateaus joined by
//! raised-cosine ramps.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::events::{FixationEvent, GazeShift, ShiftSet};
use crate::ingest::{RawStream, Sample, StreamKind};
use crate::models::{ModelParams, SoftHingeParams, ECC_MAX};

/// RNG stream ids so shift draws, head noise and gaze jitter never share draws.
const STREAM_SHIFTS: u64 = 1;
const STREAM_GAZE_NOISE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EccDistribution {
    Uniform,
    /// Stratified: shift `i` falls uniformly inside the `i mod 10`-th tenth of the range.
    BinBalanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    pub fixation_duration_ms: f64,
    pub shift_duration_ms: f64,
    pub sample_rate_hz: f64,
    pub head_rate_hz: f64,
    pub min_amplitude_deg: f64,
    pub max_amplitude_deg: f64,
    /// White noise added to every gaze sample, degrees.
    pub gaze_noise_sd: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            fixation_duration_ms: 1000.0,
            shift_duration_ms: 100.0,
            sample_rate_hz: 120.0,
            head_rate_hz: 90.0,
            min_amplitude_deg: 5.0,
            max_amplitude_deg: 45.0,
            gaze_noise_sd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub params: SoftHingeParams,
    pub n_shifts: usize,
    pub noise_sd: f64,
    pub ecc_distribution: EccDistribution,
    pub seed: u64,
    pub participant_id: String,
    pub trial_id: String,
    pub trace: TraceOptions,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            params: SoftHingeParams::new(0.8, 18.0, 6.0),
            n_shifts: 30,
            noise_sd: 0.0,
            ecc_distribution: EccDistribution::Uniform,
            seed: 0,
            participant_id: "S01".into(),
            trial_id: "T01".into(),
            trace: TraceOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthShifts {
    pub set: ShiftSet,
    pub truth: SoftHingeParams,
    /// Head contributions before clamping to `[0, x]`.
    pub unclamped_y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrace {
    pub gaze: RawStream,
    pub head: RawStream,
    /// True plateau intervals.
    pub fixations: Vec<FixationEvent>,
    /// True signed shifts, one per ramp.
    pub shifts: Vec<GazeShift>,
    pub truth: SoftHingeParams,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_eccentricity(dist: EccDistribution, i: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    match dist {
        EccDistribution::Uniform => rng.gen_range(lo..=hi),
        EccDistribution::BinBalanced => {
            let width = (hi - lo) / 10.0;
            let start = lo + (i % 10) as f64 * width;
            rng.gen_range(start..=start + width)
        }
    }
}

fn noise(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("noise sd must be finite and >= 0")
}

/// `y = model(x) + noise`, clamped to `[0, x]`.
pub fn synth_shifts(cfg: &SynthConfig) -> SynthShifts {
    let mut rng = rng_for(cfg.seed, STREAM_SHIFTS);
    let model = ModelParams::from(cfg.params);
    let eps = noise(cfg.noise_sd);
    let mut pairs = Vec::with_capacity(cfg.n_shifts);
    let mut unclamped_y = Vec::with_capacity(cfg.n_shifts);
    for i in 0..cfg.n_shifts {
        let x = draw_eccentricity(cfg.ecc_distribution, i, 0.0, ECC_MAX, &mut rng);
        let y = model.value(x) + eps.sample(&mut rng);
        unclamped_y.push(y);
        pairs.push((x, y.clamp(0.0, x)));
    }
    let mut set = ShiftSet::from_pairs(&cfg.participant_id, &pairs);
    for s in &mut set.shifts {
        s.trial_id = cfg.trial_id.clone();
    }
    SynthShifts { set, truth: cfg.params, unclamped_y }
}

/// Displacement fraction of a raised-cosine velocity ramp at phase `u` in [0, 1].
fn ramp_fraction(u: f64) -> f64 {
    u - (2.0 * PI * u).sin() / (2.0 * PI)
}

struct Plan {
    gaze_levels: Vec<f64>,
    head_levels: Vec<f64>,
    fix: f64,
    ramp: f64,
}

impl Plan {
    fn position(&self, levels: &[f64], t: f64) -> f64 {
        let period = self.fix + self.ramp;
        let n = levels.len() - 1;
        let k = ((t / period).floor().max(0.0) as usize).min(n);
        let local = t - k as f64 * period;
        if k == n || local <= self.fix {
            return levels[k];
        }
        let u = ((local - self.fix) / self.ramp).min(1.0);
        levels[k] + (levels[k + 1] - levels[k]) * ramp_fraction(u)
    }

    fn duration(&self) -> f64 {
        let n = self.gaze_levels.len();
        n as f64 * self.fix + (n - 1) as f64 * self.ramp
    }
}

/// Raw gaze and head streams with `n_shifts + 1` plateaus. Each ramp's gaze
/// amplitude is drawn from the eccentricity distribution over the configured
/// amplitude range; the head moves `model(x) + noise` (clamped to `[0, x]`)
/// in the same direction over the same ramp window.
pub fn synth_trace(cfg: &SynthConfig) -> SynthTrace {
    let o = &cfg.trace;
    let mut rng = rng_for(cfg.seed, STREAM_SHIFTS);
    let model = ModelParams::from(cfg.params);
    let eps = noise(cfg.noise_sd);

    let mut gaze_levels = vec![0.0];
    let mut head_levels = vec![0.0];
    let mut shifts = Vec::with_capacity(cfg.n_shifts);
    for i in 0..cfg.n_shifts {
        let amp = draw_eccentricity(cfg.ecc_distribution, i, o.min_amplitude_deg, o.max_amplitude_deg, &mut rng);
        let head_amp = (model.value(amp.min(ECC_MAX)) + eps.sample(&mut rng)).clamp(0.0, amp);
        let g = *gaze_levels.last().unwrap();
        let mut sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        // Keep gaze within a plausible field around straight ahead.
        if (g + sign * amp).abs() > 60.0 {
            sign = -sign;
        }
        gaze_levels.push(g + sign * amp);
        head_levels.push(head_levels.last().unwrap() + sign * head_amp);
        shifts.push(GazeShift::new(&cfg.participant_id, &cfg.trial_id, sign * amp, sign * head_amp));
    }

    let plan = Plan {
        gaze_levels,
        head_levels,
        fix: o.fixation_duration_ms / 1000.0,
        ramp: o.shift_duration_ms / 1000.0,
    };
    let period = plan.fix + plan.ramp;
    let fixations = (0..=cfg.n_shifts)
        .map(|k| FixationEvent { start: k as f64 * period, end: k as f64 * period + plan.fix })
        .collect();

    let total = plan.duration();
    let sample = |rate: f64| (0..).map(move |j| j as f64 / rate).take_while(move |&t| t <= total + 1e-12);
    let jitter = noise(o.gaze_noise_sd);
    let mut noise_rng = rng_for(cfg.seed, STREAM_GAZE_NOISE);
    let gaze_samples = sample(o.sample_rate_hz)
        .map(|t| Sample { t, yaw: plan.position(&plan.gaze_levels, t) + jitter.sample(&mut noise_rng) })
        .collect();
    let head_samples = sample(o.head_rate_hz)
        .map(|t| Sample { t, yaw: plan.position(&plan.head_levels, t) })
        .collect();

    let stream = |kind, samples| RawStream {
        participant_id: cfg.participant_id.clone(),
        trial_id: cfg.trial_id.clone(),
        kind,
        samples,
    };
    SynthTrace {
        gaze: stream(StreamKind::Gaze, gaze_samples),
        head: stream(StreamKind::Head, head_samples),
        fixations,
        shifts,
        truth: cfg.params,
    }
}

/// Seed for a named sub-unit (participant, trial) of a seeded run.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub n_participants: usize,
    pub n_trials: usize,
    pub shifts_per_trial: usize,
    /// Head-amplitude noise, degrees.
    pub noise_sd: f64,
    pub seed: u64,
    pub beta_range: (f64, f64),
    pub tau_range: (f64, f64),
    pub s_range: (f64, f64),
    pub trace: TraceOptions,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n_participants: 8,
            n_trials: 30,
            shifts_per_trial: 30,
            noise_sd: 1.0,
            seed: 0,
            beta_range: (0.2, 1.0),
            tau_range: (5.0, 35.0),
            s_range: (1.0, 10.0),
            trace: TraceOptions { gaze_noise_sd: 0.05, ..TraceOptions::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParticipant {
    pub participant_id: String,
    pub truth: SoftHingeParams,
    pub trials: Vec<SynthTrace>,
}

pub fn participant_id(index: usize) -> String {
    format!("P{:02}", index + 1)
}

pub fn trial_id(index: usize) -> String {
    format!("T{:02}", index + 1)
}

/// Participants with individually drawn soft-hinge parameters, each with
/// `n_trials` traces. Every participant and trial has its own derived seed,
/// so the output does not depend on thread count.
pub fn synth_population(cfg: &PopulationConfig) -> Vec<SynthParticipant> {
    (0..cfg.n_participants)
        .into_par_iter()
        .map(|i| {
            let pid = participant_id(i);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[&pid]));
            let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
            let truth = SoftHingeParams::new(draw(cfg.beta_range), draw(cfg.tau_range), draw(cfg.s_range));
            let trials = (0..cfg.n_trials)
                .map(|j| {
                    let tid = trial_id(j);
                    synth_trace(&SynthConfig {
                        params: truth,
                        n_shifts: cfg.shifts_per_trial,
                        noise_sd: cfg.noise_sd,
                        ecc_distribution: EccDistribution::Uniform,
                        seed: derive_seed(cfg.seed, &[&pid, &tid]),
                        participant_id: pid.clone(),
                        trial_id: tid,
                        trace: cfg.trace,
                    })
                })
                .collect();
            SynthParticipant { participant_id: pid, truth, trials }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{angular_velocity, DetectionConfig};

    #[test]
    fn noiseless_shifts_lie_on_curve() {
        let cfg = SynthConfig { n_shifts: 200, ..SynthConfig::default() };
        let s = synth_shifts(&cfg);
        let m = ModelParams::from(cfg.params);
        for sh in &s.set.shifts {
            assert_eq!(sh.y, m.value(sh.x).clamp(0.0, sh.x));
            assert!((0.0..=50.0).contains(&sh.x));
        }
        assert_eq!(s.set.len(), 200);
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig { n_shifts: 50, noise_sd: 2.0, seed: 9, ..SynthConfig::default() };
        assert_eq!(synth_shifts(&cfg), synth_shifts(&cfg));
        assert_eq!(synth_trace(&cfg), synth_trace(&cfg));
        let other = SynthConfig { seed: 10, ..cfg.clone() };
        assert_ne!(synth_shifts(&cfg).set, synth_shifts(&other).set);
    }

    #[test]
    fn bin_balanced_covers_every_bin() {
        let cfg = SynthConfig { n_shifts: 100, ecc_distribution: EccDistribution::BinBalanced, ..SynthConfig::default() };
        let s = synth_shifts(&cfg);
        let mut counts = [0usize; 10];
        for sh in &s.set.shifts {
            counts[((sh.x / 5.0) as usize).min(9)] += 1;
        }
        assert!(counts.iter().all(|&c| c == 10), "{counts:?}");
    }

    #[test]
    fn population_is_seeded_per_unit() {
        let cfg = PopulationConfig { n_participants: 3, n_trials: 2, shifts_per_trial: 4, ..PopulationConfig::default() };
        let a = synth_population(&cfg);
        assert_eq!(a, synth_population(&cfg));
        assert_eq!(a.len(), 3);
        assert_eq!(a[1].participant_id, "P02");
        assert_eq!(a[1].trials[1].gaze.trial_id, "T02");
        assert_ne!(a[0].truth, a[1].truth);
        let bigger = synth_population(&PopulationConfig { n_participants: 4, ..cfg });
        assert_eq!(bigger[..3], a[..]);
    }

    #[test]
    fn plateau_count_is_shift_count_plus_one() {
        let cfg = SynthConfig { n_shifts: 30, ..SynthConfig::default() };
        let tr = synth_trace(&cfg);
        assert_eq!(tr.fixations.len(), 31);
        assert_eq!(tr.shifts.len(), 30);
    }

    #[test]
    fn plateaus_still_ramps_fast() {
        let cfg = SynthConfig { n_shifts: 10, seed: 3, ..SynthConfig::default() };
        let tr = synth_trace(&cfg);
        let (ts, yaw) = (tr.gaze.timestamps(), tr.gaze.yaws());
        let v = angular_velocity(&ts, &yaw).unwrap();
        let thr = DetectionConfig::default().threshold_deg_s;
        let dt = 1.0 / cfg.trace.sample_rate_hz;
        for f in &tr.fixations {
            for (i, &t) in ts.iter().enumerate() {
                if t >= f.start + dt && t <= f.end - dt {
                    assert!(v[i].abs() < 1e-6, "v = {} at t = {t}", v[i]);
                }
            }
        }
        for w in tr.fixations.windows(2) {
            let peak = ts
                .iter()
                .zip(&v)
                .filter(|(t, _)| **t > w[0].end && **t < w[1].start)
                .map(|(_, v)| v.abs())
                .fold(0.0, f64::max);
            assert!(peak > thr, "ramp peak {peak}");
        }
    }
}
