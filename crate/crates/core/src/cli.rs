//! `eyehead` subcommands.
//!
//! Settings resolve as flags > `--config` file > built-in defaults. The
//! resolved [`PipelineConfig`] is embedded in the provenance of every output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{symmetrize_and_clean, DetectionConfig, EventConfig, FilterConfig, GazeShift};
use crate::fitting::{compare_models, fit_participant, FitConfig, FitResult};
use crate::fpca::{
    eccentricity_grid, fit_fpca, project_curve, reconstruct_mode, sample_curves, FpcaError, SpectrumModel,
    SpectrumScore, GRID_LEN,
};
use crate::ingest::{
    align_head_to_gaze, check_participant, load_trace_csv, sanity_check, IngestError, ParticipantVerdict, RawStream,
    SanityConfig, SanityReport, StreamKind, Trace,
};
use crate::io::{self, Provenance};
use crate::models::{ModelKind, SoftHingeParams};
use crate::pipeline::signed_shifts;
use crate::stats::{
    describe_distribution, kde_density, silverman_bandwidth, symmetry_check, threshold_sensitivity,
    SYMMETRY_BIN_WIDTH, SYMMETRY_MIN_COUNT,
};
use crate::synth::{synth_population, PopulationConfig, TraceOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_STAGE_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Linear,
    Hinge,
    SoftHinge,
    All,
}

impl ModelChoice {
    fn kinds(self) -> Vec<ModelKind> {
        match self {
            ModelChoice::Linear => vec![ModelKind::Linear],
            ModelChoice::Hinge => vec![ModelKind::Hinge],
            ModelChoice::SoftHinge => vec![ModelKind::SoftHinge],
            ModelChoice::All => ModelKind::ALL.to_vec(),
        }
    }
}

/// Every tunable of the pipeline, as one flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub fix_threshold: f64,
    pub min_dur_ms: f64,
    pub pad_ms: f64,
    pub merge_gap_ms: f64,
    pub max_ecc_deg: f64,
    pub min_cutoff: f64,
    pub filter_beta: f64,
    pub derivative_cutoff: f64,
    pub min_overlap_s: f64,
    pub max_gap_s: f64,
    pub expected_trials: usize,
    pub model: ModelChoice,
    pub starts: usize,
    pub max_iters: usize,
    pub components: usize,
    pub thresholds: Vec<f64>,
    pub base_threshold: f64,
    pub participants: usize,
    pub trials: usize,
    pub shifts_per_trial: usize,
    pub noise_sd: f64,
    pub gaze_noise_sd: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let ev = EventConfig::default();
        let sanity = SanityConfig::default();
        let fit = FitConfig::default();
        let pop = PopulationConfig::default();
        Self {
            seed: 0,
            fix_threshold: ev.detection.threshold_deg_s,
            min_dur_ms: ev.detection.min_dur_ms,
            pad_ms: ev.detection.pad_ms,
            merge_gap_ms: ev.detection.merge_gap_ms,
            max_ecc_deg: ev.max_ecc_deg,
            min_cutoff: ev.filter.min_cutoff,
            filter_beta: ev.filter.beta,
            derivative_cutoff: ev.filter.derivative_cutoff,
            min_overlap_s: sanity.min_overlap_s,
            max_gap_s: sanity.max_gap_s,
            expected_trials: sanity.expected_trials,
            model: ModelChoice::All,
            starts: fit.n_starts,
            max_iters: fit.max_iters,
            components: 2,
            thresholds: vec![10.0, 20.0],
            base_threshold: 15.0,
            participants: pop.n_participants,
            trials: pop.n_trials,
            shifts_per_trial: pop.shifts_per_trial,
            noise_sd: pop.noise_sd,
            gaze_noise_sd: pop.trace.gaze_noise_sd,
        }
    }
}

impl PipelineConfig {
    pub fn event_config(&self) -> EventConfig {
        EventConfig {
            filter: FilterConfig {
                min_cutoff: self.min_cutoff,
                beta: self.filter_beta,
                derivative_cutoff: self.derivative_cutoff,
            },
            detection: DetectionConfig {
                threshold_deg_s: self.fix_threshold,
                min_dur_ms: self.min_dur_ms,
                pad_ms: self.pad_ms,
                merge_gap_ms: self.merge_gap_ms,
            },
            max_ecc_deg: self.max_ecc_deg,
        }
    }

    pub fn sanity_config(&self) -> SanityConfig {
        SanityConfig {
            min_overlap_s: self.min_overlap_s,
            max_gap_s: self.max_gap_s,
            expected_trials: self.expected_trials,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig { n_starts: self.starts, seed: self.seed, max_iters: self.max_iters, ..FitConfig::default() }
    }

    pub fn population_config(&self) -> PopulationConfig {
        let d = PopulationConfig::default();
        PopulationConfig {
            n_participants: self.participants,
            n_trials: self.trials,
            shifts_per_trial: self.shifts_per_trial,
            noise_sd: self.noise_sd,
            seed: self.seed,
            trace: TraceOptions { gaze_noise_sd: self.gaze_noise_sd, ..d.trace },
            ..d
        }
    }

    /// Overlays the keys of a flat JSON object on `self`.
    pub fn merge_json(&self, overrides: serde_json::Value) -> Result<Self> {
        let serde_json::Value::Object(over) = overrides else {
            return Err(Error::format("config", "expected a JSON object"));
        };
        let mut base = serde_json::to_value(self).map_err(|e| Error::format("config", e))?;
        let obj = base.as_object_mut().expect("config is an object");
        for (k, v) in over {
            obj.insert(k, v);
        }
        serde_json::from_value(base).map_err(|e| Error::format("config", e))
    }
}

#[derive(Debug, Parser)]
#[command(name = "eyehead", version, about = "Head-contribution models and the eye-head mover spectrum")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat JSON file of config defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct EventFlags {
    /// Fixation velocity threshold, deg/s.
    #[arg(long)]
    fix_threshold: Option<f64>,
    #[arg(long)]
    min_dur_ms: Option<f64>,
    #[arg(long)]
    pad_ms: Option<f64>,
    #[arg(long)]
    merge_gap_ms: Option<f64>,
    #[arg(long)]
    max_ecc_deg: Option<f64>,
    /// 1€ filter minimum cutoff, Hz.
    #[arg(long)]
    min_cutoff: Option<f64>,
    /// 1€ filter speed coefficient.
    #[arg(long)]
    filter_beta: Option<f64>,
    #[arg(long)]
    min_overlap_s: Option<f64>,
    #[arg(long)]
    max_gap_s: Option<f64>,
    /// Passing trials a participant needs to be kept.
    #[arg(long)]
    expected_trials: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic population of gaze/head traces.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        participants: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        shifts_per_trial: Option<usize>,
        /// Head-amplitude noise, degrees.
        #[arg(long)]
        noise_sd: Option<f64>,
        #[arg(long)]
        gaze_noise_sd: Option<f64>,
    },
    /// Align, sanity-check and segment traces into a shift CSV.
    Preprocess {
        /// Directory searched recursively for `*_gaze.csv` / `*_head.csv`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-trial sanity reports, JSON lines.
        #[arg(long)]
        sanity: Option<PathBuf>,
        /// Per-participant left/right symmetry reports, JSON.
        #[arg(long)]
        symmetry: Option<PathBuf>,
        #[command(flatten)]
        events: EventFlags,
    },
    /// Fit per-participant models to a shift CSV.
    Fit {
        #[arg(long, value_enum)]
        model: Option<ModelChoice>,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the spectrum from soft-hinge fits. Several inputs are pooled.
    Fpca {
        #[arg(long = "in", required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        components: Option<usize>,
    },
    /// Score soft-hinge fits against an existing spectrum.
    Project {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write mode curves, scores, score density and model comparison tables.
    Report {
        #[arg(long)]
        fits: PathBuf,
        /// Existing spectrum; fitted from the soft-hinge fits if absent.
        #[arg(long)]
        spectrum: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        components: Option<usize>,
    },
    /// Correlate soft-hinge curves across fixation thresholds.
    Sensitivity {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        base: Option<f64>,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        events: EventFlags,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Preprocess { .. } => "preprocess",
            Command::Fit { .. } => "fit",
            Command::Fpca { .. } => "fpca",
            Command::Project { .. } => "project",
            Command::Report { .. } => "report",
            Command::Sensitivity { .. } => "sensitivity",
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_event_flags(c: &mut PipelineConfig, f: &EventFlags) {
    set(&mut c.fix_threshold, f.fix_threshold);
    set(&mut c.min_dur_ms, f.min_dur_ms);
    set(&mut c.pad_ms, f.pad_ms);
    set(&mut c.merge_gap_ms, f.merge_gap_ms);
    set(&mut c.max_ecc_deg, f.max_ecc_deg);
    set(&mut c.min_cutoff, f.min_cutoff);
    set(&mut c.filter_beta, f.filter_beta);
    set(&mut c.min_overlap_s, f.min_overlap_s);
    set(&mut c.max_gap_s, f.max_gap_s);
    set(&mut c.expected_trials, f.expected_trials);
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut c = PipelineConfig::default();
    if let Some(path) = &cli.config {
        let v: serde_json::Value = io::read_json(path)?;
        c = c.merge_json(v)?;
    }
    set(&mut c.seed, cli.seed);
    match &cli.command {
        Command::Synth { participants, trials, shifts_per_trial, noise_sd, gaze_noise_sd, .. } => {
            set(&mut c.participants, *participants);
            set(&mut c.trials, *trials);
            set(&mut c.shifts_per_trial, *shifts_per_trial);
            set(&mut c.noise_sd, *noise_sd);
            set(&mut c.gaze_noise_sd, *gaze_noise_sd);
        }
        Command::Preprocess { events, .. } => apply_event_flags(&mut c, events),
        Command::Fit { model, starts, max_iters, .. } => {
            set(&mut c.model, *model);
            set(&mut c.starts, *starts);
            set(&mut c.max_iters, *max_iters);
        }
        Command::Fpca { components, .. } | Command::Report { components, .. } => set(&mut c.components, *components),
        Command::Project { .. } => {}
        Command::Sensitivity { thresholds, base, starts, events, .. } => {
            apply_event_flags(&mut c, events);
            set(&mut c.thresholds, thresholds.clone());
            set(&mut c.base_threshold, *base);
            set(&mut c.starts, *starts);
        }
    }
    Ok(c)
}

/// Machine-readable description of a failure, printed on stderr.
pub fn error_json(err: &Error) -> serde_json::Value {
    let stage = match err {
        Error::Stage { stage, .. } => Some(*stage),
        _ => None,
    };
    serde_json::json!({ "error": err.kind(), "stage": stage, "message": err.to_string() })
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let msg = e.render().to_string();
            eprintln!("{}", serde_json::json!({ "error": "usage", "stage": null, "message": msg.trim_end() }));
            return EXIT_USAGE;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            EXIT_STAGE_ERROR
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let stage = cli.command.stage();
    let cfg = resolve_config(&cli).map_err(|e| e.in_stage("config"))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::format("threads", e))?;
    pool.install(|| run_stage(&cli.command, &cfg)).map_err(|e| match e {
        Error::Stage { .. } => e,
        e => e.in_stage(stage),
    })
}

fn run_stage(cmd: &Command, cfg: &PipelineConfig) -> Result<()> {
    match cmd {
        Command::Synth { out, .. } => synth(out, cfg),
        Command::Preprocess { input, out, sanity, symmetry, .. } => {
            preprocess(input, out, sanity.as_deref(), symmetry.as_deref(), cfg)
        }
        Command::Fit { input, out, .. } => fit(input, out, cfg),
        Command::Fpca { input, out, .. } => fpca(input, out, cfg),
        Command::Project { model, input, out } => project(model, input, out, cfg),
        Command::Report { fits, spectrum, out, .. } => report(fits, spectrum.as_deref(), out, cfg),
        Command::Sensitivity { input, out, .. } => sensitivity(input, out, cfg),
    }
}

fn synth(out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let prov = Provenance::new("synth", cfg, Some(cfg.seed));
    let population = synth_population(&cfg.population_config());
    let traces_dir = out.join("traces");
    let mut truth_shifts: Vec<GazeShift> = Vec::new();
    let mut truth = Vec::new();
    for p in &population {
        for tr in &p.trials {
            for s in [&tr.gaze, &tr.head] {
                let suffix = match s.kind {
                    StreamKind::Gaze => "gaze",
                    StreamKind::Head => "head",
                };
                let name = format!("{}_{}_{suffix}.csv", s.participant_id, s.trial_id);
                io::write_trace_file(&traces_dir.join(name), &prov, s)?;
            }
        }
        let signed: Vec<GazeShift> = p.trials.iter().flat_map(|t| t.shifts.iter().cloned()).collect();
        truth_shifts.extend(symmetrize_and_clean(&p.participant_id, &signed, &cfg.event_config()).shifts);
        truth.push(serde_json::json!({ "participant_id": p.participant_id, "params": p.truth }));
    }
    io::write_shift_csv(&out.join("truth_shifts.csv"), &prov, &truth_shifts)?;
    io::write_json_object(&out.join("ground_truth.json"), &prov, &serde_json::json!({ "participants": truth }))?;
    println!(
        "{}",
        serde_json::json!({ "participants": population.len(), "trials": population.len() * cfg.trials })
    );
    Ok(())
}

/// Sanity-checked traces of a directory.
struct LoadedTraces {
    files: Vec<PathBuf>,
    reports: Vec<SanityReport>,
    verdicts: Vec<ParticipantVerdict>,
    /// Passing trials of passing participants.
    kept: BTreeMap<String, Vec<Trace>>,
}

fn stream_kind(path: &Path) -> Option<StreamKind> {
    let stem = path.file_stem()?.to_str()?;
    if path.extension()? != "csv" {
        return None;
    }
    if stem.ends_with("_gaze") {
        Some(StreamKind::Gaze)
    } else if stem.ends_with("_head") {
        Some(StreamKind::Head)
    } else {
        None
    }
}

fn load_traces(dir: &Path, cfg: &PipelineConfig) -> Result<LoadedTraces> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::format(dir.display().to_string(), e))?;
        if entry.file_type().is_file() && stream_kind(entry.path()).is_some() {
            files.push(entry.into_path());
        }
    }
    if files.is_empty() {
        return Err(Error::MissingInput(format!("no *_gaze.csv / *_head.csv files under {}", dir.display())));
    }
    let streams: Vec<RawStream> = files
        .par_iter()
        .map(|f| {
            load_trace_csv(f, stream_kind(f).expect("filtered above"))
                .map_err(|e| Error::format(f.display().to_string(), e))
        })
        .collect::<Result<_>>()?;

    type Pair = (Option<RawStream>, Option<RawStream>);
    let mut trials: BTreeMap<(String, String), Pair> = BTreeMap::new();
    for s in streams {
        let key = (s.participant_id.clone(), s.trial_id.clone());
        let slot = trials.entry(key).or_default();
        let target = match s.kind {
            StreamKind::Gaze => &mut slot.0,
            StreamKind::Head => &mut slot.1,
        };
        if target.is_some() {
            return Err(Error::format(
                dir.display().to_string(),
                format!("duplicate {:?} stream for {}/{}", s.kind, s.participant_id, s.trial_id),
            ));
        }
        *target = Some(s);
    }

    let sanity = cfg.sanity_config();
    let checked: Vec<(SanityReport, Option<Trace>)> = trials
        .par_iter()
        .map(|((pid, tid), pair)| match pair {
            (Some(g), Some(h)) => match align_head_to_gaze(g, h) {
                Ok(trace) => Ok((sanity_check(&trace, &sanity), Some(trace))),
                Err(IngestError::NoOverlap) => {
                    let mut r = SanityReport::missing_stream(pid, tid);
                    r.reason = Some(crate::ingest::FailReason::ShortOverlap);
                    Ok((r, None))
                }
                Err(e) => Err(Error::from(e)),
            },
            _ => Ok((SanityReport::missing_stream(pid, tid), None)),
        })
        .collect::<Result<_>>()?;

    let reports: Vec<SanityReport> = checked.iter().map(|(r, _)| r.clone()).collect();
    let pids: Vec<String> = {
        let mut v: Vec<String> = trials.keys().map(|(p, _)| p.clone()).collect();
        v.dedup();
        v
    };
    let verdicts: Vec<ParticipantVerdict> =
        pids.iter().map(|p| check_participant(p, &reports, sanity.expected_trials)).collect();
    let mut kept: BTreeMap<String, Vec<Trace>> = BTreeMap::new();
    for (report, trace) in checked {
        let keep = verdicts.iter().any(|v| v.participant_id == report.participant_id && v.verdict == crate::ingest::Verdict::Pass);
        if let (true, true, Some(t)) = (keep, report.passed(), trace) {
            kept.entry(t.participant_id.clone()).or_default().push(t);
        }
    }
    Ok(LoadedTraces { files, reports, verdicts, kept })
}

fn preprocess(
    input: &Path,
    out: &Path,
    sanity_out: Option<&Path>,
    symmetry_out: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<()> {
    let ev = cfg.event_config();
    ev.filter.validate()?;
    let loaded = load_traces(input, cfg)?;
    let prov = Provenance::new("preprocess", cfg, None).with_inputs_under(input, &loaded.files)?;

    let per_participant: Vec<(String, Vec<GazeShift>)> = loaded
        .kept
        .par_iter()
        .map(|(pid, traces)| Ok((pid.clone(), signed_shifts(traces, &ev)?)))
        .collect::<Result<_>>()?;

    let mut shifts = Vec::new();
    let mut symmetry = Vec::new();
    for (pid, signed) in &per_participant {
        shifts.extend(symmetrize_and_clean(pid, signed, &ev).shifts);
        symmetry.push(match symmetry_check(signed, SYMMETRY_BIN_WIDTH, SYMMETRY_MIN_COUNT) {
            Ok(r) => serde_json::to_value(r).expect("report serializes"),
            Err(e) => serde_json::json!({ "participant_id": pid, "error": e.to_string() }),
        });
    }
    io::write_shift_csv(out, &prov, &shifts)?;
    if let Some(path) = sanity_out {
        io::write_json_lines(path, &prov, &loaded.reports)?;
    }
    if let Some(path) = symmetry_out {
        io::write_json_array(path, &prov, &symmetry)?;
    }
    let passing = loaded.verdicts.iter().filter(|v| v.verdict == crate::ingest::Verdict::Pass).count();
    println!(
        "{}",
        serde_json::json!({
            "participants": loaded.verdicts.len(),
            "kept_participants": passing,
            "trials": loaded.reports.len(),
            "passing_trials": loaded.reports.iter().filter(|r| r.passed()).count(),
            "shifts": shifts.len(),
        })
    );
    Ok(())
}

fn fit(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let sets = io::read_shift_csv(input)?;
    if sets.is_empty() {
        return Err(Error::MissingInput(format!("no shifts in {}", input.display())));
    }
    let prov = Provenance::new("fit", cfg, Some(cfg.seed)).with_input(input)?;
    let fit_cfg = cfg.fit_config();
    let kinds = cfg.model.kinds();
    let results: Vec<Vec<FitResult>> = sets
        .par_iter()
        .map(|set| {
            kinds
                .iter()
                .map(|&k| fit_participant(set, k, &fit_cfg).map_err(Error::from))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let results: Vec<FitResult> = results.into_iter().flatten().collect();
    io::write_fits(out, &prov, &results)?;
    println!("{}", serde_json::json!({ "participants": sets.len(), "fits": results.len() }));
    Ok(())
}

/// Soft-hinge parameters of each fit, by curve id.
fn soft_hinge_fits(fits: &[FitResult], prefix: Option<&str>) -> Vec<(String, SoftHingeParams)> {
    fits.iter()
        .filter_map(|f| {
            let p = f.params.as_soft_hinge()?;
            let id = match prefix {
                Some(pre) => format!("{pre}:{}", f.participant_id),
                None => f.participant_id.clone(),
            };
            Some((id, p))
        })
        .collect()
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn fpca(inputs: &[PathBuf], out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let mut prov = Provenance::new("fpca", cfg, None);
    let mut curves = Vec::new();
    for path in inputs {
        let fits = io::read_fits(path)?;
        let prefix = (inputs.len() > 1).then(|| file_stem(path));
        curves.extend(soft_hinge_fits(&fits, prefix.as_deref()));
        prov = prov.with_input(path)?;
    }
    if curves.is_empty() {
        return Err(Error::MissingInput("no soft-hinge fits in input".into()));
    }
    let model = fit_fpca(&sample_curves(&curves), cfg.components)?;
    io::write_spectrum(out, &prov, &model)?;
    println!("{}", serde_json::json!({ "curves": curves.len(), "explained_ratio": model.explained_ratio }));
    Ok(())
}

fn check_grid(model: &SpectrumModel) -> Result<()> {
    if model.grid != eccentricity_grid() {
        return Err(FpcaError::GridMismatch { expected: GRID_LEN, got: model.grid.len() }.into());
    }
    Ok(())
}

fn score_fits(model: &SpectrumModel, fits: &[FitResult]) -> Result<Vec<SpectrumScore>> {
    check_grid(model)?;
    let curves = sample_curves(&soft_hinge_fits(fits, None));
    curves
        .curve_ids
        .iter()
        .zip(&curves.values)
        .map(|(id, c)| Ok(project_curve(id, c, model)?))
        .collect()
}

fn project(model_path: &Path, input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let model = io::read_spectrum(model_path)?;
    let fits = io::read_fits(input)?;
    let prov = Provenance::new("project", cfg, None).with_input(model_path)?.with_input(input)?;
    let scores = score_fits(&model, &fits)?;
    if scores.is_empty() {
        return Err(Error::MissingInput(format!("no soft-hinge fits in {}", input.display())));
    }
    io::write_scores_csv(out, &prov, &scores)?;
    Ok(())
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { f64::NAN };
    (m, sd)
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

struct ComparisonRow {
    model: ModelKind,
    n: usize,
    r2: (f64, f64),
    rmse: (f64, f64),
    aic: (f64, f64),
    best: usize,
}

fn model_comparison(fits: &[FitResult]) -> Result<Vec<ComparisonRow>> {
    let mut by_pid: BTreeMap<&str, Vec<FitResult>> = BTreeMap::new();
    for f in fits {
        by_pid.entry(&f.participant_id).or_default().push(f.clone());
    }
    let mut best: BTreeMap<ModelKind, usize> = BTreeMap::new();
    for group in by_pid.values().filter(|g| g.len() > 1) {
        let order = compare_models(group)?;
        *best.entry(order[0]).or_default() += 1;
    }
    Ok(ModelKind::ALL
        .iter()
        .filter_map(|&k| {
            let of: Vec<&FitResult> = fits.iter().filter(|f| f.model == k).collect();
            if of.is_empty() {
                return None;
            }
            let r2: Vec<f64> = of.iter().filter_map(|f| f.r2).collect();
            let col = |g: fn(&FitResult) -> f64| mean_sd(&of.iter().map(|f| g(f)).collect::<Vec<_>>());
            Some(ComparisonRow {
                model: k,
                n: of.len(),
                r2: if r2.is_empty() { (f64::NAN, f64::NAN) } else { mean_sd(&r2) },
                rmse: col(|f| f.rmse),
                aic: col(|f| f.aic),
                best: best.get(&k).copied().unwrap_or(0),
            })
        })
        .collect())
}

const COMPARISON_HEADER: [&str; 9] =
    ["model", "n", "r2_mean", "r2_sd", "rmse_mean", "rmse_sd", "aic_mean", "aic_sd", "n_lowest_aic"];

fn report(fits_path: &Path, spectrum_path: Option<&Path>, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let fits = io::read_fits(fits_path)?;
    if fits.is_empty() {
        return Err(Error::MissingInput(format!("{} holds no fits", fits_path.display())));
    }
    let mut prov = Provenance::new("report", cfg, None).with_input(fits_path)?;
    if let Some(p) = spectrum_path {
        prov = prov.with_input(p)?;
    }

    let comparison = model_comparison(&fits)?;
    let rows: Vec<Vec<String>> = comparison
        .iter()
        .map(|r| {
            vec![
                r.model.to_string(),
                r.n.to_string(),
                num(r.r2.0),
                num(r.r2.1),
                num(r.rmse.0),
                num(r.rmse.1),
                num(r.aic.0),
                num(r.aic.1),
                r.best.to_string(),
            ]
        })
        .collect();
    io::write_csv(&out.join("model_comparison.csv"), &prov, &COMPARISON_HEADER, &rows)?;

    let mut md = String::from("# Report\n\n## Model comparison\n\n");
    md.push_str("Table: [model_comparison.csv](model_comparison.csv)\n\n");
    md.push_str("| model | n | R² mean (SD) | RMSE mean (SD) | AIC mean (SD) | lowest AIC |\n|---|---|---|---|---|---|\n");
    for r in &comparison {
        let _ = writeln!(
            md,
            "| {} | {} | {:.3} ({:.3}) | {:.3} ({:.3}) | {:.2} ({:.2}) | {} |",
            r.model, r.n, r.r2.0, r.r2.1, r.rmse.0, r.rmse.1, r.aic.0, r.aic.1, r.best
        );
    }

    let spectrum = match spectrum_path {
        Some(p) => io::read_spectrum(p).and_then(|m| check_grid(&m).map(|_| m)),
        None => {
            let curves = soft_hinge_fits(&fits, None);
            if curves.is_empty() {
                Err(Error::MissingInput("no soft-hinge fits for the spectrum".into()))
            } else {
                fit_fpca(&sample_curves(&curves), cfg.components).map_err(Error::from)
            }
        }
    };
    let model = match spectrum {
        Ok(m) => m,
        Err(e) => {
            let _ = write!(md, "\n## Spectrum\n\nNot produced: the fpca stage failed ({e}).\n");
            io::write_markdown(&out.join("summary.md"), &prov, &md)?;
            return Err(e.in_stage("fpca"));
        }
    };

    let scores = score_fits(&model, &fits)?;
    io::write_scores_csv(&out.join("scores.csv"), &prov, &scores)?;

    let mut mode_header = vec!["x_deg".to_string(), "mean".to_string()];
    let mut mode_cols = vec![model.grid.clone(), model.mean_curve.clone()];
    for k in 0..model.n_components().min(2) {
        for (label, c) in [("plus", 2.0), ("minus", -2.0)] {
            mode_header.push(format!("pc{}_{label}_2sd", k + 1));
            mode_cols.push(reconstruct_mode(&model, k, c)?);
        }
    }
    let mode_rows: Vec<Vec<String>> =
        (0..model.grid.len()).map(|i| mode_cols.iter().map(|c| num(c[i])).collect()).collect();
    let header: Vec<&str> = mode_header.iter().map(String::as_str).collect();
    io::write_csv(&out.join("modes.csv"), &prov, &header, &mode_rows)?;

    let pc1: Vec<f64> = scores.iter().filter_map(|s| s.pc_scores.first().copied()).collect();
    let summary = describe_distribution(&pc1)?;
    io::write_json_object(&out.join("pc1_summary.json"), &prov, &summary)?;
    let density_note = match silverman_bandwidth(&pc1) {
        Ok(h) => {
            let (lo, hi) = (summary.min - 3.0 * h, summary.max + 3.0 * h);
            let xs: Vec<f64> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
            let ds = kde_density(&pc1, &xs)?;
            io::write_xy_csv(&out.join("density.csv"), &prov, ["x", "density"], &xs, &ds)?;
            "Density of PC1 scores: [density.csv](density.csv)".to_string()
        }
        Err(e) => format!("Density of PC1 scores not produced ({e})."),
    };

    md.push_str("\n## Spectrum\n\n| component | eigenvalue | explained |\n|---|---|---|\n");
    for (k, (l, r)) in model.eigenvalues.iter().zip(&model.explained_ratio).enumerate() {
        let _ = writeln!(md, "| PC{} | {:.4} | {:.1}% |", k + 1, l, 100.0 * r);
    }
    let _ = write!(
        md,
        "\nMean curve and ±2 SD modes: [modes.csv](modes.csv)\n\nScores and PC1 percentiles: [scores.csv](scores.csv)\n\n{density_note}\n\nPC1 quartiles: {:.2} / {:.2} / {:.2} (median {:.2}), see [pc1_summary.json](pc1_summary.json)\n",
        summary.q1, summary.median, summary.q3, summary.median
    );
    io::write_markdown(&out.join("summary.md"), &prov, &md)?;
    Ok(())
}

fn sensitivity(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let ev = cfg.event_config();
    ev.filter.validate()?;
    let loaded = load_traces(input, cfg)?;
    if loaded.kept.is_empty() {
        return Err(Error::MissingInput("no participant passed the sanity checks".into()));
    }
    let prov = Provenance::new("sensitivity", cfg, Some(cfg.seed)).with_inputs_under(input, &loaded.files)?;
    let rows = threshold_sensitivity(&loaded.kept, &cfg.thresholds, cfg.base_threshold, &ev, &cfg.fit_config())?;
    io::write_json_array(out, &prov, &rows)?;
    let medians: Vec<f64> = (0..cfg.thresholds.len())
        .map(|k| describe_distribution(&rows.iter().map(|r| r.correlations[k]).collect::<Vec<_>>()).map(|d| d.median))
        .collect::<Result<_, _>>()?;
    println!("{}", serde_json::json!({ "thresholds": cfg.thresholds, "median_r": medians }));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_precedence() {
        let base = PipelineConfig::default();
        let c = base.merge_json(serde_json::json!({ "starts": 5, "fix_threshold": 12.5 })).unwrap();
        assert_eq!((c.starts, c.fix_threshold, c.seed), (5, 12.5, 0));
        assert!(base.merge_json(serde_json::json!({ "nope": 1 })).is_err());
        assert!(base.merge_json(serde_json::json!([1, 2])).is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(dispatch(["eyehead", "frobnicate"]), EXIT_USAGE);
        assert_eq!(dispatch(["eyehead", "fit", "--in", "x.csv", "--out", "y.json", "--bogus"]), EXIT_USAGE);
        assert_eq!(dispatch(["eyehead", "fit", "--model", "quadratic", "--in", "a", "--out", "b"]), EXIT_USAGE);
    }

    #[test]
    fn missing_input_file_is_stage_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.csv");
        let out = dir.path().join("fits.json");
        let args = ["eyehead", "fit", "--in", missing.to_str().unwrap(), "--out", out.to_str().unwrap()];
        assert_eq!(dispatch(args), EXIT_STAGE_ERROR);
        assert!(!out.exists());
    }

    #[test]
    fn stream_kind_from_name() {
        assert_eq!(stream_kind(Path::new("a/P01_T01_gaze.csv")), Some(StreamKind::Gaze));
        assert_eq!(stream_kind(Path::new("P01_T01_head.csv")), Some(StreamKind::Head));
        assert_eq!(stream_kind(Path::new("P01_T01_head.txt")), None);
        assert_eq!(stream_kind(Path::new("truth_shifts.csv")), None);
    }
}
