//! On-disk formats shared by the CLI stages and the C ABI.
//!
//! Every CSV written here starts with a `# provenance: {...}` comment line;
//! readers skip `#` lines. JSON objects carry a `provenance` member and JSON
//! arrays / JSON-lines files get a `<file>.provenance.json` sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::events::{EventConfig, GazeShift, ShiftSet};
use crate::fitting::FitResult;
use crate::fpca::{SpectrumModel, SpectrumScore};
use crate::ingest::{write_trace_csv, RawStream};

pub const SHIFT_HEADER: [&str; 4] = ["participant_id", "trial_id", "x_deg", "y_deg"];
pub const SCORE_HEADER: [&str; 4] = ["curve_id", "pc1", "pc2", "percentile_pc1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub stage: String,
    /// SHA-256 of the compact JSON of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input file name (never an absolute path) to hex SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new<C: Serialize>(stage: &str, config: &C, seed: Option<u64>) -> Self {
        let config = serde_json::to_value(config).expect("config serializes");
        Self {
            tool: concat!("eyehead ", env!("CARGO_PKG_VERSION")).to_string(),
            stage: stage.to_string(),
            config_hash: sha256_hex(config.to_string().as_bytes()),
            config,
            seed,
            inputs: BTreeMap::new(),
        }
    }

    /// Records the digest of an input file under its file name.
    pub fn with_input(mut self, path: &Path) -> Result<Self> {
        let digest = file_digest(path)?;
        self.inputs.insert(display_name(path, None), digest);
        Ok(self)
    }

    /// Records the digests of input files under their path relative to `root`.
    pub fn with_inputs_under(mut self, root: &Path, files: &[PathBuf]) -> Result<Self> {
        for f in files {
            self.inputs.insert(display_name(f, Some(root)), file_digest(f)?);
        }
        Ok(self)
    }

    fn comment_line(&self) -> String {
        format!("# provenance: {}\n", serde_json::to_string(self).expect("provenance serializes"))
    }
}

fn display_name(path: &Path, root: Option<&Path>) -> String {
    let rel = root.and_then(|r| path.strip_prefix(r).ok());
    match rel {
        Some(r) => r.to_string_lossy().replace('\\', "/"),
        None => path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(sha256_hex(&bytes))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(BufWriter::new(f))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path.display().to_string(), e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::format(path.display().to_string(), e)
}

/// Writes a CSV file: provenance comment, header, rows.
pub fn write_csv(path: &Path, prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = prov.comment_line().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(csv_err(path))?;
        for r in rows {
            w.write_record(r).map_err(csv_err(path))?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    write_bytes(path, &buf)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    path.with_file_name(name)
}

fn write_sidecar(path: &Path, prov: &Provenance) -> Result<()> {
    let mut s = serde_json::to_string_pretty(prov).map_err(|e| Error::format("provenance", e))?;
    s.push('\n');
    write_bytes(&sidecar_path(path), s.as_bytes())
}

/// Writes a JSON array plus its provenance sidecar.
pub fn write_json_array<T: Serialize>(path: &Path, prov: &Provenance, items: &[T]) -> Result<()> {
    let mut s = serde_json::to_string_pretty(items).map_err(|e| Error::format(path.display().to_string(), e))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())?;
    write_sidecar(path, prov)
}

/// Writes one JSON object per line plus a provenance sidecar.
pub fn write_json_lines<T: Serialize>(path: &Path, prov: &Provenance, items: &[T]) -> Result<()> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).map_err(|e| Error::format(path.display().to_string(), e))?);
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())?;
    write_sidecar(path, prov)
}

/// Writes a JSON object with an added `provenance` member.
pub fn write_json_object<T: Serialize>(path: &Path, prov: &Provenance, value: &T) -> Result<()> {
    let ctx = || path.display().to_string();
    let mut v = serde_json::to_value(value).map_err(|e| Error::format(ctx(), e))?;
    let obj = v.as_object_mut().ok_or_else(|| Error::format(ctx(), "value is not a JSON object"))?;
    obj.insert("provenance".into(), serde_json::to_value(prov).map_err(|e| Error::format(ctx(), e))?);
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::format(ctx(), e))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn write_markdown(path: &Path, prov: &Provenance, body: &str) -> Result<()> {
    let header = format!("<!-- provenance: {} -->\n", serde_json::to_string(prov).expect("provenance serializes"));
    write_bytes(path, format!("{header}{body}").as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path.display().to_string(), e))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Canonical trace CSV with a provenance comment line.
pub fn write_trace_file(path: &Path, prov: &Provenance, stream: &RawStream) -> Result<()> {
    let mut buf = prov.comment_line().into_bytes();
    write_trace_csv(&mut buf, stream).map_err(csv_err(path))?;
    write_bytes(path, &buf)
}

pub fn write_shift_csv(path: &Path, prov: &Provenance, shifts: &[GazeShift]) -> Result<()> {
    let rows: Vec<Vec<String>> = shifts
        .iter()
        .map(|s| vec![s.participant_id.clone(), s.trial_id.clone(), fmt(s.x), fmt(s.y)])
        .collect();
    write_csv(path, prov, &SHIFT_HEADER, &rows)
}

#[derive(Debug, Deserialize)]
struct ShiftRow {
    participant_id: String,
    trial_id: String,
    x_deg: f64,
    y_deg: f64,
}

/// Reads a shift CSV into one [`ShiftSet`] per participant, in id order.
/// Rows are taken as already cleaned.
pub fn read_shift_csv(path: &Path) -> Result<Vec<ShiftSet>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
    let mut by_pid: BTreeMap<String, Vec<GazeShift>> = BTreeMap::new();
    for row in rdr.deserialize::<ShiftRow>() {
        let r = row.map_err(csv_err(path))?;
        if !r.x_deg.is_finite() || !r.y_deg.is_finite() {
            return Err(Error::format(path.display().to_string(), "non-finite shift amplitude"));
        }
        by_pid
            .entry(r.participant_id.clone())
            .or_default()
            .push(GazeShift::new(&r.participant_id, &r.trial_id, r.x_deg, r.y_deg));
    }
    Ok(by_pid
        .into_iter()
        .map(|(pid, shifts)| ShiftSet {
            participant_id: pid,
            shifts,
            provenance: EventConfig::default(),
            removed_large: 0,
            removed_outliers: 0,
        })
        .collect())
}

pub fn write_fits(path: &Path, prov: &Provenance, fits: &[FitResult]) -> Result<()> {
    write_json_array(path, prov, fits)
}

pub fn read_fits(path: &Path) -> Result<Vec<FitResult>> {
    read_json(path)
}

pub fn write_spectrum(path: &Path, prov: &Provenance, model: &SpectrumModel) -> Result<()> {
    write_json_object(path, prov, model)
}

pub fn read_spectrum(path: &Path) -> Result<SpectrumModel> {
    read_json(path)
}

pub fn score_rows(scores: &[SpectrumScore]) -> Vec<Vec<String>> {
    scores
        .iter()
        .map(|s| {
            let pc = |i: usize| s.pc_scores.get(i).map(|v| fmt(*v)).unwrap_or_default();
            vec![s.curve_id.clone(), pc(0), pc(1), fmt(s.percentile_pc1)]
        })
        .collect()
}

pub fn write_scores_csv(path: &Path, prov: &Provenance, scores: &[SpectrumScore]) -> Result<()> {
    write_csv(path, prov, &SCORE_HEADER, &score_rows(scores))
}

/// Two-column CSV of a sampled curve.
pub fn write_xy_csv(path: &Path, prov: &Provenance, header: [&str; 2], xs: &[f64], ys: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = xs.iter().zip(ys).map(|(x, y)| vec![fmt(*x), fmt(*y)]).collect();
    write_csv(path, prov, &header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_csv_round_trip_groups_participants() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shifts.csv");
        let prov = Provenance::new("test", &"abc", Some(1));
        let shifts = vec![
            GazeShift::new("b", "t1", 10.0, 2.5),
            GazeShift::new("a", "t1", 30.0, 12.0),
            GazeShift::new("b", "t2", 0.1, 0.0),
        ];
        write_shift_csv(&path, &prov, &shifts).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# provenance: "));
        assert!(text.lines().nth(1).unwrap() == "participant_id,trial_id,x_deg,y_deg");
        let sets = read_shift_csv(&path).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].participant_id, "a");
        assert_eq!(sets[1].xs(), vec![10.0, 0.1]);
    }

    #[test]
    fn provenance_names_are_relative() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("sub").join("x.csv");
        fs::create_dir_all(f.parent().unwrap()).unwrap();
        fs::write(&f, b"hello").unwrap();
        let p = Provenance::new("t", &(), None).with_inputs_under(dir.path(), std::slice::from_ref(&f)).unwrap();
        assert_eq!(p.inputs.keys().collect::<Vec<_>>(), vec!["sub/x.csv"]);
        let p = Provenance::new("t", &(), None).with_input(&f).unwrap();
        assert_eq!(p.inputs["x.csv"], sha256_hex(b"hello"));
    }
}
