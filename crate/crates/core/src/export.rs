//! Writing run results to a directory, and comparing two run directories.
//!
//! Every output is assembled in memory by a single collector and then
//! written together with `manifest.json`, which lists each file with its
//! SHA-256. Nothing time- or host-dependent is written, so equal scenarios
//! and seeds give byte-identical directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::write_records_csv;
use crate::error::{Error, Result};
use crate::keyproc::{penalty_report, KeyMetrics, PenaltyInput, PenaltyReport};
use crate::pipeline::{run, PairResult, RunOptions, RunResult, SyncInfo};
use crate::scenario::Scenario;

pub const METRICS_JSON: &str = "metrics.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const BASELINE_DIR: &str = "baseline";

/// Per-pair entry of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub pair: String,
    pub channel: u32,
    pub sync: Option<SyncInfo>,
    pub metrics: KeyMetrics,
    /// Measured counts per second per physical detector, by party name.
    pub detector_rates_hz: BTreeMap<String, Vec<f64>>,
    pub penalty_input: PenaltyInput,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub pairs: Vec<PairMetrics>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

/// Files of one output directory, keyed by relative path.
#[derive(Debug, Default)]
pub struct Collector {
    files: BTreeMap<String, Vec<u8>>,
}

impl Collector {
    pub fn add(&mut self, path: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(path.into(), bytes);
    }

    /// Add every file of `other` under the sub-directory `prefix`.
    pub fn nest(&mut self, prefix: &str, other: Collector) {
        for (p, b) in other.files {
            self.files.insert(format!("{prefix}/{p}"), b);
        }
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            files: self
                .files
                .iter()
                .map(|(p, b)| ManifestEntry {
                    path: p.clone(),
                    bytes: b.len() as u64,
                    sha256: hex::encode(Sha256::digest(b)),
                })
                .collect(),
        }
    }

    /// Write all files plus the manifest below `dir`.
    pub fn write(self, dir: &Path) -> Result<Manifest> {
        let manifest = self.manifest();
        for (p, b) in &self.files {
            let path = dir.join(p);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, b).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join(MANIFEST_JSON);
        fs::write(&path, to_json(&manifest)).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("value serialises to JSON");
    s.push(b'\n');
    s
}

fn csv_bytes(f: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        f(&mut w).expect("writing CSV to memory");
        w.flush().expect("flushing CSV to memory");
    }
    buf
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Replace characters that are awkward in file names.
fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn metrics_file(result: &RunResult) -> MetricsFile {
    MetricsFile {
        scenario: result.scenario.name.clone(),
        seed: result.scenario.seed,
        duration_s: result.scenario.duration_s,
        pairs: result.pairs.iter().map(pair_metrics).collect(),
    }
}

fn pair_metrics(p: &PairResult) -> PairMetrics {
    PairMetrics {
        pair: p.pair.label(),
        channel: p.channel,
        sync: p.sync.clone(),
        metrics: p.metrics,
        detector_rates_hz: p
            .parties
            .iter()
            .map(|r| (r.name.clone(), r.detector_rates_hz.clone()))
            .collect(),
        penalty_input: p.penalty.clone(),
    }
}

/// Every output file of one run.
pub fn collect_run(result: &RunResult) -> Collector {
    let mut c = Collector::default();
    c.add("scenario.toml", result.scenario.to_toml().into_bytes());
    c.add(METRICS_JSON, to_json(&metrics_file(result)));
    c.add(
        "metrics.csv",
        csv_bytes(|w| {
            w.write_record([
                "pair",
                "duration_s",
                "coincidences",
                "accidental_coincidences",
                "sifted_bits_time",
                "sifted_bits_phase",
                "errors_time",
                "errors_phase",
                "discarded",
                "qber_time",
                "qber_phase",
                "qber_combined",
                "sifted_rate",
                "secure_rate",
            ])?;
            for p in &result.pairs {
                let m = &p.metrics;
                let t = &m.tally;
                w.write_record([
                    p.pair.label(),
                    m.duration_s.to_string(),
                    t.coincidences.to_string(),
                    t.accidental_coincidences.to_string(),
                    t.sifted_bits_time.to_string(),
                    t.sifted_bits_phase.to_string(),
                    t.errors_time.to_string(),
                    t.errors_phase.to_string(),
                    t.discarded.to_string(),
                    opt(m.qber_time),
                    opt(m.qber_phase),
                    opt(m.qber_combined),
                    m.sifted_rate.to_string(),
                    m.secure_rate.to_string(),
                ])?;
            }
            Ok(())
        }),
    );
    for p in &result.pairs {
        c.add(
            format!("timeseries_{}.csv", file_stem(&p.pair.label())),
            csv_bytes(|w| {
                w.write_record(["t_s", "sifted_rate", "qber", "secure_rate"])?;
                for r in &p.timeseries {
                    w.write_record([r.t_s.to_string(), r.sifted_rate.to_string(), opt(r.qber), r.secure_rate.to_string()])?;
                }
                Ok(())
            }),
        );
        for party in &p.parties {
            let stem = file_stem(&party.name);
            let mut h = Vec::new();
            party.histogram.write_csv(&mut h).expect("writing to memory");
            c.add(format!("histogram_{stem}.csv"), h);
            c.add(
                format!("classification_{stem}.csv"),
                csv_bytes(|w| {
                    w.write_record(["bin_label", "count"])?;
                    for (label, n) in &party.classification {
                        w.write_record([label.clone(), n.to_string()])?;
                    }
                    Ok(())
                }),
            );
            if let Some(recs) = &party.records {
                let mut buf = Vec::new();
                write_records_csv(recs, &mut buf).expect("writing to memory");
                c.add(format!("records_{stem}.csv"), buf);
            }
        }
    }
    c
}

fn report_files(c: &mut Collector, report: &PenaltyReport) {
    c.add("penalty_report.json", to_json(report));
    c.add("penalty_report.txt", report.summary().into_bytes());
}

/// Resolve a comparison baseline given as preset name or path; relative
/// paths are tried against `base_dir` (the scenario file's directory).
fn load_baseline(name_or_path: &str, base_dir: Option<&Path>) -> Result<Scenario> {
    if let Some(dir) = base_dir {
        let p = dir.join(name_or_path);
        if p.is_file() {
            return Scenario::from_file(&p);
        }
    }
    Scenario::load(name_or_path)
}

/// Outcome of [`run_to_dir`].
#[derive(Debug)]
pub struct RunOutput {
    pub result: RunResult,
    pub baseline: Option<RunResult>,
    pub report: Option<PenaltyReport>,
    pub manifest: Manifest,
}

/// Run a scenario and write all outputs to `out`.
///
/// When the scenario names a comparison baseline, the baseline is run with
/// the same seed and timing, written to `out/baseline/`, and a penalty report
/// comparing the two is added.
pub fn run_to_dir(scenario: &Scenario, opts: &RunOptions, out: &Path, base_dir: Option<&Path>) -> Result<RunOutput> {
    let mut opts = opts.clone();
    if scenario.comparison.is_some() {
        opts.counterfactuals = true;
    }
    let result = run(scenario, &opts)?;
    let mut files = collect_run(&result);
    let mut baseline = None;
    let mut report = None;
    if let Some(cmp) = &scenario.comparison {
        let mut base = load_baseline(&cmp.baseline, base_dir)?;
        base.seed = result.scenario.seed;
        base.duration_s = scenario.duration_s;
        base.bootstrap_s = scenario.bootstrap_s;
        base.accumulation_interval_s = scenario.accumulation_interval_s;
        base.comparison = None;
        let opts = RunOptions { seed: None, ..opts.clone() };
        let b = run(&base, &opts)?;
        let r = penalty_report(&penalty_inputs(&b), &penalty_inputs(&result))?;
        files.nest(BASELINE_DIR, collect_run(&b));
        report_files(&mut files, &r);
        baseline = Some(b);
        report = Some(r);
    }
    let manifest = files.write(out)?;
    Ok(RunOutput {
        result,
        baseline,
        report,
        manifest,
    })
}

pub fn penalty_inputs(result: &RunResult) -> Vec<PenaltyInput> {
    result.pairs.iter().map(|p| p.penalty.clone()).collect()
}

pub fn read_metrics(dir: &Path) -> Result<MetricsFile> {
    let path = dir.join(METRICS_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))
}

/// Penalty report of run `b` relative to reference run `a`, from their
/// output directories.
pub fn compare_dirs(a: &Path, b: &Path) -> Result<PenaltyReport> {
    let inputs = |m: MetricsFile| m.pairs.into_iter().map(|p| p.penalty_input).collect::<Vec<_>>();
    penalty_report(&inputs(read_metrics(a)?), &inputs(read_metrics(b)?))
}

/// Write a comparison report (`penalty_report.json`/`.txt` plus manifest) to `out`.
pub fn write_report(report: &PenaltyReport, out: &Path) -> Result<Manifest> {
    let mut c = Collector::default();
    report_files(&mut c, report);
    c.write(out)
}

/// Human-readable one-line-per-pair summary of a run.
pub fn run_summary(result: &RunResult) -> String {
    let mut s = String::new();
    for p in &result.pairs {
        let m = &p.metrics;
        let _ = writeln!(
            s,
            "{:<16} sifted {:9.3} bit/s  QBER {:>7}  secure {:9.3} bit/s",
            p.pair.label(),
            m.sifted_rate,
            m.qber_combined.map_or("n/a".into(), |q| format!("{:.2}%", 100.0 * q)),
            m.secure_rate
        );
    }
    s
}

/// Paths of the files a directory's manifest declares.
pub fn manifest_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let path = dir.join(MANIFEST_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    Ok(m.files.into_iter().map(|f| dir.join(f.path)).collect())
}
