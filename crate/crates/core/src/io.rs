//! Configuration files, trace CSVs, plot-ready figure data, reports and the
//! run manifest.
//!
//! Floating-point values are written with Rust's shortest round-trip
//! formatting, so parsing a written value yields the identical `f64`.
//! Every file is written to a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{ExperimentConfig, Histogram, Role};
use crate::sim::SimulationTrace;
use crate::stats::{
    agent_variance_series, align_traces, derivative_series, ensemble_statistics, mean,
    AlignedEnsemble,
};

pub const TRACE_HEADER: [&str; 4] = ["run_id", "t", "agent_id", "performance"];
pub const COMPLEXITY_HEADER: [&str; 3] = ["run_id", "t", "complexity"];
pub const SERIES_HEADER: [&str; 3] = ["relative_t", "series", "value"];
pub const HISTOGRAM_HEADER: [&str; 3] = ["offset", "count", "in_window"];

/// Reads a TOML experiment configuration. The literal `default` selects the
/// built-in defaults without touching the filesystem.
pub fn load_config(arg: &str) -> Result<ExperimentConfig> {
    if arg == "default" {
        return Ok(ExperimentConfig::default());
    }
    parse_config(Path::new(arg))
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: format!("cannot read: {e}"),
    })?;
    parse_config_str(&text, &path.display().to_string())
}

/// Parses and validates configuration text. Absent keys take their
/// defaults; unknown keys are rejected.
pub fn parse_config_str(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let message = match e.span() {
            Some(span) => {
                let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                format!("line {line}: {}", e.message())
            }
            None => e.message().to_string(),
        };
        Error::Config {
            path: origin.to_string(),
            message,
        }
    })?;
    config.validate().map_err(|e| Error::Config {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    Ok(config)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn csv_bytes<I, R>(metadata: &[String], header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut out = Vec::new();
    for line in metadata {
        out.extend_from_slice(format!("# {line}\n").as_bytes());
    }
    let mut writer = csv::Writer::from_writer(out);
    let to_io = |e: csv::Error| Error::validation("csv output", e.to_string());
    writer.write_record(header).map_err(to_io)?;
    for row in rows {
        writer.write_record(row).map_err(to_io)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::validation("csv output", e.to_string()))
}

/// Path of the aggregate companion file for a trace CSV:
/// `traces.csv` becomes `traces_complexity.csv`.
pub fn complexity_path_for(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or_else(|| "traces".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}_complexity.csv"))
}

/// Writes the long-format trace file at `path` and its complexity companion.
/// Returns both paths.
pub fn export_traces_csv(traces: &[SimulationTrace], path: &Path) -> Result<(PathBuf, PathBuf)> {
    let rows = traces.iter().flat_map(|trace| {
        trace
            .performances
            .iter()
            .enumerate()
            .flat_map(move |(t, row)| {
                row.iter().enumerate().map(move |(agent, p)| {
                    [
                        trace.run_id.to_string(),
                        t.to_string(),
                        agent.to_string(),
                        p.to_string(),
                    ]
                })
            })
    });
    write_atomic(path, &csv_bytes(&[], &TRACE_HEADER, rows)?)?;

    let companion = complexity_path_for(path);
    let rows = traces.iter().flat_map(|trace| {
        trace
            .complexity
            .iter()
            .enumerate()
            .map(move |(t, c)| [trace.run_id.to_string(), t.to_string(), c.to_string()])
    });
    write_atomic(&companion, &csv_bytes(&[], &COMPLEXITY_HEADER, rows)?)?;
    Ok((path.to_path_buf(), companion))
}

/// Performance matrix of one run read back from a trace CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestedRun {
    pub run_id: usize,
    /// Row `t` holds every agent's performance at time `t`.
    pub performances: Vec<Vec<f64>>,
}

impl IngestedRun {
    /// Attaches `C(t)` and the critical index under the given dynamics.
    pub fn into_trace(self, weights: &[f64], c_max: f64) -> Result<SimulationTrace> {
        SimulationTrace::from_performances(self.run_id, 0, self.performances, weights, c_max)
    }

    /// Same as [`IngestedRun::into_trace`] with uniform weights.
    pub fn into_uniform_trace(self, c_max: f64) -> Result<SimulationTrace> {
        let n = self.performances.first().map_or(0, Vec::len);
        self.into_trace(&vec![1.0; n], c_max)
    }
}

/// Reads a long-format trace CSV, one [`IngestedRun`] per `run_id` in
/// ascending order. Time steps must run contiguously from 0 and every time
/// step must list the same agents `0..n`.
pub fn ingest_trace_csv(path: &Path) -> Result<Vec<IngestedRun>> {
    let csv_err = |line: u64, message: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_err(0, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(csv_err(
            1,
            format!(
                "expected header {}, got {}",
                TRACE_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut runs: BTreeMap<usize, BTreeMap<usize, BTreeMap<usize, f64>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(csv_err(
                line,
                format!("expected 4 fields, got {}", record.len()),
            ));
        }
        let int = |k: usize| {
            record[k].trim().parse::<usize>().map_err(|_| {
                csv_err(
                    line,
                    format!(
                        "{} is not a nonnegative integer: {:?}",
                        TRACE_HEADER[k], &record[k]
                    ),
                )
            })
        };
        let (run, t, agent) = (int(0)?, int(1)?, int(2)?);
        let p: f64 = record[3].trim().parse().map_err(|_| {
            csv_err(
                line,
                format!("performance is not a number: {:?}", &record[3]),
            )
        })?;
        if !(0.0..=1.0).contains(&p) {
            return Err(csv_err(line, format!("performance {p} outside [0, 1]")));
        }
        let slot = runs.entry(run).or_default().entry(t).or_default();
        if slot.insert(agent, p).is_some() {
            return Err(csv_err(
                line,
                format!("duplicate row for run {run}, t {t}, agent {agent}"),
            ));
        }
    }

    let mut out = Vec::with_capacity(runs.len());
    for (run_id, steps) in runs {
        let shape_err = |message: String| Error::Csv {
            path: path.to_path_buf(),
            line: 0,
            message: format!("run {run_id}: {message}"),
        };
        let mut performances = Vec::with_capacity(steps.len());
        let mut n_agents = None;
        for (expected_t, (t, agents)) in steps.into_iter().enumerate() {
            if t != expected_t {
                return Err(shape_err(format!(
                    "time steps not contiguous: missing t = {expected_t}"
                )));
            }
            let n = agents.len();
            if agents.keys().copied().ne(0..n) {
                return Err(shape_err(format!("t = {t}: agent ids must be 0..{n}")));
            }
            if *n_agents.get_or_insert(n) != n {
                return Err(shape_err(format!("t = {t}: agent count changed to {n}")));
            }
            performances.push(agents.into_values().collect());
        }
        out.push(IngestedRun {
            run_id,
            performances,
        });
    }
    Ok(out)
}

/// Plot-ready data for the four figure families of one benchmark count.
#[derive(Clone, Debug, PartialEq)]
pub struct FigureSet {
    pub benchmarks: usize,
    pub c_max: f64,
    /// Training ensemble of the first repetition (figures 1 and 2).
    pub train: Option<AlignedEnsemble>,
    /// Test ensemble of the first repetition (figure 3).
    pub test: Option<AlignedEnsemble>,
    pub theta_star: f64,
    pub histogram: Histogram,
}

/// Regenerates the first repetition's ensembles for `n` and packages them
/// with that repetition's calibrated threshold and histogram.
pub fn figure_set(
    config: &ExperimentConfig,
    n: usize,
    theta_star: f64,
    histogram: Histogram,
) -> Result<FigureSet> {
    let aligned = |role| -> Result<Option<AlignedEnsemble>> {
        match align_traces(&config.ensemble(n, 0, role)?.traces) {
            Ok(a) => Ok(Some(a)),
            Err(Error::EmptyAlignment { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    Ok(FigureSet {
        benchmarks: n,
        c_max: config.dynamics.c_max,
        train: aligned(Role::Train)?,
        test: aligned(Role::Test)?,
        theta_star,
        histogram,
    })
}

type SeriesRow = [String; 3];

fn series_row(rel: i64, series: &str, value: f64) -> SeriesRow {
    [rel.to_string(), series.to_string(), value.to_string()]
}

fn figure1_rows(aligned: &AlignedEnsemble) -> Result<Vec<SeriesRow>> {
    let stats = ensemble_statistics(aligned)?;
    let mut rows = Vec::new();
    for (k, trace) in aligned.traces.iter().enumerate() {
        let name = format!("run_{}", trace.run_id);
        for rel in aligned.relative_times() {
            if let Some(c) = aligned.complexity_at(k, rel) {
                rows.push(series_row(rel, &name, c));
            }
        }
    }
    for (rel, m) in stats.relative_t.iter().zip(&stats.complexity_mean) {
        rows.push(series_row(*rel, "mean", *m));
    }
    Ok(rows)
}

fn figure2_rows(aligned: &AlignedEnsemble) -> Result<Vec<SeriesRow>> {
    let stats = ensemble_statistics(aligned)?;
    let mut rows = Vec::new();
    for trace in &aligned.traces {
        let name = format!("run_{}", trace.run_id);
        let tau = trace.critical_index.unwrap_or_default() as i64;
        let variances = agent_variance_series(trace);
        for rel in aligned.relative_times() {
            rows.push(series_row(rel, &name, variances[(tau + rel) as usize]));
        }
    }
    for (k, rel) in stats.relative_t.iter().enumerate() {
        rows.push(series_row(*rel, "mean", stats.agent_variance_mean[k]));
    }
    for (k, rel) in stats.relative_t.iter().enumerate() {
        rows.push(series_row(
            *rel,
            "complexity_variance",
            stats.complexity_variance[k],
        ));
    }
    Ok(rows)
}

fn figure3_rows(aligned: &AlignedEnsemble, config: &ExperimentConfig) -> Result<Vec<SeriesRow>> {
    let mut rows = Vec::new();
    let mut by_rel: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for trace in &aligned.traces {
        let name = format!("run_{}", trace.run_id);
        let tau = trace.critical_index.unwrap_or_default() as i64;
        let d = derivative_series(trace, config.sd_aggregation)?;
        for rel in aligned.relative_times() {
            let Ok(t) = usize::try_from(tau + rel) else {
                continue;
            };
            if let Some(v) = d.get(t) {
                rows.push(series_row(rel, &name, v));
                by_rel.entry(rel).or_default().push(v);
            }
        }
    }
    for (rel, values) in by_rel {
        rows.push(series_row(rel, "mean", mean(&values)));
    }
    Ok(rows)
}

fn histogram_rows(h: &Histogram) -> Vec<[String; 3]> {
    h.counts
        .iter()
        .enumerate()
        .map(|(k, &count)| {
            let offset = h.bin_edges[k];
            let inside = (h.window_start..=h.window_end).contains(&offset);
            [
                offset.to_string(),
                count.to_string(),
                u8::from(inside).to_string(),
            ]
        })
        .collect()
}

/// Writes the figure files of one benchmark count into `out_dir`. Figures
/// whose ensemble had no critical runs are skipped; the returned notes say
/// which.
pub fn write_figure_files(
    figures: &FigureSet,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(Vec<PathBuf>, Vec<String>)> {
    let n = figures.benchmarks;
    let mut written = Vec::new();
    let mut notes = Vec::new();
    let mut emit = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = out_dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };
    let c_max_line = format!("c_max={},critical_relative_t=0", figures.c_max);

    match &figures.train {
        Some(train) => {
            emit(
                format!("fig1_complexity_n{n}.csv"),
                csv_bytes(
                    std::slice::from_ref(&c_max_line),
                    &SERIES_HEADER,
                    figure1_rows(train)?,
                )?,
            )?;
            emit(
                format!("fig2_variance_n{n}.csv"),
                csv_bytes(&[c_max_line], &SERIES_HEADER, figure2_rows(train)?)?,
            )?;
        }
        None => notes.push(format!(
            "n={n}: figures 1-2 skipped, no training run reached criticality"
        )),
    }
    match &figures.test {
        Some(test) => {
            let meta = format!("theta_star={},critical_relative_t=0", figures.theta_star);
            emit(
                format!("fig3_derivative_n{n}.csv"),
                csv_bytes(&[meta], &SERIES_HEADER, figure3_rows(test, config)?)?,
            )?;
            let h = &figures.histogram;
            let meta = format!(
                "window_start={},window_end={}",
                h.window_start, h.window_end
            );
            emit(
                format!("fig4_detections_n{n}.csv"),
                csv_bytes(&[meta], &HISTOGRAM_HEADER, histogram_rows(h))?,
            )?;
        }
        None => notes.push(format!(
            "n={n}: figures 3-4 skipped, no test run reached criticality"
        )),
    }
    Ok((written, notes))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Reproducibility record of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command_line: Vec<String>,
    pub master_seed: u64,
    pub created_unix_seconds: u64,
    pub config: ExperimentConfig,
    pub files: Vec<ManifestEntry>,
    pub notes: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn new(config: &ExperimentConfig, command_line: Vec<String>) -> Self {
        let created_unix_seconds = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command_line,
            master_seed: config.master_seed,
            created_unix_seconds,
            config: config.clone(),
            files: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Records a written file, digesting its current contents.
    pub fn record(&mut self, out_dir: &Path, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let relative = path.strip_prefix(out_dir).unwrap_or(path);
        self.files.push(ManifestEntry {
            path: relative.to_string_lossy().replace('\\', "/"),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(MANIFEST_FILE);
        write_json(self, &path)?;
        Ok(path)
    }

    /// Files whose size or digest no longer match.
    pub fn verify(&self, out_dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|entry| match fs::read(out_dir.join(&entry.path)) {
                Ok(bytes) => {
                    bytes.len() as u64 != entry.bytes || sha256_hex(&bytes) != entry.sha256
                }
                Err(_) => true,
            })
            .map(|entry| entry.path.clone())
            .collect()
    }
}

pub const SCHEMA_FILE: &str = "schema.json";

/// Column and key documentation written next to every output set.
pub fn schema() -> serde_json::Value {
    serde_json::json!({
        "number_format": "shortest decimal representation that parses back to the identical IEEE-754 double",
        "metadata_lines": "lines starting with '# ' precede the header and carry key=value pairs",
        "files": {
            "traces.csv": {
                "columns": TRACE_HEADER,
                "description": "long format, one row per (run, time step, agent); t starts at 0 and is contiguous"
            },
            "traces_complexity.csv": {
                "columns": COMPLEXITY_HEADER,
                "description": "aggregate complexity C(t) per run and time step"
            },
            "fig1_complexity_n{n}.csv": {
                "metadata": ["c_max", "critical_relative_t"],
                "columns": SERIES_HEADER,
                "series": "run_<id> for each aligned training run, mean for the cross-run mean of C(t)"
            },
            "fig2_variance_n{n}.csv": {
                "metadata": ["c_max", "critical_relative_t"],
                "columns": SERIES_HEADER,
                "series": "run_<id>: cross-agent variance of P_i(t); mean: its mean over runs; complexity_variance: cross-run variance of C(t)"
            },
            "fig3_derivative_n{n}.csv": {
                "metadata": ["theta_star", "critical_relative_t"],
                "columns": SERIES_HEADER,
                "series": "run_<id>: S'(t) of each aligned test run; mean: mean S'(t) over runs defined at that time"
            },
            "fig4_detections_n{n}.csv": {
                "metadata": ["window_start", "window_end"],
                "columns": HISTOGRAM_HEADER,
                "description": "unit-width bins of detected minus actual critical index; in_window is 1 inside [window_start, window_end]"
            },
            "report.json": {
                "keys": ["tool_version", "config", "protocol", "results"],
                "results[]": ["benchmarks", "train_accuracy", "test_accuracy", "theta_star", "repetitions", "failures"],
                "accuracy": ["mean", "sd"],
                "repetitions[]": [
                    "repetition", "train_seed", "test_seed", "theta_star", "train_accuracy", "test_accuracy",
                    "optimizer_iterations", "optimizer_converged", "train_excluded", "test_excluded",
                    "test_scored", "detection_offsets", "test_undetected", "histogram"
                ],
                "histogram": ["bin_edges", "counts", "window_start", "window_end", "in_window", "total"]
            },
            "optimizer.json": {
                "keys": ["benchmarks", "train_seed", "train_scored", "train_excluded", "result"],
                "result": ["theta_star", "initial_theta", "iterations", "converged", "final_accuracy", "trajectory"]
            },
            "detections.json": {
                "keys": ["theta", "burn_in", "runs"],
                "runs[]": ["run_id", "detected_t"]
            },
            "manifest.json": {
                "keys": ["tool_version", "command_line", "master_seed", "created_unix_seconds", "config", "files", "notes"],
                "files[]": ["path", "bytes", "sha256"]
            }
        }
    })
}

pub fn write_schema(out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join(SCHEMA_FILE);
    write_json(&schema(), &path)?;
    Ok(path)
}
