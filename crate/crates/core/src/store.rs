//! Line-delimited JSON sample stores, plus CSV import and export.
//!
//! A store is one file holding one `Sample` object per line. Writers take an
//! exclusive lock file next to the store (`<path>.lock`) so two campaigns
//! cannot interleave appends.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::study::{Sample, SampleSource, State, StudyError, StudySpec};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("store {0} is locked by another writer (remove the .lock file if stale)")]
    Locked(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Read every sample from a JSONL file; blank lines are skipped.
pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>, StoreError> {
    read_lines(path, None)
}

/// Read a JSONL file and check every sample against the study.
pub fn read_validated(path: &Path, spec: &StudySpec) -> Result<Vec<Sample>, StoreError> {
    read_lines(path, Some(spec))
}

fn read_lines(path: &Path, spec: Option<&StudySpec>) -> Result<Vec<Sample>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |message: String| StoreError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let sample: Sample = serde_json::from_str(&line).map_err(|e| record_err(e.to_string()))?;
        if let Some(spec) = spec {
            spec.validate_sample(&sample)
                .map_err(|e| record_err(e.to_string()))?;
        }
        out.push(sample);
    }
    Ok(out)
}

/// Write samples as JSONL, replacing the file.
pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<(), StoreError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s).expect("samples serialize");
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Append-only store held open by a single writer.
#[derive(Debug)]
pub struct SampleStore {
    path: PathBuf,
    lock_path: PathBuf,
}

impl SampleStore {
    /// Open (creating if needed) and lock the store at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut lock_name = path.as_os_str().to_owned();
        lock_name.push(".lock");
        let lock_path = PathBuf::from(lock_name);
        match OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock_path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(StoreError::Locked(path));
            }
            Err(e) => return Err(io_err(&lock_path)(e)),
        }
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self { path, lock_path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn read_all(&self) -> Result<Vec<Sample>, StoreError> {
        read_jsonl(&self.path)
    }

    /// Append samples in order and flush them to disk.
    pub fn append(&mut self, samples: &[Sample]) -> Result<(), StoreError> {
        if samples.is_empty() {
            return Ok(());
        }
        let file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        let mut w = BufWriter::new(file);
        for s in samples {
            serde_json::to_writer(&mut w, s).expect("samples serialize");
            w.write_all(b"\n").map_err(io_err(&self.path))?;
        }
        let file = w
            .into_inner()
            .map_err(|e| io_err(&self.path)(e.into_error()))?;
        file.sync_data().map_err(io_err(&self.path))
    }
}

impl Drop for SampleStore {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock_path);
    }
}

/// CSV header for a study: one column per learned feature, then `action`,
/// `reward`, one `next_<feature>` column per learned feature and `source`.
/// Feature columns hold bin indices.
pub fn csv_header(spec: &StudySpec) -> Vec<String> {
    let names: Vec<&str> = spec.learned_features().map(|f| f.name.as_str()).collect();
    let mut h: Vec<String> = names.iter().map(|n| n.to_string()).collect();
    h.push("action".into());
    h.push("reward".into());
    h.extend(names.iter().map(|n| format!("next_{n}")));
    h.push("source".into());
    h
}

/// Import samples from CSV. `source` applies when the file has no source
/// column. Errors name the offending line.
pub fn ingest_csv(
    path: &Path,
    spec: &StudySpec,
    source: SampleSource,
) -> Result<Vec<Sample>, StoreError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| StoreError::Record {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?;
    let record_err = |line: usize, message: String| StoreError::Record {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| record_err(1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let names: Vec<String> = spec.learned_features().map(|f| f.name.clone()).collect();
    let mut state_cols = Vec::new();
    let mut next_cols = Vec::new();
    for n in &names {
        state_cols.push(col(n).ok_or_else(|| record_err(1, format!("missing column '{n}'")))?);
        let next = format!("next_{n}");
        next_cols
            .push(col(&next).ok_or_else(|| record_err(1, format!("missing column '{next}'")))?);
    }
    let action_col =
        col("action").ok_or_else(|| record_err(1, "missing column 'action'".into()))?;
    let reward_col =
        col("reward").ok_or_else(|| record_err(1, "missing column 'reward'".into()))?;
    let source_col = col("source");

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            record_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parse_idx = |i: usize| -> Result<usize, StoreError> {
            field(i)
                .parse()
                .map_err(|_| record_err(line, format!("'{}' is not a state index", field(i))))
        };
        let state = State::new(
            state_cols
                .iter()
                .map(|&i| parse_idx(i))
                .collect::<Result<_, _>>()?,
        );
        let next = State::new(
            next_cols
                .iter()
                .map(|&i| parse_idx(i))
                .collect::<Result<_, _>>()?,
        );
        let action: usize = field(action_col).parse().map_err(|_| {
            record_err(line, format!("'{}' is not an action id", field(action_col)))
        })?;
        let reward: f64 = field(reward_col)
            .parse()
            .map_err(|_| record_err(line, format!("'{}' is not a reward", field(reward_col))))?;
        let src = match source_col.map(field).filter(|s| !s.is_empty()) {
            Some(s) => s.parse().map_err(|e: String| record_err(line, e))?,
            None => source,
        };
        let sample = Sample::new(state, action, reward, next, src);
        spec.validate_sample(&sample)
            .map_err(|e: StudyError| record_err(line, e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}

/// Export samples to CSV in the layout read by [`ingest_csv`].
pub fn export_csv(path: &Path, spec: &StudySpec, samples: &[Sample]) -> Result<(), StoreError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| StoreError::Record {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let to_err = |e: csv::Error| StoreError::Record {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    w.write_record(csv_header(spec)).map_err(to_err)?;
    for s in samples {
        let mut row: Vec<String> = s.state.values.iter().map(|v| v.to_string()).collect();
        row.push(s.action_id.to_string());
        row.push(s.reward.to_string());
        row.extend(s.next_state.values.iter().map(|v| v.to_string()));
        row.push(source_tag(s.source).into());
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn source_tag(source: SampleSource) -> &'static str {
    match source {
        SampleSource::Real => "real",
        SampleSource::Llm => "llm",
        SampleSource::Human => "human",
        SampleSource::Mock => "mock",
    }
}
