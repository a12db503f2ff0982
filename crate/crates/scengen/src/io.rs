//! Line-delimited JSON scenario interchange.
//!
//! A scenario file starts with one header line describing the corpus
//! (format tag, version, timestep, step count, FOV) followed by one JSON
//! scenario per line. All distances are meters, angles radians in
//! (-pi, pi], speeds m/s.

use crate::scenario::Scenario;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub const FORMAT_TAG: &str = "scengen-scenarios";
pub const FORMAT_VERSION: u32 = 1;

/// First line of every scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    /// Seconds between trajectory poses.
    pub dt: f64,
    /// Future trajectory length T.
    pub t_steps: usize,
    /// Side length of the square AV-centered FOV, meters.
    pub fov_extent: f64,
    /// Full configuration the file was produced with, serialized as JSON.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl CorpusHeader {
    pub fn new(dt: f64, t_steps: usize, fov_extent: f64) -> Self {
        Self {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            dt,
            t_steps,
            fov_extent,
            config: None,
        }
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = Some(config);
        self
    }
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed json on line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("missing header line")]
    MissingHeader,
    #[error("unsupported format tag {found:?} (expected {expected:?})")]
    BadFormat { found: String, expected: String },
    #[error("unsupported version {0}")]
    BadVersion(u32),
}

pub fn write_scenarios<W: Write>(
    mut w: W,
    header: &CorpusHeader,
    scenarios: &[Scenario],
) -> Result<(), IoError> {
    let line = serde_json::to_string(header).expect("header serializes");
    writeln!(w, "{line}")?;
    for s in scenarios {
        let line = serde_json::to_string(s).expect("scenario serializes");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn write_scenarios_file(
    path: &Path,
    header: &CorpusHeader,
    scenarios: &[Scenario],
) -> Result<(), IoError> {
    let file = std::fs::File::create(path)?;
    write_scenarios(std::io::BufWriter::new(file), header, scenarios)
}

pub fn read_scenarios<R: BufRead>(r: R) -> Result<(CorpusHeader, Vec<Scenario>), IoError> {
    let mut lines = r.lines().enumerate();
    let header: CorpusHeader = match lines.next() {
        None => return Err(IoError::MissingHeader),
        Some((line, text)) => {
            let text = text?;
            serde_json::from_str(&text).map_err(|source| IoError::Json { line: line + 1, source })?
        }
    };
    if header.format != FORMAT_TAG {
        return Err(IoError::BadFormat { found: header.format, expected: FORMAT_TAG.to_string() });
    }
    if header.version != FORMAT_VERSION {
        return Err(IoError::BadVersion(header.version));
    }
    let mut scenarios = Vec::new();
    for (line, text) in lines {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let s = serde_json::from_str(&text).map_err(|source| IoError::Json { line: line + 1, source })?;
        scenarios.push(s);
    }
    Ok((header, scenarios))
}

pub fn read_scenarios_file(path: &Path) -> Result<(CorpusHeader, Vec<Scenario>), IoError> {
    let file = std::fs::File::open(path)?;
    read_scenarios(std::io::BufReader::new(file))
}
