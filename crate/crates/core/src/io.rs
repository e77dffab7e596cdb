//! File formats: JSON for operators, channels and reports, CSV for time series,
//! and a JSON manifest recording what produced a set of outputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::KrausChannel;
use crate::error::{Error, Result};
use crate::operator::ComplexOperator;
use crate::tolerance::Tolerances;

/// `{ "dim": d, "kraus": [matrix, ...], "labels": [...] }`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelFile {
    pub dim: usize,
    pub kraus: Vec<ComplexOperator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl ChannelFile {
    pub fn from_channel(channel: &KrausChannel) -> Self {
        Self {
            dim: channel.dim(),
            kraus: channel.kraus().to_vec(),
            labels: channel.labels().map(<[String]>::to_vec),
        }
    }

    /// Checks every Kraus operator against `dim`, then completeness.
    pub fn into_channel(self, tol: &Tolerances) -> Result<KrausChannel> {
        for m in &self.kraus {
            if m.nrows() != self.dim || m.ncols() != self.dim {
                let found = if m.nrows() != self.dim { m.nrows() } else { m.ncols() };
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found,
                });
            }
        }
        let channel = KrausChannel::with_tolerances(self.kraus, tol)?;
        match self.labels {
            Some(labels) => channel.with_labels(labels),
            None => Ok(channel),
        }
    }
}

/// Parses JSON; errors carry `context` plus serde's line and column.
pub fn parse_json<T: DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|source| Error::Json {
        context: context.to_string(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&read_text(path)?, &path.display().to_string())
}

pub fn read_operator(path: &Path) -> Result<ComplexOperator> {
    read_json(path)
}

pub fn read_channel(path: &Path, tol: &Tolerances) -> Result<KrausChannel> {
    read_json::<ChannelFile>(path)?.into_channel(tol)
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: "serializing output".into(),
        source,
    })?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_string(value)?)
}

/// One row per checkpoint: `step,time,mean,stderr`.
pub fn write_series_csv(
    mut w: impl Write,
    steps: &[usize],
    times: &[f64],
    mean: &[f64],
    std_err: &[f64],
) -> std::io::Result<()> {
    writeln!(w, "step,time,mean,stderr")?;
    for k in 0..steps.len() {
        writeln!(w, "{},{:.17e},{:.17e},{:.17e}", steps[k], times[k], mean[k], std_err[k])?;
    }
    Ok(())
}

pub fn series_csv_string(steps: &[usize], times: &[f64], mean: &[f64], std_err: &[f64]) -> String {
    let mut buf = Vec::new();
    write_series_csv(&mut buf, steps, times, mean, std_err).expect("writing to memory");
    String::from_utf8(buf).expect("ASCII output")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    /// Absent when the file could not be read.
    pub sha256: Option<String>,
}

impl InputRecord {
    pub fn from_path(path: &Path) -> Self {
        Self {
            path: path.display().to_string(),
            sha256: fs::read(path).ok().map(|b| sha256_hex(&b)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    ValidationFailure,
    NumericalFailure,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::ValidationFailure => 1,
            RunStatus::NumericalFailure => 2,
        }
    }

    pub fn of_error(e: &Error) -> Self {
        if e.is_numerical() {
            RunStatus::NumericalFailure
        } else {
            RunStatus::ValidationFailure
        }
    }
}

/// Reproducibility record written beside every set of outputs. Contains no
/// timestamps, so identical runs produce identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub core_version: String,
    pub command: String,
    pub arguments: Vec<String>,
    pub inputs: Vec<InputRecord>,
    pub seed: Option<u64>,
    pub tolerances: Tolerances,
    pub outputs: Vec<String>,
    pub status: RunStatus,
    pub error: Option<String>,
}

impl Manifest {
    pub fn new(tool: &str, tool_version: &str, command: &str) -> Self {
        Self {
            tool: tool.into(),
            tool_version: tool_version.into(),
            core_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            arguments: Vec::new(),
            inputs: Vec::new(),
            seed: None,
            tolerances: Tolerances::default(),
            outputs: Vec::new(),
            status: RunStatus::Success,
            error: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::decay_channel;

    #[test]
    fn channel_round_trip() {
        let ch = decay_channel();
        let text = to_json_string(&ChannelFile::from_channel(&ch)).unwrap();
        let back = parse_json::<ChannelFile>(&text, "decay")
            .unwrap()
            .into_channel(&Tolerances::default())
            .unwrap();
        assert_eq!(back.kraus(), ch.kraus());
        assert_eq!(back.labels(), ch.labels());
    }

    #[test]
    fn parse_errors_report_line_and_column() {
        let text = "{\n  \"dim\": 2,\n  \"kraus\": [[[1, 0], [0 0]]]\n}";
        let err = parse_json::<ChannelFile>(text, "bad.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("bad.json: "), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
        assert!(!err.is_numerical());
    }

    #[test]
    fn dimension_mismatch_names_both_dims() {
        let text = r#"{"dim": 3, "kraus": [[[[1,0],[0,0]],[[0,0],[1,0]]]]}"#;
        let err = parse_json::<ChannelFile>(text, "c")
            .unwrap()
            .into_channel(&Tolerances::default())
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, found: 2 }));
        assert!(err.to_string().contains("expected 3, found 2"));
    }

    #[test]
    fn incomplete_channel_is_rejected() {
        let text = r#"{"dim": 1, "kraus": [[[[0.5,0]]]]}"#;
        let err = parse_json::<ChannelFile>(text, "c")
            .unwrap()
            .into_channel(&Tolerances::default())
            .unwrap_err();
        assert!(matches!(err, Error::IncompleteChannel { .. }));
    }

    #[test]
    fn csv_and_hash_are_stable() {
        let s = series_csv_string(&[0, 5], &[0.0, 0.5], &[1.0, 0.25], &[0.0, 0.01]);
        assert_eq!(
            s,
            "step,time,mean,stderr\n0,0.00000000000000000e0,1.00000000000000000e0,0.00000000000000000e0\n\
             5,5.00000000000000000e-1,2.50000000000000000e-1,1.00000000000000002e-2\n"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn files_round_trip_and_io_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("m.json");
        let m = ComplexOperator::identity(2);
        write_json(&path, &m).unwrap();
        assert_eq!(read_operator(&path).unwrap(), m);
        assert!(InputRecord::from_path(&path).sha256.is_some());
        let missing = dir.path().join("nope.json");
        let err = read_operator(&missing).unwrap_err();
        assert!(err.to_string().contains("nope.json"));
        assert_eq!(InputRecord::from_path(&missing).sha256, None);
        assert_eq!(RunStatus::of_error(&err).exit_code(), 1);
    }
}
