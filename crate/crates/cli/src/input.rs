use std::path::Path;

use serde::{Deserialize, Serialize};
use signalroot::{ChannelData, Dataset};

use crate::CliError;

/// One row of input: `channel,y1,y2,y3,t,u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub channel: u32,
    pub y1: u64,
    pub y2: u64,
    pub y3: u64,
    pub t: f64,
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InputFormat {
    Csv,
    Json,
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => InputFormat::Json,
            _ => InputFormat::Csv,
        }
    }
}

pub fn parse_csv(text: &str) -> Result<Vec<InputRecord>, CliError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CliError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected = ["channel", "y1", "y2", "y3", "t", "u"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(CliError::Parse {
            line: 1,
            message: format!("expected header '{}'", expected.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<InputRecord>() {
        match row {
            Ok(r) => out.push(r),
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Err(CliError::Parse {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

pub fn parse_json(text: &str) -> Result<Vec<InputRecord>, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Parse {
        line: e.line() as u64,
        message: e.to_string(),
    })
}

/// Checks channel numbering and builds the dataset in channel order.
pub fn to_dataset(records: &[InputRecord]) -> Result<Dataset, CliError> {
    if records.is_empty() {
        return Err(CliError::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| r.channel);
    for (i, r) in sorted.iter().enumerate() {
        if r.channel as usize != i + 1 {
            return Err(CliError::Input(format!(
                "channel indices must be unique and run from 1 to {}; found {}",
                records.len(),
                r.channel
            )));
        }
    }
    let channels = sorted
        .iter()
        .map(|r| {
            ChannelData::new(r.y1, r.y2, r.y3, r.t, r.u).map_err(|e| CliError::Input(format!("channel {}: {e}", r.channel)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::new(channels).map_err(CliError::Model)
}

pub fn read_records(path: &Path, format: Option<InputFormat>) -> Result<Vec<InputRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    match format.unwrap_or_else(|| InputFormat::from_path(path)) {
        InputFormat::Csv => parse_csv(&text),
        InputFormat::Json => parse_json(&text),
    }
}

pub fn read_dataset(path: &Path, format: Option<InputFormat>) -> Result<(Vec<InputRecord>, Dataset), CliError> {
    let records = read_records(path, format)?;
    let data = to_dataset(&records)?;
    Ok((records, data))
}
