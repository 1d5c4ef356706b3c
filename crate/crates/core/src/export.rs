//! CSV and JSON-lines writers/readers for records, aggregates and curves.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Row types with a fixed CSV header.
pub trait CsvSchema: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    /// One JSON object per line.
    JsonLines,
}

impl Format {
    /// `.json`/`.jsonl` select JSON lines, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") | Some("jsonl") => Format::JsonLines,
            _ => Format::Csv,
        }
    }
}

pub fn export<T: CsvSchema>(rows: &[T], path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let out = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(rows, out).map_err(|e| csv_error(path, e)),
        Format::JsonLines => write_jsonl(rows, out).map_err(|e| Error::io(path, e)),
    }
}

pub fn import<T: CsvSchema>(path: impl AsRef<Path>, format: Format) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Csv => {
            let mut rdr = csv::Reader::from_reader(file);
            let header: Vec<String> = rdr
                .headers()
                .map_err(|e| csv_error(path, e))?
                .iter()
                .map(str::to_owned)
                .collect();
            if header != T::HEADER {
                return Err(Error::format(path, format!("unexpected header {header:?}")));
            }
            rdr.deserialize()
                .collect::<std::result::Result<Vec<T>, _>>()
                .map_err(|e| csv_error(path, e))
        }
        Format::JsonLines => {
            let mut rows = Vec::new();
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                rows.push(serde_json::from_str(&line).map_err(|e| Error::format(path, e))?);
            }
            Ok(rows)
        }
    }
}

/// Header line followed by one line per row; header-only for no rows.
pub fn write_csv<T: CsvSchema, W: Write>(rows: &[T], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(T::HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<T: Serialize, W: Write>(rows: &[T], mut out: W) -> std::io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        }
    } else {
        Error::format(path, e)
    }
}

impl CsvSchema for crate::model::RunRecord {
    const HEADER: &'static [&'static str] = &[
        "seed", "K", "beta", "M", "N_A", "N_R", "N_E", "f_RE", "f_RA", "T", "delta_nE",
    ];
}

impl CsvSchema for crate::evolution::EvolutionRow {
    const HEADER: &'static [&'static str] = &[
        "K",
        "M_over_N",
        "beta",
        "p_R",
        "T",
        "p_U",
        "converged",
        "iterations",
    ];
}

/// Reads a runs export and restores the derived `abs_delta_nE` field.
pub fn import_runs(path: impl AsRef<Path>, format: Format) -> Result<Vec<crate::model::RunRecord>> {
    let mut rows: Vec<crate::model::RunRecord> = import(path, format)?;
    for r in &mut rows {
        r.abs_delta_ne = r.delta_ne.abs();
    }
    Ok(rows)
}
