//! Draw files and run manifests.
//!
//! Cell draws have columns iteration, region_id, year, density. Parameter
//! draws have an iteration column followed by one column per parameter.
//! Either kind may be written as CSV or as a compact binary file: an 8-byte
//! magic, a little-endian u32 header length, a JSON header, then the rows as
//! little-endian f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::DrawFormat;
use crate::error::{validation, MeldError, Result};
use crate::mcmc::Trace;

pub const BINARY_MAGIC: &[u8; 8] = b"SMDRAWS1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BinaryHeader {
    columns: Vec<String>,
    rows: usize,
    /// Region labels indexed by the region column, when there is one.
    #[serde(default)]
    region_ids: Vec<String>,
}

pub fn extension(format: DrawFormat) -> &'static str {
    match format {
        DrawFormat::Csv => "csv",
        DrawFormat::Binary => "bin",
    }
}

fn write_binary(path: &Path, header: &BinaryHeader, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let json = serde_json::to_vec(header)?;
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut written = 0;
    for row in rows {
        if row.len() != header.columns.len() {
            return Err(MeldError::Internal("binary row width differs from header".into()));
        }
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
        written += 1;
    }
    if written != header.rows {
        return Err(MeldError::Internal("binary row count differs from header".into()));
    }
    w.flush()?;
    Ok(())
}

fn read_binary(path: &Path) -> Result<(BinaryHeader, Vec<Vec<f64>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(validation(format!("{} is not a draw file", path.display())));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: BinaryHeader = serde_json::from_slice(&json)?;
    let width = header.columns.len();
    let mut rows = Vec::with_capacity(header.rows);
    let mut buf = [0u8; 8];
    for _ in 0..header.rows {
        let mut row = Vec::with_capacity(width);
        for _ in 0..width {
            r.read_exact(&mut buf)?;
            row.push(f64::from_le_bytes(buf));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// One retained density draw of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDraw {
    pub iteration: u64,
    pub region_id: String,
    pub year: i32,
    pub density: f64,
}

const CELL_COLUMNS: [&str; 4] = ["iteration", "region_id", "year", "density"];

/// Write cell draws given as (iteration, region index, year, density).
pub fn write_cell_draws(
    path: &Path,
    format: DrawFormat,
    region_ids: &[String],
    draws: &[(u64, usize, i32, f64)],
) -> Result<()> {
    match format {
        DrawFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            for &(iteration, region, year, density) in draws {
                w.serialize(CellDraw { iteration, region_id: region_ids[region].clone(), year, density })?;
            }
            w.flush()?;
            Ok(())
        }
        DrawFormat::Binary => {
            let header = BinaryHeader {
                columns: CELL_COLUMNS.map(String::from).to_vec(),
                rows: draws.len(),
                region_ids: region_ids.to_vec(),
            };
            write_binary(path, &header, draws.iter().map(|&(it, r, y, d)| vec![it as f64, r as f64, y as f64, d]))
        }
    }
}

pub fn read_cell_draws(path: &Path) -> Result<Vec<CellDraw>> {
    if is_binary(path) {
        let (header, rows) = read_binary(path)?;
        if header.columns != CELL_COLUMNS {
            return Err(validation(format!("{} does not hold cell draws", path.display())));
        }
        rows.into_iter()
            .map(|r| {
                let region_id = header
                    .region_ids
                    .get(r[1] as usize)
                    .ok_or_else(|| validation(format!("{}: region index out of range", path.display())))?
                    .clone();
                Ok(CellDraw { iteration: r[0] as u64, region_id, year: r[2] as i32, density: r[3] })
            })
            .collect()
    } else {
        crate::ingestion::read_csv(path)
    }
}

pub fn write_trace(path: &Path, format: DrawFormat, trace: &Trace) -> Result<()> {
    let mut columns = vec!["iteration".to_string()];
    columns.extend(trace.names.iter().cloned());
    let rows = trace.iterations.iter().zip(&trace.rows).map(|(it, row)| {
        let mut r = vec![*it as f64];
        r.extend(row);
        r
    });
    match format {
        DrawFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(&columns)?;
            for (it, row) in trace.iterations.iter().zip(&trace.rows) {
                let mut rec = vec![it.to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
            w.flush()?;
            Ok(())
        }
        DrawFormat::Binary => {
            write_binary(path, &BinaryHeader { columns, rows: trace.len(), region_ids: Vec::new() }, rows)
        }
    }
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    let (columns, rows) = if is_binary(path) {
        let (h, rows) = read_binary(path)?;
        (h.columns, rows)
    } else {
        let mut rdr = csv::Reader::from_path(path)?;
        let columns: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            rows.push(row.map_err(|e| validation(format!("{}: {e}", path.display())))?);
        }
        (columns, rows)
    };
    if columns.first().map(String::as_str) != Some("iteration") {
        return Err(validation(format!("{} has no iteration column", path.display())));
    }
    let mut trace = Trace::new(columns[1..].to_vec());
    for r in rows {
        trace.push(r[0] as u64, r[1..].to_vec());
    }
    Ok(trace)
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run's outputs from its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub chains: usize,
    pub config_sha256: String,
    /// Fully resolved configuration.
    pub config: String,
    pub inputs: Vec<ManifestFile>,
    pub outputs: Vec<ManifestFile>,
    /// False until every output has been written.
    pub complete: bool,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, chains: usize, config: String) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            chains,
            config_sha256: sha256_hex(config.as_bytes()),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            complete: false,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(ManifestFile { path: path.display().to_string(), sha256: file_sha256(path)? });
        Ok(())
    }

    /// Record an output by its path relative to `dir`.
    pub fn add_output(&mut self, dir: &Path, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(dir).unwrap_or(path);
        self.outputs.push(ManifestFile { path: rel.display().to_string(), sha256: file_sha256(path)? });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| crate::error::config(format!("no fit found at {}: {e}", dir.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_draws_round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let ids = vec!["B001".to_string(), "G01".to_string()];
        let draws = vec![(0, 0, 2005, 0.0), (0, 1, 2005, 1.0 / 3.0), (5, 1, 2006, 1e-300)];
        for format in [DrawFormat::Csv, DrawFormat::Binary] {
            let path = dir.path().join(format!("y.{}", extension(format)));
            write_cell_draws(&path, format, &ids, &draws).unwrap();
            let back = read_cell_draws(&path).unwrap();
            assert_eq!(back.len(), 3);
            assert_eq!(back[1].region_id, "G01");
            assert_eq!(back[1].density, 1.0 / 3.0);
            assert_eq!(back[2].density, 1e-300);
        }
    }

    #[test]
    fn trace_round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trace::new(vec!["a".into(), "b[0]".into()]);
        t.push(10, vec![0.1, -2.0 / 7.0]);
        t.push(20, vec![f64::MIN_POSITIVE, 3.0]);
        for format in [DrawFormat::Csv, DrawFormat::Binary] {
            let path = dir.path().join(format!("p.{}", extension(format)));
            write_trace(&path, format, &t).unwrap();
            assert_eq!(read_trace(&path).unwrap(), t);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        std::fs::write(&path, b"NOTDRAWS\0\0\0\0").unwrap();
        assert!(matches!(read_trace(&path), Err(MeldError::Validation(_))));
    }
}
