//! CSV sidecar for metadata: `age,gender,smoking,sbp,diabetes,tchol,hdl`,
//! an empty cell meaning "not recorded".

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::risk::{MetadataRecord, RiskScore};

const HEADER: [&str; 7] = ["age", "gender", "smoking", "sbp", "diabetes", "tchol", "hdl"];

fn real(cell: &str, name: &str, row: usize) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::InvalidMetadata(format!("row {row}: {name} = {cell:?} is not a number")))
}

fn flag(cell: &str, name: &str, row: usize) -> Result<Option<bool>> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "" => Ok(None),
        "1" | "true" | "yes" | "y" => Ok(Some(true)),
        "0" | "false" | "no" | "n" => Ok(Some(false)),
        other => Err(Error::InvalidMetadata(format!("row {row}: {name} = {other:?} is not a yes/no value"))),
    }
}

/// Reads metadata rows. Columns are matched by header name, so their order
/// is free, but all seven must be present. Rows are 1-based in errors.
pub fn read_metadata_csv<R: Read>(input: R) -> Result<Vec<MetadataRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 7];
    for (slot, name) in cols.iter_mut().zip(HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::InvalidMetadata(format!("missing column {name:?}")))?;
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let n = i + 1;
        let cell = |c: usize| row.get(cols[c]).unwrap_or("");
        let gender = match cell(1).trim() {
            "" => None,
            g => Some(g.parse().map_err(|e| Error::InvalidMetadata(format!("row {n}: {e}")))?),
        };
        let rec = MetadataRecord {
            age: real(cell(0), "age", n)?,
            gender,
            smoking: flag(cell(2), "smoking", n)?,
            sbp: real(cell(3), "sbp", n)?,
            diabetes: flag(cell(4), "diabetes", n)?,
            total_cholesterol: real(cell(5), "tchol", n)?,
            hdl_cholesterol: real(cell(6), "hdl", n)?,
        };
        rec.validate().map_err(|e| match e {
            Error::InvalidMetadata(msg) => Error::InvalidMetadata(format!("row {n}: {msg}")),
            other => other,
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn metadata_cells(m: &MetadataRecord) -> [String; 7] {
    let b = |v: Option<bool>| v.map_or_else(String::new, |v| (v as u8).to_string());
    [
        opt(m.age),
        opt(m.gender),
        b(m.smoking),
        opt(m.sbp),
        b(m.diabetes),
        opt(m.total_cholesterol),
        opt(m.hdl_cholesterol),
    ]
}

pub fn write_metadata_csv<W: Write>(out: W, records: &[MetadataRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for m in records {
        w.write_record(metadata_cells(m))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `r,m` per row, optionally preceded by the input metadata columns.
pub fn write_scores_csv<W: Write>(out: W, scores: &[RiskScore], metadata: Option<&[MetadataRecord]>) -> Result<()> {
    if let Some(meta) = metadata {
        if meta.len() != scores.len() {
            return Err(Error::shape("write_scores_csv", format!("{} rows of metadata, {} scores", meta.len(), scores.len())));
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = if metadata.is_some() { HEADER.to_vec() } else { Vec::new() };
    header.extend(["r", "m"]);
    w.write_record(&header)?;
    for (i, s) in scores.iter().enumerate() {
        let mut row: Vec<String> = metadata.map_or_else(Vec::new, |m| metadata_cells(&m[i]).to_vec());
        row.push(format!("{:.10}", s.r));
        row.push(s.missing.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
