//! JSON Lines streams and projection matrix files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FrameRecord;
use crate::synth::Corruption;

pub const SCHEMA_VERSION: u32 = 1;

/// Magic prefix of binary matrix files.
pub const MATRIX_MAGIC: &[u8; 4] = b"FCMX";

/// One line of a detection stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub sequence_id: String,
    #[serde(flatten)]
    pub frame: FrameRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<Corruption>,
}

/// Frames of one sequence in file order. `truth` is present when every
/// frame carries a `truth_label`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceInput {
    pub id: String,
    pub frames: Vec<FrameRecord>,
    pub truth: Option<Vec<String>>,
}

/// Groups records by `sequence_id` in order of first appearance.
pub fn group_records(records: Vec<StreamRecord>) -> Vec<SequenceInput> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, (Vec<FrameRecord>, Vec<Option<String>>)> =
        Default::default();
    for r in records {
        let entry = groups.entry(r.sequence_id.clone()).or_insert_with(|| {
            order.push(r.sequence_id.clone());
            Default::default()
        });
        entry.0.push(r.frame);
        entry.1.push(r.truth_label);
    }
    order
        .into_iter()
        .map(|id| {
            let (frames, truth) = groups.remove(&id).expect("grouped id");
            let truth = truth.into_iter().collect::<Option<Vec<_>>>();
            SequenceInput { id, frames, truth }
        })
        .collect()
}

fn parse_lines<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::Format {
            path: origin.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn parse_stream(text: &str, origin: &str) -> Result<Vec<SequenceInput>> {
    Ok(group_records(parse_lines(text, origin)?))
}

pub fn read_stream(path: &Path) -> Result<Vec<SequenceInput>> {
    parse_stream(&fs::read_to_string(path)?, &path.display().to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sequence_id: String,
    #[serde(default)]
    pub index: Option<usize>,
    pub label: String,
}

/// Label sequences from an annotation file, grouped by `sequence_id`.
pub fn read_annotations(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    let records: Vec<AnnotationRecord> = parse_lines(&text, &path.display().to_string())?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<String>> = Default::default();
    for r in records {
        groups
            .entry(r.sequence_id.clone())
            .or_insert_with(|| {
                order.push(r.sequence_id.clone());
                Vec::new()
            })
            .push(r.label);
    }
    Ok(order
        .into_iter()
        .map(|id| groups.remove(&id).expect("grouped id"))
        .collect())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    rows: usize,
    cols: usize,
    /// Row-major.
    data: Vec<f64>,
}

fn shaped(rows: usize, cols: usize, data: Vec<f64>, origin: &str) -> Result<DMatrix<f64>> {
    if rows * cols != data.len() {
        return Err(Error::InvalidInput(format!(
            "{origin}: shape {rows}x{cols} does not match {} values",
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Parses a matrix from either JSON `{"rows", "cols", "data"}` (row-major) or
/// the binary layout: `FCMX`, rows and cols as little-endian u64, then
/// row-major little-endian f64 values.
pub fn parse_matrix(bytes: &[u8], origin: &str) -> Result<DMatrix<f64>> {
    if let Some(rest) = bytes.strip_prefix(MATRIX_MAGIC.as_slice()) {
        if rest.len() < 16 {
            return Err(Error::InvalidInput(format!("{origin}: truncated matrix header")));
        }
        let rows = u64::from_le_bytes(rest[0..8].try_into().expect("8 bytes")) as usize;
        let cols = u64::from_le_bytes(rest[8..16].try_into().expect("8 bytes")) as usize;
        let body = &rest[16..];
        if body.len() % 8 != 0 {
            return Err(Error::InvalidInput(format!("{origin}: ragged matrix body")));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        shaped(rows, cols, data, origin)
    } else {
        let doc: MatrixDoc = serde_json::from_slice(bytes)?;
        shaped(doc.rows, doc.cols, doc.data, origin)
    }
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&fs::read(path)?, &path.display().to_string())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn matrix_to_json(m: &DMatrix<f64>) -> Result<String> {
    Ok(serde_json::to_string(&MatrixDoc {
        rows: m.nrows(),
        cols: m.ncols(),
        data: row_major(m),
    })?)
}

pub fn matrix_to_binary(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in row_major(m) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_lines_group_by_sequence() {
        let text = r#"{"sequence_id":"b","index":0,"label":"x","confidence":0.9,"feature":[1.0],"truth_label":"x"}
{"sequence_id":"a","index":0,"label":"y","confidence":0.5,"feature":[0.0],"box":[1,2,3,4]}

{"sequence_id":"b","index":1,"label":"z","confidence":0.4,"feature":[2.0],"truth_label":"x"}
"#;
        let seqs = parse_stream(text, "mem").unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].id, "b");
        assert_eq!(seqs[0].frames.len(), 2);
        assert_eq!(seqs[0].truth, Some(vec!["x".to_string(), "x".to_string()]));
        assert_eq!(seqs[1].truth, None);
        assert_eq!(seqs[1].frames[0].bbox, Some([1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn malformed_line_reports_position() {
        let text = "{\"sequence_id\":\"a\",\"index\":0,\"label\":\"x\",\"confidence\":0.9,\"feature\":[]}\n{oops}\n";
        match parse_stream(text, "in.jsonl") {
            Err(Error::Format { line, path, .. }) => assert_eq!((line, path.as_str()), (2, "in.jsonl")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn record_round_trip_keeps_box() {
        let mut frame = FrameRecord::new(3, "walk", 0.75, vec![0.5, -1.0]);
        frame.bbox = Some([0.0, 1.0, 10.0, 20.0]);
        let rec = StreamRecord {
            sequence_id: "s".into(),
            frame,
            truth_label: Some("run".into()),
            corruption: None,
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.contains("\"box\":[0.0,1.0,10.0,20.0]"));
        assert!(!line.contains("corruption"));
        assert_eq!(serde_json::from_str::<StreamRecord>(&line).unwrap(), rec);
    }

    #[test]
    fn matrices_in_both_encodings() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, -6.5]);
        assert_eq!(parse_matrix(matrix_to_json(&m).unwrap().as_bytes(), "j").unwrap(), m);
        assert_eq!(parse_matrix(&matrix_to_binary(&m), "b").unwrap(), m);
        let json = r#"{"rows":2,"cols":2,"data":[1,2,3,4]}"#;
        let parsed = parse_matrix(json.as_bytes(), "j").unwrap();
        assert_eq!(parsed[(0, 1)], 2.0);
        assert!(parse_matrix(br#"{"rows":2,"cols":2,"data":[1]}"#, "j").is_err());
        assert!(parse_matrix(b"FCMX\x01", "b").is_err());
    }
}
