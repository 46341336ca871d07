//! On-disk CSV schemas for frame tables, predictions and raw sensor streams.
//!
//! Frame-table CSV: `participant_id,subsequence_id,second_index,<features...>[,room],y_00..`
//! with empty cells for missing values. Prediction CSV:
//! `participant_id,subsequence_id,second_index,p_00..` with probabilities
//! printed to 6 decimal places. All files are UTF-8 with LF line endings.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{FrameRow, FrameTable, Matrix, ScoreMatrix};
use crate::error::{Error, Result};

/// Key of one per-second row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowKey {
    pub participant_id: u32,
    pub subsequence_id: u32,
    pub second_index: u32,
}

impl RowKey {
    pub fn of(row: &FrameRow) -> Self {
        RowKey {
            participant_id: row.participant_id,
            subsequence_id: row.subsequence_id,
            second_index: row.second_index,
        }
    }
}

/// Keyed probability rows, as stored in prediction CSVs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub keys: Vec<RowKey>,
    pub values: Matrix,
}

fn class_column(prefix: &str, c: usize) -> String {
    format!("{prefix}_{c:02}")
}

fn is_class_column(name: &str, prefix: &str) -> bool {
    name.strip_prefix(prefix)
        .and_then(|rest| rest.strip_prefix('_'))
        .is_some_and(|digits| !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()))
}

fn format_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        // shortest representation that round-trips exactly
        format!("{v}")
    }
}

fn parse_cell(s: &str, context: &str) -> Result<f64> {
    if s.is_empty() {
        Ok(f64::NAN)
    } else {
        s.parse::<f64>()
            .map_err(|e| Error::validation(format!("{context}: bad number {s:?} ({e})")))
    }
}

fn parse_u32(s: &str, context: &str) -> Result<u32> {
    s.parse::<u32>()
        .map_err(|e| Error::validation(format!("{context}: bad integer {s:?} ({e})")))
}

/// Write a frame table. The `room` column appears iff any row carries a
/// room; label columns appear iff any row carries a soft label.
pub fn write_frame_csv(table: &FrameTable, path: &Path) -> Result<()> {
    for name in &table.columns {
        if name == "room" || is_class_column(name, "y") {
            return Err(Error::validation(format!(
                "feature column name {name:?} collides with a reserved schema column"
            )));
        }
    }
    let has_room = table.rows.iter().any(|r| r.room.is_some());
    let has_labels = table.rows.iter().any(|r| r.soft_label.is_some());
    let file = File::create(path)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));

    let mut header: Vec<String> = vec![
        "participant_id".into(),
        "subsequence_id".into(),
        "second_index".into(),
    ];
    header.extend(table.columns.iter().cloned());
    if has_room {
        header.push("room".into());
    }
    if has_labels {
        header.extend((0..table.n_classes).map(|c| class_column("y", c)));
    }
    w.write_record(&header).map_err(csv_err)?;

    for row in &table.rows {
        let mut record: Vec<String> = vec![
            row.participant_id.to_string(),
            row.subsequence_id.to_string(),
            row.second_index.to_string(),
        ];
        record.extend(row.features.iter().map(|&v| format_cell(v)));
        if has_room {
            record.push(row.room.map_or(String::new(), |r| r.to_string()));
        }
        if has_labels {
            match &row.soft_label {
                Some(label) => record.extend(label.iter().map(|&v| format_cell(v))),
                None => record.extend(std::iter::repeat_n(String::new(), table.n_classes)),
            }
        }
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a frame table written by [`write_frame_csv`].
pub fn read_frame_csv(path: &Path) -> Result<FrameTable> {
    let file = File::open(path)?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 3
        || header[0] != "participant_id"
        || header[1] != "subsequence_id"
        || header[2] != "second_index"
    {
        return Err(Error::validation(format!(
            "frame csv {path:?} must start with participant_id,subsequence_id,second_index"
        )));
    }
    let rest = &header[3..];
    let n_labels = rest.iter().rev().take_while(|c| is_class_column(c, "y")).count();
    let label_start = rest.len() - n_labels;
    let room_col = label_start > 0 && rest[label_start - 1] == "room";
    let n_features = label_start - usize::from(room_col);
    let columns: Vec<String> = rest[..n_features].to_vec();

    let mut table = FrameTable::new(columns, n_labels);
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let ctx = format!("frame csv line {}", line + 2);
        if record.len() != header.len() {
            return Err(Error::validation(format!(
                "{ctx}: {} fields, expected {}",
                record.len(),
                header.len()
            )));
        }
        let mut features = Vec::with_capacity(n_features);
        for i in 0..n_features {
            features.push(parse_cell(&record[3 + i], &ctx)?);
        }
        let room = if room_col {
            let cell = &record[3 + n_features];
            if cell.is_empty() {
                None
            } else {
                Some(parse_u32(cell, &ctx)?)
            }
        } else {
            None
        };
        let soft_label = if n_labels > 0 {
            let start = 3 + n_features + usize::from(room_col);
            let cells: Vec<&str> = (0..n_labels).map(|i| &record[start + i]).collect();
            if cells.iter().all(|c| c.is_empty()) {
                None
            } else {
                let mut label = Vec::with_capacity(n_labels);
                for cell in cells {
                    label.push(parse_cell(cell, &ctx)?);
                }
                Some(label)
            }
        } else {
            None
        };
        table.rows.push(FrameRow {
            participant_id: parse_u32(&record[0], &ctx)?,
            subsequence_id: parse_u32(&record[1], &ctx)?,
            second_index: parse_u32(&record[2], &ctx)?,
            features,
            room,
            soft_label,
        });
    }
    Ok(table)
}

/// Write keyed probabilities with 6 decimal places per cell.
pub fn write_prediction_csv(keys: &[RowKey], probs: &ScoreMatrix, path: &Path) -> Result<()> {
    if keys.len() != probs.n_rows() {
        return Err(Error::validation(format!(
            "prediction csv: {} keys vs {} probability rows",
            keys.len(),
            probs.n_rows()
        )));
    }
    let file = File::create(path)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header: Vec<String> = vec![
        "participant_id".into(),
        "subsequence_id".into(),
        "second_index".into(),
    ];
    header.extend((0..probs.n_classes()).map(|c| class_column("p", c)));
    w.write_record(&header).map_err(csv_err)?;
    for (i, key) in keys.iter().enumerate() {
        let mut record: Vec<String> = vec![
            key.participant_id.to_string(),
            key.subsequence_id.to_string(),
            key.second_index.to_string(),
        ];
        record.extend(probs.row(i).iter().map(|v| format!("{v:.6}")));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a prediction CSV. Rows are renormalized to sum exactly within
/// tolerance (6-decimal printing introduces up to C*5e-7 of drift).
pub fn read_prediction_csv(path: &Path) -> Result<PredictionSet> {
    let file = File::open(path)?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 4 || !header[3..].iter().all(|c| is_class_column(c, "p")) {
        return Err(Error::validation(format!(
            "prediction csv {path:?} must be key columns followed by p_00.. columns"
        )));
    }
    let n_classes = header.len() - 3;
    let mut keys = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let ctx = format!("prediction csv line {}", line + 2);
        let mut row = Vec::with_capacity(n_classes);
        for i in 0..n_classes {
            row.push(parse_cell(&record[3 + i], &ctx)?);
        }
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for v in &mut row {
                *v /= sum;
            }
        }
        keys.push(RowKey {
            participant_id: parse_u32(&record[0], &ctx)?,
            subsequence_id: parse_u32(&record[1], &ctx)?,
            second_index: parse_u32(&record[2], &ctx)?,
        });
        rows.push(row);
    }
    Ok(PredictionSet {
        keys,
        values: Matrix::from_rows(&rows)?,
    })
}

/// One raw sensor sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    pub participant_id: u32,
    pub channel: String,
    pub t_ms: u64,
    pub value: f64,
}

/// Write raw stream samples as `participant_id,channel,t_ms,value`.
pub fn write_stream_csv(records: &[StreamRecord], path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["participant_id", "channel", "t_ms", "value"])
        .map_err(csv_err)?;
    for rec in records {
        w.write_record([
            rec.participant_id.to_string(),
            rec.channel.clone(),
            rec.t_ms.to_string(),
            format_cell(rec.value),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stream_csv(path: &Path) -> Result<Vec<StreamRecord>> {
    let file = File::open(path)?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ["participant_id", "channel", "t_ms", "value"] {
        return Err(Error::validation(format!(
            "stream csv {path:?} must have header participant_id,channel,t_ms,value"
        )));
    }
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let ctx = format!("stream csv line {}", line + 2);
        out.push(StreamRecord {
            participant_id: parse_u32(&record[0], &ctx)?,
            channel: record[1].to_string(),
            t_ms: record[2]
                .parse::<u64>()
                .map_err(|e| Error::validation(format!("{ctx}: bad t_ms ({e})")))?,
            value: parse_cell(&record[3], &ctx)?,
        });
    }
    Ok(out)
}

/// Read a whole file into a byte buffer (used for content hashing).
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

/// Write text, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::validation(format!("csv: {e}"))
}
