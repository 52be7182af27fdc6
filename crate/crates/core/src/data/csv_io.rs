use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::RawSequence;
use crate::error::{PadError, Result};

const TIME_COLUMN: &str = "timestamp";
const LABEL_COLUMN: &str = "label";

/// Read a sequence from CSV.
///
/// The header names every column. `timestamp` and `label` are optional
/// reserved names; every other column is a channel. Without a timestamp
/// column observations are stamped 0, 1, 2, ….
pub fn load_csv(path: impl AsRef<Path>) -> Result<RawSequence> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| PadError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header = reader
        .headers()
        .map_err(|e| PadError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let time_col = header.iter().position(|h| h == TIME_COLUMN);
    let label_col = header.iter().position(|h| h == LABEL_COLUMN);
    let channel_cols: Vec<usize> = (0..header.len())
        .filter(|&i| Some(i) != time_col && Some(i) != label_col)
        .collect();
    if channel_cols.is_empty() {
        return Err(PadError::Parse {
            line: 1,
            msg: "no channel columns in header".into(),
        });
    }
    let channel_names = channel_cols.iter().map(|&i| header[i].to_string()).collect();

    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut flags = label_col.map(|_| Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| PadError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(PadError::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let number = |col: usize| -> Result<f64> {
            let cell = &record[col];
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| PadError::Parse {
                    line,
                    msg: format!("column '{}': '{cell}' is not a finite number", &header[col]),
                })
        };
        let t = match time_col {
            Some(c) => number(c)?,
            None => times.len() as f64,
        };
        if let Some(&prev) = times.last() {
            if !(t > prev) {
                return Err(PadError::Parse {
                    line,
                    msg: format!("timestamp {t} does not increase (previous {prev})"),
                });
            }
        }
        times.push(t);
        for &c in &channel_cols {
            values.push(number(c)?);
        }
        if let (Some(c), Some(flags)) = (label_col, flags.as_mut()) {
            flags.push(match &record[c] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(PadError::Parse {
                        line,
                        msg: format!("label must be 0 or 1, found '{other}'"),
                    })
                }
            });
        }
    }

    let seq = RawSequence {
        times,
        values,
        n_channels: channel_cols.len(),
        channel_names,
        anomaly_flags: flags,
        source_name: path.display().to_string(),
    };
    seq.validate()?;
    Ok(seq)
}

/// Write a sequence as CSV with a `timestamp` column and, when labeled, a
/// `label` column. Floats use the shortest round-trip representation.
pub fn save_csv(seq: &RawSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| PadError::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut w = std::io::BufWriter::new(file);
    let mut header = vec![TIME_COLUMN.to_string()];
    header.extend(seq.channel_names.iter().cloned());
    if seq.anomaly_flags.is_some() {
        header.push(LABEL_COLUMN.into());
    }
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for i in 0..seq.len() {
        let mut row = vec![seq.times[i].to_string()];
        row.extend(seq.observation(i).iter().map(f64::to_string));
        if let Some(f) = &seq.anomaly_flags {
            row.push(if f[i] { "1" } else { "0" }.into());
        }
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}
