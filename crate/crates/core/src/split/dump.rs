//! Embedding dump for external plotting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CutTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Client,
    Host,
}

impl Party {
    pub fn as_str(self) -> &'static str {
        match self {
            Party::Client => "client",
            Party::Host => "host",
        }
    }
}

/// Writes `step,row_id,party,dim_0..dim_k,true_label`, one line per
/// (row, party). The narrower party leaves its trailing dims empty.
/// `labels` is indexed by the trace's row ids. Returns the rows written.
pub fn write_embedding_dump(trace: &CutTrace, labels: &[usize], step: usize, path: &Path) -> Result<usize> {
    let width = trace.client.cols().max(trace.host.cols());
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header = vec!["step".to_string(), "row_id".into(), "party".into()];
    header.extend((0..width).map(|i| format!("dim_{i}")));
    header.push("true_label".into());
    w.write_record(&header).map_err(csv_io)?;
    let mut written = 0;
    for (i, &row) in trace.row_ids.iter().enumerate() {
        let label = labels.get(row).ok_or_else(|| Error::contract(format!("no label for traced row {row}")))?;
        for (party, m) in [(Party::Client, &trace.client), (Party::Host, &trace.host)] {
            let mut rec = vec![step.to_string(), row.to_string(), party.as_str().to_string()];
            rec.extend((0..width).map(|c| if c < m.cols() { format!("{:?}", m.get(i, c)) } else { String::new() }));
            rec.push(label.to_string());
            w.write_record(&rec).map_err(csv_io)?;
            written += 1;
        }
    }
    w.flush()?;
    Ok(written)
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}
