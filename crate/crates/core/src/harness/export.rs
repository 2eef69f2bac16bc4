//! Embedding export as TSV: `node_id \t node_type \t slot_id \t v1,v2,...`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::SlotState;

/// Slot id written for integrated representations.
pub const INTEGRATED_SLOT: i64 = -1;

/// What to export.
#[derive(Clone, Copy, Debug)]
pub enum Embeddings<'a> {
    /// One row per node and slot.
    Slots(&'a SlotState),
    /// One row per node with slot id `-1`.
    Integrated(&'a Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub node: usize,
    pub node_type: usize,
    pub slot: i64,
    pub values: Vec<f64>,
}

fn write_row(
    out: &mut impl Write,
    node: usize,
    node_type: usize,
    slot: i64,
    values: &[f64],
) -> Result<()> {
    write!(out, "{node}\t{node_type}\t{slot}\t")?;
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.write_all(b",")?;
        }
        // 17 significant digits round-trip every f64.
        write!(out, "{v:.16e}")?;
    }
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_embeddings(
    out: &mut impl Write,
    emb: Embeddings<'_>,
    node_types: &[usize],
) -> Result<()> {
    let rows = match emb {
        Embeddings::Slots(s) => s.num_nodes(),
        Embeddings::Integrated(h) => h.rows(),
    };
    if rows != node_types.len() {
        return Err(Error::Shape(format!(
            "{rows} embedding rows for {} nodes",
            node_types.len()
        )));
    }
    for (v, &t) in node_types.iter().enumerate() {
        match emb {
            Embeddings::Slots(s) => {
                for slot in 0..s.num_types() {
                    write_row(out, v, t, slot as i64, s.slot(v, slot))?;
                }
            }
            Embeddings::Integrated(h) => write_row(out, v, t, INTEGRATED_SLOT, h.row(v))?,
        }
    }
    Ok(())
}

pub fn export_embeddings(path: &Path, emb: Embeddings<'_>, node_types: &[usize]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(Error::file(path))?);
    write_embeddings(&mut out, emb, node_types)?;
    out.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let reader = BufReader::new(File::open(path).map_err(Error::file(path))?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(err(format!("{} columns, expected 4", cols.len())));
        }
        let int = |s: &str| s.parse::<i64>().map_err(|e| err(format!("{s:?}: {e}")));
        let values = if cols[3].is_empty() {
            Vec::new()
        } else {
            cols[3]
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?
        };
        rows.push(EmbeddingRow {
            node: usize::try_from(int(cols[0])?).map_err(|e| err(e.to_string()))?,
            node_type: usize::try_from(int(cols[1])?).map_err(|e| err(e.to_string()))?,
            slot: int(cols[2])?,
            values,
        });
    }
    Ok(rows)
}
