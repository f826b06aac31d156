use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::PipelineError;
use crate::coarse_grain::PriceChangeRecord;
use crate::flow::{Vec8, COMPONENT_NAMES, DIM};
use crate::preprocess::TransformedVector;

fn bad(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data {
        stage: "io",
        message: format!("{}: {e}", path.display()),
    }
}

pub fn write_records(path: &Path, records: &[PriceChangeRecord<f64>]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| bad(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| bad(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<PriceChangeRecord<f64>>, PipelineError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| bad(path, e))
}

pub fn write_tprime(path: &Path, vectors: &[TransformedVector<f64>]) -> Result<(), PipelineError> {
    let file = std::fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| PipelineError::io(path, e);
    write!(w, "day,index").map_err(io)?;
    for name in COMPONENT_NAMES {
        write!(w, ",{name}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for v in vectors {
        write!(w, "{},{}", v.day, v.index).map_err(io)?;
        for x in v.values {
            write!(w, ",{x}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_tprime(path: &Path) -> Result<Vec<TransformedVector<f64>>, PipelineError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(path, e))?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| bad(path, e))?;
        if row.len() != DIM + 2 {
            return Err(bad(path, format!("expected {} columns, got {}", DIM + 2, row.len())));
        }
        let num = |i: usize| row[i].parse::<f64>().map_err(|e| bad(path, e));
        let mut values: Vec8<f64> = [0.0; DIM];
        for (j, v) in values.iter_mut().enumerate() {
            *v = num(j + 2)?;
        }
        out.push(TransformedVector {
            day: row[0].parse().map_err(|e| bad(path, e))?,
            index: row[1].parse().map_err(|e| bad(path, e))?,
            values,
        });
    }
    Ok(out)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| bad(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| bad(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}
