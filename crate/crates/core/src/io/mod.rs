//! Binary containers for weights and datasets, plus CSV helpers.
//!
//! A container is one line of JSON (the header, ending in `\n`) followed by
//! the matrices listed in the header's `blocks` field, each row-major
//! little-endian f64.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::datagen::{Dataset, LabelMode, Labels};
use crate::error::{Error, Result};
use crate::netcore::{ArchSpec, NetworkParams};

pub const CHECKPOINT_FORMAT: &str = "opl1";
pub const DATASET_FORMAT: &str = "opl1-dataset";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub rows: usize,
    pub cols: usize,
}

/// Writes `header` (with a `blocks` entry added) and then the matrices.
pub fn write_blocks<W: Write>(mut out: W, mut header: Value, blocks: &[ArrayView2<f64>]) -> std::io::Result<()> {
    let shapes: Vec<BlockShape> = blocks
        .iter()
        .map(|b| BlockShape {
            rows: b.nrows(),
            cols: b.ncols(),
        })
        .collect();
    header["blocks"] = serde_json::to_value(shapes).expect("shapes serialize");
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for b in blocks {
        let mut buf = Vec::with_capacity(b.len() * 8);
        for v in b.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()
}

pub fn read_blocks<R: BufRead>(mut input: R) -> Result<(Value, Vec<Array2<f64>>)> {
    let mut line = Vec::new();
    input
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::Format(format!("reading header: {e}")))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("header is not newline terminated".into()));
    }
    let header: Value = serde_json::from_slice(&line[..line.len() - 1])?;
    let shapes: Vec<BlockShape> = serde_json::from_value(
        header
            .get("blocks")
            .cloned()
            .ok_or_else(|| Error::Format("header lacks a blocks entry".into()))?,
    )?;
    let mut blocks = Vec::with_capacity(shapes.len());
    for (k, s) in shapes.iter().enumerate() {
        let mut bytes = vec![0u8; s.rows * s.cols * 8];
        input
            .read_exact(&mut bytes)
            .map_err(|_| Error::Format(format!("block {k} ({}x{}) is truncated", s.rows, s.cols)))?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blocks.push(Array2::from_shape_vec((s.rows, s.cols), data).expect("shape matches length"));
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after the last block".into()));
    }
    Ok((header, blocks))
}

fn check_format(header: &Value, expected: &str) -> Result<()> {
    match header.get("format").and_then(Value::as_str) {
        Some(f) if f == expected => Ok(()),
        Some(f) => Err(Error::Format(format!("format {f:?}, expected {expected:?}"))),
        None => Err(Error::Format("header lacks a format entry".into())),
    }
}

/// Order: `A, W_1..W_L, B`, then conv biases as `1 × dim` rows.
pub fn write_checkpoint<W: Write>(out: W, params: &NetworkParams) -> std::io::Result<()> {
    let header = json!({
        "format": CHECKPOINT_FORMAT,
        "arch": params.arch(),
        "seed": params.seed(),
        "bias_blocks": params.biases().len(),
    });
    let bias_rows: Vec<ArrayView2<f64>> = params
        .biases()
        .iter()
        .map(|b| b.view().insert_axis(ndarray::Axis(0)))
        .collect();
    let mut blocks: Vec<ArrayView2<f64>> = params.weights().iter().map(|w| w.view()).collect();
    blocks.push(params.output_matrix().view());
    blocks.extend(bias_rows);
    write_blocks(out, header, &blocks)
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<NetworkParams> {
    let (header, mut blocks) = read_blocks(input)?;
    check_format(&header, CHECKPOINT_FORMAT)?;
    let arch: ArchSpec = serde_json::from_value(header["arch"].clone())?;
    let seed = header["seed"]
        .as_u64()
        .ok_or_else(|| Error::Format("seed missing".into()))?;
    let n_bias = header["bias_blocks"].as_u64().unwrap_or(0) as usize;
    let expected = arch.depth + 2 + n_bias;
    if blocks.len() != expected {
        return Err(Error::Format(format!("{} blocks, expected {expected}", blocks.len())));
    }
    let bias: Vec<Array1<f64>> = blocks
        .split_off(arch.depth + 2)
        .into_iter()
        .map(|b| b.row(0).to_owned())
        .collect();
    let output = blocks.pop().expect("output block");
    NetworkParams::from_parts(arch, seed, blocks, output, bias)
}

pub fn save_checkpoint(path: &Path, params: &NetworkParams) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(f), params).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}

/// Header plus `X` (`n × input_dim`) then `Y` (`n × d`, or `n × 1` class indices).
pub fn write_dataset<W: Write>(out: W, ds: &Dataset) -> std::io::Result<()> {
    let delta = if ds.certified_delta.is_finite() {
        json!(ds.certified_delta)
    } else {
        Value::Null
    };
    let header = json!({
        "format": DATASET_FORMAT,
        "n": ds.len(),
        "input_dim": ds.input_dim(),
        "output_dim": ds.output_dim(),
        "certified_delta": delta,
        "label_mode": ds.label_mode(),
        "seed": ds.seed,
    });
    let y = match &ds.labels {
        Labels::Regression(y) => y.clone(),
        Labels::Classes { classes, .. } => {
            Array2::from_shape_fn((classes.len(), 1), |(i, _)| classes[i] as f64)
        }
    };
    write_blocks(out, header, &[ds.inputs.view(), y.view()])
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset> {
    let (header, blocks) = read_blocks(input)?;
    check_format(&header, DATASET_FORMAT)?;
    let [x, y]: [Array2<f64>; 2] = blocks
        .try_into()
        .map_err(|_| Error::Format("dataset needs exactly two blocks".into()))?;
    let mode: LabelMode = serde_json::from_value(header["label_mode"].clone())?;
    let seed = header["seed"].as_u64().unwrap_or(0);
    let labels = match mode {
        LabelMode::Regression { .. } => Labels::Regression(y),
        LabelMode::Classification { classes } => Labels::Classes {
            classes: y.column(0).iter().map(|v| *v as usize).collect(),
            num_classes: classes,
        },
    };
    Dataset::new(x, labels, seed)
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(BufWriter::new(f), ds).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(f))
}

/// Writes a CSV file with a header row; every record must match the header width.
pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|s| s.as_ref()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shortest round-tripping decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}
