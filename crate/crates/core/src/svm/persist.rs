//! Versioned text model format:
//!
//! ```text
//! platehog-model v1 length=7488 norm=l1 cell=4 block=2 block_stride=1 bins=9 epsilon=0.001 window=108x36 pad=9x3
//! <weight 0>
//! ...
//! <weight length-1>
//! <bias>
//! <threshold>
//! ```
//!
//! Numbers use Rust's shortest round-trip formatting, so load(save(m)) == m
//! bit for bit (including `inf` thresholds).

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::LinearModel;
use crate::detector::Padding;
use crate::error::{Error, Result};
use crate::hog::{descriptor_length, BlockNorm, HogConfig};
use crate::imaging::WindowSize;

pub const MODEL_MAGIC: &str = "platehog-model";
const VERSION: &str = "v1";

/// A model together with the feature geometry it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: LinearModel,
    pub hog: HogConfig,
    pub window: WindowSize,
    pub pad: Padding,
}

pub fn write_model<W: Write>(mut out: W, file: &ModelFile) -> Result<()> {
    let io = |e| Error::io("<model>", e);
    let h = &file.hog;
    writeln!(
        out,
        "{MODEL_MAGIC} {VERSION} length={} norm={} cell={} block={} block_stride={} bins={} epsilon={} window={}x{} pad={}x{}",
        file.model.weights.len(),
        h.norm,
        h.cell_size,
        h.block_size,
        h.block_stride,
        h.num_bins,
        h.epsilon,
        file.window.width,
        file.window.height,
        file.pad.x,
        file.pad.y
    )
    .map_err(io)?;
    for w in &file.model.weights {
        writeln!(out, "{w}").map_err(io)?;
    }
    writeln!(out, "{}", file.model.bias).map_err(io)?;
    writeln!(out, "{}", file.model.threshold).map_err(io)?;
    out.flush().map_err(io)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

fn parse_pair<T: std::str::FromStr>(s: &str, key: &str) -> Result<(T, T)> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| bad(format!("{key} must look like AxB, got {s:?}")))?;
    let p = |v: &str| v.parse::<T>().map_err(|_| bad(format!("bad {key} component {v:?}")));
    Ok((p(a)?, p(b)?))
}

pub fn read_model<R: Read>(input: R) -> Result<ModelFile> {
    let mut lines = BufReader::new(input).lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| bad(format!("truncated before {what}")))?
            .map_err(|e| Error::io("<model>", e))
    };
    let header = next("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MODEL_MAGIC) {
        return Err(bad("not a platehog model file"));
    }
    match parts.next() {
        Some(VERSION) => {}
        other => return Err(bad(format!("unsupported version {other:?}"))),
    }
    let fields: HashMap<&str, &str> = parts
        .map(|kv| kv.split_once('=').ok_or_else(|| bad(format!("malformed header field {kv:?}"))))
        .collect::<Result<_>>()?;
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("header lacks {k}")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };

    let hog = HogConfig {
        cell_size: num("cell")?,
        block_size: num("block")?,
        block_stride: num("block_stride")?,
        num_bins: num("bins")?,
        norm: get("norm")?.parse::<BlockNorm>().map_err(|e| bad(e.to_string()))?,
        epsilon: get("epsilon")?.parse().map_err(|_| bad("bad epsilon"))?,
    };
    let (ww, wh) = parse_pair::<usize>(get("window")?, "window")?;
    let (px, py) = parse_pair::<i32>(get("pad")?, "pad")?;
    let window = WindowSize::new(ww, wh);
    let length = num("length")?;
    let expected = descriptor_length(window, &hog).map_err(|e| bad(e.to_string()))?;
    if expected != length {
        return Err(bad(format!(
            "header length {length} disagrees with the {expected} features of its own geometry"
        )));
    }

    let mut value = |what: &str| -> Result<f64> {
        let line = next(what)?;
        line.trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("bad {what} value {line:?}")))
    };
    let weights = (0..length).map(|i| value(&format!("weight {i}"))).collect::<Result<Vec<_>>>()?;
    let bias = value("bias")?;
    let threshold = value("threshold")?;
    Ok(ModelFile {
        model: LinearModel {
            weights,
            bias,
            threshold,
        },
        hog,
        window,
        pad: Padding::new(px, py),
    })
}

pub fn save_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(std::io::BufWriter::new(f), file)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(f)
}
