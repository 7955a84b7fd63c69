//! Text checkpoint format:
//!
//! ```text
//! #PERSONA-CHECKPOINT	v1
//! # <free-form metadata line, optional>
//! config	<ModelConfig as JSON>
//! tensor	<name>	<d0>x<d1>...	<space-separated row-major values>
//! ```
//!
//! Tensors appear in the order of [`ModelParams::named_tensors`]; every name
//! must be present exactly once.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};

const MAGIC: &str = "#PERSONA-CHECKPOINT\tv1";

pub fn write_checkpoint<T: Scalar, W: Write>(params: &ModelParams<T>, mut out: W, meta: Option<&str>) -> Result<()> {
    writeln!(out, "{MAGIC}")?;
    if let Some(m) = meta {
        writeln!(out, "# {}", m.replace('\n', " "))?;
    }
    writeln!(out, "config\t{}", serde_json::to_string(&params.config)?)?;
    for (name, t) in params.named_tensors() {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        write!(out, "tensor\t{name}\t{}\t", shape.join("x"))?;
        for (i, v) in t.data().iter().enumerate() {
            if i > 0 {
                out.write_all(b" ")?;
            }
            write!(out, "{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: BufRead>(input: R, path: &Path) -> Result<ModelParams<T>> {
    let mut config: Option<ModelConfig> = None;
    let mut tensors: BTreeMap<String, (usize, Vec<usize>, Vec<T>)> = BTreeMap::new();
    let mut saw_magic = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let ln = i + 1;
        if !saw_magic {
            if line != MAGIC {
                return Err(Error::format(path, ln, "not a checkpoint file"));
            }
            saw_magic = true;
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(4, '\t');
        match parts.next() {
            Some("config") => {
                let json = parts.next().ok_or_else(|| Error::format(path, ln, "missing config"))?;
                let c: ModelConfig =
                    serde_json::from_str(json).map_err(|e| Error::format(path, ln, e.to_string()))?;
                config = Some(c);
            }
            Some("tensor") => {
                let (Some(name), Some(shape), Some(values)) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(Error::format(path, ln, "tensor line needs name, shape and values"));
                };
                let shape: Vec<usize> = shape
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::format(path, ln, format!("bad shape `{shape}`")))?;
                let values: Vec<T> = values
                    .split_ascii_whitespace()
                    .map(|v| v.parse::<T>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::format(path, ln, "unparsable tensor value"))?;
                if tensors.insert(name.to_string(), (ln, shape, values)).is_some() {
                    return Err(Error::format(path, ln, format!("duplicate tensor `{name}`")));
                }
            }
            _ => return Err(Error::format(path, ln, "unknown record")),
        }
    }
    let config = config.ok_or_else(|| Error::format(path, 0, "checkpoint has no config line"))?;
    let mut params = ModelParams::<T>::zeros(&config)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let (ln, shape, values) = tensors
            .remove(name)
            .ok_or_else(|| Error::format(path, 0, format!("missing tensor `{name}`")))?;
        if shape != slot.shape() {
            return Err(Error::format(
                path,
                ln,
                format!("tensor `{name}` has shape {shape:?}, config implies {:?}", slot.shape()),
            ));
        }
        *slot = Tensor::from_vec(&shape, values).map_err(|e| Error::format(path, ln, e.to_string()))?;
    }
    if let Some((name, (ln, _, _))) = tensors.into_iter().next() {
        return Err(Error::format(path, ln, format!("unexpected tensor `{name}`")));
    }
    if !params.all_finite() {
        return Err(Error::NonFinite(format!("checkpoint {}", path.display())));
    }
    Ok(params)
}
