//! Model checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   b"PBCKPT\0\0"
//! version    u32       currently 1
//! header_len u64       byte length of the JSON header
//! header     JSON      CheckpointHeader
//! data       f64 LE    each parameter's values, in header order, row-major
//! ```
//!
//! The header carries the model spec, the seeds that produced the weights,
//! an optional free-form config echo and every parameter's name and shape.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelEntry;
use crate::error::{Error, Result};
use crate::harness::SplitSpec;
use crate::modelzoo::{build, Model, ModelSpec};
use crate::ndnum::Tensor;
use crate::synthgen::GenSpec;

pub const MAGIC: &[u8; 8] = b"PBCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: ModelSpec,
    pub init_seed: u64,
    pub train_seed: u64,
    #[serde(default)]
    pub config_echo: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

/// Seeds and echo recorded alongside the weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointInfo {
    pub init_seed: u64,
    pub train_seed: u64,
    pub config_echo: serde_json::Value,
}

/// Echo written by the training entry points, enough to rebuild the split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingEcho {
    pub model: ModelEntry,
    pub split: SplitSpec,
    pub gen: GenSpec,
}

impl TrainingEcho {
    pub fn info(&self) -> CheckpointInfo {
        CheckpointInfo {
            init_seed: self.model.init_seed,
            train_seed: self.model.train.seed,
            config_echo: serde_json::to_value(self).expect("echo serializes"),
        }
    }

    pub fn from_info(info: &CheckpointInfo) -> Result<Self> {
        serde_json::from_value(info.config_echo.clone())
            .map_err(|e| Error::Checkpoint(format!("checkpoint lacks a training echo: {e}")))
    }
}

pub fn write_checkpoint<W: Write>(model: &Model, info: &CheckpointInfo, out: &mut W) -> std::io::Result<()> {
    let header = CheckpointHeader {
        spec: model.spec().clone(),
        init_seed: info.init_seed,
        train_seed: info.train_seed,
        config_echo: info.config_echo.clone(),
        params: model
            .params()
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for p in model.params().iter() {
        for v in p.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated {what}: {e}")))
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<(Model, CheckpointInfo)> {
    let mut magic = [0u8; 8];
    read_exact(input, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    read_exact(input, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    read_exact(input, &mut len, "header length")?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    read_exact(input, &mut json, "header")?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    let mut model = build(&header.spec, header.init_seed)?;
    if header.params.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "{} parameters stored, spec needs {}",
            header.params.len(),
            model.params().len()
        )));
    }
    let mut values = Vec::with_capacity(header.params.len());
    let mut buf = [0u8; 8];
    for entry in &header.params {
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            read_exact(input, &mut buf, &entry.name)?;
            data.push(f64::from_le_bytes(buf));
        }
        values.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?));
    }
    if input.read(&mut buf).map_err(|e| Error::Checkpoint(e.to_string()))? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameter data".into()));
    }
    model.load_values(values)?;
    Ok((
        model,
        CheckpointInfo {
            init_seed: header.init_seed,
            train_seed: header.train_seed,
            config_echo: header.config_echo,
        },
    ))
}

pub fn save(model: &Model, info: &CheckpointInfo, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_checkpoint(model, info, &mut out).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model, CheckpointInfo)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trained_looking(spec: &ModelSpec) -> Model {
        let mut m = build(spec, 3).unwrap();
        // move every value away from its init so a restore is observable
        for (i, p) in m.params_mut().iter_mut().enumerate() {
            for (j, v) in p.value.data_mut().iter_mut().enumerate() {
                *v += 0.001 * (i * 31 + j) as f64;
            }
        }
        m
    }

    #[test]
    fn round_trip_is_exact() {
        for spec in [
            ModelSpec::wide(4, 2),
            ModelSpec::deep(4, 4, 2).with_hidden(&[6, 5]),
            ModelSpec::wide_deep(4, 2).with_hidden(&[6]),
        ] {
            let m = trained_looking(&spec);
            let info = CheckpointInfo {
                init_seed: 3,
                train_seed: 8,
                config_echo: serde_json::json!({"note": "x"}),
            };
            let mut bytes = Vec::new();
            write_checkpoint(&m, &info, &mut bytes).unwrap();
            let (back, back_info) = read_checkpoint(&mut bytes.as_slice()).unwrap();
            assert_eq!(back, m);
            assert_eq!(back_info, info);
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let m = trained_looking(&ModelSpec::wide(2, 2));
        let mut bytes = Vec::new();
        write_checkpoint(&m, &CheckpointInfo::default(), &mut bytes).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(Error::Checkpoint(_))));

        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(read_checkpoint(&mut &short[..]), Err(Error::Checkpoint(_))));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(read_checkpoint(&mut long.as_slice()), Err(Error::Checkpoint(_))));

        let mut wrong_version = bytes;
        wrong_version[8] = 9;
        assert!(read_checkpoint(&mut wrong_version.as_slice()).is_err());
    }
}
