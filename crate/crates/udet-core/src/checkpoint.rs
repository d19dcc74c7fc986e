//! Model checkpoints: a text manifest (build info, tensor name/shape/offset)
//! followed by the raw little-endian f32 buffers. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, UdetError};
use crate::model::{UdetModel, VariantSpec, WidthScale};
use crate::params::ParamRegistry;
use crate::tensor::Shape4;

const MAGIC: &str = "UDET-CKPT 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub variant: VariantSpec,
    pub input_size: usize,
    pub width_scale: WidthScale,
}

/// Write every registry slot (weights, biases, norm statistics, fusion
/// weights) under its registered name.
pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, reg: &ParamRegistry<f32>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "{MAGIC}")?;
    writeln!(f, "use_mish={}", meta.variant.use_mish)?;
    writeln!(f, "use_bifpn={}", meta.variant.use_bifpn)?;
    writeln!(f, "use_expansion={}", meta.variant.use_expansion_path)?;
    writeln!(f, "input_size={}", meta.input_size)?;
    writeln!(f, "width_scale={}", meta.width_scale)?;
    writeln!(f, "tensor_count={}", reg.len())?;
    let mut offset = 0usize;
    for (_, slot) in reg.iter() {
        let s = slot.value.shape();
        writeln!(f, "{} {} {} {} {} {}", slot.name, s.n, s.c, s.h, s.w, offset)?;
        offset += slot.value.numel() * 4;
    }
    writeln!(f, "DATA")?;
    for (_, slot) in reg.iter() {
        for &v in slot.value.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub struct LoadedTensor {
    pub name: String,
    pub shape: Shape4,
    pub data: Vec<f32>,
}

fn next_line(reader: &mut BufReader<File>) -> Result<String> {
    let mut line = String::new();
    let n = reader.read_line(&mut line)?;
    if n == 0 {
        return Err(UdetError::Data("checkpoint truncated".into()));
    }
    Ok(line.trim_end_matches('\n').to_string())
}

fn expect_kv(reader: &mut BufReader<File>, key: &str) -> Result<String> {
    let l = next_line(reader)?;
    let (k, v) = l
        .split_once('=')
        .ok_or_else(|| UdetError::Data(format!("bad checkpoint header line {l:?}")))?;
    if k != key {
        return Err(UdetError::Data(format!("expected key {key}, found {k}")));
    }
    Ok(v.to_string())
}

fn parse_bool(v: String) -> Result<bool> {
    v.parse::<bool>().map_err(|_| UdetError::Data(format!("bad boolean {v:?}")))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, Vec<LoadedTensor>)> {
    let mut reader = BufReader::new(File::open(path)?);

    if next_line(&mut reader)? != MAGIC {
        return Err(UdetError::Data("not a checkpoint file".into()));
    }
    let use_mish = parse_bool(expect_kv(&mut reader, "use_mish")?)?;
    let use_bifpn = parse_bool(expect_kv(&mut reader, "use_bifpn")?)?;
    let use_expansion = parse_bool(expect_kv(&mut reader, "use_expansion")?)?;
    let input_size: usize = expect_kv(&mut reader, "input_size")?
        .parse()
        .map_err(|_| UdetError::Data("bad input_size".into()))?;
    let width_scale: WidthScale = expect_kv(&mut reader, "width_scale")?.parse()?;
    let tensor_count: usize = expect_kv(&mut reader, "tensor_count")?
        .parse()
        .map_err(|_| UdetError::Data("bad tensor_count".into()))?;

    let mut manifest = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let l = next_line(&mut reader)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 6 {
            return Err(UdetError::Data(format!("bad manifest line {l:?}")));
        }
        let dims: Vec<usize> = parts[1..6]
            .iter()
            .map(|p| p.parse().map_err(|_| UdetError::Data(format!("bad manifest number {p:?}"))))
            .collect::<Result<_>>()?;
        manifest.push((parts[0].to_string(), Shape4::new(dims[0], dims[1], dims[2], dims[3]), dims[4]));
    }
    if next_line(&mut reader)? != "DATA" {
        return Err(UdetError::Data("missing DATA marker".into()));
    }

    let mut raw = Vec::new();
    reader.read_to_end(&mut raw)?;

    let mut tensors = Vec::with_capacity(tensor_count);
    for (name, shape, offset) in manifest {
        let bytes = shape.numel() * 4;
        if offset + bytes > raw.len() {
            return Err(UdetError::Data(format!(
                "tensor {name} extends past the data section ({} of {} bytes)",
                offset + bytes,
                raw.len()
            )));
        }
        let data: Vec<f32> = raw[offset..offset + bytes]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(LoadedTensor { name, shape, data });
    }

    let meta = CheckpointMeta {
        variant: VariantSpec { use_mish, use_bifpn, use_expansion_path: use_expansion },
        input_size,
        width_scale,
    };
    Ok((meta, tensors))
}

/// Rebuild the model described by a checkpoint and restore every tensor.
pub fn restore_model(path: &Path) -> Result<(UdetModel, ParamRegistry<f32>)> {
    let (meta, tensors) = load_checkpoint(path)?;
    let (model, mut reg) =
        UdetModel::build::<f32>(meta.variant, meta.input_size, meta.width_scale)?;
    if tensors.len() != reg.len() {
        return Err(UdetError::Data(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            reg.len()
        )));
    }
    for t in tensors {
        let id = reg
            .lookup(&t.name)
            .ok_or_else(|| UdetError::Data(format!("unknown parameter {}", t.name)))?;
        let value = reg.value_mut(id);
        if value.shape() != t.shape {
            return Err(UdetError::shape(
                "restore_model",
                format!("{}: {} vs {}", t.name, t.shape, value.shape()),
            ));
        }
        value.data_mut().copy_from_slice(&t.data);
    }
    Ok((model, reg))
}
