//! MetaImage (.mhd + .raw) volume reader/writer.
//!
//! Two files per volume: a text header of `Key = Value` lines and a raw
//! little-endian voxel buffer. Supports 8-bit unsigned and 16-bit signed
//! elements; round-trips are bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, UdetError};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ElementType {
    U8,
    I16,
}

impl ElementType {
    pub fn met_name(self) -> &'static str {
        match self {
            ElementType::U8 => "MET_UCHAR",
            ElementType::I16 => "MET_SHORT",
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            ElementType::U8 => 1,
            ElementType::I16 => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MhdData {
    U8(Vec<u8>),
    I16(Vec<i16>),
}

impl MhdData {
    pub fn len(&self) -> usize {
        match self {
            MhdData::U8(v) => v.len(),
            MhdData::I16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn element_type(&self) -> ElementType {
        match self {
            MhdData::U8(_) => ElementType::U8,
            MhdData::I16(_) => ElementType::I16,
        }
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            MhdData::U8(v) => v.clone(),
            MhdData::I16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MhdVolume {
    pub dims: (usize, usize, usize),
    pub spacing: [f64; 3],
    pub data: MhdData,
}

impl MhdVolume {
    pub fn new(dims: (usize, usize, usize), spacing: [f64; 3], data: MhdData) -> Result<Self> {
        let n = dims.0 * dims.1 * dims.2;
        if n == 0 {
            return Err(UdetError::InvalidArgument("volume dims must be >= 1".into()));
        }
        if data.len() != n {
            return Err(UdetError::Data(format!(
                "DimSize promises {n} voxels but buffer holds {}",
                data.len()
            )));
        }
        Ok(MhdVolume { dims, spacing, data })
    }

    /// First z-slice as f64 values in x-fastest order.
    pub fn slice_values(&self) -> Vec<f64> {
        let n = self.dims.0 * self.dims.1;
        match &self.data {
            MhdData::U8(v) => v[..n].iter().map(|&x| x as f64).collect(),
            MhdData::I16(v) => v[..n].iter().map(|&x| x as f64).collect(),
        }
    }
}

fn raw_path_for(header: &Path, element_data_file: &str) -> PathBuf {
    let p = Path::new(element_data_file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        header.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}

/// Parse a header + raw pair. Required keys: ObjectType, NDims, DimSize,
/// ElementType, ElementDataFile.
pub fn read_mhd(path: &Path) -> Result<MhdVolume> {
    let text = fs::read_to_string(path)?;
    let mut keys: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UdetError::Data(format!("malformed header line {line:?}")))?;
        keys.push((k.trim().to_string(), v.trim().to_string()));
    }
    let get = |key: &str| keys.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let require = |key: &str| {
        get(key).ok_or_else(|| UdetError::Data(format!("missing required header key {key}")))
    };

    let object_type = require("ObjectType")?;
    if object_type != "Image" {
        return Err(UdetError::Data(format!("unsupported ObjectType {object_type:?}")));
    }
    let ndims: usize = require("NDims")?
        .parse()
        .map_err(|_| UdetError::Data("bad NDims".into()))?;
    if !(2..=3).contains(&ndims) {
        return Err(UdetError::Data(format!("unsupported NDims {ndims}")));
    }
    let dim_size: Vec<usize> = require("DimSize")?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| UdetError::Data(format!("bad DimSize token {t:?}"))))
        .collect::<Result<_>>()?;
    if dim_size.len() != ndims {
        return Err(UdetError::Data(format!(
            "DimSize lists {} values for NDims {ndims}",
            dim_size.len()
        )));
    }
    let dims = (dim_size[0], dim_size[1], if ndims == 3 { dim_size[2] } else { 1 });

    let spacing = match get("ElementSpacing") {
        Some(v) => {
            let vals: Vec<f64> = v
                .split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| UdetError::Data(format!("bad ElementSpacing {t:?}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != ndims {
                return Err(UdetError::Data("ElementSpacing arity".into()));
            }
            [vals[0], vals[1], if ndims == 3 { vals[2] } else { 1.0 }]
        }
        None => [1.0, 1.0, 1.0],
    };

    for msb_key in ["ElementByteOrderMSB", "BinaryDataByteOrderMSB"] {
        if let Some(v) = get(msb_key) {
            if v.eq_ignore_ascii_case("true") {
                return Err(UdetError::Data("big-endian volumes are not supported".into()));
            }
        }
    }
    if let Some(v) = get("CompressedData") {
        if v.eq_ignore_ascii_case("true") {
            return Err(UdetError::Data("compressed volumes are not supported".into()));
        }
    }

    let element_type = require("ElementType")?;
    let et = match element_type {
        "MET_UCHAR" => ElementType::U8,
        "MET_SHORT" => ElementType::I16,
        other => return Err(UdetError::Data(format!("unsupported ElementType {other:?}"))),
    };

    let data_file = require("ElementDataFile")?;
    if data_file == "LOCAL" {
        return Err(UdetError::Data("inline (LOCAL) element data is not supported".into()));
    }
    let raw = fs::read(raw_path_for(path, data_file))?;
    let n = dims.0 * dims.1 * dims.2;
    if raw.len() != n * et.byte_size() {
        return Err(UdetError::Data(format!(
            "DimSize promises {} bytes but raw file holds {}",
            n * et.byte_size(),
            raw.len()
        )));
    }
    let data = match et {
        ElementType::U8 => MhdData::U8(raw),
        ElementType::I16 => MhdData::I16(
            raw.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect(),
        ),
    };
    MhdVolume::new(dims, spacing, data)
}

/// Write the header at `path` and the buffer next to it (same stem, .raw).
pub fn write_mhd(vol: &MhdVolume, path: &Path) -> Result<()> {
    let raw_name = path
        .with_extension("raw")
        .file_name()
        .ok_or_else(|| UdetError::InvalidArgument("bad output path".into()))?
        .to_string_lossy()
        .into_owned();
    let header = format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         DimSize = {} {} {}\n\
         ElementType = {}\n\
         ElementSpacing = {} {} {}\n\
         ElementByteOrderMSB = False\n\
         ElementDataFile = {}\n",
        vol.dims.0,
        vol.dims.1,
        vol.dims.2,
        vol.data.element_type().met_name(),
        vol.spacing[0],
        vol.spacing[1],
        vol.spacing[2],
        raw_name
    );
    fs::write(path, header)?;
    fs::write(path.with_extension("raw"), vol.data.to_le_bytes())?;
    Ok(())
}
