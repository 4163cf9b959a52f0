//! MVOL: a JSON header (`<name>.mvol.json`) next to a raw little-endian
//! payload (`<name>.mvol.raw`) in x-fastest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Dims, ProbabilityVolume, Spacing, Volume3D};

pub const HEADER_SUFFIX: &str = ".mvol.json";
pub const RAW_SUFFIX: &str = ".mvol.raw";
const ORDER: &str = "x-fastest";
const ENDIANNESS: &str = "little";

/// On-disk scalar type of an MVOL payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::U8 => "u8",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "u8" => Ok(Dtype::U8),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
    order: String,
    endianness: String,
}

/// Header and payload locations for one volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MvolPaths {
    pub header: PathBuf,
    pub raw: PathBuf,
}

impl MvolPaths {
    /// Accepts the header path, the payload path, or the bare stem.
    pub fn new(path: impl AsRef<Path>) -> Self {
        let s = path.as_ref().to_string_lossy();
        let stem = s
            .strip_suffix(HEADER_SUFFIX)
            .or_else(|| s.strip_suffix(RAW_SUFFIX))
            .unwrap_or(&s)
            .to_string();
        MvolPaths {
            header: PathBuf::from(format!("{stem}{HEADER_SUFFIX}")),
            raw: PathBuf::from(format!("{stem}{RAW_SUFFIX}")),
        }
    }
}

fn read_checked_header(paths: &MvolPaths) -> Result<(Dims, Spacing, Dtype)> {
    let text = fs::read_to_string(&paths.header).map_err(|e| Error::io(&paths.header, e))?;
    let header: Header =
        serde_json::from_str(&text).map_err(|e| Error::header(&paths.header, e.to_string()))?;
    if header.order != ORDER {
        return Err(Error::header(&paths.header, format!("unsupported order {:?}", header.order)));
    }
    if header.endianness != ENDIANNESS {
        return Err(Error::header(
            &paths.header,
            format!("unsupported endianness {:?}", header.endianness),
        ));
    }
    let dtype = Dtype::parse(&header.dtype)?;
    let dims = Dims::from_array(header.dims);
    if dims.is_empty() {
        return Err(Error::header(&paths.header, format!("dims must be positive, got {dims}")));
    }
    if header.spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::header(
            &paths.header,
            format!("spacing must be positive, got {:?}", header.spacing_mm),
        ));
    }
    Ok((dims, header.spacing_mm, dtype))
}

/// Grid of an MVOL volume, read from its header alone.
pub fn read_header(path: impl AsRef<Path>) -> Result<(Dims, Spacing)> {
    let (dims, spacing, _) = read_checked_header(&MvolPaths::new(path))?;
    Ok((dims, spacing))
}

/// Reads an MVOL volume as `f32`, widening `u8` payloads.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let paths = MvolPaths::new(path);
    let (dims, spacing, dtype) = read_checked_header(&paths)?;
    let expected = dims
        .checked_len()
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or_else(|| Error::header(&paths.header, format!("dims {dims} overflow")))?;

    // Compare sizes before reading so a corrupt header cannot trigger a huge allocation.
    let actual = fs::metadata(&paths.raw).map_err(|e| Error::io(&paths.raw, e))?.len();
    if actual != expected as u64 {
        return Err(Error::SizeMismatch {
            expected,
            actual: actual as usize,
        });
    }
    let bytes = fs::read(&paths.raw).map_err(|e| Error::io(&paths.raw, e))?;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let data: Vec<f32> = match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::U8 => bytes.iter().map(|&b| f32::from(b)).collect(),
    };
    Volume3D::new(dims, spacing, data)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    BinaryMask::from_volume(load_volume(path)?)
}

pub fn load_probability(path: impl AsRef<Path>) -> Result<ProbabilityVolume> {
    ProbabilityVolume::new(load_volume(path)?)
}

/// Writes `vol` as `f32`.
pub fn save_volume(vol: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    save_volume_as(vol, path, Dtype::F32)
}

/// Writes a mask with a one-byte payload.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_volume_as(mask.as_volume(), path, Dtype::U8)
}

pub fn save_volume_as(vol: &Volume3D, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let paths = MvolPaths::new(path);
    let payload: Vec<u8> = match dtype {
        Dtype::F32 => vol.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
        Dtype::U8 => {
            if let Some(i) = vol
                .data()
                .iter()
                .position(|&v| v.fract() != 0.0 || !(0.0..=255.0).contains(&v))
            {
                return Err(Error::InvalidArgument(format!(
                    "voxel {i} ({}) is not representable as u8",
                    vol.data()[i]
                )));
            }
            vol.data().iter().map(|&v| v as u8).collect()
        }
    };
    let header = Header {
        dims: vol.dims().to_array(),
        spacing_mm: vol.spacing(),
        dtype: dtype.as_str().to_string(),
        order: ORDER.to_string(),
        endianness: ENDIANNESS.to_string(),
    };
    let mut text = serde_json::to_string_pretty(&header).expect("header serializes");
    text.push('\n');
    if let Some(dir) = paths.header.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&paths.raw, payload).map_err(|e| Error::io(&paths.raw, e))?;
    fs::write(&paths.header, text).map_err(|e| Error::io(&paths.header, e))?;
    Ok(())
}
