//! Read-only support for uncompressed single-file NIfTI-1 volumes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume3D};

const HEADER_SIZE: usize = 348;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn array<const N: usize>(&self, offset: usize) -> [u8; N] {
        self.bytes[offset..offset + N].try_into().expect("in bounds")
    }

    fn i16(&self, offset: usize) -> i16 {
        let b = self.array::<2>(offset);
        match self.endian {
            Endian::Little => i16::from_le_bytes(b),
            Endian::Big => i16::from_be_bytes(b),
        }
    }

    fn f32(&self, offset: usize) -> f32 {
        let b = self.array::<4>(offset);
        match self.endian {
            Endian::Little => f32::from_le_bytes(b),
            Endian::Big => f32::from_be_bytes(b),
        }
    }
}

fn datatype_name(code: i16) -> String {
    match code {
        1 => "binary".into(),
        8 => "int32".into(),
        64 => "float64".into(),
        128 => "rgb24".into(),
        256 => "int8".into(),
        512 => "uint16".into(),
        768 => "uint32".into(),
        other => format!("datatype code {other}"),
    }
}

/// Loads a 3D NIfTI-1 volume. Only `uint8`, `int16` and `float32` payloads are
/// accepted; gzip input and paired `.hdr`/`.img` files are rejected.
///
/// Spacing comes from `pixdim[1..=3]`, converted to millimeters from the
/// header's spatial unit. A non-trivial `scl_slope`/`scl_inter` is applied.
pub fn load_nifti(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

fn decode(path: &Path, bytes: &[u8]) -> Result<Volume3D> {
    if bytes.starts_with(&GZIP_MAGIC) {
        return Err(Error::Compressed(path.to_path_buf()));
    }
    if bytes.len() < HEADER_SIZE {
        return Err(Error::header(path, format!("file is {} bytes, shorter than a header", bytes.len())));
    }
    let size = [bytes[0], bytes[1], bytes[2], bytes[3]];
    let endian = if i32::from_le_bytes(size) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(size) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::header(path, "sizeof_hdr is not 348"));
    };
    let r = Reader { bytes, endian };

    let magic: [u8; 4] = r.array(344);
    if &magic == MAGIC_PAIR {
        return Err(Error::header(path, "paired .hdr/.img files are not supported"));
    }
    if &magic != MAGIC_SINGLE {
        return Err(Error::header(path, "bad magic, expected \"n+1\""));
    }

    let dim: Vec<i16> = (0..8).map(|i| r.i16(40 + 2 * i)).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::header(path, format!("dim[0] = {ndim} out of range")));
    }
    let ndim = ndim as usize;
    if dim[1..=ndim].iter().any(|&d| d < 1) {
        return Err(Error::header(path, format!("non-positive extent in dim {:?}", &dim[..=ndim])));
    }
    if ndim > 3 && dim[4..=ndim].iter().any(|&d| d > 1) {
        return Err(Error::UnsupportedDimensionality(format!(
            "{ndim}D volume with extents {:?}",
            &dim[1..=ndim]
        )));
    }
    let extent = |i: usize| if i <= ndim { dim[i] as usize } else { 1 };
    let dims = Dims::new(extent(1), extent(2), extent(3));

    let datatype = r.i16(70);
    let elem = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(Error::UnsupportedDtype(datatype_name(other))),
    };
    let bitpix = r.i16(72);
    if bitpix as usize != elem * 8 {
        return Err(Error::header(path, format!("bitpix {bitpix} disagrees with datatype {datatype}")));
    }

    let unit_scale = match bytes[123] & 0x07 {
        1 => 1000.0,
        3 => 0.001,
        _ => 1.0,
    };
    let mut spacing = [0.0f64; 3];
    for (axis, s) in spacing.iter_mut().enumerate() {
        let p = r.f32(80 + 4 * axis);
        if !p.is_finite() || p == 0.0 {
            return Err(Error::header(path, format!("pixdim[{}] = {p} is not a valid spacing", axis + 1)));
        }
        *s = f64::from(p.abs()) * unit_scale;
    }

    let vox_offset = r.f32(108);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 {
        return Err(Error::header(path, format!("vox_offset {vox_offset} is invalid")));
    }
    let offset = vox_offset as usize;
    let expected = dims.len() * elem;
    let available = bytes.len().saturating_sub(offset);
    if available < expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: available,
        });
    }
    let payload = &bytes[offset..offset + expected];

    let mut data: Vec<f32> = match datatype {
        DT_UINT8 => payload.iter().map(|&b| f32::from(b)).collect(),
        DT_INT16 => payload
            .chunks_exact(2)
            .map(|c| {
                let v = match endian {
                    Endian::Little => i16::from_le_bytes([c[0], c[1]]),
                    Endian::Big => i16::from_be_bytes([c[0], c[1]]),
                };
                f32::from(v)
            })
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                match endian {
                    Endian::Little => f32::from_le_bytes(b),
                    Endian::Big => f32::from_be_bytes(b),
                }
            })
            .collect(),
    };

    let slope = r.f32(112);
    let inter = r.f32(116);
    if slope.is_finite() && inter.is_finite() && slope != 0.0 && (slope != 1.0 || inter != 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    Volume3D::new(dims, spacing, data)
}
