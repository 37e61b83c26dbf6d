//! Minimal reader for single-file, uncompressed NIfTI-1 (`.nii`) volumes.
//!
//! Only 3D uint8, int16 and float32 payloads are accepted. Orientation
//! (qform/sform) is read past but never applied.

use std::fs;
use std::path::Path;

use super::{AnyVolume, VolumeMeta};
use crate::error::{Error, Result};
use crate::volume::{Dtype, Spacing, Volume, VolumeKind, Voxel};

pub const NIFTI1_HEADER_SIZE: usize = 348;

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
    fn raw<const N: usize>(&self, offset: usize) -> [u8; N] {
        let mut b: [u8; N] = self.bytes[offset..offset + N].try_into().unwrap();
        if let Endian::Big = self.endian {
            b.reverse();
        }
        b
    }
    fn i16(&self, offset: usize) -> i16 {
        i16::from_le_bytes(self.raw(offset))
    }
    fn f32(&self, offset: usize) -> f32 {
        f32::from_le_bytes(self.raw(offset))
    }
}

pub fn load_nifti1(path: impl AsRef<Path>) -> Result<AnyVolume> {
    load_nifti1_with_meta(path).map(|(v, _)| v)
}

pub fn load_nifti1_with_meta(path: impl AsRef<Path>) -> Result<(AnyVolume, VolumeMeta)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (vol, dtype, affine_ignored) = decode_nifti1(&bytes)?;
    Ok((
        vol,
        VolumeMeta {
            source: path.to_path_buf(),
            dtype,
            affine_ignored,
        },
    ))
}

pub(crate) fn decode_nifti1(bytes: &[u8]) -> Result<(AnyVolume, Dtype, bool)> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        return Err(Error::Format(
            "gzip-compressed NIfTI is not supported; decompress externally first".into(),
        ));
    }
    if bytes.len() < NIFTI1_HEADER_SIZE {
        return Err(Error::Length {
            expected: NIFTI1_HEADER_SIZE,
            found: bytes.len(),
        });
    }
    let sizeof_hdr: [u8; 4] = bytes[0..4].try_into().unwrap();
    let endian = if i32::from_le_bytes(sizeof_hdr) == NIFTI1_HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(sizeof_hdr) == NIFTI1_HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::Format("sizeof_hdr is not 348".into()));
    };
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::Format("missing single-file NIfTI-1 magic \"n+1\"".into()));
    }
    let r = Reader { bytes, endian };

    let dim: Vec<i16> = (0..8).map(|i| r.i16(40 + 2 * i)).collect();
    let extra_axes_trivial = (4..=7).all(|i| i > dim[0] as usize || dim[i] <= 1);
    if !(dim[0] == 3 || (dim[0] > 3 && dim[0] <= 7 && extra_axes_trivial)) {
        return Err(Error::Dimension(format!("expected a 3D volume, dim = {dim:?}")));
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(Error::Dimension(format!("non-positive extent in dim = {dim:?}")));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];

    let datatype = r.i16(70);
    let dtype = match datatype {
        DT_UINT8 => Dtype::U8,
        DT_INT16 => Dtype::I16,
        DT_FLOAT32 => Dtype::F32,
        other => {
            return Err(Error::UnsupportedDtype(format!("NIfTI datatype {other}")));
        }
    };

    let pixdim: Vec<f32> = (0..4).map(|i| r.f32(76 + 4 * i)).collect();
    let spacing = Spacing::new(pixdim[1].abs() as f64, pixdim[2].abs() as f64, pixdim[3].abs() as f64)
        .map_err(|e| Error::Format(format!("bad pixdim: {e}")))?;

    let vox_offset = r.f32(108);
    let offset = if vox_offset >= NIFTI1_HEADER_SIZE as f32 {
        vox_offset as usize
    } else {
        NIFTI1_HEADER_SIZE
    };
    let scl_slope = r.f32(112);
    let scl_inter = r.f32(116);
    let qform_code = r.i16(252);
    let sform_code = r.i16(254);

    let n: usize = dims.iter().product();
    let expected = n * dtype.size();
    let available = bytes.len().saturating_sub(offset);
    if available < expected {
        return Err(Error::Length {
            expected,
            found: available,
        });
    }
    let payload = &bytes[offset..offset + expected];

    let scaled = scl_slope != 0.0 && scl_slope.is_finite() && !(scl_slope == 1.0 && scl_inter == 0.0);
    let vol = match dtype {
        Dtype::U8 => read_payload::<u8>(dims, spacing, payload, endian, scaled, scl_slope, scl_inter)?,
        Dtype::I16 => read_payload::<i16>(dims, spacing, payload, endian, scaled, scl_slope, scl_inter)?,
        Dtype::F32 => read_payload::<f32>(dims, spacing, payload, endian, scaled, scl_slope, scl_inter)?,
    };
    Ok((vol, dtype, qform_code > 0 || sform_code > 0))
}

fn read_payload<T: Voxel>(
    dims: [usize; 3],
    spacing: Spacing,
    payload: &[u8],
    endian: Endian,
    scaled: bool,
    slope: f32,
    inter: f32,
) -> Result<AnyVolume>
where
    AnyVolume: From<Volume<T>>,
{
    let size = T::DTYPE.size();
    let values: Vec<T> = payload
        .chunks_exact(size)
        .map(|chunk| {
            let mut b = [0u8; 4];
            b[..size].copy_from_slice(chunk);
            if let Endian::Big = endian {
                b[..size].reverse();
            }
            T::read_le(&b[..size])
        })
        .collect();
    if scaled {
        let data = values
            .into_iter()
            .map(|v| (slope as f64 * v.to_f64() + inter as f64) as f32)
            .collect();
        Ok(AnyVolume::F32(Volume::new(dims, spacing, data, VolumeKind::Intensity)?))
    } else {
        Ok(Volume::new(dims, spacing, values, VolumeKind::Intensity)?.into())
    }
}

impl From<Volume<u8>> for AnyVolume {
    fn from(v: Volume<u8>) -> Self {
        AnyVolume::U8(v)
    }
}

impl From<Volume<i16>> for AnyVolume {
    fn from(v: Volume<i16>) -> Self {
        AnyVolume::I16(v)
    }
}

impl From<Volume<f32>> for AnyVolume {
    fn from(v: Volume<f32>) -> Self {
        AnyVolume::F32(v)
    }
}
