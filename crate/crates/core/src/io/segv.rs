//! SEGV1: a little-endian container with a fixed 43-byte header.
//!
//! ```text
//! "SEGV1\0" | nx ny nz : u32 | sx sy sz : f64 | dtype : u8 | payload (x-fastest)
//! ```

use std::fs;
use std::path::Path;

use super::{write_atomic, AnyVolume};
use crate::error::{Error, Result};
use crate::volume::{Dtype, Spacing, Volume, VolumeKind, Voxel};

pub const SEGV_MAGIC: &[u8; 6] = b"SEGV1\0";
pub const SEGV_HEADER_LEN: usize = 6 + 12 + 24 + 1;

pub fn encode_segv<T: Voxel>(vol: &Volume<T>) -> Result<Vec<u8>> {
    let dims = vol.dims();
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Dimension(format!("cannot store empty dims {dims:?}")));
    }
    let mut out = Vec::with_capacity(SEGV_HEADER_LEN + vol.len() * T::DTYPE.size());
    out.extend_from_slice(SEGV_MAGIC);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Dimension(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for s in vol.spacing().as_array() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.push(T::DTYPE.segv_code());
    for &v in vol.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

pub fn save_segv<T: Voxel>(vol: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_segv(vol)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_segv(path: impl AsRef<Path>) -> Result<AnyVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_segv(&bytes)
}

pub(crate) fn decode_segv(bytes: &[u8]) -> Result<AnyVolume> {
    if bytes.len() < SEGV_MAGIC.len() || &bytes[..6] != SEGV_MAGIC {
        return Err(Error::Format("missing SEGV1 magic".into()));
    }
    if bytes.len() < SEGV_HEADER_LEN {
        return Err(Error::Length {
            expected: SEGV_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let dims = [u32_at(6), u32_at(10), u32_at(14)];
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Dimension(format!("stored dims {dims:?} contain zero")));
    }
    let spacing =
        Spacing::new(f64_at(18), f64_at(26), f64_at(34)).map_err(|e| Error::Format(format!("bad spacing: {e}")))?;
    let dtype = Dtype::from_segv_code(bytes[42])?;
    let payload = &bytes[SEGV_HEADER_LEN..];
    let n: usize = dims.iter().product();
    let expected = n * dtype.size();
    if payload.len() != expected {
        return Err(Error::Length {
            expected,
            found: payload.len(),
        });
    }
    Ok(match dtype {
        Dtype::U8 => AnyVolume::U8(decode_payload(dims, spacing, payload)?),
        Dtype::I16 => AnyVolume::I16(decode_payload(dims, spacing, payload)?),
        Dtype::F32 => AnyVolume::F32(decode_payload(dims, spacing, payload)?),
    })
}

fn decode_payload<T: Voxel>(dims: [usize; 3], spacing: Spacing, payload: &[u8]) -> Result<Volume<T>> {
    let data = payload.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
    Volume::new(dims, spacing, data, VolumeKind::Intensity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.segv");
        let v = Volume::<u8>::filled(
            [3, 3, 3],
            Spacing::new(0.7, 0.8, 2.5).unwrap(),
            0,
            VolumeKind::Intensity,
        )
        .unwrap();
        save_segv(&v, &path).unwrap();
        assert_eq!(load_segv(&path).unwrap(), AnyVolume::U8(v));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = b"XXXX".to_vec();
        bytes.extend_from_slice(&[0u8; 60]);
        assert!(matches!(decode_segv(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn int16_ramp_indexing() {
        let v = Volume::<i16>::new(
            [4, 4, 2],
            Spacing::isotropic(),
            (0..32).collect(),
            VolumeKind::Intensity,
        )
        .unwrap();
        let back = match decode_segv(&encode_segv(&v).unwrap()).unwrap() {
            AnyVolume::I16(v) => v,
            other => panic!("wrong dtype {:?}", other.dtype()),
        };
        assert_eq!(back.get(1, 0, 0), 1);
        assert_eq!(back.get(0, 1, 0), 4);
        assert_eq!(back.get(0, 0, 1), 16);
    }

    #[test]
    fn empty_dims_rejected() {
        let v = Volume::<u8>::from_parts([0, 2, 2], Spacing::isotropic(), vec![], VolumeKind::Label);
        assert!(matches!(encode_segv(&v), Err(Error::Dimension(_))));
    }

    #[test]
    fn single_float_file_length() {
        let v = Volume::<f32>::new([1, 1, 1], Spacing::isotropic(), vec![2.5], VolumeKind::Intensity).unwrap();
        let bytes = encode_segv(&v).unwrap();
        assert_eq!(bytes.len(), 6 + 12 + 24 + 1 + 4);
        assert_eq!(&bytes[43..], &2.5f32.to_le_bytes());
    }

    #[test]
    fn truncated_payload_is_length_error() {
        let v = Volume::<f32>::new([2, 1, 1], Spacing::isotropic(), vec![1.0, 2.0], VolumeKind::Intensity).unwrap();
        let bytes = encode_segv(&v).unwrap();
        assert!(matches!(
            decode_segv(&bytes[..bytes.len() - 1]),
            Err(Error::Length { expected: 8, found: 7 })
        ));
    }

    #[test]
    fn unknown_dtype_rejected() {
        let v = Volume::<u8>::new([1, 1, 1], Spacing::isotropic(), vec![1], VolumeKind::Label).unwrap();
        let mut bytes = encode_segv(&v).unwrap();
        bytes[42] = 9;
        assert!(matches!(decode_segv(&bytes), Err(Error::UnsupportedDtype(_))));
    }

    proptest! {
        #[test]
        fn float_volumes_round_trip_bitwise(
            dims in (1usize..5, 1usize..5, 1usize..5),
            spacing in (0.1f64..5.0, 0.1f64..5.0, 0.1f64..5.0),
            seed in any::<u32>(),
        ) {
            let n = dims.0 * dims.1 * dims.2;
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(i as u32 * 97)) )
                .map(|v| if v.is_nan() { 0.0 } else { v })
                .collect();
            let v = Volume::new([dims.0, dims.1, dims.2], Spacing::new(spacing.0, spacing.1, spacing.2).unwrap(),
                                data, VolumeKind::Intensity).unwrap();
            let back = decode_segv(&encode_segv(&v).unwrap()).unwrap();
            match back {
                AnyVolume::F32(b) => {
                    prop_assert_eq!(b.dims(), v.dims());
                    prop_assert_eq!(b.spacing(), v.spacing());
                    let bits_a: Vec<u32> = b.data().iter().map(|x| x.to_bits()).collect();
                    let bits_b: Vec<u32> = v.data().iter().map(|x| x.to_bits()).collect();
                    prop_assert_eq!(bits_a, bits_b);
                }
                _ => prop_assert!(false),
            }
        }
    }
}
