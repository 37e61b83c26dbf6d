//! Volume persistence: the native SEGV1 container and read-only NIfTI-1 ingestion.

mod nifti;
mod segv;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub use nifti::{load_nifti1, load_nifti1_with_meta, NIFTI1_HEADER_SIZE};
pub use segv::{encode_segv, load_segv, save_segv, SEGV_HEADER_LEN, SEGV_MAGIC};

use crate::error::{Error, Result};
use crate::volume::{Dtype, Volume, VolumeKind};

/// A volume of whichever dtype was found on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    U8(Volume<u8>),
    I16(Volume<i16>),
    F32(Volume<f32>),
}

impl AnyVolume {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyVolume::U8(_) => Dtype::U8,
            AnyVolume::I16(_) => Dtype::I16,
            AnyVolume::F32(_) => Dtype::F32,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        match self {
            AnyVolume::U8(v) => v.dims(),
            AnyVolume::I16(v) => v.dims(),
            AnyVolume::F32(v) => v.dims(),
        }
    }

    /// Converts to a float intensity volume.
    pub fn into_f32(self) -> Volume<f32> {
        match self {
            AnyVolume::U8(v) => v.to_f32(),
            AnyVolume::I16(v) => v.to_f32(),
            AnyVolume::F32(v) => v,
        }
    }

    /// Interprets the payload as a {0,1,2} label volume.
    pub fn into_labels(self) -> Result<Volume<u8>> {
        match self {
            AnyVolume::U8(v) => {
                let dims = v.dims();
                let spacing = v.spacing();
                Volume::new(dims, spacing, v.into_data(), VolumeKind::Label)
            }
            AnyVolume::I16(v) => v.map(VolumeKind::Label, |x| x.clamp(0, 255) as u8),
            AnyVolume::F32(v) => v.map(VolumeKind::Label, |x| x.round().clamp(0.0, 255.0) as u8),
        }
    }
}

/// Metadata recorded alongside an ingested volume.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeMeta {
    pub source: PathBuf,
    pub dtype: Dtype,
    /// Orientation metadata was present but not applied.
    pub affine_ignored: bool,
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads a `.nii` file with the NIfTI-1 reader and anything else as SEGV1.
pub fn load_volume(path: impl AsRef<Path>) -> Result<AnyVolume> {
    let path = path.as_ref();
    let is_nifti = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("nii") || e.eq_ignore_ascii_case("gz"));
    if is_nifti {
        load_nifti1(path)
    } else {
        load_segv(path)
    }
}
