//! Voxel grids with physical spacing.
//!
//! Data is stored flat in x-fastest order: the voxel `(x, y, z)` lives at
//! `x + nx * y + nx * ny * z`. A single axial slice `z = k` is therefore a
//! contiguous `ny × nx` row-major plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Millimeters per voxel along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl Spacing {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        for (axis, v) in [("x", sx), ("y", sy), ("z", sz)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!(
                    "spacing along {axis} must be positive, got {v}"
                )));
            }
        }
        Ok(Spacing { sx, sy, sz })
    }

    pub fn isotropic() -> Self {
        Spacing {
            sx: 1.0,
            sy: 1.0,
            sz: 1.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing::isotropic()
    }
}

/// Dimensions `(nx, ny, nz)`.
pub type Dims = [usize; 3];

/// What the values of a volume mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolumeKind {
    Intensity,
    Label,
    Probability,
}

/// Storage dtype codes shared by the SEGV1 and NIfTI readers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    I16,
    F32,
}

impl Dtype {
    pub fn segv_code(self) -> u8 {
        match self {
            Dtype::U8 => 0,
            Dtype::I16 => 1,
            Dtype::F32 => 2,
        }
    }

    pub fn from_segv_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::U8),
            1 => Ok(Dtype::I16),
            2 => Ok(Dtype::F32),
            other => Err(Error::UnsupportedDtype(format!("SEGV dtype code {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::I16 => 2,
            Dtype::F32 => 4,
        }
    }
}

/// Element types a volume can be persisted with.
pub trait Voxel: Copy + PartialEq + Default + std::fmt::Debug + Send + Sync + 'static {
    const DTYPE: Dtype;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Voxel for u8 {
    const DTYPE: Dtype = Dtype::U8;
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v.round().clamp(0.0, u8::MAX as f64) as u8
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl Voxel for i16 {
    const DTYPE: Dtype = Dtype::I16;
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        i16::from_le_bytes([bytes[0], bytes[1]])
    }
}

impl Voxel for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

/// Label values.
pub const BACKGROUND: u8 = 0;
pub const LIVER: u8 = 1;
pub const LESION: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    spacing: Spacing,
    data: Vec<T>,
    kind: VolumeKind,
}

pub type LabelVolume = Volume<u8>;

impl<T: Copy> Volume<T> {
    /// Constructor for internal transforms that already preserve the invariants.
    pub(crate) fn from_parts(dims: Dims, spacing: Spacing, data: Vec<T>, kind: VolumeKind) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Volume {
            dims,
            spacing,
            data,
            kind,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    /// Axial slice `z = k` as a row-major `ny × nx` plane.
    pub fn slice(&self, k: usize) -> &[T] {
        let plane = self.dims[0] * self.dims[1];
        &self.data[k * plane..(k + 1) * plane]
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Self {
        self.spacing = spacing;
        self
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

impl<T: Voxel> Volume<T> {
    /// Builds a volume, checking the length and the value domain of `kind`.
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<T>, kind: VolumeKind) -> Result<Self> {
        let expected = dims.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                expected
            )));
        }
        match kind {
            VolumeKind::Label => {
                if let Some(bad) = data.iter().find(|v| {
                    let f = v.to_f64();
                    !(f == 0.0 || f == 1.0 || f == 2.0)
                }) {
                    return Err(Error::Label(bad.to_f64() as u32));
                }
            }
            VolumeKind::Probability => {
                if data.iter().any(|v| !(0.0..=1.0).contains(&v.to_f64())) {
                    return Err(Error::Parameter(
                        "probability volume holds values outside [0, 1]".into(),
                    ));
                }
            }
            VolumeKind::Intensity => {}
        }
        Ok(Volume {
            dims,
            spacing,
            data,
            kind,
        })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: T, kind: VolumeKind) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.iter().product()], kind)
    }

    pub fn map<U: Voxel>(&self, kind: VolumeKind, f: impl Fn(T) -> U) -> Result<Volume<U>> {
        Volume::new(self.dims, self.spacing, self.data.iter().map(|&v| f(v)).collect(), kind)
    }

    pub fn to_f32(&self) -> Volume<f32> {
        Volume::from_parts(
            self.dims,
            self.spacing,
            self.data.iter().map(|v| v.to_f64() as f32).collect(),
            if self.kind == VolumeKind::Label {
                VolumeKind::Intensity
            } else {
                self.kind
            },
        )
    }
}

impl Volume<u8> {
    /// Binary mask of voxels whose label satisfies `pred`.
    pub fn mask_where(&self, pred: impl Fn(u8) -> bool) -> Volume<u8> {
        Volume::from_parts(
            self.dims,
            self.spacing,
            self.data.iter().map(|&v| u8::from(pred(v))).collect(),
            VolumeKind::Label,
        )
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_length() {
        let err = Volume::<u8>::new([2, 2, 2], Spacing::isotropic(), vec![0; 7], VolumeKind::Label);
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn label_domain_checked() {
        let err = Volume::<u8>::new([1, 1, 2], Spacing::isotropic(), vec![0, 3], VolumeKind::Label);
        assert!(matches!(err, Err(Error::Label(3))));
    }

    #[test]
    fn probability_domain_checked() {
        let err = Volume::<f32>::new([1, 1, 1], Spacing::isotropic(), vec![1.5], VolumeKind::Probability);
        assert!(err.is_err());
    }

    #[test]
    fn spacing_must_be_positive() {
        assert!(Spacing::new(1.0, 0.0, 1.0).is_err());
        assert!(Spacing::new(1.0, 1.0, -2.0).is_err());
        assert!(Spacing::new(0.7, 0.7, 2.5).is_ok());
    }

    proptest! {
        #[test]
        fn flat_index_matches_loop_fill(nx in 1usize..7, ny in 1usize..7, nz in 1usize..7,
                                        px in 0usize..7, py in 0usize..7, pz in 0usize..7) {
            let mut data = vec![0f32; nx * ny * nz];
            let mut n = 0;
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        data[n] = (x * 10000 + y * 100 + z) as f32;
                        n += 1;
                    }
                }
            }
            let v = Volume::new([nx, ny, nz], Spacing::isotropic(), data, VolumeKind::Intensity).unwrap();
            let (x, y, z) = (px % nx, py % ny, pz % nz);
            prop_assert_eq!(v.index(x, y, z), x + nx * y + nx * ny * z);
            prop_assert_eq!(v.get(x, y, z), (x * 10000 + y * 100 + z) as f32);
            prop_assert_eq!(v.coords(v.index(x, y, z)), [x, y, z]);
        }
    }
}
