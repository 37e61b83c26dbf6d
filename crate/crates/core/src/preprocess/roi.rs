use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume};

/// Inclusive voxel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
    /// Padding that was added around the tight foreground box.
    pub pad: [usize; 3],
}

impl RoiBox {
    pub fn whole(dims: Dims) -> Self {
        RoiBox {
            min: [0; 3],
            max: [dims[0] - 1, dims[1] - 1, dims[2] - 1],
            pad: [0; 3],
        }
    }

    pub fn extents(&self) -> Dims {
        [
            self.max[0] - self.min[0] + 1,
            self.max[1] - self.min[1] + 1,
            self.max[2] - self.min[2] + 1,
        ]
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    pub fn fits(&self, dims: Dims) -> bool {
        (0..3).all(|a| self.min[a] <= self.max[a] && self.max[a] < dims[a])
    }

    /// Shifts the box by `delta` per axis, then clips it to `dims`.
    pub fn shifted(&self, delta: [isize; 3], dims: Dims) -> Self {
        let mut out = *self;
        for a in 0..3 {
            let hi = dims[a] as isize - 1;
            let lo_v = (self.min[a] as isize + delta[a]).clamp(0, hi);
            let hi_v = (self.max[a] as isize + delta[a]).clamp(0, hi);
            out.min[a] = lo_v as usize;
            out.max[a] = hi_v.max(lo_v) as usize;
        }
        out
    }
}

/// Tight bounding box of the nonzero voxels, grown by `pad` and clipped.
pub fn derive_roi(mask: &Volume<u8>, pad: [usize; 3]) -> Result<RoiBox> {
    let dims = mask.dims();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, &v) in mask.data().iter().enumerate() {
        if v != 0 {
            any = true;
            let c = mask.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    if !any {
        return Err(Error::EmptyRoi);
    }
    let mut min = [0; 3];
    let mut max = [0; 3];
    for a in 0..3 {
        min[a] = lo[a].saturating_sub(pad[a]);
        max[a] = (hi[a] + pad[a]).min(dims[a] - 1);
    }
    Ok(RoiBox { min, max, pad })
}

pub fn crop<T: Copy>(vol: &Volume<T>, roi: &RoiBox) -> Result<Volume<T>> {
    if !roi.fits(vol.dims()) {
        return Err(Error::Index(format!(
            "box {:?}..{:?} outside volume {:?}",
            roi.min,
            roi.max,
            vol.dims()
        )));
    }
    let ext = roi.extents();
    let mut data = Vec::with_capacity(ext.iter().product());
    for z in roi.min[2]..=roi.max[2] {
        for y in roi.min[1]..=roi.max[1] {
            let start = vol.index(roi.min[0], y, z);
            data.extend_from_slice(&vol.data()[start..start + ext[0]]);
        }
    }
    Ok(Volume::from_parts(ext, vol.spacing(), data, vol.kind()))
}

/// Writes `patch` into a copy of `dst` at the box position.
pub fn paste<T: Copy>(dst: &Volume<T>, patch: &Volume<T>, roi: &RoiBox) -> Result<Volume<T>> {
    if !roi.fits(dst.dims()) {
        return Err(Error::Index(format!(
            "box {:?}..{:?} outside destination",
            roi.min, roi.max
        )));
    }
    let ext = roi.extents();
    if patch.dims() != ext {
        return Err(Error::Parameter(format!(
            "patch dims {:?} differ from box extents {:?}",
            patch.dims(),
            ext
        )));
    }
    let mut out = dst.clone();
    for z in 0..ext[2] {
        for y in 0..ext[1] {
            let src = patch.index(0, y, z);
            let dst_i = out.index(roi.min[0], roi.min[1] + y, roi.min[2] + z);
            out.data_mut()[dst_i..dst_i + ext[0]].copy_from_slice(&patch.data()[src..src + ext[0]]);
        }
    }
    Ok(out)
}
