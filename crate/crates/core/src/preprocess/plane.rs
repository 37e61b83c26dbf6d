use crate::error::{Error, Result};
use crate::volume::Volume;

/// A row-major 2D array of `h` rows by `w` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn new(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Dimension(format!(
                "plane data length {} does not match {h}x{w}",
                data.len()
            )));
        }
        Ok(Plane { h, w, data })
    }

    pub fn filled(h: usize, w: usize, value: T) -> Self {
        Plane {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.w + col]
    }

    /// Axial slice `k` of a volume: rows are y, columns are x.
    pub fn from_slice(vol: &Volume<T>, k: usize) -> Self {
        let [nx, ny, _] = vol.dims();
        Plane {
            h: ny,
            w: nx,
            data: vol.slice(k).to_vec(),
        }
    }
}

/// `2t + 1` consecutive axial slices centered on slice `center`, stacked as
/// channels. Channel `t` is the center slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack {
    pub h: usize,
    pub w: usize,
    pub t: usize,
    pub center: usize,
    /// Channel-major `(2t + 1) × h × w`.
    pub data: Vec<f32>,
}

impl SliceStack {
    pub fn channels(&self) -> usize {
        2 * self.t + 1
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_plane(&self, c: usize) -> Plane<f32> {
        Plane {
            h: self.h,
            w: self.w,
            data: self.channel(c).to_vec(),
        }
    }

    pub fn from_planes(planes: &[Plane<f32>], t: usize, center: usize) -> Result<Self> {
        if planes.len() != 2 * t + 1 {
            return Err(Error::Parameter(format!(
                "expected {} planes for t = {t}, got {}",
                2 * t + 1,
                planes.len()
            )));
        }
        let (h, w) = (planes[0].h, planes[0].w);
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            if (p.h, p.w) != (h, w) {
                return Err(Error::Dimension("planes of a stack must share one size".into()));
            }
            data.extend_from_slice(&p.data);
        }
        Ok(SliceStack { h, w, t, center, data })
    }
}

/// Stacks slices `k - t ..= k + t`; indices past either end of the volume
/// repeat the nearest valid slice.
pub fn stack_adjacent(vol: &Volume<f32>, k: usize, t: usize) -> Result<SliceStack> {
    let [nx, ny, nz] = vol.dims();
    if k >= nz {
        return Err(Error::Index(format!("slice {k} out of range for nz = {nz}")));
    }
    let mut data = Vec::with_capacity((2 * t + 1) * nx * ny);
    for offset in -(t as isize)..=(t as isize) {
        let z = (k as isize + offset).clamp(0, nz as isize - 1) as usize;
        data.extend_from_slice(vol.slice(z));
    }
    Ok(SliceStack {
        h: ny,
        w: nx,
        t,
        center: k,
        data,
    })
}
