use serde::{Deserialize, Serialize};

use super::plane::Plane;
use crate::error::{Error, Result};
use crate::volume::{Volume, Voxel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

/// Corner-aligned source coordinate of output sample `p`.
#[inline]
fn source_coord(p: usize, input: usize, output: usize) -> f64 {
    if output > 1 {
        p as f64 * (input - 1) as f64 / (output - 1) as f64
    } else {
        (input - 1) as f64 / 2.0
    }
}

/// Resamples a plane to `out_h × out_w`.
///
/// Output pixel `p` reads input coordinate `p · (in − 1) / (out − 1)` (the
/// center when the output has a single pixel along that axis).
pub fn resample_plane<T: Voxel>(plane: &Plane<T>, out_h: usize, out_w: usize, mode: Interpolation) -> Result<Plane<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Parameter(format!("output size {out_h}x{out_w} must be nonzero")));
    }
    if plane.h == 0 || plane.w == 0 {
        return Err(Error::Parameter("input plane is empty".into()));
    }
    if (out_h, out_w) == (plane.h, plane.w) {
        return Ok(plane.clone());
    }
    let cols: Vec<f64> = (0..out_w).map(|j| source_coord(j, plane.w, out_w)).collect();
    let mut data = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let cy = source_coord(i, plane.h, out_h);
        match mode {
            Interpolation::Nearest => {
                let r = ((cy + 0.5).floor() as usize).min(plane.h - 1);
                for &cx in &cols {
                    let c = ((cx + 0.5).floor() as usize).min(plane.w - 1);
                    data.push(plane.at(r, c));
                }
            }
            Interpolation::Bilinear => {
                let r0 = cy.floor() as usize;
                let r1 = (r0 + 1).min(plane.h - 1);
                let fy = cy - r0 as f64;
                for &cx in &cols {
                    let c0 = cx.floor() as usize;
                    let c1 = (c0 + 1).min(plane.w - 1);
                    let fx = cx - c0 as f64;
                    let top = plane.at(r0, c0).to_f64() * (1.0 - fx) + plane.at(r0, c1).to_f64() * fx;
                    let bottom = plane.at(r1, c0).to_f64() * (1.0 - fx) + plane.at(r1, c1).to_f64() * fx;
                    data.push(T::from_f64(top * (1.0 - fy) + bottom * fy));
                }
            }
        }
    }
    Ok(Plane {
        h: out_h,
        w: out_w,
        data,
    })
}

/// Resamples every axial slice of a volume to `out_h × out_w` (rows are y).
///
/// Spacing is rescaled so the physical extent is preserved.
pub fn zoom_inplane<T: Voxel>(vol: &Volume<T>, out_h: usize, out_w: usize, mode: Interpolation) -> Result<Volume<T>> {
    let [nx, ny, nz] = vol.dims();
    if (nx, ny) == (out_w, out_h) {
        return Ok(vol.clone());
    }
    let mut data = Vec::with_capacity(out_h * out_w * nz);
    for k in 0..nz {
        let p = resample_plane(&Plane::from_slice(vol, k), out_h, out_w, mode)?;
        data.extend_from_slice(&p.data);
    }
    let s = vol.spacing();
    let spacing = crate::volume::Spacing {
        sx: s.sx * nx as f64 / out_w as f64,
        sy: s.sy * ny as f64 / out_h as f64,
        sz: s.sz,
    };
    Ok(Volume::from_parts([out_w, out_h, nz], spacing, data, vol.kind()))
}
