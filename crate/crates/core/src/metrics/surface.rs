//! Symmetric surface distances via an exact Euclidean distance transform.

use serde::Serialize;

use super::{check_aligned, Score};
use crate::error::Result;
use crate::volume::{Spacing, Volume};

/// Foreground voxels with at least one background 6-neighbor; voxels on the
/// volume border always qualify.
pub fn surface_voxels(mask: &Volume<u8>) -> Vec<[usize; 3]> {
    surface_indices(mask).into_iter().map(|i| mask.coords(i)).collect()
}

pub(crate) fn surface_indices(mask: &Volume<u8>) -> Vec<usize> {
    let [nx, ny, nz] = mask.dims();
    let d = mask.data();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                if d[i] == 0 {
                    continue;
                }
                let border = x == 0 || y == 0 || z == 0 || x == nx - 1 || y == ny - 1 || z == nz - 1;
                if border
                    || d[i - 1] == 0
                    || d[i + 1] == 0
                    || d[i - nx] == 0
                    || d[i + nx] == 0
                    || d[i - nx * ny] == 0
                    || d[i + nx * ny] == 0
                {
                    out.push(i);
                }
            }
        }
    }
    out
}

/// Exact squared Euclidean distance (in mm²) from every voxel center to the
/// nearest seed, separable over the three axes.
pub(crate) fn squared_edt(dims: [usize; 3], spacing: Spacing, seeds: &[usize]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut f = vec![f64::INFINITY; nx * ny * nz];
    for &s in seeds {
        f[s] = 0.0;
    }
    let axes = [
        (nx, 1usize, spacing.sx),
        (ny, nx, spacing.sy),
        (nz, nx * ny, spacing.sz),
    ];
    let n = nx * ny * nz;
    let mut line = Vec::new();
    let mut out = Vec::new();
    let mut scratch = Scratch::default();
    for (len, stride, h) in axes {
        if len == 1 {
            continue;
        }
        // Every start index of a line along this axis.
        for start in 0..n {
            if (start / stride) % len != 0 {
                continue;
            }
            line.clear();
            line.extend((0..len).map(|k| f[start + k * stride]));
            if line.iter().all(|v| v.is_infinite()) {
                continue;
            }
            out.resize(len, 0.0);
            lower_envelope(&line, h * h, &mut out, &mut scratch);
            for k in 0..len {
                f[start + k * stride] = out[k];
            }
        }
    }
    f
}

#[derive(Default)]
struct Scratch {
    v: Vec<usize>,
    z: Vec<f64>,
}

/// One-dimensional pass: `out[q] = min_p f[p] + w·(q − p)²`.
fn lower_envelope(f: &[f64], w: f64, out: &mut [f64], s: &mut Scratch) {
    let n = f.len();
    s.v.clear();
    s.z.clear();
    let sites: Vec<usize> = (0..n).filter(|&p| f[p].is_finite()).collect();
    let inter = |p: usize, q: usize| -> f64 {
        let (pf, qf) = (p as f64, q as f64);
        ((f[p] + w * pf * pf) - (f[q] + w * qf * qf)) / (2.0 * w * (pf - qf))
    };
    for &q in &sites {
        loop {
            match s.v.last() {
                None => {
                    s.v.push(q);
                    s.z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let x = inter(q, p);
                    if x <= *s.z.last().unwrap() {
                        s.v.pop();
                        s.z.pop();
                    } else {
                        s.v.push(q);
                        s.z.push(x);
                        break;
                    }
                }
            }
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k + 1 < s.v.len() && s.z[k + 1] < qf {
            k += 1;
        }
        let p = s.v[k];
        let d = qf - p as f64;
        *o = f[p] + w * d * d;
    }
}

/// Average, maximum and root-mean-square symmetric surface distance in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfaceDistances {
    pub asd: Score,
    pub msd: Score,
    pub rmsd: Score,
}

impl SurfaceDistances {
    pub fn worst() -> Self {
        SurfaceDistances {
            asd: Score::Worst,
            msd: Score::Worst,
            rmsd: Score::Worst,
        }
    }

    pub fn undefined() -> Self {
        SurfaceDistances {
            asd: Score::Undefined,
            msd: Score::Undefined,
            rmsd: Score::Undefined,
        }
    }

    pub(crate) fn from_distances(d: &[f64]) -> Self {
        if d.is_empty() {
            return Self::worst();
        }
        let n = d.len() as f64;
        SurfaceDistances {
            asd: Score::Value(d.iter().sum::<f64>() / n),
            msd: Score::Value(d.iter().copied().fold(0.0, f64::max)),
            rmsd: Score::Value((d.iter().map(|v| v * v).sum::<f64>() / n).sqrt()),
        }
    }
}

/// Surface-to-surface distances pooled over both directions. An empty mask
/// on either side yields the worst-score marker.
pub fn surface_distances(a: &Volume<u8>, b: &Volume<u8>, spacing: Spacing) -> Result<SurfaceDistances> {
    check_aligned(a, b)?;
    Ok(SurfaceDistances::from_distances(&symmetric_samples(a, b, spacing)))
}

/// Every directed distance, `a → b` followed by `b → a`.
pub(crate) fn symmetric_samples(a: &Volume<u8>, b: &Volume<u8>, spacing: Spacing) -> Vec<f64> {
    let sa = surface_indices(a);
    let sb = surface_indices(b);
    if sa.is_empty() || sb.is_empty() {
        return Vec::new();
    }
    let da = squared_edt(a.dims(), spacing, &sa);
    let db = squared_edt(b.dims(), spacing, &sb);
    let mut out = Vec::with_capacity(sa.len() + sb.len());
    out.extend(sa.iter().map(|&i| db[i].sqrt()));
    out.extend(sb.iter().map(|&i| da[i].sqrt()));
    out
}
