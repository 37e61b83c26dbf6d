use rayon::prelude::*;

use super::{stacks_to_tensor, ForwardOptions, Mode, PolyUNetConfig, Session, NUM_CLASSES};
use crate::autodiff::{softmax_channels, ModelParams};
use crate::error::Result;
use crate::preprocess::stack_adjacent;
use crate::volume::{Dims, Spacing, Volume, VolumeKind};

/// Per-voxel class probabilities, stored class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    dims: Dims,
    spacing: Spacing,
    probs: Vec<f32>,
}

impl ProbVolume {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    /// Probabilities of class `c` in volume layout.
    pub fn class(&self, c: usize) -> &[f32] {
        let n = self.voxels();
        &self.probs[c * n..(c + 1) * n]
    }

    pub fn class_volume(&self, c: usize) -> Volume<f32> {
        Volume::from_parts(self.dims, self.spacing, self.class(c).to_vec(), VolumeKind::Probability)
    }

    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// Most probable class per voxel; ties go to the lower class.
    pub fn argmax(&self) -> Volume<u8> {
        let n = self.voxels();
        let labels = (0..n)
            .map(|i| {
                let mut best = 0;
                for c in 1..NUM_CLASSES {
                    if self.probs[c * n + i] > self.probs[best * n + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        Volume::from_parts(self.dims, self.spacing, labels, VolumeKind::Label)
    }
}

/// Runs the network slice by slice on a normalized volume whose in-plane
/// size is divisible by 16. Slices are processed in parallel; each slice is
/// an independent batch-of-one evaluation, so the result does not depend on
/// the thread count.
pub fn predict_volume(vol: &Volume<f32>, params: &ModelParams<f32>, cfg: &PolyUNetConfig) -> Result<ProbVolume> {
    let [nx, ny, nz] = vol.dims();
    let t = cfg.context_radius();
    let planes = (0..nz)
        .into_par_iter()
        .map(|k| predict_slice(vol, k, t, params, cfg))
        .collect::<Result<Vec<_>>>()?;
    let plane = nx * ny;
    let n = plane * nz;
    let mut probs = vec![0f32; NUM_CLASSES * n];
    for (k, p) in planes.iter().enumerate() {
        for c in 0..NUM_CLASSES {
            probs[c * n + k * plane..c * n + (k + 1) * plane].copy_from_slice(&p[c * plane..(c + 1) * plane]);
        }
    }
    Ok(ProbVolume {
        dims: vol.dims(),
        spacing: vol.spacing(),
        probs,
    })
}

/// Softmax output `(3, ny, nx)` for slice `k`.
pub(crate) fn predict_slice(
    vol: &Volume<f32>,
    k: usize,
    t: usize,
    params: &ModelParams<f32>,
    cfg: &PolyUNetConfig,
) -> Result<Vec<f32>> {
    let stack = stack_adjacent(vol, k, t)?;
    let mut s = Session::new(params, Mode::Eval);
    let x = s.input(stacks_to_tensor(&[stack])?);
    let out = s.forward(cfg, x, &ForwardOptions::default())?;
    Ok(softmax_channels(s.graph.value(out.logits)).into_data())
}
