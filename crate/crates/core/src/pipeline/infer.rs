//! Two-stage inference and stage fusion.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::autodiff::ModelParams;
use crate::error::{Error, Result};
use crate::model::{predict_volume, PolyUNetConfig};
use crate::morphology::{largest_component, Connectivity};
use crate::preprocess::{crop, derive_roi, paste, prepare_ct, zoom_inplane, Interpolation, RoiBox, HU_WINDOW};
use crate::volume::{Volume, VolumeKind, BACKGROUND, LIVER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    pub stage1: PolyUNetConfig,
    pub stage2: PolyUNetConfig,
    /// Padding added around the stage-1 liver box.
    pub roi_pad: [usize; 3],
    pub window: (f32, f32),
    /// Neighborhood for largest-component selection.
    pub connectivity: Connectivity,
}

impl InferConfig {
    pub fn new(stage1: PolyUNetConfig, stage2: PolyUNetConfig, roi_pad: [usize; 3]) -> Self {
        InferConfig {
            stage1,
            stage2,
            roi_pad,
            window: HU_WINDOW,
            connectivity: Connectivity::TwentySix,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutputs {
    /// Largest component of the stage-1 organ prediction, full resolution.
    pub stage1_liver: Volume<u8>,
    pub roi: RoiBox,
    /// Set when stage 1 found nothing and the whole volume was used.
    pub roi_fallback: bool,
    /// Stage-2 labels on the voxel grid of `roi`.
    pub stage2_labels: Volume<u8>,
    pub fused: Volume<u8>,
}

/// Runs the network over a normalized volume after resizing its slices to
/// the network input size, and maps the argmax back with nearest sampling.
fn segment(vol: &Volume<f32>, params: &ModelParams<f32>, cfg: &PolyUNetConfig) -> Result<Volume<u8>> {
    let [nx, ny, _] = vol.dims();
    let s = cfg.zoom_size;
    let zoomed = zoom_inplane(vol, s, s, Interpolation::Bilinear)?;
    let labels = predict_volume(&zoomed, params, cfg)?.argmax();
    Ok(zoom_inplane(&labels, ny, nx, Interpolation::Nearest)?.with_spacing(vol.spacing()))
}

/// Window → normalize → stage 1 → largest component → padded box → crop →
/// zoom → stage 2 → un-zoom → paste → [`fuse`].
pub fn infer_two_stage(
    ct: &Volume<f32>,
    params1: &ModelParams<f32>,
    params2: &ModelParams<f32>,
    cfg: &InferConfig,
) -> Result<StageOutputs> {
    let norm = prepare_ct(ct, cfg.window)?;
    let organ = segment(&norm, params1, &cfg.stage1)?.mask_where(|l| l != BACKGROUND);
    let stage1_liver = largest_component(&organ, cfg.connectivity);
    let (roi, roi_fallback) = match derive_roi(&stage1_liver, cfg.roi_pad) {
        Ok(r) => (r, false),
        Err(Error::EmptyRoi) => {
            warn!("stage 1 found no liver; using the whole volume as region of interest");
            (RoiBox::whole(ct.dims()), true)
        }
        Err(e) => return Err(e),
    };
    let stage2_labels = segment(&crop(&norm, &roi)?, params2, &cfg.stage2)?;
    let blank = Volume::filled(ct.dims(), ct.spacing(), BACKGROUND, VolumeKind::Label)?;
    let pasted = paste(&blank, &stage2_labels, &roi)?;
    let fused = fuse(&stage1_liver, &pasted, &roi, cfg.connectivity)?;
    Ok(StageOutputs {
        stage1_liver,
        roi,
        roi_fallback,
        stage2_labels,
        fused,
    })
}

/// Stage-2 labels inside `roi`, the stage-1 mask as liver outside it, then
/// only the largest organ (liver ∪ lesion) component is kept.
pub fn fuse(
    stage1_liver: &Volume<u8>,
    stage2: &Volume<u8>,
    roi: &RoiBox,
    connectivity: Connectivity,
) -> Result<Volume<u8>> {
    if stage1_liver.dims() != stage2.dims() {
        return Err(Error::Parameter(format!(
            "stage dims differ: {:?} vs {:?}",
            stage1_liver.dims(),
            stage2.dims()
        )));
    }
    if !roi.fits(stage2.dims()) {
        return Err(Error::Parameter(format!(
            "box {roi:?} exceeds dims {:?}",
            stage2.dims()
        )));
    }
    let mut labels: Vec<u8> = (0..stage2.len())
        .map(|i| {
            if roi.contains(stage2.coords(i)) {
                stage2.data()[i]
            } else if stage1_liver.data()[i] != 0 {
                LIVER
            } else {
                BACKGROUND
            }
        })
        .collect();
    let merged = Volume::new(stage2.dims(), stage2.spacing(), labels.clone(), VolumeKind::Label)?;
    let keep = largest_component(&merged.mask_where(|l| l != BACKGROUND), connectivity);
    for (l, &k) in labels.iter_mut().zip(keep.data()) {
        if k == 0 {
            *l = BACKGROUND;
        }
    }
    Volume::new(stage2.dims(), stage2.spacing(), labels, VolumeKind::Label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Spacing, LESION};

    fn vol(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> u8) -> Volume<u8> {
        let mut data = Vec::new();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume::new(dims, Spacing::isotropic(), data, VolumeKind::Label).unwrap()
    }

    #[test]
    fn empty_stage2_gives_largest_stage1_component() {
        let s1 = vol([10, 10, 3], |x, y, _| u8::from((x < 4 && y < 4) || (x == 8 && y == 8)));
        let s2 = vol([10, 10, 3], |_, _, _| 0);
        let roi = RoiBox {
            min: [6, 6, 0],
            max: [9, 9, 2],
            pad: [0; 3],
        };
        let out = fuse(&s1, &s2, &roi, Connectivity::TwentySix).unwrap();
        let expected = vol([10, 10, 3], |x, y, _| u8::from(x < 4 && y < 4));
        assert_eq!(out, expected);
    }

    #[test]
    fn stage2_wins_inside_box() {
        let s1 = vol([6, 6, 2], |_, _, _| 1);
        let s2 = vol([6, 6, 2], |x, y, _| {
            if x == 2 && y == 2 {
                LESION
            } else {
                u8::from(x < 4 && y < 4)
            }
        });
        let roi = RoiBox {
            min: [0, 0, 0],
            max: [3, 3, 1],
            pad: [0; 3],
        };
        let out = fuse(&s1, &s2, &roi, Connectivity::Six).unwrap();
        assert_eq!(out.get(2, 2, 0), LESION);
        assert_eq!(out.get(5, 5, 1), LIVER);
        let inside_bg = vol([6, 6, 2], |x, y, _| {
            u8::from(x == 0 && y == 0) * 0 + u8::from(!(x == 0 && y == 0))
        });
        let out = fuse(&s1, &inside_bg, &roi, Connectivity::Six).unwrap();
        assert_eq!(out.get(0, 0, 0), BACKGROUND);
    }

    #[test]
    fn disconnected_blob_removed() {
        let s1 = vol([12, 12, 4], |x, y, z| {
            u8::from((x < 5 && y < 5) || (x == 10 && y == 10 && z == 3))
        });
        let s2 = s1.clone();
        let roi = RoiBox::whole([12, 12, 4]);
        let out = fuse(&s1, &s2, &roi, Connectivity::TwentySix).unwrap();
        assert_eq!(out.get(10, 10, 3), 0);
        assert_eq!(out.count_nonzero(), 25 * 4);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let a = vol([4, 4, 2], |_, _, _| 0);
        let b = vol([4, 4, 3], |_, _, _| 0);
        assert!(matches!(
            fuse(&a, &b, &RoiBox::whole([4, 4, 2]), Connectivity::Six),
            Err(Error::Parameter(_))
        ));
    }
}
