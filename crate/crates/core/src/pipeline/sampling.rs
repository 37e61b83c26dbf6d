//! Training samples: slice stacks cut from a box and resampled to the
//! network's square input size.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Stage, TrainConfig};
use crate::dataset::Case;
use crate::error::{Error, Result};
use crate::preprocess::{
    augment, derive_roi, prepare_ct, resample_plane, Interpolation, Plane, RoiBox, SliceStack, HU_WINDOW,
};
use crate::volume::{Volume, LESION, LIVER};

fn crop_plane<T: Copy>(vol: &Volume<T>, roi: &RoiBox, z: usize) -> Plane<T> {
    let [nx, ..] = vol.dims();
    let slice = vol.slice(z);
    let mut data = Vec::with_capacity(roi.extents()[0] * roi.extents()[1]);
    for y in roi.min[1]..=roi.max[1] {
        data.extend_from_slice(&slice[y * nx + roi.min[0]..=y * nx + roi.max[0]]);
    }
    Plane {
        h: roi.extents()[1],
        w: roi.extents()[0],
        data,
    }
}

fn check_box<T: Copy>(vol: &Volume<T>, roi: &RoiBox, z: usize) -> Result<()> {
    if !roi.fits(vol.dims()) {
        return Err(Error::Parameter(format!("box {roi:?} exceeds dims {:?}", vol.dims())));
    }
    if z < roi.min[2] || z > roi.max[2] {
        return Err(Error::Index(format!(
            "slice {z} outside box z-range {}..={}",
            roi.min[2], roi.max[2]
        )));
    }
    Ok(())
}

/// The `2t + 1` slices around `z` restricted to `roi` (slice indices clamp to
/// the box's z-range), each resampled bilinearly to `size × size`.
///
/// Equal to cropping the volume to `roi`, zooming it in-plane and stacking
/// slice `z - roi.min[2]`.
pub fn roi_stack(vol: &Volume<f32>, roi: &RoiBox, z: usize, t: usize, size: usize) -> Result<SliceStack> {
    check_box(vol, roi, z)?;
    let planes = (-(t as isize)..=t as isize)
        .map(|d| {
            let zz = (z as isize + d).clamp(roi.min[2] as isize, roi.max[2] as isize) as usize;
            resample_plane(&crop_plane(vol, roi, zz), size, size, Interpolation::Bilinear)
        })
        .collect::<Result<Vec<_>>>()?;
    SliceStack::from_planes(&planes, t, z)
}

/// Label slice `z` inside `roi`, nearest-resampled to `size × size`.
pub fn roi_label_plane(labels: &Volume<u8>, roi: &RoiBox, z: usize, size: usize) -> Result<Plane<u8>> {
    check_box(labels, roi, z)?;
    resample_plane(&crop_plane(labels, roi, z), size, size, Interpolation::Nearest)
}

struct Prepared {
    ct: Volume<f32>,
    labels: Volume<u8>,
    /// Ground-truth box for stage 2, whole volume for stage 1.
    roi: RoiBox,
}

/// Normalized training cases plus the slice pools sampling draws from.
pub(crate) struct TrainingSet {
    cases: Vec<Prepared>,
    foreground: Vec<(usize, usize)>,
    background: Vec<(usize, usize)>,
}

impl TrainingSet {
    /// Stage 1 sees whole slices with lesion folded into liver; a slice is
    /// foreground when it holds any organ voxel. Stage 2 sees the slices of
    /// the padded ground-truth box with all three classes; a slice is
    /// foreground when it holds lesion.
    pub fn new(cases: &[Case], cfg: &TrainConfig) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let mut prepared = Vec::with_capacity(cases.len());
        let (mut foreground, mut background) = (Vec::new(), Vec::new());
        for (ci, case) in cases.iter().enumerate() {
            let ct = prepare_ct(&case.ct, HU_WINDOW)?;
            let (labels, roi) = match cfg.stage {
                Stage::One => (
                    case.labels.map(case.labels.kind(), |l| l.min(LIVER))?,
                    RoiBox::whole(case.labels.dims()),
                ),
                Stage::Two => {
                    let organ = case.labels.mask_where(|l| l != 0);
                    let roi = match derive_roi(&organ, cfg.roi_pad) {
                        Ok(r) => r,
                        Err(Error::EmptyRoi) => RoiBox::whole(case.labels.dims()),
                        Err(e) => return Err(e),
                    };
                    (case.labels.clone(), roi)
                }
            };
            let fg_label = match cfg.stage {
                Stage::One => LIVER,
                Stage::Two => LESION,
            };
            for z in roi.min[2]..=roi.max[2] {
                let hit = crop_plane(&labels, &roi, z).data.contains(&fg_label);
                if hit {
                    foreground.push((ci, z));
                } else {
                    background.push((ci, z));
                }
            }
            prepared.push(Prepared { ct, labels, roi });
        }
        Ok(TrainingSet {
            cases: prepared,
            foreground,
            background,
        })
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng, cfg: &TrainConfig) -> Result<(SliceStack, Plane<u8>)> {
        let use_fg = match (self.foreground.is_empty(), self.background.is_empty()) {
            (true, _) => false,
            (false, true) => true,
            _ => rng.random_bool(cfg.foreground_fraction),
        };
        let pool = if use_fg { &self.foreground } else { &self.background };
        let (ci, z) = pool[rng.random_range(0..pool.len())];
        let case = &self.cases[ci];
        let roi = match cfg.stage {
            Stage::One => case.roi,
            Stage::Two => {
                let delta: [isize; 3] = std::array::from_fn(|a| {
                    let j = cfg.roi_jitter[a] as i64;
                    rng.random_range(-j..=j) as isize
                });
                case.roi.shifted(delta, case.ct.dims())
            }
        };
        let z = z.clamp(roi.min[2], roi.max[2]);
        let size = cfg.model.zoom_size;
        let stack = roi_stack(&case.ct, &roi, z, cfg.model.context_radius(), size)?;
        let labels = roi_label_plane(&case.labels, &roi, z, size)?;
        augment(&stack, &labels, rng.random(), &cfg.augment)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{crop, stack_adjacent, zoom_inplane};
    use crate::volume::{Spacing, VolumeKind};

    fn ramp(dims: [usize; 3]) -> Volume<f32> {
        let n = dims.iter().product::<usize>();
        let data = (0..n).map(|i| ((i * 37) % 101) as f32).collect();
        Volume::new(dims, Spacing::new(0.8, 0.8, 2.0).unwrap(), data, VolumeKind::Intensity).unwrap()
    }

    #[test]
    fn roi_stack_equals_crop_zoom_stack() {
        let vol = ramp([20, 18, 7]);
        let roi = RoiBox {
            min: [3, 2, 1],
            max: [15, 13, 5],
            pad: [0; 3],
        };
        let zoomed = zoom_inplane(&crop(&vol, &roi).unwrap(), 16, 16, Interpolation::Bilinear).unwrap();
        for z in 1..=5 {
            let a = roi_stack(&vol, &roi, z, 1, 16).unwrap();
            let b = stack_adjacent(&zoomed, z - 1, 1).unwrap();
            assert_eq!(a.data, b.data, "z={z}");
        }
    }

    #[test]
    fn slice_outside_box_rejected() {
        let vol = ramp([8, 8, 4]);
        let roi = RoiBox {
            min: [0, 0, 1],
            max: [7, 7, 2],
            pad: [0; 3],
        };
        assert!(matches!(roi_stack(&vol, &roi, 3, 1, 16), Err(Error::Index(_))));
    }
}
