//! Intensity windowing, normalization, slice-context assembly, augmentation,
//! region-of-interest handling and in-plane resampling.

mod augment;
mod plane;
mod resample;
mod roi;

pub use augment::{augment, AugmentConfig};
pub use plane::{stack_adjacent, Plane, SliceStack};
pub use resample::{resample_plane, zoom_inplane, Interpolation};
pub use roi::{crop, derive_roi, paste, RoiBox};

use crate::error::{Error, Result};
use crate::volume::{Volume, VolumeKind};

/// Default CT window in Hounsfield units.
pub const HU_WINDOW: (f32, f32) = (-200.0, 300.0);

/// Clamps every voxel into `[lo, hi]`.
pub fn window_hu(vol: &Volume<f32>, lo: f32, hi: f32) -> Result<Volume<f32>> {
    if !(lo < hi) {
        return Err(Error::Parameter(format!(
            "window bounds must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    Ok(Volume::from_parts(
        vol.dims(),
        vol.spacing(),
        vol.data().iter().map(|&v| v.clamp(lo, hi)).collect(),
        VolumeKind::Intensity,
    ))
}

/// Shifts and scales a volume to zero mean and unit population variance.
pub fn normalize_zscore(vol: &Volume<f32>) -> Result<Volume<f32>> {
    let n = vol.len();
    if n < 2 {
        return Err(Error::Parameter("z-score needs at least two voxels".into()));
    }
    let mean = vol.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = vol
        .data()
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    if var <= 0.0 {
        return Err(Error::ConstantVolume);
    }
    let inv_std = 1.0 / var.sqrt();
    Ok(Volume::from_parts(
        vol.dims(),
        vol.spacing(),
        vol.data()
            .iter()
            .map(|&v| ((v as f64 - mean) * inv_std) as f32)
            .collect(),
        VolumeKind::Intensity,
    ))
}

/// Window with the default HU range, then z-score.
pub fn prepare_ct(ct: &Volume<f32>, window: (f32, f32)) -> Result<Volume<f32>> {
    normalize_zscore(&window_hu(ct, window.0, window.1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Spacing;
    use proptest::prelude::*;

    fn vol(data: Vec<f32>) -> Volume<f32> {
        let n = data.len();
        Volume::new([n, 1, 1], Spacing::isotropic(), data, VolumeKind::Intensity).unwrap()
    }

    #[test]
    fn window_defaults() {
        let out = window_hu(&vol(vec![-500.0, 100.0, 1000.0]), HU_WINDOW.0, HU_WINDOW.1).unwrap();
        assert_eq!(out.data(), &[-200.0, 100.0, 300.0]);
    }

    #[test]
    fn window_rejects_inverted_bounds() {
        assert!(matches!(window_hu(&vol(vec![0.0]), 5.0, 5.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn zscore_two_values() {
        let out = normalize_zscore(&vol(vec![0.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn zscore_constant_volume() {
        assert!(matches!(
            normalize_zscore(&vol(vec![3.0; 10])),
            Err(Error::ConstantVolume)
        ));
    }

    proptest! {
        #[test]
        fn zscore_statistics(values in proptest::collection::vec(-1000f32..1000f32, 2..400)) {
            let spread = values.iter().cloned().fold(f32::MIN, f32::max) - values.iter().cloned().fold(f32::MAX, f32::min);
            prop_assume!(spread > 1.0);
            let out = normalize_zscore(&vol(values)).unwrap();
            let n = out.len() as f64;
            let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = out.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-5, "mean {}", mean);
            prop_assert!((var - 1.0).abs() < 1e-4, "var {}", var);
        }
    }
}
