//! Randomized invariants of the geometric and fusion steps, independent of
//! any trained model.

use polyseg::metrics::{tumor_burden, Score};
use polyseg::morphology::{connected_components, Connectivity};
use polyseg::pipeline::fuse;
use polyseg::preprocess::{crop, derive_roi, normalize_zscore, paste, RoiBox};
use polyseg::volume::{Spacing, Volume, VolumeKind, LESION};
use proptest::prelude::*;

fn volume(dims: [usize; 3], data: Vec<u8>) -> Volume<u8> {
    Volume::new(dims, Spacing::isotropic(), data, VolumeKind::Label).unwrap()
}

fn dims_and_data(max_label: u8) -> impl Strategy<Value = ([usize; 3], Vec<u8>)> {
    (2usize..9, 2usize..9, 1usize..6)
        .prop_flat_map(move |(x, y, z)| (Just([x, y, z]), prop::collection::vec(0..=max_label, x * y * z)))
}

fn roi_in(dims: [usize; 3]) -> impl Strategy<Value = RoiBox> {
    let axis = |n: usize| (0..n).prop_flat_map(move |lo| (Just(lo), lo..n));
    (axis(dims[0]), axis(dims[1]), axis(dims[2])).prop_map(|((x0, x1), (y0, y1), (z0, z1))| RoiBox {
        min: [x0, y0, z0],
        max: [x1, y1, z1],
        pad: [0; 3],
    })
}

proptest! {
    #[test]
    fn fused_labels_are_valid_confined_and_connected(
        (dims, s1, s2, roi) in dims_and_data(1).prop_flat_map(|(dims, s1)| {
            let n = s1.len();
            (Just(dims), Just(s1), prop::collection::vec(0u8..=2, n), roi_in(dims))
        })
    ) {
        let fused = fuse(&volume(dims, s1), &volume(dims, s2), &roi, Connectivity::TwentySix).unwrap();
        prop_assert!(fused.data().iter().all(|&v| v <= LESION));
        for i in 0..fused.len() {
            if fused.data()[i] == LESION {
                prop_assert!(roi.contains(fused.coords(i)));
            }
        }
        let organ = fused.mask_where(|v| v != 0);
        prop_assert!(connected_components(&organ, Connectivity::TwentySix).count() <= 1);
    }

    #[test]
    fn derived_roi_covers_the_mask_with_clamped_padding(
        (dims, data) in dims_and_data(1),
        pad in prop::array::uniform3(0usize..5),
    ) {
        let mask = volume(dims, data);
        match derive_roi(&mask, pad) {
            Ok(roi) => {
                prop_assert!(roi.fits(dims));
                for i in 0..mask.len() {
                    if mask.data()[i] != 0 {
                        let c = mask.coords(i);
                        prop_assert!(roi.contains(c));
                        for a in 0..3 {
                            prop_assert!(c[a] >= roi.min[a] + pad[a] || roi.min[a] == 0);
                            prop_assert!(c[a] + pad[a] <= roi.max[a] || roi.max[a] == dims[a] - 1);
                        }
                    }
                }
            }
            Err(_) => prop_assert_eq!(mask.count_nonzero(), 0),
        }
    }

    #[test]
    fn crop_then_paste_restores_the_box(
        (dims, data, roi) in dims_and_data(2).prop_flat_map(|(dims, data)| (Just(dims), Just(data), roi_in(dims)))
    ) {
        let vol = volume(dims, data);
        let patch = crop(&vol, &roi).unwrap();
        prop_assert_eq!(patch.dims(), roi.extents());
        let blank = volume(dims, vec![0; vol.len()]);
        let back = paste(&blank, &patch, &roi).unwrap();
        for i in 0..vol.len() {
            let want = if roi.contains(vol.coords(i)) { vol.data()[i] } else { 0 };
            prop_assert_eq!(back.data()[i], want);
        }
    }

    #[test]
    fn tumor_burden_is_a_fraction((dims, data) in dims_and_data(2)) {
        let v = volume(dims, data);
        match tumor_burden(&v) {
            Score::Value(b) => prop_assert!((0.0..=1.0).contains(&b)),
            other => prop_assert_eq!(other, Score::Undefined),
        }
    }

    #[test]
    fn zscore_has_zero_mean_unit_variance(values in prop::collection::vec(-1000f32..1000.0, 8..64)) {
        prop_assume!(values.iter().any(|&v| (v - values[0]).abs() > 1.0));
        let n = values.len();
        let v = Volume::new([n, 1, 1], Spacing::isotropic(), values, VolumeKind::Intensity).unwrap();
        let z = normalize_zscore(&v).unwrap();
        let mean = z.data().iter().map(|&x| x as f64).sum::<f64>() / n as f64;
        let var = z.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        prop_assert!(mean.abs() < 1e-4);
        prop_assert!((var - 1.0).abs() < 1e-3);
    }
}
