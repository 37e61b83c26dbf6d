//! Windowing, normalization, organ box and the zoomed adjacent-slice stack
//! that stage 2 sees for one slice.

use polyseg::pipeline::roi_stack;
use polyseg::preprocess::{crop, derive_roi, prepare_ct, HU_WINDOW};
use polyseg::synth::{generate_phantom, PhantomConfig};

fn main() -> polyseg::Result<()> {
    let phantom = generate_phantom(&PhantomConfig::default())?;
    let ct = phantom.ct.to_f32();
    let norm = prepare_ct(&ct, HU_WINDOW)?;
    let mean = norm.data().iter().map(|&v| v as f64).sum::<f64>() / norm.len() as f64;
    println!("windowed to {HU_WINDOW:?} and normalized: mean {mean:.2e}");

    let organ = phantom.labels.mask_where(|v| v != 0);
    let roi = derive_roi(&organ, [8, 8, 4])?;
    println!(
        "organ box {:?}..={:?} (pad {:?}), extents {:?}",
        roi.min,
        roi.max,
        roi.pad,
        roi.extents()
    );

    let cropped = crop(&norm, &roi)?;
    println!("cropped volume {:?}", cropped.dims());

    let z = (roi.max[2] - roi.min[2]) / 2;
    let stack = roi_stack(&norm, &roi, z, 1, 64)?;
    println!(
        "slice {z} of the box as a {}-channel {}x{} stack",
        stack.channels(),
        stack.h,
        stack.w
    );
    Ok(())
}
