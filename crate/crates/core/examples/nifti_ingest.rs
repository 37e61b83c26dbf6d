//! Writes a minimal int16 NIfTI-1 file byte by byte, ingests it and stores
//! it again as SEGV1.

use polyseg::io::{load_nifti1_with_meta, load_segv, save_segv, AnyVolume};

fn header(dims: [i16; 3], pixdim: [f32; 3]) -> Vec<u8> {
    let mut h = vec![0u8; 352];
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    for (k, d) in [3, dims[0], dims[1], dims[2], 1, 1, 1, 1].iter().enumerate() {
        h[40 + 2 * k..42 + 2 * k].copy_from_slice(&d.to_le_bytes());
    }
    h[70..72].copy_from_slice(&4i16.to_le_bytes()); // int16
    h[72..74].copy_from_slice(&16i16.to_le_bytes());
    for (k, p) in [1.0, pixdim[0], pixdim[1], pixdim[2]].iter().enumerate() {
        h[76 + 4 * k..80 + 4 * k].copy_from_slice(&p.to_le_bytes());
    }
    h[108..112].copy_from_slice(&352f32.to_le_bytes());
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

fn main() -> polyseg::Result<()> {
    let dir = std::env::temp_dir().join("polyseg_nifti_ingest");
    std::fs::create_dir_all(&dir).unwrap();
    let mut bytes = header([8, 6, 4], [0.8, 0.8, 2.0]);
    for i in 0..8 * 6 * 4i16 {
        bytes.extend_from_slice(&(i * 10 - 500).to_le_bytes());
    }
    let nii = dir.join("tiny.nii");
    std::fs::write(&nii, &bytes).unwrap();

    let (vol, meta) = load_nifti1_with_meta(&nii)?;
    println!(
        "{}: {:?} dims {:?}, orientation ignored: {}",
        nii.display(),
        meta.dtype,
        vol.dims(),
        meta.affine_ignored
    );
    let AnyVolume::I16(v) = vol else {
        unreachable!("fixture is int16")
    };
    println!(
        "spacing {:?}, voxel (1, 2, 3) = {}",
        v.spacing().as_array(),
        v.get(1, 2, 3)
    );

    let segv = dir.join("tiny.segv");
    save_segv(&v, &segv)?;
    let back = load_segv(&segv)?;
    println!("SEGV round trip identical: {}", back == AnyVolume::I16(v));
    Ok(())
}
