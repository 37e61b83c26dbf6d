//! Generates a small jittered phantom dataset and prints what is in it.
//!
//! `cargo run --example synth_dataset -- [OUT_DIR]`

use polyseg::dataset::Split;
use polyseg::metrics::tumor_burden;
use polyseg::synth::{generate_dataset, Jitter, PhantomConfig};
use polyseg::volume::{LESION, LIVER};

fn main() -> polyseg::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synth_out".into());
    let manifest = generate_dataset(4, &PhantomConfig::default(), Jitter::default(), 7, 0.75, &out)?;
    println!("wrote {} cases to {out}", manifest.entries.len());
    for split in [Split::Train, Split::Test] {
        for case in manifest.load_cases(split)? {
            let liver = case.labels.data().iter().filter(|&&v| v == LIVER).count();
            let lesion = case.labels.data().iter().filter(|&&v| v == LESION).count();
            println!(
                "{:?} {}: dims {:?}, liver {liver} voxels, lesion {lesion} voxels, burden {:?}",
                split,
                case.name,
                case.ct.dims(),
                tumor_burden(&case.labels)
            );
        }
    }
    Ok(())
}
