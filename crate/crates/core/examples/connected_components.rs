//! Component labeling under both connectivities and largest-component
//! selection on a mask with a diagonal bridge.

use polyseg::morphology::{connected_components, largest_component, Connectivity};
use polyseg::volume::{Spacing, Volume, VolumeKind};

fn main() -> polyseg::Result<()> {
    let dims = [6, 6, 1];
    let mut data = vec![0u8; 36];
    for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1), (2, 2), (3, 3), (4, 3), (5, 5)] {
        data[x + 6 * y] = 1;
    }
    let mask = Volume::new(dims, Spacing::isotropic(), data, VolumeKind::Label)?;
    for conn in [Connectivity::Six, Connectivity::TwentySix] {
        let lab = connected_components(&mask, conn);
        println!("{conn:?}: {} components, sizes {:?}", lab.count(), lab.sizes);
    }
    let kept = largest_component(&mask, Connectivity::TwentySix);
    println!(
        "largest 26-connected component keeps {} of {} voxels",
        kept.count_nonzero(),
        mask.count_nonzero()
    );
    Ok(())
}
