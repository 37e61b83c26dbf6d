//! 3D connected-component labeling and largest-component selection.

use serde::{Deserialize, Serialize};

use crate::volume::{Volume, VolumeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Face, edge and corner neighbors.
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Component ids are dense `1..=K`, ordered by decreasing size; ties go to
/// the component containing the smaller flat index.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLabeling {
    pub labels: Volume<u32>,
    /// `sizes[i]` is the voxel count of component `i + 1`.
    pub sizes: Vec<usize>,
    pub connectivity: Connectivity,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Binary mask of a single component id.
    pub fn component_mask(&self, id: u32) -> Volume<u8> {
        Volume::from_parts(
            self.labels.dims(),
            self.labels.spacing(),
            self.labels.data().iter().map(|&l| u8::from(l == id)).collect(),
            VolumeKind::Label,
        )
    }
}

/// Labels the nonzero voxels of `mask`.
pub fn connected_components(mask: &Volume<u8>, connectivity: Connectivity) -> ComponentLabeling {
    let [nx, ny, nz] = mask.dims();
    let data = mask.data();
    let offsets = connectivity.offsets();
    let mut provisional = vec![0u32; data.len()];
    let mut sizes: Vec<usize> = Vec::new();
    let mut stack = Vec::new();

    // Scanning in flat order means component n (provisional) has a smaller
    // minimum flat index than component n + 1.
    for start in 0..data.len() {
        if data[start] == 0 || provisional[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        provisional[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let x = (i % nx) as isize;
            let y = ((i / nx) % ny) as isize;
            let z = (i / (nx * ny)) as isize;
            for &[dx, dy, dz] in &offsets {
                let (qx, qy, qz) = (x + dx, y + dy, z + dz);
                if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize || qz >= nz as isize {
                    continue;
                }
                let j = qx as usize + nx * (qy as usize + ny * qz as usize);
                if data[j] != 0 && provisional[j] == 0 {
                    provisional[j] = id;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }

    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Stable sort keeps discovery order (smallest min index first) among ties.
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]));
    let mut remap = vec![0u32; sizes.len() + 1];
    for (rank, &old) in order.iter().enumerate() {
        remap[old + 1] = rank as u32 + 1;
    }
    let labels = provisional.into_iter().map(|l| remap[l as usize]).collect();
    let sorted_sizes = order.iter().map(|&i| sizes[i]).collect();

    ComponentLabeling {
        labels: Volume::from_parts(mask.dims(), mask.spacing(), labels, VolumeKind::Intensity),
        sizes: sorted_sizes,
        connectivity,
    }
}

/// Keeps only the largest component of `mask`; an empty mask stays empty.
pub fn largest_component(mask: &Volume<u8>, connectivity: Connectivity) -> Volume<u8> {
    let labeling = connected_components(mask, connectivity);
    if labeling.count() == 0 {
        return mask.mask_where(|_| false);
    }
    labeling.component_mask(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Spacing;

    fn mask(dims: [usize; 3], on: &[[usize; 3]]) -> Volume<u8> {
        let mut v = Volume::filled(dims, Spacing::isotropic(), 0u8, VolumeKind::Label).unwrap();
        for &[x, y, z] in on {
            let i = v.index(x, y, z);
            v.data_mut()[i] = 1;
        }
        v
    }

    #[test]
    fn single_voxel() {
        let cc = connected_components(&mask([3, 3, 3], &[[1, 1, 1]]), Connectivity::Six);
        assert_eq!(cc.sizes, vec![1]);
        assert_eq!(cc.labels.get(1, 1, 1), 1);
    }

    #[test]
    fn diagonal_pair_depends_on_connectivity() {
        let m = mask([3, 3, 1], &[[0, 0, 0], [1, 1, 0]]);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).count(), 1);
        assert_eq!(connected_components(&m, Connectivity::Six).count(), 2);
    }

    #[test]
    fn empty_volume() {
        let m = mask([4, 4, 4], &[]);
        let cc = connected_components(&m, Connectivity::TwentySix);
        assert_eq!(cc.count(), 0);
        assert!(cc.labels.data().iter().all(|&l| l == 0));
        assert_eq!(largest_component(&m, Connectivity::Six).count_nonzero(), 0);
    }

    #[test]
    fn ids_ordered_by_size_then_position() {
        // Small blob first in scan order, big blob later.
        let m = mask([8, 1, 1], &[[0, 0, 0], [3, 0, 0], [4, 0, 0], [5, 0, 0], [7, 0, 0]]);
        let cc = connected_components(&m, Connectivity::Six);
        assert_eq!(cc.sizes, vec![3, 1, 1]);
        assert_eq!(cc.labels.get(4, 0, 0), 1);
        assert_eq!(cc.labels.get(0, 0, 0), 2);
        assert_eq!(cc.labels.get(7, 0, 0), 3);
    }

    #[test]
    fn largest_of_ten_and_three() {
        let mut on: Vec<[usize; 3]> = (0..10).map(|x| [x, 0, 0]).collect();
        on.extend((0..3).map(|x| [x, 5, 3]));
        let m = mask([12, 8, 5], &on);
        let out = largest_component(&m, Connectivity::TwentySix);
        assert_eq!(out.count_nonzero(), 10);
        assert!((0..10).all(|x| out.get(x, 0, 0) == 1));
    }

    #[test]
    fn single_component_is_identity() {
        let m = mask([4, 4, 2], &[[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]]);
        assert_eq!(largest_component(&m, Connectivity::Six), m);
    }
}
