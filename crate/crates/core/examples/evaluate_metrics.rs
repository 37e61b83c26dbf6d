//! Scores a deliberately shifted prediction against phantom ground truth and
//! prints the aggregate report and leaderboard JSON.

use polyseg::metrics::{aggregate, evaluate_case};
use polyseg::synth::{generate_phantom, PhantomConfig};
use polyseg::volume::{Volume, VolumeKind};

/// Moves every label one voxel along +x.
fn shift_x(v: &Volume<u8>) -> polyseg::Result<Volume<u8>> {
    let [nx, ny, nz] = v.dims();
    let mut out = vec![0u8; v.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 1..nx {
                out[v.index(x, y, z)] = v.get(x - 1, y, z);
            }
        }
    }
    Volume::new(v.dims(), v.spacing(), out, VolumeKind::Label)
}

fn main() -> polyseg::Result<()> {
    let mut cases = Vec::new();
    for seed in 0..3 {
        let phantom = generate_phantom(&PhantomConfig {
            seed,
            ..PhantomConfig::default()
        })?;
        let pred = shift_x(&phantom.labels)?;
        cases.push(evaluate_case(&format!("phantom_{seed}"), &pred, &phantom.labels)?);
    }
    let report = aggregate(&cases)?;
    print!("{}", report.render());
    println!("{}", serde_json::to_string_pretty(&report.leaderboard_json()).unwrap());
    Ok(())
}
