//! Step learning-rate schedule at its breakpoints.

use polyseg::model::PolyUNetConfig;
use polyseg::pipeline::{lr_at, Stage, TrainConfig};

fn main() {
    let full = TrainConfig::full_schedule(Stage::One, PolyUNetConfig::desk(1));
    for iter in [0, 39_999, 40_000, 80_000, 120_000, full.total_iters - 1] {
        println!("full  iter {iter:>6}: lr {:e}", lr_at(iter, &full));
    }
    let desk = TrainConfig::desk(Stage::One);
    for iter in (0..desk.total_iters).step_by(desk.lr_period as usize) {
        println!("desk  iter {iter:>6}: lr {:e}", lr_at(iter, &desk));
    }
}
