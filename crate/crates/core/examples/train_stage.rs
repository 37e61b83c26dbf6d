//! Short stage-1 training run on generated phantoms, printing the loss.
//!
//! `cargo run --release --example train_stage -- [ITERS]`

use polyseg::dataset::Split;
use polyseg::pipeline::{Stage, TrainConfig, Trainer};
use polyseg::synth::{generate_dataset, Jitter, PhantomConfig};

fn main() -> polyseg::Result<()> {
    env_logger::init();
    let iters: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let dir = std::env::temp_dir().join("polyseg_train_stage");
    let manifest = generate_dataset(2, &PhantomConfig::default(), Jitter::default(), 1, 1.0, &dir)?;
    let cases = manifest.load_cases(Split::Train)?;

    let cfg = TrainConfig {
        total_iters: iters,
        lr_period: iters,
        ..TrainConfig::desk(Stage::One)
    };
    let mut trainer = Trainer::<f32>::new(&cases, cfg)?;
    trainer.run(|r| {
        if r.iter % 10 == 0 {
            println!("iter {:>4}  lr {:e}  loss {:.4}", r.iter, r.lr, r.loss);
        }
    })?;
    println!("finished at iteration {}", trainer.iteration());
    Ok(())
}
