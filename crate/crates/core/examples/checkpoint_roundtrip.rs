//! Saves weights and optimizer state after a few steps, then resumes from
//! disk and checks the next step matches an uninterrupted run.

use polyseg::autodiff::{load_state, load_weights_into, save_state, save_weights};
use polyseg::dataset::Split;
use polyseg::model::PolyUNetConfig;
use polyseg::pipeline::{Stage, TrainConfig, Trainer};
use polyseg::synth::{generate_dataset, Jitter, PhantomConfig};

fn main() -> polyseg::Result<()> {
    let dir = std::env::temp_dir().join("polyseg_checkpoint");
    let manifest = generate_dataset(1, &PhantomConfig::default(), Jitter::default(), 5, 1.0, &dir)?;
    let cases = manifest.load_cases(Split::Train)?;
    let cfg = TrainConfig {
        model: PolyUNetConfig::tiny(1),
        total_iters: 6,
        lr_period: 6,
        ..TrainConfig::desk(Stage::One)
    };

    let mut straight = Trainer::<f32>::new(&cases, cfg.clone())?;
    for _ in 0..3 {
        straight.step()?;
    }
    save_weights(straight.params(), dir.join("w.punw"))?;
    save_state(straight.params(), straight.state(), dir.join("w.puns"))?;
    let expected = straight.step()?;

    let mut params = cfg.model.init_params::<f32>(99)?;
    load_weights_into(&mut params, dir.join("w.punw"))?;
    let state = load_state(&params, dir.join("w.puns"))?;
    let mut resumed = Trainer::resume(&cases, cfg, params, state)?;
    let got = resumed.step()?;
    println!("uninterrupted iter {}: loss {:.6}", expected.iter, expected.loss);
    println!("resumed       iter {}: loss {:.6}", got.iter, got.loss);
    println!("bitwise equal: {}", expected.loss.to_bits() == got.loss.to_bits());
    Ok(())
}
