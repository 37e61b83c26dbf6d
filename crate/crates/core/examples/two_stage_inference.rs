//! Trains both stages briefly, then runs the full coarse-to-fine pipeline on
//! each phantom and scores the fused labels.
//!
//! `cargo run --release --example two_stage_inference -- [ITERS]`

use polyseg::dataset::Split;
use polyseg::metrics::evaluate_case;
use polyseg::pipeline::{infer_two_stage, train_stage, InferConfig, Stage, TrainConfig};
use polyseg::synth::{generate_dataset, Jitter, PhantomConfig};

fn main() -> polyseg::Result<()> {
    env_logger::init();
    let iters: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let dir = std::env::temp_dir().join("polyseg_two_stage");
    let manifest = generate_dataset(2, &PhantomConfig::default(), Jitter::default(), 3, 1.0, &dir)?;
    let cases = manifest.load_cases(Split::Train)?;

    let short = |stage| TrainConfig {
        total_iters: iters,
        lr_period: iters,
        ..TrainConfig::desk(stage)
    };
    let (s1, s2) = (short(Stage::One), short(Stage::Two));
    let (p1, _) = train_stage::<f32>(&cases, &s1)?;
    let (p2, _) = train_stage::<f32>(&cases, &s2)?;

    let cfg = InferConfig::new(s1.model, s2.model, s2.roi_pad);
    for case in &cases {
        let out = infer_two_stage(&case.ct, &p1, &p2, &cfg)?;
        let scores = evaluate_case(&case.name, &out.fused, &case.labels)?;
        println!(
            "{}: roi {:?}..={:?}{}, liver dice {:?}, lesion dice {:?}, tp {} fp {} fn {}",
            case.name,
            out.roi.min,
            out.roi.max,
            if out.roi_fallback { " (fallback)" } else { "" },
            scores.liver.dice,
            scores.lesion.dice,
            scores.tp,
            scores.fp,
            scores.fn_
        );
    }
    Ok(())
}
