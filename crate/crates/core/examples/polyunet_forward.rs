//! One forward pass of the desk-size network, printing the feature ladder.

use polyseg::autodiff::{ModelParams, Tensor};
use polyseg::model::{ForwardOptions, Mode, PolyUNetConfig, Session};

fn main() -> polyseg::Result<()> {
    let cfg = PolyUNetConfig::desk(1);
    let params: ModelParams<f32> = cfg.init_params(0)?;
    println!(
        "{} tensors, {} learnable values, context radius {}",
        params.len(),
        params
            .entries()
            .iter()
            .filter(|e| e.learnable)
            .map(|e| e.value.numel())
            .sum::<usize>(),
        cfg.context_radius()
    );

    let n = cfg.zoom_size;
    let x = Tensor::full([1, cfg.in_channels, n, n], 0.5f32);
    let mut s = Session::new(&params, Mode::Eval);
    let xv = s.input(x);
    let out = s.forward(&cfg, xv, &ForwardOptions::default())?;
    for (k, v) in out.encoder.iter().enumerate() {
        println!("encoder {}: {:?}", k + 1, s.graph.value(*v).shape());
    }
    for (k, v) in out.decoder.iter().enumerate() {
        println!("decoder {}: {:?}", 5 - k, s.graph.value(*v).shape());
    }
    println!("logits: {:?}", s.graph.value(out.logits).shape());
    let names: Vec<&str> = out.taps.iter().map(|(p, _)| p.as_str()).collect();
    println!("polynomial modules: {names:?}");
    Ok(())
}
