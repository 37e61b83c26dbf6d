use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Graph;
use crate::volume::{Spacing, Volume, VolumeKind};

fn rand_tensor(shape: [usize; 4], seed: u64, lo: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..1.0)).collect()).unwrap()
}

/// Parameters for a single conv unit named `name` mapping `c -> c` that acts
/// as the identity in eval mode.
fn identity_unit(c: usize, name: &str) -> ModelParams<f64> {
    let mut k = Tensor::zeros([c, c, 3, 3]);
    for i in 0..c {
        k.data_mut()[((i * c + i) * 3 + 1) * 3 + 1] = 1.0;
    }
    let mut p = ModelParams::new();
    p.insert(format!("{name}.conv.w"), k, true).unwrap();
    p.insert(format!("{name}.bn.gamma"), Tensor::full([1, c, 1, 1], 1.0), true)
        .unwrap();
    p.insert(format!("{name}.bn.beta"), Tensor::zeros([1, c, 1, 1]), true)
        .unwrap();
    for d in 1..=3 {
        p.insert(
            format!("{name}.d{d}.bn.running_mean"),
            Tensor::zeros([1, c, 1, 1]),
            false,
        )
        .unwrap();
        // var + eps == 1, so the normalization is neutral.
        p.insert(
            format!("{name}.d{d}.bn.running_var"),
            Tensor::full([1, c, 1, 1], 1.0 - BN_EPS),
            false,
        )
        .unwrap();
    }
    p
}

fn shared(prefix: &str) -> [String; 3] {
    [0, 1, 2].map(|_| format!("{prefix}.f"))
}

#[test]
fn config_validation_and_json() {
    assert!(PolyUNetConfig::new(1, [16, 32, 64, 128, 256], 64, true).is_ok());
    assert!(PolyUNetConfig::new(1, [16, 8, 64, 128, 256], 64, true).is_err());
    assert!(PolyUNetConfig::new(1, [16, 32, 64, 128, 256], 40, true).is_err());
    let mut c = PolyUNetConfig::desk(1);
    c.in_channels = 4;
    assert!(c.validate().is_err());
    let cfg = PolyUNetConfig::desk(2);
    let back: PolyUNetConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn init_is_deterministic_and_unique() {
    let cfg = PolyUNetConfig::tiny(1);
    let a: ModelParams<f32> = cfg.init_params(5).unwrap();
    let b: ModelParams<f32> = cfg.init_params(5).unwrap();
    assert_eq!(a, b);
    let names: std::collections::HashSet<_> = a.entries().iter().map(|e| e.name.clone()).collect();
    assert_eq!(names.len(), a.len());
    let unshared = PolyUNetConfig { share_f: false, ..cfg };
    let u: ModelParams<f32> = unshared.init_params(5).unwrap();
    assert!(u.len() > a.len());
}

#[test]
fn poly_with_identity_operator_triples_input() {
    let p = identity_unit(2, "m.f");
    let x = rand_tensor([1, 2, 5, 5], 1, 0.0);
    let mut s = Session::new(&p, Mode::Eval);
    let xv = s.input(x.clone());
    let taps = s.poly_module("m", &shared("m"), xv).unwrap();
    let out = s.graph.value(taps.output);
    for (o, v) in out.data().iter().zip(x.data()) {
        assert!((o - 3.0 * v).abs() < 1e-6);
    }
}

#[test]
fn poly_zero_input_gives_zero() {
    let cfg = PolyUNetConfig::tiny(1);
    let p: ModelParams<f64> = cfg.init_params(2).unwrap();
    let mut s = Session::new(&p, Mode::Eval);
    let x = s.input(Tensor::zeros([1, 3, 4, 4]));
    let taps = s.poly_module("enc2.poly", &shared("enc2.poly"), x).unwrap();
    assert!(s.graph.value(taps.output).data().iter().all(|&v| v == 0.0));
}

#[test]
fn poly_channel_mismatch_rejected() {
    let p = identity_unit(2, "m.f");
    let mut s = Session::new(&p, Mode::Eval);
    let x = s.input(Tensor::zeros([1, 3, 4, 4]));
    assert!(s.poly_module("m", &shared("m"), x).is_err());
}

#[test]
fn shared_operator_taps_recompute_exactly() {
    let cfg = PolyUNetConfig::tiny(1);
    let p: ModelParams<f64> = cfg.init_params(3).unwrap();
    for mode in [Mode::Eval, Mode::Train] {
        let mut s = Session::new(&p, mode);
        let x = s.input(rand_tensor([2, 3, 4, 4], 4, -1.0));
        let t = s.poly_module("enc2.poly", &shared("enc2.poly"), x).unwrap();
        let (p1, p2, p3, out) = (
            s.graph.value(t.p1).clone(),
            s.graph.value(t.p2).clone(),
            s.graph.value(t.p3).clone(),
            s.graph.value(t.output).clone(),
        );
        // F applied to the stored first- and second-order values.
        let mut r = Session::new(&p, mode);
        let a = r.input(p1.clone());
        let f_p1 = r.conv_unit_with_stats("enc2.poly.f", "enc2.poly.f.d2", a, 1).unwrap();
        let b = r.input(p2.clone());
        let f_p2 = r.conv_unit_with_stats("enc2.poly.f", "enc2.poly.f.d3", b, 1).unwrap();
        assert_eq!(r.graph.value(f_p1), &p2);
        assert_eq!(r.graph.value(f_p2), &p3);
        let expect: Vec<f64> = p1
            .data()
            .iter()
            .zip(r.graph.value(f_p1).data())
            .zip(r.graph.value(f_p2).data())
            .map(|((a, b), c)| (a + b + c).max(0.0))
            .collect();
        assert_eq!(out.data(), &expect[..]);
    }
}

#[test]
fn downsample_expand_shape_and_pooled_half() {
    let cfg = PolyUNetConfig::tiny(1);
    let p: ModelParams<f64> = cfg.init_params(6).unwrap();
    let x = rand_tensor([1, 2, 8, 8], 7, -1.0);
    let mut s = Session::new(&p, Mode::Train);
    let xv = s.input(x.clone());
    let y = s.downsample_expand("enc2.down", xv).unwrap();
    assert_eq!(s.graph.value(y).shape(), [1, 3, 4, 4]);

    let mut g = Graph::new();
    let xg = g.leaf(x, false);
    let pooled = g.maxpool2x2(xg).unwrap();
    let out = s.graph.value(y);
    for c in 0..2 {
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(out.at(0, c, i, j), g.value(pooled).at(0, c, i, j));
            }
        }
    }

    let mut z = Session::new(&p, Mode::Eval);
    let zv = z.input(Tensor::zeros([1, 2, 8, 8]));
    let zy = z.downsample_expand("enc2.down", zv).unwrap();
    assert!(z.graph.value(zy).data().iter().all(|&v| v == 0.0));
    let odd = z.input(Tensor::zeros([1, 2, 7, 8]));
    assert!(z.downsample_expand("enc2.down", odd).is_err());
}

#[test]
fn forward_shapes_follow_the_ladder() {
    let cfg = PolyUNetConfig::tiny(1);
    let p: ModelParams<f32> = cfg.init_params(8).unwrap();
    let mut s = Session::new(&p, Mode::Eval);
    let x = s.input(rand_tensor([2, 3, 64, 64], 9, -1.0).cast());
    let out = s.forward(&cfg, x, &ForwardOptions::default()).unwrap();
    assert_eq!(s.graph.value(out.logits).shape(), [2, 3, 64, 64]);
    for (i, v) in out.encoder.iter().enumerate() {
        let sh = s.graph.value(*v).shape();
        assert_eq!((sh[2], sh[1]), (64 >> i, cfg.widths[i]));
    }
    for (i, v) in out.decoder.iter().enumerate() {
        assert_eq!(s.graph.value(*v).shape()[2], 4 << i);
    }
    assert_eq!(out.taps.len(), 9);

    let bad = s.input(Tensor::zeros([1, 3, 24, 24]));
    assert!(s.forward(&cfg, bad, &ForwardOptions::default()).is_err());
    let wrong_c = s.input(Tensor::zeros([1, 5, 16, 16]));
    assert!(s.forward(&cfg, wrong_c, &ForwardOptions::default()).is_err());
}

#[test]
fn eval_forward_is_bitwise_repeatable() {
    let cfg = PolyUNetConfig::tiny(1);
    let p: ModelParams<f32> = cfg.init_params(10).unwrap();
    let x: Tensor<f32> = rand_tensor([1, 3, 32, 32], 11, -1.0).cast();
    let run = || {
        let mut s = Session::new(&p, Mode::Eval);
        let xv = s.input(x.clone());
        let out = s.forward(&cfg, xv, &ForwardOptions::default()).unwrap();
        s.graph
            .value(out.logits)
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn every_parameter_receives_gradient() {
    for share_f in [true, false] {
        let cfg = PolyUNetConfig {
            share_f,
            ..PolyUNetConfig::tiny(1)
        };
        let mut p: ModelParams<f64> = cfg.init_params(12).unwrap();
        let mut s = Session::new(&p, Mode::Train);
        let x = s.input(rand_tensor([2, 3, 16, 16], 13, -1.0));
        let out = s.forward(&cfg, x, &ForwardOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let target: Vec<u8> = (0..2 * 256).map(|_| rng.random_range(0..3)).collect();
        let loss = s
            .graph
            .weighted_cross_entropy(out.logits, &target, &[1.0, 2.0, 5.0])
            .unwrap();
        s.graph.backward(loss).unwrap();
        let (g, vars, stats) = s.finish();
        p.accumulate_grads(&g, &vars);
        for e in p.entries() {
            assert_eq!(e.touched, e.learnable, "{}", e.name);
            if e.learnable {
                assert!(e.grad.data().iter().all(|v| v.is_finite()));
                assert!(e.grad.data().iter().any(|&v| v != 0.0), "{}", e.name);
            }
        }
        assert!(!stats.is_empty());
        let before = p.get("enc1.conv1.bn.running_mean").unwrap().value.clone();
        update_running_stats(&mut p, &stats).unwrap();
        assert_ne!(p.get("enc1.conv1.bn.running_mean").unwrap().value, before);
    }
}

#[test]
fn skip_connections_are_live() {
    let cfg = PolyUNetConfig::tiny(1);
    let p: ModelParams<f64> = cfg.init_params(15).unwrap();
    let x = rand_tensor([1, 3, 16, 16], 16, -1.0);
    let run = |zero_skips| {
        let mut s = Session::new(&p, Mode::Eval);
        let xv = s.input(x.clone());
        let out = s.forward(&cfg, xv, &ForwardOptions { zero_skips }).unwrap();
        s.graph.value(out.logits).clone()
    };
    assert!(run(false).max_abs_diff(&run(true)) > 0.0);
}

fn volume(nz: usize, seed: u64) -> Volume<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..16 * 16 * nz).map(|_| rng.random_range(-1.0..1.0)).collect();
    Volume::new([16, 16, nz], Spacing::isotropic(), data, VolumeKind::Intensity).unwrap()
}

#[test]
fn predict_single_slice_volume() {
    let cfg = PolyUNetConfig::tiny(1);
    let p: ModelParams<f32> = cfg.init_params(17).unwrap();
    let probs = predict_volume(&volume(1, 18), &p, &cfg).unwrap();
    assert_eq!(probs.dims(), [16, 16, 1]);
    for i in 0..probs.voxels() {
        let s: f32 = (0..3).map(|c| probs.class(c)[i]).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
    assert!(probs.argmax().data().iter().all(|&l| l <= 2));
}

#[test]
fn predict_matches_manual_loop() {
    let cfg = PolyUNetConfig::tiny(1);
    let p: ModelParams<f32> = cfg.init_params(19).unwrap();
    let vol = volume(4, 20);
    let probs = predict_volume(&vol, &p, &cfg).unwrap();
    let plane = 256;
    for k in 0..4 {
        let stack = crate::preprocess::stack_adjacent(&vol, k, 1).unwrap();
        let mut s = Session::new(&p, Mode::Eval);
        let x = s.input(stacks_to_tensor(&[stack]).unwrap());
        let out = s.forward(&cfg, x, &ForwardOptions::default()).unwrap();
        let sm = crate::autodiff::softmax_channels(s.graph.value(out.logits));
        for c in 0..3 {
            let got = &probs.class(c)[k * plane..(k + 1) * plane];
            let want = &sm.data()[c * plane..(c + 1) * plane];
            assert!(got.iter().zip(want).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
