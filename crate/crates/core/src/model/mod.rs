//! The PolyUNet encoder/decoder.
//!
//! Encoder: stage 1 is two conv3×3 units at full resolution; stages 2–5
//! halve the resolution with [`Session::downsample_expand`] and refine with
//! a polynomial module. Decoder: stage 5 applies a polynomial module to the
//! deepest feature; stages 4..1 upsample the deeper output with a 2×2
//! transposed convolution, concatenate the encoder feature of the same
//! resolution and apply a polynomial module. A 1×1 convolution maps to the
//! three class logits.
//!
//! A "conv unit" is conv3×3 (no bias) → batch norm → ReLU.

mod predict;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    kaiming_with_rng, BatchStats, BnMode, Graph, ModelParams, Real, Tensor, Var, BN_EPS, BN_MOMENTUM,
};
use crate::error::{shape_err, Error, Result};
use crate::preprocess::SliceStack;

pub use predict::{predict_volume, ProbVolume};

/// Number of output classes (background, liver, lesion).
pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyUNetConfig {
    /// `2t + 1` adjacent slices.
    pub in_channels: usize,
    /// Channels of encoder stages 1..=5.
    pub widths: [usize; 5],
    /// Depth of the polynomial module; only 3 is supported.
    pub poly_order: usize,
    /// Side length of the square slices the network sees.
    pub zoom_size: usize,
    /// Use one operator for all three polynomial paths.
    pub share_f: bool,
}

impl PolyUNetConfig {
    pub fn new(t: usize, widths: [usize; 5], zoom_size: usize, share_f: bool) -> Result<Self> {
        let cfg = PolyUNetConfig {
            in_channels: 2 * t + 1,
            widths,
            poly_order: 3,
            zoom_size,
            share_f,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Widths (16, 32, 64, 128, 256) on 64×64 slices.
    pub fn desk(t: usize) -> Self {
        PolyUNetConfig {
            in_channels: 2 * t + 1,
            widths: [16, 32, 64, 128, 256],
            poly_order: 3,
            zoom_size: 64,
            share_f: true,
        }
    }

    /// A very small network for gradient checks and fast tests.
    pub fn tiny(t: usize) -> Self {
        PolyUNetConfig {
            in_channels: 2 * t + 1,
            widths: [2, 3, 3, 4, 4],
            poly_order: 3,
            zoom_size: 16,
            share_f: true,
        }
    }

    pub fn context_radius(&self) -> usize {
        self.in_channels / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels % 2 == 0 {
            return Err(Error::Config(format!(
                "in_channels must be odd, got {}",
                self.in_channels
            )));
        }
        if self.widths[0] == 0 || self.widths.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!(
                "stage widths must be positive and non-decreasing, got {:?}",
                self.widths
            )));
        }
        if self.poly_order != 3 {
            return Err(Error::Config(format!("poly_order must be 3, got {}", self.poly_order)));
        }
        if self.zoom_size == 0 || self.zoom_size % 16 != 0 {
            return Err(Error::Config(format!(
                "zoom_size must be a positive multiple of 16, got {}",
                self.zoom_size
            )));
        }
        Ok(())
    }

    /// Channels produced by decoder stage `d` (1-based).
    fn decoder_channels(&self, d: usize) -> usize {
        if d == 5 {
            self.widths[4]
        } else {
            2 * self.widths[d - 1]
        }
    }

    fn poly_names(&self, prefix: &str) -> [String; 3] {
        if self.share_f {
            [0, 1, 2].map(|_| format!("{prefix}.f"))
        } else {
            [1, 2, 3].map(|i| format!("{prefix}.f{i}"))
        }
    }

    /// Creates freshly initialized parameters: Kaiming-normal kernels, zero
    /// biases, unit/zero batch-norm affine terms and running statistics.
    pub fn init_params<S: Real>(&self, seed: u64) -> Result<ModelParams<S>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::new();
        let w = self.widths;

        fn unit<S: Real>(
            p: &mut ModelParams<S>,
            rng: &mut ChaCha8Rng,
            name: &str,
            cin: usize,
            cout: usize,
        ) -> Result<()> {
            p.insert(
                format!("{name}.conv.w"),
                kaiming_with_rng([cout, cin, 3, 3], cin * 9, rng)?,
                true,
            )?;
            p.insert(
                format!("{name}.bn.gamma"),
                Tensor::full([1, cout, 1, 1], S::one()),
                true,
            )?;
            p.insert(format!("{name}.bn.beta"), Tensor::zeros([1, cout, 1, 1]), true)?;
            Ok(())
        }

        fn stats<S: Real>(p: &mut ModelParams<S>, key: &str, c: usize) -> Result<()> {
            p.insert(format!("{key}.bn.running_mean"), Tensor::zeros([1, c, 1, 1]), false)?;
            p.insert(
                format!("{key}.bn.running_var"),
                Tensor::full([1, c, 1, 1], S::one()),
                false,
            )?;
            Ok(())
        }

        fn plain<S: Real>(
            p: &mut ModelParams<S>,
            rng: &mut ChaCha8Rng,
            name: &str,
            cin: usize,
            cout: usize,
        ) -> Result<()> {
            unit(p, rng, name, cin, cout)?;
            stats(p, name, cout)
        }

        let poly = |p: &mut ModelParams<S>, rng: &mut ChaCha8Rng, prefix: &str, c: usize| -> Result<()> {
            let names = self.poly_names(prefix);
            if self.share_f {
                unit(p, rng, &names[0], c, c)?;
                for key in poly_stat_keys(&names) {
                    stats(p, &key, c)?;
                }
                Ok(())
            } else {
                names.iter().try_for_each(|n| plain(p, rng, n, c, c))
            }
        };

        plain(&mut p, &mut rng, "enc1.conv1", self.in_channels, w[0])?;
        plain(&mut p, &mut rng, "enc1.conv2", w[0], w[0])?;
        for s in 2..=5 {
            let extra = w[s - 1] - w[s - 2];
            if extra > 0 {
                plain(&mut p, &mut rng, &format!("enc{s}.down"), w[s - 2], extra)?;
            }
            poly(&mut p, &mut rng, &format!("enc{s}.poly"), w[s - 1])?;
        }
        for d in (1..=5).rev() {
            let c = self.decoder_channels(d);
            if d < 5 {
                let cin = self.decoder_channels(d + 1);
                let cout = w[d - 1];
                let kw = kaiming_with_rng([cin, cout, 2, 2], cin * 4, &mut rng)?;
                p.insert(format!("dec{d}.up.w"), kw, true)?;
                p.insert(format!("dec{d}.up.b"), Tensor::zeros([1, cout, 1, 1]), true)?;
            }
            poly(&mut p, &mut rng, &format!("dec{d}.poly"), c)?;
        }
        let c1 = self.decoder_channels(1);
        p.insert("head.w", kaiming_with_rng([NUM_CLASSES, c1, 1, 1], c1, &mut rng)?, true)?;
        p.insert("head.b", Tensor::zeros([1, NUM_CLASSES, 1, 1]), true)?;
        Ok(p)
    }
}

/// Running-statistics keys of the three polynomial depths. A shared operator
/// keeps one set per depth (`{name}.d1` ..= `{name}.d3`) because the inputs
/// of the three applications are distributed differently.
pub fn poly_stat_keys(names: &[String; 3]) -> [String; 3] {
    let shared = names[0] == names[1] && names[1] == names[2];
    std::array::from_fn(|i| {
        if shared {
            format!("{}.d{}", names[i], i + 1)
        } else {
            names[i].clone()
        }
    })
}

/// Intermediate values of one polynomial module.
#[derive(Debug, Clone, Copy)]
pub struct PolyTaps {
    pub input: Var,
    /// `F(x)`.
    pub p1: Var,
    /// `F(F(x))`.
    pub p2: Var,
    /// `F(F(F(x)))`.
    pub p3: Var,
    /// `ReLU(p1 + p2 + p3)`.
    pub output: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    /// Replace every skip connection with zeros (ablation).
    pub zero_skips: bool,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Outputs of encoder stages 1..=5.
    pub encoder: Vec<Var>,
    /// Outputs of decoder stages 5..=1, deepest first.
    pub decoder: Vec<Var>,
    /// Taps of every polynomial module in execution order, keyed by prefix.
    pub taps: Vec<(String, PolyTaps)>,
}

/// One recording of the network on a graph.
pub struct Session<'p, S: Real> {
    pub graph: Graph<S>,
    params: &'p ModelParams<S>,
    vars: Vec<Var>,
    mode: Mode,
    stats: Vec<(String, BatchStats<S>)>,
}

impl<'p, S: Real> Session<'p, S> {
    pub fn new(params: &'p ModelParams<S>, mode: Mode) -> Self {
        let mut graph = Graph::new();
        let vars = params.bind(&mut graph, mode == Mode::Train);
        Session {
            graph,
            params,
            vars,
            mode,
            stats: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        self.params
            .id(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn input(&mut self, x: Tensor<S>) -> Var {
        self.graph.constant(x)
    }

    /// conv3×3 (stride 1 or 2, pad 1) → batch norm → ReLU.
    pub fn conv_unit(&mut self, name: &str, x: Var, stride: usize) -> Result<Var> {
        self.conv_unit_with_stats(name, name, x, stride)
    }

    /// [`Self::conv_unit`] with weights under `name` and running statistics
    /// under `stats_key`.
    pub fn conv_unit_with_stats(&mut self, name: &str, stats_key: &str, x: Var, stride: usize) -> Result<Var> {
        let w = self.param(&format!("{name}.conv.w"))?;
        let gamma = self.param(&format!("{name}.bn.gamma"))?;
        let beta = self.param(&format!("{name}.bn.beta"))?;
        let y = self.graph.conv2d(x, w, None, stride, 1)?;
        let mode = match self.mode {
            Mode::Train => BnMode::Train { eps: BN_EPS },
            Mode::Eval => {
                let get = |suffix: &str| -> Result<Vec<S>> {
                    Ok(self
                        .params
                        .get(&format!("{stats_key}.bn.{suffix}"))
                        .ok_or_else(|| Error::Config(format!("missing {stats_key}.bn.{suffix}")))?
                        .value
                        .data()
                        .to_vec())
                };
                BnMode::Eval {
                    mean: get("running_mean")?,
                    var: get("running_var")?,
                    eps: BN_EPS,
                }
            }
        };
        let (z, stats) = self.graph.batchnorm(y, gamma, beta, &mode)?;
        if let Some(s) = stats {
            self.stats.push((stats_key.to_string(), s));
        }
        Ok(self.graph.relu(z))
    }

    /// `ReLU(F(x) + F(F(x)) + F(F(F(x))))`.
    pub fn poly_module(&mut self, prefix: &str, names: &[String; 3], x: Var) -> Result<PolyTaps> {
        let c = self.graph.value(x).shape()[1];
        let wc = self
            .params
            .get(&format!("{}.conv.w", names[0]))
            .ok_or_else(|| Error::Config(format!("missing polynomial operator for {prefix}")))?
            .value
            .shape();
        if wc[0] != c || wc[1] != c {
            return Err(shape_err!(
                "{prefix}: operator maps {} -> {} channels, input has {c}",
                wc[1],
                wc[0]
            ));
        }
        let keys = poly_stat_keys(names);
        let p1 = self.conv_unit_with_stats(&names[0], &keys[0], x, 1)?;
        let p2 = self.conv_unit_with_stats(&names[1], &keys[1], p1, 1)?;
        let p3 = self.conv_unit_with_stats(&names[2], &keys[2], p2, 1)?;
        let s = self.graph.add(p1, p2)?;
        let s = self.graph.add(s, p3)?;
        let output = self.graph.relu(s);
        Ok(PolyTaps {
            input: x,
            p1,
            p2,
            p3,
            output,
        })
    }

    /// `concat(maxpool2x2(x), conv_unit_stride2(x))`; the pooled channels
    /// come first. Without a `{name}.conv.w` entry only the pooled half is kept.
    pub fn downsample_expand(&mut self, name: &str, x: Var) -> Result<Var> {
        let pooled = self.graph.maxpool2x2(x)?;
        if self.params.id(&format!("{name}.conv.w")).is_none() {
            return Ok(pooled);
        }
        let extra = self.conv_unit(name, x, 2)?;
        self.graph.concat_channels(pooled, extra)
    }

    /// Full network on an `(N, 2t+1, H, W)` input with `H`, `W` divisible by 16.
    pub fn forward(&mut self, cfg: &PolyUNetConfig, x: Var, opts: &ForwardOptions) -> Result<ForwardOutput> {
        let [_, c, h, w] = self.graph.value(x).shape();
        if c != cfg.in_channels {
            return Err(shape_err!(
                "network expects {} input channels, got {c}",
                cfg.in_channels
            ));
        }
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(shape_err!("input {h}x{w} is not divisible by 16"));
        }
        let mut taps = Vec::new();
        let mut enc = Vec::with_capacity(5);
        let a = self.conv_unit("enc1.conv1", x, 1)?;
        enc.push(self.conv_unit("enc1.conv2", a, 1)?);
        for s in 2..=5 {
            let down = self.downsample_expand(&format!("enc{s}.down"), enc[s - 2])?;
            let prefix = format!("enc{s}.poly");
            let t = self.poly_module(&prefix, &cfg.poly_names(&prefix), down)?;
            taps.push((prefix, t));
            enc.push(t.output);
        }

        let mut dec = Vec::with_capacity(5);
        let prefix = "dec5.poly".to_string();
        let t = self.poly_module(&prefix, &cfg.poly_names(&prefix), enc[4])?;
        taps.push((prefix, t));
        let mut cur = t.output;
        dec.push(cur);
        for d in (1..=4).rev() {
            let wk = self.param(&format!("dec{d}.up.w"))?;
            let bk = self.param(&format!("dec{d}.up.b"))?;
            let up = self.graph.deconv2x2(cur, wk, Some(bk))?;
            let skip = if opts.zero_skips {
                let shape = self.graph.value(enc[d - 1]).shape();
                self.graph.constant(Tensor::zeros(shape))
            } else {
                enc[d - 1]
            };
            let cat = self.graph.concat_channels(up, skip)?;
            let prefix = format!("dec{d}.poly");
            let t = self.poly_module(&prefix, &cfg.poly_names(&prefix), cat)?;
            taps.push((prefix, t));
            cur = t.output;
            dec.push(cur);
        }
        let hw = self.param("head.w")?;
        let hb = self.param("head.b")?;
        let logits = self.graph.conv2d(cur, hw, Some(hb), 1, 0)?;
        Ok(ForwardOutput {
            logits,
            encoder: enc,
            decoder: dec,
            taps,
        })
    }

    /// Ends the recording, returning the graph, the leaf handles of every
    /// parameter entry and the batch statistics gathered in train mode.
    pub fn finish(self) -> (Graph<S>, Vec<Var>, Vec<(String, BatchStats<S>)>) {
        (self.graph, self.vars, self.stats)
    }
}

/// Exponential moving average of running statistics:
/// `r ← (1 − m)·r + m·batch`, applied in recording order.
pub fn update_running_stats<S: Real>(params: &mut ModelParams<S>, stats: &[(String, BatchStats<S>)]) -> Result<()> {
    let m = S::of(BN_MOMENTUM);
    for (name, s) in stats {
        for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
            let id = params
                .id(&format!("{name}.bn.{suffix}"))
                .ok_or_else(|| Error::Config(format!("missing {name}.bn.{suffix}")))?;
            for (r, &b) in params.entry_mut(id).value.data_mut().iter_mut().zip(batch) {
                *r = (S::one() - m) * *r + m * b;
            }
        }
    }
    Ok(())
}

/// Packs slice stacks into an `(N, 2t+1, H, W)` tensor.
pub fn stacks_to_tensor<S: Real>(stacks: &[SliceStack]) -> Result<Tensor<S>> {
    let first = stacks.first().ok_or_else(|| Error::Parameter("empty batch".into()))?;
    let (c, h, w) = (first.channels(), first.h, first.w);
    let mut data = Vec::with_capacity(stacks.len() * c * h * w);
    for s in stacks {
        if (s.channels(), s.h, s.w) != (c, h, w) {
            return Err(shape_err!("batch mixes stack shapes"));
        }
        data.extend(s.data.iter().map(|&v| S::of(v as f64)));
    }
    Tensor::new([stacks.len(), c, h, w], data)
}

#[cfg(test)]
mod tests;
