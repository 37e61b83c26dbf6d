//! Stochastic gradient training of one stage.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sampling::TrainingSet;
use super::{lr_at, TrainConfig};
use crate::autodiff::{sgd_step, ModelParams, Real, SgdState};
use crate::dataset::Case;
use crate::error::{Error, Result};
use crate::model::{stacks_to_tensor, update_running_stats, ForwardOptions, Mode, Session};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Training state of one stage. Each iteration draws its batch from a
/// random stream keyed by `(seed, iteration)`, so a resumed run replays the
/// exact batches an uninterrupted run would have seen.
pub struct Trainer<S: Real> {
    cfg: TrainConfig,
    data: TrainingSet,
    params: ModelParams<S>,
    state: SgdState<S>,
}

impl<S: Real> Trainer<S> {
    pub fn new(cases: &[Case], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.model.init_params(cfg.seed)?;
        let state = SgdState::new(&params, cfg.sgd);
        Ok(Trainer {
            data: TrainingSet::new(cases, &cfg)?,
            cfg,
            params,
            state,
        })
    }

    /// Continues from saved weights and optimizer state.
    pub fn resume(cases: &[Case], cfg: TrainConfig, params: ModelParams<S>, state: SgdState<S>) -> Result<Self> {
        cfg.validate()?;
        let expected: ModelParams<S> = cfg.model.init_params(0)?;
        if expected.shapes() != params.shapes() {
            return Err(Error::Config(
                "checkpoint does not match the model configuration".into(),
            ));
        }
        state.check_compatible(&params)?;
        Ok(Trainer {
            data: TrainingSet::new(cases, &cfg)?,
            cfg,
            params,
            state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.state.iteration
    }

    pub fn params(&self) -> &ModelParams<S> {
        &self.params
    }

    pub fn state(&self) -> &SgdState<S> {
        &self.state
    }

    pub fn into_parts(self) -> (ModelParams<S>, SgdState<S>) {
        (self.params, self.state)
    }

    pub fn step(&mut self) -> Result<IterRecord> {
        let iter = self.state.iteration;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(iter);
        let mut stacks = Vec::with_capacity(self.cfg.batch_size);
        let mut targets = Vec::new();
        for _ in 0..self.cfg.batch_size {
            let (stack, labels) = self.data.draw(&mut rng, &self.cfg)?;
            stacks.push(stack);
            targets.extend_from_slice(&labels.data);
        }
        let x = stacks_to_tensor::<S>(&stacks)?;

        self.params.zero_grad();
        let mut s = Session::new(&self.params, Mode::Train);
        let x = s.input(x);
        let out = s.forward(&self.cfg.model, x, &ForwardOptions::default())?;
        let loss = s
            .graph
            .weighted_cross_entropy(out.logits, &targets, &self.cfg.class_weights.as_array())?;
        let loss_value = s.graph.value(loss).item().f64();
        if !loss_value.is_finite() {
            return Err(Error::Graph(format!("non-finite loss at iteration {iter}")));
        }
        s.graph.backward(loss)?;
        let (graph, vars, stats) = s.finish();
        self.params.accumulate_grads(&graph, &vars);
        update_running_stats(&mut self.params, &stats)?;
        let lr = lr_at(iter, &self.cfg);
        sgd_step(&mut self.params, &mut self.state, lr)?;
        Ok(IterRecord {
            iter,
            lr,
            loss: loss_value,
        })
    }

    /// Steps until `total_iters` iterations are complete.
    pub fn run(&mut self, mut on_iter: impl FnMut(&IterRecord)) -> Result<Vec<IterRecord>> {
        let mut log = Vec::new();
        while self.state.iteration < self.cfg.total_iters {
            let r = self.step()?;
            on_iter(&r);
            log.push(r);
        }
        Ok(log)
    }
}

/// Trains one stage from scratch and returns the weights with the loss log.
pub fn train_stage<S: Real>(cases: &[Case], cfg: &TrainConfig) -> Result<(ModelParams<S>, Vec<IterRecord>)> {
    let mut trainer = Trainer::new(cases, cfg.clone())?;
    let log = trainer.run(|_| {})?;
    Ok((trainer.into_parts().0, log))
}

/// Writes `iter,lr,loss` rows; the header is written unless appending to a
/// non-empty file.
pub fn write_loss_csv(path: impl AsRef<Path>, records: &[IterRecord], append: bool) -> Result<()> {
    let path = path.as_ref();
    let existing = append && path.metadata().map(|m| m.len() > 0).unwrap_or(false);
    let mut f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if !existing {
        text.push_str("iter,lr,loss\n");
    }
    for r in records {
        text.push_str(&format!("{},{:e},{}\n", r.iter, r.lr, r.loss));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<IterRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 || line.is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("{}:{}: malformed loss row", path.display(), n + 1));
        let mut it = line.split(',');
        let mut next = || it.next().ok_or_else(bad);
        let iter = next()?.parse().map_err(|_| bad())?;
        let lr = next()?.parse().map_err(|_| bad())?;
        let loss = next()?.parse().map_err(|_| bad())?;
        out.push(IterRecord { iter, lr, loss });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::Stage;
    use super::*;
    use crate::model::PolyUNetConfig;
    use crate::preprocess::AugmentConfig;
    use crate::synth::{generate_phantom, PhantomConfig};

    fn small_case(seed: u64) -> Case {
        let cfg = PhantomConfig {
            dims: [32, 32, 8],
            liver_center: [16.0, 16.0, 4.0],
            liver_radii: [10.0, 8.0, 3.5],
            lesion_count: [1, 1],
            lesion_radius: [2.0, 2.5],
            seed,
            ..Default::default()
        };
        let p = generate_phantom(&cfg).unwrap();
        Case {
            name: format!("p{seed}"),
            ct: p.ct.to_f32(),
            labels: p.labels,
        }
    }

    fn tiny_cfg(stage: Stage, lr: f64, iters: u64) -> TrainConfig {
        TrainConfig {
            model: PolyUNetConfig::tiny(1),
            lr,
            lr_period: iters,
            total_iters: iters,
            batch_size: 2,
            seed: 5,
            augment: AugmentConfig::default(),
            roi_pad: [2, 2, 1],
            roi_jitter: [1, 1, 0],
            sgd: crate::autodiff::SgdConfig {
                momentum: 0.9,
                weight_decay: 5e-4,
            },
            ..TrainConfig::desk(stage)
        }
    }

    #[test]
    fn zero_lr_keeps_learnable_weights() {
        let cases = [small_case(1)];
        let cfg = tiny_cfg(Stage::One, 0.0, 5);
        let init: ModelParams<f64> = cfg.model.init_params(cfg.seed).unwrap();
        let (p, log) = train_stage::<f64>(&cases, &cfg).unwrap();
        assert_eq!(log.len(), 5);
        for (a, b) in p.entries().iter().zip(init.entries()) {
            if a.learnable {
                assert_eq!(a.value, b.value, "{}", a.name);
            }
        }
    }

    #[test]
    fn same_seed_same_curve() {
        let cases = [small_case(1), small_case(2)];
        for stage in [Stage::One, Stage::Two] {
            let cfg = tiny_cfg(stage, 0.01, 6);
            let (pa, a) = train_stage::<f64>(&cases, &cfg).unwrap();
            let (pb, b) = train_stage::<f64>(&cases, &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(pa.entries().len(), pb.entries().len());
            for (x, y) in pa.entries().iter().zip(pb.entries()) {
                assert_eq!(x.value, y.value);
            }
        }
    }

    #[test]
    fn resume_replays_uninterrupted_run() {
        let cases = [small_case(3)];
        let cfg = tiny_cfg(Stage::Two, 0.01, 6);
        let (_, full) = train_stage::<f32>(&cases, &cfg).unwrap();

        let mut t = Trainer::<f32>::new(&cases, cfg.clone()).unwrap();
        let first: Vec<_> = (0..3).map(|_| t.step().unwrap()).collect();
        let (p, s) = t.into_parts();
        let bytes_w = crate::autodiff::encode_weights(&p);
        let bytes_s = crate::autodiff::encode_state(&p, &s);
        let mut p2: ModelParams<f32> = cfg.model.init_params(99).unwrap();
        for (name, v) in crate::autodiff::decode_weights(&bytes_w).unwrap() {
            p2.set_value(&name, v.cast()).unwrap();
        }
        let s2 = crate::autodiff::decode_state(&bytes_s, &p2).unwrap();
        let mut t2 = Trainer::resume(&cases, cfg, p2, s2).unwrap();
        assert_eq!(t2.iteration(), 3);
        let rest = t2.run(|_| {}).unwrap();
        assert_eq!(rest.len(), 3);
        assert_eq!(rest[0].iter, 3);
        let joined: Vec<_> = first.into_iter().chain(rest).collect();
        assert_eq!(joined, full);
    }

    #[test]
    fn loss_decreases_on_one_volume() {
        let cases = [small_case(4)];
        let cfg = TrainConfig {
            augment: AugmentConfig::identity(),
            ..tiny_cfg(Stage::One, 0.01, 200)
        };
        let (_, log) = train_stage::<f32>(&cases, &cfg).unwrap();
        let head = log[0].loss;
        let tail = log[log.len() - 10..].iter().map(|r| r.loss).sum::<f64>() / 10.0;
        assert!(tail < head, "initial {head}, final mean {tail}");
    }

    #[test]
    fn empty_training_set_is_config_error() {
        let cfg = tiny_cfg(Stage::One, 0.01, 1);
        assert!(matches!(Trainer::<f32>::new(&[], cfg), Err(Error::Config(_))));
    }

    #[test]
    fn loss_csv_round_trip_and_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let a = [IterRecord {
            iter: 0,
            lr: 1e-3,
            loss: 1.25,
        }];
        let b = [IterRecord {
            iter: 1,
            lr: 1e-4,
            loss: 0.5,
        }];
        write_loss_csv(&path, &a, false).unwrap();
        write_loss_csv(&path, &b, true).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some("iter,lr,loss"));
        assert_eq!(read_loss_csv(&path).unwrap(), vec![a[0], b[0]]);
    }
}
