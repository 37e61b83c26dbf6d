//! Finite-difference verification of the tape gradients in 64-bit floats.
//!
//! Each check builds a scalar loss (non-scalar outputs are projected onto a
//! fixed random tensor), perturbs sampled input coordinates by `±ε` and
//! compares the central difference with the analytic gradient. Samples
//! whose perturbation changes a ReLU sign or a max-pool winner are skipped.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{BnMode, Graph, ModelParams, Tensor, Var, BN_EPS};
use crate::error::{Error, Result};
use crate::model::{ForwardOptions, Mode, PolyUNetConfig, Session, NUM_CLASSES};

pub const EPSILON: f64 = 1e-5;
/// Tolerance for single operators.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for the whole network.
pub const NETWORK_TOLERANCE: f64 = 1e-3;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-6;

/// Names accepted by the filter of [`run_gradcheck`].
pub const CHECKS: [&str; 10] = [
    "conv1x1",
    "conv3x3",
    "conv3x3_stride2",
    "deconv",
    "maxpool",
    "batchnorm",
    "relu",
    "concat",
    "weighted_ce",
    "polyunet",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

fn rand_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches length")
}

fn rel_error(num: f64, ana: f64) -> f64 {
    (num - ana).abs() / num.abs().max(ana.abs()).max(REL_FLOOR)
}

struct Probe {
    loss: f64,
    kinks: u64,
    grads: Vec<Tensor<f64>>,
}

/// Coordinates to perturb: all of them when `limit` covers the tensor.
fn coords(numel: usize, limit: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if numel <= limit {
        (0..numel).collect()
    } else {
        let mut v = sample(rng, numel, limit).into_vec();
        v.sort_unstable();
        v
    }
}

fn compare(
    name: &str,
    inputs: &[Tensor<f64>],
    limit: usize,
    tolerance: f64,
    rng: &mut ChaCha8Rng,
    eval: impl Fn(&[Tensor<f64>], bool) -> Result<Probe>,
) -> Result<CheckResult> {
    let base = eval(inputs, true)?;
    let (mut worst, mut checked, mut skipped) = (0f64, 0, 0);
    for (k, t) in inputs.iter().enumerate() {
        for i in coords(t.numel(), limit, rng) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += EPSILON;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= EPSILON;
            let p = eval(&plus, false)?;
            let m = eval(&minus, false)?;
            if p.kinks != base.kinks || m.kinks != base.kinks {
                skipped += 1;
                continue;
            }
            let num = (p.loss - m.loss) / (2.0 * EPSILON);
            worst = worst.max(rel_error(num, base.grads[k].data()[i]));
            checked += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_error: worst,
        tolerance,
        checked,
        skipped,
        passed: checked > 0 && worst < tolerance,
    })
}

/// Checks a graph function of leaf inputs.
fn check_op(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<CheckResult> {
    let proj_seed: u64 = rng.random();
    let eval = |vals: &[Tensor<f64>], with_grad: bool| -> Result<Probe> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let y = f(&mut g, &vars)?;
        let loss = if g.value(y).numel() == 1 {
            y
        } else {
            let r = rand_tensor(g.value(y).shape(), &mut ChaCha8Rng::seed_from_u64(proj_seed));
            let r = g.constant(r);
            let m = g.mul(y, r)?;
            g.sum(m)
        };
        let kinks = g.kink_signature();
        let value = g.value(loss).item();
        let mut grads = Vec::new();
        if with_grad {
            g.backward(loss)?;
            grads = vars
                .iter()
                .map(|v| {
                    g.grad(*v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(g.value(*v).shape()))
                })
                .collect();
        }
        Ok(Probe {
            loss: value,
            kinks,
            grads,
        })
    };
    compare(name, &inputs, 48, OP_TOLERANCE, rng, eval)
}

/// Checks every learnable tensor of the tiny network (sampled coordinates)
/// under a weighted cross-entropy loss in train mode. The 32×32 input keeps
/// eight values per channel in the deepest batch norm; with only two the
/// loss is curved enough that ε = 1e-5 truncation error exceeds 1e-3.
fn check_network(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let cfg = PolyUNetConfig::tiny(1);
    let template: ModelParams<f64> = cfg.init_params(rng.random())?;
    let learnable: Vec<usize> = (0..template.len()).filter(|&i| template.entry(i).learnable).collect();
    let x = rand_tensor([2, cfg.in_channels, 32, 32], rng);
    let target: Vec<u8> = (0..2 * 32 * 32)
        .map(|_| rng.random_range(0..NUM_CLASSES as u8))
        .collect();
    let weights = [1.0, 2.0, 5.0];
    let inputs: Vec<Tensor<f64>> = learnable.iter().map(|&i| template.entry(i).value.clone()).collect();

    let eval = |vals: &[Tensor<f64>], with_grad: bool| -> Result<Probe> {
        let mut p = template.clone();
        for (&i, v) in learnable.iter().zip(vals) {
            p.entry_mut(i).value = v.clone();
        }
        p.zero_grad();
        let mut s = Session::new(&p, Mode::Train);
        let xi = s.input(x.clone());
        let out = s.forward(&cfg, xi, &ForwardOptions::default())?;
        let loss = s.graph.weighted_cross_entropy(out.logits, &target, &weights)?;
        let kinks = s.graph.kink_signature();
        let value = s.graph.value(loss).item();
        let mut grads = Vec::new();
        if with_grad {
            s.graph.backward(loss)?;
            let (g, vars, _) = s.finish();
            p.accumulate_grads(&g, &vars);
            grads = learnable.iter().map(|&i| p.entry(i).grad.clone()).collect();
        }
        Ok(Probe {
            loss: value,
            kinks,
            grads,
        })
    };
    compare("polyunet", &inputs, 4, NETWORK_TOLERANCE, rng, eval)
}

/// Runs the checks whose name contains `filter` (all when `None`).
pub fn run_gradcheck(seed: u64, filter: Option<&str>) -> Result<Vec<CheckResult>> {
    let selected: Vec<&str> = CHECKS
        .iter()
        .copied()
        .filter(|c| filter.is_none_or(|f| c.contains(f)))
        .collect();
    if selected.is_empty() {
        return Err(Error::Config(format!(
            "filter {:?} matches no check; available: {}",
            filter.unwrap_or(""),
            CHECKS.join(", ")
        )));
    }
    let mut out = Vec::new();
    for (k, name) in selected.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let r = &mut rng;
        let res = match name {
            "conv1x1" | "conv3x3" | "conv3x3_stride2" => {
                let (k, stride, pad) = match name {
                    "conv1x1" => (1, 1, 0),
                    "conv3x3" => (3, 1, 1),
                    _ => (3, 2, 1),
                };
                let inputs = vec![
                    rand_tensor([2, 3, 6, 6], r),
                    rand_tensor([4, 3, k, k], r),
                    rand_tensor([1, 4, 1, 1], r),
                ];
                check_op(name, inputs, r, |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad))?
            }
            "deconv" => {
                let inputs = vec![
                    rand_tensor([2, 3, 3, 4], r),
                    rand_tensor([3, 2, 2, 2], r),
                    rand_tensor([1, 2, 1, 1], r),
                ];
                check_op(name, inputs, r, |g, v| g.deconv2x2(v[0], v[1], Some(v[2])))?
            }
            "maxpool" => check_op(name, vec![rand_tensor([2, 2, 6, 6], r)], r, |g, v| g.maxpool2x2(v[0]))?,
            "batchnorm" => {
                let inputs = vec![
                    rand_tensor([3, 2, 4, 4], r),
                    rand_tensor([1, 2, 1, 1], r),
                    rand_tensor([1, 2, 1, 1], r),
                ];
                check_op(name, inputs, r, |g, v| {
                    Ok(g.batchnorm(v[0], v[1], v[2], &BnMode::Train { eps: BN_EPS })?.0)
                })?
            }
            "relu" => check_op(name, vec![rand_tensor([2, 3, 5, 5], r)], r, |g, v| Ok(g.relu(v[0])))?,
            "concat" => {
                let inputs = vec![rand_tensor([2, 2, 3, 3], r), rand_tensor([2, 3, 3, 3], r)];
                check_op(name, inputs, r, |g, v| g.concat_channels(v[0], v[1]))?
            }
            "weighted_ce" => {
                let target: Vec<u8> = (0..2 * 16).map(|_| r.random_range(0..3)).collect();
                check_op(name, vec![rand_tensor([2, 3, 4, 4], r)], r, move |g, v| {
                    g.weighted_cross_entropy(v[0], &target, &[1.0, 2.0, 5.0])
                })?
            }
            "polyunet" => check_network(r)?,
            _ => unreachable!("names come from CHECKS"),
        };
        out.push(res);
    }
    Ok(out)
}

/// Fixed-width pass/fail table.
pub fn render_table(results: &[CheckResult]) -> String {
    let mut s = format!(
        "{:<16} {:>12} {:>9} {:>8} {:>8}  result\n",
        "check", "max rel err", "tol", "checked", "skipped"
    );
    for r in results {
        let _ = writeln!(
            s,
            "{:<16} {:>12.3e} {:>9.0e} {:>8} {:>8}  {}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.checked,
            r.skipped,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    s
}
