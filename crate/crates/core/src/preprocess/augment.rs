use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plane::{Plane, SliceStack};
use crate::error::{Error, Result};

/// Random in-plane rotation, isotropic scaling and horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Rotation drawn uniformly from `[-max, max]` degrees.
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Probability of mirroring columns.
    pub flip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_rotation_deg: 10.0,
            scale_min: 0.9,
            scale_max: 1.1,
            flip_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            max_rotation_deg: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            flip_probability: 0.0,
        }
    }

    pub fn flip_only() -> Self {
        AugmentConfig {
            flip_probability: 1.0,
            ..Self::identity()
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Transform {
    angle: f64,
    scale: f64,
    flip: bool,
}

impl Transform {
    fn sample(cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Self {
        let angle = if cfg.max_rotation_deg > 0.0 {
            rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
                .to_radians()
        } else {
            0.0
        };
        let scale = if cfg.scale_max > cfg.scale_min {
            rng.random_range(cfg.scale_min..=cfg.scale_max)
        } else {
            cfg.scale_min
        };
        let flip = rng.random_bool(cfg.flip_probability.clamp(0.0, 1.0));
        Transform { angle, scale, flip }
    }

    fn is_rigid_identity(&self) -> bool {
        self.angle == 0.0 && self.scale == 1.0
    }
}

/// Applies one random geometric transform, shared by every channel and the
/// label plane. Labels use nearest-neighbor sampling.
pub fn augment(
    stack: &SliceStack,
    labels: &Plane<u8>,
    seed: u64,
    cfg: &AugmentConfig,
) -> Result<(SliceStack, Plane<u8>)> {
    if (labels.h, labels.w) != (stack.h, stack.w) {
        return Err(Error::Dimension(format!(
            "label plane {}x{} does not match stack {}x{}",
            labels.h, labels.w, stack.h, stack.w
        )));
    }
    if cfg.scale_min <= 0.0 || cfg.scale_max < cfg.scale_min {
        return Err(Error::Parameter("scale range must be positive and ordered".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tf = Transform::sample(cfg, &mut rng);
    let (h, w) = (stack.h, stack.w);
    let n = h * w;

    if tf.is_rigid_identity() {
        if !tf.flip {
            return Ok((stack.clone(), labels.clone()));
        }
        let mut out = stack.clone();
        for c in 0..stack.channels() {
            flip_columns(&mut out.data[c * n..(c + 1) * n], h, w);
        }
        let mut lab = labels.clone();
        flip_columns(&mut lab.data, h, w);
        return Ok((out, lab));
    }

    // Inverse map: output pixel -> source coordinate.
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = tf.angle.sin_cos();
    let mut coords = Vec::with_capacity(n);
    for i in 0..h {
        for j in 0..w {
            let jj = if tf.flip { w - 1 - j } else { j } as f64;
            let u = jj - cx;
            let v = i as f64 - cy;
            let sx = cx + (cos * u + sin * v) / tf.scale;
            let sy = cy + (-sin * u + cos * v) / tf.scale;
            coords.push((sy.clamp(0.0, h as f64 - 1.0), sx.clamp(0.0, w as f64 - 1.0)));
        }
    }

    let mut data = Vec::with_capacity(stack.data.len());
    for c in 0..stack.channels() {
        let src = stack.channel(c);
        for &(sy, sx) in &coords {
            let r0 = sy.floor() as usize;
            let c0 = sx.floor() as usize;
            let r1 = (r0 + 1).min(h - 1);
            let c1 = (c0 + 1).min(w - 1);
            let (fy, fx) = ((sy - r0 as f64) as f32, (sx - c0 as f64) as f32);
            let top = src[r0 * w + c0] * (1.0 - fx) + src[r0 * w + c1] * fx;
            let bottom = src[r1 * w + c0] * (1.0 - fx) + src[r1 * w + c1] * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    let lab = coords
        .iter()
        .map(|&(sy, sx)| {
            let r = ((sy + 0.5).floor() as usize).min(h - 1);
            let c = ((sx + 0.5).floor() as usize).min(w - 1);
            labels.data[r * w + c]
        })
        .collect();

    Ok((
        SliceStack {
            h,
            w,
            t: stack.t,
            center: stack.center,
            data,
        },
        Plane { h, w, data: lab },
    ))
}

fn flip_columns<T>(data: &mut [T], h: usize, w: usize) {
    for row in data.chunks_exact_mut(w).take(h) {
        row.reverse();
    }
}
