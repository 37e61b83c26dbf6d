//! Synthetic abdominal phantoms: a noisy background, an ellipsoidal liver
//! and spherical lesions placed fully inside it.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::io::save_segv;
use crate::volume::{Spacing, Volume, VolumeKind, BACKGROUND, LESION, LIVER};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensity {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing: Spacing,
    /// Ellipsoid center and semi-axes in voxels.
    pub liver_center: [f64; 3],
    pub liver_radii: [f64; 3],
    /// Inclusive range of the lesion count.
    pub lesion_count: [usize; 2],
    /// Range of lesion radii in voxels.
    pub lesion_radius: [f64; 2],
    pub background: Intensity,
    pub liver: Intensity,
    pub lesion: Intensity,
    /// Additive Gaussian noise on every voxel.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [64, 64, 32],
            spacing: Spacing {
                sx: 1.0,
                sy: 1.0,
                sz: 2.5,
            },
            liver_center: [32.0, 32.0, 16.0],
            liver_radii: [20.0, 15.0, 10.0],
            lesion_count: [1, 3],
            lesion_radius: [3.0, 5.0],
            background: Intensity { mean: -100.0, std: 0.0 },
            liver: Intensity { mean: 120.0, std: 0.0 },
            lesion: Intensity { mean: 50.0, std: 0.0 },
            noise_std: 15.0,
            seed: 0,
        }
    }
}

/// Placement attempts per lesion before giving up.
const MAX_TRIES: usize = 2000;

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Config("phantom dims must be positive".into()));
        }
        if self.liver_radii.iter().any(|&r| r < 1.0) {
            return Err(Error::Config("liver radii must be at least 1 voxel".into()));
        }
        if self.lesion_count[0] > self.lesion_count[1] {
            return Err(Error::Config("lesion count range is reversed".into()));
        }
        if self.lesion_radius[0] < 1.0 || self.lesion_radius[0] > self.lesion_radius[1] {
            return Err(Error::Config("lesion radii must be >= 1 and ordered".into()));
        }
        if self.noise_std < 0.0 || self.background.std < 0.0 || self.liver.std < 0.0 || self.lesion.std < 0.0 {
            return Err(Error::Config("standard deviations must be non-negative".into()));
        }
        Ok(())
    }

    fn in_liver(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.liver_center[a]) / self.liver_radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Spheres already placed, as (center, radius).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Sphere {
    fn voxels(&self, dims: [usize; 3]) -> impl Iterator<Item = [usize; 3]> + '_ {
        let lo = |a: usize| (self.center[a] - self.radius).floor().max(0.0) as usize;
        let hi = move |a: usize| ((self.center[a] + self.radius).ceil() as usize).min(dims[a] - 1);
        let (x0, x1, y0, y1, z0, z1) = (lo(0), hi(0), lo(1), hi(1), lo(2), hi(2));
        (z0..=z1).flat_map(move |z| {
            (y0..=y1).flat_map(move |y| {
                (x0..=x1).filter_map(move |x| {
                    let d2 = (x as f64 - self.center[0]).powi(2)
                        + (y as f64 - self.center[1]).powi(2)
                        + (z as f64 - self.center[2]).powi(2);
                    (d2 <= self.radius * self.radius).then_some([x, y, z])
                })
            })
        })
    }

    /// Every point of the ball lies inside the volume and the liver.
    fn fits(&self, cfg: &PhantomConfig) -> bool {
        let d = cfg.dims;
        if (0..3).any(|a| self.center[a] - self.radius < 0.0 || self.center[a] + self.radius > (d[a] - 1) as f64) {
            return false;
        }
        // Sample the sphere surface densely; the ellipsoid is convex, so a
        // surface inside it implies the whole ball is.
        let steps = 24;
        for i in 0..=steps {
            let theta = std::f64::consts::PI * i as f64 / steps as f64;
            for j in 0..2 * steps {
                let phi = std::f64::consts::PI * j as f64 / steps as f64;
                let p = [
                    self.center[0] + self.radius * theta.sin() * phi.cos(),
                    self.center[1] + self.radius * theta.sin() * phi.sin(),
                    self.center[2] + self.radius * theta.cos(),
                ];
                if !cfg.in_liver(p) {
                    return false;
                }
            }
        }
        true
    }

    fn separated(&self, other: &Sphere) -> bool {
        let d2: f64 = (0..3).map(|a| (self.center[a] - other.center[a]).powi(2)).sum();
        d2.sqrt() > self.radius + other.radius + 2.0
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub ct: Volume<i16>,
    pub labels: Volume<u8>,
    pub lesions: Vec<Sphere>,
}

/// Draws one phantom. Lesions are kept at least two voxels apart so each
/// sphere is its own connected component.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let [nx, ny, nz] = cfg.dims;
    let mut labels = vec![BACKGROUND; nx * ny * nz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if cfg.in_liver([x as f64, y as f64, z as f64]) {
                    labels[x + nx * (y + ny * z)] = LIVER;
                }
            }
        }
    }

    let count = rng.random_range(cfg.lesion_count[0]..=cfg.lesion_count[1]);
    let mut lesions: Vec<Sphere> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = None;
        for _ in 0..MAX_TRIES {
            let radius = if cfg.lesion_radius[1] > cfg.lesion_radius[0] {
                rng.random_range(cfg.lesion_radius[0]..=cfg.lesion_radius[1])
            } else {
                cfg.lesion_radius[0]
            };
            let center: [f64; 3] = std::array::from_fn(|a| {
                let r = (cfg.liver_radii[a] - radius).max(0.0);
                cfg.liver_center[a] + rng.random_range(-r..=r)
            });
            let s = Sphere { center, radius };
            if s.fits(cfg) && lesions.iter().all(|o| s.separated(o)) {
                placed = Some(s);
                break;
            }
        }
        let s = placed.ok_or_else(|| {
            Error::Generation(format!(
                "could not place lesion {} of {count} after {MAX_TRIES} attempts",
                lesions.len() + 1
            ))
        })?;
        for [x, y, z] in s.voxels(cfg.dims) {
            labels[x + nx * (y + ny * z)] = LESION;
        }
        lesions.push(s);
    }

    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::Generation(e.to_string()))?;
    let ct = labels
        .iter()
        .map(|&l| {
            let c = match l {
                LIVER => cfg.liver,
                LESION => cfg.lesion,
                _ => cfg.background,
            };
            let v = c.mean + c.std * noise.sample(&mut rng) + cfg.noise_std * noise.sample(&mut rng);
            v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
        })
        .collect();
    Ok(Phantom {
        ct: Volume::new(cfg.dims, cfg.spacing, ct, VolumeKind::Intensity)?,
        labels: Volume::new(cfg.dims, cfg.spacing, labels, VolumeKind::Label)?,
        lesions,
    })
}

/// Geometry jitter applied per phantom of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Center shift, uniform in `[-v, v]` voxels per axis.
    pub center: f64,
    /// Radius scale, uniform in `[1 - v, 1 + v]` per axis.
    pub radius: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            center: 3.0,
            radius: 0.1,
        }
    }
}

/// Writes `n` jittered phantoms as SEGV1 files plus `manifest.json` into
/// `out`. The first `round(n · train_fraction)` cases are the training split.
pub fn generate_dataset(
    n: usize,
    base: &PhantomConfig,
    jitter: Jitter,
    seed: u64,
    train_fraction: f64,
    out: impl AsRef<Path>,
) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::Config("dataset needs at least one phantom".into()));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config("train fraction must be in [0, 1]".into()));
    }
    let out = out.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = (n as f64 * train_fraction).round() as usize;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let mut cfg = base.clone();
        cfg.seed = rng.random();
        for a in 0..3 {
            if jitter.center > 0.0 {
                cfg.liver_center[a] += rng.random_range(-jitter.center..=jitter.center);
            }
            if jitter.radius > 0.0 {
                cfg.liver_radii[a] *= rng.random_range(1.0 - jitter.radius..=1.0 + jitter.radius);
            }
        }
        let ph = generate_phantom(&cfg)?;
        let ct: PathBuf = format!("case_{i:03}_ct.segv").into();
        let label: PathBuf = format!("case_{i:03}_label.segv").into();
        save_segv(&ph.ct, out.join(&ct))?;
        save_segv(&ph.labels, out.join(&label))?;
        entries.push(ManifestEntry {
            ct,
            label,
            split: if i < n_train { Split::Train } else { Split::Test },
        });
    }
    let manifest = Manifest {
        entries,
        root: out.to_path_buf(),
    };
    manifest.save(out.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tumor_burden;
    use crate::metrics::Score;

    #[test]
    fn no_lesions_means_zero_burden() {
        let cfg = PhantomConfig {
            lesion_count: [0, 0],
            ..Default::default()
        };
        let p = generate_phantom(&cfg).unwrap();
        assert!(p.labels.data().iter().all(|&l| l <= LIVER));
        assert!(p.labels.count_nonzero() > 0);
        assert_eq!(tumor_burden(&p.labels), Score::Value(0.0));
    }

    #[test]
    fn sphere_voxel_count_close_to_volume() {
        for r in [3.0, 4.0, 5.0] {
            let cfg = PhantomConfig {
                lesion_count: [1, 1],
                lesion_radius: [r, r],
                seed: 9,
                ..Default::default()
            };
            let p = generate_phantom(&cfg).unwrap();
            let n = p.labels.data().iter().filter(|&&l| l == LESION).count() as f64;
            let v = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
            assert!((n - v).abs() / v < 0.15, "r={r}: {n} voxels vs {v}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = PhantomConfig {
            seed: 4,
            ..Default::default()
        };
        let a = generate_phantom(&cfg).unwrap();
        let b = generate_phantom(&cfg).unwrap();
        assert_eq!(a.ct, b.ct);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn lesions_lie_inside_liver_ellipsoid() {
        for seed in 0..10 {
            let cfg = PhantomConfig {
                seed,
                ..Default::default()
            };
            let p = generate_phantom(&cfg).unwrap();
            for (i, &l) in p.labels.data().iter().enumerate() {
                if l == LESION {
                    let [x, y, z] = p.labels.coords(i);
                    assert!(cfg.in_liver([x as f64, y as f64, z as f64]));
                }
            }
        }
    }

    #[test]
    fn contrast_matches_configuration() {
        let cfg = PhantomConfig {
            lesion_count: [3, 3],
            seed: 2,
            ..Default::default()
        };
        let p = generate_phantom(&cfg).unwrap();
        let mean = |class: u8| {
            let v: Vec<f64> = p
                .labels
                .data()
                .iter()
                .zip(p.ct.data())
                .filter(|(&l, _)| l == class)
                .map(|(_, &c)| c as f64)
                .collect();
            (v.iter().sum::<f64>() / v.len() as f64, v.len() as f64)
        };
        let (ml, nl) = mean(LIVER);
        let (mk, nk) = mean(LESION);
        let se = cfg.noise_std * (1.0 / nl + 1.0 / nk).sqrt();
        assert!(((ml - mk) - 70.0).abs() < 3.0 * se + 0.5);
    }

    #[test]
    fn impossible_placement_errors() {
        let cfg = PhantomConfig {
            lesion_count: [1, 1],
            lesion_radius: [30.0, 30.0],
            ..Default::default()
        };
        assert!(matches!(generate_phantom(&cfg), Err(Error::Generation(_))));
    }

    #[test]
    fn dataset_files_and_split() {
        let dir = tempfile::tempdir().unwrap();
        let small = PhantomConfig {
            dims: [24, 24, 8],
            liver_center: [12.0, 12.0, 4.0],
            liver_radii: [8.0, 7.0, 3.5],
            lesion_count: [0, 2],
            lesion_radius: [1.0, 1.5],
            ..Default::default()
        };
        let m = generate_dataset(
            4,
            &small,
            Jitter {
                center: 1.0,
                radius: 0.05,
            },
            7,
            0.75,
            dir.path(),
        )
        .unwrap();
        assert_eq!(m.split(Split::Train).count(), 3);
        assert_eq!(m.split(Split::Test).count(), 1);
        let files = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(files, 9);
        let back = Manifest::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(back.entries, m.entries);
        let cases = back.load_cases(Split::Train).unwrap();
        assert_eq!(cases.len(), 3);
        assert_eq!(cases[0].name, "case_000");
    }

    #[test]
    fn lesion_counts_span_range() {
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..24 {
            let cfg = PhantomConfig {
                seed,
                ..Default::default()
            };
            seen.insert(generate_phantom(&cfg).unwrap().lesions.len());
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![1, 2, 3]);
    }
}
