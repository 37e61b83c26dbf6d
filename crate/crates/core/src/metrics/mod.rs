//! Segmentation overlap, surface distance, lesion detection and tumor
//! burden scores, per case and aggregated over a cohort.

mod lesions;
mod report;
mod surface;

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::volume::Volume;

pub use lesions::{match_lesions, tumor_burden, LesionMatch, LesionMatching, IOU_THRESHOLD};
pub use report::{
    aggregate, evaluate_case, evaluate_cases, write_cases_csv, AggregateReport, CaseScores, ClassScores, ClassSummary,
    LEADERBOARD_FIELDS,
};
pub use surface::{surface_distances, surface_voxels, SurfaceDistances};

/// A metric value, or an explicit marker when it cannot be computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Value(f64),
    /// The worst possible score: infinity for distances.
    Worst,
    /// Not defined for this case (e.g. RVD with an empty reference).
    Undefined,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Worst => Some(f64::INFINITY),
            Score::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        !matches!(self, Score::Undefined)
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Value(v) if v.is_infinite() => write!(f, "inf"),
            Score::Value(v) => write!(f, "{v}"),
            Score::Worst => write!(f, "inf"),
            Score::Undefined => write!(f, "undefined"),
        }
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Score::Value(v) if v.is_finite() => s.serialize_f64(*v),
            Score::Value(_) | Score::Worst => s.serialize_str("inf"),
            Score::Undefined => s.serialize_none(),
        }
    }
}

/// Voxel counts of two binary masks and their intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OverlapCounts {
    pub a: usize,
    pub b: usize,
    pub intersection: usize,
}

impl OverlapCounts {
    pub fn union(&self) -> usize {
        self.a + self.b - self.intersection
    }

    pub fn dice(&self) -> f64 {
        if self.a + self.b == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / (self.a + self.b) as f64
        }
    }

    pub fn voe(&self) -> f64 {
        if self.union() == 0 {
            0.0
        } else {
            1.0 - self.intersection as f64 / self.union() as f64
        }
    }

    /// `(|a| − |b|) / |b|` with `a` the prediction.
    pub fn rvd(&self) -> Score {
        if self.b == 0 {
            Score::Undefined
        } else {
            Score::Value((self.a as f64 - self.b as f64) / self.b as f64)
        }
    }
}

pub(crate) fn check_aligned<T: Copy, U: Copy>(a: &Volume<T>, b: &Volume<U>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Parameter(format!(
            "mask dims differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn overlap(a: &Volume<u8>, b: &Volume<u8>) -> Result<OverlapCounts> {
    check_aligned(a, b)?;
    let mut c = OverlapCounts::default();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x != 0, y != 0);
        c.a += x as usize;
        c.b += y as usize;
        c.intersection += (x && y) as usize;
    }
    Ok(c)
}

/// `2|a∩b| / (|a| + |b|)`; two empty masks score 1.
pub fn dice(a: &Volume<u8>, b: &Volume<u8>) -> Result<f64> {
    Ok(overlap(a, b)?.dice())
}

/// `1 − |a∩b| / |a∪b|`; two empty masks score 0.
pub fn voe(a: &Volume<u8>, b: &Volume<u8>) -> Result<f64> {
    Ok(overlap(a, b)?.voe())
}

pub fn rvd(pred: &Volume<u8>, reference: &Volume<u8>) -> Result<Score> {
    Ok(overlap(pred, reference)?.rvd())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Spacing, VolumeKind};

    pub(crate) fn mask(dims: [usize; 3], on: &[usize]) -> Volume<u8> {
        let mut data = vec![0u8; dims.iter().product()];
        for &i in on {
            data[i] = 1;
        }
        Volume::new(dims, Spacing::isotropic(), data, VolumeKind::Label).unwrap()
    }

    #[test]
    fn dice_cases() {
        let a = mask([8, 1, 1], &[0, 1, 2, 3]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = mask([8, 1, 1], &[4, 5, 6, 7]);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let c = mask([8, 1, 1], &[2, 3, 4, 5]);
        assert_eq!(dice(&a, &c).unwrap(), 0.5);
        let e = mask([8, 1, 1], &[]);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        let other = mask([4, 2, 1], &[]);
        assert!(matches!(dice(&a, &other), Err(Error::Parameter(_))));
    }

    #[test]
    fn voe_and_rvd_cases() {
        let a = mask([8, 1, 1], &[0, 1, 2, 3]);
        assert_eq!(voe(&a, &a).unwrap(), 0.0);
        assert_eq!(rvd(&a, &a).unwrap(), Score::Value(0.0));
        let c = mask([8, 1, 1], &[2, 3, 4, 5]);
        assert!((voe(&a, &c).unwrap() - (1.0 - 2.0 / 6.0)).abs() < 1e-15);
        let six = mask([8, 1, 1], &[0, 1, 2, 3, 4, 5]);
        assert_eq!(rvd(&six, &a).unwrap(), Score::Value(0.5));
        let e = mask([8, 1, 1], &[]);
        assert_eq!(rvd(&a, &e).unwrap(), Score::Undefined);
    }

    #[test]
    fn score_rendering() {
        assert_eq!(Score::Worst.to_string(), "inf");
        assert_eq!(serde_json::to_string(&Score::Worst).unwrap(), "\"inf\"");
        assert_eq!(serde_json::to_string(&Score::Value(0.25)).unwrap(), "0.25");
        assert_eq!(serde_json::to_string(&Score::Undefined).unwrap(), "null");
    }
}
