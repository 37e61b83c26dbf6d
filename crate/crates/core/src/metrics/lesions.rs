use std::collections::HashMap;

use serde::Serialize;

use super::{check_aligned, Score};
use crate::error::Result;
use crate::morphology::{connected_components, ComponentLabeling, Connectivity};
use crate::volume::{Volume, LESION};

/// Predicted and reference lesions must overlap with IoU strictly above this.
pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LesionMatch {
    /// Component id in the predicted lesion labeling.
    pub pred: u32,
    /// Component id in the reference lesion labeling.
    pub reference: u32,
    pub iou: f64,
}

#[derive(Debug, Clone)]
pub struct LesionMatching {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub matches: Vec<LesionMatch>,
    pub pred_components: ComponentLabeling,
    pub ref_components: ComponentLabeling,
}

impl LesionMatching {
    pub fn pred_count(&self) -> usize {
        self.pred_components.count()
    }

    pub fn ref_count(&self) -> usize {
        self.ref_components.count()
    }

    /// `TP / (TP + FP)`; 1 when there is nothing predicted and nothing to find.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, self.ref_count() == 0)
    }

    /// `TP / (TP + FN)`; 1 when there is nothing predicted and nothing to find.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, self.pred_count() == 0)
    }
}

pub(crate) fn ratio(num: usize, den: usize, vacuous: bool) -> f64 {
    if den == 0 {
        if vacuous {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Lesion instances are 6-connected components of label 2. Pairs with
/// IoU > 0.5 are matched one-to-one, greedily by descending IoU (ties by
/// reference id, then prediction id).
pub fn match_lesions(pred: &Volume<u8>, reference: &Volume<u8>) -> Result<LesionMatching> {
    check_aligned(pred, reference)?;
    let pc = connected_components(&pred.mask_where(|v| v == LESION), Connectivity::Six);
    let rc = connected_components(&reference.mask_where(|v| v == LESION), Connectivity::Six);

    let mut inter: HashMap<(u32, u32), usize> = HashMap::new();
    for (&p, &r) in pc.labels.data().iter().zip(rc.labels.data()) {
        if p != 0 && r != 0 {
            *inter.entry((p, r)).or_default() += 1;
        }
    }
    let mut candidates: Vec<LesionMatch> = inter
        .into_iter()
        .map(|((p, r), i)| {
            let union = pc.sizes[p as usize - 1] + rc.sizes[r as usize - 1] - i;
            LesionMatch {
                pred: p,
                reference: r,
                iou: i as f64 / union as f64,
            }
        })
        .filter(|m| m.iou > IOU_THRESHOLD)
        .collect();
    candidates.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.reference.cmp(&b.reference))
            .then(a.pred.cmp(&b.pred))
    });

    let mut pred_used = vec![false; pc.count() + 1];
    let mut ref_used = vec![false; rc.count() + 1];
    let mut matches = Vec::new();
    for m in candidates {
        if !pred_used[m.pred as usize] && !ref_used[m.reference as usize] {
            pred_used[m.pred as usize] = true;
            ref_used[m.reference as usize] = true;
            matches.push(m);
        }
    }
    let tp = matches.len();
    Ok(LesionMatching {
        tp,
        fp: pc.count() - tp,
        fn_: rc.count() - tp,
        matches,
        pred_components: pc,
        ref_components: rc,
    })
}

/// Fraction of the liver region (liver ∪ lesion) that is lesion.
pub fn tumor_burden(labels: &Volume<u8>) -> Score {
    let mut fg = 0usize;
    let mut lesion = 0usize;
    for &v in labels.data() {
        fg += (v != 0) as usize;
        lesion += (v == LESION) as usize;
    }
    if fg == 0 {
        Score::Undefined
    } else {
        Score::Value(lesion as f64 / fg as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Spacing, VolumeKind};

    fn labels(dims: [usize; 3], on: &[(usize, u8)]) -> Volume<u8> {
        let mut data = vec![0u8; dims.iter().product()];
        for &(i, v) in on {
            data[i] = v;
        }
        Volume::new(dims, Spacing::isotropic(), data, VolumeKind::Label).unwrap()
    }

    #[test]
    fn identical_lesion_detected() {
        let v = labels([6, 1, 1], &[(1, 2), (2, 2)]);
        let m = match_lesions(&v, &v).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (1, 0, 0));
        assert_eq!(m.matches[0].iou, 1.0);
        assert_eq!((m.precision(), m.recall()), (1.0, 1.0));
    }

    #[test]
    fn low_iou_not_detected() {
        let r = labels([8, 1, 1], &[(0, 2), (1, 2), (2, 2), (3, 2)]);
        let p = labels([8, 1, 1], &[(2, 2), (3, 2), (4, 2), (5, 2)]);
        let m = match_lesions(&p, &r).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
    }

    #[test]
    fn one_of_two_found() {
        let r = labels([9, 1, 1], &[(0, 2), (1, 2), (6, 2), (7, 2)]);
        let p = labels([9, 1, 1], &[(0, 2), (1, 2)]);
        let m = match_lesions(&p, &r).unwrap();
        assert_eq!((m.precision(), m.recall()), (1.0, 0.5));
    }

    #[test]
    fn empty_on_both_sides_is_perfect() {
        let e = labels([4, 1, 1], &[(0, 1)]);
        let m = match_lesions(&e, &e).unwrap();
        assert_eq!((m.precision(), m.recall()), (1.0, 1.0));
        let r = labels([4, 1, 1], &[(0, 2)]);
        let m = match_lesions(&e, &r).unwrap();
        assert_eq!((m.precision(), m.recall()), (0.0, 0.0));
    }

    #[test]
    fn burden_cases() {
        let none = labels([4, 1, 1], &[(0, 1), (1, 1)]);
        assert_eq!(tumor_burden(&none), Score::Value(0.0));
        let mut on: Vec<(usize, u8)> = (0..90).map(|i| (i, 1)).collect();
        on.extend((90..100).map(|i| (i, 2)));
        assert_eq!(tumor_burden(&labels([100, 1, 1], &on)), Score::Value(0.1));
        assert_eq!(tumor_burden(&labels([3, 1, 1], &[(0, 2), (1, 2)])), Score::Value(1.0));
        assert_eq!(tumor_burden(&labels([3, 1, 1], &[])), Score::Undefined);
    }
}
