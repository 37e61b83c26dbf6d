use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::lesions::{match_lesions, ratio, tumor_burden};
use super::surface::{surface_distances, symmetric_samples, SurfaceDistances};
use super::{check_aligned, overlap, OverlapCounts, Score};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::volume::{Volume, LESION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScores {
    pub counts: OverlapCounts,
    pub dice: Score,
    pub voe: Score,
    pub rvd: Score,
    pub surface: SurfaceDistances,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseScores {
    pub name: String,
    /// Liver region: every nonzero label.
    pub liver: ClassScores,
    pub lesion: ClassScores,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub burden_pred: Score,
    pub burden_ref: Score,
}

/// Scores one predicted label volume against its reference.
///
/// Lesion overlap scores are undefined for cases without reference lesions.
/// Lesion surface distances are pooled over matched (detected) lesion pairs
/// only; when lesions exist but none was detected they take the worst score.
pub fn evaluate_case(name: &str, pred: &Volume<u8>, reference: &Volume<u8>) -> Result<CaseScores> {
    check_aligned(pred, reference)?;
    let spacing = reference.spacing();
    let pl = pred.mask_where(|v| v != 0);
    let rl = reference.mask_where(|v| v != 0);
    let lc = overlap(&pl, &rl)?;
    let liver = ClassScores {
        counts: lc,
        dice: Score::Value(lc.dice()),
        voe: Score::Value(lc.voe()),
        rvd: lc.rvd(),
        surface: surface_distances(&pl, &rl, spacing)?,
    };

    let pm = pred.mask_where(|v| v == LESION);
    let rm = reference.mask_where(|v| v == LESION);
    let kc = overlap(&pm, &rm)?;
    let det = match_lesions(pred, reference)?;
    let lesion = if kc.b == 0 {
        ClassScores {
            counts: kc,
            dice: Score::Undefined,
            voe: Score::Undefined,
            rvd: Score::Undefined,
            surface: SurfaceDistances::undefined(),
        }
    } else {
        let mut samples = Vec::new();
        for m in &det.matches {
            let a = det.pred_components.component_mask(m.pred);
            let b = det.ref_components.component_mask(m.reference);
            samples.extend(symmetric_samples(&a, &b, spacing));
        }
        ClassScores {
            counts: kc,
            dice: Score::Value(kc.dice()),
            voe: Score::Value(kc.voe()),
            rvd: kc.rvd(),
            surface: SurfaceDistances::from_distances(&samples),
        }
    };
    Ok(CaseScores {
        name: name.to_string(),
        liver,
        lesion,
        tp: det.tp,
        fp: det.fp,
        fn_: det.fn_,
        burden_pred: tumor_burden(pred),
        burden_ref: tumor_burden(reference),
    })
}

/// Cohort-level summary of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassSummary {
    /// Mean of the defined per-case Dice scores.
    pub dice_per_case: Score,
    /// Dice of the voxel counts pooled over all cases.
    pub dice_global: Score,
    pub voe: Score,
    pub rvd: Score,
    pub asd: Score,
    pub msd: Score,
    pub rmsd: Score,
    /// Cases whose per-case scores were undefined and left out of the means.
    pub excluded_cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub cases: usize,
    pub liver: ClassSummary,
    pub lesion: ClassSummary,
    /// Detection scores from TP/FP/FN pooled over cases.
    pub precision: f64,
    pub recall: f64,
    pub burden_rmse: Score,
    pub burden_max_error: Score,
}

/// Field names of the leaderboard JSON, in output order.
pub const LEADERBOARD_FIELDS: [&str; 11] = [
    "dice_per_case",
    "dice_global",
    "voe",
    "rvd",
    "asd",
    "msd",
    "rmsd",
    "precision",
    "recall",
    "burden_rmse",
    "burden_max_error",
];

fn mean_defined(scores: impl Iterator<Item = Score>) -> (Score, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut skipped = 0usize;
    for s in scores {
        match s.value() {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    if n == 0 {
        (Score::Undefined, skipped)
    } else if sum.is_infinite() {
        (Score::Worst, skipped)
    } else {
        (Score::Value(sum / n as f64), skipped)
    }
}

fn summarize(cases: &[CaseScores], class: impl Fn(&CaseScores) -> &ClassScores) -> ClassSummary {
    let (dice_per_case, excluded_cases) = mean_defined(cases.iter().map(|c| class(c).dice));
    let (num, den) = cases.iter().fold((0usize, 0usize), |(i, s), c| {
        let k = class(c).counts;
        (i + k.intersection, s + k.a + k.b)
    });
    ClassSummary {
        dice_per_case,
        dice_global: if den == 0 {
            Score::Undefined
        } else {
            Score::Value(2.0 * num as f64 / den as f64)
        },
        voe: mean_defined(cases.iter().map(|c| class(c).voe)).0,
        rvd: mean_defined(cases.iter().map(|c| class(c).rvd)).0,
        asd: mean_defined(cases.iter().map(|c| class(c).surface.asd)).0,
        msd: mean_defined(cases.iter().map(|c| class(c).surface.msd)).0,
        rmsd: mean_defined(cases.iter().map(|c| class(c).surface.rmsd)).0,
        excluded_cases,
    }
}

/// Pools per-case scores. A prediction with no liver region counts as zero
/// burden; cases whose reference has no liver region are left out of the
/// burden errors.
pub fn aggregate(cases: &[CaseScores]) -> Result<AggregateReport> {
    if cases.is_empty() {
        return Err(Error::Parameter("cannot aggregate an empty case list".into()));
    }
    let tp: usize = cases.iter().map(|c| c.tp).sum();
    let fp: usize = cases.iter().map(|c| c.fp).sum();
    let fn_: usize = cases.iter().map(|c| c.fn_).sum();
    let errors: Vec<f64> = cases
        .iter()
        .filter_map(|c| {
            let r = c.burden_ref.value()?;
            Some(c.burden_pred.value().unwrap_or(0.0) - r)
        })
        .collect();
    let (burden_rmse, burden_max_error) = if errors.is_empty() {
        (Score::Undefined, Score::Undefined)
    } else {
        let mse = errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64;
        (
            Score::Value(mse.sqrt()),
            Score::Value(errors.iter().map(|e| e.abs()).fold(0.0, f64::max)),
        )
    };
    Ok(AggregateReport {
        cases: cases.len(),
        liver: summarize(cases, |c| &c.liver),
        lesion: summarize(cases, |c| &c.lesion),
        precision: ratio(tp, tp + fp, tp + fn_ == 0),
        recall: ratio(tp, tp + fn_, tp + fp == 0),
        burden_rmse,
        burden_max_error,
    })
}

impl AggregateReport {
    /// JSON object whose keys are exactly [`LEADERBOARD_FIELDS`].
    /// Segmentation scores are split into `liver` and `lesion`.
    pub fn leaderboard_json(&self) -> Value {
        let pair = |f: fn(&ClassSummary) -> Score| json!({ "liver": f(&self.liver), "lesion": f(&self.lesion) });
        json!({
            "dice_per_case": pair(|s| s.dice_per_case),
            "dice_global": pair(|s| s.dice_global),
            "voe": pair(|s| s.voe),
            "rvd": pair(|s| s.rvd),
            "asd": pair(|s| s.asd),
            "msd": pair(|s| s.msd),
            "rmsd": pair(|s| s.rmsd),
            "precision": self.precision,
            "recall": self.recall,
            "burden_rmse": self.burden_rmse,
            "burden_max_error": self.burden_max_error,
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.leaderboard_json())?;
        write_atomic(path.as_ref(), text.as_bytes())
    }

    /// Plain-text summary for terminals.
    pub fn render(&self) -> String {
        let mut s = format!("cases: {}\n", self.cases);
        s += &format!(
            "{:<8}{:>14}{:>12}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
            "class", "dice/case", "dice/global", "voe", "rvd", "asd", "msd", "rmsd"
        );
        for (name, c) in [("liver", &self.liver), ("lesion", &self.lesion)] {
            let f = |v: Score| match v {
                Score::Value(x) => format!("{x:.4}"),
                other => other.to_string(),
            };
            s += &format!(
                "{:<8}{:>14}{:>12}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
                name,
                f(c.dice_per_case),
                f(c.dice_global),
                f(c.voe),
                f(c.rvd),
                f(c.asd),
                f(c.msd),
                f(c.rmsd)
            );
        }
        if self.lesion.excluded_cases > 0 {
            s += &format!(
                "lesion per-case means exclude {} case(s) without reference lesions\n",
                self.lesion.excluded_cases
            );
        }
        s += &format!(
            "detection precision {:.4} recall {:.4}\nburden rmse {} max error {}\n",
            self.precision, self.recall, self.burden_rmse, self.burden_max_error
        );
        s
    }
}

/// One row per case per class.
pub fn write_cases_csv(cases: &[CaseScores], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("case,class,dice,voe,rvd,asd,msd,rmsd,tp,fp,fn,burden_pred,burden_ref\n");
    for c in cases {
        for (class, s) in [("liver", &c.liver), ("lesion", &c.lesion)] {
            out += &format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                c.name,
                class,
                s.dice,
                s.voe,
                s.rvd,
                s.surface.asd,
                s.surface.msd,
                s.surface.rmsd,
                c.tp,
                c.fp,
                c.fn_,
                c.burden_pred,
                c.burden_ref
            );
        }
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Evaluates many cases in parallel, preserving input order.
pub fn evaluate_cases(pairs: &[(String, Volume<u8>, Volume<u8>)]) -> Result<Vec<CaseScores>> {
    pairs.par_iter().map(|(name, p, r)| evaluate_case(name, p, r)).collect()
}
