//! Baseline detector: threshold on a single rate-of-change feature.

use crate::error::{Error, Result};
use crate::features::{FeatureVector, N_DIFFS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeModel {
    pub diff_index: usize,
    pub threshold: f64,
}

/// Result of [`train_slope`] together with its training error count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub model: SlopeModel,
    pub errors: usize,
}

/// Falling pH (acid) below the threshold is a 0; the boundary goes to 1.
pub fn classify_slope(model: &SlopeModel, fv: &FeatureVector) -> u8 {
    if fv.diffs[model.diff_index] < model.threshold {
        0
    } else {
        1
    }
}

fn better(cand: (usize, usize, f64), best: (usize, usize, f64)) -> bool {
    let (ce, ci, ct) = cand;
    let (be, bi, bt) = best;
    ce < be || (ce == be && (ci > bi || (ci == bi && ct.abs() < bt.abs())))
}

/// Exhaustive search over the 7 rate-of-change indices and the midpoints of
/// each index's sorted training values. Ties prefer the later bin, then the
/// threshold closest to zero.
pub fn train_slope(features: &[FeatureVector], labels: &[u8]) -> Result<SlopeFit> {
    assert_eq!(features.len(), labels.len(), "one label per feature vector");
    let ones = labels.iter().filter(|&&b| b != 0).count();
    let zeros = labels.len() - ones;
    if ones == 0 || zeros == 0 {
        return Err(Error::DegenerateTraining);
    }
    let mut best = (usize::MAX, 0, f64::INFINITY);
    for idx in 0..N_DIFFS {
        let mut pts: Vec<(f64, u8)> = features
            .iter()
            .zip(labels)
            .map(|(f, &b)| (f.diffs[idx], b))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        // threshold between pts[k-1] and pts[k]: the first k points are
        // classified 0, the rest 1
        let mut ones_below = 0;
        let mut zeros_below = 0;
        for k in 1..pts.len() {
            if pts[k - 1].1 == 0 {
                zeros_below += 1;
            } else {
                ones_below += 1;
            }
            if pts[k].0 == pts[k - 1].0 {
                continue;
            }
            let threshold = 0.5 * (pts[k - 1].0 + pts[k].0);
            let errors = ones_below + (zeros - zeros_below);
            if better((errors, idx, threshold), best) {
                best = (errors, idx, threshold);
            }
        }
    }
    if best.0 == usize::MAX {
        // every diff coordinate is constant across the training set
        return Err(Error::DegenerateTraining);
    }
    Ok(SlopeFit {
        model: SlopeModel {
            diff_index: best.1,
            threshold: best.2,
        },
        errors: best.0,
    })
}
