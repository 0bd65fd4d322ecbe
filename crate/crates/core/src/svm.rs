//! Symbol-by-symbol RBF-kernel SVM detector.
//!
//! Training solves the soft-margin dual
//!
//! ```text
//! min  1/2 a'Qa - e'a   s.t.  y'a = 0,  0 <= a_i <= C,   Q_ij = y_i y_j k(x_i, x_j)
//! ```
//!
//! by sequential minimal optimization: each step picks the maximal violating
//! pair (first index by first-order violation, second by second-order gain)
//! and solves the two-variable subproblem in closed form. Labels are mapped
//! from bits to `y = 2x - 1`.

use crate::error::{Error, Result};
use crate::standardize::Standardizer;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Gaussian kernel `exp(-|u - v|^2 / (2 sigma^2))`.
pub fn rbf_kernel(u: &[f64], v: &[f64], sigma_sq: f64) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * sigma_sq)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub sigma_sq: f64,
    pub c_reg: f64,
    /// KKT tolerance on the maximal violating pair gap.
    pub tol: f64,
    pub max_updates: usize,
    pub standardize: bool,
    /// Kernel row cache budget in megabytes.
    pub cache_mb: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            sigma_sq: 5.0,
            c_reg: 1.0,
            tol: 1e-3,
            max_updates: 1_000_000,
            standardize: true,
            cache_mb: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub sigma_sq: f64,
    pub c_reg: f64,
    pub bias: f64,
    pub standardizer: Standardizer,
    /// Support vectors in standardized coordinates.
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub coeffs: Vec<f64>,
}

/// Solver diagnostics returned alongside the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmTraining {
    pub model: SvmModel,
    /// Full dual vector over the training set (not just support vectors).
    pub alpha: Vec<f64>,
    pub updates: usize,
    pub kkt_violation: f64,
}

impl SvmModel {
    /// `b + sum_i coeff_i k(x, sv_i)` for a raw (unstandardized) feature vector.
    pub fn decision_value(&self, fv: &[f64]) -> f64 {
        let z = self.standardizer.apply(fv);
        self.bias
            + self
                .support_vectors
                .iter()
                .zip(&self.coeffs)
                .map(|(sv, c)| c * rbf_kernel(&z, sv, self.sigma_sq))
                .sum::<f64>()
    }
}

/// Sign decision mapped back to bits: 1 when the decision value is >= 0.
pub fn classify_svm(model: &SvmModel, fv: &[f64]) -> u8 {
    u8::from(model.decision_value(fv) >= 0.0)
}

struct KernelRows<'a> {
    x: &'a [Vec<f64>],
    sigma_sq: f64,
    rows: Vec<Option<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a [Vec<f64>], sigma_sq: f64, cache_mb: usize) -> Self {
        let n = x.len();
        let per_row = (n * std::mem::size_of::<f64>()).max(1);
        let capacity = (cache_mb * 1024 * 1024 / per_row).clamp(2, n.max(2));
        Self {
            x,
            sigma_sq,
            rows: vec![None; n],
            order: VecDeque::new(),
            capacity,
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        if self.rows[i].is_none() {
            if self.order.len() >= self.capacity {
                let evict = self.order.pop_front().expect("non-empty cache");
                self.rows[evict] = None;
            }
            let xi = &self.x[i];
            let row = self
                .x
                .iter()
                .map(|xj| rbf_kernel(xi, xj, self.sigma_sq))
                .collect();
            self.rows[i] = Some(row);
            self.order.push_back(i);
        }
        self.rows[i].as_deref().expect("row just filled")
    }
}

const TAU: f64 = 1e-12;

/// Trains the detector on raw feature rows (all the same length) and bits.
pub fn train_svm<R: AsRef<[f64]>>(features: &[R], labels: &[u8], params: &SvmParams) -> Result<SvmTraining> {
    assert_eq!(features.len(), labels.len(), "one label per feature row");
    if !labels.contains(&0) || !labels.iter().any(|&b| b != 0) {
        return Err(Error::DegenerateTraining);
    }
    let dim = features[0].as_ref().len();
    if let Some(bad) = features.iter().find(|r| r.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.as_ref().len(),
        });
    }
    let standardizer = if params.standardize {
        Standardizer::fit(features)
    } else {
        Standardizer::identity(dim)
    };
    let x: Vec<Vec<f64>> = features.iter().map(|r| standardizer.apply(r.as_ref())).collect();
    let y: Vec<f64> = labels.iter().map(|&b| if b == 0 { -1.0 } else { 1.0 }).collect();
    let n = x.len();
    let c = params.c_reg;
    let mut alpha = vec![0.0; n];
    // gradient of the dual objective: Q a - e
    let mut grad = vec![-1.0; n];
    let mut cache = KernelRows::new(&x, params.sigma_sq, params.cache_mb);
    let in_up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let in_low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);

    let mut updates = 0;
    let violation = loop {
        // first index: max over I_up of -y G
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            if in_low(alpha[t], y[t]) {
                gmin = gmin.min(-y[t] * grad[t]);
            }
        }
        let gap = gmax - gmin;
        if i == usize::MAX || gap < params.tol {
            break gap.max(0.0);
        }
        if updates >= params.max_updates {
            return Err(Error::NoConvergence {
                iterations: updates,
                violation: gap,
            });
        }
        // second index: best second-order gain among violating partners
        let ki: Vec<f64> = cache.row(i).to_vec();
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b > 0.0 {
                let a = (ki[i] + 1.0 - 2.0 * ki[t]).max(TAU); // k_tt = 1 for RBF
                let gain = -(b * b) / a;
                if gain < best {
                    best = gain;
                    j = t;
                }
            }
        }
        if j == usize::MAX {
            break gap;
        }
        let kj: Vec<f64> = cache.row(j).to_vec();
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let quad = (ki[i] + kj[j] - 2.0 * ki[j]).max(TAU);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * dai + y[j] * kj[t] * daj);
        }
        updates += 1;
    };

    // b = -rho, rho averaged over free vectors (midpoint of the feasible
    // interval when none are free)
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += yg;
            free += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        0.5 * (ub + lb)
    } else if ub.is_finite() {
        ub
    } else {
        lb
    };

    let (support_vectors, coeffs): (Vec<Vec<f64>>, Vec<f64>) = (0..n)
        .filter(|&t| alpha[t] > 0.0)
        .map(|t| (x[t].clone(), alpha[t] * y[t]))
        .unzip();
    Ok(SvmTraining {
        model: SvmModel {
            sigma_sq: params.sigma_sq,
            c_reg: c,
            bias: -rho,
            standardizer,
            support_vectors,
            coeffs,
        },
        alpha,
        updates,
        kkt_violation: violation,
    })
}

/// Largest KKT residual of a trained dual vector, recomputed from scratch:
/// for each point the margin `y f(x)` must be >= 1 at a = 0, = 1 strictly
/// inside the box and <= 1 at a = C.
pub fn kkt_residual<R: AsRef<[f64]>>(training: &SvmTraining, features: &[R], labels: &[u8]) -> f64 {
    let m = &training.model;
    let c = m.c_reg;
    features
        .iter()
        .zip(labels)
        .zip(&training.alpha)
        .map(|((x, &b), &a)| {
            let y = if b == 0 { -1.0 } else { 1.0 };
            let margin = y * m.decision_value(x.as_ref());
            if a <= 0.0 {
                (1.0 - margin).max(0.0)
            } else if a >= c {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            }
        })
        .fold(0.0, f64::max)
}
