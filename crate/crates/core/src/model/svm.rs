//! RBF-kernel support vector classifier trained by SMO with second-order
//! working-set selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::Label;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    /// `1 / (n_features · var(X))` over all entries of the training matrix.
    Scale,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub gamma: Gamma,
    pub c: f64,
    /// KKT violation tolerance.
    pub tol: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            gamma: Gamma::Scale,
            c: 1.0,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmHead {
    pub support: Vec<Vec<f64>>,
    /// `αᵢ·yᵢ` per support vector, within `[-C, C]`.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

pub fn scale_gamma(x: &[Vec<f64>]) -> f64 {
    let n = x.iter().map(|r| r.len()).sum::<usize>();
    if n == 0 {
        return 1.0;
    }
    let mean = x.iter().flatten().sum::<f64>() / n as f64;
    let var = x.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let features = x[0].len() as f64;
    if var > 0.0 {
        1.0 / (features * var)
    } else {
        1.0
    }
}

/// Fit on feature vectors with labels; abnormal is the positive class.
pub fn svm_fit(x: &[Vec<f64>], labels: &[Label], cfg: &SvmConfig) -> Result<SvmHead> {
    if x.len() != labels.len() || x.is_empty() {
        return Err(Error::Fit(format!("{} vectors for {} labels", x.len(), labels.len())));
    }
    let dim = x[0].len();
    if dim == 0 || x.iter().any(|r| r.len() != dim || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Fit("feature vectors must be finite and equally sized".into()));
    }
    if !labels.iter().any(|l| l.is_positive()) || labels.iter().all(|l| l.is_positive()) {
        return Err(Error::Fit("SVM needs examples of both classes".into()));
    }
    if !(cfg.c > 0.0) || !(cfg.tol > 0.0) {
        return Err(Error::Fit("C and tolerance must be positive".into()));
    }
    let gamma = match cfg.gamma {
        Gamma::Scale => scale_gamma(x),
        Gamma::Value(g) if g > 0.0 => g,
        Gamma::Value(g) => return Err(Error::Fit(format!("gamma {g} must be positive"))),
    };
    let n = x.len();
    let y: Vec<f64> = labels.iter().map(|l| if l.is_positive() { 1.0 } else { -1.0 }).collect();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = rbf(&x[i], &x[j], gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let c = cfg.c;
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let max_iter = (100 * n).max(100_000);
    for _ in 0..max_iter {
        // i: maximal violating index in the "up" set
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let ok = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if ok && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else { break };
        // j: second-order choice in the "low" set
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = f64::INFINITY;
        let mut j_sel = None;
        for t in 0..n {
            let ok = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
            if !ok {
                continue;
            }
            let yg = y[t] * grad[t];
            gmax2 = gmax2.max(yg);
            let diff = gmax + yg;
            if diff > 0.0 {
                let a = (k[i * n + i] + k[t * n + t] - 2.0 * k[i * n + t]).max(TAU);
                let obj = -diff * diff / a;
                if obj <= best {
                    best = obj;
                    j_sel = Some(t);
                }
            }
        }
        let Some(j) = j_sel else { break };
        if gmax + gmax2 < cfg.tol {
            break;
        }
        let (ai, aj) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * k[i * n + j];
        if y[i] != y[j] {
            let quad = (k[i * n + i] + k[j * n + j] + 2.0 * qij).max(TAU);
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
            let quad = (k[i * n + i] + k[j * n + j] - 2.0 * qij).max(TAU);
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
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k[i * n + t] * di + y[j] * k[j * n + t] * dj);
        }
    }
    // bias from free vectors, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
    let mut support = Vec::new();
    let mut dual_coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support.push(x[t].clone());
            dual_coef.push(alpha[t] * y[t]);
        }
    }
    Ok(SvmHead {
        support,
        dual_coef,
        bias: -rho,
        gamma,
        c,
    })
}

impl SvmHead {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.dual_coef)
            .map(|(s, a)| a * rbf(s, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }

    /// Logistic squash of the decision value, used as a ranking score.
    pub fn score(&self, x: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.decision(x)).exp())
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        if self.decision(x) > 0.0 {
            Label::Abnormal
        } else {
            Label::Normal
        }
    }
}
