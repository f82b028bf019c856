//! Soft-margin kernel SVM trained with SMO, one-vs-rest for more than two
//! classes.

use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Linear,
    Sigmoid,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub gamma: f64,
    pub coef0: f64,
}

impl Kernel {
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(x, z),
            KernelKind::Sigmoid => (self.gamma * dot(x, z) + self.coef0).tanh(),
            KernelKind::Rbf => {
                let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * d2).exp()
            }
        }
    }
}

/// Evaluates a kernel on two equal-length vectors.
pub fn kernel_eval(kind: KernelKind, x: &[f64], z: &[f64], gamma: f64, coef0: f64) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::shape(format!("vector of length {}", x.len()), format!("length {}", z.len())));
    }
    Ok(Kernel { kind, gamma, coef0 }.eval(x, z))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Resolves `gamma="scale"`: `1 / (d * Var(X))` over all entries.
pub fn gamma_scale(x: &FeatureMatrix) -> f64 {
    let v = x.values();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (x.cols() as f64 * var)
    } else {
        1.0
    }
}

/// Resolves `gamma="auto"`: `1 / d`.
pub fn gamma_auto(x: &FeatureMatrix) -> f64 {
    1.0 / x.cols() as f64
}

/// Curvature substitute for non-positive directions (non-PSD kernels).
const TAU: f64 = 1e-12;

/// Pair updates allowed when the caller sets no limit.
pub const HARD_ITERATION_CAP: usize = 1_000_000;

/// Symmetric kernel matrix over training rows, stored densely.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    n: usize,
    values: Vec<f64>,
}

impl KernelMatrix {
    pub fn compute(x: &FeatureMatrix, kernel: &Kernel) -> Self {
        let n = x.rows();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let k = kernel.eval(x.row(i), x.row(j));
                values[i * n + j] = k;
                values[j * n + i] = k;
            }
        }
        Self { n, values }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

/// Iteration limit semantics for [`solve_dual`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationLimit {
    /// Stop quietly after this many pair updates.
    Soft(usize),
    /// Fail with a convergence error after this many pair updates.
    Hard(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision offset: `f(x) = sum_i alpha_i y_i K(x_i, x) + bias`.
    pub bias: f64,
    pub iterations: usize,
    /// Maximal KKT violation `m(alpha) - M(alpha)` at exit.
    pub kkt_gap: f64,
    pub converged: bool,
}

/// Solves `min 1/2 a'Qa - e'a` with `Q_ij = y_i y_j K_ij`, `y'a = 0`,
/// `0 <= a_i <= upper_i`.
pub fn solve_dual(
    k: &KernelMatrix,
    y: &[f64],
    upper: &[f64],
    tol: f64,
    limit: IterationLimit,
) -> Result<DualSolution> {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let diag: Vec<f64> = (0..n).map(|i| k.get(i, i)).collect();
    let at_upper = |a: &[f64], t: usize| a[t] >= upper[t];
    let at_lower = |a: &[f64], t: usize| a[t] <= 0.0;
    let cap = match limit {
        IterationLimit::Soft(c) | IterationLimit::Hard(c) => c,
    };
    let mut iterations = 0;
    let (converged, kkt_gap) = loop {
        // First index: maximal violation among I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let v = if y[t] > 0.0 {
                (!at_upper(&alpha, t)).then(|| -grad[t])
            } else {
                (!at_lower(&alpha, t)).then(|| grad[t])
            };
            if let Some(v) = v {
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        // Second index: largest second-order decrease among I_low violators.
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best_obj = f64::INFINITY;
        if let Some(i) = i_sel {
            let ki = k.row(i);
            for t in 0..n {
                let (in_low, g_low) = if y[t] > 0.0 {
                    (!at_lower(&alpha, t), grad[t])
                } else {
                    (!at_upper(&alpha, t), -grad[t])
                };
                if !in_low {
                    continue;
                }
                gmax2 = gmax2.max(g_low);
                let grad_diff = gmax + g_low;
                if grad_diff > 0.0 {
                    let quad = diag[i] + diag[t] - 2.0 * ki[t];
                    let quad = if quad > 0.0 { quad } else { TAU };
                    let obj = -(grad_diff * grad_diff) / quad;
                    if obj <= best_obj {
                        best_obj = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let gap = if i_sel.is_some() && gmax2 > f64::NEG_INFINITY { gmax + gmax2 } else { 0.0 };
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) if gap >= tol => (i, j),
            _ => break (true, gap.max(0.0)),
        };
        if iterations >= cap {
            match limit {
                IterationLimit::Soft(_) => break (false, gap),
                IterationLimit::Hard(_) => return Err(Error::Convergence { iterations, residual: gap }),
            }
        }
        iterations += 1;

        let qij = y[i] * y[j] * k.get(i, j);
        let (ci, cj) = (upper[i], upper[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = diag[i] + diag[j] + 2.0 * qij;
            let quad = if quad > 0.0 { quad } else { TAU };
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
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = diag[i] + diag[j] - 2.0 * qij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        let (ki, kj) = (k.row(i), k.row(j));
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    };

    // Offset from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if at_upper(&alpha, t) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower(&alpha, t) {
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
    Ok(DualSolution { alpha, bias: -rho, iterations, kkt_gap, converged })
}

/// Per-subproblem diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub kkt_gap: f64,
    pub converged: bool,
    /// `|sum_i alpha_i y_i|`.
    pub equality_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub kernel: Kernel,
    pub c: f64,
    pub tol: f64,
    pub balanced: bool,
    /// `None` applies [`HARD_ITERATION_CAP`] as a hard limit.
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    /// Rows with a nonzero coefficient in any subproblem.
    pub support_vectors: Vec<Vec<f64>>,
    /// Per subproblem, `alpha_i * y_i` aligned with `support_vectors`.
    pub dual_coef: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub class_count: usize,
    pub reports: Vec<SolverReport>,
}

impl SvmModel {
    pub fn fit(x: &FeatureMatrix, y: &[usize], class_count: usize, params: &SvmParams) -> Result<Self> {
        let n = x.rows();
        let km = KernelMatrix::compute(x, &params.kernel);
        let mut counts = vec![0usize; class_count];
        y.iter().for_each(|&c| counts[c] += 1);
        let upper: Vec<f64> = y
            .iter()
            .map(|&c| {
                if params.balanced {
                    params.c * n as f64 / (class_count as f64 * counts[c] as f64)
                } else {
                    params.c
                }
            })
            .collect();
        let limit = match params.max_iter {
            Some(m) => IterationLimit::Soft(m),
            None => IterationLimit::Hard(HARD_ITERATION_CAP),
        };
        let positives: Vec<usize> = if class_count == 2 { vec![1] } else { (0..class_count).collect() };
        let mut solutions = Vec::with_capacity(positives.len());
        for &pos in &positives {
            let signs: Vec<f64> = y.iter().map(|&c| if c == pos { 1.0 } else { -1.0 }).collect();
            let sol = if signs.iter().all(|&s| s == signs[0]) {
                // One-sided subproblem: constant decision.
                DualSolution { alpha: vec![0.0; n], bias: signs[0], iterations: 0, kkt_gap: 0.0, converged: true }
            } else {
                solve_dual(&km, &signs, &upper, params.tol, limit)?
            };
            solutions.push((signs, sol));
        }
        let used: Vec<usize> = (0..n).filter(|&i| solutions.iter().any(|(_, s)| s.alpha[i] != 0.0)).collect();
        let support_vectors = used.iter().map(|&i| x.row(i).to_vec()).collect();
        let mut dual_coef = Vec::new();
        let mut bias = Vec::new();
        let mut reports = Vec::new();
        for (signs, s) in &solutions {
            dual_coef.push(used.iter().map(|&i| s.alpha[i] * signs[i]).collect());
            bias.push(s.bias);
            reports.push(SolverReport {
                iterations: s.iterations,
                kkt_gap: s.kkt_gap,
                converged: s.converged,
                equality_residual: s.alpha.iter().zip(signs).map(|(a, y)| a * y).sum::<f64>().abs(),
            });
        }
        Ok(Self { kernel: params.kernel, support_vectors, dual_coef, bias, class_count, reports })
    }

    /// One decision value per subproblem.
    pub fn decision_row(&self, x: &[f64]) -> Vec<f64> {
        let kv: Vec<f64> = self.support_vectors.iter().map(|s| self.kernel.eval(s, x)).collect();
        self.dual_coef
            .iter()
            .zip(&self.bias)
            .map(|(coef, b)| coef.iter().zip(&kv).map(|(c, k)| c * k).sum::<f64>() + b)
            .collect()
    }

    /// Logistic of the binary decision value, or a softmax over the
    /// one-vs-rest decision values.
    pub fn predict_proba_row(&self, x: &[f64]) -> Vec<f64> {
        let f = self.decision_row(x);
        if self.class_count == 2 {
            let p1 = if f[0] >= 0.0 { 1.0 / (1.0 + (-f[0]).exp()) } else { let e = f[0].exp(); e / (1.0 + e) };
            vec![1.0 - p1, p1]
        } else {
            super::gbt::softmax(&f)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kernels_match_closed_forms() {
        let (x, z) = ([1.0, 2.0], [3.0, -1.0]);
        assert_eq!(kernel_eval(KernelKind::Linear, &x, &z, 0.0, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(kernel_eval(KernelKind::Rbf, &x, &z, 0.5, 0.0).unwrap(), (-0.5f64 * 13.0).exp());
        assert_abs_diff_eq!(kernel_eval(KernelKind::Sigmoid, &x, &z, 0.5, 0.1).unwrap(), 0.6f64.tanh());
        assert!(kernel_eval(KernelKind::Linear, &x, &[1.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn two_point_dual_has_closed_form() {
        // x = -1 (class -1), x = +1 (class +1), linear kernel: alpha = 0.5, b = 0.
        let x = FeatureMatrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let k = KernelMatrix::compute(&x, &Kernel { kind: KernelKind::Linear, gamma: 0.0, coef0: 0.0 });
        let s = solve_dual(&k, &[-1.0, 1.0], &[10.0, 10.0], 1e-6, IterationLimit::Hard(100)).unwrap();
        assert_abs_diff_eq!(s.alpha[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.alpha[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.bias, 0.0, epsilon = 1e-12);
        assert!(s.converged);
    }

    #[test]
    fn box_constraint_caps_alpha() {
        let x = FeatureMatrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let k = KernelMatrix::compute(&x, &Kernel { kind: KernelKind::Linear, gamma: 0.0, coef0: 0.0 });
        let s = solve_dual(&k, &[-1.0, 1.0], &[0.1, 0.1], 1e-6, IterationLimit::Hard(100)).unwrap();
        assert_abs_diff_eq!(s.alpha[0], 0.1);
        assert_abs_diff_eq!(s.alpha[1], 0.1);
    }

    #[test]
    fn hard_cap_reports_convergence_error() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let k = KernelMatrix::compute(&x, &Kernel { kind: KernelKind::Rbf, gamma: 1.0, coef0: 0.0 });
        let upper = vec![100.0; 20];
        assert!(matches!(
            solve_dual(&k, &y, &upper, 1e-9, IterationLimit::Hard(1)),
            Err(Error::Convergence { .. })
        ));
        let soft = solve_dual(&k, &y, &upper, 1e-9, IterationLimit::Soft(1)).unwrap();
        assert!(!soft.converged);
        assert_eq!(soft.iterations, 1);
    }

    #[test]
    fn sign_maps_to_class_one() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0], vec![4.0]]).unwrap();
        let p = SvmParams {
            kernel: Kernel { kind: KernelKind::Linear, gamma: 0.0, coef0: 0.0 },
            c: 10.0,
            tol: 1e-3,
            balanced: false,
            max_iter: None,
        };
        let m = SvmModel::fit(&x, &[0, 0, 1, 1], 2, &p).unwrap();
        assert!(m.decision_row(&[4.0])[0] > 0.0);
        assert!(m.decision_row(&[0.0])[0] < 0.0);
        assert!(m.predict_proba_row(&[4.0])[1] > 0.5);
    }
}
