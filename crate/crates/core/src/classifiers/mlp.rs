//! Fully-connected network with a softmax output, trained full-batch by
//! Adam, SGD with momentum, or L-BFGS.
//!
//! All weights and biases live in one flat parameter vector so the optimisers
//! and gradient checks work on plain slices.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Logistic,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation output `h`.
    fn derivative(self, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
            Activation::Logistic => h * (1.0 - h),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Mean over samples of the squared error summed over classes.
    Mse,
    /// Mean negative log-likelihood.
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Solver {
    Adam,
    Sgd,
    Lbfgs,
}

/// Network shape and objective. `sizes` runs input, hidden..., output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
    /// L2 penalty `alpha / (2N) * |W|^2` on weights, not biases.
    pub alpha: f64,
}

struct Layer {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

impl Network {
    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    fn unpack(&self, theta: &[f64]) -> Vec<Layer> {
        let mut at = 0;
        self.sizes
            .windows(2)
            .map(|p| {
                let (i, o) = (p[0], p[1]);
                let w = DMatrix::from_column_slice(i, o, &theta[at..at + i * o]);
                at += i * o;
                let b = DVector::from_column_slice(&theta[at..at + o]);
                at += o;
                Layer { w, b }
            })
            .collect()
    }

    /// Glorot-uniform initial parameters.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let factor = if self.activation == Activation::Logistic { 2.0 } else { 6.0 };
        let mut theta = Vec::with_capacity(self.n_params());
        for p in self.sizes.windows(2) {
            let bound = (factor / (p[0] + p[1]) as f64).sqrt();
            for _ in 0..p[0] * p[1] + p[1] {
                theta.push(rng.gen_range(-bound..bound));
            }
        }
        theta
    }

    /// Layer outputs, input first; the last entry holds class probabilities.
    fn forward_all(&self, theta: &[f64], x: &DMatrix<f64>) -> (Vec<Layer>, Vec<DMatrix<f64>>) {
        let layers = self.unpack(theta);
        let mut outs = vec![x.clone()];
        let last = layers.len() - 1;
        for (l, layer) in layers.iter().enumerate() {
            let mut z = outs[l].clone() * &layer.w;
            for mut row in z.row_iter_mut() {
                row += layer.b.transpose();
            }
            if l < last {
                z.apply(|v| *v = self.activation.apply(*v));
            } else {
                for mut row in z.row_iter_mut() {
                    let top = row.max();
                    row.apply(|v| *v = (*v - top).exp());
                    let s = row.sum();
                    row /= s;
                }
            }
            outs.push(z);
        }
        (layers, outs)
    }

    pub fn forward(&self, theta: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_all(theta, x).1.pop().expect("output layer")
    }

    /// Objective and its gradient on a batch with one-hot targets.
    pub fn loss_and_grad(&self, theta: &[f64], x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<f64>) {
        let n = x.nrows() as f64;
        let (layers, outs) = self.forward_all(theta, x);
        let p = outs.last().expect("output");
        let mut loss = match self.loss {
            LossKind::Mse => (p - y).map(|v| v * v).sum() / n,
            LossKind::CrossEntropy => -p.zip_map(y, |pv, yv| if yv > 0.0 { yv * pv.max(1e-300).ln() } else { 0.0 }).sum() / n,
        };
        let mut dz = match self.loss {
            LossKind::CrossEntropy => (p - y) / n,
            LossKind::Mse => {
                let dp = (p - y) * (2.0 / n);
                let mut dz = DMatrix::zeros(p.nrows(), p.ncols());
                for r in 0..p.nrows() {
                    let inner: f64 = (0..p.ncols()).map(|c| p[(r, c)] * dp[(r, c)]).sum();
                    for c in 0..p.ncols() {
                        dz[(r, c)] = p[(r, c)] * (dp[(r, c)] - inner);
                    }
                }
                dz
            }
        };
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(layers.len());
        for l in (0..layers.len()).rev() {
            let mut dw = outs[l].transpose() * &dz;
            if self.alpha > 0.0 {
                loss += self.alpha / (2.0 * n) * layers[l].w.map(|v| v * v).sum();
                dw += &layers[l].w * (self.alpha / n);
            }
            let db = DVector::from_iterator(dz.ncols(), dz.column_iter().map(|c| c.sum()));
            if l > 0 {
                let mut dh = &dz * layers[l].w.transpose();
                dh.zip_apply(&outs[l], |d, h| *d *= self.activation.derivative(h));
                dz = dh;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(theta.len());
        for (dw, db) in grads {
            flat.extend_from_slice(dw.as_slice());
            flat.extend_from_slice(db.as_slice());
        }
        (loss, flat)
    }
}

/// Adam optimiser state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { learning_rate, beta1, beta2, epsilon, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub solver: Solver,
    pub loss: LossKind,
    pub max_iter: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub network: Network,
    pub theta: Vec<f64>,
    /// Training objective before each epoch, or after each L-BFGS step.
    pub loss_curve: Vec<f64>,
}

fn one_hot(y: &[usize], k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(y.len(), k, |r, c| if y[r] == c { 1.0 } else { 0.0 })
}

pub(crate) fn to_dmatrix(x: &FeatureMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.rows(), x.cols(), x.values())
}

fn finite(loss: f64, step: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Training(format!("training loss diverged at step {step}")))
    }
}

impl MlpModel {
    pub fn fit(x: &FeatureMatrix, y: &[usize], class_count: usize, params: &MlpParams, seed: u64) -> Result<Self> {
        let mut sizes = vec![x.cols()];
        sizes.extend(&params.hidden);
        sizes.push(class_count);
        let network = Network { sizes, activation: params.activation, loss: params.loss, alpha: params.alpha };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = network.init(&mut rng);
        let xm = to_dmatrix(x);
        let ym = one_hot(y, class_count);
        let mut curve = Vec::with_capacity(params.max_iter);
        match params.solver {
            Solver::Lbfgs => {
                curve = lbfgs(|t| network.loss_and_grad(t, &xm, &ym), &mut theta, params.max_iter)?;
            }
            Solver::Adam | Solver::Sgd => {
                let mut adam = Adam::new(theta.len(), params.learning_rate, params.beta1, params.beta2, params.epsilon);
                let mut velocity = vec![0.0; theta.len()];
                for epoch in 0..params.max_iter {
                    let (loss, grad) = network.loss_and_grad(&theta, &xm, &ym);
                    curve.push(finite(loss, epoch)?);
                    if params.solver == Solver::Adam {
                        adam.step(&mut theta, &grad);
                    } else {
                        for i in 0..theta.len() {
                            velocity[i] = params.momentum * velocity[i] - params.learning_rate * grad[i];
                            theta[i] += velocity[i];
                        }
                    }
                    if theta.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Training(format!("parameters diverged at epoch {epoch}")));
                    }
                }
            }
        }
        Ok(Self { network, theta, loss_curve: curve })
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Vec<Vec<f64>> {
        let p = self.network.forward(&self.theta, &to_dmatrix(x));
        p.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// Limited-memory BFGS with Armijo backtracking. Returns the objective after
/// each accepted step.
pub fn lbfgs<F>(mut f: F, theta: &mut [f64], max_iter: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    const MEMORY: usize = 10;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (mut fx, mut g) = f(theta);
    finite(fx, 0)?;
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut curve = Vec::new();
    for it in 0..max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm < 1e-10 {
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut coeffs = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            coeffs.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(coeffs.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut step = if hist.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            let (ft, gt) = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, ft, gt)) = accepted else { break };
        let s: Vec<f64> = trial.iter().zip(theta.iter()).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, yv, 1.0 / sy));
        }
        theta.copy_from_slice(&trial);
        let improvement = fx - ft;
        fx = finite(ft, it + 1)?;
        g = gt;
        curve.push(fx);
        if improvement <= 1e-14 * fx.abs().max(1.0) {
            break;
        }
    }
    Ok(curve)
}
