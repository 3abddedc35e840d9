use crate::autograd::sigmoid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Binary logistic regression `p(y = 1 | x) = σ(w·x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub l2: f64,
    pub feature: String,
}

/// Largest bias used for single-class training sets; σ(36) rounds to 1 in f64.
const SATURATED_BIAS: f64 = 36.0;

const MAX_NEWTON_ITERS: usize = 100;

impl<T: Scalar> LogRegModel<T> {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &[T]) -> T {
        self.weights.iter().zip(x).fold(self.bias, |acc, (&w, &v)| acc + w * v)
    }

    pub fn probability(&self, x: &[T]) -> T {
        sigmoid(self.decision(x))
    }

    /// Thresholded prediction; a probability of exactly one half yields `tie`.
    pub fn predict(&self, x: &[T], tie: bool) -> bool {
        let z = self.decision(x);
        if z == T::zero() {
            tie
        } else {
            z > T::zero()
        }
    }
}

fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Problem<'a, T> {
    x: &'a [Vec<T>],
    y: &'a [bool],
    l2: T,
    dim: usize,
}

impl<T: Scalar> Problem<'_, T> {
    fn n(&self) -> T {
        T::of(self.x.len() as f64)
    }

    /// Parameters are packed as `[w; b]`.
    fn margins(&self, theta: &[T]) -> Vec<T> {
        let (w, b) = theta.split_at(self.dim);
        self.x.iter().map(|row| row.iter().zip(w).fold(b[0], |acc, (&v, &wi)| acc + v * wi)).collect()
    }

    fn loss(&self, theta: &[T]) -> T {
        let z = self.margins(theta);
        let data: T = z
            .iter()
            .zip(self.y)
            .map(|(&zi, &yi)| softplus(zi) - if yi { zi } else { T::zero() })
            .sum();
        let reg: T = theta[..self.dim].iter().map(|&w| w * w).sum();
        data / self.n() + self.l2 * reg / T::of(2.0)
    }

    /// Gradient and the curvature weights `p (1 - p)`.
    fn gradient(&self, theta: &[T]) -> (Vec<T>, Vec<T>) {
        let z = self.margins(theta);
        let n = self.n();
        let mut g = vec![T::zero(); self.dim + 1];
        let mut curv = Vec::with_capacity(z.len());
        for ((row, &zi), &yi) in self.x.iter().zip(&z).zip(self.y) {
            let p = sigmoid(zi);
            let r = p - if yi { T::one() } else { T::zero() };
            for (gj, &v) in g.iter_mut().zip(row) {
                *gj += r * v;
            }
            g[self.dim] += r;
            curv.push(p * (T::one() - p));
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj /= n;
            if j < self.dim {
                *gj += self.l2 * theta[j];
            }
        }
        (g, curv)
    }

    fn hessian_vec(&self, curv: &[T], v: &[T]) -> Vec<T> {
        let n = self.n();
        let mut out = vec![T::zero(); self.dim + 1];
        for (row, &d) in self.x.iter().zip(curv) {
            let xv = row.iter().zip(v).fold(v[self.dim], |acc, (&a, &b)| acc + a * b);
            let s = d * xv;
            for (o, &a) in out.iter_mut().zip(row) {
                *o += s * a;
            }
            out[self.dim] += s;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o /= n;
            if j < self.dim {
                *o += self.l2 * v[j];
            }
        }
        out
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Conjugate gradient for `H d = -g`, truncated at `tol` relative residual.
fn newton_direction<T: Scalar>(p: &Problem<'_, T>, curv: &[T], g: &[T], tol: T) -> Vec<T> {
    let m = g.len();
    let mut d = vec![T::zero(); m];
    let mut r: Vec<T> = g.iter().map(|&x| -x).collect();
    let mut s = r.clone();
    let mut rr = dot(&r, &r);
    let stop = tol * tol * rr;
    for _ in 0..2 * m + 10 {
        if rr <= stop {
            break;
        }
        let hs = p.hessian_vec(curv, &s);
        let shs = dot(&s, &hs);
        if shs <= T::zero() {
            break;
        }
        let alpha = rr / shs;
        for i in 0..m {
            d[i] += alpha * s[i];
            r[i] -= alpha * hs[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..m {
            s[i] = r[i] + beta * s[i];
        }
    }
    if d.iter().all(|x| *x == T::zero()) {
        return g.iter().map(|&x| -x).collect();
    }
    d
}

/// Fits mean logistic loss plus `l2 · ‖w‖² / 2` (bias unregularized) by
/// truncated Newton with backtracking, to a gradient norm of `1e-8`.
///
/// A single-class training set yields zero weights and a saturated bias.
pub fn train_logreg<T: Scalar>(x: &[Vec<T>], y: &[bool], l2: f64, feature: &str) -> Result<LogRegModel<T>> {
    if x.len() != y.len() {
        return Err(Error::validation(format!("{} inputs but {} labels", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::validation(format!("no training examples for `{feature}`")));
    }
    if !(l2.is_finite() && l2 >= 0.0) {
        return Err(Error::validation(format!("l2 strength must be non-negative, got {l2}")));
    }
    let dim = x[0].len();
    if let Some(row) = x.iter().position(|r| r.len() != dim) {
        return Err(Error::validation(format!("input {row} has dim {}, expected {dim}", x[row].len())));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("classifier inputs for `{feature}`")));
    }
    let ones = y.iter().filter(|&&v| v).count();
    if ones == 0 || ones == y.len() {
        let sign = if ones == 0 { -1.0 } else { 1.0 };
        return Ok(LogRegModel {
            weights: vec![T::zero(); dim],
            bias: T::of(sign * SATURATED_BIAS),
            l2,
            feature: feature.to_string(),
        });
    }

    let problem = Problem { x, y, l2: T::of(l2), dim };
    let mut theta = vec![T::zero(); dim + 1];
    // Start the bias at the log-odds of the labels.
    theta[dim] = T::of((ones as f64 / (y.len() - ones) as f64).ln());
    let tol = T::of(1e-8_f64.max(100.0 * T::epsilon().as_f64()));
    let mut f = problem.loss(&theta);
    for _ in 0..MAX_NEWTON_ITERS {
        let (g, curv) = problem.gradient(&theta);
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= tol {
            break;
        }
        let forcing = gnorm.sqrt().min(T::of(0.5));
        let d = newton_direction(&problem, &curv, &g, forcing);
        let slope = dot(&g, &d);
        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<T> = theta.iter().zip(&d).map(|(&t, &di)| t + step * di).collect();
            let fc = problem.loss(&cand);
            if fc <= f + T::of(1e-4) * step * slope {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            step *= T::of(0.5);
        }
        if !accepted {
            // No representable decrease left.
            break;
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("logistic regression for `{feature}`")));
    }
    let bias = theta[dim];
    theta.truncate(dim);
    Ok(LogRegModel {
        weights: theta,
        bias,
        l2,
        feature: feature.to_string(),
    })
}

/// Per-dimension centering and scaling fit on training rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Zero-variance dimensions are centered but not scaled.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_one_dim() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = vec![false, true];
        let m = train_logreg::<f64>(&x, &y, 0.1, "S_T").unwrap();
        assert!(!m.predict(&[-1.0], true));
        assert!(m.predict(&[1.0], false));
        assert!(m.weights[0] > 0.0);
    }

    #[test]
    fn single_class_predicts_it() {
        let x = vec![vec![0.3, 1.0], vec![-2.0, 0.5]];
        let m = train_logreg::<f64>(&x, &[true, true], 1.0, "S_T").unwrap();
        assert!(m.predict(&[100.0, -100.0], false));
        assert_eq!(m.weights, vec![0.0, 0.0]);
    }

    #[test]
    fn duplicated_data_same_model() {
        let x = vec![vec![0.1, 2.0], vec![1.0, -1.0], vec![-0.5, 0.3], vec![2.0, 0.0]];
        let y = vec![true, false, true, false];
        let a = train_logreg::<f64>(&x, &y, 0.5, "S_T").unwrap();
        let x2: Vec<_> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<_> = y.iter().chain(&y).copied().collect();
        let b = train_logreg::<f64>(&x2, &y2, 0.5, "S_T").unwrap();
        for (p, q) in a.weights.iter().zip(&b.weights) {
            assert!((p - q).abs() < 1e-7);
        }
        assert!((a.bias - b.bias).abs() < 1e-7);
    }

    #[test]
    fn converges_to_stationary_point() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()]).collect();
        let y: Vec<bool> = (0..30).map(|i| (i * 7) % 5 < 2).collect();
        let m = train_logreg::<f64>(&x, &y, 0.2, "S_T").unwrap();
        let p = Problem { x: &x, y: &y, l2: 0.2, dim: 2 };
        let mut theta = m.weights.clone();
        theta.push(m.bias);
        let (g, _) = p.gradient(&theta);
        assert!(dot(&g, &g).sqrt() <= 1e-8);
    }

    #[test]
    fn standardizer_handles_constant_dims() {
        let s = Standardizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        assert_eq!(s.apply(&[1.0, 5.0]), vec![-1.0, 0.0]);
        assert_eq!(s.apply(&[3.0, 7.0]), vec![1.0, 2.0]);
    }
}
