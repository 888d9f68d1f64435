//! L2-regularized multinomial logistic regression on frozen embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadOptions {
    /// Weight of `‖W‖²`; the bias is not penalized.
    pub reg_lambda: f64,
    /// Stop once the gradient's Euclidean norm falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Z-score features with calibration-set statistics before fitting.
    pub standardize: bool,
}

impl Default for HeadOptions {
    fn default() -> Self {
        HeadOptions {
            reg_lambda: 1e-3,
            grad_tol: 1e-6,
            max_iter: 1000,
            standardize: false,
        }
    }
}

/// Row-major `[n, dim]` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Features {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::invalid("features", "length is not a multiple of dim"));
        }
        Ok(Features { dim, values })
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn select(&self, rows: &[usize]) -> Features {
        let mut values = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        Features { dim: self.dim, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub dim: usize,
    pub n_classes: usize,
    /// `[dim, n_classes]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// Per-feature `(mean, scale)` applied before the affine map.
    pub standardizer: Option<(Vec<f64>, Vec<f64>)>,
    pub diagnostics: FitDiagnostics,
}

impl LinearHead {
    /// `[n, n_classes]` logits.
    pub fn logits(&self, x: &Features) -> Vec<f64> {
        let m = self.n_classes;
        let mut out = Vec::with_capacity(x.n_rows() * m);
        let mut buf = vec![0.0; self.dim];
        for i in 0..x.n_rows() {
            let row = match &self.standardizer {
                Some((mean, scale)) => {
                    for (j, v) in x.row(i).iter().enumerate() {
                        buf[j] = (v - mean[j]) / scale[j];
                    }
                    &buf[..]
                }
                None => x.row(i),
            };
            let start = out.len();
            out.extend_from_slice(&self.bias);
            for (j, &v) in row.iter().enumerate() {
                for c in 0..m {
                    out[start + c] += v * self.weight[j * m + c];
                }
            }
        }
        out
    }

    pub fn predict(&self, x: &Features) -> Vec<usize> {
        self.logits(x)
            .chunks(self.n_classes)
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Score for class 1 against class 0: the logit difference, which ranks
    /// examples like the class-1 probability without saturating.
    pub fn binary_scores(&self, x: &Features) -> Result<Vec<f64>> {
        if self.n_classes != 2 {
            return Err(Error::invalid("n_classes", "binary scores need exactly 2 classes"));
        }
        Ok(self.logits(x).chunks(2).map(|r| r[1] - r[0]).collect())
    }
}

/// Mean cross-entropy plus `λ‖W‖²` and its gradient, parameters packed as
/// `[W row-major, b]`.
pub struct HeadObjective<'a> {
    x: &'a Features,
    labels: &'a [usize],
    n_classes: usize,
    lambda: f64,
}

impl<'a> HeadObjective<'a> {
    pub fn new(x: &'a Features, labels: &'a [usize], n_classes: usize, lambda: f64) -> Self {
        HeadObjective {
            x,
            labels,
            n_classes,
            lambda,
        }
    }

    pub fn n_params(&self) -> usize {
        (self.x.dim + 1) * self.n_classes
    }

    pub fn value_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (d, m) = (self.x.dim, self.n_classes);
        let n = self.x.n_rows();
        let (w, b) = theta.split_at(d * m);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut z = vec![0.0; m];
        for i in 0..n {
            let row = self.x.row(i);
            z.copy_from_slice(b);
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    for c in 0..m {
                        z[c] += v * w[j * m + c];
                    }
                }
            }
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            let y = self.labels[i];
            loss += lse - z[y];
            for c in 0..m {
                let r = ((z[c] - lse).exp() - if c == y { 1.0 } else { 0.0 }) / n as f64;
                z[c] = r;
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    for c in 0..m {
                        grad[j * m + c] += v * z[c];
                    }
                }
            }
            for c in 0..m {
                grad[d * m + c] += z[c];
            }
        }
        let mut reg = 0.0;
        for (g, &wv) in grad[..d * m].iter_mut().zip(w) {
            reg += wv * wv;
            *g += 2.0 * self.lambda * wv;
        }
        loss / n as f64 + self.lambda * reg
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const MEMORY: usize = 10;

/// Limited-memory BFGS with backtracking Armijo steps, from `theta`.
pub fn minimize_head(obj: &HeadObjective<'_>, theta: &mut [f64], grad_tol: f64, max_iter: usize) -> FitDiagnostics {
    let n = theta.len();
    let mut g = vec![0.0; n];
    let mut f = obj.value_and_grad(theta, &mut g);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut new_theta = vec![0.0; n];
    let mut new_g = vec![0.0; n];
    let mut iterations = 0;
    while iterations < max_iter && norm(&g) > grad_tol {
        iterations += 1;
        // two-loop recursion
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alpha[i] = rho * dot(&s_hist[i], &q);
            for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        let gamma = if k > 0 {
            dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1])
        } else {
            1.0 / norm(&g).max(1.0)
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &q);
            for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
                *qj += sj * (alpha[i] - beta);
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = 1.0;
        let mut new_f;
        loop {
            for j in 0..n {
                new_theta[j] = theta[j] + step * dir[j];
            }
            new_f = obj.value_and_grad(&new_theta, &mut new_g);
            if new_f <= f + 1e-4 * step * slope || step < 1e-20 {
                break;
            }
            step *= 0.5;
        }
        if !(new_f < f) && step < 1e-20 {
            break;
        }
        let s: Vec<f64> = (0..n).map(|j| new_theta[j] - theta[j]).collect();
        let y: Vec<f64> = (0..n).map(|j| new_g[j] - g[j]).collect();
        if dot(&s, &y) > 1e-12 * norm(&s) * norm(&y) {
            if s_hist.len() == MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        theta.copy_from_slice(&new_theta);
        g.copy_from_slice(&new_g);
        f = new_f;
    }
    let grad_norm = norm(&g);
    FitDiagnostics {
        iterations,
        objective: f,
        grad_norm,
        converged: grad_norm <= grad_tol,
    }
}

fn standardizer(x: &Features) -> (Vec<f64>, Vec<f64>) {
    let n = x.n_rows() as f64;
    let mut mean = vec![0.0; x.dim];
    for i in 0..x.n_rows() {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; x.dim];
    for i in 0..x.n_rows() {
        for ((s, v), m) in scale.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    (mean, scale)
}

/// Fits a head from zero initialization.
pub fn fit_linear_head(x: &Features, labels: &[usize], n_classes: usize, opts: &HeadOptions) -> Result<LinearHead> {
    fit_linear_head_from(x, labels, n_classes, opts, None)
}

/// Fits a head starting from `init` (packed `[W, b]`), or from zeros.
pub fn fit_linear_head_from(
    x: &Features,
    labels: &[usize],
    n_classes: usize,
    opts: &HeadOptions,
    init: Option<&[f64]>,
) -> Result<LinearHead> {
    if n_classes < 2 {
        return Err(Error::TooFewClasses(n_classes));
    }
    if labels.len() != x.n_rows() {
        return Err(Error::Shape {
            expected: vec![x.n_rows()],
            got: vec![labels.len()],
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::invalid("labels", format!("label {l} out of range")));
    }
    for c in 0..n_classes {
        if !labels.contains(&c) {
            return Err(Error::EmptyClass(c.to_string()));
        }
    }
    if x.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embeddings"));
    }
    if !(opts.reg_lambda >= 0.0) {
        return Err(Error::invalid("reg_lambda", "must be non-negative"));
    }
    let std = opts.standardize.then(|| standardizer(x));
    let scaled;
    let fit_x = match &std {
        Some((mean, scale)) => {
            let mut v = x.values.clone();
            for row in v.chunks_mut(x.dim) {
                for (j, e) in row.iter_mut().enumerate() {
                    *e = (*e - mean[j]) / scale[j];
                }
            }
            scaled = Features { dim: x.dim, values: v };
            &scaled
        }
        None => x,
    };
    let obj = HeadObjective::new(fit_x, labels, n_classes, opts.reg_lambda);
    let mut theta = match init {
        Some(t) if t.len() == obj.n_params() => t.to_vec(),
        Some(t) => {
            return Err(Error::Shape {
                expected: vec![obj.n_params()],
                got: vec![t.len()],
            })
        }
        None => vec![0.0; obj.n_params()],
    };
    let diagnostics = minimize_head(&obj, &mut theta, opts.grad_tol, opts.max_iter);
    let bias = theta.split_off(x.dim * n_classes);
    if theta.iter().chain(&bias).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linear head"));
    }
    Ok(LinearHead {
        dim: x.dim,
        n_classes,
        weight: theta,
        bias,
        standardizer: std,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_separable() {
        let x = Features::new(1, vec![-1.0, -1.0, 1.0, 1.0]).unwrap();
        let y = [0, 0, 1, 1];
        let opts = HeadOptions {
            reg_lambda: 1e-4,
            ..Default::default()
        };
        let head = fit_linear_head(&x, &y, 2, &opts).unwrap();
        assert_eq!(head.predict(&x), y);
        assert!(head.diagnostics.converged, "{:?}", head.diagnostics);
    }

    #[test]
    fn zero_features_give_uniform_head() {
        let x = Features::new(3, vec![0.0; 12]).unwrap();
        let head = fit_linear_head(&x, &[0, 1, 0, 1], 2, &HeadOptions::default()).unwrap();
        assert!(head.weight.iter().all(|&w| w.abs() < 1e-9));
        for row in head.logits(&x).chunks(2) {
            assert!((row[0] - row[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_embeddings_distinct_labels() {
        let x = Features::new(2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        let head = fit_linear_head(&x, &[0, 1, 2], 3, &HeadOptions::default()).unwrap();
        let l = head.logits(&x);
        assert!((l[0] - l[1]).abs() < 1e-4 && (l[1] - l[2]).abs() < 1e-4);
    }

    #[test]
    fn gradient_matches_differences() {
        let x = Features::new(3, vec![0.3, -1.2, 0.5, 1.1, 0.2, -0.7, -0.4, 0.9, 1.5, 0.0, 0.1, -0.2]).unwrap();
        let y = [0, 2, 1, 2];
        let obj = HeadObjective::new(&x, &y, 3, 0.05);
        let theta: Vec<f64> = (0..obj.n_params()).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut g = vec![0.0; theta.len()];
        obj.value_and_grad(&theta, &mut g);
        let mut scratch = vec![0.0; theta.len()];
        for j in 0..theta.len() {
            let (mut p, mut m) = (theta.clone(), theta.clone());
            p[j] += 1e-6;
            m[j] -= 1e-6;
            let num = (obj.value_and_grad(&p, &mut scratch) - obj.value_and_grad(&m, &mut scratch)) / 2e-6;
            assert!((num - g[j]).abs() < 1e-7, "{j}: {num} vs {}", g[j]);
        }
    }

    #[test]
    fn standardized_fit_scores_raw_inputs() {
        let x = Features::new(1, vec![100.0, 101.0, 109.0, 110.0]).unwrap();
        let opts = HeadOptions {
            standardize: true,
            ..Default::default()
        };
        let head = fit_linear_head(&x, &[0, 0, 1, 1], 2, &opts).unwrap();
        assert_eq!(head.predict(&x), [0, 0, 1, 1]);
    }

    #[test]
    fn input_errors() {
        let x = Features::new(1, vec![1.0, 2.0]).unwrap();
        assert!(matches!(fit_linear_head(&x, &[0, 0], 2, &HeadOptions::default()), Err(Error::EmptyClass(_))));
        assert!(fit_linear_head(&x, &[0], 2, &HeadOptions::default()).is_err());
        assert!(matches!(fit_linear_head(&x, &[0, 0], 1, &HeadOptions::default()), Err(Error::TooFewClasses(1))));
    }
}
