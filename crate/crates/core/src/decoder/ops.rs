//! Row-batched primitives with hand-written backward passes.

use ndarray::{Array1, Array2, Axis};

use super::params::{LayerNorm, Linear, Mlp};

/// Variance floor inside LayerNorm. Small enough that normalized rows have
/// unit variance to well within 1e-6 for any non-constant input.
pub const LN_EPS: f64 = 1e-12;

impl Linear {
    pub(crate) fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub(crate) fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.to_vec();
        for (o, row) in out.iter_mut().zip(self.weight.rows()) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns d input.
    pub(crate) fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// Tanh-approximated GELU. Smooth, so finite differences stay clean.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// Cached activations of one [`Mlp`] application.
#[derive(Debug, Clone)]
pub(crate) struct MlpCache {
    pub input: Array2<f64>,
    pub pre: Array2<f64>,
    pub hidden: Array2<f64>,
}

impl Mlp {
    pub(crate) fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let pre = self.fc1.forward(x);
        let hidden = pre.mapv(gelu);
        let out = self.fc2.forward(&hidden);
        (out, MlpCache { input: x.clone(), pre, hidden })
    }

    pub(crate) fn backward(&self, cache: &MlpCache, dy: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let d_hidden = self.fc2.backward(&cache.hidden, dy, &mut grad.fc2);
        let d_pre = d_hidden * cache.pre.mapv(gelu_grad);
        self.fc1.backward(&cache.input, &d_pre, &mut grad.fc1)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    pub normalized: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Per-row mean and variance normalization without the affine part.
pub(crate) fn normalize_rows(x: &Array2<f64>) -> NormCache {
    let n = x.ncols() as f64;
    let mut normalized = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let inv = *s;
        row.mapv_inplace(|v| v * inv);
    }
    NormCache { normalized, inv_std }
}

impl LayerNorm {
    pub(crate) fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, NormCache) {
        let cache = normalize_rows(x);
        let out = &cache.normalized * &self.gamma + &self.beta;
        (out, cache)
    }

    pub(crate) fn backward(&self, cache: &NormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &cache.normalized).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let d_norm = dy * &self.gamma;
        let n = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
            let g = d_norm.row(i);
            let xh = cache.normalized.row(i);
            let mean_g = g.sum() / n;
            let mean_gx = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
            let s = cache.inv_std[i];
            for ((o, &gv), &xv) in row.iter_mut().zip(g.iter()).zip(xh.iter()) {
                *o = s * (gv - mean_g - xv * mean_gx);
            }
        }
        dx
    }
}

/// In-place softmax of one slice.
pub(crate) fn softmax(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Gradient of softmax inputs given the outputs and d outputs.
pub(crate) fn softmax_backward(probs: &[f64], d_probs: &[f64], d_logits: &mut [f64]) {
    let dot: f64 = probs.iter().zip(d_probs).map(|(p, d)| p * d).sum();
    for ((o, &p), &d) in d_logits.iter_mut().zip(probs).zip(d_probs) {
        *o = p * (d - dot);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            assert!((gelu_grad(x) - fd(gelu, x)).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn normalized_rows_have_zero_mean_unit_variance() {
        let x = array![[1.0, 2.0, 4.0, 8.0], [-3.0, 0.5, 0.25, 9.0]];
        let c = normalize_rows(&x);
        for row in c.normalized.rows() {
            let mean = row.sum() / 4.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_backward_matches_differences() {
        let x = array![[0.3, -1.2, 2.0, 0.7], [1.5, 0.1, -0.4, 0.9]];
        let ln = LayerNorm { gamma: array![1.1, 0.9, -0.5, 2.0], beta: array![0.1, 0.0, -0.2, 0.3] };
        let w = array![[0.2, -0.4, 1.0, 0.5], [-1.0, 0.3, 0.8, -0.6]];
        let loss = |x: &Array2<f64>| (ln.forward(x).0 * &w).sum();
        let (_, cache) = ln.forward(&x);
        let mut grad = LayerNorm { gamma: Array1::zeros(4), beta: Array1::zeros(4) };
        let dx = ln.backward(&cache, &w, &mut grad);
        for i in 0..2 {
            for j in 0..4 {
                let mut xp = x.clone();
                xp[[i, j]] += 1e-6;
                let mut xm = x.clone();
                xm[[i, j]] -= 1e-6;
                let num = (loss(&xp) - loss(&xm)) / 2e-6;
                assert!((num - dx[[i, j]]).abs() < 1e-7, "({i},{j}) {num} vs {}", dx[[i, j]]);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one_and_backward_matches() {
        let mut p = vec![0.3, -2.0, 1.5];
        softmax(&mut p);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let d = [0.2, -0.1, 0.7];
        let mut dl = [0.0; 3];
        softmax_backward(&p, &d, &mut dl);
        let f = |z: [f64; 3]| {
            let mut q = z.to_vec();
            softmax(&mut q);
            q.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>()
        };
        for j in 0..3 {
            let mut zp = [0.3, -2.0, 1.5];
            let mut zm = zp;
            zp[j] += 1e-6;
            zm[j] -= 1e-6;
            assert!(((f(zp) - f(zm)) / 2e-6 - dl[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
