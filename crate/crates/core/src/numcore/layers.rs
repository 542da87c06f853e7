use rand::Rng;

use super::params::{ParamSet, ParamView};
use super::tensor::{axpy, Tensor2};
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::invalid("softmax input is not finite"));
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    Ok(out)
}

pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::invalid("log-softmax of an empty vector"));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::invalid("log-softmax input is not finite"));
    }
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(v.iter().map(|x| x - lse).collect())
}

/// Backward through `y = softmax(x)` given `dL/dy`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let inner: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, di)| yi * (di - inner)).collect()
}

/// Backward through `y = tanh(x)` given the forward output.
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect()
}

/// Backward through `y = sigmoid(x)` given the forward output.
pub fn sigmoid_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, d)| d * y * (1.0 - y)).collect()
}

/// Affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor2,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Tensor2::zeros(output, input),
            b: vec![0.0; output],
        }
    }

    /// Weights uniform in `±sqrt(1/input)`, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = if input > 0 { (1.0 / input as f64).sqrt() } else { 0.0 };
        Linear {
            w: Tensor2::uniform(output, input, bound, rng),
            b: vec![0.0; output],
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn output_size(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size() {
            return Err(Error::invalid(format!(
                "linear layer expects input of length {}, got {}",
                self.input_size(),
                x.len()
            )));
        }
        let mut y = self.b.clone();
        self.w.matvec_add(x, &mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        grad.w.add_outer(dy, x);
        for (g, d) in grad.b.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; self.input_size()];
        self.w.matvec_t_add(dy, &mut dx);
        dx
    }

    pub(crate) fn views_prefixed(&self, prefix: &str) -> Vec<ParamView<'_>> {
        vec![
            ParamView {
                name: format!("{prefix}.w"),
                shape: self.w.shape().to_vec(),
                values: self.w.as_slice(),
            },
            ParamView {
                name: format!("{prefix}.b"),
                shape: vec![self.b.len()],
                values: &self.b,
            },
        ]
    }

    pub(crate) fn slices_mut_inner(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), &mut self.b]
    }
}

impl ParamSet for Linear {
    fn views(&self) -> Vec<ParamView<'_>> {
        self.views_prefixed("linear")
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.slices_mut_inner()
    }
}

/// Coordinate-wise mean of a list of equal-length vectors. An empty list
/// yields the zero vector of length `dim`.
pub fn mean_rows(rows: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if rows.is_empty() {
        return out;
    }
    for r in rows {
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

/// `Σ_t w_t v_t`
pub fn weighted_sum(weights: &[f64], values: &[Vec<f64>]) -> Vec<f64> {
    let dim = values.first().map_or(0, |v| v.len());
    let mut out = vec![0.0; dim];
    for (w, v) in weights.iter().zip(values) {
        axpy(*w, v, &mut out);
    }
    out
}

/// Gradients of `Σ_t w_t v_t` w.r.t. the weights and each value vector.
pub fn weighted_sum_backward(
    weights: &[f64],
    values: &[Vec<f64>],
    dy: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let dw = values
        .iter()
        .map(|v| v.iter().zip(dy).map(|(a, b)| a * b).sum())
        .collect();
    let dv = weights
        .iter()
        .map(|w| dy.iter().map(|d| w * d).collect())
        .collect();
    (dw, dv)
}

pub fn concat(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

pub fn split(v: &[f64], sizes: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &s in sizes {
        out.push(v[offset..offset + s].to_vec());
        offset += s;
    }
    out
}
