//! Uniform forward/backward entry points over every layer kind the two
//! models use. The models call the typed functions directly; this surface
//! exists so each layer can be exercised and gradient-checked in isolation.

use super::layers::{
    concat, mean_rows, sigmoid, sigmoid_backward, softmax, softmax_backward, split,
    tanh_backward, weighted_sum, weighted_sum_backward, Linear,
};
use super::lstm::{LstmCell, LstmTrace};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// A layer together with borrowed parameters where it has any.
#[derive(Debug, Clone, Copy)]
pub enum Layer<'a> {
    Linear(&'a Linear),
    Tanh,
    Sigmoid,
    Softmax,
    Lstm(&'a LstmCell),
    /// Row gather from an embedding matrix.
    Embedding(&'a Tensor2),
    Concat,
    Mean,
    /// First input holds the weights, the rest are the value vectors.
    WeightedSum,
}

impl Layer<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Linear(_) => "linear",
            Layer::Tanh => "tanh",
            Layer::Sigmoid => "sigmoid",
            Layer::Softmax => "softmax",
            Layer::Lstm(_) => "lstm",
            Layer::Embedding(_) => "embedding",
            Layer::Concat => "concat",
            Layer::Mean => "mean",
            Layer::WeightedSum => "weighted-sum",
        }
    }
}

/// State retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub enum ForwardCache {
    Linear { input: Vec<f64> },
    Tanh { output: Vec<f64> },
    Sigmoid { output: Vec<f64> },
    Softmax { output: Vec<f64> },
    Lstm(LstmTrace),
    Embedding { ids: Vec<usize> },
    Concat { sizes: Vec<usize> },
    Mean { count: usize, dim: usize },
    WeightedSum { weights: Vec<f64>, values: Vec<Vec<f64>> },
}

/// Gradients produced by [`layer_backward`]: one vector per input and one
/// flattened vector per parameter array (in `ParamSet` order).
#[derive(Debug, Clone, Default)]
pub struct LayerGrads {
    pub inputs: Vec<Vec<f64>>,
    pub params: Vec<Vec<f64>>,
}

/// Runs a layer forward. Inputs and outputs are lists of vectors; for the
/// embedding layer each input vector holds token ids encoded as `f64`.
pub fn layer_forward(layer: Layer<'_>, inputs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, ForwardCache)> {
    let single = |what: &str| -> Result<&Vec<f64>> {
        match inputs {
            [x] => Ok(x),
            _ => Err(Error::invalid(format!("{what} takes exactly one input"))),
        }
    };
    match layer {
        Layer::Linear(lin) => {
            let x = single("linear")?;
            let y = lin.forward(x)?;
            Ok((vec![y], ForwardCache::Linear { input: x.clone() }))
        }
        Layer::Tanh => {
            let y: Vec<f64> = single("tanh")?.iter().map(|v| v.tanh()).collect();
            Ok((vec![y.clone()], ForwardCache::Tanh { output: y }))
        }
        Layer::Sigmoid => {
            let y: Vec<f64> = single("sigmoid")?.iter().map(|&v| sigmoid(v)).collect();
            Ok((vec![y.clone()], ForwardCache::Sigmoid { output: y }))
        }
        Layer::Softmax => {
            let y = softmax(single("softmax")?)?;
            Ok((vec![y.clone()], ForwardCache::Softmax { output: y }))
        }
        Layer::Lstm(cell) => {
            let trace = cell.forward_seq(inputs)?;
            Ok((trace.hidden_states(), ForwardCache::Lstm(trace)))
        }
        Layer::Embedding(table) => {
            let raw = single("embedding")?;
            let mut ids = Vec::with_capacity(raw.len());
            for &v in raw {
                if v < 0.0 || v.fract() != 0.0 || v as usize >= table.rows() {
                    return Err(Error::invalid(format!("invalid embedding id {v}")));
                }
                ids.push(v as usize);
            }
            let rows = ids.iter().map(|&i| table.row(i).to_vec()).collect();
            Ok((rows, ForwardCache::Embedding { ids }))
        }
        Layer::Concat => {
            let parts: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
            let sizes = inputs.iter().map(|v| v.len()).collect();
            Ok((vec![concat(&parts)], ForwardCache::Concat { sizes }))
        }
        Layer::Mean => {
            let dim = inputs.first().map_or(0, |v| v.len());
            if inputs.iter().any(|v| v.len() != dim) {
                return Err(Error::invalid("mean over vectors of unequal length"));
            }
            let rows: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
            Ok((
                vec![mean_rows(&rows, dim)],
                ForwardCache::Mean {
                    count: inputs.len(),
                    dim,
                },
            ))
        }
        Layer::WeightedSum => {
            let (weights, values) = inputs
                .split_first()
                .ok_or_else(|| Error::invalid("weighted sum needs a weight vector"))?;
            if weights.len() != values.len() {
                return Err(Error::invalid("one weight per value vector required"));
            }
            let y = weighted_sum(weights, values);
            Ok((
                vec![y],
                ForwardCache::WeightedSum {
                    weights: weights.clone(),
                    values: values.to_vec(),
                },
            ))
        }
    }
}

/// Backward pass for one layer given its forward cache and the upstream
/// gradient on each output.
pub fn layer_backward(
    layer: Layer<'_>,
    cache: Option<&ForwardCache>,
    upstream: &[Vec<f64>],
) -> Result<LayerGrads> {
    let cache = cache.ok_or_else(|| {
        Error::Precondition(format!("{} backward called without a forward cache", layer.name()))
    })?;
    let mismatch = || {
        Error::Precondition(format!(
            "forward cache does not belong to a {} layer",
            layer.name()
        ))
    };
    let first = || -> Result<&Vec<f64>> {
        upstream
            .first()
            .ok_or_else(|| Error::invalid("missing upstream gradient"))
    };
    match (layer, cache) {
        (Layer::Linear(lin), ForwardCache::Linear { input }) => {
            let mut g = Linear::zeros(lin.input_size(), lin.output_size());
            let dx = lin.backward(input, first()?, &mut g);
            Ok(LayerGrads {
                inputs: vec![dx],
                params: vec![g.w.into_vec(), g.b],
            })
        }
        (Layer::Tanh, ForwardCache::Tanh { output }) => Ok(LayerGrads {
            inputs: vec![tanh_backward(output, first()?)],
            params: vec![],
        }),
        (Layer::Sigmoid, ForwardCache::Sigmoid { output }) => Ok(LayerGrads {
            inputs: vec![sigmoid_backward(output, first()?)],
            params: vec![],
        }),
        (Layer::Softmax, ForwardCache::Softmax { output }) => Ok(LayerGrads {
            inputs: vec![softmax_backward(output, first()?)],
            params: vec![],
        }),
        (Layer::Lstm(cell), ForwardCache::Lstm(trace)) => {
            let mut g = LstmCell::zeros(cell.input_size(), cell.hidden_size());
            let dxs = cell.backward_seq(trace, upstream, &mut g)?;
            Ok(LayerGrads {
                inputs: dxs,
                params: vec![g.w_ih.into_vec(), g.w_hh.into_vec(), g.bias],
            })
        }
        (Layer::Embedding(table), ForwardCache::Embedding { ids }) => {
            if upstream.len() != ids.len() {
                return Err(Error::invalid("one upstream gradient per gathered row"));
            }
            let mut g = Tensor2::zeros(table.rows(), table.cols());
            for (&id, d) in ids.iter().zip(upstream) {
                for (a, b) in g.row_mut(id).iter_mut().zip(d) {
                    *a += b;
                }
            }
            Ok(LayerGrads {
                inputs: vec![],
                params: vec![g.into_vec()],
            })
        }
        (Layer::Concat, ForwardCache::Concat { sizes }) => Ok(LayerGrads {
            inputs: split(first()?, sizes),
            params: vec![],
        }),
        (Layer::Mean, ForwardCache::Mean { count, dim }) => {
            let dy = first()?;
            if dy.len() != *dim {
                return Err(Error::invalid("upstream gradient has the wrong length"));
            }
            let share: Vec<f64> = dy.iter().map(|v| v / *count as f64).collect();
            Ok(LayerGrads {
                inputs: vec![share; *count],
                params: vec![],
            })
        }
        (Layer::WeightedSum, ForwardCache::WeightedSum { weights, values }) => {
            let (dw, dv) = weighted_sum_backward(weights, values, first()?);
            let mut inputs = vec![dw];
            inputs.extend(dv);
            Ok(LayerGrads {
                inputs,
                params: vec![],
            })
        }
        _ => Err(mismatch()),
    }
}
