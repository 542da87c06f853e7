//! Pieces shared by the two training loops.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::embedding::UNK_ID;
use crate::error::{Error, Result};
use crate::numcore::{ParamSet, ParamView, Tensor2};

/// Model parameters plus, when fine-tuning, the embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainable<P> {
    pub model: P,
    pub embedding: Option<Tensor2>,
}

impl<P: ParamSet> Trainable<P> {
    pub fn frozen(model: P) -> Self {
        Trainable {
            model,
            embedding: None,
        }
    }

    /// Zero gradient with the same layout as `self`.
    pub fn zeros_like(&self) -> Self
    where
        P: Clone,
    {
        let mut model = self.model.clone();
        model.zero();
        Trainable {
            model,
            embedding: self
                .embedding
                .as_ref()
                .map(|e| Tensor2::zeros(e.rows(), e.cols())),
        }
    }

    /// Keeps the UNK row at zero by discarding its gradient.
    pub fn freeze_unk(&mut self) {
        if let Some(e) = self.embedding.as_mut() {
            e.row_mut(UNK_ID).iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

impl<P: ParamSet> ParamSet for Trainable<P> {
    fn views(&self) -> Vec<ParamView<'_>> {
        let mut v = self.model.views();
        if let Some(e) = &self.embedding {
            v.push(ParamView {
                name: "embedding.vectors".into(),
                shape: e.shape().to_vec(),
                values: e.as_slice(),
            });
        }
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.model.slices_mut();
        if let Some(e) = self.embedding.as_mut() {
            v.push(e.as_mut_slice());
        }
        v
    }
}

/// Adds `d / ids.len()` to each listed row (backward of a mean lookup).
pub(crate) fn scatter_mean(grad: &mut Tensor2, ids: &[usize], d: &[f64]) {
    if ids.is_empty() {
        return;
    }
    let n = ids.len() as f64;
    for &id in ids {
        for (g, v) in grad.row_mut(id).iter_mut().zip(d) {
            *g += v / n;
        }
    }
}

/// Adds `d_t` to row `ids[t]` (backward of a row gather).
pub(crate) fn scatter_rows(grad: &mut Tensor2, ids: &[usize], ds: &[Vec<f64>]) {
    for (&id, d) in ids.iter().zip(ds) {
        for (g, v) in grad.row_mut(id).iter_mut().zip(d) {
            *g += v;
        }
    }
}

/// Shuffled minibatches of indices for one epoch.
pub(crate) fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

pub(crate) fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be a positive number, got {v}")))
    }
}

pub(crate) fn check_nonzero(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::config(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}
