use crate::error::{Error, Result};

/// Read-only view of one named parameter array.
#[derive(Debug, Clone)]
pub struct ParamView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [f64],
}

/// A fixed, ordered collection of trainable arrays.
///
/// The order returned by [`ParamSet::views`] and [`ParamSet::slices_mut`]
/// must agree; it is also the order used by checkpoints and by the
/// optimizer state.
pub trait ParamSet {
    fn views(&self) -> Vec<ParamView<'_>>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.views().iter().map(|v| v.values.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for v in self.views() {
            out.extend_from_slice(v.values);
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "flat parameter vector has {} values, expected {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn zero(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Round every value to the nearest `f32`, so that an in-memory model
    /// and its checkpointed copy are numerically identical.
    fn quantize_f32(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    fn all_finite(&self) -> bool {
        self.views()
            .iter()
            .all(|v| v.values.iter().all(|x| x.is_finite()))
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.views()
            .iter()
            .map(|v| (v.name.to_string(), v.shape.clone()))
            .collect()
    }
}

/// `dst += src`, array by array. Both sets must have identical layouts.
pub fn accumulate<P: ParamSet + ?Sized>(dst: &mut P, src: &P) {
    let views = src.views();
    for (d, v) in dst.slices_mut().into_iter().zip(views) {
        for (a, b) in d.iter_mut().zip(v.values) {
            *a += b;
        }
    }
}
