use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: ParamSet + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let sizes: Vec<usize> = params.views().iter().map(|v| v.values.len()).collect();
        AdamState {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` using `grads`.
    pub fn update<P: ParamSet + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let gviews = grads.views();
        let slices = params.slices_mut();
        if slices.len() != self.m.len() || gviews.len() != self.m.len() {
            return Err(Error::invalid("Adam state does not match parameter layout"));
        }
        for (k, (p, g)) in slices.iter().zip(&gviews).enumerate() {
            if p.len() != self.m[k].len() || g.values.len() != self.m[k].len() {
                return Err(Error::invalid(format!(
                    "Adam shape mismatch on array {k} ({})",
                    g.name
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (k, (p, g)) in slices.into_iter().zip(gviews).enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for j in 0..p.len() {
                let gj = g.values[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameters and leaves `state`
/// advanced by one step.
pub fn adam_step<P: ParamSet + Clone>(params: &P, grads: &P, state: &mut AdamState) -> Result<P> {
    let mut out = params.clone();
    state.update(&mut out, grads)?;
    Ok(out)
}
