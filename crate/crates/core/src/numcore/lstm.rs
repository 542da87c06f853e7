use rand::Rng;

use super::layers::sigmoid;
use super::params::{ParamSet, ParamView};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Parameters of one LSTM cell.
///
/// Gate rows are stacked in the order input, forget, candidate, output:
/// rows `[0, h)` drive the input gate, `[h, 2h)` the forget gate and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_ih: Tensor2,
    pub w_hh: Tensor2,
    pub bias: Vec<f64>,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// Forward trace of a whole sequence starting from zero state.
#[derive(Debug, Clone, Default)]
pub struct LstmTrace {
    pub steps: Vec<LstmStepCache>,
}

impl LstmTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.steps[t].h
    }

    pub fn hidden_states(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.h.clone()).collect()
    }

    pub fn last_hidden(&self) -> Option<&[f64]> {
        self.steps.last().map(|s| s.h.as_slice())
    }
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCell {
            w_ih: Tensor2::zeros(4 * hidden, input),
            w_hh: Tensor2::zeros(4 * hidden, hidden),
            bias: vec![0.0; 4 * hidden],
        }
    }

    /// Uniform `±sqrt(1/fan_in)` weights, zero biases except the forget
    /// gate which starts at 1.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let b_in = if input > 0 { (1.0 / input as f64).sqrt() } else { 0.0 };
        let b_h = (1.0 / hidden.max(1) as f64).sqrt();
        let w_ih = Tensor2::uniform(4 * hidden, input, b_in, rng);
        let w_hh = Tensor2::uniform(4 * hidden, hidden, b_h, rng);
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        LstmCell { w_ih, w_hh, bias }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.cols()
    }

    fn check_shapes(&self) -> Result<()> {
        let h = self.hidden_size();
        if self.w_ih.rows() != 4 * h || self.w_hh.rows() != 4 * h || self.bias.len() != 4 * h {
            return Err(Error::invalid("inconsistent LSTM gate shapes"));
        }
        Ok(())
    }

    /// One forward step with its backward cache.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmStepCache> {
        self.check_shapes()?;
        let hs = self.hidden_size();
        if x.len() != self.input_size() || h_prev.len() != hs || c_prev.len() != hs {
            return Err(Error::invalid(format!(
                "LSTM step shape mismatch: x={} (want {}), h={} c={} (want {hs})",
                x.len(),
                self.input_size(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let mut z = self.bias.clone();
        self.w_ih.matvec_add(x, &mut z);
        self.w_hh.matvec_add(h_prev, &mut z);

        let i: Vec<f64> = z[..hs].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[hs..2 * hs].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * hs..3 * hs].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * hs..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..hs).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hs).map(|k| o[k] * tanh_c[k]).collect();
        Ok(LstmStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            c,
            tanh_c,
            h,
        })
    }

    /// Runs the cell over `xs` from a zero initial state.
    pub fn forward_seq(&self, xs: &[Vec<f64>]) -> Result<LstmTrace> {
        let hs = self.hidden_size();
        let mut steps = Vec::with_capacity(xs.len());
        let zero = vec![0.0; hs];
        for x in xs {
            let (h_prev, c_prev) = match steps.last() {
                Some(s) => {
                    let s: &LstmStepCache = s;
                    (s.h.as_slice(), s.c.as_slice())
                }
                None => (zero.as_slice(), zero.as_slice()),
            };
            let cache = self.step(x, h_prev, c_prev)?;
            steps.push(cache);
        }
        Ok(LstmTrace { steps })
    }

    /// Full backpropagation through time.
    ///
    /// `dh[t]` is the upstream gradient on the hidden output of step `t`
    /// (an empty vector stands for zero). Parameter gradients are added to
    /// `grad`; the returned vectors are `dL/dx_t`.
    pub fn backward_seq(
        &self,
        trace: &LstmTrace,
        dh: &[Vec<f64>],
        grad: &mut LstmCell,
    ) -> Result<Vec<Vec<f64>>> {
        if dh.len() != trace.len() {
            return Err(Error::invalid(format!(
                "BPTT needs {} upstream gradients, got {}",
                trace.len(),
                dh.len()
            )));
        }
        let hs = self.hidden_size();
        let mut dxs = vec![Vec::new(); trace.len()];
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        let mut da = vec![0.0; 4 * hs];
        for t in (0..trace.len()).rev() {
            let s = &trace.steps[t];
            let up = &dh[t];
            for k in 0..hs {
                let dh_k = dh_next[k] + if up.is_empty() { 0.0 } else { up[k] };
                let d_o = dh_k * s.tanh_c[k];
                let dc = dc_next[k] + dh_k * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                let di = dc * s.g[k];
                let dg = dc * s.i[k];
                let df = dc * s.c_prev[k];
                dc_next[k] = dc * s.f[k];
                da[k] = di * s.i[k] * (1.0 - s.i[k]);
                da[hs + k] = df * s.f[k] * (1.0 - s.f[k]);
                da[2 * hs + k] = dg * (1.0 - s.g[k] * s.g[k]);
                da[3 * hs + k] = d_o * s.o[k] * (1.0 - s.o[k]);
            }
            grad.w_ih.add_outer(&da, &s.x);
            grad.w_hh.add_outer(&da, &s.h_prev);
            for (b, d) in grad.bias.iter_mut().zip(&da) {
                *b += d;
            }
            let mut dx = vec![0.0; self.input_size()];
            self.w_ih.matvec_t_add(&da, &mut dx);
            dxs[t] = dx;
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            self.w_hh.matvec_t_add(&da, &mut dh_next);
        }
        Ok(dxs)
    }

    pub(crate) fn views_prefixed(&self, prefix: &str) -> Vec<ParamView<'_>> {
        vec![
            ParamView {
                name: format!("{prefix}.w_ih"),
                shape: self.w_ih.shape().to_vec(),
                values: self.w_ih.as_slice(),
            },
            ParamView {
                name: format!("{prefix}.w_hh"),
                shape: self.w_hh.shape().to_vec(),
                values: self.w_hh.as_slice(),
            },
            ParamView {
                name: format!("{prefix}.bias"),
                shape: vec![self.bias.len()],
                values: &self.bias,
            },
        ]
    }

    pub(crate) fn slices_mut_inner(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_ih.as_mut_slice(),
            self.w_hh.as_mut_slice(),
            &mut self.bias,
        ]
    }
}

impl ParamSet for LstmCell {
    fn views(&self) -> Vec<ParamView<'_>> {
        self.views_prefixed("lstm")
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.slices_mut_inner()
    }
}

/// Single LSTM step returning `(h, c)`.
pub fn lstm_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmCell,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = p.step(x, h_prev, c_prev)?;
    Ok((s.h, s.c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent scalar-loop LSTM step.
    fn reference_step(
        x: &[f64],
        h: &[f64],
        c: &[f64],
        p: &LstmCell,
    ) -> (Vec<f64>, Vec<f64>) {
        let hs = h.len();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h_out = vec![0.0; hs];
        let mut c_out = vec![0.0; hs];
        for k in 0..hs {
            let pre = |gate: usize| {
                let row = gate * hs + k;
                let mut acc = p.bias[row];
                for j in 0..x.len() {
                    acc += p.w_ih.get(row, j) * x[j];
                }
                for j in 0..hs {
                    acc += p.w_hh.get(row, j) * h[j];
                }
                acc
            };
            let ig = sig(pre(0));
            let fg = sig(pre(1));
            let gg = pre(2).tanh();
            let og = sig(pre(3));
            c_out[k] = fg * c[k] + ig * gg;
            h_out[k] = og * c_out[k].tanh();
        }
        (h_out, c_out)
    }

    #[test]
    fn zero_params_give_zero_state() {
        let p = LstmCell::zeros(3, 2);
        let (h, c) = lstm_step(&[0.0; 3], &[0.0; 2], &[0.0; 2], &p).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = LstmCell::zeros(2, 2);
        p.bias[2..4].iter_mut().for_each(|b| *b = 20.0);
        let c_prev = [0.7, -1.3];
        let (_, c) = lstm_step(&[0.0; 2], &[0.0; 2], &c_prev, &p).unwrap();
        for (a, b) in c.iter().zip(c_prev) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn matches_scalar_reference() {
        for seed in 0..25 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = LstmCell::init(3, 2, &mut rng);
            p.bias.iter_mut().for_each(|b| *b += rng.random_range(-0.5..0.5));
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (h1, c1) = lstm_step(&x, &h, &c, &p).unwrap();
            let (h2, c2) = reference_step(&x, &h, &c, &p);
            for k in 0..2 {
                assert!((h1[k] - h2[k]).abs() < 1e-12);
                assert!((c1[k] - c2[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = LstmCell::zeros(3, 2);
        assert!(lstm_step(&[0.0; 2], &[0.0; 2], &[0.0; 2], &p).is_err());
        assert!(lstm_step(&[0.0; 3], &[0.0; 3], &[0.0; 2], &p).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = LstmCell::init(4, 3, &mut rng);
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let a = p.forward_seq(&xs).unwrap();
        let b = p.forward_seq(&xs).unwrap();
        assert_eq!(a.hidden_states(), b.hidden_states());
    }
}
