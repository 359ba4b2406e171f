//! LSTM cell as a plain map `(x, c, h) ↦ (c', h')`.
//!
//! Gate rows are stacked in the order input, forget, candidate, output:
//!
//! ```text
//! z  = W_x x + W_h h + b
//! i  = σ(z_i)   f = σ(z_f)   g = tanh(z_g)   o = σ(z_o)
//! c' = f ⊙ c + i ⊙ g
//! h' = o ⊙ tanh(c')
//! ```

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, Vector};

use super::activation::sigmoid;
use super::layer::{LayerTrace, Nested};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `4H × input_dim`
    pub w_input: Matrix,
    /// `4H × H`
    pub w_hidden: Matrix,
    /// `4H`
    pub bias: Vector,
}

#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn new(w_input: Matrix, w_hidden: Matrix, bias: Vector) -> Result<Self> {
        let four_h = w_hidden.rows();
        if four_h == 0 || !four_h.is_multiple_of(4) || w_hidden.cols() * 4 != four_h {
            return Err(Error::shape(format!(
                "LSTM hidden weights must be 4H x H, got {}x{}",
                w_hidden.rows(),
                w_hidden.cols()
            )));
        }
        if w_input.rows() != four_h || bias.dim() != four_h {
            return Err(Error::shape(format!(
                "LSTM input weights and bias need {four_h} rows"
            )));
        }
        Ok(LstmCell {
            input_dim: w_input.cols(),
            hidden_dim: four_h / 4,
            w_input,
            w_hidden,
            bias,
        })
    }

    /// `input_dim + 2 · hidden_dim`: the datum followed by the carried state.
    pub fn in_dim(&self) -> usize {
        self.input_dim + 2 * self.hidden_dim
    }

    pub fn out_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    pub(crate) fn forward(&self, input: &[f64]) -> LayerTrace {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let x = &input[..d];
        let c_prev = &input[d..d + h];
        let h_prev = &input[d + h..];
        let z: Vec<f64> = (0..4 * h)
            .map(|r| dot(self.w_input.row(r), x) + dot(self.w_hidden.row(r), h_prev) + self.bias[r])
            .collect();
        let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * h..3 * h].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let hn: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
        let mut output = c;
        output.extend(hn);
        LayerTrace {
            input: input.to_vec(),
            pre_activation: z,
            output,
            kinks: Vec::new(),
            nested: Nested::Lstm(LstmCache {
                c_prev: c_prev.to_vec(),
                i,
                f,
                g,
                o,
                tanh_c,
            }),
        }
    }

    /// Derivative of gate pre-activation row `r` with respect to input column `col`.
    fn dz(&self, r: usize, col: usize) -> f64 {
        let (d, h) = (self.input_dim, self.hidden_dim);
        if col < d {
            self.w_input[(r, col)]
        } else if col < d + h {
            0.0
        } else {
            self.w_hidden[(r, col - d - h)]
        }
    }

    /// Full-state Jacobian, `2H × (input_dim + 2H)`.
    pub(crate) fn jacobian(&self, cache: &LstmCache) -> Matrix {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let n = self.in_dim();
        let mut jac = Matrix::zeros(2 * h, n);
        for k in 0..h {
            let (i, f, g, o) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k]);
            let di = g * i * (1.0 - i);
            let df = cache.c_prev[k] * f * (1.0 - f);
            let dg = i * (1.0 - g * g);
            let tc = cache.tanh_c[k];
            let do_ = tc * o * (1.0 - o);
            let dc_to_h = o * (1.0 - tc * tc);
            for col in 0..n {
                let mut dc = di * self.dz(k, col) + df * self.dz(h + k, col) + dg * self.dz(2 * h + k, col);
                if col == d + k {
                    dc += f;
                }
                jac[(k, col)] = dc;
                jac[(h + k, col)] = do_ * self.dz(3 * h + k, col) + dc_to_h * dc;
            }
        }
        jac
    }
}
