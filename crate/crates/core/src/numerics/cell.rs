use rand::Rng;

use super::kernels::sigmoid;
use super::tensor::{dot, Tensor2};
use crate::error::{Error, Result};

/// Weights of a standard (non-peephole) LSTM cell.
///
/// The four gates are stacked row-wise in the order input, forget, cell,
/// output, so `input_weights` is `4H x D`, `recurrent_weights` is `4H x H`
/// and `biases` is `4H x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub input_weights: Tensor2,
    pub recurrent_weights: Tensor2,
    pub biases: Tensor2,
    hidden_size: usize,
}

impl CellParams {
    pub fn new(
        input_weights: Tensor2,
        recurrent_weights: Tensor2,
        biases: Tensor2,
    ) -> Result<Self> {
        let gates = input_weights.rows();
        if gates == 0 || !gates.is_multiple_of(4) {
            return Err(Error::shape(format!(
                "input weights need 4H rows, got {gates}"
            )));
        }
        let hidden = gates / 4;
        if recurrent_weights.shape() != (gates, hidden) || biases.shape() != (gates, 1) {
            return Err(Error::shape(format!(
                "inconsistent cell shapes: W_x {:?}, W_h {:?}, b {:?}",
                input_weights.shape(),
                recurrent_weights.shape(),
                biases.shape()
            )));
        }
        Ok(CellParams {
            input_weights,
            recurrent_weights,
            biases,
            hidden_size: hidden,
        })
    }

    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        CellParams {
            input_weights: Tensor2::zeros(4 * hidden_size, input_size),
            recurrent_weights: Tensor2::zeros(4 * hidden_size, hidden_size),
            biases: Tensor2::zeros(4 * hidden_size, 1),
            hidden_size,
        }
    }

    /// Weights uniform in `(-1/sqrt(H), 1/sqrt(H))`, forget-gate bias 1, other biases 0.
    pub fn init<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden_size as f64).sqrt();
        let mut p = CellParams::zeros(input_size, hidden_size);
        for v in p.input_weights.data_mut() {
            *v = rng.gen_range(-k..k);
        }
        for v in p.recurrent_weights.data_mut() {
            *v = rng.gen_range(-k..k);
        }
        for v in &mut p.biases.data_mut()[hidden_size..2 * hidden_size] {
            *v = 1.0;
        }
        p
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn input_size(&self) -> usize {
        self.input_weights.cols()
    }
}

/// One LSTM step: returns `(h_t, c_t)`.
pub fn cell_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &CellParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hs = p.hidden_size;
    if x.len() != p.input_size() || h_prev.len() != hs || c_prev.len() != hs {
        return Err(Error::shape(format!(
            "cell_forward: x {} (want {}), h {} c {} (want {hs})",
            x.len(),
            p.input_size(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let z: Vec<f64> = (0..4 * hs)
        .map(|r| {
            dot(p.input_weights.row(r), x) + dot(p.recurrent_weights.row(r), h_prev)
                + p.biases.data()[r]
        })
        .collect();
    let mut h = Vec::with_capacity(hs);
    let mut c = Vec::with_capacity(hs);
    for j in 0..hs {
        let i_gate = sigmoid(z[j]);
        let f_gate = sigmoid(z[hs + j]);
        let g_gate = z[2 * hs + j].tanh();
        let o_gate = sigmoid(z[3 * hs + j]);
        let c_t = f_gate * c_prev[j] + i_gate * g_gate;
        c.push(c_t);
        h.push(o_gate * c_t.tanh());
    }
    Ok((h, c))
}

/// Unrolls the cell over the rows of `frames` (`T x D`) from a zero state and
/// returns every hidden state as a `T x H` matrix.
pub fn sequence_forward(frames: &Tensor2, p: &CellParams) -> Result<Tensor2> {
    if frames.rows() == 0 {
        return Err(Error::shape("sequence_forward: empty sequence"));
    }
    let hs = p.hidden_size;
    let mut h = vec![0.0; hs];
    let mut c = vec![0.0; hs];
    let mut out = Tensor2::zeros(frames.rows(), hs);
    for t in 0..frames.rows() {
        let (h_next, c_next) = cell_forward(frames.row(t), &h, &c, p)?;
        out.row_mut(t).copy_from_slice(&h_next);
        h = h_next;
        c = c_next;
    }
    Ok(out)
}
