//! Reverse-mode differentiation over a recorded graph.
//!
//! Every operation appends a node holding its value and the indices of its
//! inputs. Node indices are topologically ordered by construction, so the
//! backward sweep is a single reverse pass.

use std::sync::atomic::{AtomicU64, Ordering};

use super::cell::CellParams;
use super::kernels::sigmoid;
use super::tensor::{dot, Tensor2};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    tape: u64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatVec(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Sigmoid(usize),
    Tanh(usize),
    Ln(usize),
    Clamp(usize, f64, f64),
    Square(usize),
    Softmax(usize),
    Slice(usize, usize),
    Stack(Vec<usize>),
    Sum(usize),
    Dot(usize, usize),
}

struct Node {
    value: Tensor2,
    op: Op,
}

/// Single-owner record of a forward computation.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            idx: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::State(format!(
                "variable {} was not recorded on this tape",
                v.idx
            )));
        }
        Ok(v.idx)
    }

    fn val(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.idx].value
    }

    pub fn value(&self, v: Var) -> Result<&Tensor2> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let t = self.value(v)?;
        if t.shape() != (1, 1) {
            return Err(Error::shape(format!("{:?} is not a scalar", t.shape())));
        }
        Ok(t.data()[0])
    }

    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.val(a).shape() != self.val(b).shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.val(a).shape(),
                self.val(b).shape()
            )));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        self.check(x)?;
        let src = self.val(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor2::from_vec(src.rows(), src.cols(), data)?;
        Ok(self.push(value, op))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, what: &str) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (va, vb) = (self.val(a), self.val(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor2::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.push(value, op))
    }

    /// Matrix times column vector.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.check(w)?;
        self.check(x)?;
        let (wv, xv) = (self.val(w), self.val(x));
        if xv.cols() != 1 || wv.cols() != xv.rows() {
            return Err(Error::shape(format!(
                "matvec: {:?} times {:?}",
                wv.shape(),
                xv.shape()
            )));
        }
        let out = (0..wv.rows()).map(|r| dot(wv.row(r), xv.data())).collect();
        Ok(self.push(Tensor2::column(out), Op::MatVec(w.idx, x.idx)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a.idx, b.idx), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.idx, b.idx), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a.idx, b.idx), "mul")
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        self.unary(x, |v| v * k, Op::Scale(x.idx, k))
    }

    /// `x + k` elementwise.
    pub fn offset(&mut self, x: Var, k: f64) -> Result<Var> {
        self.unary(x, |v| v + k, Op::Offset(x.idx))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid(x.idx))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::tanh, Op::Tanh(x.idx))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::ln, Op::Ln(x.idx))
    }

    /// Clamp to `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x.idx, lo, hi))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v * v, Op::Square(x.idx))
    }

    /// Softmax over all entries of a column vector.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let a = super::kernels::temporal_softmax(self.val(x).data())?;
        Ok(self.push(Tensor2::column(a), Op::Softmax(x.idx)))
    }

    /// Rows `start..start + len` of a column vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let src = self.val(x);
        if src.cols() != 1 || start + len > src.rows() {
            return Err(Error::shape(format!(
                "slice {start}..{} of {:?}",
                start + len,
                src.shape()
            )));
        }
        let value = Tensor2::column(src.data()[start..start + len].to_vec());
        Ok(self.push(value, Op::Slice(x.idx, start)))
    }

    /// Stacks `1 x 1` scalars into a column vector.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let mut data = Vec::with_capacity(xs.len());
        for &x in xs {
            self.check(x)?;
            let v = self.val(x);
            if v.shape() != (1, 1) {
                return Err(Error::shape(format!("stack expects scalars, got {:?}", v.shape())));
            }
            data.push(v.data()[0]);
        }
        let idx = xs.iter().map(|x| x.idx).collect();
        Ok(self.push(Tensor2::column(data), Op::Stack(idx)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.val(x).data().iter().sum();
        Ok(self.push(Tensor2::scalar(s), Op::Sum(x.idx)))
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "dot")?;
        let s = dot(self.val(a).data(), self.val(b).data());
        Ok(self.push(Tensor2::scalar(s), Op::Dot(a.idx, b.idx)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.check(loss)?;
        if self.nodes[root].value.shape() != (1, 1) {
            return Err(Error::shape("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor2::scalar(1.0));
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor2, grads: &mut [Option<Tensor2>]) {
        let out = &self.nodes[i].value;
        let value = |j: usize| &self.nodes[j].value;
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatVec(w, x) => {
                let (wv, xv) = (value(*w), value(*x));
                let gw = slot(grads, *w, wv.shape());
                for (r, &gr) in gd.iter().enumerate() {
                    if gr != 0.0 {
                        for (acc, &xc) in gw.row_mut(r).iter_mut().zip(xv.data()) {
                            *acc += gr * xc;
                        }
                    }
                }
                let gx = slot(grads, *x, xv.shape());
                let gxd = gx.data_mut();
                for (r, &gr) in gd.iter().enumerate() {
                    if gr != 0.0 {
                        for (acc, &wc) in gxd.iter_mut().zip(wv.row(r)) {
                            *acc += gr * wc;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                slot(grads, *a, g.shape()).add_assign(g);
                slot(grads, *b, g.shape()).add_assign(g);
            }
            Op::Sub(a, b) => {
                slot(grads, *a, g.shape()).add_assign(g);
                let gb = slot(grads, *b, g.shape());
                for (acc, &v) in gb.data_mut().iter_mut().zip(gd) {
                    *acc -= v;
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let (va, vb) = (value(a).data(), value(b).data());
                zip_acc(slot(grads, a, g.shape()), gd, vb, |gv, o| gv * o);
                zip_acc(slot(grads, b, g.shape()), gd, va, |gv, o| gv * o);
            }
            Op::Scale(x, k) => {
                let k = *k;
                let gx = slot(grads, *x, g.shape());
                for (acc, &v) in gx.data_mut().iter_mut().zip(gd) {
                    *acc += k * v;
                }
            }
            Op::Offset(x) => slot(grads, *x, g.shape()).add_assign(g),
            Op::Sigmoid(x) => {
                zip_acc(slot(grads, *x, g.shape()), gd, out.data(), |gv, y| gv * y * (1.0 - y))
            }
            Op::Tanh(x) => {
                zip_acc(slot(grads, *x, g.shape()), gd, out.data(), |gv, y| gv * (1.0 - y * y))
            }
            Op::Ln(x) => {
                let src = value(*x).data();
                zip_acc(slot(grads, *x, g.shape()), gd, src, |gv, v| gv / v)
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let src = value(*x).data();
                zip_acc(slot(grads, *x, g.shape()), gd, src, |gv, v| {
                    if v < lo || v > hi {
                        0.0
                    } else {
                        gv
                    }
                })
            }
            Op::Square(x) => {
                let src = value(*x).data();
                zip_acc(slot(grads, *x, g.shape()), gd, src, |gv, v| 2.0 * v * gv)
            }
            Op::Softmax(x) => {
                let a = out.data();
                let inner = dot(gd, a);
                zip_acc(slot(grads, *x, g.shape()), gd, a, |gv, av| av * (gv - inner))
            }
            Op::Slice(x, start) => {
                let shape = value(*x).shape();
                let gx = slot(grads, *x, shape);
                for (acc, &v) in gx.data_mut()[*start..*start + gd.len()].iter_mut().zip(gd) {
                    *acc += v;
                }
            }
            Op::Stack(xs) => {
                for (&x, &v) in xs.iter().zip(gd) {
                    slot(grads, x, (1, 1)).data_mut()[0] += v;
                }
            }
            Op::Sum(x) => {
                let gx = slot(grads, *x, value(*x).shape());
                for acc in gx.data_mut() {
                    *acc += gd[0];
                }
            }
            Op::Dot(a, b) => {
                let (a, b) = (*a, *b);
                let (va, vb) = (value(a).data(), value(b).data());
                let shape = value(a).shape();
                for (acc, &v) in slot(grads, a, shape).data_mut().iter_mut().zip(vb) {
                    *acc += gd[0] * v;
                }
                for (acc, &v) in slot(grads, b, shape).data_mut().iter_mut().zip(va) {
                    *acc += gd[0] * v;
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Tensor2>], j: usize, shape: (usize, usize)) -> &mut Tensor2 {
    grads[j].get_or_insert_with(|| Tensor2::zeros(shape.0, shape.1))
}

fn zip_acc(dst: &mut Tensor2, g: &[f64], other: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((acc, &gv), &o) in dst.data_mut().iter_mut().zip(g).zip(other) {
        *acc += f(gv, o);
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor2>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if no path reaches it.
    pub fn wrt(&self, v: Var) -> Result<Tensor2> {
        if v.tape != self.tape || v.idx >= self.grads.len() {
            return Err(Error::State(format!(
                "variable {} has no gradient on this sweep",
                v.idx
            )));
        }
        Ok(self.grads[v.idx].clone().unwrap_or_else(|| {
            let (r, c) = self.shapes[v.idx];
            Tensor2::zeros(r, c)
        }))
    }
}

/// Leaves holding one LSTM cell's weights on a tape.
#[derive(Clone, Copy, Debug)]
pub struct CellVars {
    pub input_weights: Var,
    pub recurrent_weights: Var,
    pub biases: Var,
    pub hidden_size: usize,
}

impl CellVars {
    pub fn record(tape: &mut Tape, p: &CellParams) -> Self {
        CellVars {
            input_weights: tape.leaf(p.input_weights.clone()),
            recurrent_weights: tape.leaf(p.recurrent_weights.clone()),
            biases: tape.leaf(p.biases.clone()),
            hidden_size: p.hidden_size(),
        }
    }
}

/// Taped counterpart of [`super::cell::cell_forward`].
pub fn record_cell(tape: &mut Tape, cell: &CellVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let hs = cell.hidden_size;
    let zx = tape.matvec(cell.input_weights, x)?;
    let zh = tape.matvec(cell.recurrent_weights, h)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add(z, cell.biases)?;
    let zi = tape.slice(z, 0, hs)?;
    let zf = tape.slice(z, hs, hs)?;
    let zg = tape.slice(z, 2 * hs, hs)?;
    let zo = tape.slice(z, 3 * hs, hs)?;
    let i_gate = tape.sigmoid(zi)?;
    let f_gate = tape.sigmoid(zf)?;
    let g_gate = tape.tanh(zg)?;
    let o_gate = tape.sigmoid(zo)?;
    let keep = tape.mul(f_gate, c)?;
    let write = tape.mul(i_gate, g_gate)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next)?;
    let h_next = tape.mul(o_gate, squashed)?;
    Ok((h_next, c_next))
}

/// Taped counterpart of [`super::cell::sequence_forward`]; returns one hidden
/// state node per frame.
pub fn record_sequence(tape: &mut Tape, cell: &CellVars, frames: &[Var]) -> Result<Vec<Var>> {
    if frames.is_empty() {
        return Err(Error::shape("record_sequence: empty sequence"));
    }
    let mut h = tape.leaf(Tensor2::zeros(cell.hidden_size, 1));
    let mut c = tape.leaf(Tensor2::zeros(cell.hidden_size, 1));
    let mut out = Vec::with_capacity(frames.len());
    for &x in frames {
        let (h_next, c_next) = record_cell(tape, cell, x, h, c)?;
        out.push(h_next);
        h = h_next;
        c = c_next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cell::{cell_forward, sequence_forward};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor2::column(vec![1.0, -2.0]));
        let k = tape.leaf(Tensor2::scalar(3.0));
        let g = tape.backward(k).unwrap();
        assert_eq!(g.wrt(p).unwrap(), Tensor2::column(vec![0.0, 0.0]));
    }

    #[test]
    fn half_squared_norm_returns_params() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor2::from_rows(&[vec![1.5, -2.0], vec![0.25, 4.0]]).unwrap());
        let b = tape.leaf(Tensor2::column(vec![-0.5, 3.0]));
        let sw = tape.square(w).unwrap();
        let sw = tape.sum(sw).unwrap();
        let sb = tape.square(b).unwrap();
        let sb = tape.sum(sb).unwrap();
        let total = tape.add(sw, sb).unwrap();
        let loss = tape.scale(total, 0.5).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(&g.wrt(w).unwrap(), tape.value(w).unwrap());
        assert_eq!(&g.wrt(b).unwrap(), tape.value(b).unwrap());
    }

    #[test]
    fn backward_before_recording_is_a_state_error() {
        let mut other = Tape::new();
        let foreign = other.leaf(Tensor2::scalar(1.0));
        let empty = Tape::new();
        assert!(matches!(empty.backward(foreign), Err(Error::State(_))));
        let g = other.backward(foreign).unwrap();
        let mut third = Tape::new();
        let v = third.leaf(Tensor2::scalar(2.0));
        assert!(matches!(g.wrt(v), Err(Error::State(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor2::column(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(v), Err(Error::Shape(_))));
    }

    #[test]
    fn recorded_cell_matches_kernel_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = CellParams::init(5, 8, &mut rng);
        let frames = Tensor2::from_fn(8, 5, |r, c| ((r * 5 + c) as f64 * 0.731).cos());
        let expected = sequence_forward(&frames, &p).unwrap();
        let mut tape = Tape::new();
        let cell = CellVars::record(&mut tape, &p);
        let xs: Vec<Var> = (0..8)
            .map(|t| tape.leaf(Tensor2::column(frames.row(t).to_vec())))
            .collect();
        let hs = record_sequence(&mut tape, &cell, &xs).unwrap();
        for (t, h) in hs.iter().enumerate() {
            assert_eq!(tape.value(*h).unwrap().data(), expected.row(t));
        }
        let (h1, _) = cell_forward(frames.row(0), &[0.0; 8], &[0.0; 8], &p).unwrap();
        assert_eq!(tape.value(hs[0]).unwrap().data(), h1.as_slice());
    }
}
