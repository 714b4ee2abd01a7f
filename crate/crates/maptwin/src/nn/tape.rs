//! Reverse-mode tape over [`Tensor`] values.
//!
//! A forward pass appends nodes; [`Tape::backward`] walks them in reverse
//! and accumulates gradients into every node, leaves included. Shapes are
//! checked when an op is recorded, so backward cannot encounter a mismatch
//! that the forward pass did not already reject.

use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// a (n,k) x b (k,m)
    MatMul(VarId, VarId),
    /// Elementwise sum, equal shapes.
    Add(VarId, VarId),
    /// x (n,m) + row (1,m) broadcast over rows.
    AddRow(VarId, VarId),
    /// Elementwise product, equal shapes.
    Mul(VarId, VarId),
    /// a - b, equal shapes.
    Sub(VarId, VarId),
    Scale(VarId, f64),
    AddScalar(VarId),
    Tanh(VarId),
    Sigmoid(VarId),
    /// (n,m) -> (1,m) column means.
    MeanRows(VarId),
    /// Horizontal concatenation of equal-row tensors.
    ConcatCols(VarId, VarId),
    /// Rows [start, start+len) of the input.
    SliceRows(VarId, usize, usize),
    /// x (n,m) scaled row-wise by a column (n,1).
    MulCol(VarId, VarId),
    /// Sum of squared entries -> scalar.
    SumSquares(VarId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient of the backward target with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`; zero-shaped as the value if the node did not
    /// influence the target.
    pub fn get(&self, id: VarId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> VarId {
        self.nodes.push(Node { value, op });
        VarId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        let value = self.value(a).zip(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, x: VarId, row: VarId) -> Result<VarId, NnError> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(NnError::ShapeMismatch {
                context: "row broadcast".into(),
                expected: vec![1, xv.cols()],
                got: rv.shape().to_vec(),
            });
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for c in 0..value.cols() {
                value.set(r, c, value.get(r, c) + rv.get(0, c));
            }
        }
        Ok(self.push(value, Op::AddRow(x, row)))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        let value = self.value(a).zip(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        let value = self.value(a).zip(self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let value = self.value(a).map(|x| c * x);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: VarId, c: f64) -> VarId {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn mean_rows(&mut self, a: VarId) -> VarId {
        let v = self.value(a);
        let (n, m) = (v.rows(), v.cols());
        let mut out = Tensor::zeros(1, m);
        for r in 0..n {
            for c in 0..m {
                out.set(0, c, out.get(0, c) + v.get(r, c) / n as f64);
            }
        }
        self.push(out, Op::MeanRows(a))
    }

    pub fn concat_cols(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(NnError::ShapeMismatch {
                context: "concat_cols".into(),
                expected: vec![av.rows()],
                got: vec![bv.rows()],
            });
        }
        let (n, ma, mb) = (av.rows(), av.cols(), bv.cols());
        let mut out = Tensor::zeros(n, ma + mb);
        for r in 0..n {
            for c in 0..ma {
                out.set(r, c, av.get(r, c));
            }
            for c in 0..mb {
                out.set(r, ma + c, bv.get(r, c));
            }
        }
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    pub fn slice_rows(&mut self, a: VarId, start: usize, len: usize) -> Result<VarId, NnError> {
        let v = self.value(a);
        if start + len > v.rows() {
            return Err(NnError::ShapeMismatch {
                context: "slice_rows".into(),
                expected: vec![v.rows()],
                got: vec![start + len],
            });
        }
        let m = v.cols();
        let mut out = Tensor::zeros(len, m);
        for r in 0..len {
            for c in 0..m {
                out.set(r, c, v.get(start + r, c));
            }
        }
        Ok(self.push(out, Op::SliceRows(a, start, len)))
    }

    /// Scales each row of `x` by the matching entry of column `col`.
    pub fn mul_col(&mut self, x: VarId, col: VarId) -> Result<VarId, NnError> {
        let (xv, cv) = (self.value(x), self.value(col));
        if cv.rows() != xv.rows() || cv.cols() != 1 {
            return Err(NnError::ShapeMismatch {
                context: "mul_col".into(),
                expected: vec![xv.rows(), 1],
                got: cv.shape().to_vec(),
            });
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let s = cv.get(r, 0);
            for c in 0..value.cols() {
                value.set(r, c, value.get(r, c) * s);
            }
        }
        Ok(self.push(value, Op::MulCol(x, col)))
    }

    pub fn sum_squares(&mut self, a: VarId) -> VarId {
        let s: f64 = self.value(a).values().iter().map(|&x| x * x).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(a))
    }

    /// Propagates `seed` (shaped like the target's value) backwards from
    /// `target` through every recorded op.
    pub fn backward(&self, target: VarId, seed: Tensor) -> Result<Gradients, NnError> {
        if !seed.same_shape(self.value(target)) {
            return Err(NnError::ShapeMismatch {
                context: "backward seed".into(),
                expected: self.value(target).shape().to_vec(),
                got: seed.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[target.0] = Some(seed);

        for idx in (0..=target.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(b).transpose()).expect("shape checked");
                    let gb = self.value(a).transpose().matmul(&g).expect("shape checked");
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g.clone());
                }
                Op::AddRow(x, row) => {
                    let mut rg = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            rg.set(0, c, rg.get(0, c) + g.get(r, c));
                        }
                    }
                    accumulate(&mut grads, x, g.clone());
                    accumulate(&mut grads, row, rg);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip(self.value(b), |x, y| x * y).expect("shape checked");
                    let gb = g.zip(self.value(a), |x, y| x * y).expect("shape checked");
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g.map(|x| -x));
                }
                Op::Scale(a, c) => accumulate(&mut grads, a, g.map(|x| c * x)),
                Op::AddScalar(a) => accumulate(&mut grads, a, g.clone()),
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    let ga = g.zip(y, |gv, yv| gv * (1.0 - yv * yv)).expect("shape checked");
                    accumulate(&mut grads, a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].value;
                    let ga = g.zip(y, |gv, yv| gv * yv * (1.0 - yv)).expect("shape checked");
                    accumulate(&mut grads, a, ga);
                }
                Op::MeanRows(a) => {
                    let n = self.value(a).rows();
                    let mut ga = Tensor::zeros(n, g.cols());
                    for r in 0..n {
                        for c in 0..g.cols() {
                            ga.set(r, c, g.get(0, c) / n as f64);
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let ma = self.value(a).cols();
                    let mb = self.value(b).cols();
                    let n = g.rows();
                    let mut ga = Tensor::zeros(n, ma);
                    let mut gb = Tensor::zeros(n, mb);
                    for r in 0..n {
                        for c in 0..ma {
                            ga.set(r, c, g.get(r, c));
                        }
                        for c in 0..mb {
                            gb.set(r, c, g.get(r, ma + c));
                        }
                    }
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::MulCol(x, col) => {
                    let xv = self.value(x);
                    let cv = self.value(col);
                    let mut gx = g.clone();
                    let mut gc = Tensor::zeros(xv.rows(), 1);
                    for r in 0..xv.rows() {
                        let s = cv.get(r, 0);
                        let mut dot = 0.0;
                        for c in 0..xv.cols() {
                            dot += g.get(r, c) * xv.get(r, c);
                            gx.set(r, c, g.get(r, c) * s);
                        }
                        gc.set(r, 0, dot);
                    }
                    accumulate(&mut grads, x, gx);
                    accumulate(&mut grads, col, gc);
                }
                Op::SliceRows(a, start, len) => {
                    let v = self.value(a);
                    let mut ga = Tensor::zeros(v.rows(), v.cols());
                    for r in 0..len {
                        for c in 0..v.cols() {
                            ga.set(start + r, c, g.get(r, c));
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::SumSquares(a) => {
                    let s = g.item();
                    let ga = self.value(a).map(|x| 2.0 * s * x);
                    accumulate(&mut grads, a, ga);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: VarId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_in_place(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_layer_squared_loss_gradient_closed_form() {
        // loss = ||X W - Y||^2 -> dW = 2 X^T (X W - Y)
        let mut t = Tape::new();
        let x_val = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w_val = Tensor::matrix(2, 1, vec![0.5, -0.25]).unwrap();
        let y_val = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
        let x = t.leaf(x_val.clone());
        let w = t.leaf(w_val.clone());
        let y = t.leaf(y_val.clone());
        let pred = t.matmul(x, w).unwrap();
        let resid = t.sub(pred, y).unwrap();
        let loss = t.sum_squares(resid);

        let grads = t.backward(loss, Tensor::scalar(1.0)).unwrap();
        let resid_val = x_val.matmul(&w_val).unwrap().zip(&y_val, |a, b| a - b).unwrap();
        let expect = x_val.transpose().matmul(&resid_val).unwrap().map(|v| 2.0 * v);
        let got = grads.get(w).unwrap();
        for (a, b) in got.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_seed_gives_zero_gradients() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(vec![1.0, 2.0]));
        let y = t.tanh(x);
        let grads = t.backward(y, Tensor::zeros(1, 2)).unwrap();
        assert!(grads.get(x).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x*x + x  =>  dy/dx = 2x + 1
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let sq = t.mul(x, x).unwrap();
        let y = t.add(sq, x).unwrap();
        let grads = t.backward(y, Tensor::scalar(1.0)).unwrap();
        assert!((grads.get(x).unwrap().item() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn slice_and_concat_route_gradients() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::column(vec![1.0, 2.0, 3.0]));
        let top = t.slice_rows(x, 0, 1).unwrap();
        let rest = t.slice_rows(x, 1, 2).unwrap();
        let top_mean = t.mean_rows(top);
        let rest_mean = t.mean_rows(rest);
        let joined = t.concat_cols(top_mean, rest_mean).unwrap();
        let loss = t.sum_squares(joined);
        // joined = [x0, (x1+x2)/2]; loss = x0^2 + ((x1+x2)/2)^2
        let grads = t.backward(loss, Tensor::scalar(1.0)).unwrap();
        let g = grads.get(x).unwrap();
        assert!((g.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((g.get(1, 0) - 2.5 * 1.0).abs() < 1e-12);
        assert!((g.get(2, 0) - 2.5 * 1.0).abs() < 1e-12);
    }

    #[test]
    fn seed_shape_is_checked() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(t.backward(x, Tensor::scalar(1.0)).is_err());
    }
}
