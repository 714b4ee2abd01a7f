//! Layer specifications and the forward/backward API over the tape.
//!
//! A [`NetSpec`] is an ordered stack. Dense and graph-convolution layers
//! map `(n, in)` to `(n, out)` row-wise; the recurrent layer consumes a
//! `(T, in)` sequence and emits the final `(1, hidden)` state, after which
//! dense layers may follow. Graph convolutions compute `Â·X·W + b` with a
//! caller-supplied normalized adjacency (see [`normalize_adjacency`]).

use rand::Rng;

use super::tape::{Tape, VarId};
use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LayerSpec {
    Dense { input: usize, output: usize, activation: Activation },
    GraphConv { input: usize, output: usize, activation: Activation },
    /// Gated recurrent cell (update/reset gates) over a `(T, input)`
    /// sequence; yields the final `(1, hidden)` state.
    Recurrent { input: usize, hidden: usize },
}

impl LayerSpec {
    fn in_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, .. }
            | LayerSpec::GraphConv { input, .. }
            | LayerSpec::Recurrent { input, .. } => input,
        }
    }

    fn out_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { output, .. } | LayerSpec::GraphConv { output, .. } => output,
            LayerSpec::Recurrent { hidden, .. } => hidden,
        }
    }

    /// Shapes of this layer's parameter tensors, in storage order.
    fn param_shapes(&self) -> Vec<(usize, usize)> {
        match *self {
            LayerSpec::Dense { input, output, .. } | LayerSpec::GraphConv { input, output, .. } => {
                vec![(input, output), (1, output)]
            }
            // W*, U*, b* for the update gate, reset gate, and candidate.
            LayerSpec::Recurrent { input, hidden } => vec![
                (input, hidden),
                (hidden, hidden),
                (1, hidden),
                (input, hidden),
                (hidden, hidden),
                (1, hidden),
                (input, hidden),
                (hidden, hidden),
                (1, hidden),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NetSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::BadSpec("a net needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(NnError::BadSpec(format!(
                    "layer output {} does not feed layer input {}",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
            if matches!(w[1], LayerSpec::Recurrent { .. }) {
                return Err(NnError::BadSpec(
                    "a recurrent layer must be the first layer".into(),
                ));
            }
        }
        Ok(NetSpec { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// Expected parameter tensor shapes, flattened over layers.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().flat_map(|l| l.param_shapes()).collect()
    }

    /// Uniform(-s, s) weight init with s = 1/sqrt(fan_in); biases (all
    /// single-row tensors) start at zero.
    pub fn init_params(&self, rng: &mut impl Rng) -> Params {
        let mut tensors = Vec::new();
        for layer in &self.layers {
            for (r, c) in layer.param_shapes() {
                if r == 1 {
                    tensors.push(Tensor::zeros(r, c));
                    continue;
                }
                let s = 1.0 / (r as f64).sqrt();
                let values = (0..r * c).map(|_| (2.0 * rng.gen::<f64>() - 1.0) * s).collect();
                tensors.push(Tensor::new(vec![r, c], values).expect("counted"));
            }
        }
        Params { tensors }
    }

    /// Registers every parameter tensor as a tape leaf.
    pub fn bind(&self, tape: &mut Tape, params: &Params) -> ParamBinding {
        let ids = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        ParamBinding { ids }
    }

    /// Runs the stack on an already-recorded input. `adjacency` must be a
    /// leaf holding the normalized matrix when the spec contains a graph
    /// convolution.
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        input: VarId,
        adjacency: Option<VarId>,
    ) -> Result<VarId, NnError> {
        let mut next_param = 0;
        let mut take = |n: usize| {
            let slice = binding.ids[next_param..next_param + n].to_vec();
            next_param += n;
            slice
        };
        let mut x = input;
        for (layer_idx, layer) in self.layers.iter().enumerate() {
            let in_dim = layer.in_dim();
            let got = tape.value(x).cols();
            if got != in_dim {
                return Err(NnError::ShapeMismatch {
                    context: format!("layer {layer_idx} input"),
                    expected: vec![in_dim],
                    got: vec![got],
                });
            }
            x = match *layer {
                LayerSpec::Dense { activation, .. } => {
                    let p = take(2);
                    let z = tape.matmul(x, p[0])?;
                    let z = tape.add_row(z, p[1])?;
                    apply_activation(tape, z, activation)
                }
                LayerSpec::GraphConv { activation, .. } => {
                    let adj = adjacency.ok_or(NnError::MissingAdjacency { layer: layer_idx })?;
                    let p = take(2);
                    let mixed = tape.matmul(adj, x)?;
                    let z = tape.matmul(mixed, p[0])?;
                    let z = tape.add_row(z, p[1])?;
                    apply_activation(tape, z, activation)
                }
                LayerSpec::Recurrent { hidden, .. } => {
                    let p = take(9);
                    let (wz, uz, bz) = (p[0], p[1], p[2]);
                    let (wr, ur, br) = (p[3], p[4], p[5]);
                    let (wh, uh, bh) = (p[6], p[7], p[8]);
                    let steps = tape.value(x).rows();
                    let mut h = tape.leaf(Tensor::zeros(1, hidden));
                    for step in 0..steps {
                        let xt = tape.slice_rows(x, step, 1)?;
                        // z_t = sigmoid(x W_z + h U_z + b_z)
                        let a = tape.matmul(xt, wz)?;
                        let b = tape.matmul(h, uz)?;
                        let s = tape.add(a, b)?;
                        let s = tape.add_row(s, bz)?;
                        let z = tape.sigmoid(s);
                        // r_t = sigmoid(x W_r + h U_r + b_r)
                        let a = tape.matmul(xt, wr)?;
                        let b = tape.matmul(h, ur)?;
                        let s = tape.add(a, b)?;
                        let s = tape.add_row(s, br)?;
                        let r = tape.sigmoid(s);
                        // cand = tanh(x W_h + (r*h) U_h + b_h)
                        let rh = tape.mul(r, h)?;
                        let a = tape.matmul(xt, wh)?;
                        let b = tape.matmul(rh, uh)?;
                        let s = tape.add(a, b)?;
                        let s = tape.add_row(s, bh)?;
                        let cand = tape.tanh(s);
                        // h = (1 - z)*h + z*cand
                        let neg_z = tape.scale(z, -1.0);
                        let one_minus_z = tape.add_scalar(neg_z, 1.0);
                        let keep = tape.mul(one_minus_z, h)?;
                        let update = tape.mul(z, cand)?;
                        h = tape.add(keep, update)?;
                    }
                    h
                }
            };
        }
        Ok(x)
    }

    /// Convenience forward on a fresh tape. Returns the output value, the
    /// tape, the parameter binding, and the output's tape id for
    /// [`backward`].
    pub fn forward(
        &self,
        params: &Params,
        input: &Tensor,
        adjacency: Option<&Tensor>,
    ) -> Result<(Tensor, Tape, ParamBinding, VarId), NnError> {
        let mut tape = Tape::new();
        let input_id = tape.leaf(input.clone());
        let adj_id = adjacency.map(|a| tape.leaf(a.clone()));
        let binding = self.bind(&mut tape, params);
        let out = self.forward_bound(&mut tape, &binding, input_id, adj_id)?;
        Ok((tape.value(out).clone(), tape, binding, out))
    }
}

fn apply_activation(tape: &mut Tape, x: VarId, a: Activation) -> VarId {
    match a {
        Activation::Linear => x,
        Activation::Tanh => tape.tanh(x),
        Activation::Sigmoid => tape.sigmoid(x),
    }
}

/// Parameter store: one tensor per layer slot, ordered as
/// [`NetSpec::param_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Params { tensors }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Soft-tracking update used for target networks:
    /// `self = (1 - rate) * self + rate * live`.
    pub fn track(&mut self, live: &Params, rate: f64) {
        for (t, l) in self.tensors.iter_mut().zip(&live.tensors) {
            for (a, &b) in t.values_mut().iter_mut().zip(l.values()) {
                *a += rate * (b - *a);
            }
        }
    }
}

/// Tape ids of bound parameters, aligned with [`Params::tensors`].
#[derive(Debug, Clone)]
pub struct ParamBinding {
    pub ids: Vec<VarId>,
}

/// Gradients aligned with [`Params::tensors`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    tensors: Vec<Tensor>,
}

impl ParamGrads {
    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        ParamGrads { tensors }
    }

    pub fn zeros_like(params: &Params) -> Self {
        ParamGrads {
            tensors: params
                .tensors
                .iter()
                .map(|t| Tensor::new(t.shape().to_vec(), vec![0.0; t.values().len()]).expect("counted"))
                .collect(),
        }
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn add_in_place(&mut self, other: &ParamGrads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_in_place(b);
        }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for t in &mut self.tensors {
            for v in t.values_mut() {
                *v *= c;
            }
        }
    }

    /// Extracts parameter gradients from a finished backward pass; missing
    /// gradients (parameters that did not reach the target) are zero.
    pub fn from_backward(
        grads: &super::tape::Gradients,
        binding: &ParamBinding,
        params: &Params,
    ) -> Self {
        let tensors = binding
            .ids
            .iter()
            .zip(&params.tensors)
            .map(|(&id, p)| match grads.get(id) {
                Some(g) => g.clone(),
                None => Tensor::new(p.shape().to_vec(), vec![0.0; p.values().len()])
                    .expect("counted"),
            })
            .collect();
        ParamGrads { tensors }
    }
}

/// Degree-normalized adjacency with self-loops:
/// `Â = D^{-1/2} (A + I) D^{-1/2}`.
pub fn normalize_adjacency(weights: &Tensor) -> Result<Tensor, NnError> {
    if weights.rows() != weights.cols() {
        return Err(NnError::ShapeMismatch {
            context: "adjacency".into(),
            expected: vec![weights.rows(), weights.rows()],
            got: weights.shape().to_vec(),
        });
    }
    let n = weights.rows();
    let mut with_loops = weights.clone();
    for i in 0..n {
        with_loops.set(i, i, with_loops.get(i, i) + 1.0);
    }
    let mut inv_sqrt = vec![0.0; n];
    for (i, slot) in inv_sqrt.iter_mut().enumerate() {
        let d: f64 = (0..n).map(|j| with_loops.get(i, j)).sum();
        *slot = 1.0 / d.sqrt();
    }
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, inv_sqrt[i] * with_loops.get(i, j) * inv_sqrt[j]);
        }
    }
    Ok(out)
}

/// Central finite-difference check of every parameter against the tape
/// gradients, using `loss = sum(outputs^2)`. Returns the max relative
/// error.
pub fn grad_check(
    spec: &NetSpec,
    params: &Params,
    input: &Tensor,
    adjacency: Option<&Tensor>,
    eps: f64,
) -> Result<f64, NnError> {
    let loss_of = |p: &Params| -> Result<f64, NnError> {
        let (out, _, _, _) = spec.forward(p, input, adjacency)?;
        Ok(out.values().iter().map(|&v| v * v).sum())
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let input_id = tape.leaf(input.clone());
    let adj_id = adjacency.map(|a| tape.leaf(a.clone()));
    let binding = spec.bind(&mut tape, params);
    let out = spec.forward_bound(&mut tape, &binding, input_id, adj_id)?;
    let loss = tape.sum_squares(out);
    let grads = tape.backward(loss, Tensor::scalar(1.0))?;
    let analytic = ParamGrads::from_backward(&grads, &binding, params);

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for t_idx in 0..params.tensors().len() {
        for k in 0..params.tensors()[t_idx].values().len() {
            let orig = probe.tensors()[t_idx].values()[k];
            probe.tensors_mut()[t_idx].values_mut()[k] = orig + eps;
            let up = loss_of(&probe)?;
            probe.tensors_mut()[t_idx].values_mut()[k] = orig - eps;
            let down = loss_of(&probe)?;
            probe.tensors_mut()[t_idx].values_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.tensor(t_idx).values()[k];
            let denom = a.abs().max(numeric.abs());
            let err = if denom < 1e-7 {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / denom
            };
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
