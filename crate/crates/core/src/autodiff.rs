//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! The tape doubles as the computation graph: operations execute eagerly as
//! they are recorded, so node order is already topological and `backward`
//! is a single reverse sweep. The primitive catalog is deliberately small:
//! affine layers, 3x3 zero-padded convolution, leaky-ReLU, elementwise
//! arithmetic, codebook row gathering, and the two distortion reductions
//! used by the training losses. Shape violations are programmer errors and
//! panic with a message rather than returning `Result`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
}

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
enum Op {
    Input,
    /// y[b,o] = sum_i x[b,i] w[o,i] + bias[o]
    Dense { x: usize, w: usize, b: usize },
    /// NCHW, stride 1, zero padding 1, 3x3 kernels.
    Conv3x3 { x: usize, w: usize, b: usize },
    LeakyRelu { x: usize },
    Add { a: usize, b: usize },
    /// a + k * b
    AddScaled { a: usize, b: usize, k: f64 },
    Scale { x: usize, k: f64 },
    Reshape { x: usize },
    StopGrad,
    /// Rows of a [n, d] table; backward scatter-adds into the table.
    GatherRows { table: usize, idx: Vec<usize> },
    /// sum_i (a_i - b_i)^2, scalar output.
    SqDistSum { a: usize, b: usize },
    /// sum_i |e^{j a_i} - e^{j b_i}|^2 = sum_i 2 - 2 cos(a_i - b_i).
    AngularSqDist { a: usize, b: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Constants captured at a base point: stop-gradient outputs and gather row
/// choices, in creation order. Replaying them turns a loss containing
/// stop-gradient markers into an ordinary differentiable function whose true
/// derivative equals the backward pass, so central finite differences can
/// verify straight-through losses exactly.
#[derive(Debug, Clone, Default)]
pub struct FrozenChoices {
    sg_values: Vec<Vec<f64>>,
    gather_idx: Vec<Vec<usize>>,
}

#[derive(Debug, Default)]
enum FreezeState {
    #[default]
    Off,
    Record(FrozenChoices),
    Replay {
        choices: FrozenChoices,
        sg_next: usize,
        gather_next: usize,
    },
}

/// Eagerly evaluated computation graph with per-node value storage.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
    freeze: FreezeState,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tape that records every stop-gradient output and gather row choice
    /// for later replay; collect them with [`Tape::take_frozen`].
    pub fn new_recording() -> Self {
        Self { freeze: FreezeState::Record(FrozenChoices::default()), ..Self::default() }
    }

    /// Tape that substitutes previously recorded stop-gradient outputs and
    /// gather row choices, in creation order, treating them as constants.
    pub fn new_replaying(choices: FrozenChoices) -> Self {
        Self {
            freeze: FreezeState::Replay { choices, sg_next: 0, gather_next: 0 },
            ..Self::default()
        }
    }

    /// Choices captured by a recording tape.
    pub fn take_frozen(&mut self) -> FrozenChoices {
        match std::mem::take(&mut self.freeze) {
            FreezeState::Record(c) => c,
            _ => panic!("tape was not recording"),
        }
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.id].shape
    }

    pub fn values(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.id].values
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, t: Tensor) -> f64 {
        assert_eq!(self.nodes[t.id].values.len(), 1, "tensor is not a scalar");
        self.nodes[t.id].values[0]
    }

    /// Gradient filled by the most recent [`Tape::backward`].
    pub fn grad(&self, t: Tensor) -> &[f64] {
        &self.grads[t.id]
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        assert_eq!(values.len(), numel(&shape), "value count must match shape");
        self.nodes.push(Node { op, shape, values });
        Tensor { id: self.nodes.len() - 1 }
    }

    pub fn input(&mut self, shape: &[usize], values: &[f64]) -> Tensor {
        self.push(Op::Input, shape.to_vec(), values.to_vec())
    }

    /// Affine layer: `x` is [batch, in], `w` is [out, in], `b` is [out].
    pub fn dense(&mut self, x: Tensor, w: Tensor, b: Tensor) -> Tensor {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        assert_eq!(xs.len(), 2, "dense input must be [batch, in]");
        assert_eq!(ws.len(), 2, "dense weight must be [out, in]");
        assert_eq!(xs[1], ws[1], "dense: input dim {} vs weight dim {}", xs[1], ws[1]);
        assert_eq!(bs, &[ws[0]], "dense bias must be [out]");
        let (batch, in_dim, out_dim) = (xs[0], xs[1], ws[0]);
        let xv = &self.nodes[x.id].values;
        let wv = &self.nodes[w.id].values;
        let bv = &self.nodes[b.id].values;
        let mut out = vec![0.0; batch * out_dim];
        for bi in 0..batch {
            let xrow = &xv[bi * in_dim..(bi + 1) * in_dim];
            let orow = &mut out[bi * out_dim..(bi + 1) * out_dim];
            for (o, oo) in orow.iter_mut().enumerate() {
                let wrow = &wv[o * in_dim..(o + 1) * in_dim];
                let mut acc = bv[o];
                for i in 0..in_dim {
                    acc += xrow[i] * wrow[i];
                }
                *oo = acc;
            }
        }
        self.push(Op::Dense { x: x.id, w: w.id, b: b.id }, vec![batch, out_dim], out)
    }

    /// 3x3 convolution: `x` is [n, c_in, h, w], `w` is [c_out, c_in, 3, 3],
    /// `b` is [c_out]; stride 1, zero padding 1, so spatial dims carry over.
    pub fn conv3x3(&mut self, x: Tensor, w: Tensor, b: Tensor) -> Tensor {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b));
        assert_eq!(xs.len(), 4, "conv input must be [n, c, h, w]");
        assert_eq!(ws.len(), 4, "conv weight must be [c_out, c_in, 3, 3]");
        assert_eq!(&ws[2..], &[3, 3], "kernel must be 3x3");
        assert_eq!(ws[1], xs[1], "conv: channel mismatch {} vs {}", ws[1], xs[1]);
        assert_eq!(bs, &[ws[0]], "conv bias must be [c_out]");
        let (n, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let c_out = ws[0];
        let xv = &self.nodes[x.id].values;
        let wv = &self.nodes[w.id].values;
        let bv = &self.nodes[b.id].values;
        let mut out = vec![0.0; n * c_out * h * wd];
        for ni in 0..n {
            for co in 0..c_out {
                let obase = (ni * c_out + co) * h * wd;
                out[obase..obase + h * wd].fill(bv[co]);
                for ci in 0..c_in {
                    let xbase = (ni * c_in + ci) * h * wd;
                    let wbase = (co * c_in + ci) * 9;
                    for i in 0..h {
                        for (di, wrow) in (0..3).map(|d| (d, &wv[wbase + d * 3..wbase + d * 3 + 3])) {
                            let si = i + di;
                            if si < 1 || si > h {
                                continue;
                            }
                            let xrow = &xv[xbase + (si - 1) * wd..xbase + si * wd];
                            let orow = &mut out[obase + i * wd..obase + (i + 1) * wd];
                            for j in 0..wd {
                                let mut acc = 0.0;
                                for (dj, &wk) in wrow.iter().enumerate() {
                                    let sj = j + dj;
                                    if sj >= 1 && sj <= wd {
                                        acc += xrow[sj - 1] * wk;
                                    }
                                }
                                orow[j] += acc;
                            }
                        }
                    }
                }
            }
        }
        self.push(Op::Conv3x3 { x: x.id, w: w.id, b: b.id }, vec![n, c_out, h, wd], out)
    }

    pub fn leaky_relu(&mut self, x: Tensor) -> Tensor {
        let values =
            self.nodes[x.id].values.iter().map(|&v| if v >= 0.0 { v } else { LEAKY_SLOPE * v }).collect();
        let shape = self.nodes[x.id].shape.clone();
        self.push(Op::LeakyRelu { x: x.id }, shape, values)
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.add_scaled(a, b, 1.0)
    }

    /// a + k * b, elementwise.
    pub fn add_scaled(&mut self, a: Tensor, b: Tensor, k: f64) -> Tensor {
        assert_eq!(
            numel(self.shape(a)),
            numel(self.shape(b)),
            "add: element counts differ"
        );
        let av = &self.nodes[a.id].values;
        let bv = &self.nodes[b.id].values;
        let values = av.iter().zip(bv).map(|(&x, &y)| x + k * y).collect();
        let shape = self.nodes[a.id].shape.clone();
        let op = if k == 1.0 { Op::Add { a: a.id, b: b.id } } else { Op::AddScaled { a: a.id, b: b.id, k } };
        self.push(op, shape, values)
    }

    pub fn scale(&mut self, x: Tensor, k: f64) -> Tensor {
        let values = self.nodes[x.id].values.iter().map(|&v| k * v).collect();
        let shape = self.nodes[x.id].shape.clone();
        self.push(Op::Scale { x: x.id, k }, shape, values)
    }

    pub fn reshape(&mut self, x: Tensor, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(self.shape(x)),
            numel(shape),
            "reshape: cannot view {:?} as {:?}",
            self.shape(x),
            shape
        );
        let values = self.nodes[x.id].values.clone();
        self.push(Op::Reshape { x: x.id }, shape.to_vec(), values)
    }

    /// Identity forward, zero gradient backward.
    pub fn stop_grad(&mut self, x: Tensor) -> Tensor {
        let shape = self.nodes[x.id].shape.clone();
        let values = match &mut self.freeze {
            FreezeState::Off => self.nodes[x.id].values.clone(),
            FreezeState::Record(c) => {
                let v = self.nodes[x.id].values.clone();
                c.sg_values.push(v.clone());
                v
            }
            FreezeState::Replay { choices, sg_next, .. } => {
                assert!(*sg_next < choices.sg_values.len(), "ran out of recorded stop-grads");
                let v = choices.sg_values[*sg_next].clone();
                *sg_next += 1;
                assert_eq!(v.len(), numel(&shape), "replayed stop-grad shape mismatch");
                v
            }
        };
        self.push(Op::StopGrad, shape, values)
    }

    /// Select rows of a [n, d] table; output is [idx.len(), d]. Backward
    /// scatter-adds, so repeated indices accumulate gradient.
    pub fn gather_rows(&mut self, table: Tensor, idx: &[usize]) -> Tensor {
        let ts = self.shape(table);
        assert_eq!(ts.len(), 2, "gather table must be [n, d]");
        let (n, d) = (ts[0], ts[1]);
        let idx = match &mut self.freeze {
            FreezeState::Off => idx.to_vec(),
            FreezeState::Record(c) => {
                c.gather_idx.push(idx.to_vec());
                idx.to_vec()
            }
            FreezeState::Replay { choices, gather_next, .. } => {
                assert!(*gather_next < choices.gather_idx.len(), "ran out of recorded gathers");
                let v = choices.gather_idx[*gather_next].clone();
                *gather_next += 1;
                assert_eq!(v.len(), idx.len(), "replayed gather length mismatch");
                v
            }
        };
        assert!(idx.iter().all(|&i| i < n), "gather index out of range");
        let tv = &self.nodes[table.id].values;
        let mut values = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            values.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let shape = vec![idx.len(), d];
        self.push(Op::GatherRows { table: table.id, idx }, shape, values)
    }

    /// sum_i (a_i - b_i)^2 as a scalar.
    pub fn sq_dist_sum(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(numel(self.shape(a)), numel(self.shape(b)), "sq_dist: counts differ");
        let av = &self.nodes[a.id].values;
        let bv = &self.nodes[b.id].values;
        let s: f64 = av.iter().zip(bv).map(|(&x, &y)| (x - y) * (x - y)).sum();
        self.push(Op::SqDistSum { a: a.id, b: b.id }, vec![1], vec![s])
    }

    /// Mean squared error: `sq_dist_sum / element count`.
    pub fn mse(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let n = numel(self.shape(a)) as f64;
        let s = self.sq_dist_sum(a, b);
        self.scale(s, 1.0 / n)
    }

    /// Squared Frobenius distance between unit-modulus complex exponentials
    /// of two angle tensors: sum_i 2 - 2 cos(a_i - b_i). Invariant under
    /// shifting any entry by a multiple of 2 pi.
    pub fn angular_sq_dist(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(numel(self.shape(a)), numel(self.shape(b)), "angular: counts differ");
        let av = &self.nodes[a.id].values;
        let bv = &self.nodes[b.id].values;
        let s: f64 = av.iter().zip(bv).map(|(&x, &y)| 2.0 - 2.0 * (x - y).cos()).sum();
        self.push(Op::AngularSqDist { a: a.id, b: b.id }, vec![1], vec![s])
    }

    /// Straight-through estimator: value of `zq`, gradient of `z`.
    pub fn straight_through(&mut self, z: Tensor, zq: Tensor) -> Tensor {
        let delta = self.add_scaled(zq, z, -1.0);
        let frozen = self.stop_grad(delta);
        self.add(z, frozen)
    }

    /// Reverse sweep seeding d(loss)/d(loss) = 1. Fills every node's
    /// gradient buffer; read them back with [`Tape::grad`].
    pub fn backward(&mut self, loss: Tensor) {
        assert_eq!(self.nodes[loss.id].values.len(), 1, "backward needs a scalar loss");
        self.grads = self.nodes.iter().map(|n| vec![0.0; n.values.len()]).collect();
        self.grads[loss.id][0] = 1.0;
        for id in (0..=loss.id).rev() {
            let g = std::mem::take(&mut self.grads[id]);
            if g.iter().all(|&x| x == 0.0) {
                self.grads[id] = g;
                continue;
            }
            match &self.nodes[id].op {
                Op::Input | Op::StopGrad => {}
                &Op::Dense { x, w, b } => {
                    let (batch, in_dim) = (self.nodes[x].shape[0], self.nodes[x].shape[1]);
                    let out_dim = self.nodes[w].shape[0];
                    let xv = &self.nodes[x].values;
                    let wv = &self.nodes[w].values;
                    for bi in 0..batch {
                        let grow = &g[bi * out_dim..(bi + 1) * out_dim];
                        let dxrow = &mut self.grads[x][bi * in_dim..(bi + 1) * in_dim];
                        for (o, &go) in grow.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let wrow = &wv[o * in_dim..(o + 1) * in_dim];
                            for i in 0..in_dim {
                                dxrow[i] += go * wrow[i];
                            }
                        }
                    }
                    for bi in 0..batch {
                        let grow = &g[bi * out_dim..(bi + 1) * out_dim];
                        let xrow = &xv[bi * in_dim..(bi + 1) * in_dim];
                        for (o, &go) in grow.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let dwrow = &mut self.grads[w][o * in_dim..(o + 1) * in_dim];
                            for i in 0..in_dim {
                                dwrow[i] += go * xrow[i];
                            }
                        }
                    }
                    for bi in 0..batch {
                        for o in 0..out_dim {
                            self.grads[b][o] += g[bi * out_dim + o];
                        }
                    }
                }
                &Op::Conv3x3 { x, w, b } => {
                    let xs = &self.nodes[x].shape;
                    let (n, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                    let c_out = self.nodes[w].shape[0];
                    let xv = &self.nodes[x].values;
                    let wv = &self.nodes[w].values;
                    for ni in 0..n {
                        for co in 0..c_out {
                            let obase = (ni * c_out + co) * h * wd;
                            for ci in 0..c_in {
                                let xbase = (ni * c_in + ci) * h * wd;
                                let wbase = (co * c_in + ci) * 9;
                                for i in 0..h {
                                    for di in 0..3 {
                                        let si = i + di;
                                        if si < 1 || si > h {
                                            continue;
                                        }
                                        for j in 0..wd {
                                            let go = g[obase + i * wd + j];
                                            if go == 0.0 {
                                                continue;
                                            }
                                            for dj in 0..3 {
                                                let sj = j + dj;
                                                if sj < 1 || sj > wd {
                                                    continue;
                                                }
                                                let xi = xbase + (si - 1) * wd + (sj - 1);
                                                let wi = wbase + di * 3 + dj;
                                                self.grads[x][xi] += go * wv[wi];
                                                self.grads[w][wi] += go * xv[xi];
                                            }
                                        }
                                    }
                                }
                            }
                            for i in 0..h * wd {
                                self.grads[b][co] += g[obase + i];
                            }
                        }
                    }
                }
                &Op::LeakyRelu { x } => {
                    let xv = &self.nodes[x].values;
                    for (i, (&gi, &xi)) in g.iter().zip(xv.iter()).enumerate() {
                        self.grads[x][i] += gi * if xi >= 0.0 { 1.0 } else { LEAKY_SLOPE };
                    }
                }
                &Op::Add { a, b } => {
                    for (i, &gi) in g.iter().enumerate() {
                        self.grads[a][i] += gi;
                    }
                    for (i, &gi) in g.iter().enumerate() {
                        self.grads[b][i] += gi;
                    }
                }
                &Op::AddScaled { a, b, k } => {
                    for (i, &gi) in g.iter().enumerate() {
                        self.grads[a][i] += gi;
                    }
                    for (i, &gi) in g.iter().enumerate() {
                        self.grads[b][i] += k * gi;
                    }
                }
                &Op::Scale { x, k } => {
                    for (i, &gi) in g.iter().enumerate() {
                        self.grads[x][i] += k * gi;
                    }
                }
                &Op::Reshape { x } => {
                    for (i, &gi) in g.iter().enumerate() {
                        self.grads[x][i] += gi;
                    }
                }
                Op::GatherRows { table, idx } => {
                    let table = *table;
                    let d = self.nodes[table].shape[1];
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..d {
                            self.grads[table][i * d + c] += g[r * d + c];
                        }
                    }
                }
                &Op::SqDistSum { a, b } => {
                    let g0 = g[0];
                    for i in 0..self.nodes[a].values.len() {
                        let d = 2.0 * g0 * (self.nodes[a].values[i] - self.nodes[b].values[i]);
                        self.grads[a][i] += d;
                        self.grads[b][i] -= d;
                    }
                }
                &Op::AngularSqDist { a, b } => {
                    let g0 = g[0];
                    for i in 0..self.nodes[a].values.len() {
                        let s = 2.0 * g0 * (self.nodes[a].values[i] - self.nodes[b].values[i]).sin();
                        self.grads[a][i] += s;
                        self.grads[b][i] -= s;
                    }
                }
            }
            self.grads[id] = g;
        }
    }
}

/// Bias-corrected Adam over a fixed set of parameter slots.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Advance the shared step counter; call once per optimization step,
    /// before the per-slot updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Apply the update for one parameter slot.
    pub fn update(&mut self, slot: usize, param: &mut [f64], grad: &[f64]) {
        assert!(self.step > 0, "begin_step before update");
        assert_eq!(param.len(), self.m[slot].len(), "slot {slot} size mismatch");
        assert_eq!(param.len(), grad.len(), "grad size mismatch");
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..param.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = m[i] / b1t;
            let vh = v[i] / b2t;
            param[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// One differentiable input for [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckInput {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl GradCheckInput {
    pub fn new(shape: &[usize], values: &[f64]) -> Self {
        assert_eq!(numel(shape), values.len());
        Self { shape: shape.to_vec(), values: values.to_vec() }
    }
}

fn grad_check_impl<F>(
    inputs: &[GradCheckInput],
    build: F,
    eps: f64,
    max_coords: usize,
    seed: u64,
    freeze: bool,
) -> f64
where
    F: Fn(&mut Tape, &[Tensor]) -> Tensor,
{
    let base: Vec<Vec<f64>> = inputs.iter().map(|i| i.values.clone()).collect();
    let mut tape = if freeze { Tape::new_recording() } else { Tape::new() };
    let handles: Vec<Tensor> =
        inputs.iter().map(|inp| tape.input(&inp.shape, &inp.values)).collect();
    let loss = build(&mut tape, &handles);
    tape.backward(loss);
    let analytic: Vec<Vec<f64>> = handles.iter().map(|&h| tape.grad(h).to_vec()).collect();
    let frozen = freeze.then(|| tape.take_frozen());

    let eval = |vals: &[Vec<f64>]| -> f64 {
        let mut tape = match &frozen {
            Some(f) => Tape::new_replaying(f.clone()),
            None => Tape::new(),
        };
        let handles: Vec<Tensor> =
            inputs.iter().zip(vals).map(|(inp, v)| tape.input(&inp.shape, v)).collect();
        let loss = build(&mut tape, &handles);
        tape.scalar(loss)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for (i, inp) in inputs.iter().enumerate() {
        let n = inp.values.len();
        let coords = rand::seq::index::sample(&mut rng, n, max_coords.min(n));
        for c in coords.iter() {
            let mut plus = base.clone();
            plus[i][c] += eps;
            let mut minus = base.clone();
            minus[i][c] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic[i][c];
            let err = (a - numeric).abs() / (1.0 + a.abs().max(numeric.abs()));
            worst = worst.max(err);
        }
    }
    worst
}

/// Compare reverse-mode gradients against central finite differences on up
/// to `max_coords` sampled coordinates per input; returns the worst
/// relative error `|a - n| / (1 + max(|a|, |n|))`.
pub fn grad_check<F>(inputs: &[GradCheckInput], build: F, eps: f64, max_coords: usize, seed: u64) -> f64
where
    F: Fn(&mut Tape, &[Tensor]) -> Tensor,
{
    grad_check_impl(inputs, build, eps, max_coords, seed, false)
}

/// [`grad_check`] with stop-gradient semantics applied to the comparison:
/// stop-gradient outputs and gather row choices are captured at the base
/// point and replayed as constants during the finite-difference
/// evaluations. Use this for losses containing stop-gradient markers or
/// straight-through corrections, whose backward pass deliberately treats
/// those quantities as constants.
pub fn grad_check_frozen<F>(
    inputs: &[GradCheckInput],
    build: F,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> f64
where
    F: Fn(&mut Tape, &[Tensor]) -> Tensor,
{
    grad_check_impl(inputs, build, eps, max_coords, seed, true)
}
