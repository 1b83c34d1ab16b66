//! Recording graph for reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and whatever it needs
//! for the backward pass. [`Graph::backward`] consumes the graph, walks the
//! nodes in reverse order and returns the gradients of every node that
//! requires one.

use std::collections::HashMap;

use super::kernels::{self, ConvDims};
use super::real::{r, Real};
use super::tensor::{NodeId, Tensor};
use crate::error::{invalid, Error, Result};

/// Clamp applied to probabilities before taking logarithms in [`Graph::bce`].
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
    Softmax,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Reshape(NodeId),
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        dims: ConvDims,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<F>,
        inv_std: Vec<F>,
        channels: usize,
        inner: usize,
        training: bool,
    },
    Relu(NodeId),
    LeakyRelu(NodeId, F),
    Sigmoid(NodeId),
    Softmax(NodeId),
    AvgPool(NodeId),
    L2Normalize {
        x: NodeId,
        eps: F,
        norms: Vec<F>,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Concat(NodeId, NodeId),
    Gather {
        x: NodeId,
        index: Vec<usize>,
    },
    PairLinear {
        za: NodeId,
        zb: NodeId,
        ia: Vec<usize>,
        ib: Vec<usize>,
        w: NodeId,
        b: Option<NodeId>,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, F),
    Sum(NodeId),
    Mean(NodeId),
    Bce {
        scores: NodeId,
        labels: Vec<F>,
    },
    BceWithLogits {
        logits: NodeId,
        labels: Vec<F>,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
}

#[derive(Debug)]
struct Node<F> {
    shape: Vec<usize>,
    value: Vec<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Batch statistics observed by a training-mode batch-norm op.
#[derive(Debug, Clone)]
pub struct BatchStats<F> {
    pub name: String,
    pub mean: Vec<F>,
    /// Unbiased (n - 1) variance, the form folded into running statistics.
    pub var: Vec<F>,
}

#[derive(Debug)]
pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
    params: HashMap<String, NodeId>,
    batch_stats: Vec<BatchStats<F>>,
    grad_enabled: bool,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            batch_stats: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Graph whose nodes never require gradients (frozen evaluation).
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<F>, op: Op<F>, inputs: &[NodeId]) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let requires_grad = self.grad_enabled && inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn leaf_node(&mut self, shape: Vec<usize>, value: Vec<F>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: &Tensor<F>) -> NodeId {
        self.leaf_node(t.shape().to_vec(), t.data().to_vec(), false)
    }

    /// Leaf honoring `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<F>) -> NodeId {
        self.leaf_node(t.shape().to_vec(), t.data().to_vec(), t.requires_grad)
    }

    /// Named parameter leaf. Binding the same name twice returns the same
    /// node, so a module applied several times shares one set of weights.
    pub fn param(&mut self, name: &str, t: &Tensor<F>) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let id = self.leaf(t);
        self.params.insert(name.to_string(), id);
        id
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    pub fn value(&self, id: NodeId) -> &[F] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn tensor(&self, id: NodeId) -> Tensor<F> {
        let n = &self.nodes[id.0];
        let mut t = Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent");
        t.tape_id = Some(id);
        t
    }

    pub fn batch_stats(&self) -> &[BatchStats<F>] {
        &self.batch_stats
    }

    pub fn take_batch_stats(&mut self) -> Vec<BatchStats<F>> {
        std::mem::take(&mut self.batch_stats)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let n = &self.nodes[x.0];
        if shape.iter().product::<usize>() != n.value.len() {
            return Err(invalid!("cannot reshape {:?} into {:?}", n.shape, shape));
        }
        let value = n.value.clone();
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), &[x]))
    }

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, padding: usize) -> Result<NodeId> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 3 || ws.len() != 3 {
            return Err(invalid!(
                "conv1d expects input [B,C,T] and weight [Cout,Cin,K], got {:?} and {:?}",
                xs,
                ws
            ));
        }
        let (batch, cin, len_in) = (xs[0], xs[1], xs[2]);
        let (cout, wcin, kernel) = (ws[0], ws[1], ws[2]);
        if cin != wcin {
            return Err(invalid!("conv1d input has {cin} channels but weight expects {wcin}"));
        }
        if stride == 0 {
            return Err(invalid!("conv1d stride must be at least 1"));
        }
        if len_in + 2 * padding < kernel {
            return Err(invalid!(
                "conv1d input length {len_in} with padding {padding} is shorter than kernel {kernel}"
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(invalid!("conv1d bias shape {:?}, expected [{cout}]", self.shape(b)));
            }
        }
        let dims = ConvDims {
            batch,
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            padding,
            len_in,
            len_out: (len_in + 2 * padding - kernel) / stride + 1,
        };
        let y = kernels::conv1d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &dims);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            vec![batch, cout, dims.len_out],
            y,
            Op::Conv1d { x, w, b, dims },
            &inputs,
        ))
    }

    fn bn_layout(&self, x: NodeId) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [b, c, t] => Ok((b, c, t)),
            [b, f] => Ok((b, f, 1)),
            ref s => Err(invalid!("batch norm expects [B,C,T] or [B,F], got {:?}", s)),
        }
    }

    /// Training-mode batch norm: normalizes with batch statistics and records
    /// them under `name` for the caller to fold into running statistics.
    pub fn batchnorm_train(&mut self, name: &str, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (batch, channels, inner) = self.bn_layout(x)?;
        if batch < 2 {
            return Err(invalid!(
                "batch norm in training mode needs a batch of at least 2, got {batch}"
            ));
        }
        let xv = self.value(x);
        let count = (batch * inner) as f64;
        let mut mean = vec![0f64; channels];
        let mut var = vec![0f64; channels];
        for row in xv.chunks(channels * inner) {
            if inner == 1 {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v.as_f64());
            } else {
                for (m, block) in mean.iter_mut().zip(row.chunks(inner)) {
                    *m += block.iter().map(|v| v.as_f64()).sum::<f64>();
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for row in xv.chunks(channels * inner) {
            if inner == 1 {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v.as_f64() - m).powi(2);
                }
            } else {
                for ((s, block), m) in var.iter_mut().zip(row.chunks(inner)).zip(&mean) {
                    *s += block.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
                }
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / count).collect();
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.batch_stats.push(BatchStats {
            name: name.to_string(),
            mean: mean.iter().map(|&m| F::lit(m)).collect(),
            var: var.iter().map(|&v| F::lit(v / (count - 1.0))).collect(),
        });
        let mean: Vec<F> = mean.into_iter().map(F::lit).collect();
        let inv_std: Vec<F> = inv_std.into_iter().map(F::lit).collect();
        Ok(self.batchnorm_apply(x, gamma, beta, &mean, inv_std, true, (batch, channels, inner)))
    }

    /// Eval-mode batch norm using stored running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[F],
        running_var: &[F],
        eps: f64,
    ) -> Result<NodeId> {
        let layout = self.bn_layout(x)?;
        if running_mean.len() != layout.1 || running_var.len() != layout.1 {
            return Err(invalid!(
                "running statistics have {} entries for {} channels",
                running_mean.len(),
                layout.1
            ));
        }
        let inv_std = running_var.iter().map(|&v| F::one() / (v + r(eps)).sqrt()).collect();
        Ok(self.batchnorm_apply(x, gamma, beta, running_mean, inv_std, false, layout))
    }

    #[allow(clippy::too_many_arguments)]
    fn batchnorm_apply(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[F],
        inv_std: Vec<F>,
        training: bool,
        (_, channels, inner): (usize, usize, usize),
    ) -> NodeId {
        let xv = self.value(x);
        let (g, bt) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![F::zero(); xv.len()];
        let mut y = vec![F::zero(); xv.len()];
        let row_len = channels * inner;
        for ((xr, hr), yr) in xv
            .chunks(row_len)
            .zip(xhat.chunks_mut(row_len))
            .zip(y.chunks_mut(row_len))
        {
            if inner == 1 {
                for (((((&v, h), o), &m), &s), (&gc, &bc)) in
                    xr.iter().zip(hr).zip(yr).zip(mean).zip(&inv_std).zip(g.iter().zip(bt))
                {
                    *h = (v - m) * s;
                    *o = gc * *h + bc;
                }
            } else {
                for c in 0..channels {
                    let span = c * inner..(c + 1) * inner;
                    let (m, s, gc, bc) = (mean[c], inv_std[c], g[c], bt[c]);
                    for ((&v, h), o) in xr[span.clone()].iter().zip(&mut hr[span.clone()]).zip(&mut yr[span]) {
                        *h = (v - m) * s;
                        *o = gc * *h + bc;
                    }
                }
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            shape,
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                channels,
                inner,
                training,
            },
            &[x, gamma, beta],
        )
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation, slope: f64) -> Result<NodeId> {
        Ok(match kind {
            Activation::Relu => self.relu(x),
            Activation::LeakyRelu => self.leaky_relu(x, slope),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Softmax => self.softmax(x)?,
        })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).iter().map(|&v| v.max(F::zero())).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, y, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let s: F = r(slope);
        let y = self
            .value(x)
            .iter()
            .map(|&v| if v > F::zero() { v } else { v * s })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, y, Op::LeakyRelu(x, s), &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, y, Op::Sigmoid(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().ok_or_else(|| invalid!("softmax of a scalar"))?;
        let mut y = self.value(x).to_vec();
        for row in y.chunks_mut(width) {
            softmax_in_place(row);
        }
        Ok(self.push(shape, y, Op::Softmax(x), &[x]))
    }

    /// Mean over the time axis: `[B,C,T] -> [B,C]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let &[b, c, t] = self.shape(x) else {
            return Err(invalid!("avg pool expects [B,C,T], got {:?}", self.shape(x)));
        };
        if t == 0 {
            return Err(invalid!("avg pool over an empty time axis"));
        }
        let inv = F::one() / r(t as f64);
        let y = self
            .value(x)
            .chunks(t)
            .map(|row| row.iter().copied().sum::<F>() * inv)
            .collect();
        Ok(self.push(vec![b, c], y, Op::AvgPool(x), &[x]))
    }

    /// Divides each row by `max(‖row‖₂, eps)`.
    pub fn l2_normalize(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let &[b, f] = self.shape(x) else {
            return Err(invalid!("l2 normalize expects [B,F], got {:?}", self.shape(x)));
        };
        let e: F = r(eps);
        let xv = self.value(x);
        let mut norms = Vec::with_capacity(b);
        let mut y = Vec::with_capacity(xv.len());
        for row in xv.chunks(f) {
            let n = kernels::dot(row, row).sqrt();
            norms.push(n);
            let d = n.max(e);
            y.extend(row.iter().map(|&v| v / d));
        }
        Ok(self.push(vec![b, f], y, Op::L2Normalize { x, eps: e, norms }, &[x]))
    }

    /// `x · wᵀ + b` with `x: [B,Fin]`, `w: [Fout,Fin]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (&[rows, fin], &[fout, win]) = (self.shape(x), self.shape(w)) else {
            return Err(invalid!(
                "linear expects input [B,F] and weight [Fout,Fin], got {:?} and {:?}",
                self.shape(x),
                self.shape(w)
            ));
        };
        if fin != win {
            return Err(invalid!("linear input has {fin} features but weight expects {win}"));
        }
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(invalid!("linear bias shape {:?}, expected [{fout}]", self.shape(b)));
            }
        }
        let y = kernels::linear_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), fin, fout);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(vec![rows, fout], y, Op::Linear { x, w, b }, &inputs))
    }

    /// Row-wise concatenation `[a, b]` of two `[B,·]` matrices.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (&[ra, fa], &[rb, fb]) = (self.shape(a), self.shape(b)) else {
            return Err(invalid!("concat expects two rank-2 inputs"));
        };
        if ra != rb {
            return Err(invalid!("concat of batches with {ra} and {rb} rows"));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut y = Vec::with_capacity(ra * (fa + fb));
        for i in 0..ra {
            y.extend_from_slice(&av[i * fa..(i + 1) * fa]);
            y.extend_from_slice(&bv[i * fb..(i + 1) * fb]);
        }
        Ok(self.push(vec![ra, fa + fb], y, Op::Concat(a, b), &[a, b]))
    }

    /// Selects rows of a rank-2 matrix.
    pub fn gather_rows(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId> {
        let &[rows, f] = self.shape(x) else {
            return Err(invalid!("gather expects a rank-2 input"));
        };
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(invalid!("gather index {bad} out of range for {rows} rows"));
        }
        let xv = self.value(x);
        let mut y = Vec::with_capacity(index.len() * f);
        for &i in index {
            y.extend_from_slice(&xv[i * f..(i + 1) * f]);
        }
        Ok(self.push(
            vec![index.len(), f],
            y,
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    /// Equivalent to `linear(concat(gather(za, ia), gather(zb, ib)), w, b)`
    /// but applies the two halves of `w` once per source row and sums per
    /// pair, which is much cheaper when pairs reuse rows.
    pub fn pair_linear(
        &mut self,
        za: NodeId,
        zb: NodeId,
        ia: &[usize],
        ib: &[usize],
        w: NodeId,
        b: Option<NodeId>,
    ) -> Result<NodeId> {
        let (&[ra, fa], &[rb, fb]) = (self.shape(za), self.shape(zb)) else {
            return Err(invalid!("pair_linear expects rank-2 sources"));
        };
        let &[fout, fin] = self.shape(w) else {
            return Err(invalid!("pair_linear weight must be [Fout,Fin]"));
        };
        if fin != fa + fb {
            return Err(invalid!(
                "pair_linear weight expects {fin} features, pairs have {}",
                fa + fb
            ));
        }
        if ia.len() != ib.len() {
            return Err(invalid!("pair index lists differ in length"));
        }
        if ia.iter().any(|&i| i >= ra) || ib.iter().any(|&i| i >= rb) {
            return Err(invalid!("pair index out of range"));
        }
        let (wa, wb) = split_weight(self.value(w), fout, fa, fb);
        let ha = kernels::linear_forward(self.value(za), &wa, None, fa, fout);
        let hb = kernels::linear_forward(self.value(zb), &wb, b.map(|b| self.value(b)), fb, fout);
        let mut y = vec![F::zero(); ia.len() * fout];
        for (p, row) in y.chunks_mut(fout).enumerate() {
            let (x, z) = (
                &ha[ia[p] * fout..(ia[p] + 1) * fout],
                &hb[ib[p] * fout..(ib[p] + 1) * fout],
            );
            for o in 0..fout {
                row[o] = x[o] + z[o];
            }
        }
        let mut inputs = vec![za, zb, w];
        inputs.extend(b);
        Ok(self.push(
            vec![ia.len(), fout],
            y,
            Op::PairLinear {
                za,
                zb,
                ia: ia.to_vec(),
                ib: ib.to_vec(),
                w,
                b,
            },
            &inputs,
        ))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(invalid!(
                "{what} of mismatched shapes {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let y = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, y, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let y = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, y, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let c: F = r(c);
        let y = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, y, Op::Scale(x, c), &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).iter().copied().sum::<F>();
        self.push(vec![], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(invalid!("mean of an empty tensor"));
        }
        let s = self.value(x).iter().copied().sum::<F>() / r(n as f64);
        Ok(self.push(vec![], vec![s], Op::Mean(x), &[x]))
    }

    /// Mean binary cross-entropy of probabilities, clamped to
    /// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce(&mut self, scores: NodeId, labels: &[F]) -> Result<NodeId> {
        let hv = self.value(scores);
        check_binary_targets(hv.len(), labels)?;
        let lo: F = r(PROB_CLAMP);
        let hi = F::one() - lo;
        let mut loss = 0f64;
        for (&h, &y) in hv.iter().zip(labels) {
            let h = h.max(lo).min(hi).as_f64();
            let y = y.as_f64();
            loss -= y * h.ln() + (1.0 - y) * (1.0 - h).ln();
        }
        let loss = F::lit(loss / hv.len() as f64);
        Ok(self.push(
            vec![],
            vec![loss],
            Op::Bce {
                scores,
                labels: labels.to_vec(),
            },
            &[scores],
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)`, evaluated in the
    /// stable logit form.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &[F]) -> Result<NodeId> {
        let zv = self.value(logits);
        check_binary_targets(zv.len(), labels)?;
        let mut loss = 0f64;
        for (&z, &y) in zv.iter().zip(labels) {
            let (z, y) = (z.as_f64(), y.as_f64());
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        let loss = F::lit(loss / zv.len() as f64);
        Ok(self.push(
            vec![],
            vec![loss],
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    /// Mean softmax cross-entropy of `logits: [B,C]` against class indices.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let &[b, c] = self.shape(logits) else {
            return Err(invalid!(
                "cross entropy expects logits [B,C], got {:?}",
                self.shape(logits)
            ));
        };
        if b == 0 {
            return Err(invalid!("cross entropy of an empty batch"));
        }
        if labels.len() != b {
            return Err(invalid!("{} labels for a batch of {b}", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(invalid!("label {bad} out of range for {c} classes"));
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = 0f64;
        for (row, &l) in probs.chunks_mut(c).zip(labels) {
            let m = row.iter().fold(F::neg_infinity(), |a, &v| a.max(v)).as_f64();
            let lse = m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln();
            loss += lse - row[l].as_f64();
            softmax_in_place(row);
        }
        let loss = F::lit(loss / b as f64);
        Ok(self.push(
            vec![],
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the graph.
    pub fn backward(self, loss: NodeId) -> Result<Gradients<F>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(invalid!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            ));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &gy, &mut grads)?;
            }
            grads[i] = Some(gy);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.requires_grad || !matches!(n.op, Op::Leaf) {
                grads[i] = None;
            } else if grads[i].is_none() {
                grads[i] = Some(vec![F::zero(); n.value.len()]);
            }
        }
        Ok(Gradients {
            grads,
            params: self.params,
        })
    }

    fn propagate(&self, node: &Node<F>, gy: &[F], grads: &mut [Option<Vec<F>>]) -> Result<()> {
        let val = |id: NodeId| self.nodes[id.0].value.as_slice();
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        let mut acc = |id: NodeId, g: Vec<F>| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Reshape(x) => acc(*x, gy.to_vec()),
            Op::Conv1d { x, w, b, dims } => {
                let (dx, dw, db) = kernels::conv1d_backward(val(*x), val(*w), gy, dims);
                acc(*x, dx);
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                channels,
                inner,
                training,
            } => {
                let (c, t) = (*channels, *inner);
                let batch = gy.len() / (c * t);
                let g = val(*gamma);
                let mut dgamma = vec![F::zero(); c];
                let mut dbeta = vec![F::zero(); c];
                let row_len = c * t;
                for (gr, hr) in gy.chunks(row_len).zip(xhat.chunks(row_len)) {
                    if t == 1 {
                        for (((dg, db), &gv), &h) in dgamma.iter_mut().zip(&mut dbeta).zip(gr).zip(hr) {
                            *dg += gv * h;
                            *db += gv;
                        }
                    } else {
                        for (ch, (gb, hb)) in gr.chunks(t).zip(hr.chunks(t)).enumerate() {
                            for (&gv, &h) in gb.iter().zip(hb) {
                                dgamma[ch] += gv * h;
                                dbeta[ch] += gv;
                            }
                        }
                    }
                }
                if needs(*x) {
                    let m: F = r((batch * t) as f64);
                    let k: Vec<F> = g.iter().zip(inv_std).map(|(&gc, &s)| gc * s).collect();
                    // training: dx = k·(gy − mean(gy) − x̂·mean(gy·x̂))
                    let (sb, sg): (Vec<F>, Vec<F>) = if *training {
                        (
                            dbeta.iter().map(|&v| v / m).collect(),
                            dgamma.iter().map(|&v| v / m).collect(),
                        )
                    } else {
                        (vec![F::zero(); c], vec![F::zero(); c])
                    };
                    let mut dx = vec![F::zero(); gy.len()];
                    for ((dr, gr), hr) in dx.chunks_mut(row_len).zip(gy.chunks(row_len)).zip(xhat.chunks(row_len)) {
                        if t == 1 {
                            for ((((d, &gv), &h), &kc), (&b0, &g0)) in
                                dr.iter_mut().zip(gr).zip(hr).zip(&k).zip(sb.iter().zip(&sg))
                            {
                                *d = kc * (gv - b0 - h * g0);
                            }
                        } else {
                            for ch in 0..c {
                                let span = ch * t..(ch + 1) * t;
                                let (kc, b0, g0) = (k[ch], sb[ch], sg[ch]);
                                for ((d, &gv), &h) in dr[span.clone()].iter_mut().zip(&gr[span.clone()]).zip(&hr[span])
                                {
                                    *d = kc * (gv - b0 - h * g0);
                                }
                            }
                        }
                    }
                    acc(*x, dx);
                }
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(
                    *x,
                    gy.iter()
                        .zip(xv)
                        .map(|(&g, &v)| if v > F::zero() { g } else { F::zero() })
                        .collect(),
                );
            }
            Op::LeakyRelu(x, s) => {
                let xv = val(*x);
                acc(
                    *x,
                    gy.iter()
                        .zip(xv)
                        .map(|(&g, &v)| if v > F::zero() { g } else { g * *s })
                        .collect(),
                );
            }
            Op::Sigmoid(x) => {
                acc(
                    *x,
                    gy.iter()
                        .zip(&node.value)
                        .map(|(&g, &y)| g * y * (F::one() - y))
                        .collect(),
                );
            }
            Op::Softmax(x) => {
                let w = *node.shape.last().unwrap();
                let mut dx = vec![F::zero(); gy.len()];
                for ((dr, gr), yr) in dx.chunks_mut(w).zip(gy.chunks(w)).zip(node.value.chunks(w)) {
                    let s = kernels::dot(gr, yr);
                    for i in 0..w {
                        dr[i] = yr[i] * (gr[i] - s);
                    }
                }
                acc(*x, dx);
            }
            Op::AvgPool(x) => {
                let t = self.nodes[x.0].shape[2];
                let inv = F::one() / r(t as f64);
                let mut dx = Vec::with_capacity(gy.len() * t);
                for &g in gy {
                    dx.extend(std::iter::repeat_n(g * inv, t));
                }
                acc(*x, dx);
            }
            Op::L2Normalize { x, eps, norms } => {
                let f = node.shape[1];
                let xv = val(*x);
                let mut dx = vec![F::zero(); gy.len()];
                for (i, &n) in norms.iter().enumerate() {
                    let (gr, xr) = (&gy[i * f..(i + 1) * f], &xv[i * f..(i + 1) * f]);
                    let dr = &mut dx[i * f..(i + 1) * f];
                    if n > *eps {
                        let s = kernels::dot(gr, xr) / (n * n);
                        for j in 0..f {
                            dr[j] = (gr[j] - xr[j] * s) / n;
                        }
                    } else {
                        for j in 0..f {
                            dr[j] = gr[j] / *eps;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Linear { x, w, b } => {
                let (fout, fin) = (self.nodes[w.0].shape[0], self.nodes[w.0].shape[1]);
                if needs(*x) {
                    acc(*x, kernels::linear_backward_input(gy, val(*w), fin, fout));
                }
                if needs(*w) || b.is_some_and(needs) {
                    let (dw, db) = kernels::linear_backward_params(val(*x), gy, fin, fout);
                    acc(*w, dw);
                    if let Some(b) = b {
                        acc(*b, db);
                    }
                }
            }
            Op::Concat(a, b) => {
                let fa = self.nodes[a.0].shape[1];
                let fb = self.nodes[b.0].shape[1];
                let mut da = Vec::with_capacity(gy.len() / (fa + fb) * fa);
                let mut db = Vec::with_capacity(gy.len() / (fa + fb) * fb);
                for row in gy.chunks(fa + fb) {
                    da.extend_from_slice(&row[..fa]);
                    db.extend_from_slice(&row[fa..]);
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Gather { x, index } => {
                let f = node.shape[1];
                let mut dx = vec![F::zero(); self.nodes[x.0].value.len()];
                for (p, &i) in index.iter().enumerate() {
                    for j in 0..f {
                        dx[i * f + j] += gy[p * f + j];
                    }
                }
                acc(*x, dx);
            }
            Op::PairLinear { za, zb, ia, ib, w, b } => {
                let fout = node.shape[1];
                let (ra, fa) = (self.nodes[za.0].shape[0], self.nodes[za.0].shape[1]);
                let (rb, fb) = (self.nodes[zb.0].shape[0], self.nodes[zb.0].shape[1]);
                let mut dha = vec![F::zero(); ra * fout];
                let mut dhb = vec![F::zero(); rb * fout];
                for (p, g) in gy.chunks(fout).enumerate() {
                    for o in 0..fout {
                        dha[ia[p] * fout + o] += g[o];
                        dhb[ib[p] * fout + o] += g[o];
                    }
                }
                let (wa, wb) = split_weight(val(*w), fout, fa, fb);
                if needs(*za) {
                    acc(*za, kernels::linear_backward_input(&dha, &wa, fa, fout));
                }
                if needs(*zb) {
                    acc(*zb, kernels::linear_backward_input(&dhb, &wb, fb, fout));
                }
                if needs(*w) || b.is_some_and(needs) {
                    let (dwa, _) = kernels::linear_backward_params(val(*za), &dha, fa, fout);
                    let (dwb, dbias) = kernels::linear_backward_params(val(*zb), &dhb, fb, fout);
                    let mut dw = Vec::with_capacity(fout * (fa + fb));
                    for o in 0..fout {
                        dw.extend_from_slice(&dwa[o * fa..(o + 1) * fa]);
                        dw.extend_from_slice(&dwb[o * fb..(o + 1) * fb]);
                    }
                    acc(*w, dw);
                    if let Some(b) = b {
                        acc(*b, dbias);
                    }
                }
            }
            Op::Add(a, b) => {
                acc(*a, gy.to_vec());
                acc(*b, gy.to_vec());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, gy.iter().zip(bv).map(|(&g, &v)| g * v).collect());
                acc(*b, gy.iter().zip(av).map(|(&g, &v)| g * v).collect());
            }
            Op::Scale(x, c) => acc(*x, gy.iter().map(|&g| g * *c).collect()),
            Op::Sum(x) => acc(*x, vec![gy[0]; self.nodes[x.0].value.len()]),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len();
                acc(*x, vec![gy[0] / r(n as f64); n]);
            }
            Op::Bce { scores, labels } => {
                let hv = val(*scores);
                let m: F = r(hv.len() as f64);
                let lo: F = r(PROB_CLAMP);
                let hi = F::one() - lo;
                acc(
                    *scores,
                    hv.iter()
                        .zip(labels)
                        .map(|(&h, &y)| {
                            if h < lo || h > hi {
                                F::zero()
                            } else {
                                gy[0] * (h - y) / (h * (F::one() - h)) / m
                            }
                        })
                        .collect(),
                );
            }
            Op::BceWithLogits { logits, labels } => {
                let zv = val(*logits);
                let m: F = r(zv.len() as f64);
                acc(
                    *logits,
                    zv.iter()
                        .zip(labels)
                        .map(|(&z, &y)| gy[0] * (sigmoid(z) - y) / m)
                        .collect(),
                );
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.nodes[logits.0].shape[1];
                let m: F = r(labels.len() as f64);
                let mut dx: Vec<F> = probs.iter().map(|&p| gy[0] * p / m).collect();
                for (i, &l) in labels.iter().enumerate() {
                    dx[i * c + l] -= gy[0] / m;
                }
                acc(*logits, dx);
            }
        }
        Ok(())
    }
}

fn split_weight<F: Real>(w: &[F], fout: usize, fa: usize, fb: usize) -> (Vec<F>, Vec<F>) {
    let mut wa = Vec::with_capacity(fout * fa);
    let mut wb = Vec::with_capacity(fout * fb);
    for row in w.chunks(fa + fb) {
        wa.extend_from_slice(&row[..fa]);
        wb.extend_from_slice(&row[fa..]);
    }
    (wa, wb)
}

fn check_binary_targets<F: Real>(n: usize, labels: &[F]) -> Result<()> {
    if n == 0 {
        return Err(invalid!("binary cross-entropy of an empty batch"));
    }
    if labels.len() != n {
        return Err(invalid!("{} labels for {n} scores", labels.len()));
    }
    if labels.iter().any(|&y| y != F::zero() && y != F::one()) {
        return Err(invalid!("binary targets must be 0 or 1"));
    }
    Ok(())
}

#[inline]
pub fn sigmoid<F: Real>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

pub fn softmax_in_place<F: Real>(row: &mut [F]) {
    let m = row.iter().fold(F::neg_infinity(), |a, &v| a.max(v));
    let mut s = F::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    params: HashMap<String, NodeId>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&[F]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn by_name(&self, name: &str) -> Option<&[F]> {
        self.params.get(name).and_then(|&id| self.get(id))
    }

    /// Adds the gradient bound to `name`, if any, into `t.grad`.
    pub fn accumulate_into(&self, name: &str, t: &mut Tensor<F>) -> Result<bool> {
        match self.by_name(name) {
            Some(g) => t.accumulate_grad(g).map(|_| true),
            None => Ok(false),
        }
    }
}

/// Fails with a numeric error when `v` is NaN or infinite.
pub fn ensure_finite<F: Real>(what: &str, v: F) -> Result<F> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} is not finite ({v})")))
    }
}
