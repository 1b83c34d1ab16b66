//! The encoder, the two relation heads and the pretext losses.
//!
//! Backbone: four `Conv1d(k=4, s=2, p=1) + BatchNorm + ReLU` blocks with
//! 8/16/32/64 channels, then global average pooling and L2 normalization.
//! Heads: `Linear(128→256) + BatchNorm + LeakyReLU + Linear(256→out)` on the
//! concatenation of two embeddings; `out` is 1 for the inter-sample head
//! and `C` for the intra-temporal head.

use rand::Rng;

use crate::autodiff::{
    ensure_finite, join, BatchNorm1d, BatchStats, Conv1d, Gradients, Graph, Linear, NodeId, Parameters, Real, Tensor,
    LEAKY_SLOPE,
};
use crate::error::{invalid, Result};
use crate::relation::{InterSampleBatch, PiecePair};
use crate::rng::{tag, RngStream};

pub const EMBED_DIM: usize = 64;
pub const HIDDEN_DIM: usize = 256;
/// Shortest input the four stride-2 convolutions accept.
pub const MIN_INPUT_LEN: usize = 16;
pub const NORM_EPS: f64 = 1e-12;
const CHANNELS: [usize; 5] = [1, 8, 16, 32, 64];

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<F> {
    pub convs: Vec<Conv1d<F>>,
    pub bns: Vec<BatchNorm1d<F>>,
}

impl<F: Real> Backbone<F> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let convs = CHANNELS
            .windows(2)
            .map(|c| Conv1d::new(c[0], c[1], 4, 2, 1, rng))
            .collect();
        let bns = CHANNELS[1..].iter().map(|&c| BatchNorm1d::new(c)).collect();
        Self { convs, bns }
    }

    /// `[B, 1, T] -> [B, 64]`, rows unit-norm.
    pub fn forward(&self, g: &mut Graph<F>, x: NodeId, training: bool) -> Result<NodeId> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != 1 {
            return Err(invalid!("encoder input must be [B, 1, T], got {shape:?}"));
        }
        if shape[2] < MIN_INPUT_LEN {
            return Err(invalid!(
                "encoder input length {} is below the minimum of {MIN_INPUT_LEN}",
                shape[2]
            ));
        }
        let mut h = x;
        for (i, (conv, bn)) in self.convs.iter().zip(&self.bns).enumerate() {
            h = conv.forward(g, &format!("backbone.conv{}", i + 1), h)?;
            h = bn.forward(g, &format!("backbone.bn{}", i + 1), h, training)?;
            h = g.relu(h);
        }
        let pooled = g.global_avg_pool(h)?;
        g.l2_normalize(pooled, NORM_EPS)
    }

    /// The batch-norm layer recorded as `backbone.bn{i}`.
    pub fn bn_named(&mut self, name: &str) -> Option<&mut BatchNorm1d<F>> {
        let idx = name.strip_prefix("backbone.bn")?.parse::<usize>().ok()?;
        self.bns.get_mut(idx.checked_sub(1)?)
    }

    /// Eval-mode embeddings of equal-length series, one row per series.
    /// Reads parameters only.
    pub fn embed(&self, series: &[&[f64]]) -> Result<Vec<Vec<F>>> {
        const CHUNK: usize = 256;
        let mut out = Vec::with_capacity(series.len());
        for chunk in series.chunks(CHUNK) {
            let mut g = Graph::inference();
            let x = g.input(&series_batch(chunk)?);
            let z = self.forward(&mut g, x, false)?;
            out.extend(g.value(z).chunks(EMBED_DIM).map(|r| r.to_vec()));
        }
        Ok(out)
    }
}

impl<F: Real> Parameters<F> for Backbone<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<F>)) {
        for (i, (c, b)) in self.convs.iter().zip(&self.bns).enumerate() {
            c.visit(&join(prefix, &format!("conv{}", i + 1)), f);
            b.visit(&join(prefix, &format!("bn{}", i + 1)), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<F>)) {
        for (i, (c, b)) in self.convs.iter_mut().zip(&mut self.bns).enumerate() {
            c.visit_mut(&join(prefix, &format!("conv{}", i + 1)), f);
            b.visit_mut(&join(prefix, &format!("bn{}", i + 1)), f);
        }
    }
}

/// Packs equal-length series into a `[B, 1, T]` tensor.
pub fn series_batch<F: Real>(series: &[&[f64]]) -> Result<Tensor<F>> {
    let len = series.first().map_or(0, |s| s.len());
    if series.iter().any(|s| s.len() != len) {
        return Err(invalid!("series in one batch must share a length"));
    }
    let data = series.iter().flat_map(|s| s.iter().map(|&v| F::lit(v))).collect();
    Tensor::new(vec![series.len(), 1, len], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Inter,
    Intra,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationHead<F> {
    pub kind: HeadKind,
    pub fc1: Linear<F>,
    pub bn: BatchNorm1d<F>,
    pub fc2: Linear<F>,
}

impl<F: Real> RelationHead<F> {
    pub fn new<R: Rng + ?Sized>(kind: HeadKind, outputs: usize, rng: &mut R) -> Self {
        Self {
            kind,
            fc1: Linear::new(2 * EMBED_DIM, HIDDEN_DIM, rng),
            bn: BatchNorm1d::new(HIDDEN_DIM),
            fc2: Linear::new(HIDDEN_DIM, outputs, rng),
        }
    }

    pub fn prefix(&self) -> &'static str {
        match self.kind {
            HeadKind::Inter => "head_inter",
            HeadKind::Intra => "head_intra",
        }
    }

    fn tail(&self, g: &mut Graph<F>, h: NodeId, training: bool) -> Result<NodeId> {
        let p = self.prefix();
        let h = self.bn.forward(g, &format!("{p}.bn"), h, training)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        self.fc2.forward(g, &format!("{p}.fc2"), h)
    }

    /// Logits for relation representations `[P, 128]`.
    pub fn forward(&self, g: &mut Graph<F>, rep: NodeId, training: bool) -> Result<NodeId> {
        let dim = g.shape(rep).get(1).copied();
        if dim != Some(2 * EMBED_DIM) {
            return Err(invalid!(
                "relation head expects [P, {}], got {:?}",
                2 * EMBED_DIM,
                g.shape(rep)
            ));
        }
        let h = self.fc1.forward(g, &format!("{}.fc1", self.prefix()), rep)?;
        self.tail(g, h, training)
    }

    /// Logits for the pairs `[za[ia[p]], zb[ib[p]]]` without materializing
    /// the concatenated representations.
    pub fn forward_pairs(
        &self,
        g: &mut Graph<F>,
        za: NodeId,
        zb: NodeId,
        ia: &[usize],
        ib: &[usize],
        training: bool,
    ) -> Result<NodeId> {
        let p = self.prefix();
        let w = g.param(&format!("{p}.fc1.weight"), &self.fc1.weight);
        let b = g.param(&format!("{p}.fc1.bias"), &self.fc1.bias);
        let h = g.pair_linear(za, zb, ia, ib, w, Some(b))?;
        self.tail(g, h, training)
    }
}

impl<F: Real> Parameters<F> for RelationHead<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<F>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.bn.visit(&join(prefix, "bn"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<F>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Shared encoder with both relation heads.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfTimeModel<F> {
    pub backbone: Backbone<F>,
    pub head_inter: RelationHead<F>,
    pub head_intra: RelationHead<F>,
    pub class_count: usize,
}

impl<F: Real> SelfTimeModel<F> {
    /// Fresh initialization determined by `seed`.
    pub fn new(class_count: usize, seed: u64) -> Result<Self> {
        if class_count < 2 {
            return Err(invalid!("intra head needs at least 2 classes, got {class_count}"));
        }
        let mut rng = RngStream::derive(seed, &[tag::INIT]).rng();
        Ok(Self {
            backbone: Backbone::new(&mut rng),
            head_inter: RelationHead::new(HeadKind::Inter, 1, &mut rng),
            head_intra: RelationHead::new(HeadKind::Intra, class_count, &mut rng),
            class_count,
        })
    }

    /// Folds batch statistics recorded during a training-mode forward into
    /// the matching layers' running statistics, in recording order.
    pub fn commit_batch_stats(&mut self, stats: &[BatchStats<F>]) -> Result<()> {
        for s in stats {
            let bn = match s.name.as_str() {
                "head_inter.bn" => &mut self.head_inter.bn,
                "head_intra.bn" => &mut self.head_intra.bn,
                name => self
                    .backbone
                    .bn_named(name)
                    .ok_or_else(|| invalid!("no batch-norm layer named `{name}`"))?,
            };
            bn.update_running(s)?;
        }
        Ok(())
    }

    /// Adds every bound parameter gradient into the model's tensors.
    pub fn accumulate_grads(&mut self, grads: &Gradients<F>) -> Result<()> {
        let mut result = Ok(());
        self.visit_mut("", &mut |name, t| {
            if result.is_ok() && t.requires_grad {
                result = grads.accumulate_into(&name, t).map(|_| ());
            }
        });
        result
    }
}

impl<F: Real> Parameters<F> for SelfTimeModel<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<F>)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.head_inter.visit(&join(prefix, "head_inter"), f);
        self.head_intra.visit(&join(prefix, "head_intra"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<F>)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        self.head_inter.visit_mut(&join(prefix, "head_inter"), f);
        self.head_intra.visit_mut(&join(prefix, "head_intra"), f);
    }
}

/// Rowwise concatenation `[za, zb]`.
pub fn relation_representation<F: Real>(g: &mut Graph<F>, za: NodeId, zb: NodeId) -> Result<NodeId> {
    g.concat(za, zb)
}

/// Fraction of predictions on the correct side of 0.5.
fn binary_accuracy<F: Real>(logits: &[F], labels: &[f64]) -> f64 {
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(&z, &y)| (z >= F::zero()) == (y == 1.0))
        .count();
    hits as f64 / labels.len() as f64
}

/// Top-1 agreement of `[B, C]` logits with `labels`.
pub fn top1_accuracy<F: Real>(logits: &[F], classes: usize, labels: &[usize]) -> f64 {
    let hits = logits
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Loss node plus bookkeeping for one branch.
#[derive(Debug, Clone, Copy)]
pub struct BranchLoss {
    pub loss: NodeId,
    pub accuracy: f64,
    /// Relation scores the head produced.
    pub scores: usize,
}

/// Binary cross-entropy over every positive and negative view pair.
pub fn inter_loss<F: Real>(
    g: &mut Graph<F>,
    model: &SelfTimeModel<F>,
    batch: &InterSampleBatch,
    training: bool,
) -> Result<BranchLoss> {
    let rows: Vec<&[f64]> = (0..batch.views.len() / batch.series_len)
        .map(|r| batch.view(r))
        .collect();
    let x = g.input(&series_batch(&rows)?);
    let z = model.backbone.forward(g, x, training)?;
    let logits = model
        .head_inter
        .forward_pairs(g, z, z, &batch.pair_a, &batch.pair_b, training)?;
    let labels: Vec<F> = batch.labels.iter().map(|&y| F::lit(y)).collect();
    let accuracy = binary_accuracy(g.value(logits), &batch.labels);
    let loss = g.bce_with_logits(logits, &labels)?;
    Ok(BranchLoss {
        loss,
        accuracy,
        scores: batch.pair_count(),
    })
}

/// Cross-entropy of the intra head on piece pairs.
pub fn intra_loss<F: Real>(
    g: &mut Graph<F>,
    model: &SelfTimeModel<F>,
    pairs: &[PiecePair],
    training: bool,
) -> Result<BranchLoss> {
    if pairs.is_empty() {
        return Err(invalid!("no piece pairs"));
    }
    let classes = model.class_count;
    let labels: Vec<usize> = pairs.iter().map(|p| p.label).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(invalid!("piece label {bad} out of range for {classes} classes"));
    }
    let n = pairs.len();
    let mut pieces: Vec<&[f64]> = pairs.iter().map(|p| p.piece_u.as_slice()).collect();
    pieces.extend(pairs.iter().map(|p| p.piece_v.as_slice()));
    let x = g.input(&series_batch(&pieces)?);
    let z = model.backbone.forward(g, x, training)?;
    let first: Vec<usize> = (0..n).collect();
    let second: Vec<usize> = (n..2 * n).collect();
    let zu = g.gather_rows(z, &first)?;
    let zv = g.gather_rows(z, &second)?;
    let rep = relation_representation(g, zu, zv)?;
    let logits = model.head_intra.forward(g, rep, training)?;
    let accuracy = top1_accuracy(g.value(logits), classes, &labels);
    let loss = g.cross_entropy(logits, &labels)?;
    Ok(BranchLoss {
        loss,
        accuracy,
        scores: n,
    })
}

/// `inter + intra_weight · intra`; both inputs must be finite. With unit
/// weight this is the plain sum.
pub fn total_loss<F: Real>(g: &mut Graph<F>, inter: NodeId, intra: NodeId, intra_weight: f64) -> Result<NodeId> {
    ensure_finite("inter loss", g.value(inter)[0])?;
    ensure_finite("intra loss", g.value(intra)[0])?;
    let intra = if intra_weight == 1.0 {
        intra
    } else {
        g.scale(intra, intra_weight)
    };
    g.add(inter, intra)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SelfTimeLossReport {
    pub loss_inter: f64,
    pub loss_intra: f64,
    pub loss_total: f64,
    pub inter_accuracy: f64,
    /// Training accuracy of the intra-temporal classifier ("Class ACC").
    pub intra_accuracy: f64,
}

/// Records both branches and their sum on `g`.
pub fn selftime_loss<F: Real>(
    g: &mut Graph<F>,
    model: &SelfTimeModel<F>,
    batch: &InterSampleBatch,
    pairs: &[PiecePair],
    training: bool,
) -> Result<(NodeId, SelfTimeLossReport, (usize, usize))> {
    let inter = inter_loss(g, model, batch, training)?;
    let intra = intra_loss(g, model, pairs, training)?;
    let total = total_loss(g, inter.loss, intra.loss, 1.0)?;
    let report = SelfTimeLossReport {
        loss_inter: g.value(inter.loss)[0].as_f64(),
        loss_intra: g.value(intra.loss)[0].as_f64(),
        loss_total: g.value(total)[0].as_f64(),
        inter_accuracy: inter.accuracy,
        intra_accuracy: intra.accuracy,
    };
    Ok((total, report, (inter.scores, intra.scores)))
}
