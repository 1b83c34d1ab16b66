//! Relation pairs for the two pretext tasks.
//!
//! * Inter-sample: `K` augmented views per sample; view pairs drawn from the
//!   same sample are positives, pairs across a sample and its partner are
//!   negatives.
//! * Intra-temporal: two pieces of one series, labelled by how far apart
//!   their start positions are.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentationPolicy;
use crate::error::{invalid, Result};
use crate::rng::{tag, RngStream};

/// Bucket of the start distance `|u - v|` among `classes` bins of width
/// `D = floor(len / classes)`. Thresholds are inclusive: `d <= D` is label 0,
/// `d <= 2D` label 1, and so on; anything beyond `(C-1)·D` is `C - 1`.
pub fn temporal_label(len: usize, classes: usize, u: usize, v: usize) -> Result<usize> {
    if classes < 2 {
        return Err(invalid!("temporal relations need at least 2 classes, got {classes}"));
    }
    if len < classes {
        return Err(invalid!(
            "series length {len} is shorter than the class count {classes}"
        ));
    }
    let width = len / classes;
    let d = u.abs_diff(v);
    if d <= width {
        return Ok(0);
    }
    Ok((d.div_ceil(width) - 1).min(classes - 1))
}

/// Settings of the intra-temporal pretext task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalRelationConfig {
    pub class_count: usize,
    /// Piece length as a fraction of the series length.
    pub piece_ratio: f64,
    /// Draw the label uniformly first, then a start pair from that bucket.
    pub stratified: bool,
}

impl TemporalRelationConfig {
    pub fn new(class_count: usize, piece_ratio: f64) -> Self {
        Self {
            class_count,
            piece_ratio,
            stratified: false,
        }
    }

    pub fn piece_length(&self, len: usize) -> usize {
        ((self.piece_ratio * len as f64).round() as usize).max(1)
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if !(self.piece_ratio > 0.0 && self.piece_ratio < 1.0) {
            return Err(invalid!("piece ratio must lie in (0, 1), got {}", self.piece_ratio));
        }
        if self.class_count < 2 {
            return Err(invalid!("class count must be at least 2, got {}", self.class_count));
        }
        if len / self.class_count < 1 {
            return Err(invalid!(
                "series length {len} too short for {} temporal classes",
                self.class_count
            ));
        }
        if self.piece_length(len) > len {
            return Err(invalid!("piece longer than the series"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecePair {
    pub piece_u: Vec<f64>,
    pub piece_v: Vec<f64>,
    pub start_u: usize,
    pub start_v: usize,
    pub label: usize,
}

/// Number of ordered start pairs `(u, v)` in `[0, max_start]²` at distance `d`.
fn pairs_at_distance(max_start: usize, d: usize) -> u64 {
    match d {
        0 => max_start as u64 + 1,
        d if d <= max_start => 2 * (max_start + 1 - d) as u64,
        _ => 0,
    }
}

/// Label counts over every ordered start pair, for series length `len`,
/// `classes` labels and pieces of length `piece_len`.
pub fn label_histogram(len: usize, classes: usize, piece_len: usize) -> Result<Vec<u64>> {
    if piece_len == 0 || piece_len > len {
        return Err(invalid!("piece length {piece_len} must be in 1..={len}"));
    }
    let max_start = len - piece_len;
    let mut counts = vec![0u64; classes];
    for d in 0..=max_start {
        counts[temporal_label(len, classes, 0, d)?] += pairs_at_distance(max_start, d);
    }
    Ok(counts)
}

fn sample_starts_stratified<R: Rng + ?Sized>(
    len: usize,
    classes: usize,
    max_start: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    // weights of each distance grouped by label
    let mut by_label: Vec<Vec<(usize, u64)>> = vec![Vec::new(); classes];
    for d in 0..=max_start {
        by_label[temporal_label(len, classes, 0, d)?].push((d, pairs_at_distance(max_start, d)));
    }
    let feasible: Vec<usize> = (0..classes).filter(|&c| !by_label[c].is_empty()).collect();
    let label = feasible[rng.random_range(0..feasible.len())];
    let bucket = &by_label[label];
    let total: u64 = bucket.iter().map(|&(_, w)| w).sum();
    let mut pick = rng.random_range(0..total);
    let mut d = bucket[bucket.len() - 1].0;
    for &(dist, w) in bucket {
        if pick < w {
            d = dist;
            break;
        }
        pick -= w;
    }
    if d == 0 {
        let u = rng.random_range(0..=max_start);
        return Ok((u, u));
    }
    let a = rng.random_range(0..=max_start - d);
    Ok(if rng.random_bool(0.5) { (a, a + d) } else { (a + d, a) })
}

/// Two pieces of `x` with independent uniform starts (or stratified by
/// label when configured) and their temporal relation label.
pub fn sample_piece_pair<R: Rng + ?Sized>(x: &[f64], cfg: &TemporalRelationConfig, rng: &mut R) -> Result<PiecePair> {
    let len = x.len();
    let piece = cfg.piece_length(len);
    if piece > len {
        return Err(invalid!("piece length {piece} exceeds series length {len}"));
    }
    let max_start = len - piece;
    let (start_u, start_v) = if cfg.stratified {
        sample_starts_stratified(len, cfg.class_count, max_start, rng)?
    } else {
        (rng.random_range(0..=max_start), rng.random_range(0..=max_start))
    };
    Ok(PiecePair {
        piece_u: x[start_u..start_u + piece].to_vec(),
        piece_v: x[start_v..start_v + piece].to_vec(),
        start_u,
        start_v,
        label: temporal_label(len, cfg.class_count, start_u, start_v)?,
    })
}

/// Random streams used by one training step. Per-sample streams are keyed
/// on the dataset index, so results do not depend on batch composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepStreams {
    pub seed: u64,
    pub epoch: u64,
    pub step: u64,
}

impl StepStreams {
    pub fn view(&self, sample: u64, view: u64) -> RngStream {
        RngStream::derive(self.seed, &[tag::VIEW, self.epoch, sample, view])
    }

    pub fn partner(&self) -> RngStream {
        RngStream::derive(self.seed, &[tag::PARTNER, self.epoch, self.step])
    }

    pub fn piece(&self, sample: u64, pair: u64) -> RngStream {
        RngStream::derive(self.seed, &[tag::PIECE, self.epoch, sample, pair])
    }
}

/// Random cyclic permutation (Sattolo): `p[i] != i` for every `i`.
pub fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    p
}

/// Views and enumerated view pairs of one minibatch.
#[derive(Debug, Clone)]
pub struct InterSampleBatch {
    pub series_len: usize,
    pub views_per_sample: usize,
    /// Dataset index of each batch member.
    pub anchor_index: Vec<usize>,
    /// Dataset index of each member's negative partner.
    pub partner_index: Vec<usize>,
    /// Row `m·K + i` holds view `i` of batch member `m`; rows are
    /// `series_len` long.
    pub views: Vec<f64>,
    /// View rows of each pair.
    pub pair_a: Vec<usize>,
    pub pair_b: Vec<usize>,
    /// 1 for positive (same sample), 0 for negative.
    pub labels: Vec<f64>,
}

impl InterSampleBatch {
    pub fn batch_size(&self) -> usize {
        self.anchor_index.len()
    }

    pub fn pair_count(&self) -> usize {
        self.labels.len()
    }

    pub fn view(&self, row: usize) -> &[f64] {
        &self.views[row * self.series_len..(row + 1) * self.series_len]
    }
}

/// Generates `k` views per sample, pairs every member with a partner through
/// a random derangement, and enumerates all `K²` positive and `K²` negative
/// view combinations per member.
pub fn build_inter_batch(
    minibatch: &[&[f64]],
    sample_ids: &[usize],
    k: usize,
    policy: &AugmentationPolicy,
    streams: &StepStreams,
) -> Result<InterSampleBatch> {
    let n = minibatch.len();
    if n < 2 {
        return Err(invalid!(
            "inter-sample relations need a minibatch of at least 2 (got {n}); no negative partner exists"
        ));
    }
    if k < 1 {
        return Err(invalid!("at least one view per sample is required"));
    }
    if sample_ids.len() != n {
        return Err(invalid!("{} sample ids for {n} series", sample_ids.len()));
    }
    let len = minibatch[0].len();
    if minibatch.iter().any(|s| s.len() != len) {
        return Err(invalid!("minibatch series differ in length"));
    }
    let mut views = Vec::with_capacity(n * k * len);
    for (m, series) in minibatch.iter().enumerate() {
        for i in 0..k {
            views.extend(policy.apply(series, streams.view(sample_ids[m] as u64, i as u64)));
        }
    }
    let partner = derangement(n, &mut streams.partner().rng());

    let pairs = 2 * n * k * k;
    let (mut pair_a, mut pair_b, mut labels) = (
        Vec::with_capacity(pairs),
        Vec::with_capacity(pairs),
        Vec::with_capacity(pairs),
    );
    for (m, &p) in partner.iter().enumerate() {
        for i in 0..k {
            for j in 0..k {
                pair_a.push(m * k + i);
                pair_b.push(m * k + j);
                labels.push(1.0);
            }
        }
        for i in 0..k {
            for j in 0..k {
                pair_a.push(m * k + i);
                pair_b.push(p * k + j);
                labels.push(0.0);
            }
        }
    }
    Ok(InterSampleBatch {
        series_len: len,
        views_per_sample: k,
        anchor_index: sample_ids.to_vec(),
        partner_index: partner.iter().map(|&p| sample_ids[p]).collect(),
        views,
        pair_a,
        pair_b,
        labels,
    })
}

#[cfg(test)]
mod tests;
