//! Pretraining, frozen-backbone evaluation, baselines and sweeps.

mod eval;
mod pretrain;
mod sweep;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{TimeSeriesDataset, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::rng::{tag, RngStream};

pub use eval::{
    baseline_random_weights, baseline_supervised, linear_eval, linear_eval_split, selftime_eval, train_linear_probe,
    transfer_eval, ProbeOutcome,
};
pub use pretrain::{
    check_piece_length, epoch_log_csv, parse_epoch_log, pretrain, pretrain_with_log, EpochLog, Pretrainer, StepReport,
    WorkCounters, EPOCH_LOG_HEADER,
};
pub use sweep::{sweep, sweep_csv, CellStatus, SweepRow, SWEEP_HEADER};

/// Fewest rows a train/validation/test split accepts.
pub const MIN_SPLIT_ROWS: usize = 8;

/// Disjoint row indices, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Rows ordered so that every prefix holds each class in proportion.
/// Members of a class are shuffled and spread over `(0, 1)`; interleaving
/// the classes by that position (random tie-break) keeps prefixes stratified.
fn stratified_order<R: Rng>(rows: &[usize], labels: Option<&[usize]>, rng: &mut R) -> Vec<usize> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in rows {
        groups.entry(labels.map_or(0, |l| l[i])).or_default().push(i);
    }
    let mut keyed: Vec<(f64, u64, usize)> = Vec::with_capacity(rows.len());
    for members in groups.values_mut() {
        members.shuffle(rng);
        let m = members.len() as f64;
        for (rank, &i) in members.iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / m, rng.random(), i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|k| k.2).collect()
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

/// 50/25/25 split of `n` rows (sizes `n/2`, `n/4`, remainder), stratified
/// by `labels` when given.
pub fn split_indices(n: usize, labels: Option<&[usize]>, seed: u64) -> Result<Split> {
    if n < MIN_SPLIT_ROWS {
        return Err(invalid!("splitting needs at least {MIN_SPLIT_ROWS} series, got {n}"));
    }
    if labels.is_some_and(|l| l.len() != n) {
        return Err(invalid!("label count does not match the {n} rows"));
    }
    let rows: Vec<usize> = (0..n).collect();
    let order = stratified_order(&rows, labels, &mut RngStream::derive(seed, &[tag::SPLIT]).rng());
    let (a, b) = (n / 2, n / 2 + n / 4);
    Ok(Split {
        train: sorted(order[..a].to_vec()),
        val: sorted(order[a..b].to_vec()),
        test: sorted(order[b..].to_vec()),
    })
}

/// The archive's own test rows as the test set; a third of its training rows
/// (stratified) become the validation set.
pub fn original_split(ds: &TimeSeriesDataset, seed: u64) -> Result<Split> {
    let n_train = ds
        .original_train_len
        .ok_or_else(|| invalid!("dataset `{}` does not record an original train/test boundary", ds.name))?;
    if n_train < 3 || n_train >= ds.len() {
        return Err(invalid!(
            "original split needs at least 3 training rows and one test row ({n_train} of {})",
            ds.len()
        ));
    }
    let rows: Vec<usize> = (0..n_train).collect();
    let order = stratified_order(&rows, ds.labels(), &mut RngStream::derive(seed, &[tag::SPLIT]).rng());
    let keep = n_train - n_train / 3;
    Ok(Split {
        train: sorted(order[..keep].to_vec()),
        val: sorted(order[keep..].to_vec()),
        test: (n_train..ds.len()).collect(),
    })
}

/// Train/validation/test subsets of `ds`.
pub fn split_dataset(
    ds: &TimeSeriesDataset,
    seed: u64,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset, TimeSeriesDataset)> {
    let s = split_indices(ds.len(), ds.labels(), seed)?;
    Ok((ds.subset(&s.train), ds.subset(&s.val), ds.subset(&s.test)))
}

/// Seed of the `index`-th evaluation split.
pub fn split_seed(cfg: &TrainConfig, index: usize) -> u64 {
    RngStream::derive(cfg.seed, &[tag::SPLIT, index as u64]).stream_id
}

/// The `index`-th evaluation split under `cfg`, with its seed.
pub fn split_for(ds: &TimeSeriesDataset, cfg: &TrainConfig, index: usize) -> Result<(u64, Split)> {
    let seed = split_seed(cfg, index);
    let split = if cfg.keep_original_split {
        original_split(ds, seed)?
    } else {
        split_indices(ds.len(), ds.labels(), seed)?
    };
    Ok((seed, split))
}

/// Test accuracies of every trial with their summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Split-major: all trials of split 0, then split 1, ...
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub split_seeds: Vec<u64>,
    pub trial_count: usize,
}

impl EvalReport {
    pub fn new(accuracies: Vec<f64>, split_seeds: Vec<u64>) -> Result<Self> {
        if accuracies.is_empty() {
            return Err(invalid!("no trials to report"));
        }
        if split_seeds.is_empty() || !accuracies.len().is_multiple_of(split_seeds.len()) {
            return Err(invalid!(
                "{} trials do not divide evenly over {} splits",
                accuracies.len(),
                split_seeds.len()
            ));
        }
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let std = (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self {
            trial_count: accuracies.len(),
            accuracies,
            mean,
            std,
            split_seeds,
        })
    }

    pub fn trials_per_split(&self) -> usize {
        self.trial_count / self.split_seeds.len()
    }

    /// `split,trial,split_seed,accuracy` rows.
    pub fn to_csv(&self) -> String {
        let per = self.trials_per_split();
        let mut out = String::from("split,trial,split_seed,accuracy\n");
        for (i, a) in self.accuracies.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{a}", i / per, i % per, self.split_seeds[i / per]);
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "accuracy {:.2} ± {:.2} % (population std over {} trials, {} splits)",
            100.0 * self.mean,
            100.0 * self.std,
            self.trial_count,
            self.split_seeds.len()
        )
    }
}

/// Runs `f` on a dedicated pool of `jobs` threads, or the global pool when 0.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests;
