use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{split_for, with_jobs, EvalReport, Split};
use crate::autodiff::{ensure_finite, join, Adam, AdamConfig, Gradients, Graph, Linear, Parameters, Tensor};
use crate::data::{ModelCheckpoint, PretrainOn, TimeSeriesDataset, TrainConfig};
use crate::error::{invalid, Result};
use crate::model::{series_batch, top1_accuracy, Backbone, SelfTimeModel, EMBED_DIM};
use crate::pipeline::pretrain;
use crate::rng::{tag, RngStream};

/// Adds every bound gradient into the matching tensor of `module`.
fn accumulate<P: Parameters<f32> + ?Sized>(module: &mut P, prefix: &str, grads: &Gradients<f32>) -> Result<()> {
    let mut result = Ok(());
    module.visit_mut(prefix, &mut |name, t| {
        if result.is_ok() && t.requires_grad {
            result = grads.accumulate_into(&name, t).map(|_| ());
        }
    });
    result
}

fn gather(features: &[Vec<f32>], idx: &[usize]) -> Vec<f32> {
    idx.iter().flat_map(|&i| features[i].iter().copied()).collect()
}

fn pick(labels: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| labels[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOutcome {
    /// Test accuracy of the classifier with the best validation accuracy.
    pub test_accuracy: f64,
    pub val_accuracy: f64,
    /// Epoch (from 1) the selected classifier comes from.
    pub best_epoch: usize,
}

/// Trains a linear classifier on fixed features with Adam (`lr_linear`,
/// `eval_epochs` epochs, minibatches of `batch_size`) and keeps the epoch
/// with the highest validation accuracy; ties keep the earlier epoch.
pub fn train_linear_probe(
    features: &[Vec<f32>],
    labels: &[usize],
    classes: usize,
    split: &Split,
    cfg: &TrainConfig,
    stream: RngStream,
) -> Result<ProbeOutcome> {
    if features.len() != labels.len() {
        return Err(invalid!("{} feature rows for {} labels", features.len(), labels.len()));
    }
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(invalid!("every split part must hold at least one row"));
    }
    let dim = features[0].len();
    let mut rng = stream.rng();
    let mut probe = Linear::<f32>::new(dim, classes, &mut rng);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr_linear));
    let (val_x, val_y) = (gather(features, &split.val), pick(labels, &split.val));

    let mut order = split.train.clone();
    let mut best = (f64::NEG_INFINITY, 0, probe.clone());
    for epoch in 0..cfg.eval_epochs {
        order.shuffle(&mut rng);
        for ids in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let x = g.input(&Tensor::new(vec![ids.len(), dim], gather(features, ids))?);
            let logits = probe.forward(&mut g, "probe", x)?;
            let loss = g.cross_entropy(logits, &pick(labels, ids))?;
            ensure_finite("linear classifier loss", g.value(loss)[0])?;
            let grads = g.backward(loss)?;
            probe.zero_grad();
            accumulate(&mut probe, "probe", &grads)?;
            adam.step_module(&mut probe)?;
        }
        let acc = top1_accuracy(&probe.apply(&val_x), classes, &val_y);
        if acc > best.0 {
            best = (acc, epoch + 1, probe.clone());
        }
    }
    let test = best.2.apply(&gather(features, &split.test));
    Ok(ProbeOutcome {
        test_accuracy: top1_accuracy(&test, classes, &pick(labels, &split.test)),
        val_accuracy: best.0,
        best_epoch: best.1,
    })
}

fn check_label_count(ckpt: &ModelCheckpoint, ds: &TimeSeriesDataset) -> Result<()> {
    if let Some(expected) = ckpt.meta_parse::<usize>("label_count")? {
        if expected != ds.num_classes() {
            return Err(invalid!(
                "checkpoint was pretrained on data with {expected} classes, `{}` has {}",
                ds.name,
                ds.num_classes()
            ));
        }
    }
    Ok(())
}

/// Probe test accuracies for `trials` runs on each listed split, split-major,
/// with the split seeds. The checkpoint is only read.
fn evaluate_frozen(
    ckpt: &ModelCheckpoint,
    ds: &TimeSeriesDataset,
    cfg: &TrainConfig,
    trials: usize,
    split_indices: &[usize],
) -> Result<(Vec<f64>, Vec<u64>)> {
    let labels = ds.require_labels("linear evaluation")?;
    if trials == 0 {
        return Err(invalid!("at least one trial is required"));
    }
    let model = ckpt.to_model::<f32>()?;
    let rows: Vec<&[f64]> = ds.rows().collect();
    let features = model.backbone.embed(&rows)?;
    let splits: Vec<(usize, u64, Split)> = split_indices
        .iter()
        .map(|&s| split_for(ds, cfg, s).map(|(seed, split)| (s, seed, split)))
        .collect::<Result<_>>()?;
    let runs: Vec<(usize, usize)> = (0..splits.len())
        .flat_map(|i| (0..trials).map(move |t| (i, t)))
        .collect();
    let accuracies = runs
        .par_iter()
        .map(|&(i, t)| {
            let (s, _, split) = &splits[i];
            let stream = RngStream::derive(cfg.seed, &[tag::PROBE, *s as u64, t as u64]);
            train_linear_probe(&features, labels, ds.num_classes(), split, cfg, stream).map(|o| o.test_accuracy)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((accuracies, splits.iter().map(|s| s.1).collect()))
}

/// Linear evaluation of a frozen pretrained backbone over `cfg.splits`
/// random splits with `trials` classifiers each.
pub fn linear_eval(
    ckpt: &ModelCheckpoint,
    ds: &TimeSeriesDataset,
    cfg: &TrainConfig,
    trials: usize,
) -> Result<EvalReport> {
    check_label_count(ckpt, ds)?;
    let splits: Vec<usize> = (0..cfg.splits).collect();
    let (acc, seeds) = with_jobs(cfg.jobs, || evaluate_frozen(ckpt, ds, cfg, trials, &splits))??;
    EvalReport::new(acc, seeds)
}

/// Test accuracies of `trials` classifiers on split `index` alone.
pub fn linear_eval_split(
    ckpt: &ModelCheckpoint,
    ds: &TimeSeriesDataset,
    cfg: &TrainConfig,
    trials: usize,
    index: usize,
) -> Result<Vec<f64>> {
    check_label_count(ckpt, ds)?;
    Ok(evaluate_frozen(ckpt, ds, cfg, trials, &[index])?.0)
}

/// Linear evaluation on `target` of a backbone pretrained on another
/// dataset; the target's label set is not compared with the source.
pub fn transfer_eval(source: &ModelCheckpoint, target: &TimeSeriesDataset, cfg: &TrainConfig) -> Result<EvalReport> {
    let splits: Vec<usize> = (0..cfg.splits).collect();
    let (acc, seeds) = with_jobs(cfg.jobs, || evaluate_frozen(source, target, cfg, cfg.trials, &splits))??;
    EvalReport::new(acc, seeds)
}

/// Linear evaluation of the untrained initialization pretraining with the
/// same seed would start from.
pub fn baseline_random_weights(ds: &TimeSeriesDataset, cfg: &TrainConfig) -> Result<EvalReport> {
    let ckpt = ModelCheckpoint::from_model(&SelfTimeModel::<f32>::new(cfg.classes, cfg.seed)?);
    linear_eval(&ckpt, ds, cfg, cfg.trials)
}

/// Full protocol: per split, pretrain (on the training rows or on all rows,
/// per `pretrain_on`), then `cfg.trials` linear classifiers.
pub fn selftime_eval(ds: &TimeSeriesDataset, cfg: &TrainConfig) -> Result<EvalReport> {
    ds.require_labels("linear evaluation")?;
    with_jobs(cfg.jobs, || {
        let shared = match cfg.pretrain_on {
            PretrainOn::All => Some(pretrain(ds, cfg)?),
            PretrainOn::Train => None,
        };
        let per_split = (0..cfg.splits)
            .into_par_iter()
            .map(|s| {
                let (seed, split) = split_for(ds, cfg, s)?;
                let acc = match &shared {
                    Some(ckpt) => linear_eval_split(ckpt, ds, cfg, cfg.trials, s)?,
                    None => {
                        let ckpt = pretrain(&ds.subset(&split.train), cfg)?;
                        linear_eval_split(&ckpt, ds, cfg, cfg.trials, s)?
                    }
                };
                Ok((acc, seed))
            })
            .collect::<Result<Vec<_>>>()?;
        let seeds = per_split.iter().map(|p| p.1).collect();
        EvalReport::new(per_split.into_iter().flat_map(|p| p.0).collect(), seeds)
    })?
}

#[derive(Clone)]
struct SupervisedNet {
    backbone: Backbone<f32>,
    classifier: Linear<f32>,
}

impl Parameters<f32> for SupervisedNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<f32>)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<f32>)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

impl SupervisedNet {
    fn accuracy(&self, ds: &TimeSeriesDataset, labels: &[usize], idx: &[usize]) -> Result<f64> {
        let rows: Vec<&[f64]> = idx.iter().map(|&i| ds.series(i)).collect();
        let z: Vec<f32> = self.backbone.embed(&rows)?.into_iter().flatten().collect();
        let logits = self.classifier.apply(&z);
        Ok(top1_accuracy(
            &logits,
            self.classifier.out_features(),
            &pick(labels, idx),
        ))
    }
}

fn supervised_trial(
    ds: &TimeSeriesDataset,
    labels: &[usize],
    split: &Split,
    cfg: &TrainConfig,
    stream: RngStream,
) -> Result<f64> {
    let mut rng = stream.rng();
    let mut net = SupervisedNet {
        backbone: Backbone::new(&mut rng),
        classifier: Linear::new(EMBED_DIM, ds.num_classes(), &mut rng),
    };
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr_pretrain));
    let mut order = split.train.clone();
    let mut best = (f64::NEG_INFINITY, net.clone());
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for ids in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let rows: Vec<&[f64]> = ids.iter().map(|&i| ds.series(i)).collect();
            let mut g = Graph::new();
            let x = g.input(&series_batch(&rows)?);
            let z = net.backbone.forward(&mut g, x, true)?;
            let logits = net.classifier.forward(&mut g, "classifier", z)?;
            let loss = g.cross_entropy(logits, &pick(labels, ids))?;
            ensure_finite("supervised loss", g.value(loss)[0])?;
            let stats = g.take_batch_stats();
            let grads = g.backward(loss)?;
            net.zero_grad();
            accumulate(&mut net, "", &grads)?;
            for s in &stats {
                net.backbone
                    .bn_named(&s.name)
                    .ok_or_else(|| invalid!("no batch-norm layer named `{}`", s.name))?
                    .update_running(s)?;
            }
            adam.step_module(&mut net)?;
        }
        let acc = net.accuracy(ds, labels, &split.val)?;
        if acc > best.0 {
            best = (acc, net.clone());
        }
    }
    best.1.accuracy(ds, labels, &split.test)
}

/// Backbone and linear classifier trained jointly with cross-entropy
/// (`lr_pretrain`, `epochs`), selected on validation accuracy like the
/// frozen protocols. With zero epochs the initialization is scored.
pub fn baseline_supervised(ds: &TimeSeriesDataset, cfg: &TrainConfig) -> Result<EvalReport> {
    let labels = ds.require_labels("supervised training")?;
    with_jobs(cfg.jobs, || {
        let splits: Vec<(u64, Split)> = (0..cfg.splits).map(|s| split_for(ds, cfg, s)).collect::<Result<_>>()?;
        let runs: Vec<(usize, usize)> = (0..cfg.splits)
            .flat_map(|s| (0..cfg.trials).map(move |t| (s, t)))
            .collect();
        let acc = runs
            .par_iter()
            .map(|&(s, t)| {
                let stream = RngStream::derive(cfg.seed, &[tag::SUPERVISED, s as u64, t as u64]);
                supervised_trial(ds, labels, &splits[s].1, cfg, stream)
            })
            .collect::<Result<Vec<_>>>()?;
        EvalReport::new(acc, splits.iter().map(|s| s.0).collect())
    })?
}
