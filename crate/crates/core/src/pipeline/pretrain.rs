use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::autodiff::{Adam, AdamConfig, Graph, Parameters};
use crate::data::{ModelCheckpoint, TimeSeriesDataset, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::model::{selftime_loss, SelfTimeLossReport, SelfTimeModel, MIN_INPUT_LEN};
use crate::relation::{build_inter_batch, sample_piece_pair, PiecePair, StepStreams};
use crate::rng::{tag, RngStream};

pub const EPOCH_LOG_HEADER: &str = "epoch,loss_inter,loss_intra,loss_total,inter_acc,class_acc";

/// Step averages for one epoch (`epoch` counts from 1).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_inter: f64,
    pub loss_intra: f64,
    pub loss_total: f64,
    pub inter_acc: f64,
    pub class_acc: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.loss_inter, self.loss_intra, self.loss_total, self.inter_acc, self.class_acc
        )
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let bad = || Error::Format(format!("malformed epoch log row `{line}`"));
        let cells: Vec<&str> = line.trim().split(',').collect();
        if cells.len() != 6 {
            return Err(bad());
        }
        let num = |i: usize| cells[i].parse::<f64>().map_err(|_| bad());
        Ok(Self {
            epoch: cells[0].parse().map_err(|_| bad())?,
            loss_inter: num(1)?,
            loss_intra: num(2)?,
            loss_total: num(3)?,
            inter_acc: num(4)?,
            class_acc: num(5)?,
        })
    }
}

pub fn epoch_log_csv(rows: &[EpochLog]) -> String {
    let mut out = format!("{EPOCH_LOG_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

pub fn parse_epoch_log(text: &str) -> Result<Vec<EpochLog>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && l.trim() != EPOCH_LOG_HEADER)
        .map(EpochLog::parse_row)
        .collect()
}

/// Relation scores evaluated so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkCounters {
    pub steps: u64,
    pub inter_scores: u64,
    pub intra_scores: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub losses: SelfTimeLossReport,
    pub inter_scores: usize,
    pub intra_scores: usize,
}

/// Piece length for series of `series_len` steps, rejecting settings the
/// encoder cannot take.
pub fn check_piece_length(series_len: usize, cfg: &TrainConfig) -> Result<usize> {
    if series_len < MIN_INPUT_LEN {
        return Err(invalid!(
            "series length {series_len} is below the encoder minimum of {MIN_INPUT_LEN}"
        ));
    }
    let rel = cfg.relation();
    rel.validate(series_len)?;
    let piece = rel.piece_length(series_len);
    if piece < MIN_INPUT_LEN {
        return Err(invalid!(
            "piece length {piece} (piece_ratio {} of {series_len} steps) is below the encoder minimum of \
             {MIN_INPUT_LEN}; raise piece_ratio to at least {:.3} or use longer series",
            cfg.piece_ratio,
            MIN_INPUT_LEN as f64 / series_len as f64
        ));
    }
    Ok(piece)
}

/// Stateful pretraining loop over one dataset.
pub struct Pretrainer<'a> {
    data: &'a TimeSeriesDataset,
    cfg: TrainConfig,
    pub model: SelfTimeModel<f32>,
    pub optimizer: Adam<f32>,
    epochs_done: usize,
    pub log: Vec<EpochLog>,
    pub counters: WorkCounters,
}

impl<'a> Pretrainer<'a> {
    pub fn new(data: &'a TimeSeriesDataset, cfg: &TrainConfig) -> Result<Self> {
        Self::check(data, cfg)?;
        Ok(Self {
            data,
            cfg: cfg.clone(),
            model: SelfTimeModel::new(cfg.classes, cfg.seed)?,
            optimizer: Adam::new(AdamConfig::with_lr(cfg.lr_pretrain)),
            epochs_done: 0,
            log: Vec::new(),
            counters: WorkCounters::default(),
        })
    }

    /// Continues from a checkpoint written by [`Pretrainer::checkpoint`].
    pub fn resume(ckpt: &ModelCheckpoint, data: &'a TimeSeriesDataset, cfg: &TrainConfig) -> Result<Self> {
        Self::check(data, cfg)?;
        let model = ckpt.to_model::<f32>()?;
        if model.class_count != cfg.classes {
            return Err(invalid!(
                "checkpoint was trained with C = {}, configuration asks for {}",
                model.class_count,
                cfg.classes
            ));
        }
        let adam_cfg = AdamConfig::with_lr(cfg.lr_pretrain);
        let log = match ckpt.meta("epoch_log") {
            Some(text) => parse_epoch_log(text)?,
            None => Vec::new(),
        };
        Ok(Self {
            data,
            cfg: cfg.clone(),
            model,
            optimizer: ckpt.optimizer(adam_cfg)?.unwrap_or_else(|| Adam::new(adam_cfg)),
            epochs_done: ckpt.meta_parse("epoch")?.unwrap_or(0),
            log,
            counters: WorkCounters::default(),
        })
    }

    fn check(data: &TimeSeriesDataset, cfg: &TrainConfig) -> Result<()> {
        cfg.validate()?;
        check_piece_length(data.series_len(), cfg)?;
        if data.len() < 2 {
            return Err(invalid!("pretraining needs at least 2 series, got {}", data.len()));
        }
        Ok(())
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// One optimizer step on the rows `ids`.
    pub fn step(&mut self, ids: &[usize], epoch: usize, step: usize) -> Result<StepReport> {
        let streams = StepStreams {
            seed: self.cfg.seed,
            epoch: epoch as u64,
            step: step as u64,
        };
        let series: Vec<&[f64]> = ids.iter().map(|&i| self.data.series(i)).collect();
        let batch = build_inter_batch(&series, ids, self.cfg.views, &self.cfg.policy, &streams)?;
        let rel = self.cfg.relation();
        let mut pairs: Vec<PiecePair> = Vec::with_capacity(ids.len() * self.cfg.pieces_per_sample);
        for (&id, s) in ids.iter().zip(&series) {
            for p in 0..self.cfg.pieces_per_sample {
                pairs.push(sample_piece_pair(
                    s,
                    &rel,
                    &mut streams.piece(id as u64, p as u64).rng(),
                )?);
            }
        }

        let mut g = Graph::new();
        let (loss, losses, (inter_scores, intra_scores)) = selftime_loss(&mut g, &self.model, &batch, &pairs, true)?;
        let stats = g.take_batch_stats();
        let grads = g.backward(loss)?;
        self.model.zero_grad();
        self.model.accumulate_grads(&grads)?;
        self.model.commit_batch_stats(&stats)?;
        self.optimizer.step_module(&mut self.model)?;
        self.model.zero_grad();

        self.counters.steps += 1;
        self.counters.inter_scores += inter_scores as u64;
        self.counters.intra_scores += intra_scores as u64;
        Ok(StepReport {
            losses,
            inter_scores,
            intra_scores,
        })
    }

    /// Shuffled pass over the data; a trailing batch of one is skipped since
    /// it has no negative partner.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.epochs_done;
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut RngStream::derive(self.cfg.seed, &[tag::SHUFFLE, epoch as u64]).rng());
        let mut sum = EpochLog::default();
        let mut steps = 0usize;
        for (step, ids) in order.chunks(self.cfg.batch_size).enumerate() {
            if ids.len() < 2 {
                continue;
            }
            let r = self.step(ids, epoch, step)?.losses;
            sum.loss_inter += r.loss_inter;
            sum.loss_intra += r.loss_intra;
            sum.loss_total += r.loss_total;
            sum.inter_acc += r.inter_accuracy;
            sum.class_acc += r.intra_accuracy;
            steps += 1;
        }
        let n = steps as f64;
        let row = EpochLog {
            epoch: epoch + 1,
            loss_inter: sum.loss_inter / n,
            loss_intra: sum.loss_intra / n,
            loss_total: sum.loss_total / n,
            inter_acc: sum.inter_acc / n,
            class_acc: sum.class_acc / n,
        };
        self.epochs_done += 1;
        self.log.push(row);
        Ok(row)
    }

    /// Trains until `epochs` epochs are complete in total.
    pub fn train_until(&mut self, epochs: usize, mut on_epoch: impl FnMut(&EpochLog)) -> Result<()> {
        while self.epochs_done < epochs {
            let row = self.run_epoch()?;
            on_epoch(&row);
        }
        Ok(())
    }

    /// Model, optimizer state and enough metadata to resume.
    pub fn checkpoint(&self) -> ModelCheckpoint {
        let mut ckpt = ModelCheckpoint::from_model(&self.model);
        ckpt.store_optimizer(&self.optimizer);
        ckpt.set_meta("epoch", self.epochs_done);
        ckpt.set_meta("seed", self.cfg.seed);
        ckpt.set_meta("K", self.cfg.views);
        ckpt.set_meta("piece_ratio", self.cfg.piece_ratio);
        ckpt.set_meta("series_len", self.data.series_len());
        ckpt.set_meta("dataset", &self.data.name);
        if self.data.labels().is_some() {
            ckpt.set_meta("label_count", self.data.num_classes());
        }
        ckpt.set_meta("epoch_log", epoch_log_csv(&self.log));
        ckpt
    }
}

/// Pretrains for `cfg.epochs` epochs from a fresh initialization.
pub fn pretrain(ds: &TimeSeriesDataset, cfg: &TrainConfig) -> Result<ModelCheckpoint> {
    pretrain_with_log(ds, cfg, |_| {})
}

pub fn pretrain_with_log(
    ds: &TimeSeriesDataset,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<ModelCheckpoint> {
    let mut trainer = Pretrainer::new(ds, cfg)?;
    trainer.train_until(cfg.epochs, on_epoch)?;
    Ok(trainer.checkpoint())
}
