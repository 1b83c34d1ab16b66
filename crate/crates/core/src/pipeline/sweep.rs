use std::fmt::Write as _;

use rayon::prelude::*;

use super::{check_piece_length, linear_eval, with_jobs, EvalReport, Pretrainer};
use crate::data::{TimeSeriesDataset, TrainConfig};
use crate::error::{invalid, Result};

pub const SWEEP_HEADER: &str = "C,piece_ratio,piece_len,status,class_acc,linear_acc_mean,linear_acc_std";

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Done,
    /// The setting cannot be trained; the reason is kept for the report.
    Skipped(String),
}

/// One `(C, piece_ratio)` grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub classes: usize,
    pub piece_ratio: f64,
    pub piece_len: usize,
    pub status: CellStatus,
    /// Intra-temporal training accuracy of the final epoch.
    pub class_acc: Option<f64>,
    pub linear: Option<EvalReport>,
}

/// Pretrains on `unlabeled` and linearly evaluates on `labeled` for every
/// cell of `c_grid × ratio_grid` (row-major in `c_grid`). Cells whose
/// pieces are too short for the encoder are reported as skipped.
pub fn sweep(
    unlabeled: &TimeSeriesDataset,
    labeled: &TimeSeriesDataset,
    c_grid: &[usize],
    ratio_grid: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if c_grid.is_empty() || ratio_grid.is_empty() {
        return Err(invalid!("sweep grids must not be empty"));
    }
    labeled.require_labels("linear evaluation")?;
    let cells: Vec<(usize, f64)> = c_grid
        .iter()
        .flat_map(|&c| ratio_grid.iter().map(move |&r| (c, r)))
        .collect();
    with_jobs(cfg.jobs, || {
        cells
            .par_iter()
            .map(|&(classes, piece_ratio)| run_cell(unlabeled, labeled, classes, piece_ratio, cfg))
            .collect()
    })?
}

fn run_cell(
    unlabeled: &TimeSeriesDataset,
    labeled: &TimeSeriesDataset,
    classes: usize,
    piece_ratio: f64,
    base: &TrainConfig,
) -> Result<SweepRow> {
    let cfg = TrainConfig {
        classes,
        piece_ratio,
        ..base.clone()
    };
    let piece_len = (piece_ratio * unlabeled.series_len() as f64).round().max(0.0) as usize;
    let mut row = SweepRow {
        classes,
        piece_ratio,
        piece_len,
        status: CellStatus::Done,
        class_acc: None,
        linear: None,
    };
    if let Err(e) = cfg
        .validate()
        .and_then(|_| check_piece_length(unlabeled.series_len(), &cfg))
    {
        row.status = CellStatus::Skipped(e.to_string());
        return Ok(row);
    }
    let mut trainer = Pretrainer::new(unlabeled, &cfg)?;
    trainer.train_until(cfg.epochs, |_| {})?;
    row.class_acc = trainer.log.last().map(|l| l.class_acc);
    row.linear = Some(linear_eval(&trainer.checkpoint(), labeled, &cfg, cfg.trials)?);
    Ok(row)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let status = match r.status {
            CellStatus::Done => "ok",
            CellStatus::Skipped(_) => "skipped",
        };
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{status},{},{},{}",
            r.classes,
            r.piece_ratio,
            r.piece_len,
            opt(r.class_acc),
            opt(r.linear.as_ref().map(|l| l.mean)),
            opt(r.linear.as_ref().map(|l| l.std)),
        );
    }
    out
}
