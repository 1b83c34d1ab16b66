mod args;

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use selftime::augment::{Augmentation, AugmentationPolicy};
use selftime::data::{
    embeddings_csv, load_checkpoint, load_matrix, load_ucr, load_ucr_pair, save_checkpoint, znormalize, MissingValues,
    TimeSeriesDataset, TrainConfig,
};
use selftime::pipeline::{
    baseline_random_weights, baseline_supervised, linear_eval, sweep, sweep_csv, transfer_eval, CellStatus, EvalReport,
    Pretrainer, EPOCH_LOG_HEADER,
};
use selftime::relation::label_histogram;
use selftime::rng::{tag, RngStream};
use selftime::{Error, ErrorClass, Result};

use args::*;

const SEED_ENV: &str = "SELFTIME_SEED";

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Pretrain(a) => pretrain(a),
        Command::EvalLinear(a) => evaluate(a, false),
        Command::Transfer(a) => evaluate(a, true),
        Command::Supervised(a) => baseline(a, true),
        Command::RandomBaseline(a) => baseline(a, false),
        Command::Sweep(a) => run_sweep(a),
        Command::Augment(a) => augment(a),
        Command::RelationLabels(a) => relation_labels(a),
        Command::Embed(a) => embed(a),
    }
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Defaults (with the dataset preset), then the config file, then flags.
fn resolve(args: &ConfigArgs, dataset: Option<&str>) -> Result<TrainConfig> {
    let mut base = dataset.map_or_else(TrainConfig::default, TrainConfig::for_dataset);
    if let Some(seed) = env_seed()? {
        base.seed = seed;
    }
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            TrainConfig::from_toml_over(&text, &base).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                other => other,
            })?
        }
        None => base,
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field.clone() {
                cfg.$field = v.into();
            }
        )*};
    }
    set!(
        seed,
        epochs,
        batch_size,
        lr_pretrain,
        lr_linear,
        views,
        classes,
        piece_ratio,
        eval_epochs,
        trials,
        splits,
        pieces_per_sample,
        stratified_pieces,
        pretrain_on,
        znormalize,
        keep_original_split,
        missing_values,
        jobs
    );
    if let Some(names) = &args.policy {
        cfg.policy = policy_from(names)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn policy_from(names: &[String]) -> Result<AugmentationPolicy> {
    let steps = names
        .iter()
        .map(|n| Augmentation::from_name(n.trim()))
        .collect::<Result<Vec<_>>>()?;
    AugmentationPolicy::new(steps)
}

fn load(d: &DataArgs, missing: MissingValues, normalize: bool) -> Result<TimeSeriesDataset> {
    let delim = d.delimiter.map(Into::into);
    let ds = match (&d.test, d.unlabeled) {
        (None, false) => load_ucr(&d.data, delim, missing)?,
        (Some(test), false) => load_ucr_pair(&d.data, test, delim, missing)?,
        (None, true) => load_matrix(&d.data, delim, missing)?,
        (Some(test), true) => load_matrix(&d.data, delim, missing)?.concat(&load_matrix(test, delim, missing)?)?,
    };
    Ok(if normalize { znormalize(&ds) } else { ds })
}

/// Loads the data and resolves the configuration against its preset.
fn load_with_config(d: &DataArgs, c: &ConfigArgs) -> Result<(TimeSeriesDataset, TrainConfig)> {
    let pre = resolve(c, None)?;
    let ds = load(d, pre.missing_values, pre.znormalize)?;
    let cfg = resolve(c, Some(&ds.name))?;
    Ok((ds, cfg))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

/// Writes `text` to `out`, or to standard output.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            let mut f = create(path)?;
            f.write_all(text.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| io_error(path, e))
        }
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| io_error(Path::new("<stdout>"), e)),
    }
}

fn describe(ds: &TimeSeriesDataset) -> String {
    let labels = match ds.labels() {
        Some(_) => format!(", {} classes", ds.num_classes()),
        None => String::new(),
    };
    format!(
        "`{}`: {} series of length {}{labels}",
        ds.name,
        ds.len(),
        ds.series_len()
    )
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let (ds, cfg) = load_with_config(&a.data, &a.config)?;
    let quiet = a.verbosity.quiet;
    let mut trainer = match &a.resume {
        Some(path) => Pretrainer::resume(&load_checkpoint(path)?, &ds, &cfg)?,
        None => Pretrainer::new(&ds, &cfg)?,
    };
    if !quiet {
        eprintln!(
            "pretraining on {}; C = {}, piece_ratio = {}, K = {}, seed = {}, epochs {}..{}",
            describe(&ds),
            cfg.classes,
            cfg.piece_ratio,
            cfg.views,
            cfg.seed,
            trainer.epochs_done() + 1,
            cfg.epochs
        );
    }
    let log_path = a.log.clone().unwrap_or_else(|| "<stdout>".into());
    let mut log: Box<dyn Write> = match &a.log {
        Some(path) => Box::new(create(path)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut header = format!("{EPOCH_LOG_HEADER}\n");
    for row in &trainer.log {
        let _ = writeln!(header, "{}", row.csv_row());
    }
    log.write_all(header.as_bytes()).map_err(|e| io_error(&log_path, e))?;
    while trainer.epochs_done() < cfg.epochs {
        let row = trainer.run_epoch()?;
        writeln!(log, "{}", row.csv_row())
            .and_then(|_| log.flush())
            .map_err(|e| io_error(&log_path, e))?;
        if !quiet {
            eprintln!(
                "epoch {}/{}: loss {:.4} (inter {:.4}, intra {:.4}), inter acc {:.3}, class acc {:.3}",
                row.epoch, cfg.epochs, row.loss_total, row.loss_inter, row.loss_intra, row.inter_acc, row.class_acc
            );
        }
        if a.checkpoint_every.is_some_and(|n| n > 0 && row.epoch % n == 0) {
            save_checkpoint(&trainer.checkpoint(), &a.out)?;
        }
    }
    save_checkpoint(&trainer.checkpoint(), &a.out)?;
    if !quiet {
        eprintln!("checkpoint written to {}", a.out.display());
    }
    Ok(())
}

fn report(r: &EvalReport, out: Option<&Path>, what: &str, quiet: bool) -> Result<()> {
    emit(out, &r.to_csv())?;
    if !quiet {
        eprintln!("{what}: {}", r.summary());
    }
    Ok(())
}

fn evaluate(a: EvalArgs, transfer: bool) -> Result<()> {
    let (ds, cfg) = load_with_config(&a.data, &a.config)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    if !a.verbosity.quiet {
        eprintln!(
            "evaluating {} on {}; {} splits x {} trials",
            a.checkpoint.display(),
            describe(&ds),
            cfg.splits,
            cfg.trials
        );
    }
    let (r, what) = if transfer {
        (transfer_eval(&ckpt, &ds, &cfg)?, "transfer")
    } else {
        (linear_eval(&ckpt, &ds, &cfg, cfg.trials)?, "linear evaluation")
    };
    report(&r, a.out.as_deref(), what, a.verbosity.quiet)
}

fn baseline(a: BaselineArgs, supervised: bool) -> Result<()> {
    let (ds, cfg) = load_with_config(&a.data, &a.config)?;
    if !a.verbosity.quiet {
        eprintln!(
            "{} baseline on {}",
            if supervised { "supervised" } else { "random-weights" },
            describe(&ds)
        );
    }
    let (r, what) = if supervised {
        (baseline_supervised(&ds, &cfg)?, "supervised")
    } else {
        (baseline_random_weights(&ds, &cfg)?, "random weights")
    };
    report(&r, a.out.as_deref(), what, a.verbosity.quiet)
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let (ds, cfg) = load_with_config(&a.data, &a.config)?;
    let labeled = match &a.eval_data {
        Some(path) => {
            let d = DataArgs {
                data: path.clone(),
                test: None,
                unlabeled: false,
                delimiter: a.data.delimiter,
            };
            load(&d, cfg.missing_values, cfg.znormalize)?
        }
        None => ds.clone(),
    };
    if !a.verbosity.quiet {
        eprintln!(
            "sweeping {} x {} cells; pretraining on {}",
            a.c_grid.len(),
            a.ratio_grid.len(),
            describe(&ds)
        );
    }
    let rows = sweep(&ds, &labeled, &a.c_grid, &a.ratio_grid, &cfg)?;
    emit(a.out.as_deref(), &sweep_csv(&rows))?;
    if !a.verbosity.quiet {
        for r in &rows {
            if let CellStatus::Skipped(why) = &r.status {
                eprintln!("skipped C = {}, piece_ratio = {}: {why}", r.classes, r.piece_ratio);
            }
        }
    }
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<()> {
    let policy = policy_from(&a.op)?;
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let ds = load(&a.data, MissingValues::Interpolate, false)?;
    let rows: Vec<usize> = match a.row {
        Some(r) if r < ds.len() => vec![r],
        Some(r) => {
            return Err(Error::InvalidArgument(format!(
                "row {r} out of range for {} series",
                ds.len()
            )))
        }
        None => (0..ds.len()).collect(),
    };
    let mut out = String::from("series,t,original,transformed\n");
    for r in rows {
        let x = ds.series(r);
        let y = policy.apply(x, RngStream::derive(seed, &[tag::CLI, r as u64]));
        for (t, (a, b)) in x.iter().zip(&y).enumerate() {
            let _ = writeln!(out, "{r},{t},{a},{b}");
        }
    }
    emit(a.out.as_deref(), &out)
}

fn relation_labels(a: RelationArgs) -> Result<()> {
    let counts = label_histogram(a.length, a.classes, a.piece)?;
    let total: u64 = counts.iter().sum();
    let mut out = String::from("label,count,fraction\n");
    for (label, c) in counts.iter().enumerate() {
        let _ = writeln!(out, "{label},{c},{}", *c as f64 / total as f64);
    }
    emit(a.out.as_deref(), &out)
}

fn embed(a: EmbedArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let ds = load(&a.data, MissingValues::Interpolate, a.znormalize.unwrap_or(true))?;
    emit(a.out.as_deref(), &embeddings_csv(&ckpt, &ds)?)
}
