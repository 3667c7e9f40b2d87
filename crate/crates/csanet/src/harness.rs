//! Loading data for a run, training with a per-epoch log, and evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use csanet_core::data::{split, ChannelStats, TrialSet};
use csanet_core::metrics::{evaluate, EvalReport};
use csanet_core::model::CsanetModel;
use csanet_core::train::{EpochStats, Trainer};
use csanet_core::Scalar;

use crate::config::{DataKind, RunConfig};
use crate::error::{Error, Result};
use crate::synth::{generate, SynthSpec};
use crate::{checkpoint, eegd, report};

pub const LOG_HEADER: &str = "epoch,train_loss,train_acc,eval_acc,effective_batch";
pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "model.csan";
pub const CONFIG_FILE: &str = "config.txt";

/// Trials described by `run.data`.
pub fn load_data(run: &RunConfig) -> Result<TrialSet> {
    let m = &run.model;
    let set = match run.data.kind {
        DataKind::Synth => generate(&SynthSpec {
            per_class: run.data.per_class,
            channels: m.channels,
            time_steps: m.time_steps,
            classes: m.n_classes,
            snr: run.data.snr,
            fs: run.data.fs,
            subjects: run.data.subjects,
            sessions: run.data.sessions,
            seed: run.data.seed,
        })?,
        DataKind::File => eegd::read(&run.data.path)?,
    };
    if (set.channels, set.time_steps, set.n_classes) != (m.channels, m.time_steps, m.n_classes) {
        return Err(Error::Core(csanet_core::Error::Config(format!(
            "data is {}x{} with {} classes but the model expects {}x{} with {}",
            set.channels, set.time_steps, set.n_classes, m.channels, m.time_steps, m.n_classes
        ))));
    }
    Ok(set)
}

/// `(train, eval)` parts; without a split both are the full set. With
/// normalization both are standardized by training statistics.
pub fn prepare(run: &RunConfig, set: &TrialSet) -> Result<(TrialSet, TrialSet)> {
    let (mut train, mut test) = match run.split.spec() {
        Some(spec) => split(set, &spec)?,
        None => (set.clone(), set.clone()),
    };
    if run.train.normalize {
        let stats = ChannelStats::fit(&train)?;
        stats.apply(&mut train);
        stats.apply(&mut test);
    }
    Ok((train, test))
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub stats: EpochStats,
    pub eval_acc: Option<f64>,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let s = &self.stats;
        let eval = self.eval_acc.map(|a| a.to_string()).unwrap_or_default();
        format!("{},{},{},{},{}", s.epoch, s.loss, s.acc, eval, s.effective_batch)
    }
}

/// Epoch loop over prepared data. `on_epoch` sees every record and may stop
/// the run early by returning `false`.
pub fn train_loop<T: Scalar>(
    trainer: &mut Trainer<T>,
    train: &TrialSet,
    eval: Option<&TrialSet>,
    epochs: usize,
    eval_batch: usize,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<bool>,
) -> Result<Vec<EpochRecord>> {
    let mut log = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let stats = trainer.train_epoch(train)?;
        let eval_acc = match eval {
            Some(set) if !set.is_empty() => Some(evaluate(&trainer.model, set, eval_batch)?.acc),
            _ => None,
        };
        let rec = EpochRecord { stats, eval_acc };
        let go_on = on_epoch(&rec)?;
        log.push(rec);
        if !go_on {
            break;
        }
    }
    Ok(log)
}

pub struct RunOutput<T> {
    pub model: CsanetModel<T>,
    pub log: Vec<EpochRecord>,
    pub dir: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains per `run`, writing the resolved configuration, a per-epoch CSV
/// log (flushed after every epoch) and the final checkpoint into `dir`.
pub fn run_training<T: Scalar>(run: &RunConfig, dir: &Path, mut progress: impl FnMut(&EpochRecord)) -> Result<RunOutput<T>> {
    run.validate()?;
    let set = load_data(run)?;
    let (train, test) = prepare(run, &set)?;
    if train.is_empty() {
        return Err(Error::Core(csanet_core::Error::Data("training split is empty".into())));
    }
    let mut trainer = Trainer::<T>::new(run.model.clone(), run.train.seed, run.train.lr, run.train.batch_size)?;
    create_dir(dir)?;
    std::fs::write(dir.join(CONFIG_FILE), run.to_text()).map_err(|e| Error::io(dir.join(CONFIG_FILE), e))?;
    let log_path = dir.join(LOG_FILE);
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let io = |e| Error::io(&log_path, e);
    writeln!(log_file, "{LOG_HEADER}").map_err(io)?;
    log_file.flush().map_err(io)?;
    let eval = run.split.spec().map(|_| &test);
    let log = train_loop(&mut trainer, &train, eval, run.train.epochs, run.train.eval_batch, |rec| {
        writeln!(log_file, "{}", rec.csv_row()).map_err(io)?;
        log_file.flush().map_err(io)?;
        progress(rec);
        Ok(true)
    })?;
    checkpoint::save(&trainer.model, &dir.join(CHECKPOINT_FILE))?;
    Ok(RunOutput { model: trainer.model, log, dir: dir.to_path_buf() })
}

/// Which part of the split to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPart {
    Train,
    Test,
}

/// Evaluates a checkpoint on the configured data and writes `report.csv`
/// and `report.json` into `dir`. Nothing is written if loading fails.
pub fn run_eval<T: Scalar>(ckpt: &Path, run: &RunConfig, part: EvalPart, dir: &Path) -> Result<EvalReport> {
    let model = checkpoint::load::<T>(ckpt)?;
    if model.config() != &run.model {
        let mut run = run.clone();
        run.model = model.config().clone();
        return eval_model(&model, &run, part, dir);
    }
    eval_model(&model, run, part, dir)
}

fn eval_model<T: Scalar>(model: &CsanetModel<T>, run: &RunConfig, part: EvalPart, dir: &Path) -> Result<EvalReport> {
    let set = load_data(run)?;
    let (train, test) = prepare(run, &set)?;
    let target = if part == EvalPart::Train { &train } else { &test };
    let r = evaluate(model, target, run.train.eval_batch)?;
    create_dir(dir)?;
    crate::bytes::write_atomic(&dir.join("report.csv"), report::to_csv(&r).as_bytes())?;
    crate::bytes::write_atomic(&dir.join("report.json"), report::to_json(&r).as_bytes())?;
    Ok(r)
}
