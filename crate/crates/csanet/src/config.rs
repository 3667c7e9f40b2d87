//! Flat `key=value` configuration text.
//!
//! One setting per line, nested fields joined with dots
//! (`attention.heads=8`), lists comma-separated, `#` starts a comment.
//! Writing is canonical: every key in a fixed order, so
//! write → read → write reproduces the same bytes.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csanet_core::attention::TopKMode;
use csanet_core::data::{SplitSpec, SplitStrategy};
use csanet_core::model::{FusionMode, ModelConfig, Readout};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Synth,
    File,
}

/// Where trials come from. Synthetic sets take their dimensions from the
/// model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub kind: DataKind,
    pub path: PathBuf,
    pub per_class: usize,
    pub snr: f64,
    pub fs: f64,
    pub subjects: u32,
    pub sessions: u32,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DataKind::Synth,
            path: PathBuf::new(),
            per_class: 32,
            snr: 3.0,
            fs: 250.0,
            subjects: 1,
            sessions: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    /// Train and evaluate on the full set.
    None,
    SessionHoldout,
    KFold,
    Loso,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub kind: SplitKind,
    pub test_sessions: Vec<u32>,
    pub folds: usize,
    pub fold: usize,
    pub subject: u32,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { kind: SplitKind::None, test_sessions: vec![], folds: 5, fold: 0, subject: 1, seed: 0 }
    }
}

impl SplitConfig {
    pub fn spec(&self) -> Option<SplitSpec> {
        let strategy = match self.kind {
            SplitKind::None => return None,
            SplitKind::SessionHoldout => SplitStrategy::SessionHoldout { test_sessions: self.test_sessions.clone() },
            SplitKind::KFold => SplitStrategy::KFold { folds: self.folds, fold: self.fold },
            SplitKind::Loso => SplitStrategy::Loso { subject: self.subject },
        };
        Some(SplitSpec { strategy, seed: self.seed })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Per-channel z-scoring with statistics from the training part.
    pub normalize: bool,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 300, batch_size: 64, lr: 0.0009, seed: 0, normalize: false, eval_batch: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    /// Four-class synthetic set, 8 channels by 256 samples.
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            model: ModelConfig::new(8, 256, 4),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| Error::key(key, format!("cannot parse {v:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if v.is_empty() {
        return Ok(vec![]);
    }
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn parse_pair(key: &str, v: &str) -> Result<(usize, usize)> {
    match parse_list::<usize>(key, v)?[..] {
        [a, b] => Ok((a, b)),
        _ => Err(Error::key(key, format!("expected two comma-separated values, got {v:?}"))),
    }
}

fn choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T> {
    options.iter().find(|(n, _)| *n == v).map(|(_, t)| *t).ok_or_else(|| {
        Error::key(key, format!("unknown value {v:?}; expected one of {}", options.iter().map(|o| o.0).collect::<Vec<_>>().join(", ")))
    })
}

const FUSION: &[(&str, FusionMode)] = &[("main_auxiliary", FusionMode::MainAuxiliary), ("hierarchical", FusionMode::Hierarchical)];
const READOUT: &[(&str, Readout)] = &[("last_step", Readout::LastStep), ("flatten", Readout::Flatten)];
const TOPK_MODE: &[(&str, TopKMode)] = &[("denominator", TopKMode::Denominator), ("count", TopKMode::Count)];
const DATA_KIND: &[(&str, DataKind)] = &[("synth", DataKind::Synth), ("file", DataKind::File)];
const SPLIT_KIND: &[(&str, SplitKind)] = &[
    ("none", SplitKind::None),
    ("session_holdout", SplitKind::SessionHoldout),
    ("kfold", SplitKind::KFold),
    ("loso", SplitKind::Loso),
];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], v: T) -> &'static str {
    options.iter().find(|o| o.1 == v).expect("every variant is listed").0
}

fn model_entries(m: &ModelConfig) -> Vec<(&'static str, String)> {
    let a = &m.attention;
    vec![
        ("model.channels", m.channels.to_string()),
        ("model.time_steps", m.time_steps.to_string()),
        ("model.n_classes", m.n_classes.to_string()),
        ("model.temporal_kernels", list(&m.temporal_kernels)),
        ("model.temporal_filters", list(&m.temporal_filters)),
        ("model.depth_multiplier", m.depth_multiplier.to_string()),
        ("model.pools", list(&[m.pools.0, m.pools.1])),
        ("model.spa_filters", m.spa_filters.to_string()),
        ("model.spa_kernel", m.spa_kernel.to_string()),
        ("model.conv_dropout", m.conv_dropout.to_string()),
        ("model.fusion_mode", name_of(FUSION, m.fusion_mode).to_owned()),
        ("model.readout", name_of(READOUT, m.readout).to_owned()),
        ("model.tcn_enabled", m.tcn_enabled.to_string()),
        ("model.residual_enabled", m.residual_enabled.to_string()),
        ("model.bn_momentum", m.bn_momentum.to_string()),
        ("model.bn_eps", m.bn_eps.to_string()),
        ("sr.enabled", m.sr_enabled.to_string()),
        ("sr.segments", m.sr_segments.to_string()),
        ("attention.embed_dim", a.embed_dim.to_string()),
        ("attention.heads", a.heads.to_string()),
        ("attention.pool_kernels", list(&a.pool_kernels)),
        ("attention.pool_pads", list(&a.pool_pads)),
        ("attention.topk_enabled", a.topk_enabled.to_string()),
        ("attention.topk", list(&[a.topk.0, a.topk.1])),
        ("attention.topk_mode", name_of(TOPK_MODE, a.topk_mode).to_owned()),
        ("attention.multiscale_pool_enabled", a.multiscale_pool_enabled.to_string()),
        ("tcn.dilations", list(&m.tcn.dilations)),
        ("tcn.kernel", m.tcn.kernel.to_string()),
        ("tcn.filters", m.tcn.filters.to_string()),
        ("tcn.dropout", m.tcn.dropout.to_string()),
    ]
}

/// Applies one model key; `Ok(false)` when the key is not a model key.
fn set_model(m: &mut ModelConfig, key: &str, v: &str) -> Result<bool> {
    let a = &mut m.attention;
    match key {
        "model.channels" => m.channels = parse(key, v)?,
        "model.time_steps" => m.time_steps = parse(key, v)?,
        "model.n_classes" => m.n_classes = parse(key, v)?,
        "model.temporal_kernels" => m.temporal_kernels = parse_list(key, v)?,
        "model.temporal_filters" => m.temporal_filters = parse_list(key, v)?,
        "model.depth_multiplier" => m.depth_multiplier = parse(key, v)?,
        "model.pools" => m.pools = parse_pair(key, v)?,
        "model.spa_filters" => m.spa_filters = parse(key, v)?,
        "model.spa_kernel" => m.spa_kernel = parse(key, v)?,
        "model.conv_dropout" => m.conv_dropout = parse(key, v)?,
        "model.fusion_mode" => m.fusion_mode = choice(key, v, FUSION)?,
        "model.readout" => m.readout = choice(key, v, READOUT)?,
        "model.tcn_enabled" => m.tcn_enabled = parse(key, v)?,
        "model.residual_enabled" => m.residual_enabled = parse(key, v)?,
        "model.bn_momentum" => m.bn_momentum = parse(key, v)?,
        "model.bn_eps" => m.bn_eps = parse(key, v)?,
        "sr.enabled" => m.sr_enabled = parse(key, v)?,
        "sr.segments" => m.sr_segments = parse(key, v)?,
        "attention.embed_dim" => a.embed_dim = parse(key, v)?,
        "attention.heads" => a.heads = parse(key, v)?,
        "attention.pool_kernels" => a.pool_kernels = parse_list(key, v)?,
        "attention.pool_pads" => a.pool_pads = parse_list(key, v)?,
        "attention.topk_enabled" => a.topk_enabled = parse(key, v)?,
        "attention.topk" => a.topk = parse_pair(key, v)?,
        "attention.topk_mode" => a.topk_mode = choice(key, v, TOPK_MODE)?,
        "attention.multiscale_pool_enabled" => a.multiscale_pool_enabled = parse(key, v)?,
        "tcn.dilations" => m.tcn.dilations = parse_list(key, v)?,
        "tcn.kernel" => m.tcn.kernel = parse(key, v)?,
        "tcn.filters" => m.tcn.filters = parse(key, v)?,
        "tcn.dropout" => m.tcn.dropout = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Yields `(line number, key, value)` for every setting line.
fn lines(text: &str) -> impl Iterator<Item = Result<(usize, &str, &str)>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            return None;
        }
        Some(match line.split_once('=') {
            Some((k, v)) => Ok((i + 1, k.trim(), v.trim())),
            None => Err(Error::key(line, format!("line {}: expected key=value", i + 1))),
        })
    })
}

fn render(entries: &[(&'static str, String)]) -> String {
    let mut out = String::new();
    let mut section = "";
    for (k, v) in entries {
        let s = k.split('.').next().unwrap_or("");
        if s != section {
            if !section.is_empty() {
                out.push('\n');
            }
            section = s;
        }
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out
}

pub fn model_to_text(m: &ModelConfig) -> String {
    render(&model_entries(m))
}

/// Parses model keys over the defaults of [`ModelConfig::new`]; the three
/// dimension keys are required.
pub fn model_from_text(text: &str) -> Result<ModelConfig> {
    let mut m = ModelConfig::new(1, 1, 2);
    let mut dims = 0;
    for line in lines(text) {
        let (_, k, v) = line?;
        if !set_model(&mut m, k, v)? {
            return Err(Error::key(k, "unknown model key"));
        }
        dims += usize::from(matches!(k, "model.channels" | "model.time_steps" | "model.n_classes"));
    }
    if dims < 3 {
        return Err(Error::key("model.channels", "model.channels, model.time_steps and model.n_classes are required"));
    }
    m.validate()?;
    Ok(m)
}

impl RunConfig {
    fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.data;
        let s = &self.split;
        let t = &self.train;
        let mut e = vec![
            ("data.source", name_of(DATA_KIND, d.kind).to_owned()),
            ("data.path", d.path.display().to_string()),
            ("data.per_class", d.per_class.to_string()),
            ("data.snr", d.snr.to_string()),
            ("data.fs", d.fs.to_string()),
            ("data.subjects", d.subjects.to_string()),
            ("data.sessions", d.sessions.to_string()),
            ("data.seed", d.seed.to_string()),
        ];
        e.extend(model_entries(&self.model));
        e.extend([
            ("split.strategy", name_of(SPLIT_KIND, s.kind).to_owned()),
            ("split.test_sessions", list(&s.test_sessions)),
            ("split.folds", s.folds.to_string()),
            ("split.fold", s.fold.to_string()),
            ("split.subject", s.subject.to_string()),
            ("split.seed", s.seed.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.normalize", t.normalize.to_string()),
            ("train.eval_batch", t.eval_batch.to_string()),
        ]);
        e
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if set_model(&mut self.model, key, v)? {
            return Ok(());
        }
        let d = &mut self.data;
        let s = &mut self.split;
        let t = &mut self.train;
        match key {
            "data.source" => d.kind = choice(key, v, DATA_KIND)?,
            "data.path" => d.path = PathBuf::from(v),
            "data.per_class" => d.per_class = parse(key, v)?,
            "data.snr" => d.snr = parse(key, v)?,
            "data.fs" => d.fs = parse(key, v)?,
            "data.subjects" => d.subjects = parse(key, v)?,
            "data.sessions" => d.sessions = parse(key, v)?,
            "data.seed" => d.seed = parse(key, v)?,
            "split.strategy" => s.kind = choice(key, v, SPLIT_KIND)?,
            "split.test_sessions" => s.test_sessions = parse_list(key, v)?,
            "split.folds" => s.folds = parse(key, v)?,
            "split.fold" => s.fold = parse(key, v)?,
            "split.subject" => s.subject = parse(key, v)?,
            "split.seed" => s.seed = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            "train.normalize" => t.normalize = parse(key, v)?,
            "train.eval_batch" => t.eval_batch = parse(key, v)?,
            _ => return Err(Error::key(key, "unknown key")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!("# csanet run configuration\n\n{}", render(&self.entries()))
    }

    /// Parses `text` over the defaults. Later lines win.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for line in lines(text) {
            let (_, k, v) = line?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.train.batch_size < 2 {
            return Err(Error::key("train.batch_size", "must be at least 2"));
        }
        if self.train.eval_batch == 0 {
            return Err(Error::key("train.eval_batch", "must be positive"));
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(Error::key("train.lr", "must be positive and finite"));
        }
        if self.data.kind == DataKind::File && self.data.path.as_os_str().is_empty() {
            return Err(Error::key("data.path", "required when data.source=file"));
        }
        if self.data.snr.is_nan() || self.data.snr <= 0.0 {
            return Err(Error::key("data.snr", "must be positive (inf for noiseless)"));
        }
        if self.data.subjects == 0 || self.data.sessions == 0 {
            return Err(Error::key("data.subjects", "subjects and sessions must be positive"));
        }
        if self.split.kind == SplitKind::KFold && (self.split.folds < 2 || self.split.fold >= self.split.folds) {
            return Err(Error::key("split.fold", format!("fold {} of {} is invalid", self.split.fold, self.split.folds)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
