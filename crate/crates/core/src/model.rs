//! The four-branch network.
//!
//! Each branch runs a temporal convolution with its own kernel length, a
//! depthwise convolution spanning all electrodes, pooling, and a refinement
//! convolution, giving `Z_i: [B, U, T0]`. The fusion stage attends between
//! branches, a dilated causal TCN summarizes every fused branch, and a
//! linear layer classifies the concatenated summaries.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{self, AttentionConfig, AttentionParams};
use crate::autodiff::{BatchStats, PoolSpec, Tape, Var};
use crate::error::{cfg_err, dim_err, Error, Result};
use crate::kernels::Conv2dSpec;
use crate::param::{uniform_fan_in, ParamId, ParamStore};
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Branch 1 self-attends; branches 2.. query branch 1's pooled features.
    MainAuxiliary,
    /// Branch 1 queries branch 2, whose fused output queries branch 3, and so on.
    Hierarchical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    LastStep,
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnConfig {
    pub dilations: Vec<usize>,
    pub kernel: usize,
    pub filters: usize,
    pub dropout: f64,
}

impl Default for TcnConfig {
    fn default() -> Self {
        TcnConfig { dilations: vec![1, 2], kernel: 4, filters: 32, dropout: 0.3 }
    }
}

/// Every architectural hyperparameter, including the ablation switches.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub time_steps: usize,
    pub n_classes: usize,
    pub temporal_kernels: Vec<usize>,
    pub temporal_filters: Vec<usize>,
    pub depth_multiplier: usize,
    pub pools: (usize, usize),
    pub spa_filters: usize,
    pub spa_kernel: usize,
    pub conv_dropout: f64,
    pub attention: AttentionConfig,
    pub tcn: TcnConfig,
    pub fusion_mode: FusionMode,
    pub readout: Readout,
    pub sr_enabled: bool,
    pub sr_segments: usize,
    pub tcn_enabled: bool,
    pub residual_enabled: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelConfig {
    /// Default hyperparameters for `channels × time_steps` trials with
    /// `n_classes` labels.
    pub fn new(channels: usize, time_steps: usize, n_classes: usize) -> Self {
        ModelConfig {
            channels,
            time_steps,
            n_classes,
            temporal_kernels: vec![64, 32, 16, 8],
            temporal_filters: vec![16, 16, 16, 16],
            depth_multiplier: 2,
            pools: (8, 7),
            spa_filters: 32,
            spa_kernel: 32,
            conv_dropout: 0.5,
            attention: AttentionConfig::default(),
            tcn: TcnConfig::default(),
            fusion_mode: FusionMode::MainAuxiliary,
            readout: Readout::LastStep,
            sr_enabled: true,
            sr_segments: 8,
            tcn_enabled: true,
            residual_enabled: true,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// 22 electrodes, 4 s at 250 Hz, four motor-imagery classes.
    pub fn bcic_iv_2a() -> Self {
        Self::new(22, 1000, 4)
    }

    /// 3 bipolar electrodes, 4 s at 250 Hz, two classes.
    pub fn bcic_iv_2b() -> Self {
        Self::new(3, 1000, 2)
    }

    /// 44 motor-cortex electrodes, 4 s at 250 Hz, four classes.
    pub fn hgd() -> Self {
        Self::new(44, 1000, 4)
    }

    /// 62 electrodes, 1 s at 200 Hz, three emotions; shorter pools and no
    /// augmentation.
    pub fn seed_emotion() -> Self {
        let mut c = Self::new(62, 200, 3);
        c.pools = (4, 4);
        c.sr_enabled = false;
        c
    }

    /// 17 electrodes, 8 s at 200 Hz, alert/fatigued.
    pub fn seed_vig() -> Self {
        Self::new(17, 1600, 2)
    }

    pub fn n_branches(&self) -> usize {
        self.temporal_kernels.len()
    }

    /// Feature width `U_i = F_i · D` of branch `i` (0-based).
    pub fn branch_width(&self, i: usize) -> usize {
        self.temporal_filters[i] * self.depth_multiplier
    }

    /// Length after the first pooling stage.
    pub fn pooled_len(&self) -> usize {
        self.time_steps / self.pools.0
    }

    /// Token count `T0 = floor(floor(T / P1) / P2)`.
    pub fn t0(&self) -> usize {
        self.pooled_len() / self.pools.1
    }

    pub fn embed_dim(&self) -> usize {
        self.spa_filters
    }

    /// Width of one branch's summary vector after the TCN readout.
    pub fn readout_width(&self) -> usize {
        let ch = if self.tcn_enabled { self.tcn.filters } else { self.embed_dim() };
        match self.readout {
            Readout::LastStep => ch,
            Readout::Flatten => ch * self.t0(),
        }
    }

    pub fn classifier_width(&self) -> usize {
        self.readout_width() * self.n_branches()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.time_steps == 0 {
            return Err(cfg_err!("channels and time_steps must be positive"));
        }
        if self.n_classes < 2 {
            return Err(cfg_err!("need at least two classes, got {}", self.n_classes));
        }
        if self.temporal_kernels.is_empty() || self.temporal_kernels.len() != self.temporal_filters.len() {
            return Err(cfg_err!(
                "{} temporal kernels but {} filter counts",
                self.temporal_kernels.len(),
                self.temporal_filters.len()
            ));
        }
        if self.temporal_kernels.iter().chain(&self.temporal_filters).any(|&v| v == 0) {
            return Err(cfg_err!("temporal kernels and filters must be positive"));
        }
        if self.depth_multiplier == 0 || self.spa_filters == 0 || self.spa_kernel == 0 {
            return Err(cfg_err!("depth multiplier and refinement conv sizes must be positive"));
        }
        if self.pools.0 == 0 || self.pools.1 == 0 || self.time_steps < self.pools.0 * self.pools.1 {
            return Err(cfg_err!(
                "time_steps {} too short for pools {:?}",
                self.time_steps,
                self.pools
            ));
        }
        for i in 0..self.n_branches() {
            if self.branch_width(i) != self.spa_filters {
                return Err(cfg_err!(
                    "branch {} width F*D = {} must equal spa_filters {} for the fusion residual",
                    i + 1,
                    self.branch_width(i),
                    self.spa_filters
                ));
            }
        }
        if self.attention.embed_dim != self.embed_dim() {
            return Err(cfg_err!(
                "attention.embed_dim {} must equal spa_filters {}",
                self.attention.embed_dim,
                self.embed_dim()
            ));
        }
        self.attention.validate()?;
        if self.fusion_mode == FusionMode::Hierarchical && self.n_branches() != 4 {
            return Err(cfg_err!("hierarchical fusion requires exactly 4 branches, got {}", self.n_branches()));
        }
        if self.tcn.dilations.is_empty() || self.tcn.dilations.contains(&0) || self.tcn.kernel == 0 || self.tcn.filters == 0 {
            return Err(cfg_err!("tcn dilations, kernel and filters must be positive"));
        }
        for p in [self.conv_dropout, self.tcn.dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(cfg_err!("dropout probability {} outside [0, 1)", p));
            }
        }
        if self.sr_segments == 0 || (self.sr_enabled && self.time_steps < self.sr_segments) {
            return Err(cfg_err!("sr_segments {} invalid for {} time steps", self.sr_segments, self.time_steps));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_momentum == 0.0 || self.bn_eps.is_nan() || self.bn_eps <= 0.0 {
            return Err(cfg_err!("batch-norm momentum must be in (0, 1] and eps positive"));
        }
        Ok(())
    }
}

/// Ablation variants: `Net1` is the full model, the others remove one or two
/// components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationNet {
    Net1,
    Net2,
    Net3,
    Net4,
    Net5,
    Net6,
    Net7,
}

impl AblationNet {
    pub const ALL: [AblationNet; 7] = [
        AblationNet::Net1,
        AblationNet::Net2,
        AblationNet::Net3,
        AblationNet::Net4,
        AblationNet::Net5,
        AblationNet::Net6,
        AblationNet::Net7,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        let n = s.trim().trim_start_matches("Net").trim_start_matches("net");
        match n {
            "1" => Ok(Self::Net1),
            "2" => Ok(Self::Net2),
            "3" => Ok(Self::Net3),
            "4" => Ok(Self::Net4),
            "5" => Ok(Self::Net5),
            "6" => Ok(Self::Net6),
            "7" => Ok(Self::Net7),
            _ => Err(cfg_err!("unknown ablation network {s:?}; expected Net1..Net7")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Net1 => "Net1",
            Self::Net2 => "Net2",
            Self::Net3 => "Net3",
            Self::Net4 => "Net4",
            Self::Net5 => "Net5",
            Self::Net6 => "Net6",
            Self::Net7 => "Net7",
        }
    }

    /// `(sr, tcn, residual, top-k, avg-pool)`.
    pub fn toggles(self) -> (bool, bool, bool, bool, bool) {
        match self {
            Self::Net1 => (true, true, true, true, true),
            Self::Net2 => (false, true, true, true, true),
            Self::Net3 => (true, false, true, true, true),
            Self::Net4 => (true, true, false, true, true),
            Self::Net5 => (true, true, true, false, false),
            Self::Net6 => (true, true, true, true, false),
            Self::Net7 => (true, true, true, false, true),
        }
    }

    /// Applies this variant's switches to `base`; other fields are kept.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let (sr, tcn, residual, topk, pool) = self.toggles();
        let mut c = base.clone();
        c.sr_enabled = sr;
        c.tcn_enabled = tcn;
        c.residual_enabled = residual;
        c.attention.topk_enabled = topk;
        c.attention.multiscale_pool_enabled = pool;
        c
    }
}

/// Analytic trainable-parameter counts per named group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCounts {
    pub groups: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamCounts {
    pub fn get(&self, group: &str) -> Option<usize> {
        self.groups.iter().find(|(g, _)| g == group).map(|(_, n)| *n)
    }
}

fn branch_is_sparse(cfg: &ModelConfig, i: usize) -> bool {
    i > 0 && cfg.attention.topk_enabled
}

/// Exact trainable-parameter counts derived from the configuration alone.
///
/// Groups are `branch{i}`, `fusion{i}`, `tcn{i}` (omitted when the TCN is
/// disabled) and `classifier`, with 1-based branch indices.
pub fn count_parameters(cfg: &ModelConfig) -> ParamCounts {
    let mut groups = Vec::new();
    let d = cfg.depth_multiplier;
    let u = cfg.embed_dim();
    for (i, (&k, &f)) in cfg.temporal_kernels.iter().zip(&cfg.temporal_filters).enumerate() {
        let fd = f * d;
        let branch = f * k + 2 * f + fd * cfg.channels + 2 * fd + cfg.spa_filters * fd * cfg.spa_kernel + 2 * cfg.spa_filters;
        groups.push((format!("branch{}", i + 1), branch));
    }
    for i in 0..cfg.n_branches() {
        groups.push((format!("fusion{}", i + 1), AttentionParams::count(u, branch_is_sparse(cfg, i))));
    }
    if cfg.tcn_enabled {
        let ft = cfg.tcn.filters;
        let kt = cfg.tcn.kernel;
        for i in 0..cfg.n_branches() {
            let mut n = 0;
            let mut cin = u;
            for _ in &cfg.tcn.dilations {
                n += ft * cin * kt + ft + 2 * ft + ft * ft * kt + ft + 2 * ft;
                if cin != ft {
                    n += ft * cin + ft;
                }
                cin = ft;
            }
            groups.push((format!("tcn{}", i + 1), n));
        }
    }
    groups.push((String::from("classifier"), cfg.classifier_width() * cfg.n_classes + cfg.n_classes));
    let total = groups.iter().map(|(_, n)| n).sum();
    ParamCounts { groups, total }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BnParams {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct BranchParams {
    temporal: ParamId,
    bn1: BnParams,
    depthwise: ParamId,
    bn2: BnParams,
    spatial: ParamId,
    bn3: BnParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TcnBlockParams {
    conv1: (ParamId, ParamId),
    bn1: BnParams,
    conv2: (ParamId, ParamId),
    bn2: BnParams,
    skip: Option<(ParamId, ParamId)>,
    dilation: usize,
}

/// Whether a forward pass trains (batch statistics, dropout) or evaluates.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut StreamRng),
}

/// Per-pass state: the mode plus batch statistics waiting to be folded into
/// the running averages by [`CsanetModel::commit`].
pub struct ForwardCtx<'a, T> {
    mode: Mode<'a>,
    pending: Vec<(BnParams, BatchStats<T>)>,
}

impl<'a, T> ForwardCtx<'a, T> {
    pub fn eval() -> Self {
        ForwardCtx { mode: Mode::Eval, pending: Vec::new() }
    }

    pub fn train(rng: &'a mut StreamRng) -> Self {
        ForwardCtx { mode: Mode::Train(rng), pending: Vec::new() }
    }

    pub fn training(&self) -> bool {
        matches!(self.mode, Mode::Train(_))
    }
}

/// The assembled network and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CsanetModel<T> {
    cfg: ModelConfig,
    params: ParamStore<T>,
    branches: Vec<BranchParams>,
    fusion: Vec<AttentionParams>,
    tcns: Vec<Vec<TcnBlockParams>>,
    classifier: (ParamId, ParamId),
}

fn register_bn<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, ch: usize) -> Result<BnParams> {
    Ok(BnParams {
        gamma: store.add(&format!("{prefix}.gamma"), Tensor::full(&[ch], T::one()))?,
        beta: store.add(&format!("{prefix}.beta"), Tensor::zeros(&[ch]))?,
        mean: store.add_buffer(&format!("{prefix}.running_mean"), Tensor::zeros(&[ch]))?,
        var: store.add_buffer(&format!("{prefix}.running_var"), Tensor::full(&[ch], T::one()))?,
    })
}

impl<T: Scalar> CsanetModel<T> {
    /// Builds the network with freshly initialized weights drawn from `rng`.
    pub fn new(cfg: ModelConfig, rng: &mut StreamRng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let c = cfg.channels;
        let d = cfg.depth_multiplier;
        let mut branches = Vec::new();
        for (i, (&k, &f)) in cfg.temporal_kernels.iter().zip(&cfg.temporal_filters).enumerate() {
            let p = format!("branch{}", i + 1);
            let fd = f * d;
            let temporal = store.add(&format!("{p}.temporal_conv.weight"), uniform_fan_in(&[f, 1, 1, k], k, rng))?;
            let bn1 = register_bn(&mut store, &format!("{p}.bn1"), f)?;
            let depthwise = store.add(&format!("{p}.depthwise_conv.weight"), uniform_fan_in(&[fd, 1, c, 1], c, rng))?;
            let bn2 = register_bn(&mut store, &format!("{p}.bn2"), fd)?;
            let spatial = store.add(
                &format!("{p}.spatial_conv.weight"),
                uniform_fan_in(&[cfg.spa_filters, fd, 1, cfg.spa_kernel], fd * cfg.spa_kernel, rng),
            )?;
            let bn3 = register_bn(&mut store, &format!("{p}.bn3"), cfg.spa_filters)?;
            branches.push(BranchParams { temporal, bn1, depthwise, bn2, spatial, bn3 });
        }
        let mut fusion = Vec::new();
        for i in 0..cfg.n_branches() {
            let prefix = format!("fusion{}", i + 1);
            fusion.push(AttentionParams::register(&mut store, &prefix, &cfg.attention, branch_is_sparse(&cfg, i), rng)?);
        }
        let mut tcns = Vec::new();
        if cfg.tcn_enabled {
            let ft = cfg.tcn.filters;
            let kt = cfg.tcn.kernel;
            for i in 0..cfg.n_branches() {
                let mut blocks = Vec::new();
                let mut cin = cfg.embed_dim();
                for (j, &dil) in cfg.tcn.dilations.iter().enumerate() {
                    let p = format!("tcn{}.block{}", i + 1, j + 1);
                    let conv1 = (
                        store.add(&format!("{p}.conv1.weight"), uniform_fan_in(&[ft, cin, 1, kt], cin * kt, rng))?,
                        store.add(&format!("{p}.conv1.bias"), Tensor::zeros(&[ft]))?,
                    );
                    let bn1 = register_bn(&mut store, &format!("{p}.bn1"), ft)?;
                    let conv2 = (
                        store.add(&format!("{p}.conv2.weight"), uniform_fan_in(&[ft, ft, 1, kt], ft * kt, rng))?,
                        store.add(&format!("{p}.conv2.bias"), Tensor::zeros(&[ft]))?,
                    );
                    let bn2 = register_bn(&mut store, &format!("{p}.bn2"), ft)?;
                    let skip = if cin != ft {
                        Some((
                            store.add(&format!("{p}.skip.weight"), uniform_fan_in(&[ft, cin, 1, 1], cin, rng))?,
                            store.add(&format!("{p}.skip.bias"), Tensor::zeros(&[ft]))?,
                        ))
                    } else {
                        None
                    };
                    blocks.push(TcnBlockParams { conv1, bn1, conv2, bn2, skip, dilation: dil });
                    cin = ft;
                }
                tcns.push(blocks);
            }
        }
        let width = cfg.classifier_width();
        let classifier = (
            store.add("classifier.weight", uniform_fan_in(&[cfg.n_classes, width], width, rng))?,
            store.add("classifier.bias", Tensor::zeros(&[cfg.n_classes]))?,
        );
        Ok(CsanetModel { cfg, params: store, branches, fusion, tcns, classifier })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Replaces the value of the named parameter or buffer.
    pub fn load_named(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.params.find(name).ok_or_else(|| Error::Data(format!("unknown parameter {name}")))?;
        let p = self.params.get_mut(id);
        if p.tensor.shape() != value.shape() {
            return Err(dim_err!("parameter {name} has shape {:?}, got {:?}", p.tensor.shape(), value.shape()));
        }
        p.tensor.data_mut().copy_from_slice(value.data());
        Ok(())
    }

    fn bn(&self, tape: &mut Tape<T>, x: Var, bn: BnParams, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let gamma = tape.param(&self.params, bn.gamma);
        let beta = tape.param(&self.params, bn.beta);
        let eps = T::from_f64_lossy(self.cfg.bn_eps);
        if ctx.training() {
            let (y, stats) = tape.batch_norm(x, gamma, beta, None, eps)?;
            ctx.pending.push((bn, stats.expect("training batch norm returns statistics")));
            Ok(y)
        } else {
            let mean = self.params.get(bn.mean).tensor.data();
            let var = self.params.get(bn.var).tensor.data();
            Ok(tape.batch_norm(x, gamma, beta, Some((mean, var)), eps)?.0)
        }
    }

    fn dropout(&self, tape: &mut Tape<T>, x: Var, p: f64, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        match &mut ctx.mode {
            Mode::Eval => Ok(x),
            Mode::Train(rng) => tape.dropout(x, p, true, &mut **rng),
        }
    }

    fn check_input(&self, tape: &Tape<T>, x: Var) -> Result<usize> {
        let s = tape.shape(x);
        if s.len() != 4 || s[1] != 1 || s[2] != self.cfg.channels || s[3] != self.cfg.time_steps {
            return Err(dim_err!(
                "model expects [B, 1, {}, {}], got {:?}",
                self.cfg.channels,
                self.cfg.time_steps,
                s
            ));
        }
        Ok(s[0])
    }

    fn branch_params(&self, branch: usize) -> Result<&BranchParams> {
        self.branches
            .get(branch)
            .ok_or_else(|| cfg_err!("branch index {} outside 1..={}", branch + 1, self.branches.len()))
    }

    /// Output of branch `branch`'s temporal convolution, `[B, F, C, T]`,
    /// before normalization.
    pub fn temporal_features(&self, tape: &mut Tape<T>, x: Var, branch: usize) -> Result<Var> {
        self.check_input(tape, x)?;
        let bp = self.branch_params(branch)?;
        let k = self.cfg.temporal_kernels[branch];
        let left = (k - 1) / 2;
        let padded = tape.pad_last(x, left, k - 1 - left)?;
        let w = tape.param(&self.params, bp.temporal);
        tape.conv2d(padded, w, None, Conv2dSpec::default())
    }

    /// `Z_i: [B, U, T0]` for 0-based `branch`.
    pub fn branch_forward(&self, tape: &mut Tape<T>, x: Var, branch: usize, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let batch = self.check_input(tape, x)?;
        let bp = self.branch_params(branch)?.clone();
        let f = self.cfg.temporal_filters[branch];
        let p = self.cfg.conv_dropout;

        let h = self.temporal_features(tape, x, branch)?;
        let h = self.bn(tape, h, bp.bn1, ctx)?;
        let w = tape.param(&self.params, bp.depthwise);
        let h = tape.conv2d(h, w, None, Conv2dSpec::default().grouped(f))?;
        let h = self.bn(tape, h, bp.bn2, ctx)?;
        let h = tape.elu(h)?;
        let h = tape.avg_pool(h, PoolSpec::along_time(self.cfg.pools.0))?;
        let h = self.dropout(tape, h, p, ctx)?;

        let ks = self.cfg.spa_kernel;
        let left = (ks - 1) / 2;
        let h = tape.pad_last(h, left, ks - 1 - left)?;
        let w = tape.param(&self.params, bp.spatial);
        let h = tape.conv2d(h, w, None, Conv2dSpec::default())?;
        let h = self.bn(tape, h, bp.bn3, ctx)?;
        let h = tape.elu(h)?;
        let h = tape.avg_pool(h, PoolSpec::along_time(self.cfg.pools.1))?;
        let h = self.dropout(tape, h, p, ctx)?;
        let t0 = tape.shape(h)[3];
        tape.reshape(h, &[batch, self.cfg.spa_filters, t0])
    }

    fn attend(&self, tape: &mut Tape<T>, i: usize, query: Var, source: Var, z: Var) -> Result<Var> {
        let mha = attention::msca_forward(tape, &self.params, &self.fusion[i], query, source, &self.cfg.attention)?;
        if self.cfg.residual_enabled {
            attention::residual_fuse(tape, z, mha)
        } else {
            Ok(mha)
        }
    }

    /// Fuses the branch outputs `z` (one per branch, equal shapes) into
    /// `M_1..M_n`.
    pub fn fuse_branches(&self, tape: &mut Tape<T>, z: &[Var]) -> Result<Vec<Var>> {
        if z.len() != self.cfg.n_branches() {
            return Err(dim_err!("expected {} branch outputs, got {}", self.cfg.n_branches(), z.len()));
        }
        let s0 = tape.shape(z[0]).to_vec();
        if z.iter().any(|&v| tape.shape(v) != &s0[..]) {
            return Err(dim_err!("branch outputs disagree in shape"));
        }
        let mut fused = Vec::with_capacity(z.len());
        fused.push(self.attend(tape, 0, z[0], z[0], z[0])?);
        match self.cfg.fusion_mode {
            FusionMode::MainAuxiliary => {
                for (i, &zi) in z.iter().enumerate().skip(1) {
                    fused.push(self.attend(tape, i, zi, z[0], zi)?);
                }
            }
            FusionMode::Hierarchical => {
                let mut query = z[0];
                for (i, &zi) in z.iter().enumerate().skip(1) {
                    let m = self.attend(tape, i, query, zi, zi)?;
                    fused.push(m);
                    query = m;
                }
            }
        }
        Ok(fused)
    }

    fn tcn_block(&self, tape: &mut Tape<T>, x: Var, blk: &TcnBlockParams, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let kt = self.cfg.tcn.kernel;
        let pad = (kt - 1) * blk.dilation;
        let spec = Conv2dSpec::default().dilated((1, blk.dilation));
        let p = self.cfg.tcn.dropout;
        let mut h = x;
        for (conv, bn) in [(blk.conv1, blk.bn1), (blk.conv2, blk.bn2)] {
            let padded = tape.pad_last(h, pad, 0)?;
            let w = tape.param(&self.params, conv.0);
            let b = tape.param(&self.params, conv.1);
            h = tape.conv2d(padded, w, Some(b), spec)?;
            h = self.bn(tape, h, bn, ctx)?;
            h = tape.elu(h)?;
            h = self.dropout(tape, h, p, ctx)?;
        }
        let skip = match blk.skip {
            Some((w, b)) => {
                let w = tape.param(&self.params, w);
                let b = tape.param(&self.params, b);
                tape.conv2d(x, w, Some(b), Conv2dSpec::default())?
            }
            None => x,
        };
        tape.add(h, skip)
    }

    /// Temporal blocks over the time steps of `[B, U, T0]` (causal), then
    /// the configured readout: `[B, F_t]` or `[B, F_t · T0]`.
    pub fn tcn_forward(&self, tape: &mut Tape<T>, m: Var, branch: usize, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let s = tape.shape(m).to_vec();
        if s.len() != 3 || s[2] == 0 {
            return Err(dim_err!("tcn expects [B, U, T0], got {:?}", s));
        }
        let (b, t0) = (s[0], s[2]);
        let mut h = m;
        if self.cfg.tcn_enabled {
            let blocks = self.tcns.get(branch).ok_or_else(|| cfg_err!("no TCN for branch {}", branch + 1))?.clone();
            h = tape.reshape(h, &[b, s[1], 1, t0])?;
            for blk in &blocks {
                h = self.tcn_block(tape, h, blk, ctx)?;
            }
            let ch = tape.shape(h)[1];
            h = tape.reshape(h, &[b, ch, t0])?;
        }
        let ch = tape.shape(h)[1];
        match self.cfg.readout {
            Readout::LastStep => {
                let last = tape.narrow(h, 2, t0 - 1, 1)?;
                tape.reshape(last, &[b, ch])
            }
            Readout::Flatten => tape.reshape(h, &[b, ch * t0]),
        }
    }

    /// Logits `[B, L]` for input `[B, 1, C, T]`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_, T>) -> Result<Var> {
        let batch = self.check_input(tape, x)?;
        if ctx.training() && batch < 2 {
            return Err(cfg_err!("training needs a batch of at least 2 trials"));
        }
        let mut z = Vec::with_capacity(self.cfg.n_branches());
        for i in 0..self.cfg.n_branches() {
            z.push(self.branch_forward(tape, x, i, ctx)?);
        }
        let fused = self.fuse_branches(tape, &z)?;
        let mut summaries = Vec::with_capacity(fused.len());
        for (i, &m) in fused.iter().enumerate() {
            summaries.push(self.tcn_forward(tape, m, i, ctx)?);
        }
        let features = tape.concat(&summaries, 1)?;
        let w = tape.param(&self.params, self.classifier.0);
        let b = tape.param(&self.params, self.classifier.1);
        tape.linear(features, w, Some(b))
    }

    /// Evaluation-mode logits for a `[B, 1, C, T]` batch.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mut ctx = ForwardCtx::eval();
        let logits = self.forward(&mut tape, xv, &mut ctx)?;
        Ok(tape.value(logits).clone())
    }

    /// Folds the batch statistics gathered during a training pass into the
    /// running averages.
    pub fn commit(&mut self, ctx: ForwardCtx<'_, T>) {
        let m = T::from_f64_lossy(self.cfg.bn_momentum);
        let keep = T::one() - m;
        for (bn, stats) in ctx.pending {
            let n = stats.count;
            let unbias = if n > 1 { T::from_usize_lossy(n) / T::from_usize_lossy(n - 1) } else { T::one() };
            let rm = self.params.get_mut(bn.mean).tensor.data_mut();
            rm.iter_mut().zip(&stats.mean).for_each(|(r, &b)| *r = keep * *r + m * b);
            let rv = self.params.get_mut(bn.var).tensor.data_mut();
            rv.iter_mut().zip(&stats.var).for_each(|(r, &b)| *r = keep * *r + m * b * unbias);
        }
    }
}
