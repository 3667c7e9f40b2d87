//! Command-line interface. [`run`] parses arguments, dispatches and maps
//! failures to exit statuses.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use csanet_core::augment::{sr_augment, SrConfig};
use csanet_core::checks::{self, SCOPES, TOLERANCE};
use csanet_core::model::AblationNet;
use csanet_core::rng;
use csanet_core::Scalar;

use crate::config::RunConfig;
use crate::error::{exit, Error, Result};
use crate::harness::{self, EvalPart};
use crate::psd::{branch_psd_report, to_csv, WelchParams};
use crate::synth::{generate, SynthSpec};
use crate::{checkpoint, eegd, report};

#[derive(Debug, Parser)]
#[command(name = "csanet", version, about = "Multi-scale convolutional sparse attention networks for EEG decoding")]
pub struct Cli {
    /// Run configuration file (key=value lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Overrides train.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Compute in f64 instead of f32.
    #[arg(long, global = true)]
    pub f64: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes config.txt, train_log.csv and model.csan.
    Train,
    /// Evaluate a checkpoint; writes report.csv and report.json.
    Eval(EvalArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Segment-and-reconstruct augmentation of an EEGD file.
    Augment(AugmentArgs),
    /// Spectra of a trial before and after a branch's temporal convolution.
    Psd(PsdArgs),
    /// Train one ablation variant (Net1 to Net7).
    Ablate(AblateArgs),
    /// Write the configured synthetic data set as EEGD.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate the training part of the split instead of the held-out part.
    #[arg(long)]
    pub train_part: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// One scope; all scopes when omitted.
    #[arg(long)]
    pub scope: Option<String>,
    /// Sample at most this many coordinates per tensor.
    #[arg(long)]
    pub max_coords: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub segments: usize,
}

#[derive(Debug, Args)]
pub struct PsdArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// EEGD file; the configured data source when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub trial: usize,
    /// Branch number, starting at 1.
    #[arg(long, default_value_t = 1)]
    pub branch: usize,
    /// Sampling rate; data.fs when omitted.
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long)]
    pub segment: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub net: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train<T: Scalar>(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let out = harness::run_training::<T>(cfg, dir, |rec| {
        let s = &rec.stats;
        let eval = rec.eval_acc.map(|a| format!("  eval {:.4}", a)).unwrap_or_default();
        println!("epoch {:>4}  loss {:.5}  acc {:.4}{eval}", s.epoch, s.loss, s.acc);
    })?;
    println!("wrote {}", out.dir.display());
    Ok(())
}

fn eval<T: Scalar>(cfg: &RunConfig, args: &EvalArgs, dir: &Path) -> Result<()> {
    let part = if args.train_part { EvalPart::Train } else { EvalPart::Test };
    let r = harness::run_eval::<T>(&args.checkpoint, cfg, part, dir)?;
    println!("{}", report::summary(&r));
    Ok(())
}

fn gradcheck(args: &GradcheckArgs) -> Result<u8> {
    let scopes: Vec<&str> = match &args.scope {
        Some(s) if SCOPES.contains(&s.as_str()) => vec![s.as_str()],
        Some(s) => return Err(usage(format!("unknown scope {s:?}; expected one of {}", SCOPES.join(", ")))),
        None => SCOPES.to_vec(),
    };
    let mut failed = false;
    println!("{:<22} {:>8} {:>12}  result", "scope", "checked", "max_rel");
    for scope in scopes {
        let r = checks::run_scope(scope, args.max_coords)?;
        let checked: usize = r.inputs.iter().map(|i| i.checked).sum();
        let ok = r.passes(TOLERANCE);
        failed |= !ok;
        println!("{scope:<22} {checked:>8} {:>12.3e}  {}", r.max_rel_error(), if ok { "PASS" } else { "FAIL" });
    }
    Ok(if failed { exit::NUMERICAL } else { exit::OK })
}

fn augment(cfg: &RunConfig, args: &AugmentArgs) -> Result<()> {
    let set = eegd::read(&args.input)?;
    let sr = SrConfig { segments: args.segments, enabled: true };
    let mut r = rng::stream(cfg.train.seed, rng::AUGMENT);
    let out = sr_augment(&set, &sr, &mut r)?;
    eegd::write(&out, &args.output)?;
    println!("{} trials -> {} trials", set.len(), out.len());
    Ok(())
}

fn psd<T: Scalar>(cfg: &RunConfig, args: &PsdArgs, dir: &Path) -> Result<()> {
    let model = checkpoint::load::<T>(&args.checkpoint)?;
    let n = model.config().n_branches();
    if args.branch == 0 || args.branch > n {
        return Err(usage(format!("--branch must be in 1..={n}")));
    }
    let set = match &args.data {
        Some(p) => eegd::read(p)?,
        None => {
            let mut c = cfg.clone();
            c.model = model.config().clone();
            harness::load_data(&c)?
        }
    };
    let trial = set.trials.get(args.trial).ok_or_else(|| usage(format!("--trial {} out of range ({} trials)", args.trial, set.len())))?;
    let params = WelchParams { segment_len: args.segment, ..WelchParams::default() };
    let fs = args.fs.unwrap_or(cfg.data.fs);
    let bp = branch_psd_report(&model, trial, args.branch - 1, fs, params)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("psd_branch{}.csv", args.branch));
    crate::write_atomic(&path, to_csv(&bp.series()).as_bytes())?;
    println!("input peak {:.2} Hz", bp.before.peak_hz());
    for (f, p) in bp.after.iter().enumerate() {
        println!("filter{} peak {:.2} Hz", f + 1, p.peak_hz());
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn ablate<T: Scalar>(cfg: &RunConfig, args: &AblateArgs, dir: &Path) -> Result<()> {
    let net = AblationNet::parse(&args.net).map_err(|e| usage(e.to_string()))?;
    let mut c = cfg.clone();
    c.model = net.apply(&cfg.model);
    train::<T>(&c, &dir.join(net.name()))
}

fn synth(cfg: &RunConfig, args: &SynthArgs) -> Result<()> {
    let m = &cfg.model;
    let d = &cfg.data;
    let spec = SynthSpec {
        per_class: d.per_class,
        channels: m.channels,
        time_steps: m.time_steps,
        classes: m.n_classes,
        snr: d.snr,
        fs: d.fs,
        subjects: d.subjects,
        sessions: d.sessions,
        seed: d.seed,
    };
    let set = generate(&spec)?;
    eegd::write(&set, &args.output)?;
    println!("wrote {} trials to {}", set.len(), args.output.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<u8> {
    if let Command::Gradcheck(a) = &cli.command {
        return gradcheck(a);
    }
    let cfg = resolve(cli)?;
    let dir = cli.out.as_path();
    macro_rules! typed {
        ($f:ident, $($a:expr),*) => {
            if cli.f64 { $f::<f64>($($a),*) } else { $f::<f32>($($a),*) }
        };
    }
    match &cli.command {
        Command::Train => typed!(train, &cfg, dir),
        Command::Eval(a) => typed!(eval, &cfg, a, dir),
        Command::Augment(a) => augment(&cfg, a),
        Command::Psd(a) => typed!(psd, &cfg, a, dir),
        Command::Ablate(a) => typed!(ablate, &cfg, a, dir),
        Command::Synth(a) => synth(&cfg, a),
        Command::Gradcheck(_) => unreachable!(),
    }?;
    Ok(exit::OK)
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// status.
pub fn run<I, S>(args: I) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
