//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime failure.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adapt::{AdaptConfig, MultiExampleMode};
use crate::augment::build_augmented_batch;
use crate::dsp::{log_mel_spectrogram, read_wav_resampled, DspConfig};
use crate::error::{Error, Result};
use crate::harness::{
    ablate_augmentations, adapt_and_eval, cross_domain_grid, default_benchmark, generate_test_sets, gradcheck_sweep,
    pretraining_pairs, render_csv, render_json, zero_shot_report, LabeledDataset, Manifest, Report,
};
use crate::model::{
    contrastive_pretrain, load_weights, retrieval_accuracy, save_weights, ModelDims, ModelWeights, Pooling,
    PretrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "ttada", version, about = "Test-time domain adaptation for a toy audio-language model")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// Root seed; every random draw derives from it.
    #[arg(long, env = "TTADA_SEED", default_value_t = 0, global = true)]
    pub seed: u64,
    /// JSON file whose groups (dsp, pretrain, adapt, protocol) override flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out", global = true)]
    pub out_dir: PathBuf,
    /// Progress on stderr; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Contrastively pretrain toy weights on a manifest's training clips.
    Pretrain(PretrainArgs),
    /// Unadapted accuracy per domain.
    Zeroshot(EvalArgs),
    /// Adapt on k unlabeled test clips per run, then score the rest.
    Adapt(AdaptCmd),
    /// One-example adaptation at several augmented-view counts.
    Ablate(AblateCmd),
    /// Adapt on each domain, evaluate on every domain.
    Grid(GridCmd),
    /// Compare the adaptation gradient with central differences.
    Gradcheck(GradcheckArgs),
    /// Write the augmented views of one clip with their provenance.
    AugmentPreview(PreviewArgs),
}

#[derive(Args, Debug)]
pub struct DspArgs {
    #[arg(long, default_value_t = 44_100)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 1024)]
    pub window: usize,
    #[arg(long, default_value_t = 320)]
    pub hop: usize,
    #[arg(long, default_value_t = 64)]
    pub mel_bins: usize,
    #[arg(long, default_value_t = 50.0)]
    pub fmin: f64,
    #[arg(long, default_value_t = 14_000.0)]
    pub fmax: f64,
}

impl DspArgs {
    fn config(&self) -> DspConfig {
        DspConfig {
            sample_rate_hz: self.sample_rate,
            window_size: self.window,
            hop_size: self.hop,
            mel_bins: self.mel_bins,
            fmin_hz: self.fmin,
            fmax_hz: self.fmax,
        }
    }
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Domain manifest; the built-in benchmark when omitted.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output weights; defaults to OUT_DIR/weights.ttw.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub dsp: DspArgs,
    /// Shared embedding width.
    #[arg(long, default_value_t = 768)]
    pub dim: usize,
    /// Hidden width of the audio perceptron.
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value = "mean")]
    pub pooling: PoolingArg,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long = "pretrain-lr", default_value_t = 1e-2)]
    pub learning_rate: f64,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum PoolingArg {
    Mean,
    PositionalRamp,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Joint,
    Sequential,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Weights file; defaults to OUT_DIR/weights.ttw.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Restrict to these domains (repeatable); all manifest domains by default.
    #[arg(long = "domain")]
    pub domains: Vec<String>,
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    /// Augmented views per example; the original is added on top.
    #[arg(long, default_value_t = 50)]
    pub views: usize,
    #[arg(long, default_value_t = 5e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    /// Rows of the domain vector.
    #[arg(long, default_value_t = 1)]
    pub tokens: usize,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, value_enum, default_value = "joint")]
    pub mode: ModeArg,
    /// Independent runs; run r uses seed SEED + r.
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
}

#[derive(Args, Debug)]
pub struct AdaptCmd {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub adapt: AdaptArgs,
    /// Unlabeled test clips per run.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
}

#[derive(Args, Debug)]
pub struct AblateCmd {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub adapt: AdaptArgs,
    /// View counts to compare.
    #[arg(long, value_delimiter = ',', default_value = "25,50")]
    pub counts: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct GridCmd {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub adapt: AdaptArgs,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
}

#[derive(Args, Debug)]
pub struct PreviewArgs {
    /// Mono 16-bit PCM input; otherwise the first test clip of a manifest domain.
    #[arg(long)]
    pub wav: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub domain: Option<String>,
    #[command(flatten)]
    pub dsp: DspArgs,
    #[arg(long, default_value_t = 50)]
    pub views: usize,
}

/// Run-level settings that are not part of any library config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Protocol {
    k: usize,
    runs: usize,
    view_counts: Vec<usize>,
    trials: usize,
}

impl Protocol {
    fn seeds(&self, root: u64) -> Result<Vec<u64>> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        Ok((0..self.runs as u64).map(|r| root.wrapping_add(r)).collect())
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let Some(command) = cli.command.as_ref() else {
        eprintln!("{}", Cli::command().render_usage());
        eprintln!("a subcommand is required; see --help");
        return 1;
    };
    match dispatch(&cli.common, command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

struct Ctx<'a> {
    common: &'a CommonArgs,
    overrides: Option<Value>,
}

impl Ctx<'_> {
    fn log(&self, msg: impl AsRef<str>) {
        if self.common.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Applies the config file's `group` object on top of `base`.
    fn overlay<T: Serialize + DeserializeOwned>(&self, group: &str, base: T) -> Result<T> {
        let Some(patch) = self.overrides.as_ref().and_then(|o| o.get(group)) else {
            return Ok(base);
        };
        let mut value = serde_json::to_value(&base).expect("config serializes");
        merge(&mut value, patch, group)?;
        serde_json::from_value(value).map_err(|e| Error::Config(format!("config group {group:?}: {e}")))
    }

    fn out_path(&self, name: &str) -> Result<PathBuf> {
        let dir = &self.common.out_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(dir.join(name))
    }

    fn weights_path(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone().unwrap_or_else(|| self.common.out_dir.join("weights.ttw"))
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out_path(name)?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.log(format!("wrote {}", path.display()));
        Ok(path)
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    fn emit<R: Report>(&self, stem: &str, report: &R) -> Result<()> {
        self.write(&format!("{stem}.csv"), &render_csv(report)?)?;
        self.write(&format!("{stem}.json"), &render_json(report))?;
        Ok(())
    }
}

const GROUPS: [&str; 4] = ["dsp", "pretrain", "adapt", "protocol"];

fn merge(base: &mut Value, patch: &Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (key, pv) in p {
                let here = format!("{path}.{key}");
                let slot = b
                    .get_mut(key)
                    .ok_or_else(|| Error::Config(format!("unknown config key {here:?}")))?;
                merge(slot, pv, &here)?;
            }
            Ok(())
        }
        (slot, pv) => {
            *slot = pv.clone();
            Ok(())
        }
    }
}

fn read_overrides(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Config(format!("{}: expected a JSON object", path.display())))?;
    if let Some(bad) = obj.keys().find(|k| !GROUPS.contains(&k.as_str())) {
        return Err(Error::Config(format!("unknown config group {bad:?}; expected one of {GROUPS:?}")));
    }
    Ok(value)
}

fn dispatch(common: &CommonArgs, command: &Command) -> Result<i32> {
    let overrides = common.config.as_deref().map(read_overrides).transpose()?;
    let ctx = Ctx { common, overrides };
    // reject typos in groups this subcommand never reads
    ctx.overlay("dsp", DspConfig::default())?;
    ctx.overlay("pretrain", PretrainConfig::default())?;
    ctx.overlay("adapt", AdaptConfig::default())?;
    ctx.overlay(
        "protocol",
        Protocol {
            k: 1,
            runs: 5,
            view_counts: Vec::new(),
            trials: 20,
        },
    )?;
    match command {
        Command::Pretrain(a) => pretrain(&ctx, a),
        Command::Zeroshot(a) => zeroshot(&ctx, a),
        Command::Adapt(a) => adapt_cmd(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
        Command::Grid(a) => grid(&ctx, a),
        Command::Gradcheck(a) => gradcheck(&ctx, a),
        Command::AugmentPreview(a) => preview(&ctx, a),
    }
}

fn load_manifest(path: &Option<PathBuf>) -> Result<Manifest> {
    match path {
        Some(p) => Manifest::load(p),
        None => Ok(default_benchmark()),
    }
}

fn select_domains(manifest: Manifest, names: &[String]) -> Result<Manifest> {
    if names.is_empty() {
        return Ok(manifest);
    }
    let domains = names
        .iter()
        .map(|n| manifest.domain(n).cloned())
        .collect::<Result<_>>()?;
    Ok(Manifest { domains, ..manifest })
}

fn protocol(ctx: &Ctx, k: usize, adapt: Option<&AdaptArgs>, view_counts: Vec<usize>, trials: usize) -> Result<Protocol> {
    ctx.overlay(
        "protocol",
        Protocol {
            k,
            runs: adapt.map_or(5, |a| a.runs),
            view_counts,
            trials,
        },
    )
}

fn adapt_config(ctx: &Ctx, a: &AdaptArgs) -> Result<AdaptConfig> {
    let base = AdaptConfig {
        learning_rate: a.lr,
        steps: a.steps,
        weight_decay: a.weight_decay,
        num_aug_views: a.views,
        seed: ctx.common.seed,
        prompt_tokens: a.tokens,
        mode: match a.mode {
            ModeArg::Joint => MultiExampleMode::Joint,
            ModeArg::Sequential => MultiExampleMode::Sequential,
        },
        ..AdaptConfig::default()
    };
    let cfg = ctx.overlay("adapt", base)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Weights plus the test pools of the selected domains, generated with the
/// weights' own front end.
fn eval_inputs(ctx: &Ctx, a: &EvalArgs) -> Result<(ModelWeights, Vec<LabeledDataset>)> {
    let path = ctx.weights_path(&a.weights);
    ctx.log(format!("loading weights from {}", path.display()));
    let w = load_weights(&path)?;
    let manifest = select_domains(load_manifest(&a.manifest)?, &a.domains)?;
    ctx.log(format!("generating test pools for {} domains", manifest.domains.len()));
    let data = generate_test_sets(&manifest, &w.dsp, ctx.common.seed)?;
    Ok((w, data))
}

#[derive(Serialize)]
struct PretrainSummary<'a> {
    config: &'a PretrainConfig,
    dsp: &'a DspConfig,
    pairs: usize,
    parameter_count: usize,
    weights_digest: String,
    initial_loss: f64,
    final_loss: f64,
    retrieval_accuracy: f64,
    distinct_captions: usize,
    epoch_losses: &'a [f64],
}

fn pretrain(ctx: &Ctx, a: &PretrainArgs) -> Result<i32> {
    let dsp = ctx.overlay("dsp", a.dsp.config())?;
    dsp.validate()?;
    let cfg = ctx.overlay(
        "pretrain",
        PretrainConfig {
            dims: ModelDims {
                embed_dim: a.dim,
                audio_hidden: a.hidden,
            },
            pooling: match a.pooling {
                PoolingArg::Mean => Pooling::Mean,
                PoolingArg::PositionalRamp => Pooling::PositionalRamp,
            },
            epochs: a.epochs,
            batch_size: a.batch_size,
            learning_rate: a.learning_rate,
            seed: ctx.common.seed,
            ..PretrainConfig::default()
        },
    )?;
    let manifest = load_manifest(&a.manifest)?;
    ctx.log("generating pretraining clips");
    let pairs = pretraining_pairs(&manifest, &dsp, ctx.common.seed)?;
    ctx.log(format!("training on {} pairs for {} epochs", pairs.len(), cfg.epochs));
    let outcome = contrastive_pretrain(&pairs, &cfg)?;
    let (retrieval, captions) = retrieval_accuracy(&outcome.weights, &pairs)?;
    let path = ctx.weights_path(&a.weights);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_weights(&outcome.weights, &path)?;
    let summary = PretrainSummary {
        config: &cfg,
        dsp: &dsp,
        pairs: pairs.len(),
        parameter_count: outcome.weights.parameter_count(),
        weights_digest: outcome.weights.digest(),
        initial_loss: outcome.initial_loss,
        final_loss: outcome.final_loss,
        retrieval_accuracy: retrieval,
        distinct_captions: captions,
        epoch_losses: &outcome.epoch_losses,
    };
    let mut json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    json.push(b'\n');
    ctx.write("pretrain.json", &json)?;
    println!(
        "pretrained {} parameters: loss {:.4} -> {:.4}, retrieval {:.3} over {captions} captions; weights at {}",
        summary.parameter_count,
        summary.initial_loss,
        summary.final_loss,
        retrieval,
        path.display()
    );
    Ok(0)
}

fn zeroshot(ctx: &Ctx, a: &EvalArgs) -> Result<i32> {
    let (w, data) = eval_inputs(ctx, a)?;
    let report = zero_shot_report(&data, &w, ctx.common.seed)?;
    ctx.emit("zeroshot", &report)?;
    for e in &report.domains {
        println!("{:<14} zero-shot {:.4}", e.domain, e.accuracy);
    }
    println!("{:<14} zero-shot {:.4}", "mean", report.mean);
    Ok(0)
}

fn adapt_cmd(ctx: &Ctx, a: &AdaptCmd) -> Result<i32> {
    let cfg = adapt_config(ctx, &a.adapt)?;
    let proto = protocol(ctx, a.k, Some(&a.adapt), Vec::new(), 0)?;
    let seeds = proto.seeds(ctx.common.seed)?;
    let (w, data) = eval_inputs(ctx, &a.eval)?;
    let reports = data
        .iter()
        .map(|d| {
            ctx.log(format!("adapting on {} (k = {})", d.domain, proto.k));
            adapt_and_eval(d, proto.k, &cfg, &w, &seeds)
        })
        .collect::<Result<Vec<_>>>()?;
    ctx.emit("adapt", &reports)?;
    for r in &reports {
        println!(
            "{:<14} k={} zero-shot {:.4} adapted {:.4} delta {:+.4}",
            r.domain,
            r.k,
            r.zero_shot_mean,
            r.mean,
            r.delta()
        );
    }
    Ok(0)
}

fn ablate(ctx: &Ctx, a: &AblateCmd) -> Result<i32> {
    let cfg = adapt_config(ctx, &a.adapt)?;
    let proto = protocol(ctx, 1, Some(&a.adapt), a.counts.clone(), 0)?;
    let seeds = proto.seeds(ctx.common.seed)?;
    let (w, data) = eval_inputs(ctx, &a.eval)?;
    let reports = data
        .iter()
        .map(|d| ablate_augmentations(d, &proto.view_counts, &cfg, &w, &seeds))
        .collect::<Result<Vec<_>>>()?;
    ctx.emit("ablate", &reports)?;
    for r in &reports {
        for row in &r.rows {
            println!(
                "{:<14} {:>3} views zero-shot {:.4} adapted {:.4}",
                r.domain, row.num_aug_views, row.zero_shot_mean, row.mean
            );
        }
    }
    Ok(0)
}

fn grid(ctx: &Ctx, a: &GridCmd) -> Result<i32> {
    let cfg = adapt_config(ctx, &a.adapt)?;
    let proto = protocol(ctx, 1, Some(&a.adapt), Vec::new(), 0)?;
    let seeds = proto.seeds(ctx.common.seed)?;
    let (w, data) = eval_inputs(ctx, &a.eval)?;
    let g = cross_domain_grid(&data, &cfg, &w, &seeds)?;
    ctx.emit("grid", &g)?;
    let mut out = std::io::stdout().lock();
    let _ = write!(out, "{:<14}", "source");
    for t in &g.domains {
        let _ = write!(out, " {t:>12}");
    }
    let _ = writeln!(out, " {:>12}", "average");
    let _ = write!(out, "{:<14}", "zero-shot");
    for v in &g.zero_shot {
        let _ = write!(out, " {v:>12.4}");
    }
    let _ = writeln!(out, " {:>12.4}", g.zero_shot_average);
    for (row, avg) in g.cells.iter().zip(&g.row_average) {
        let _ = write!(out, "{:<14}", row[0].source);
        for c in row {
            let _ = write!(out, " {:>12.4}", c.mean);
        }
        let _ = writeln!(out, " {avg:>12.4}");
    }
    for s in &g.summary {
        let _ = writeln!(
            out,
            "{:<14} in-domain delta {:+.4} off-domain delta {:+.4}",
            s.source, s.in_domain_delta, s.off_domain_delta
        );
    }
    Ok(0)
}

fn gradcheck(ctx: &Ctx, a: &GradcheckArgs) -> Result<i32> {
    let proto = protocol(ctx, 1, None, Vec::new(), a.trials)?;
    if proto.trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let report = gradcheck_sweep(proto.trials, ctx.common.seed)?;
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    ctx.write("gradcheck.json", &json)?;
    println!(
        "max relative error {:.3e} over {} trials (tolerance {:.0e})",
        report.max_rel_err,
        report.trials.len(),
        report.tolerance
    );
    if report.passed() {
        Ok(0)
    } else {
        eprintln!("error: gradient check exceeded tolerance");
        Ok(2)
    }
}

#[derive(Serialize)]
struct PreviewHeader<'a> {
    source_id: &'a str,
    seed: u64,
    views: usize,
    frames: usize,
    mel_bins: usize,
    original_index: usize,
    mask_fill: f64,
    provenance_digest: String,
    data_file: &'a str,
    data_layout: &'a str,
    provenance: &'a [crate::augment::ViewProvenance],
}

fn preview(ctx: &Ctx, a: &PreviewArgs) -> Result<i32> {
    let dsp = ctx.overlay("dsp", a.dsp.config())?;
    dsp.validate()?;
    let mel = match &a.wav {
        Some(path) => {
            let wave = read_wav_resampled(path, dsp.sample_rate_hz)?;
            log_mel_spectrogram(&wave, &dsp)?.with_source_id(path.display().to_string())
        }
        None => {
            let manifest = load_manifest(&a.manifest)?;
            let name = a.domain.clone().unwrap_or_else(|| manifest.domains[0].name.clone());
            let one = select_domains(manifest, &[name])?;
            let mut data = generate_test_sets(&one, &dsp, ctx.common.seed)?;
            data.remove(0).test.swap_remove(0).mel
        }
    };
    let base = AdaptConfig {
        num_aug_views: a.views,
        seed: ctx.common.seed,
        ..AdaptConfig::default()
    };
    let cfg = ctx.overlay("adapt", base)?;
    cfg.validate()?;
    let batch = build_augmented_batch(&mel, &cfg.augment_config(), cfg.seed)?;
    let data_file = "augment_views.f32";
    let mut raw = Vec::with_capacity(batch.views().numel() * 4);
    for v in batch.views().data() {
        raw.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    ctx.write(data_file, &raw)?;
    let header = PreviewHeader {
        source_id: mel.source_id(),
        seed: batch.seed(),
        views: batch.num_views(),
        frames: batch.frames(),
        mel_bins: batch.mel_bins(),
        original_index: batch.original_index(),
        mask_fill: batch.mask_fill(),
        provenance_digest: batch.provenance_digest(),
        data_file,
        data_layout: "f32 little-endian, view-major then frame then mel bin",
        provenance: batch.provenance(),
    };
    let mut json = serde_json::to_vec_pretty(&header).expect("header serializes");
    json.push(b'\n');
    ctx.write("augment_preview.json", &json)?;
    println!(
        "{} views of {} ({}x{}), original at index {}",
        batch.num_views(),
        mel.source_id(),
        batch.frames(),
        batch.mel_bins(),
        batch.original_index()
    );
    Ok(0)
}
