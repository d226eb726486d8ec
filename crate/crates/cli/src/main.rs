//! `kagn`: train, evaluate and inspect KAN convolutional models.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use kagn::basis::BasisSpec;
use kagn::harness::checkpoint::Checkpoint;
use kagn::harness::config::ExperimentConfig;
use kagn::harness::data::{self, Dataset, Targets};
use kagn::harness::{evaluate, predict, DataConfig, GradSuite, LossSpec, Trainer, GRAD_TOLERANCE};
use kagn::layers::{BottleneckKind, Module, ParamKind};
use kagn::models::{build_simple_net, build_unet_kagn, build_vgg11_like, vgg_options, ModelSpec, NetOptions, VggVariant};
use kagn::peft::{trainable_param_report, PeftPlan};
use kagn::Error;

#[derive(Parser, Debug)]
#[command(name = "kagn", version, about = "Train, evaluate and inspect KAN convolutional models")]
struct Cli {
    /// Seed for model initialization, shuffling and noise (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (TOML with [model], [train] and [data] tables).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from an experiment config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheckArgs),
    /// Per-layer parameter counts: closed-form formula vs. enumerated tensors.
    ParamCount(ParamCountArgs),
    /// Fine-tune a checkpoint on a window of polynomial degrees.
    Peft(PeftArgs),
    /// Write per-sample predictions of a checkpoint as CSV.
    Predict(PredictArgs),
    /// Generate the synthetic shapes segmentation set as IDX files.
    GenData(GenDataArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset directory (overrides the config path and the KAGN_DATA_DIR default).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use only the first N test samples.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Output directory for checkpoint.ckpt, history.csv, history.json and config.toml.
    #[arg(long)]
    out: PathBuf,
    /// Dataset directory (overrides the config path and the KAGN_DATA_DIR default).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop after this many optimizer steps in total.
    #[arg(long)]
    max_steps: Option<u64>,
    /// Use only the first N training samples.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use only the first N test samples.
    #[arg(long)]
    test_limit: Option<usize>,
    /// Train in 64-bit floating point.
    #[arg(long)]
    f64: bool,
    /// Stop after this many epochs of this run; the schedule still spans all epochs.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    /// Case to run (see --list), or `all`.
    #[arg(long, default_value = "all")]
    layer: String,
    /// List the registered cases and exit.
    #[arg(long)]
    list: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    Simple4,
    Simple8,
    Vgg11V2,
    Vgg11V4,
    Unet,
}

#[derive(Args, Debug)]
struct ParamCountArgs {
    /// Built-in model instead of --config.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Bottleneck reduction ratio for presets (0 disables).
    #[arg(long, default_value_t = 0)]
    bottleneck: usize,
    /// Width multiplier for presets.
    #[arg(long, default_value_t = 1.0)]
    width_scale: f64,
    /// Polynomial degree for presets.
    #[arg(long, default_value_t = 3)]
    degree: usize,
    /// Also report polynomial-weight counts for reductions 1, 2, 4, 8, 16.
    #[arg(long)]
    reduction_sweep: bool,
}

#[derive(Args, Debug)]
struct PeftArgs {
    /// Base checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Degree window `R_L,R_U`; defaults to the [train.peft] block of --config.
    #[arg(long)]
    plan: Option<String>,
    /// Also train the residual (w_b) weights.
    #[arg(long)]
    train_residual: bool,
    /// Also train the classifier head.
    #[arg(long)]
    train_head: bool,
    /// Keep updating batch-norm running statistics.
    #[arg(long)]
    update_norm_stats: bool,
    /// Output directory for the fine-tuned checkpoint and history.
    #[arg(long)]
    out: PathBuf,
    /// Dataset directory (overrides the config path and the KAGN_DATA_DIR default).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV output file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    count: usize,
    /// Image side length.
    #[arg(long, default_value_t = 32)]
    size: usize,
}

/// Command failure with its exit code: 1 numeric, 2 usage or I/O.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite { .. } => 1,
            _ => 2,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn numeric(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Train(a) => train(&cli, a),
        Command::Eval(a) => eval(&cli, a),
        Command::GradCheck(a) => grad_check(&cli, a),
        Command::ParamCount(a) => param_count(&cli, a),
        Command::Peft(a) => peft(&cli, a),
        Command::Predict(a) => predict_cmd(&cli, a),
        Command::GenData(a) => gen_data(&cli, a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(cli: &Cli) -> std::result::Result<Option<ExperimentConfig>, Failure> {
    match &cli.config {
        None => Ok(None),
        Some(p) => {
            if !p.exists() {
                return Err(usage(format!("config file {} not found", p.display())));
            }
            let mut c = ExperimentConfig::load(p)?;
            if let Some(s) = cli.seed {
                c.train.seed = s;
            }
            Ok(Some(c))
        }
    }
}

fn require_config(cli: &Cli) -> std::result::Result<ExperimentConfig, Failure> {
    load_config(cli)?.ok_or_else(|| usage("this command needs --config"))
}

fn check_dir(p: &Option<PathBuf>) -> CmdResult {
    match p {
        Some(d) if !d.is_dir() => Err(usage(format!("data directory {} not found", d.display()))),
        _ => Ok(()),
    }
}

fn apply_limits(d: Dataset, limit: Option<usize>) -> Dataset {
    match limit {
        Some(n) => d.take(n),
        None => d,
    }
}

/// Data config for checkpoint-only commands: from --config, else inferred
/// from the model (segmentation → synthetic shapes, otherwise MNIST).
fn data_for(cli: &Cli, spec: &ModelSpec) -> std::result::Result<DataConfig, Failure> {
    if let Some(c) = load_config(cli)? {
        return Ok(c.data);
    }
    Ok(if spec.num_classes == 1 {
        DataConfig::SynthShapes {
            train: 500,
            test: 100,
            size: 32,
            seed: cli.seed.unwrap_or(0),
        }
    } else {
        DataConfig::Mnist {
            path: None,
            train_limit: None,
            test_limit: None,
        }
    })
}

fn print_epoch(rec: &kagn::harness::EpochRecord) {
    let mut line = format!(
        "epoch {:>3}  step {:>7}  loss {:.5}  task {:.5}  penalty {:.3e}  aux {:.3e}",
        rec.epoch, rec.step, rec.train_loss, rec.task_loss, rec.penalty, rec.aux_loss
    );
    for (k, v) in &rec.eval {
        let _ = write!(line, "  {k} {v:.4}");
    }
    println!("{line}");
}

fn run_training<T: kagn::Real>(
    mut trainer: Trainer<T>,
    train_set: &Dataset,
    test_set: &Dataset,
    out: &Path,
    stop_after: Option<usize>,
) -> std::result::Result<Trainer<T>, Failure> {
    std::fs::create_dir_all(out).map_err(|e| usage(format!("cannot create {}: {e}", out.display())))?;
    let ckpt = out.join("checkpoint.ckpt");
    let mut run = 0;
    while trainer.epoch < trainer.config.epochs && !trainer.finished() && stop_after.is_none_or(|s| run < s) {
        let rec = trainer.train_epoch(train_set, Some(test_set))?;
        print_epoch(&rec);
        trainer.save(&ckpt)?;
        trainer.history.write(out)?;
        run += 1;
    }
    trainer.save(&ckpt)?;
    trainer.history.write(out)?;
    Ok(trainer)
}

fn train(cli: &Cli, a: &TrainArgs) -> CmdResult {
    check_dir(&a.data)?;
    if a.f64 {
        train_typed::<f64>(cli, a)
    } else {
        train_typed::<f32>(cli, a)
    }
}

fn train_typed<T: kagn::Real>(cli: &Cli, a: &TrainArgs) -> CmdResult {
    let cfg = require_config(cli)?;
    let mut trainer = match &a.resume {
        Some(p) => {
            if !p.exists() {
                return Err(usage(format!("checkpoint {} not found", p.display())));
            }
            Trainer::<T>::resume(p)?
        }
        None => {
            let spec = cfg.model_spec()?;
            let model = spec.build::<T>(cfg.train.seed)?;
            Trainer::new(model, cfg.train.clone())?
        }
    };
    if let Some(e) = a.epochs {
        trainer.config.epochs = e;
    }
    if let Some(m) = a.max_steps {
        trainer.config.max_steps = Some(m);
    }
    let (tr, te) = cfg.data.load(a.data.as_deref())?;
    let tr = apply_limits(tr, a.train_limit);
    let te = apply_limits(te, a.test_limit);
    std::fs::create_dir_all(&a.out).map_err(|e| usage(format!("cannot create {}: {e}", a.out.display())))?;
    std::fs::write(a.out.join("config.toml"), cfg.to_toml()?).map_err(|e| usage(e.to_string()))?;
    println!(
        "model {}: {} parameters, {} train / {} test samples",
        trainer.model.spec.name,
        trainer.model.param_total(),
        tr.len(),
        te.len()
    );
    run_training(trainer, &tr, &te, &a.out, a.stop_after)?;
    Ok(())
}

fn print_metrics(m: &BTreeMap<String, f64>) {
    for (k, v) in m {
        println!("{k:<6} {v:.6}");
    }
}

fn eval(cli: &Cli, a: &EvalArgs) -> CmdResult {
    check_dir(&a.data.data)?;
    let ck = Checkpoint::read(&a.checkpoint)?;
    let mut model = ck.model::<f32>()?;
    let dc = data_for(cli, &model.spec)?;
    let (_, te) = dc.load(a.data.data.as_deref())?;
    let te = apply_limits(te, a.data.limit);
    let m = evaluate(&mut model, &te, 256)?;
    print_metrics(&m);
    Ok(())
}

fn grad_check(cli: &Cli, a: &GradCheckArgs) -> CmdResult {
    let suite = GradSuite::global();
    if a.list {
        for (n, d) in suite.cases() {
            println!("{n:<16} {d}");
        }
        return Ok(());
    }
    let names: Vec<String> = if a.layer == "all" {
        suite.cases().into_iter().map(|(n, _)| n).collect()
    } else {
        vec![a.layer.clone()]
    };
    let seed = cli.seed.unwrap_or(0);
    let mut failed = 0;
    for name in names {
        for r in suite.run(&name, seed)? {
            let ok = r.passes(GRAD_TOLERANCE);
            failed += usize::from(!ok);
            println!(
                "{:<4} {name}/{:<36} max rel {:.3e}  max abs {:.3e}  probes {}",
                if ok { "pass" } else { "FAIL" },
                r.name,
                r.max_rel_err,
                r.max_abs_err,
                r.probes
            );
        }
    }
    if failed > 0 {
        return Err(numeric(format!("{failed} gradient check(s) above {GRAD_TOLERANCE:e}")));
    }
    Ok(())
}

fn preset_spec(p: Preset, a: &ParamCountArgs, bottleneck: usize) -> kagn::Result<ModelSpec> {
    let opts = NetOptions {
        basis: BasisSpec::gram(a.degree),
        width_scale: a.width_scale,
        bottleneck,
        bottleneck_kind: BottleneckKind::Linear,
        ..NetOptions::default()
    };
    match p {
        Preset::Simple4 => build_simple_net(4, &kagn::models::BASELINE_CHANNELS_4, &opts),
        Preset::Simple8 => build_simple_net(8, &kagn::models::SLIM_CHANNELS_8, &opts),
        Preset::Vgg11V2 | Preset::Vgg11V4 => {
            let v = if p == Preset::Vgg11V2 { VggVariant::V2 } else { VggVariant::V4 };
            let o = NetOptions {
                basis: BasisSpec::gram(a.degree),
                width_scale: a.width_scale,
                bottleneck,
                ..vgg_options()
            };
            build_vgg11_like(v, bottleneck > 0, false, &o)
        }
        Preset::Unet => build_unet_kagn(a.width_scale, 4, 1, BasisSpec::gram(a.degree)),
    }
}

fn poly_weight_count(spec: &ModelSpec) -> kagn::Result<usize> {
    let m = spec.build::<f32>(0)?;
    Ok(m.params()
        .iter()
        .filter(|(_, p)| matches!(p.kind(), ParamKind::Poly { .. }))
        .map(|(_, p)| p.numel())
        .sum())
}

fn param_count(cli: &Cli, a: &ParamCountArgs) -> CmdResult {
    let spec = match (a.preset, load_config(cli)?) {
        (Some(p), _) => preset_spec(p, a, a.bottleneck)?,
        (None, Some(c)) => c.model_spec()?,
        (None, None) => return Err(usage("param-count needs --config or --preset")),
    };
    let formula = spec.layer_counts()?;
    let model = spec.build::<f32>(cli.seed.unwrap_or(0))?;
    if formula.iter().all(|c| c.name == "head") {
        // A model without layers prints an empty table.
        println!("{:<20} {:<16} {:>12} {:>12}", "layer", "kind", "formula", "enumerated");
        return Ok(());
    }
    let enumerated: BTreeMap<String, usize> = model.layer_enumeration().into_iter().collect();
    println!("{:<20} {:<16} {:>12} {:>12}", "layer", "kind", "formula", "enumerated");
    let mut mismatches = 0;
    let mut rows = 0;
    for c in &formula {
        let e = enumerated.get(&c.name).copied().unwrap_or(0);
        if c.formula == 0 && e == 0 {
            continue;
        }
        rows += 1;
        let flag = if e == c.formula { "" } else { "  MISMATCH" };
        mismatches += usize::from(e != c.formula);
        println!("{:<20} {:<16} {:>12} {:>12}{flag}", c.name, c.kind, c.formula, e);
    }
    let listed: std::collections::BTreeSet<&str> = formula.iter().map(|c| c.name.as_str()).collect();
    for (name, e) in &enumerated {
        if !listed.contains(name.as_str()) && *e > 0 {
            mismatches += 1;
            println!("{name:<20} {:<16} {:>12} {e:>12}  MISMATCH", "?", 0);
        }
    }
    if rows > 0 {
        println!("{:<20} {:<16} {:>12} {:>12}", "total", "", spec.param_count()?, model.param_total());
    }
    if a.reduction_sweep {
        let p = a.preset.unwrap_or(Preset::Simple8);
        println!("\n{:<10} {:>16} {:>14}", "reduction", "poly weights", "total");
        for r in [1, 2, 4, 8, 16] {
            let s = preset_spec(p, a, r)?;
            println!("{r:<10} {:>16} {:>14}", poly_weight_count(&s)?, s.param_count()?);
        }
    }
    if mismatches > 0 {
        return Err(numeric(format!("{mismatches} layer(s) disagree")));
    }
    Ok(())
}

fn parse_plan(s: &str) -> std::result::Result<(usize, usize), Failure> {
    let (l, u) = s
        .split_once(',')
        .ok_or_else(|| usage(format!("plan `{s}` must look like R_L,R_U")))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| usage(format!("bad degree `{v}` in plan")));
    Ok((p(l)?, p(u)?))
}

fn peft(cli: &Cli, a: &PeftArgs) -> CmdResult {
    check_dir(&a.data)?;
    let ck = Checkpoint::read(&a.checkpoint)?;
    let base = ck.model::<f32>()?;
    let cfg = load_config(cli)?;
    let mut plan = match (&a.plan, cfg.as_ref().and_then(|c| c.train.peft.clone())) {
        (Some(s), _) => {
            let (l, u) = parse_plan(s)?;
            PeftPlan::new(l, u)
        }
        (None, Some(p)) => p,
        (None, None) => return Err(usage("peft needs --plan or a [train.peft] block in --config")),
    };
    plan.train_residual |= a.train_residual;
    plan.train_head |= a.train_head;
    plan.update_norm_stats |= a.update_norm_stats;

    let mut train_cfg = match (&cfg, &ck.header.train) {
        (Some(c), _) => c.train.clone(),
        (None, Some(t)) => t.config.clone(),
        (None, None) => kagn::harness::TrainConfig {
            loss: if base.is_segmentation() { LossSpec::BceDice } else { LossSpec::CrossEntropy },
            ..Default::default()
        },
    };
    train_cfg.peft = Some(plan.clone());
    if let Some(s) = cli.seed {
        train_cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        train_cfg.epochs = e;
    }
    if a.max_steps.is_some() {
        train_cfg.max_steps = a.max_steps;
    }
    let dc = data_for(cli, &base.spec)?;
    let (tr, te) = dc.load(a.data.as_deref())?;
    let tr = apply_limits(tr, a.train_limit);
    let te = apply_limits(te, a.test_limit);

    let mut base_eval = base;
    let before = evaluate(&mut base_eval, &te, 256)?;
    let mut trainer = Trainer::new(base_eval, train_cfg)?;
    let report = trainable_param_report(&trainer.model);
    let step0 = evaluate(&mut trainer.model, &te, 256)?;
    println!(
        "plan [{}, {}]: {} trainable of {} parameters ({:.2}%), {:.2}% of polynomial weights",
        plan.r_l,
        plan.r_u,
        report.trainable(),
        report.total(),
        100.0 * report.trainable_fraction(),
        100.0 * report.poly_fraction()
    );
    println!("base:   {}", fmt_metrics(&before));
    println!("step 0: {}", fmt_metrics(&step0));
    if before != step0 {
        return Err(numeric("degree extension changed the model output"));
    }
    let t = run_training(trainer, &tr, &te, &a.out, None)?;
    std::fs::write(
        a.out.join("trainable.json"),
        serde_json::to_string_pretty(&report).map_err(|e| usage(e.to_string()))?,
    )
    .map_err(|e| usage(e.to_string()))?;
    if let Some(last) = t.history.epochs.last() {
        println!("final:  {}", fmt_metrics(&last.eval));
    }
    Ok(())
}

fn fmt_metrics(m: &BTreeMap<String, f64>) -> String {
    m.iter().map(|(k, v)| format!("{k} {v:.4}")).collect::<Vec<_>>().join("  ")
}

fn predict_cmd(cli: &Cli, a: &PredictArgs) -> CmdResult {
    check_dir(&a.data.data)?;
    let ck = Checkpoint::read(&a.checkpoint)?;
    let mut model = ck.model::<f32>()?;
    let dc = data_for(cli, &model.spec)?;
    let (_, te) = dc.load(a.data.data.as_deref())?;
    let te = apply_limits(te, a.data.limit);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut csv = String::new();
    let seg = model.is_segmentation();
    csv.push_str(if seg { "index,iou,f1,foreground\n" } else { "index,prediction,label,confidence\n" });
    let idx: Vec<usize> = (0..te.len()).collect();
    for chunk in idx.chunks(256) {
        let b = te.batch::<f32>(chunk, false, &mut rng)?;
        let out = predict(&mut model, &b.images)?;
        match &te.targets {
            Targets::Labels { labels, .. } => {
                let c = out.shape()[1];
                let probs = out.softmax(1)?;
                for (r, &i) in chunk.iter().enumerate() {
                    let row = &probs.data()[r * c..(r + 1) * c];
                    let (best, p) = row
                        .iter()
                        .enumerate()
                        .fold((0, f32::MIN), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
                    let _ = writeln!(csv, "{i},{best},{},{p:.6}", labels[i]);
                }
            }
            Targets::Masks(_) => {
                let n = te.height * te.width;
                let kagn::harness::BatchTarget::Masks(m) = &b.target else { unreachable!() };
                for (r, &i) in chunk.iter().enumerate() {
                    let p = &out.data()[r * n..(r + 1) * n];
                    let mm = &m.data()[r * n..(r + 1) * n];
                    let (inter, pa, ma) = kagn::harness::metrics::overlap(p, mm, 0.5);
                    let _ = writeln!(
                        csv,
                        "{i},{:.6},{:.6},{:.6}",
                        kagn::harness::metrics::iou(inter, pa, ma),
                        kagn::harness::metrics::f1(inter, pa, ma),
                        pa as f64 / n as f64
                    );
                }
            }
        }
    }
    std::fs::write(&a.out, csv).map_err(|e| usage(format!("cannot write {}: {e}", a.out.display())))?;
    println!("wrote {} predictions to {}", te.len(), a.out.display());
    Ok(())
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> CmdResult {
    let d = data::synth_shapes(a.count, a.size, cli.seed.unwrap_or(0));
    std::fs::create_dir_all(&a.out).map_err(|e| usage(e.to_string()))?;
    let dims = [a.count as u32, a.size as u32, a.size as u32];
    let mut img = Vec::with_capacity(16 + d.images.len() * 4);
    img.extend_from_slice(&0x0000_0D03u32.to_be_bytes());
    let mut mask = Vec::with_capacity(16 + d.images.len());
    mask.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    for v in dims {
        img.extend_from_slice(&v.to_be_bytes());
        mask.extend_from_slice(&v.to_be_bytes());
    }
    for v in &d.images {
        img.extend_from_slice(&v.to_be_bytes());
    }
    let Targets::Masks(m) = &d.targets else { unreachable!("shapes have masks") };
    mask.extend(m.iter().map(|&v| v as u8));
    let write = |name: &str, bytes: &[u8]| {
        std::fs::write(a.out.join(name), bytes).map_err(|e| usage(format!("cannot write {name}: {e}")))
    };
    write("shapes-images-idx3-float", &img)?;
    write("shapes-masks-idx3-ubyte", &mask)?;
    println!("wrote {} images of {}x{} to {}", a.count, a.size, a.size, a.out.display());
    Ok(())
}
