//! `catsplit` command-line front end.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
//! Logs go to stderr, one summary line to stdout, full results to files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use catsplit::alignment::{build_training_pairs, train_alignment};
use catsplit::dataset::FeatureDataset;
use catsplit::doc::{ensure_dir, read_toml};
use catsplit::editor::vlm_baseline_assign;
use catsplit::eval::{evaluate_split, generality_from_predictions, locality_from_predictions};
use catsplit::synth::oracle_eval;
use catsplit::tensor::load_tensor;
use catsplit::{
    aggregate, build_dictionary, finetune_split, generate, split_head, AlignConfig,
    AlignmentModel, ClassifierHead, Composition, EditMethod, EditedHead, FinetuneConfig,
    ModifierDictionary, Scope, SplitDeps, SplitMetrics, SplitSpec, SynthConfig, Taxonomy,
    TextEmbeddingTable,
};

#[derive(Parser)]
#[command(name = "catsplit", version, about = "Split coarse categories of a trained classifier head")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Taxonomy document checks.
    #[command(subcommand)]
    Taxonomy(TaxonomyCmd),
    /// Modifier dictionary commands.
    #[command(subcommand)]
    Dict(DictCmd),
    /// Zero-shot split of one coarse category.
    Split(SplitArgs),
    /// Modifier alignment commands.
    #[command(subcommand)]
    Align(AlignCmd),
    /// Low-shot fine-tuning of a split head.
    Finetune(FinetuneArgs),
    /// Generality and locality of edited heads.
    Eval(EvalArgs),
    /// Reference baselines.
    #[command(subcommand)]
    Baseline(BaselineCmd),
    /// Synthetic benchmark commands.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Generate, split and evaluate in one seeded run.
    Pipeline(PipelineArgs),
}

#[derive(Subcommand)]
enum TaxonomyCmd {
    /// Validate a taxonomy, optionally against a head and an embedding table.
    Validate(ValidateArgs),
}

#[derive(Subcommand)]
enum DictCmd {
    /// Mine modifier vectors from a head.
    Build(DictArgs),
}

#[derive(Subcommand)]
enum AlignCmd {
    /// Train the text-to-modifier regressor.
    Train(AlignArgs),
}

#[derive(Subcommand)]
enum BaselineCmd {
    /// Reassign coarse predictions by video-text similarity.
    Vlm(VlmArgs),
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Write one synthetic benchmark instance.
    Gen(SynthArgs),
}

#[derive(Args)]
struct HeadArgs {
    /// Head manifest (.toml) or bare weight tensor (.cspl, rows in taxonomy row order).
    #[arg(long)]
    head: PathBuf,
    /// Bias tensor for a bare .cspl head.
    #[arg(long)]
    bias: Option<PathBuf>,
}

#[derive(Args)]
struct DepArgs {
    /// Modifier dictionary directory.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Text embedding table manifest.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Alignment model directory.
    #[arg(long)]
    alignment: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    taxonomy: PathBuf,
    /// Head whose labels must equal the taxonomy row order.
    #[arg(long)]
    head: Option<PathBuf>,
    /// Embedding table that must contain every text the methods look up.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct DictArgs {
    #[arg(long)]
    taxonomy: PathBuf,
    #[command(flatten)]
    head: HeadArgs,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    taxonomy: PathBuf,
    #[command(flatten)]
    head: HeadArgs,
    /// Coarse category to split; optional when the taxonomy declares one split.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    method: EditMethod,
    #[command(flatten)]
    deps: DepArgs,
    /// Required for the random method.
    #[arg(long)]
    seed: Option<u64>,
    /// Output head manifest.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    taxonomy: PathBuf,
    #[command(flatten)]
    head: HeadArgs,
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Training pairs: mod or mod+cat.
    #[arg(long, default_value = "mod+cat")]
    composition: Composition,
    #[arg(long)]
    seed: u64,
    /// TOML file with alignment settings; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    taxonomy: PathBuf,
    #[command(flatten)]
    head: HeadArgs,
    #[arg(long)]
    split: Option<String>,
    /// Training features labelled with subcategory ids.
    #[arg(long)]
    train: PathBuf,
    /// Optional validation set used for early stopping.
    #[arg(long)]
    val: Option<PathBuf>,
    #[command(flatten)]
    deps: DepArgs,
    #[arg(long)]
    seed: u64,
    /// TOML file with fine-tuning settings; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    shots: Option<usize>,
    /// new-only or head+new.
    #[arg(long)]
    scope: Option<Scope>,
    /// Initialization method for the new rows.
    #[arg(long)]
    init: Option<EditMethod>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    taxonomy: PathBuf,
    /// Original head.
    #[command(flatten)]
    head: HeadArgs,
    /// Edited head manifests; each is matched to the split it realizes.
    #[arg(long, required = true, num_args = 1..)]
    edited: Vec<PathBuf>,
    /// Evaluation features with ground-truth labels.
    #[arg(long)]
    data: PathBuf,
    /// Method name recorded in the report; defaults to the edited head's provenance.
    #[arg(long)]
    method: Option<String>,
    /// Seed recorded in the report.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output report.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct VlmArgs {
    #[arg(long)]
    taxonomy: PathBuf,
    #[command(flatten)]
    head: HeadArgs,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    data: PathBuf,
    /// One video embedding per data row, in the text embedding space.
    #[arg(long)]
    video_embeddings: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Run configuration; its [synth] table is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    method: Option<EditMethod>,
    #[arg(long)]
    composition: Option<Composition>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Output directory; the report is written to report.toml inside it.
    #[arg(short, long)]
    out: PathBuf,
}

/// Run configuration shared by `synth gen` and `pipeline`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    method: EditMethod,
    composition: Composition,
    synth: SynthConfig,
    align: AlignConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: EditMethod::Retrieval,
            composition: Composition::ModCat,
            synth: SynthConfig::default(),
            align: AlignConfig::default(),
        }
    }
}

fn load_config<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> anyhow::Result<T> {
    Ok(match path {
        Some(p) => read_toml(p)?,
        None => T::default(),
    })
}

fn load_head(args: &HeadArgs, tax: &Taxonomy) -> anyhow::Result<ClassifierHead> {
    let head = if args.head.extension().is_some_and(|e| e == "cspl") {
        ClassifierHead::load_tensor_with_labels(&args.head, args.bias.as_deref(), tax.row_order.clone())?
    } else {
        if args.bias.is_some() {
            bail!("--bias only applies to a bare .cspl head");
        }
        ClassifierHead::load(&args.head)?
    };
    Ok(head)
}

fn pick_split<'t>(tax: &'t Taxonomy, id: Option<&str>) -> anyhow::Result<&'t SplitSpec> {
    match id {
        Some(id) => tax
            .split(id)
            .ok_or_else(|| anyhow!("taxonomy declares no split of {id:?}")),
        None if tax.splits.len() == 1 => Ok(&tax.splits[0]),
        None => bail!(
            "taxonomy declares {} splits; choose one with --split",
            tax.splits.len()
        ),
    }
}

struct LoadedDeps {
    dictionary: Option<ModifierDictionary>,
    embeddings: Option<TextEmbeddingTable>,
    alignment: Option<AlignmentModel>,
}

impl LoadedDeps {
    fn load(args: &DepArgs) -> anyhow::Result<Self> {
        Ok(Self {
            dictionary: args.dict.as_ref().map(ModifierDictionary::load).transpose()?,
            embeddings: args.embeddings.as_ref().map(TextEmbeddingTable::load).transpose()?,
            alignment: args.alignment.as_ref().map(AlignmentModel::load).transpose()?,
        })
    }

    fn deps(&self) -> SplitDeps<'_> {
        SplitDeps {
            dictionary: self.dictionary.as_ref(),
            embeddings: self.embeddings.as_ref(),
            alignment: self.alignment.as_ref(),
        }
    }
}

fn validate(args: &ValidateArgs) -> anyhow::Result<String> {
    let tax = Taxonomy::load(&args.taxonomy)?;
    if let Some(path) = &args.head {
        let head = load_head(
            &HeadArgs {
                head: path.clone(),
                bias: None,
            },
            &tax,
        )?;
        if head.labels() != tax.row_order.as_slice() {
            bail!("head labels do not match the taxonomy row order");
        }
    }
    if let Some(path) = &args.embeddings {
        let emb = TextEmbeddingTable::load(path)?;
        let mut needed: Vec<String> = tax.categories.iter().map(|c| c.text.clone()).collect();
        for g in &tax.groups {
            needed.push(g.base_text.clone());
            for m in &g.members {
                needed.push(tax.modifier_text(m)?);
            }
        }
        for s in &tax.splits {
            for sub in &s.subcategories {
                needed.push(sub.full_text.clone());
                needed.push(sub.modifier_text.clone());
            }
        }
        let missing: Vec<&String> = needed.iter().filter(|k| !emb.contains(k)).collect();
        if !missing.is_empty() {
            bail!("embedding table lacks {} key(s), first {:?}", missing.len(), missing[0]);
        }
    }
    Ok(format!(
        "ok: {} categories, {} groups, {} splits",
        tax.categories.len(),
        tax.groups.len(),
        tax.splits.len()
    ))
}

fn dict_build(args: &DictArgs) -> anyhow::Result<String> {
    let tax = Taxonomy::load(&args.taxonomy)?;
    let head = load_head(&args.head, &tax)?;
    let dict = build_dictionary(&head, &tax)?;
    dict.save(&args.out)?;
    Ok(format!(
        "dictionary: {} entries from {} groups -> {}",
        dict.len(),
        dict.coarse_vectors.len(),
        args.out.display()
    ))
}

fn split(args: &SplitArgs) -> anyhow::Result<String> {
    let tax = Taxonomy::load(&args.taxonomy)?;
    let head = load_head(&args.head, &tax)?;
    let spec = pick_split(&tax, args.split.as_deref())?;
    let seed = match (args.method, args.seed) {
        (EditMethod::Random, None) => bail!("--seed is required for method random"),
        (_, s) => s.unwrap_or(0),
    };
    let deps = LoadedDeps::load(&args.deps)?;
    deps.deps().check(args.method)?;
    let edited = split_head(&head, spec, args.method, &deps.deps(), seed)?;
    edited.save(&args.out)?;
    Ok(format!(
        "split {} into {} rows with {} -> {}",
        spec.coarse_id,
        spec.k(),
        args.method,
        args.out.display()
    ))
}

fn align_train(args: &AlignArgs) -> anyhow::Result<String> {
    let tax = Taxonomy::load(&args.taxonomy)?;
    let head = load_head(&args.head, &tax)?;
    let dict = ModifierDictionary::load(&args.dict)?;
    let emb = TextEmbeddingTable::load(&args.embeddings)?;
    let mut cfg: AlignConfig = load_config(args.config.as_deref())?;
    cfg.seed = args.seed;
    cfg.hidden = args.hidden.unwrap_or(cfg.hidden);
    cfg.lr = args.lr.unwrap_or(cfg.lr);
    cfg.weight_decay = args.weight_decay.unwrap_or(cfg.weight_decay);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.max_epochs = args.epochs.unwrap_or(cfg.max_epochs);
    let pairs = build_training_pairs(&dict, &head, &tax, &emb, args.composition)?;
    eprintln!("training on {} {} pairs", pairs.len(), args.composition);
    let (model, log) = train_alignment(&pairs, &cfg)?;
    model.save(&args.out, &cfg, args.composition)?;
    let last = log.epochs.last().map_or(0.0, |e| e.metric);
    Ok(format!(
        "alignment: {} epochs, mean cosine {last:.4} -> {}",
        log.epochs.len(),
        args.out.display()
    ))
}

fn finetune(args: &FinetuneArgs) -> anyhow::Result<String> {
    let tax = Taxonomy::load(&args.taxonomy)?;
    let head = load_head(&args.head, &tax)?;
    let spec = pick_split(&tax, args.split.as_deref())?;
    let train = FeatureDataset::load(&args.train)?;
    let val = args.val.as_ref().map(FeatureDataset::load).transpose()?;
    let mut cfg: FinetuneConfig = load_config(args.config.as_deref())?;
    cfg.seed = args.seed;
    cfg.shots = args.shots.unwrap_or(cfg.shots);
    cfg.scope = args.scope.unwrap_or(cfg.scope);
    cfg.init = args.init.unwrap_or(cfg.init);
    cfg.lr = args.lr.unwrap_or(cfg.lr);
    cfg.weight_decay = args.weight_decay.unwrap_or(cfg.weight_decay);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.max_epochs = args.epochs.unwrap_or(cfg.max_epochs);
    let deps = LoadedDeps::load(&args.deps)?;
    let (edited, log) = finetune_split(&head, spec, &train, val.as_ref(), &cfg, &deps.deps())?;
    edited.save(&args.out)?;
    Ok(format!(
        "finetune {} ({} init, {}): {} epochs{} -> {}",
        spec.coarse_id,
        cfg.init,
        cfg.scope,
        log.epochs.len(),
        if log.stopped_early { ", stopped early" } else { "" },
        args.out.display()
    ))
}

/// The split an edited head realizes: its coarse row is gone and every subcategory is present.
fn realized_split<'t>(tax: &'t Taxonomy, edited: &EditedHead) -> anyhow::Result<&'t SplitSpec> {
    let labels = edited.labels();
    tax.splits
        .iter()
        .find(|s| {
            !labels.contains(&s.coarse_id) && s.subcategory_ids().all(|id| labels.iter().any(|l| l == id))
        })
        .ok_or_else(|| anyhow!("edited head matches no split of the taxonomy"))
}

fn eval(args: &EvalArgs) -> anyhow::Result<String> {
    let tax = Taxonomy::load(&args.taxonomy)?;
    let original = load_head(&args.head, &tax)?;
    let data = FeatureDataset::load(&args.data)?;
    let mut rows = Vec::with_capacity(args.edited.len());
    for path in &args.edited {
        let edited = EditedHead::load(path)?;
        let spec = realized_split(&tax, &edited)?;
        let method = match (&args.method, edited.provenance.first()) {
            (Some(m), _) => m.clone(),
            (None, Some(p)) => p.method.to_string(),
            (None, None) => "unknown".to_string(),
        };
        let m = evaluate_split(&original, &edited.head, spec, &data, &method, args.seed)
            .with_context(|| format!("evaluating {}", path.display()))?;
        eprintln!(
            "{}: gen {:.1} loc {:.1}",
            spec.coarse_id,
            100.0 * m.generality,
            100.0 * m.locality
        );
        rows.push(m);
    }
    let report = aggregate(&rows, Some(&tax))?;
    report.save(&args.out)?;
    Ok(report.summary())
}

fn baseline_vlm(args: &VlmArgs) -> anyhow::Result<String> {
    let tax = Taxonomy::load(&args.taxonomy)?;
    let head = load_head(&args.head, &tax)?;
    let spec = pick_split(&tax, args.split.as_deref())?;
    let data = FeatureDataset::load(&args.data)?;
    let video = load_tensor(&args.video_embeddings)?;
    let emb = TextEmbeddingTable::load(&args.embeddings)?;
    let base = data
        .iter()
        .map(|(x, _)| head.predict(x).map(str::to_string))
        .collect::<catsplit::Result<Vec<_>>>()?;
    let ids: Vec<String> = spec.subcategory_ids().map(str::to_string).collect();
    let texts: Vec<String> = spec.subcategories.iter().map(|s| s.full_text.clone()).collect();
    let assigned = vlm_baseline_assign(&base, &video, &ids, &texts, &emb, &spec.coarse_id)?;
    let g = generality_from_predictions(&assigned, data.labels(), spec)?;
    let (e, o) = locality_from_predictions(&base, &assigned, data.labels(), head.labels(), spec)?;
    let m = SplitMetrics::new(
        &spec.coarse_id,
        "vlm",
        0,
        (g.correct as f64 / g.total as f64, g.total),
        (e.correct as f64 / o.correct as f64, o.total),
    );
    let report = aggregate(&[m], Some(&tax))?;
    report.save(&args.out)?;
    Ok(report.summary())
}

fn synth_gen(args: &SynthArgs) -> anyhow::Result<String> {
    let run: RunConfig = load_config(args.config.as_deref())?;
    let mut cfg = run.synth;
    cfg.seed = args.seed;
    cfg.sigma = args.sigma.unwrap_or(cfg.sigma);
    let bundle = generate(&cfg)?;
    bundle.save(&args.out)?;
    Ok(format!(
        "synthetic instance seed {}: {} categories, oracle accuracy {:.4} -> {}",
        cfg.seed,
        bundle.taxonomy.categories.len(),
        bundle.oracle_accuracy,
        args.out.display()
    ))
}

fn pipeline(args: &PipelineArgs) -> anyhow::Result<String> {
    let mut run: RunConfig = load_config(args.config.as_deref())?;
    run.synth.seed = args.seed;
    run.align.seed = args.seed;
    run.method = args.method.unwrap_or(run.method);
    run.composition = args.composition.unwrap_or(run.composition);
    run.synth.sigma = args.sigma.unwrap_or(run.synth.sigma);

    eprintln!("generating synthetic instance, seed {}", args.seed);
    let bundle = generate(&run.synth)?;
    let out = &args.out;
    ensure_dir(out)?;
    bundle.save(out.join("bench"))?;

    let dict = build_dictionary(&bundle.head, &bundle.taxonomy)?;
    dict.save(out.join("dict"))?;
    eprintln!("dictionary: {} entries", dict.len());

    let model = if run.method == EditMethod::Alignment {
        let pairs = build_training_pairs(
            &dict,
            &bundle.head,
            &bundle.taxonomy,
            &bundle.embeddings,
            run.composition,
        )?;
        let (model, log) = train_alignment(&pairs, &run.align)?;
        model.save(out.join("alignment"), &run.align, run.composition)?;
        eprintln!("alignment: {} epochs", log.epochs.len());
        Some(model)
    } else {
        None
    };
    let deps = SplitDeps {
        dictionary: Some(&dict),
        embeddings: Some(&bundle.embeddings),
        alignment: model.as_ref(),
    };
    let spec = bundle.split();
    let edited = split_head(&bundle.head, spec, run.method, &deps, args.seed)?;
    edited.save(out.join("edited.toml"))?;

    let m = evaluate_split(
        &bundle.head,
        &edited.head,
        spec,
        &bundle.test,
        run.method.as_str(),
        args.seed,
    )?;
    eprintln!("gap to oracle: {:+.4}", oracle_eval(&bundle, &edited.head)?);
    let report = aggregate(&[m], Some(&bundle.taxonomy))?;
    report.save(out.join("report.toml"))?;
    Ok(report.summary())
}

fn run(cli: &Cli) -> anyhow::Result<String> {
    match &cli.command {
        Command::Taxonomy(TaxonomyCmd::Validate(a)) => validate(a),
        Command::Dict(DictCmd::Build(a)) => dict_build(a),
        Command::Split(a) => split(a),
        Command::Align(AlignCmd::Train(a)) => align_train(a),
        Command::Finetune(a) => finetune(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(BaselineCmd::Vlm(a)) => baseline_vlm(a),
        Command::Synth(SynthCmd::Gen(a)) => synth_gen(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

/// 2 for I/O failures anywhere in the chain, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<catsplit::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

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
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
