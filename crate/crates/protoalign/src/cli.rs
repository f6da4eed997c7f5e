//! Command-line surface: `synth`, `build-dataset`, `train`, `eval` and `gap`.
//!
//! Each command validates its input paths, computes everything in memory and
//! then writes its outputs atomically into `--out`. `report.json` carries the
//! resolved configuration, the seed and the metrics; wall time goes to
//! `timing.json` so the report bytes depend only on config and seed.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use protoalign_core::aligners::{
    apply_gap_transform, fit_csa, fit_linear, fit_mlp, fit_mlp_projected, FEWSHOT_FINETUNE_EPOCHS,
};
use protoalign_core::classify::KnnMetric;
use protoalign_core::dataset::{build_weight_dataset, union_datasets};
use protoalign_core::gapstats::{
    centroid_permutation_test, cosine_distribution_summary, linear_probe_separability,
    CosineSummary, PermutationTestResult, ProbeResult, HISTOGRAM_BINS,
};
use protoalign_core::metrics::{evaluate_retrieval, mutual_knn_alignment};
use protoalign_core::protocol::{
    compare_heads, run_fewshot_repeat, split_per_class, zero_shot_classify, FewShotProtocol,
};
use protoalign_core::synth::{generate_collapsed, Geometry, SynthSpec};
use protoalign_core::{
    Aligner, AlignmentDataset, ClassHead, EmbeddingMatrix, GapTransform, Loss, Matrix, Origin,
    TrainConfig,
};
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::{add_checkpoint, load_checkpoint};
use crate::emb1::{self, encode, encode_labels, head_meta, load_class_head, load_embeddings, load_labelled};
use crate::output::Outputs;
use crate::report::{opt_cell, Csv, Report, Timing, REPORT_FILE, TIMING_FILE};
use crate::stats::{mean_std, paired_t_test};

pub const SEED_ENV: &str = "PROTOALIGN_SEED";

#[derive(Debug, Parser)]
#[command(name = "protoalign", version, about = "Align vision and text embeddings using recycled classifier heads")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a collapsed synthetic fixture (features, head, class texts).
    Synth(SynthArgs),
    /// Assemble an alignment dataset from a head and/or image-text pairs.
    BuildDataset(BuildArgs),
    /// Fit an aligner and write a checkpoint.
    Train(TrainArgs),
    /// Run an evaluation protocol.
    Eval(EvalArgs),
    /// Modality-gap battery between two embedding groups.
    Gap(GapArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryArg {
    SimplexEtf,
    RandomGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    Euclidean,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mlp,
    Csa,
    Text2cpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub per_class: usize,
    /// Std of the feature and text noise.
    #[arg(long)]
    pub sigma: f64,
    /// Std of the noise added to head rows.
    #[arg(long, default_value_t = 0.0)]
    pub head_noise: f64,
    #[arg(long, value_enum, default_value_t = GeometryArg::SimplexEtf)]
    pub geometry: GeometryArg,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// Where the alignment pairs come from.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct DatasetArgs {
    /// EMB1 file with one head row per class.
    #[arg(long)]
    pub weights_head: Option<PathBuf>,
    /// JSON `{"names": [...], "bias": [...]}` for the head.
    #[arg(long)]
    pub weights_names: Option<PathBuf>,
    /// Text embeddings of the class names, in head row order.
    #[arg(long)]
    pub class_texts: Option<PathBuf>,
    #[arg(long)]
    pub pairs_img: Option<PathBuf>,
    #[arg(long)]
    pub pairs_txt: Option<PathBuf>,
    /// Train on the union of head pairs and image-text pairs.
    #[arg(long)]
    pub augment: bool,
    /// A directory written by `build-dataset`.
    #[arg(long, conflicts_with_all = ["weights_head", "weights_names", "class_texts", "pairs_img", "pairs_txt"])]
    pub dataset: Option<PathBuf>,
    /// L2-normalize every input row first.
    #[arg(long)]
    pub normalize: bool,
    /// Centre head rows on the image mean and rescale them to unit norm.
    #[arg(long)]
    pub center_rescale: bool,
    /// Images whose mean drives `--center-rescale`; defaults to `--pairs-img`.
    #[arg(long)]
    pub gap_images: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub method: Method,
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    /// Shared dimension for csa; defaults to min(200, d, d̄, m−1).
    #[arg(long)]
    pub csa_dim: Option<usize>,
    /// Train a d×d projection of the head rows jointly with the mlp.
    #[arg(long)]
    pub gap_projection: bool,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(subcommand)]
    pub task: EvalTask,
}

#[derive(Debug, Subcommand)]
pub enum EvalTask {
    /// Image→text mAP and P@K, text→image P@1.
    Retrieval(RetrievalArgs),
    /// Zero-shot classification against class text prompts.
    Zeroshot(ZeroshotArgs),
    /// Sequential few-shot fit against nearest-centroid and k-NN baselines.
    Fewshot(FewshotArgs),
    /// Mutual k-NN alignment between two index-paired spaces.
    Mnn(MnnArgs),
    /// Modality-gap battery (same as the `gap` command).
    Gap(GapArgs),
    /// Linear head versus cosine head on labelled features.
    Heads(HeadsArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RetrievalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub texts: PathBuf,
    /// Texts `c·i .. c·(i+1)` describe image `i`.
    #[arg(long, default_value_t = 1)]
    pub captions_per_image: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ZeroshotArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    /// One class name per image, one per line.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub class_texts: PathBuf,
    /// Class names in `--class-texts` row order, one per line. Without it
    /// classes are numbered by first appearance in `--labels`.
    #[arg(long)]
    pub class_names: Option<PathBuf>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FewshotArgs {
    #[arg(long)]
    pub weights_head: PathBuf,
    #[arg(long)]
    pub weights_names: PathBuf,
    #[arg(long)]
    pub class_texts: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub shots: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Rows per class reserved for drawing shots; the rest are the test set.
    #[arg(long, default_value_t = 10)]
    pub pool_per_class: usize,
    /// Neighbours for the k-NN baseline; defaults to `--shots`.
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
    pub knn_metric: MetricArg,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = FEWSHOT_FINETUNE_EPOCHS)]
    pub finetune_epochs: usize,
    #[arg(long, default_value_t = 5e-3)]
    pub lr: f64,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MnnArgs {
    #[arg(long)]
    pub space_a: PathBuf,
    #[arg(long)]
    pub space_b: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "3,5,10")]
    pub k: Vec<usize>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GapArgs {
    /// Typically the head rows.
    #[arg(long)]
    pub group_a: PathBuf,
    /// Typically the image features.
    #[arg(long)]
    pub group_b: PathBuf,
    #[arg(long, default_value_t = 999)]
    pub n_perm: usize,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// L2-normalize rows before any statistic.
    #[arg(long)]
    pub normalize: bool,
    /// Also report the battery after centre-and-rescale of group a.
    #[arg(long)]
    pub center_rescale: bool,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HeadsArgs {
    #[arg(long)]
    pub weights_head: PathBuf,
    #[arg(long)]
    pub weights_names: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// L2-normalize features before the linear head.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// Runs one command; returns the files written.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let start = Instant::now();
    let (name, out_dir, mut outputs) = match cli.command {
        Command::Synth(a) => ("synth", a.out.clone(), cmd_synth(&a)?),
        Command::BuildDataset(a) => ("build-dataset", a.out.clone(), cmd_build(&a)?),
        Command::Train(a) => ("train", a.out.clone(), cmd_train(&a)?),
        Command::Gap(a) => ("gap", a.out.clone(), cmd_gap(&a, "gap")?),
        Command::Eval(e) => match e.task {
            EvalTask::Retrieval(a) => ("eval retrieval", a.out.clone(), cmd_retrieval(&a)?),
            EvalTask::Zeroshot(a) => ("eval zeroshot", a.out.clone(), cmd_zeroshot(&a)?),
            EvalTask::Fewshot(a) => ("eval fewshot", a.out.clone(), cmd_fewshot(&a)?),
            EvalTask::Mnn(a) => ("eval mnn", a.out.clone(), cmd_mnn(&a)?),
            EvalTask::Gap(a) => ("eval gap", a.out.clone(), cmd_gap(&a, "eval gap")?),
            EvalTask::Heads(a) => ("eval heads", a.out.clone(), cmd_heads(&a)?),
        },
    };
    outputs.add_json(
        TIMING_FILE,
        &Timing {
            command: name.to_string(),
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    outputs.commit(&out_dir)
}

fn require_files<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            bail!("input file {} does not exist", p.display());
        }
    }
    Ok(())
}

fn normalize_if(e: EmbeddingMatrix, on: bool) -> Result<EmbeddingMatrix> {
    Ok(if on { e.normalized()? } else { e })
}

fn normalize_matrix_if(m: &Matrix, on: bool) -> Result<Matrix> {
    Ok(if on { m.normalized_rows("input row")? } else { m.clone() })
}

fn add_report<C: Serialize, M: Serialize>(
    out: &mut Outputs,
    command: &str,
    config: &C,
    seed: u64,
    metrics: &M,
) -> Result<()> {
    out.add_json(REPORT_FILE, &Report::new(command, config, seed, metrics)?)
}

fn cmd_synth(a: &SynthArgs) -> Result<Outputs> {
    let spec = SynthSpec {
        classes: a.classes,
        dim: a.dim,
        per_class: a.per_class,
        noise_sigma: a.sigma,
        head_noise: a.head_noise,
        seed: a.seed,
        geometry: match a.geometry {
            GeometryArg::SimplexEtf => Geometry::SimplexEtf,
            GeometryArg::RandomGaussian => Geometry::RandomGaussian,
        },
    };
    let g = generate_collapsed(&spec)?;
    let mut out = Outputs::new();
    out.add("features.emb", encode(g.features.matrix())?);
    out.add("features.labels", encode_labels(&g.features).unwrap_or_default());
    out.add("head.emb", encode(g.head.weights())?);
    out.add_json("head.json", &head_meta(&g.head))?;
    out.add("texts.emb", encode(g.texts.matrix())?);
    out.add("texts.labels", encode_labels(&g.texts).unwrap_or_default());
    let files: Vec<String> = out.names().map(str::to_string).collect();
    add_report(
        &mut out,
        "synth",
        a,
        a.seed,
        &json!({
            "files": files,
            "n_features": g.features.n(),
            "classes": g.head.num_classes(),
            "dim": g.head.dim(),
            "head_scales": g.scales,
        }),
    )?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Weights,
    Pairs,
    Augmented,
    Loaded,
}

/// Resolves dataset flags into an alignment dataset.
pub fn assemble_dataset(d: &DatasetArgs) -> Result<(AlignmentDataset, Regime)> {
    if let Some(dir) = &d.dataset {
        return Ok((load_dataset_dir(dir)?, Regime::Loaded));
    }
    let head_flags = [&d.weights_head, &d.weights_names, &d.class_texts];
    let n_head = head_flags.iter().filter(|p| p.is_some()).count();
    if n_head != 0 && n_head != 3 {
        bail!("--weights-head, --weights-names and --class-texts must be given together");
    }
    if d.pairs_img.is_some() != d.pairs_txt.is_some() {
        bail!("--pairs-img and --pairs-txt must be given together");
    }
    let (has_head, has_pairs) = (n_head == 3, d.pairs_img.is_some());
    let regime = match (has_head, has_pairs, d.augment) {
        (false, false, _) => bail!("no training data: give the head flags, the pair flags, or --dataset"),
        (true, false, false) => Regime::Weights,
        (false, true, false) => Regime::Pairs,
        (true, true, true) => Regime::Augmented,
        (true, true, false) => {
            bail!("both head and pair inputs were given; pass --augment to train on their union")
        }
        (_, _, true) => bail!("--augment needs both head and pair inputs"),
    };
    let gap_images = if d.center_rescale {
        match d.gap_images.as_ref().or(d.pairs_img.as_ref()) {
            Some(p) => Some(p.clone()),
            None => bail!("--center-rescale needs --gap-images or --pairs-img"),
        }
    } else {
        None
    };
    require_files(
        head_flags
            .iter()
            .copied()
            .chain([&d.pairs_img, &d.pairs_txt, &gap_images])
            .flatten()
            .map(PathBuf::as_path),
    )?;
    if d.center_rescale && !has_head {
        bail!("--center-rescale applies to head rows and needs the head flags");
    }

    let mut parts = Vec::new();
    if has_head {
        let head = load_class_head(d.weights_head.as_ref().unwrap(), d.weights_names.as_ref().unwrap())?;
        let texts = normalize_if(load_embeddings(d.class_texts.as_ref().unwrap())?, d.normalize)?;
        let mut rows = normalize_if(head.rows_as_embeddings(), d.normalize)?;
        if let Some(p) = &gap_images {
            let images = normalize_if(load_embeddings(p)?, d.normalize)?;
            rows = apply_gap_transform(&GapTransform::center_rescale_from(&rows, &images), &rows)?;
        }
        let head = ClassHead::new(rows.matrix().clone(), Some(head.bias().to_vec()), head.class_names().to_vec())?;
        parts.push(build_weight_dataset(&head, &texts)?);
    }
    if has_pairs {
        let images = normalize_if(load_embeddings(d.pairs_img.as_ref().unwrap())?, d.normalize)?;
        let texts = normalize_if(load_embeddings(d.pairs_txt.as_ref().unwrap())?, d.normalize)?;
        parts.push(AlignmentDataset::from_pairs(&images, &texts)?);
    }
    // pairs precede weights in the union
    let ds = match parts.len() {
        1 => parts.pop().unwrap(),
        _ => union_datasets(&parts[1], &parts[0])?,
    };
    Ok((ds, regime))
}

fn load_dataset_dir(dir: &Path) -> Result<AlignmentDataset> {
    let (sp, tp, op) = (dir.join("source.emb"), dir.join("target.emb"), dir.join("origin.txt"));
    require_files([sp.as_path(), tp.as_path(), op.as_path()])?;
    let tags = std::fs::read_to_string(&op).with_context(|| format!("reading {}", op.display()))?;
    let origin = tags
        .lines()
        .enumerate()
        .map(|(i, l)| {
            Origin::parse(l.trim()).with_context(|| format!("{}, line {}: unknown tag {l:?}", op.display(), i + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignmentDataset::new(emb1::load_matrix(&sp)?, emb1::load_matrix(&tp)?, origin)?)
}

#[derive(Debug, Serialize)]
struct DatasetSummary {
    regime: Regime,
    m: usize,
    pairs: usize,
    weights: usize,
    pair_fraction: f64,
    source_dim: usize,
    target_dim: usize,
}

fn summarize(ds: &AlignmentDataset, regime: Regime) -> DatasetSummary {
    DatasetSummary {
        regime,
        m: ds.len(),
        pairs: ds.count(Origin::Pair),
        weights: ds.count(Origin::Weight),
        pair_fraction: ds.pair_fraction(),
        source_dim: ds.source_dim(),
        target_dim: ds.target_dim(),
    }
}

fn cmd_build(a: &BuildArgs) -> Result<Outputs> {
    let (ds, regime) = assemble_dataset(&a.data)?;
    let mut out = Outputs::new();
    out.add("source.emb", encode(ds.source())?);
    out.add("target.emb", encode(ds.target())?);
    let tags: String = ds.origin().iter().map(|o| format!("{}\n", o.as_str())).collect();
    out.add("origin.txt", tags);
    add_report(&mut out, "build-dataset", a, a.seed, &summarize(&ds, regime))?;
    Ok(out)
}

fn cmd_train(a: &TrainArgs) -> Result<Outputs> {
    let (ds, regime) = assemble_dataset(&a.data)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        weight_decay: a.weight_decay,
        loss: if a.method == Method::Text2cpts {
            Loss::Mse
        } else {
            Loss::Cosine
        },
        ..TrainConfig::with_seed(a.seed)
    };
    if a.gap_projection && a.method != Method::Mlp {
        bail!("--gap-projection is only available for mlp");
    }
    let mut out = Outputs::new();
    let mut extra = json!({});
    let (aligner, trace) = match a.method {
        Method::Mlp if a.gap_projection => {
            let fit = fit_mlp_projected(&ds, &cfg)?;
            out.add("projection.emb", encode(&fit.projection)?);
            (Aligner::Mlp(fit.mlp), Some(fit.loss_trace))
        }
        Method::Mlp => {
            let fit = fit_mlp(&ds, &cfg)?;
            (Aligner::Mlp(fit.model), Some(fit.loss_trace))
        }
        Method::Text2cpts => {
            let fit = fit_linear(&ds, &cfg)?;
            (Aligner::Linear(fit.model), Some(fit.loss_trace))
        }
        Method::Csa => {
            let limit = ds.source_dim().min(ds.target_dim()).min(ds.len().saturating_sub(1));
            let s = a.csa_dim.unwrap_or(limit.min(200));
            let c = fit_csa(&ds, s)?;
            extra = json!({ "correlations": c.correlations });
            (Aligner::Csa(c), None)
        }
    };
    let trace_file = trace.as_ref().map(|_| "loss_trace.csv");
    if let Some(t) = &trace {
        let mut csv = Csv::new(&["epoch", "loss"]);
        for (e, l) in t.iter().enumerate() {
            csv.push([e.to_string(), l.to_string()]);
        }
        out.add("loss_trace.csv", csv.render());
    }
    let uses_cfg = a.method != Method::Csa;
    add_checkpoint(&mut out, &aligner, a.data.normalize, a.seed, uses_cfg.then_some(&cfg), trace_file)?;
    let metrics = json!({
        "family": aligner.family(),
        "dataset": summarize(&ds, regime),
        "final_loss": trace.as_ref().and_then(|t| t.last().copied()),
        "details": extra,
    });
    add_report(&mut out, "train", a, a.seed, &metrics)?;
    Ok(out)
}

fn cmd_retrieval(a: &RetrievalArgs) -> Result<Outputs> {
    require_files([a.images.as_path(), a.texts.as_path()])?;
    let (aligner, manifest) = load_checkpoint(&a.checkpoint)?;
    let images = normalize_matrix_if(&emb1::load_matrix(&a.images)?, manifest.normalize)?;
    let texts = normalize_matrix_if(&emb1::load_matrix(&a.texts)?, manifest.normalize)?;
    let c = a.captions_per_image;
    if c == 0 || texts.rows() != images.rows() * c {
        bail!(
            "{} texts cannot be split into {c} captions for each of {} images",
            texts.rows(),
            images.rows()
        );
    }
    let relevance: Vec<Vec<usize>> = (0..images.rows()).map(|i| (i * c..(i + 1) * c).collect()).collect();
    let s = evaluate_retrieval(&aligner, &images, &texts, &relevance)?;
    let mut out = Outputs::new();
    let mut csv = Csv::new(&["family", "i2t_map", "i2t_p1", "i2t_p5", "t2i_p1"]);
    csv.push([
        aligner.family().to_string(),
        s.i2t_map.to_string(),
        s.i2t_p1.to_string(),
        opt_cell(s.i2t_p5),
        s.t2i_p1.to_string(),
    ]);
    out.add("metrics.csv", csv.render());
    let metrics = json!({
        "family": aligner.family(),
        "n_images": images.rows(),
        "n_texts": texts.rows(),
        "i2t_map": s.i2t_map,
        "i2t_p1": s.i2t_p1,
        "i2t_p5": s.i2t_p5,
        "t2i_p1": s.t2i_p1,
    });
    add_report(&mut out, "eval retrieval", a, a.seed, &metrics)?;
    Ok(out)
}

fn read_name_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).filter(|l| !l.is_empty()).collect())
}

fn cmd_zeroshot(a: &ZeroshotArgs) -> Result<Outputs> {
    require_files([a.images.as_path(), a.labels.as_path(), a.class_texts.as_path()])?;
    let (aligner, manifest) = load_checkpoint(&a.checkpoint)?;
    let names = a.class_names.as_deref().map(read_name_list).transpose()?;
    let images = normalize_if(load_labelled(&a.images, Some(&a.labels), names.as_deref())?, manifest.normalize)?;
    let texts = normalize_matrix_if(&emb1::load_matrix(&a.class_texts)?, manifest.normalize)?;
    let classes = images.names().map_or(0, <[String]>::len);
    if texts.rows() < classes {
        bail!("{} class texts for {classes} classes", texts.rows());
    }
    let z = zero_shot_classify(&aligner, &images, &texts)?;
    let mut out = Outputs::new();
    let mut csv = Csv::new(&["family", "n", "accuracy", "balanced_accuracy"]);
    csv.push([
        aligner.family().to_string(),
        images.n().to_string(),
        z.accuracy.to_string(),
        z.balanced_accuracy.to_string(),
    ]);
    out.add("metrics.csv", csv.render());
    let metrics = json!({
        "family": aligner.family(),
        "n": images.n(),
        "classes": texts.rows(),
        "accuracy": z.accuracy,
        "balanced_accuracy": z.balanced_accuracy,
    });
    add_report(&mut out, "eval zeroshot", a, a.seed, &metrics)?;
    Ok(out)
}

#[derive(Debug, Serialize)]
struct FewshotSeed {
    seed: u64,
    aligned: f64,
    ncc: f64,
    knn: f64,
}

fn cmd_fewshot(a: &FewshotArgs) -> Result<Outputs> {
    require_files([
        a.weights_head.as_path(),
        a.weights_names.as_path(),
        a.class_texts.as_path(),
        a.features.as_path(),
        a.labels.as_path(),
    ])?;
    if a.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let head = load_class_head(&a.weights_head, &a.weights_names)?;
    let head = if a.normalize {
        ClassHead::new(head.weights().normalized_rows("head row")?, Some(head.bias().to_vec()), head.class_names().to_vec())?
    } else {
        head
    };
    let names = head.class_names().to_vec();
    let texts_m = normalize_matrix_if(&emb1::load_matrix(&a.class_texts)?, a.normalize)?;
    let texts = EmbeddingMatrix::with_labels(texts_m, Some((0..names.len()).collect()), Some(names.clone()))?;
    let features = normalize_if(load_labelled(&a.features, Some(&a.labels), Some(&names))?, a.normalize)?;
    let (pool, test) = split_per_class(&features, a.pool_per_class)?;
    let protocol = FewShotProtocol {
        shots: a.shots,
        knn_k: a.knn_k,
        knn_metric: match a.knn_metric {
            MetricArg::Euclidean => KnnMetric::Euclidean,
            MetricArg::Cosine => KnnMetric::Cosine,
        },
        train: TrainConfig {
            epochs: a.epochs,
            lr: a.lr,
            ..TrainConfig::default()
        },
        finetune_epochs: a.finetune_epochs,
    };
    let mut per_seed = Vec::with_capacity(a.repeats);
    for r in 0..a.repeats {
        let seed = a.seed.wrapping_add(r as u64);
        let acc = run_fewshot_repeat(&protocol, &head, &texts, &pool, &test, seed)?;
        per_seed.push(FewshotSeed {
            seed,
            aligned: acc.aligned,
            ncc: acc.ncc,
            knn: acc.knn,
        });
    }
    let col = |f: fn(&FewshotSeed) -> f64| per_seed.iter().map(f).collect::<Vec<_>>();
    let (ours, ncc, knn) = (col(|s| s.aligned), col(|s| s.ncc), col(|s| s.knn));
    let summary = [("aligned", mean_std(&ours)), ("ncc", mean_std(&ncc)), ("knn", mean_std(&knn))];
    let mut out = Outputs::new();
    let mut csv = Csv::new(&["method", "shots", "repeats", "mean", "std"]);
    for (m, s) in &summary {
        csv.push([m.to_string(), a.shots.to_string(), a.repeats.to_string(), s.mean.to_string(), s.std.to_string()]);
    }
    out.add("metrics.csv", csv.render());
    let metrics = json!({
        "shots": a.shots,
        "repeats": a.repeats,
        "test_size": test.n(),
        "per_seed": per_seed,
        "aligned": summary[0].1,
        "ncc": summary[1].1,
        "knn": summary[2].1,
        "t_test_vs_ncc": paired_t_test(&ours, &ncc),
        "t_test_vs_knn": paired_t_test(&ours, &knn),
    });
    add_report(&mut out, "eval fewshot", a, a.seed, &metrics)?;
    Ok(out)
}

fn cmd_mnn(a: &MnnArgs) -> Result<Outputs> {
    require_files([a.space_a.as_path(), a.space_b.as_path()])?;
    if a.k.is_empty() {
        bail!("--k needs at least one value");
    }
    let sa = emb1::load_matrix(&a.space_a)?;
    let sb = emb1::load_matrix(&a.space_b)?;
    let values = a
        .k
        .iter()
        .map(|&k| mutual_knn_alignment(&sa, &sb, k))
        .collect::<protoalign_core::Result<Vec<_>>>()?;
    let mut out = Outputs::new();
    let mut csv = Csv::new(&["k", "mnn"]);
    for (k, v) in a.k.iter().zip(&values) {
        csv.push([k.to_string(), v.to_string()]);
    }
    out.add("metrics.csv", csv.render());
    add_report(&mut out, "eval mnn", a, a.seed, &json!({ "n": sa.rows(), "k": a.k, "mnn": values }))?;
    Ok(out)
}

#[derive(Debug, Serialize)]
struct PermutationSummary {
    observed: f64,
    null_mean: f64,
    null_std: f64,
    p_value: f64,
    cohens_d: f64,
    n_permutations: usize,
    seed: u64,
}

impl From<PermutationTestResult> for PermutationSummary {
    fn from(r: PermutationTestResult) -> Self {
        PermutationSummary {
            observed: r.observed,
            null_mean: r.null_mean,
            null_std: r.null_std,
            p_value: r.p_value,
            cohens_d: r.cohens_d,
            n_permutations: r.n_permutations,
            seed: r.seed,
        }
    }
}

#[derive(Debug, Serialize)]
struct ProbeSummary {
    train_fraction: f64,
    test_counts: [usize; 2],
    per_class_correct: [usize; 2],
    test_accuracy: f64,
}

impl From<ProbeResult> for ProbeSummary {
    fn from(r: ProbeResult) -> Self {
        ProbeSummary {
            train_fraction: r.train_fraction,
            test_counts: r.test_counts,
            per_class_correct: r.per_class_correct,
            test_accuracy: r.test_accuracy,
        }
    }
}

#[derive(Debug, Serialize)]
struct GapBattery {
    permutation: PermutationSummary,
    probe: ProbeSummary,
    mean_cosine_aa: f64,
    mean_cosine_bb: f64,
    mean_cosine_ab: f64,
}

fn gap_battery(a: &EmbeddingMatrix, b: &EmbeddingMatrix, args: &GapArgs) -> Result<(GapBattery, String)> {
    let permutation = centroid_permutation_test(a, b, args.n_perm, args.seed)?;
    let probe = linear_probe_separability(a, b, args.train_fraction, args.seed)?;
    let hist = cosine_distribution_summary(a, b)?;
    Ok((
        GapBattery {
            permutation: permutation.into(),
            probe: probe.into(),
            mean_cosine_aa: hist.mean_aa,
            mean_cosine_bb: hist.mean_bb,
            mean_cosine_ab: hist.mean_ab,
        },
        histogram_csv(&hist),
    ))
}

fn histogram_csv(h: &CosineSummary) -> String {
    let mut csv = Csv::new(&["bin_left", "bin_right", "count_aa", "count_bb", "count_ab"]);
    for i in 0..HISTOGRAM_BINS {
        let (l, r) = CosineSummary::bin_edges(i);
        csv.push([l.to_string(), r.to_string(), h.counts_aa[i].to_string(), h.counts_bb[i].to_string(), h.counts_ab[i].to_string()]);
    }
    csv.render()
}

fn cmd_gap(a: &GapArgs, command: &str) -> Result<Outputs> {
    require_files([a.group_a.as_path(), a.group_b.as_path()])?;
    let ga = normalize_if(load_embeddings(&a.group_a)?, a.normalize)?;
    let gb = normalize_if(load_embeddings(&a.group_b)?, a.normalize)?;
    let (raw, hist) = gap_battery(&ga, &gb, a)?;
    let mut out = Outputs::new();
    out.add("histogram.csv", hist);
    let mut metrics = json!({ "raw": raw });
    if a.center_rescale {
        let shifted = apply_gap_transform(&GapTransform::center_rescale_from(&ga, &gb), &ga)?;
        let (after, hist) = gap_battery(&shifted, &gb, a)?;
        out.add("histogram_center_rescale.csv", hist);
        metrics["center_rescale"] = serde_json::to_value(after)?;
    }
    add_report(&mut out, command, a, a.seed, &metrics)?;
    Ok(out)
}

fn cmd_heads(a: &HeadsArgs) -> Result<Outputs> {
    require_files([a.weights_head.as_path(), a.weights_names.as_path(), a.features.as_path(), a.labels.as_path()])?;
    let head = load_class_head(&a.weights_head, &a.weights_names)?;
    let features = normalize_if(load_labelled(&a.features, Some(&a.labels), Some(head.class_names()))?, a.normalize)?;
    let c = compare_heads(&head, &features)?;
    let gap_points = 100.0 * (c.linear_accuracy - c.cosine_accuracy).abs();
    let mut out = Outputs::new();
    let mut csv = Csv::new(&["n", "linear_accuracy", "cosine_accuracy", "agreement", "gap_points"]);
    csv.push([
        features.n().to_string(),
        c.linear_accuracy.to_string(),
        c.cosine_accuracy.to_string(),
        c.agreement.to_string(),
        gap_points.to_string(),
    ]);
    out.add("metrics.csv", csv.render());
    let metrics = json!({
        "n": features.n(),
        "linear_accuracy": c.linear_accuracy,
        "cosine_accuracy": c.cosine_accuracy,
        "agreement": c.agreement,
        "gap_points": gap_points,
    });
    add_report(&mut out, "eval heads", a, a.seed, &metrics)?;
    Ok(out)
}
