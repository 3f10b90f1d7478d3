use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Deserialize;

use boxlab::analytics::{
    compare_weakness, direction_free, knn_leave_one_out, local_score_consistency, rmse, specificity_agreement,
    weakness_clusters, KnnConfig, KnnMetric, ScoreTable,
};
use boxlab::boxcore::{BoxTable, GumbelParams};
use boxlab::boxfit::{eval_triplet_accuracy, init_table, train, FitConfig, LossSpace};
use boxlab::boxsne::{reduce, ReduceConfig, SneWeights};
use boxlab::hcluster::{agglomerate, ClusterTree};
use boxlab::io;
use boxlab::render::{render_svg, RenderSpec};
use boxlab::synthgen::{gen_nested_boxes, gen_scores, gen_triplets, heldout_entailment_pairs, HierarchySpec, RelationKind};

#[derive(Parser)]
#[command(name = "boxlab", version, about = "Box embeddings, Box-SNE, volume-join clustering and weakness analytics")]
struct Cli {
    /// Base seed; each stage derives its own streams from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a nested-box hierarchy with triplets and planted scores.
    Synth(SynthArgs),
    /// Fit a box table to relation triplets.
    Fit(FitArgs),
    /// Reduce a box table to low-dimensional scalar-width boxes.
    Reduce(ReduceArgs),
    /// Build the volume-join cluster tree of a box table.
    Cluster(ClusterArgs),
    /// Score-consistency, specificity and weakness report for a tree.
    Analyze(AnalyzeArgs),
    /// Draw a 2D layout as SVG.
    Render(RenderArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 2)]
    branching: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    shrink: f64,
    /// Negatives per training triplet.
    #[arg(long, default_value_t = 2)]
    negatives: usize,
    /// Root of the low-scoring subtree.
    #[arg(long, default_value = "n1")]
    weak_subtree: String,
    #[arg(long, default_value_t = 3.0)]
    weak_mean: f64,
    #[arg(long, default_value_t = 8.0)]
    strong_mean: f64,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    triplets: PathBuf,
    /// TOML file with any `FitConfig` field; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Held-out triplets scored after training.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    loss_space: Option<LossSpace>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    loss_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReduceArgs {
    #[arg(long)]
    boxes: PathBuf,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Weight of the intersection term.
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    /// Weight of the entailment term.
    #[arg(long, default_value_t = 0.2)]
    beta: f64,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    boxes: PathBuf,
    /// Keep only the items that appear in this scores file.
    #[arg(long)]
    scored: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, required_unless_present = "models_dir")]
    scores: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Box table for kNN score prediction.
    #[arg(long)]
    boxes: Option<PathBuf>,
    /// Tree to compare weakness counts against.
    #[arg(long)]
    baseline_tree: Option<PathBuf>,
    /// Directory of `*.scores` files, one per model.
    #[arg(long)]
    models_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 25.0)]
    percentile: f64,
    #[arg(long)]
    no_integer_snap: bool,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    lowdim: PathBuf,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, default_value_t = 800.0)]
    width: f64,
    #[arg(long, default_value_t = 800.0)]
    height: f64,
    #[arg(long, requires = "score_max")]
    score_min: Option<f64>,
    #[arg(long, requires = "score_min")]
    score_max: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    stroke_width: f64,
    #[arg(long)]
    labels: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FitFile {
    dim: Option<usize>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    beta_vol: Option<f64>,
    beta_int: Option<f64>,
    loss_space: Option<String>,
    momentum: Option<f64>,
    softmax_scale: Option<f64>,
    clip_norm: Option<f64>,
}

fn ids_of(table: &BoxTable) -> HashSet<String> {
    table.ids().iter().cloned().collect()
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).map_err(boxlab::Error::from)?;
    Ok(())
}

fn synth(args: &SynthArgs, seed: u64) -> anyhow::Result<()> {
    let spec = HierarchySpec {
        depth: args.depth,
        branching: args.branching,
        dim: args.dim,
        shrink: args.shrink,
        seed,
    };
    let tree = gen_nested_boxes(&spec)?;
    let mut train_set = gen_triplets(&tree, RelationKind::Entailment, args.negatives, seed.wrapping_add(1))?;
    if let Ok(sim) = gen_triplets(&tree, RelationKind::Similarity, args.negatives, seed.wrapping_add(2)) {
        train_set.extend(sim);
    }
    let heldout = heldout_entailment_pairs(&tree, &train_set)?;
    let scores = gen_scores(
        &tree,
        &args.weak_subtree,
        args.weak_mean,
        args.strong_mean,
        args.noise,
        seed.wrapping_add(3),
    )?;
    fs::create_dir_all(&args.out_dir).map_err(boxlab::Error::from)?;
    let d = &args.out_dir;
    io::write_box_table(&tree.nodes, d.join("truth.boxes"))?;
    write_text(&d.join("truth.hierarchy"), &io::format_hierarchy(&tree))?;
    io::write_triplets(&train_set, d.join("train.triplets"))?;
    io::write_triplets(&heldout, d.join("heldout.triplets"))?;
    io::write_scores(&scores, d.join("leaves.scores"))?;
    info!(
        "synth: {} nodes, {} training and {} held-out triplets",
        tree.len(),
        train_set.len(),
        heldout.len()
    );
    Ok(())
}

fn fit_config(args: &FitArgs, seed: u64) -> anyhow::Result<FitConfig> {
    let file = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(boxlab::Error::from)?;
            toml::from_str::<FitFile>(&text).map_err(|e| {
                boxlab::Error::InvalidParameter(format!("{}: {}", p.display(), e.message()))
            })?
        }
        None => FitFile::default(),
    };
    let mut c = FitConfig {
        seed,
        ..FitConfig::default()
    };
    c.dim = args.dim.or(file.dim).unwrap_or(c.dim);
    c.epochs = args.epochs.or(file.epochs).unwrap_or(c.epochs);
    c.learning_rate = args.learning_rate.or(file.learning_rate).unwrap_or(c.learning_rate);
    c.batch_size = args.batch_size.or(file.batch_size).unwrap_or(c.batch_size);
    c.momentum = file.momentum.unwrap_or(c.momentum);
    c.softmax_scale = file.softmax_scale.unwrap_or(c.softmax_scale);
    c.clip_norm = file.clip_norm.or(c.clip_norm);
    c.gumbel = GumbelParams::new(
        file.beta_vol.unwrap_or(c.gumbel.beta_vol),
        file.beta_int.unwrap_or(c.gumbel.beta_int),
    )?;
    c.loss_space = match (args.loss_space, file.loss_space) {
        (Some(s), _) => s,
        (None, Some(s)) => s.parse()?,
        (None, None) => c.loss_space,
    };
    c.validate()?;
    Ok(c)
}

fn fit(args: &FitArgs, seed: u64) -> anyhow::Result<()> {
    let config = fit_config(args, seed)?;
    let triplets = io::read_triplets(&args.triplets, None)?;
    let mut ids: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for t in &triplets {
        for id in std::iter::once(&t.anchor).chain([&t.positive]).chain(&t.negatives) {
            if seen.insert(id.clone()) {
                ids.push(id.clone());
            }
        }
    }
    let mut params = init_table(&ids, &config)?;
    let report = train(&mut params, &triplets, &config)?;
    let table = params.to_box_table()?;
    io::write_box_table(&table, &args.out)?;
    if let Some(path) = &args.loss_out {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        let rows: Vec<Vec<String>> = report
            .epochs
            .iter()
            .enumerate()
            .map(|(e, l)| vec![(e + 1).to_string(), l.mean.to_string(), opt(l.similarity), opt(l.entailment)])
            .collect();
        write_text(path, &io::format_trace(&["epoch", "loss", "similarity", "entailment"], &rows))?;
    }
    if let Some(last) = report.epochs.last() {
        info!("fit: final mean loss {:.6}", last.mean);
    }
    if let Some(path) = &args.eval {
        let heldout = io::read_triplets(path, Some(&ids_of(&table)))?;
        for kind in [RelationKind::Entailment, RelationKind::Similarity] {
            if heldout.iter().any(|t| t.kind == kind) {
                let acc = eval_triplet_accuracy(&table, &heldout, kind, &config.gumbel)?;
                println!("{}_accuracy\t{acc}", kind.as_str());
            }
        }
    }
    Ok(())
}

fn reduce_cmd(args: &ReduceArgs, seed: u64) -> anyhow::Result<()> {
    let high = io::read_box_table(&args.boxes)?;
    let config = ReduceConfig {
        dim: args.dim,
        weights: SneWeights::new(args.alpha, args.beta)?,
        iters: args.iters,
        learning_rate: args.learning_rate,
        seed,
        ..ReduceConfig::default()
    };
    let result = reduce(&high, &config)?;
    io::write_lowdim(high.ids(), &result.boxes, &args.out)?;
    if let Some(path) = &args.trace {
        let rows: Vec<Vec<String>> = result
            .trace
            .iter()
            .enumerate()
            .map(|(i, l)| vec![i.to_string(), l.to_string()])
            .collect();
        write_text(path, &io::format_trace(&["iter", "loss"], &rows))?;
    }
    info!(
        "reduce: loss {:.6} -> {:.6}",
        result.trace.first().copied().unwrap_or(f64::NAN),
        result.trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cluster(args: &ClusterArgs) -> anyhow::Result<()> {
    let mut table = io::read_box_table(&args.boxes)?;
    if let Some(path) = &args.scored {
        let scores = io::read_scores(path, Some(&ids_of(&table)))?;
        table = BoxTable::from_entries(
            table.dim(),
            table
                .iter()
                .filter(|(id, _)| scores.get(id).is_some())
                .map(|(id, b)| (id.to_string(), b.clone())),
        )?;
    }
    let tree = agglomerate(&table)?;
    io::write_tree(&tree, &args.out)?;
    info!("cluster: {} leaves, {} nodes", tree.n_leaves(), tree.nodes.len());
    Ok(())
}

struct Report(String);

impl Report {
    fn row(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.0, "{key}\t{value}");
    }
}

fn tree_ids(tree: &ClusterTree) -> HashSet<String> {
    tree.leaf_ids.iter().cloned().collect()
}

fn knn_rmse(boxes: &BoxTable, scores: &ScoreTable, k: usize, metric: KnnMetric, seed: u64) -> anyhow::Result<f64> {
    let config = KnnConfig {
        k,
        metric,
        gumbel: GumbelParams::default(),
        seed,
    };
    let (pred, gold) = knn_leave_one_out(boxes, scores, &config)?;
    Ok(rmse(&pred, &gold)?)
}

fn analyze(args: &AnalyzeArgs, seed: u64) -> anyhow::Result<()> {
    let tree = io::read_tree(&args.tree)?;
    let known = tree_ids(&tree);
    let boxes = args.boxes.as_ref().map(io::read_box_table).transpose()?;
    let baseline = args.baseline_tree.as_ref().map(io::read_tree).transpose()?;
    let snap = !args.no_integer_snap;
    let mut report = Report(String::new());

    if let Some(dir) = &args.models_dir {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(boxlab::Error::from)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "scores"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(boxlab::Error::EmptyInput(format!("no *.scores files in {}", dir.display())).into());
        }
        let mut header = vec!["model", "consistency", "random", "improv_pct"];
        if boxes.is_some() {
            header.extend(["knn_rmse", "random_rmse", "knn_improv_pct"]);
        }
        let _ = writeln!(report.0, "{}", header.join("\t"));
        let mut sums = vec![0.0; header.len() - 1];
        for f in &files {
            let scores = io::read_scores(f, Some(&known))?;
            let c = local_score_consistency(&tree, &scores, seed)?;
            let mut row = vec![c.method_diff, c.random_diff, c.improvement_pct];
            if let Some(b) = &boxes {
                let m = knn_rmse(b, &scores, args.k, KnnMetric::Intersection, seed)?;
                let r = knn_rmse(b, &scores, args.k, KnnMetric::Random, seed)?;
                row.extend([m, r, 100.0 * (r - m) / r]);
            }
            for (s, v) in sums.iter_mut().zip(&row) {
                *s += v;
            }
            let name = f.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(report.0, "{name}\t{}", cells.join("\t"));
        }
        let cells: Vec<String> = sums.iter().map(|s| format!("{:.4}", s / files.len() as f64)).collect();
        let _ = writeln!(report.0, "average\t{}", cells.join("\t"));
    } else {
        let path = args.scores.as_ref().ok_or_else(|| boxlab::Error::InvalidParameter("--scores is required without --models-dir".into()))?;
        let scores = io::read_scores(path, Some(&known))?;
        report.row("leaves", tree.n_leaves());
        let c = local_score_consistency(&tree, &scores, seed)?;
        report.row("consistency", c.method_diff);
        report.row("consistency_random", c.random_diff);
        report.row("consistency_improv_pct", c.improvement_pct);
        if let Some(p) = &args.pairs {
            let pairs = io::read_pairs(p, Some(&known))?;
            let a = specificity_agreement(&tree, &pairs)?;
            report.row("specificity_agreement_pct", a);
            report.row("specificity_direction_free_pct", direction_free(a));
        }
        let w = weakness_clusters(&tree, &scores, args.percentile, snap)?;
        report.row("weakness_threshold", w.threshold);
        for (t, c) in w.counts.iter().enumerate() {
            report.row(&format!("weak_clusters_size_ge_{}", t + 1), c);
        }
        report.row("weakness_auc", w.auc);
        if let Some(b) = &baseline {
            let wb = weakness_clusters(b, &scores, args.percentile, snap)?;
            let cmp = compare_weakness(&w, &wb)?;
            report.row("baseline_weak_size_ge_2", wb.count_at(2));
            report.row("baseline_weakness_auc", wb.auc);
            report.row("weak_size_ge_2_vs_baseline_pct", cmp.size2_pct);
            report.row("weakness_auc_vs_baseline_pct", cmp.auc_pct);
        }
        if let Some(b) = &boxes {
            let m = knn_rmse(b, &scores, args.k, KnnMetric::Intersection, seed)?;
            let r = knn_rmse(b, &scores, args.k, KnnMetric::Random, seed)?;
            report.row("knn_rmse", m);
            report.row("knn_random_rmse", r);
            report.row("knn_improv_pct", 100.0 * (r - m) / r);
        }
    }
    match &args.out {
        Some(p) => write_text(p, &report.0)?,
        None => print!("{}", report.0),
    }
    Ok(())
}

fn render(args: &RenderArgs) -> anyhow::Result<()> {
    let (ids, low) = io::read_lowdim(&args.lowdim)?;
    let known: HashSet<String> = ids.iter().cloned().collect();
    let scores = match &args.scores {
        Some(p) => io::read_scores(p, Some(&known))?,
        None => ScoreTable::new(),
    };
    let spec = RenderSpec {
        width: args.width,
        height: args.height,
        score_range: args.score_min.zip(args.score_max),
        stroke_width: args.stroke_width,
        labels: args.labels,
    };
    render_svg(&ids, &low, &scores, &spec, &args.out)?;
    Ok(())
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("BOXLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| boxlab::Error::InvalidParameter(format!("BOXLAB_THREADS=`{value}` is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::Fit(a) => fit(a, cli.seed),
        Command::Reduce(a) => reduce_cmd(a, cli.seed),
        Command::Cluster(a) => cluster(a),
        Command::Analyze(a) => analyze(a, cli.seed),
        Command::Render(a) => render(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<boxlab::Error>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
