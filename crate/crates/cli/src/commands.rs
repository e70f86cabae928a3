use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sgvqa::config::{GraphSource, RunConfig};
use sgvqa::data::Split;
use sgvqa::eval::{compare_regimes, plot_comparison, MetricsReport};
use sgvqa::features::read_vector_table;
use sgvqa::graph::{overlap_report, read_scene_graph_file, write_scene_graph_file, GraphStats, OverlapReport};
use sgvqa::models::{derive_seed, load_checkpoint, save_checkpoint, write_predictions};
use sgvqa::perturb::{ablate, filter, synth_degrade, AblationMode};
use sgvqa::pipeline::{ablated, corrupted, evaluate_run, train_run, Prepared};
use sgvqa::SceneGraph;

use crate::{AblationArg, Cli, Command, EvalArgs, GraphArg, PerturbArgs, PerturbMode};

/// Configuration after applying command-line and environment overrides.
struct RunContext {
    config: RunConfig,
    seed: u64,
}

impl RunContext {
    fn data_dir(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.unwrap_or_else(|| self.config.out_dir.join("data"))
    }

    fn prepared(&self, dir: &Path) -> Result<Prepared> {
        let mut prepared = Prepared::read(dir).with_context(|| format!("loading prepared data from {}", dir.display()))?;
        if let Some(path) = &self.config.data.external {
            prepared.external = read_vector_table(path)?;
        }
        Ok(prepared)
    }
}

fn load_config(cli: &Cli) -> Result<RunContext> {
    let g = &cli.global;
    let mut config = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(dir) = &g.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(epochs) = g.epochs {
        config.train.epochs = epochs;
    }
    if let Some(bs) = g.batch_size {
        config.train.batch_size = bs;
    }
    if let Command::Train { regime: Some(r), .. } = &cli.command {
        config.train.regime = *r;
    }
    config.validate()?;
    let seed = config.seed;
    Ok(RunContext { config, seed })
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = load_config(&cli)?;
    match cli.command {
        Command::Prepare { data } => prepare(&ctx, &ctx.data_dir(data)),
        Command::Train { data, run, ablate, .. } => {
            let run = run.unwrap_or_else(|| ctx.config.out_dir.join("train"));
            train(&ctx, &ctx.data_dir(data), &run, ablate.map(ablation))
        }
        Command::Eval(args) if !args.compare.is_empty() => compare(&ctx, &args),
        Command::Eval(args) => eval(&ctx, args),
        Command::Perturb(args) => perturb(&ctx, &args),
        Command::Analyze { gt, generated, output } => analyze(&gt, generated.as_deref(), output.as_deref()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn prepare(ctx: &RunContext, dir: &Path) -> Result<()> {
    let prepared = Prepared::from_config(&ctx.config, ctx.seed)?;
    let manifest = prepared.write(dir, ctx.seed)?;
    let d = &prepared.dataset;
    log::info!(
        "prepared {} questions ({} train / {} val / {} test) over {} images; vocabulary {} words, {} answers",
        d.questions.len(),
        d.splits.train.len(),
        d.splits.val.len(),
        d.splits.test.len(),
        d.graphs.len(),
        prepared.vocab.len(),
        prepared.answers.len()
    );
    println!("{}", manifest.display());
    Ok(())
}

fn train(ctx: &RunContext, data: &Path, run: &Path, ablate: Option<AblationMode>) -> Result<()> {
    let mut prepared = ctx.prepared(data)?;
    if let Some(mode) = ablate {
        prepared.dataset.graphs = ablated(&prepared.dataset.graphs, mode);
    }
    let (model, report) = train_run(&ctx.config, &prepared, ctx.seed)?;
    fs::create_dir_all(run).with_context(|| format!("creating {}", run.display()))?;
    save_checkpoint(&model, &run.join("model.bin"))?;
    let log: String = report
        .log
        .iter()
        .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
        .collect();
    write_text(&run.join("train_log.jsonl"), &log)?;
    let summary = serde_json::json!({
        "regime": ctx.config.train.regime.label(),
        "seed": ctx.seed,
        "best_epoch": report.best_epoch,
        "best_val_accuracy": report.best_val_accuracy,
    });
    write_text(&run.join("train_report.json"), &to_json(&summary))?;
    write_text(&run.join("config.toml"), &ctx.config.to_toml())?;
    println!("{}", to_json(&summary).trim_end());
    Ok(())
}

fn eval(ctx: &RunContext, args: EvalArgs) -> Result<()> {
    let prepared = ctx.prepared(&ctx.data_dir(args.data))?;
    let checkpoint = args
        .checkpoint
        .unwrap_or_else(|| ctx.config.out_dir.join("train").join("model.bin"));
    let model = load_checkpoint::<f32>(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let split: Split = args.split.as_deref().unwrap_or(&ctx.config.eval.split).parse()?;
    let source = match args.graphs {
        GraphArg::Gt => GraphSource::Gt,
        GraphArg::Noisy => GraphSource::Noisy,
        GraphArg::Filtered => GraphSource::Filtered,
    };
    let mut graphs = prepared.graphs_for(source, &ctx.config)?;
    if let Some(level) = args.corrupt {
        graphs = corrupted(&graphs, level, ctx.seed)?;
    }
    if let Some(mode) = args.ablate {
        graphs = ablated(&graphs, ablation(mode));
    }
    let label = args.label.unwrap_or_else(|| ctx.config.train.regime.label().to_string());
    let (predictions, report) = evaluate_run(&model, &prepared, split, &graphs, ctx.config.eval.batch_size, &label, ctx.seed)?;
    let out = args.output.unwrap_or_else(|| ctx.config.out_dir.join("eval"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_predictions(&out.join("predictions.jsonl"), &predictions)?;
    report.write(&out.join("metrics.json"))?;
    println!("{}", report.to_json().trim_end());
    Ok(())
}

fn compare(ctx: &RunContext, args: &EvalArgs) -> Result<()> {
    let reports = args
        .compare
        .iter()
        .map(|p| MetricsReport::read(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let comparison = compare_regimes(&reports)?;
    let out = args.output.clone().unwrap_or_else(|| ctx.config.out_dir.join("eval"));
    write_text(&out.join("comparison.txt"), &comparison.to_text())?;
    write_text(&out.join("comparison.csv"), &comparison.to_csv())?;
    plot_comparison(&comparison, &out.join("comparison.svg"))?;
    print!("{}", comparison.to_text());
    Ok(())
}

fn ablation(mode: AblationArg) -> AblationMode {
    match mode {
        AblationArg::Relations => AblationMode::Relations,
        AblationArg::Attributes => AblationMode::Attributes,
        AblationArg::RelationNames => AblationMode::RelationNames,
    }
}

fn read_graphs(path: &Path) -> Result<Vec<SceneGraph>> {
    let (graphs, report) = read_scene_graph_file(path).with_context(|| format!("reading {}", path.display()))?;
    if report.dropped_relations > 0 {
        log::warn!("{}: dropped {} relations with unknown targets", path.display(), report.dropped_relations);
    }
    Ok(graphs)
}

fn perturb(ctx: &RunContext, args: &PerturbArgs) -> Result<()> {
    let graphs = read_graphs(&args.input)?;
    let out: Vec<SceneGraph> = match args.mode {
        PerturbMode::Corrupt => {
            let by_id: BTreeMap<String, SceneGraph> = graphs.iter().map(|g| (g.image_id().to_string(), g.clone())).collect();
            let c = corrupted(&by_id, args.level, ctx.seed)?;
            graphs.iter().map(|g| c[g.image_id()].clone()).collect()
        }
        PerturbMode::Filter => graphs.iter().map(|g| filter(g, &ctx.config.filter)).collect::<sgvqa::Result<_>>()?,
        PerturbMode::Ablate => graphs.iter().map(|g| ablate(g, ablation(args.ablation))).collect(),
        PerturbMode::Degrade => graphs
            .iter()
            .map(|g| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, &format!("degrade/{}", g.image_id()), None));
                synth_degrade(g, &ctx.config.degrade, &mut rng)
            })
            .collect::<sgvqa::Result<_>>()?,
    };
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_scene_graph_file(&args.output, &out)?;
    log::info!("wrote {} graphs to {}", out.len(), args.output.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct OverlapSummary {
    images: usize,
    missing_object_ratio: f64,
    spurious_attributes_per_object: f64,
    edge_recall: f64,
}

#[derive(Debug, Serialize)]
struct Analysis {
    gt_stats: Option<GraphStats>,
    generated_stats: Option<GraphStats>,
    overlap: Option<OverlapSummary>,
    per_image: BTreeMap<String, OverlapReport>,
}

fn analyze(gt: &Path, generated: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let gt_graphs = read_graphs(gt)?;
    let mut analysis = Analysis {
        gt_stats: GraphStats::mean(&gt_graphs),
        generated_stats: None,
        overlap: None,
        per_image: BTreeMap::new(),
    };
    if let Some(path) = generated {
        let gen_graphs = read_graphs(path)?;
        analysis.generated_stats = GraphStats::mean(&gen_graphs);
        let gen_by_id: BTreeMap<&str, &SceneGraph> = gen_graphs.iter().map(|g| (g.image_id(), g)).collect();
        for g in &gt_graphs {
            if let Some(other) = gen_by_id.get(g.image_id()) {
                analysis.per_image.insert(g.image_id().to_string(), overlap_report(g, other)?);
            }
        }
        let n = analysis.per_image.len();
        if n > 0 {
            let mean = |f: &dyn Fn(&OverlapReport) -> f64| analysis.per_image.values().map(f).sum::<f64>() / n as f64;
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            analysis.overlap = Some(OverlapSummary {
                images: n,
                missing_object_ratio: mean(&|r| ratio(r.missing_objects, r.gt_objects)),
                spurious_attributes_per_object: mean(&|r| r.spurious_attributes_per_object),
                edge_recall: mean(&|r| ratio(r.matched_edges, r.gt_edges)),
            });
        }
    }
    let text = to_json(&analysis);
    match output {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
