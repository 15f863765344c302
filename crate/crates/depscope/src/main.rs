use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use depscope::depgraph::{load_depgraph, load_depgraph_set, write_depgraph_set, DepGraph};
use depscope::detection::{evaluate, Method, ZscoreFeature};
use depscope::dot::{render_depgraph, render_diff, render_merged};
use depscope::embedding::{project_2d, train_embeddings, EmbeddingConfig, EmbeddingMatrix};
use depscope::error::Error;
use depscope::generator::{generate, write_labels, GeneratorConfig};
use depscope::pipeline::{
    read_labels_csv, run_detection, run_pipeline, ClusterPairing, PipelineConfig,
};
use depscope::rootcause::{compare, lift, merge_cluster, DiffGraph, MergedDepGraph};

#[derive(Parser)]
#[command(
    name = "depscope",
    about = "Latency outlier detection and root-cause diffing over waiting-dependency graphs",
    version
)]
struct Cli {
    /// JSON config file; command-line flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for all stochastic stages (falls back to $DEPSCOPE_SEED, then 42).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct EmbeddingArgs {
    #[arg(long)]
    dimensions: Option<usize>,
    #[arg(long)]
    wl_iterations: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    negative_samples: Option<usize>,
    #[arg(long)]
    min_feature_count: Option<usize>,
    /// Append log-scale duration buckets to node labels.
    #[arg(long)]
    duration_buckets: bool,
    /// Embed unpruned graphs.
    #[arg(long)]
    no_prune: bool,
}

#[derive(Args, Debug, Default)]
struct DetectionArgs {
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_pts: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    knn_threshold: Option<f64>,
    #[arg(long)]
    z_threshold: Option<f64>,
    /// duration | centroid_distance
    #[arg(long)]
    zscore_feature: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled DepGraph dataset.
    Generate {
        #[arg(long, default_value_t = 697)]
        n_requests: usize,
        /// Fraction of requests injected as latency outliers.
        #[arg(long)]
        outlier_fraction: Option<f64>,
    },
    /// Validate a DepGraph set file.
    Validate {
        #[arg(long)]
        input: PathBuf,
        /// Reject unknown JSON keys.
        #[arg(long)]
        strict: bool,
    },
    /// Train graph embeddings and write the embedding matrix.
    Embed {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        embedding: EmbeddingArgs,
        /// Also write a 2-D projection of the rows.
        #[arg(long)]
        project: bool,
    },
    /// Cluster embeddings with a density method (dbscan or optics).
    Cluster {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value = "dbscan")]
        method: String,
        #[command(flatten)]
        detection: DetectionArgs,
    },
    /// Flag outliers with one method.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        method: String,
        #[command(flatten)]
        detection: DetectionArgs,
    },
    /// Score a prediction CSV against a ground-truth label CSV.
    Evaluate {
        /// Detection CSV (request_id,method,cluster_id,is_outlier).
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Merge a set of DepGraphs into one representative graph.
    Merge {
        #[arg(long)]
        input: PathBuf,
    },
    /// Diff two graphs (merged-graph JSON or single DepGraph JSON).
    Compare {
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        second: PathBuf,
    },
    /// Render a DepGraph, merged graph, or diff graph file to DOT.
    Render {
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the full pipeline: load, embed, detect, evaluate, root-cause.
    Pipeline {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long)]
        strict: bool,
        /// largest | nearest_centroid
        #[arg(long)]
        pairing: Option<String>,
        #[command(flatten)]
        embedding: EmbeddingArgs,
        #[command(flatten)]
        detection: DetectionArgs,
    },
    /// Run the pipeline and print the per-stage timing table.
    Bench {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        embedding: EmbeddingArgs,
        #[command(flatten)]
        detection: DetectionArgs,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Parse(_) | Error::Validation(_) | Error::Io(_) => 3,
    }
}

fn seed_from(cli_seed: Option<u64>) -> u64 {
    cli_seed
        .or_else(|| std::env::var("DEPSCOPE_SEED").ok().and_then(|s| s.parse().ok()))
        .unwrap_or(42)
}

fn load_base_config(path: Option<&PathBuf>) -> depscope::Result<PipelineConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("bad config file {}: {e}", p.display())))
        }
        None => Ok(PipelineConfig::default()),
    }
}

fn apply_embedding_args(cfg: &mut EmbeddingConfig, args: &EmbeddingArgs) {
    if let Some(v) = args.dimensions {
        cfg.dimensions = v;
    }
    if let Some(v) = args.wl_iterations {
        cfg.wl_iterations = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.negative_samples {
        cfg.negative_samples = v;
    }
    if let Some(v) = args.min_feature_count {
        cfg.min_feature_count = v;
    }
    if args.duration_buckets {
        cfg.duration_buckets = true;
    }
    if args.no_prune {
        cfg.prune_threshold_pct = None;
    }
}

fn apply_detection_args(
    cfg: &mut depscope::detection::DetectionConfig,
    args: &DetectionArgs,
) -> depscope::Result<()> {
    if let Some(v) = args.eps {
        cfg.eps = v;
    }
    if let Some(v) = args.min_pts {
        cfg.min_pts = v;
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(v) = args.knn_threshold {
        cfg.knn_threshold = v;
    }
    if let Some(v) = args.z_threshold {
        cfg.z_threshold = v;
    }
    if let Some(v) = &args.zscore_feature {
        cfg.zscore_feature = match v.as_str() {
            "duration" => ZscoreFeature::Duration,
            "centroid_distance" => ZscoreFeature::CentroidDistance,
            other => return Err(Error::config(format!("unknown zscore feature {other:?}"))),
        };
    }
    Ok(())
}

fn load_graphs(path: &PathBuf, strict: bool) -> depscope::Result<Vec<DepGraph>> {
    let file = fs::File::open(path)?;
    load_depgraph_set(BufReader::new(file), strict)
}

/// Reads either a merged-graph JSON or a single DepGraph JSON (lifted).
fn load_comparable(path: &PathBuf) -> depscope::Result<MergedDepGraph> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    if value.get("n_graphs").is_some() {
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))
    } else {
        lift(&load_depgraph(&text, false)?)
    }
}

fn write_text(path: &PathBuf, text: &str) -> depscope::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_detection_output(
    out: &PathBuf,
    ids: &[String],
    r: &depscope::detection::DetectionResult,
) -> depscope::Result<()> {
    fs::create_dir_all(out)?;
    let mut text = String::from("request_id,method,cluster_id,is_outlier\n");
    for (i, id) in ids.iter().enumerate() {
        let cluster = r
            .cluster_ids
            .as_ref()
            .map(|c| c[i].map_or("NOISE".to_string(), |v| v.to_string()))
            .unwrap_or_default();
        text.push_str(&format!(
            "{id},{},{cluster},{}\n",
            r.method.name(),
            r.outlier_flags[i]
        ));
    }
    write_text(&out.join(format!("detection_{}.csv", r.method.name())), &text)
}

fn run(cli: Cli) -> depscope::Result<()> {
    let seed = seed_from(cli.seed);
    let mut base = load_base_config(cli.config.as_ref())?;
    base.embedding.seed = seed;
    base.out_dir = cli.out.clone();

    match cli.command {
        Command::Generate { n_requests, outlier_fraction } => {
            let mut config = GeneratorConfig { n_requests, seed, ..Default::default() };
            if let Some(f) = outlier_fraction {
                config.outlier_fraction = f;
            }
            let dataset = generate(&config)?;
            fs::create_dir_all(&cli.out)?;
            let mut f = fs::File::create(cli.out.join("graphs.jsonl"))?;
            write_depgraph_set(&mut f, &dataset.graphs)?;
            let mut f = fs::File::create(cli.out.join("labels.csv"))?;
            write_labels(&mut f, &dataset)?;
            println!(
                "wrote {} graphs ({} outliers) to {}",
                dataset.graphs.len(),
                dataset.labels.iter().filter(|&&l| l).count(),
                cli.out.display()
            );
        }
        Command::Validate { input, strict } => {
            let graphs = load_graphs(&input, strict)?;
            println!("{} graph(s) valid", graphs.len());
        }
        Command::Embed { input, embedding, project } => {
            let graphs = load_graphs(&input, false)?;
            apply_embedding_args(&mut base.embedding, &embedding);
            let matrix = train_embeddings(&graphs, &base.embedding)?;
            fs::create_dir_all(&cli.out)?;
            let mut f = fs::File::create(cli.out.join("embeddings.csv"))?;
            matrix.write_csv(&mut f)?;
            if project {
                let proj = project_2d(&matrix)?;
                let mut text = String::from("request_id,x,y\n");
                for (id, p) in matrix.request_ids.iter().zip(&proj.points) {
                    text.push_str(&format!("{id},{},{}\n", p[0], p[1]));
                }
                write_text(&cli.out.join("projection.csv"), &text)?;
                if proj.degenerate {
                    eprintln!("warning: degenerate projection (all rows equal)");
                }
            }
            println!("embedded {} graphs, vocabulary {}", matrix.rows.len(), matrix.vocab_size);
        }
        Command::Cluster { input, embeddings, method, detection }
        | Command::Detect { input, embeddings: Some(embeddings), method, detection } => {
            let graphs = load_graphs(&input, false)?;
            let matrix = EmbeddingMatrix::read_csv(&fs::read_to_string(&embeddings)?)?;
            apply_detection_args(&mut base.detection, &detection)?;
            let method: Method = method.parse()?;
            let ids: Vec<String> = graphs.iter().map(|g| g.request_id.clone()).collect();
            let r = run_detection(method, &graphs, &matrix.rows, &base.detection)?;
            write_detection_output(&cli.out, &ids, &r)?;
            println!(
                "{}: {} outlier(s) of {}",
                method.name(),
                r.outlier_flags.iter().filter(|&&f| f).count(),
                ids.len()
            );
        }
        Command::Detect { input, embeddings: None, method, detection } => {
            let method: Method = method.parse()?;
            if method != Method::Zscore {
                return Err(Error::config(format!(
                    "method {} needs --embeddings",
                    method.name()
                )));
            }
            let graphs = load_graphs(&input, false)?;
            apply_detection_args(&mut base.detection, &detection)?;
            let ids: Vec<String> = graphs.iter().map(|g| g.request_id.clone()).collect();
            let r = depscope::detection::zscore_outliers(
                &graphs,
                None,
                ZscoreFeature::Duration,
                base.detection.z_threshold,
            )?;
            write_detection_output(&cli.out, &ids, &r)?;
            println!(
                "zscore: {} outlier(s) of {}",
                r.outlier_flags.iter().filter(|&&f| f).count(),
                ids.len()
            );
        }
        Command::Evaluate { predictions, labels } => {
            let text = fs::read_to_string(&predictions)?;
            let mut predicted = Vec::new();
            let mut ids = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if i == 0 || line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() < 4 {
                    return Err(Error::Parse(format!("predictions line {}: too few fields", i + 1)));
                }
                ids.push(fields[0].to_string());
                predicted.push(fields[3].trim().parse::<bool>().map_err(|e| {
                    Error::Parse(format!("predictions line {}: {e}", i + 1))
                })?);
            }
            let by_id: std::collections::BTreeMap<String, bool> =
                read_labels_csv(&labels)?.into_iter().collect();
            let truth: Vec<bool> = ids
                .iter()
                .map(|id| {
                    by_id.get(id).copied().ok_or_else(|| {
                        Error::validation(format!("no label for request {id:?}"))
                    })
                })
                .collect::<depscope::Result<_>>()?;
            let report = evaluate(&predicted, &truth)?;
            fs::create_dir_all(&cli.out)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Parse(e.to_string()))?;
            write_text(&cli.out.join("eval.json"), &(json.clone() + "\n"))?;
            println!("{json}");
        }
        Command::Merge { input } => {
            let graphs = load_graphs(&input, false)?;
            let merged = merge_cluster(&graphs)?;
            fs::create_dir_all(&cli.out)?;
            let json = serde_json::to_string_pretty(&merged)
                .map_err(|e| Error::Parse(e.to_string()))?;
            write_text(&cli.out.join("merged.json"), &(json + "\n"))?;
            write_text(&cli.out.join("merged.dot"), &render_merged(&merged))?;
            println!("merged {} graphs, {} distinct paths", merged.n_graphs, merged.stats.len());
        }
        Command::Compare { first, second } => {
            let a = load_comparable(&first)?;
            let b = load_comparable(&second)?;
            let diff = compare(&a, &b);
            fs::create_dir_all(&cli.out)?;
            let json = serde_json::to_string_pretty(&diff)
                .map_err(|e| Error::Parse(e.to_string()))?;
            write_text(&cli.out.join("diff.json"), &(json + "\n"))?;
            write_text(&cli.out.join("diff.dot"), &render_diff(&diff))?;
            println!("diff graph with {} paths written", diff.entries.len());
        }
        Command::Render { input } => {
            let text = fs::read_to_string(&input)?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
            let dot = if value.get("entries").is_some() {
                let d: DiffGraph =
                    serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
                render_diff(&d)
            } else if value.get("n_graphs").is_some() {
                let m: MergedDepGraph =
                    serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
                render_merged(&m)
            } else {
                render_depgraph(&load_depgraph(&text, false)?)
            };
            print!("{dot}");
        }
        Command::Pipeline { input, labels, methods, strict, pairing, embedding, detection } => {
            if let Some(input) = input {
                base.input = input;
            }
            if labels.is_some() {
                base.labels = labels;
            }
            if !methods.is_empty() {
                base.methods = methods
                    .iter()
                    .map(|m| m.parse())
                    .collect::<depscope::Result<_>>()?;
            }
            if strict {
                base.strict = true;
            }
            if let Some(p) = pairing {
                base.pairing = match p.as_str() {
                    "largest" => ClusterPairing::Largest,
                    "nearest_centroid" => ClusterPairing::NearestCentroid,
                    other => {
                        return Err(Error::config(format!("unknown pairing {other:?}")))
                    }
                };
            }
            apply_embedding_args(&mut base.embedding, &embedding);
            apply_detection_args(&mut base.detection, &detection)?;
            let output = run_pipeline(&base, true)?;
            for report in &output.reports {
                println!(
                    "{:>7}: accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3}",
                    report.method.map(|m| m.name()).unwrap_or("?"),
                    report.accuracy,
                    report.precision,
                    report.recall,
                    report.f1
                );
            }
            println!("{} root-cause diff(s) written to {}", output.diffs.len(), cli.out.display());
        }
        Command::Bench { input, labels, embedding, detection } => {
            if let Some(input) = input {
                base.input = input;
            }
            if labels.is_some() {
                base.labels = labels;
            }
            apply_embedding_args(&mut base.embedding, &embedding);
            apply_detection_args(&mut base.detection, &detection)?;
            let output = run_pipeline(&base, true)?;
            print!("{}", output.timing.render_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
