//! `mqa`: ingest, learn weights, build indexes, query, compare frameworks and
//! serve the HTTP API from a knowledge-base config.

mod output;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mqa_core::catalog::save_vectors;
use mqa_core::encoding::encode_knowledge_base;
use mqa_core::fusion::{learn_weights_traced, load_triplets};
use mqa_core::graph::load_graph;
use mqa_core::{Framework, NavGraph};
use mqa_server::config::WeightsMode;
use mqa_server::pipeline::{ingest_kb, registry_for, save_artifacts, Engine};
use mqa_server::{CompareResponse, Coordinator, QueryRequest, QueryResponse, ServiceError, SystemConfig};
use output::{document, table, Format};
use serde::Deserialize;
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "mqa", version, about = "Multi-modal query answering over a navigation-graph index")]
struct Cli {
    /// Output format [default: table on a terminal, json otherwise]
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read the manifest and report objects per modality
    Ingest {
        #[command(flatten)]
        kb: KbArg,
        /// Also encode every object and write the vectors file here
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// Learn modality weights from a triplet file
    LearnWeights {
        #[command(flatten)]
        kb: KbArg,
        /// JSON-lines triplets {"q", "pos", "neg"} [default: from the config]
        #[arg(long)]
        triplets: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
        /// Write the weights file here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline and save vectors, weights and graphs
    BuildIndex {
        #[command(flatten)]
        kb: KbArg,
        /// Artifact directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        build: BuildFlags,
    },
    /// Answer one query
    Query {
        #[command(flatten)]
        kb: KbArg,
        #[command(flatten)]
        query: QueryFlags,
        /// Framework to search
        #[arg(long, value_parser = parse_framework)]
        framework: Option<Framework>,
        #[command(flatten)]
        build: BuildFlags,
    },
    /// Run MUST, MR and JE side by side
    Compare {
        #[command(flatten)]
        kb: KbArg,
        #[command(flatten)]
        query: QueryFlags,
        /// JSON-lines queries {"text", "selected_id", "image"} instead of the query flags
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Score each framework against the exact top-k
        #[arg(long)]
        ground_truth: bool,
        /// Write the per-framework CSV here (needs --ground-truth) [default: stdout]
        #[arg(long, requires = "ground_truth")]
        csv: Option<PathBuf>,
        #[command(flatten)]
        build: BuildFlags,
    },
    /// Serve the HTTP API
    Serve {
        /// Configure from this knowledge base before serving
        #[arg(long)]
        kb: Option<PathBuf>,
        /// Listen address [default: $MQA_LISTEN_ADDR or 127.0.0.1:8080]
        #[arg(long)]
        addr: Option<SocketAddr>,
        #[command(flatten)]
        build: BuildFlags,
    },
    /// Check a graph file or a config
    Validate {
        #[arg(long, required_unless_present = "kb")]
        graph: Option<PathBuf>,
        /// Config file or directory to check
        #[arg(long)]
        kb: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct KbArg {
    /// Config JSON file, or a directory holding config.json
    #[arg(long)]
    kb: PathBuf,
}

#[derive(Debug, Args)]
struct BuildFlags {
    /// Maximum out-degree
    #[arg(long)]
    r: Option<usize>,
    /// Beam width during construction
    #[arg(long)]
    l_build: Option<usize>,
    #[arg(long)]
    alpha: Option<f32>,
    #[arg(long)]
    passes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Frameworks to build, comma separated
    #[arg(long, value_delimiter = ',', value_parser = parse_framework)]
    frameworks: Option<Vec<Framework>>,
    /// Load prebuilt artifacts from this directory
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct QueryFlags {
    #[arg(long)]
    text: Option<String>,
    /// Image file to upload with the query
    #[arg(long)]
    image: Option<PathBuf>,
    /// Object id whose stored image vector joins the query
    #[arg(long)]
    selected: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    /// Beam width
    #[arg(long)]
    l: Option<usize>,
    /// Per-query weight override, comma separated in schema order
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
}

fn parse_framework(s: &str) -> Result<Framework, String> {
    s.parse().map_err(|e: mqa_core::Error| e.to_string())
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failed(String),
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::InvalidConfig(_) => Self::Usage(e.to_string()),
            other => Self::Failed(other.to_string()),
        }
    }
}

impl From<mqa_core::Error> for CliError {
    fn from(e: mqa_core::Error) -> Self {
        Self::Failed(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Failed(format!("{}: {e}", path.display()))
}

fn load_config(kb: &Path) -> CliResult<SystemConfig> {
    let file = if kb.is_dir() { kb.join("config.json") } else { kb.to_path_buf() };
    if !file.exists() {
        return Err(CliError::Usage(format!("no config at {}", file.display())));
    }
    SystemConfig::from_file(&file).map_err(|e| match e {
        ServiceError::InvalidConfig(_) => CliError::Usage(e.to_string()),
        other => CliError::Failed(other.to_string()),
    })
}

/// Loads the config, applies build flags and validates like the service does.
fn config_with(kb: &Path, build: Option<&BuildFlags>) -> CliResult<SystemConfig> {
    let mut config = load_config(kb)?;
    if let Some(f) = build {
        let b = &mut config.index.build;
        if let Some(v) = f.r {
            b.r = v;
        }
        if let Some(v) = f.l_build {
            b.l_build = v;
        }
        if let Some(v) = f.alpha {
            b.alpha = v;
        }
        if let Some(v) = f.passes {
            b.passes = v;
        }
        if let Some(v) = f.seed {
            b.seed = v;
        }
        if let Some(v) = f.batch_size {
            b.batch_size = v;
        }
        if let Some(v) = &f.frameworks {
            config.index.frameworks = v.clone();
            if !v.contains(&config.retrieval.framework) {
                config.retrieval.framework = v[0];
            }
        }
        if let Some(v) = &f.artifacts {
            config.index.artifacts = Some(v.clone());
        }
    }
    config.validate().map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    Ok(config)
}

fn configure(config: SystemConfig) -> CliResult<Coordinator> {
    let coordinator = Coordinator::new();
    let status = coordinator.configure(config)?;
    for stage in [&status.data_preprocessing, &status.vector_representation, &status.index_construction] {
        if let Some(e) = &stage.error {
            return Err(CliError::Failed(e.clone()));
        }
    }
    Ok(coordinator)
}

fn query_request(flags: &QueryFlags) -> CliResult<QueryRequest> {
    let image = match &flags.image {
        Some(p) => Some(fs::read(p).map_err(io_err(p))?),
        None => None,
    };
    let request = QueryRequest {
        text: flags.text.clone().filter(|t| !t.trim().is_empty()),
        image,
        selected_id: flags.selected.clone(),
        k: flags.k,
        l: flags.l,
        framework: None,
        weights: flags.weights.clone(),
    };
    if request.text.is_none() && request.image.is_none() && request.selected_id.is_none() {
        return Err(CliError::Usage("give --text, --image or --selected".into()));
    }
    Ok(request)
}

fn print(format: Format, doc: Value, human: impl FnOnce() -> String) {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&doc).expect("values serialize")),
        Format::Table => println!("{}", human()),
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn cmd_ingest(format: Format, kb: &Path, vectors: Option<&Path>) -> CliResult {
    let config = config_with(kb, None)?;
    let mut knowledge = ingest_kb(&config)?;
    let report = knowledge.report();
    let mut written = None;
    if let Some(path) = vectors {
        encode_knowledge_base(&mut knowledge, &registry_for(&config)?)?;
        let bytes = save_vectors(&knowledge, path)?;
        written = Some(json!({"path": path, "bytes": bytes}));
    }
    let doc = document(
        "ingest",
        json!({
            "knowledge_base": knowledge.name,
            "objects": report.objects,
            "coverage": report.coverage.iter().map(|(m, n)| json!({"modality": m, "objects": n})).collect::<Vec<_>>(),
            "vectors": written,
        }),
    );
    print(format, doc, || {
        let rows: Vec<Vec<String>> = report.coverage.iter().map(|(m, n)| vec![m.clone(), n.to_string()]).collect();
        let mut out = format!("{}: {} objects\n{}", knowledge.name, report.objects, table(&["modality", "objects"], &rows));
        if let Some(p) = vectors {
            out.push_str(&format!("\nvectors written to {}", p.display()));
        }
        out
    });
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_learn(
    format: Format,
    kb: &Path,
    triplets: Option<&Path>,
    epochs: Option<usize>,
    lr: Option<f64>,
    margin: Option<f64>,
    out: Option<&Path>,
) -> CliResult {
    let config = config_with(kb, None)?;
    let (configured_path, mut learn) = match &config.weights {
        WeightsMode::Learned { triplets, learn } => (Some(triplets.clone()), *learn),
        _ => (None, Default::default()),
    };
    let path = triplets
        .map(Path::to_path_buf)
        .or(configured_path)
        .ok_or_else(|| CliError::Usage("no --triplets given and the config does not name a triplet file".into()))?;
    if let Some(v) = epochs {
        learn.epochs = v;
    }
    if let Some(v) = lr {
        learn.lr = v;
    }
    if let Some(v) = margin {
        learn.margin = v;
    }
    let modalities = &config.knowledge_base.modalities;
    let set = load_triplets(&path, modalities)?;
    let (weights, history) = learn_weights_traced(&set, &learn)?;
    let names: Vec<String> = modalities.iter().map(|m| m.name.clone()).collect();
    if let Some(out) = out {
        mqa_core::catalog::save_weights(out, &names, &weights)?;
    }
    let doc = document(
        "learn-weights",
        json!({
            "triplets": set.len(),
            "modalities": names,
            "weights": weights.as_slice(),
            "loss_initial": history.first(),
            "loss_final": history.last(),
            "epochs": learn.epochs,
            "out": out,
        }),
    );
    print(format, doc, || {
        let rows: Vec<Vec<String>> = names
            .iter()
            .zip(weights.as_slice())
            .map(|(n, w)| vec![n.clone(), format!("{w:.6}")])
            .collect();
        format!(
            "{}\nloss {:.6} -> {:.6} over {} epochs on {} triplets",
            table(&["modality", "weight"], &rows),
            history[0],
            history.last().unwrap(),
            learn.epochs,
            set.len()
        )
    });
    Ok(())
}

fn graph_summary(name: &str, g: &NavGraph) -> Value {
    json!({"graph": name, "vertices": g.len(), "edges": g.edge_count(), "entry": g.entry()})
}

fn cmd_build(format: Format, kb: &Path, out: &Path, build: &BuildFlags) -> CliResult {
    let config = config_with(kb, Some(build))?;
    let start = Instant::now();
    let engine = Engine::build(&config)?;
    let seconds = start.elapsed().as_secs_f64();
    let written = save_artifacts(&engine, out)?;
    let mut graphs = Vec::new();
    if let Some(g) = engine.index.must_graph() {
        graphs.push(graph_summary("must", g));
    }
    if let Some(gs) = engine.index.mr_graphs() {
        for (m, g) in engine.kb.modalities.iter().zip(gs) {
            graphs.push(graph_summary(&format!("mr.{}", m.name), g));
        }
    }
    if let Some(g) = engine.index.je_graph() {
        graphs.push(graph_summary("je", g));
    }
    let doc = document(
        "build-index",
        json!({
            "objects": engine.kb.len(),
            "weights": engine.index.weights().as_slice(),
            "build": config.index.build,
            "graphs": graphs,
            "files": written,
            "seconds": seconds,
        }),
    );
    print(format, doc, || {
        let rows: Vec<Vec<String>> = graphs
            .iter()
            .map(|g| {
                ["graph", "vertices", "edges", "entry"]
                    .iter()
                    .map(|k| g[k].as_str().map_or_else(|| g[k].to_string(), str::to_string))
                    .collect()
            })
            .collect();
        format!(
            "{}\n{} files written to {} in {seconds:.2} s",
            table(&["graph", "vertices", "edges", "entry"], &rows),
            written.len(),
            out.display()
        )
    });
    Ok(())
}

fn cmd_query(format: Format, kb: &Path, flags: &QueryFlags, framework: Option<Framework>, build: &BuildFlags) -> CliResult {
    let mut request = query_request(flags)?;
    request.framework = framework;
    let coordinator = configure(config_with(kb, Some(build))?)?;
    let session = coordinator.open_session();
    let response: QueryResponse = coordinator.submit_query(&session, request)?;
    print(format, document("query", to_value(&response)), || {
        let rows: Vec<Vec<String>> = response
            .results
            .iter()
            .map(|r| vec![r.rank.to_string(), r.id.clone(), format!("{:.6}", r.distance)])
            .collect();
        let mut out = format!("{}\n\n{}", response.answer, table(&["rank", "id", "distance"], &rows));
        if response.degraded {
            out.push_str(&format!(
                "\nwarning: {}",
                response.warning.as_deref().unwrap_or("LLM unavailable, template answer used")
            ));
        }
        out
    });
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryLine {
    text: Option<String>,
    selected_id: Option<String>,
    image: Option<PathBuf>,
}

fn read_queries(path: &Path, flags: &QueryFlags) -> CliResult<Vec<QueryRequest>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let q: QueryLine = serde_json::from_str(line)
            .map_err(|e| CliError::Failed(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let image = match q.image {
            Some(p) => {
                let p = base.join(p);
                Some(fs::read(&p).map_err(io_err(&p))?)
            }
            None => None,
        };
        out.push(QueryRequest {
            text: q.text,
            image,
            selected_id: q.selected_id,
            k: flags.k,
            l: flags.l,
            framework: None,
            weights: flags.weights.clone(),
        });
    }
    if out.is_empty() {
        return Err(CliError::Failed(format!("{}: no queries", path.display())));
    }
    Ok(out)
}

/// Per-framework means over all compared queries.
#[derive(Debug, Default, serde::Serialize)]
struct Summary {
    framework: String,
    k: usize,
    l: usize,
    recall: Option<f64>,
    latency_ms: f64,
    visited: f64,
    full_evals: f64,
    abandoned: f64,
}

fn summarize(runs: &[CompareResponse]) -> Vec<Summary> {
    let n = runs.len() as f64;
    let first = &runs[0];
    first
        .frameworks
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let reports = runs.iter().map(|r| &r.frameworks[i]);
            let mean = |g: &dyn Fn(&mqa_server::coordinator::FrameworkReport) -> f64| reports.clone().map(g).sum::<f64>() / n;
            Summary {
                framework: f.framework.as_str().to_string(),
                k: first.k,
                l: first.l,
                recall: f.recall.map(|_| mean(&|r| r.recall.unwrap_or(0.0))),
                latency_ms: mean(&|r| r.latency_ms),
                visited: mean(&|r| r.stats.visited as f64),
                full_evals: mean(&|r| r.stats.full_evals as f64),
                abandoned: mean(&|r| r.stats.abandoned as f64),
            }
        })
        .collect()
}

const CSV_HEADER: &str = "framework,k,L,recall,latency_ms,visited,full_evals,abandoned";

fn csv(summary: &[Summary]) -> String {
    let mut out = String::from(CSV_HEADER);
    for s in summary {
        out.push_str(&format!(
            "\n{},{},{},{},{:.4},{:.2},{:.2},{:.2}",
            s.framework,
            s.k,
            s.l,
            s.recall.map_or(String::new(), |r| format!("{r:.4}")),
            s.latency_ms,
            s.visited,
            s.full_evals,
            s.abandoned
        ));
    }
    out.push('\n');
    out
}

#[allow(clippy::too_many_arguments)]
fn cmd_compare(
    format: Format,
    kb: &Path,
    flags: &QueryFlags,
    queries: Option<&Path>,
    ground_truth: bool,
    csv_path: Option<&Path>,
    build: &BuildFlags,
) -> CliResult {
    let requests = match queries {
        Some(p) => read_queries(p, flags)?,
        None => vec![query_request(flags)?],
    };
    let coordinator = configure(config_with(kb, Some(build))?)?;
    let runs = requests
        .into_iter()
        .map(|r| coordinator.compare(None, r, ground_truth))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&runs);

    if ground_truth {
        let text = csv(&summary);
        match csv_path {
            Some(p) => fs::write(p, &text).map_err(io_err(p))?,
            None => {
                print!("{text}");
                return Ok(());
            }
        }
    }
    let single = (runs.len() == 1).then(|| to_value(&runs[0]));
    let doc = document(
        "compare",
        json!({"queries": runs.len(), "summary": summary, "comparison": single, "csv": csv_path}),
    );
    print(format, doc, || {
        let mut out = String::new();
        if runs.len() == 1 {
            let r = &runs[0];
            let depth = r.frameworks.iter().map(|f| f.results.len()).max().unwrap_or(0);
            let mut headers = vec!["rank"];
            headers.extend(r.frameworks.iter().map(|f| f.framework.as_str()));
            let rows: Vec<Vec<String>> = (0..depth)
                .map(|i| {
                    let mut row = vec![(i + 1).to_string()];
                    row.extend(r.frameworks.iter().map(|f| f.results.get(i).map_or(String::new(), |x| x.id.clone())));
                    row
                })
                .collect();
            out.push_str(&table(&headers, &rows));
            out.push_str("\n\n");
        }
        let rows: Vec<Vec<String>> = summary
            .iter()
            .map(|s| {
                vec![
                    s.framework.clone(),
                    s.recall.map_or("-".into(), |r| format!("{r:.4}")),
                    format!("{:.3}", s.latency_ms),
                    format!("{:.1}", s.visited),
                    format!("{:.1}", s.full_evals),
                    format!("{:.1}", s.abandoned),
                ]
            })
            .collect();
        out.push_str(&table(&["framework", "recall", "latency_ms", "visited", "full_evals", "abandoned"], &rows));
        if let Some(p) = csv_path {
            out.push_str(&format!("\ncsv written to {}", p.display()));
        }
        out
    });
    Ok(())
}

fn cmd_serve(kb: Option<&Path>, addr: Option<SocketAddr>, build: &BuildFlags) -> CliResult {
    let coordinator = match kb {
        Some(kb) => configure(config_with(kb, Some(build))?)?,
        None => Coordinator::new(),
    };
    let addr = match addr {
        Some(a) => a,
        None => mqa_server::http::listen_addr().map_err(|e| CliError::Usage(e.to_string()))?,
    };
    eprintln!("serving on http://{addr}");
    mqa_server::http::run_blocking(addr, Arc::new(coordinator)).map_err(|e| CliError::Failed(format!("{addr}: {e}")))
}

fn cmd_validate(explicit: Option<Format>, graph: Option<&Path>, kb: Option<&Path>) -> CliResult {
    let mut checks = Vec::new();
    let mut problems = Vec::new();
    if let Some(path) = graph {
        let g = load_graph(path)?;
        let report = g.validate();
        if !report.is_valid() {
            problems.extend(report.violations.iter().map(|v| format!("{}: {v:?}", path.display())));
        }
        let mut summary = graph_summary(&path.display().to_string(), &g);
        summary["valid"] = report.is_valid().into();
        summary["max_out_degree"] = report.max_out_degree.into();
        checks.push(summary);
    }
    if let Some(kb) = kb {
        let valid = match load_config(kb).and_then(|c| c.validate().map_err(|e| CliError::Failed(e.to_string()))) {
            Ok(()) => true,
            Err(CliError::Usage(m) | CliError::Failed(m)) => {
                problems.push(m);
                false
            }
        };
        checks.push(json!({"config": kb, "valid": valid}));
    }
    if explicit == Some(Format::Json) {
        println!("{}", serde_json::to_string_pretty(&document("validate", json!({"checks": checks}))).unwrap());
    } else if problems.is_empty() {
        println!("OK");
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(problems.join("\n")))
    }
}

fn run(cli: Cli) -> CliResult {
    let format = Format::resolve(cli.format);
    match &cli.command {
        Command::Ingest { kb, vectors } => cmd_ingest(format, &kb.kb, vectors.as_deref()),
        Command::LearnWeights {
            kb,
            triplets,
            epochs,
            lr,
            margin,
            out,
        } => cmd_learn(format, &kb.kb, triplets.as_deref(), *epochs, *lr, *margin, out.as_deref()),
        Command::BuildIndex { kb, out, build } => cmd_build(format, &kb.kb, out, build),
        Command::Query {
            kb,
            query,
            framework,
            build,
        } => cmd_query(format, &kb.kb, query, *framework, build),
        Command::Compare {
            kb,
            query,
            queries,
            ground_truth,
            csv,
            build,
        } => cmd_compare(format, &kb.kb, query, queries.as_deref(), *ground_truth, csv.as_deref(), build),
        Command::Serve { kb, addr, build } => cmd_serve(kb.as_deref(), *addr, build),
        Command::Validate { graph, kb } => cmd_validate(cli.format, graph.as_deref(), kb.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
