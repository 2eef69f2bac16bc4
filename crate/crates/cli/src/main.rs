use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use slotgat::graph::{load_graph, load_labels, write_graph, HetGraph};
use slotgat::harness::{
    evaluate, export_embeddings, generate_synthetic, hold_out, prepare_graph, split_lp, train,
    Embeddings, FeatType, Metrics, NcTask, Part, SyntheticData, SyntheticSpec, Task, TrainConfig,
    TrainedModel,
};
use slotgat::model::{forward_values, Mode, SlotIntegration};
use slotgat::spectral::{
    row_normalized_laplacian, stationary_limit, typed_feature_matrix, verify_against,
    verify_convergence,
};
use slotgat::tasks::{Decoder, LabelSet};
use slotgat::{Error, Result};

#[derive(Parser)]
#[command(
    name = "slotgat",
    version,
    about = "Slot-based heterogeneous graph attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and print the history and metrics as JSON.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        hyper: HyperArgs,
        /// Directory receiving model.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a saved model on one split part.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        task: TaskArgs,
        /// model.json written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = PartArg::Test)]
        part: PartArg,
    },
    /// Compare repeated spectral convolution with the per-component limit.
    VerifyTheorem {
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        links: PathBuf,
        /// Mirror every link.
        #[arg(long)]
        undirected: bool,
        #[arg(long, default_value_t = 0.8)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_steps: usize,
        /// Only check this node type.
        #[arg(long = "type")]
        node_type: Option<usize>,
    },
    /// Write a planted-partition graph in node/link/label file format.
    GenSynthetic {
        #[arg(long, value_enum, default_value_t = TaskKind::Nc)]
        task: TaskKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated node counts, one per type.
        #[arg(long, value_delimiter = ',')]
        nodes_per_type: Option<Vec<usize>>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        /// Same-class probability of every relation.
        #[arg(long)]
        affinity: Option<f64>,
        /// Share of labelled target nodes written to the test label file.
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Write node embeddings of a saved model as TSV.
    ExportEmb {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long)]
        model: PathBuf,
        /// Output TSV file.
        #[arg(long)]
        out: PathBuf,
        /// Export the final per-slot state instead of the integrated vectors.
        #[arg(long)]
        slots: bool,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    nodes: PathBuf,
    #[arg(long)]
    links: PathBuf,
    /// Training label file (node classification).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Test label file; without it a share of --labels is held out.
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// Mirror every link.
    #[arg(long)]
    undirected: bool,
}

#[derive(Args)]
struct TaskArgs {
    #[arg(long, value_enum, default_value_t = TaskKind::Nc)]
    task: TaskKind,
    #[arg(long, default_value_t = 0)]
    target_type: usize,
    #[arg(long, default_value_t = 0)]
    target_edge_type: usize,
    /// Held-out test share when no test label file is given.
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    /// Seed of the data split; defaults to --seed.
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long, default_value_t = defaults().lr)]
    lr: f64,
    #[arg(long, default_value_t = defaults().weight_decay)]
    weight_decay: f64,
    #[arg(long, default_value_t = defaults().dropout_attn)]
    dropout_attn: f64,
    #[arg(long, default_value_t = defaults().dropout_feat)]
    dropout_feat: f64,
    #[arg(long, default_value_t = defaults().feat_type)]
    feat_type: FeatType,
    #[arg(long, default_value_t = defaults().hidden_dim)]
    hidden_dim: usize,
    #[arg(long, default_value_t = defaults().layers)]
    layers: usize,
    #[arg(long, default_value_t = defaults().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = defaults().heads)]
    heads: usize,
    #[arg(long, default_value_t = defaults().att_dim)]
    att_dim: usize,
    #[arg(long, default_value_t = defaults().edge_dim)]
    edge_dim: usize,
    #[arg(long, default_value_t = defaults().decoder)]
    decoder: Decoder,
    #[arg(long, default_value_t = defaults().slot_integration)]
    slot_integration: SlotIntegration,
    #[arg(long, default_value_t = defaults().patience)]
    patience: usize,
    #[arg(long, default_value_t = defaults().seed)]
    seed: u64,
    #[arg(long)]
    residual: bool,
    #[arg(long)]
    attn_residual: bool,
    #[arg(long)]
    hidden_embeddings: bool,
    #[arg(long, default_value_t = defaults().negative_slope)]
    negative_slope: f64,
}

fn defaults() -> TrainConfig {
    TrainConfig::default()
}

impl HyperArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            dropout_attn: self.dropout_attn,
            dropout_feat: self.dropout_feat,
            feat_type: self.feat_type,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            epochs: self.epochs,
            heads: self.heads,
            att_dim: self.att_dim,
            edge_dim: self.edge_dim,
            decoder: self.decoder,
            slot_integration: self.slot_integration,
            patience: self.patience,
            seed: self.seed,
            residual: self.residual,
            attn_residual: self.attn_residual,
            negative_slope: self.negative_slope,
            final_activation: false,
            hidden_embeddings: self.hidden_embeddings,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskKind {
    Nc,
    Lp,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartArg {
    Train,
    Val,
    Test,
}

impl From<PartArg> for Part {
    fn from(p: PartArg) -> Part {
        match p {
            PartArg::Train => Part::Train,
            PartArg::Val => Part::Val,
            PartArg::Test => Part::Test,
        }
    }
}

/// Loads the graph and builds the task; returns the graph to train on.
fn load_task(data: &DataArgs, task: &TaskArgs, seed: u64) -> Result<(HetGraph, Task)> {
    let g = load_graph(&data.nodes, &data.links, data.undirected)?;
    let seed = task.split_seed.unwrap_or(seed);
    match task.task {
        TaskKind::Nc => {
            let path = data
                .labels
                .as_ref()
                .ok_or_else(|| Error::Config("node classification needs --labels".into()))?;
            let train_entries = load_labels(path)?;
            let test_entries = match &data.test_labels {
                Some(p) => load_labels(p)?,
                None => Vec::new(),
            };
            let all = LabelSet::from_entries(
                train_entries.iter().chain(&test_entries).cloned().collect(),
            )?;
            let (classes, multi) = (all.num_classes(), all.multilabel());
            let train_labels = LabelSet::new(train_entries, classes, multi)?;
            let (pool, test_labels) = if data.test_labels.is_some() {
                (train_labels, LabelSet::new(test_entries, classes, multi)?)
            } else {
                let (pool, test) = hold_out(&train_labels, task.test_fraction, seed)?;
                let test = train_labels.restrict(&test)?;
                (pool, test)
            };
            let t = NcTask::new(task.target_type, &pool, &test_labels, seed)?;
            Ok((g, Task::Nc(t)))
        }
        TaskKind::Lp => Ok(split_lp(&g, task.target_edge_type, seed)?.into_task()),
    }
}

fn read_model(path: &Path) -> Result<TrainedModel> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn all_parts(trained: &TrainedModel, g: &HetGraph, task: &Task) -> Result<serde_json::Value> {
    let mut parts = serde_json::Map::new();
    for (name, part) in [
        ("train", Part::Train),
        ("val", Part::Val),
        ("test", Part::Test),
    ] {
        let m: Metrics = evaluate(trained, g, task, part)?;
        parts.insert(name.into(), serde_json::to_value(m)?);
    }
    Ok(parts.into())
}

fn synthetic_spec(
    task: TaskKind,
    nodes_per_type: Option<Vec<usize>>,
    classes: Option<usize>,
    noise: Option<f64>,
    affinity: Option<f64>,
    test_fraction: Option<f64>,
) -> SyntheticSpec {
    let mut spec = match task {
        TaskKind::Nc => SyntheticSpec::node_classification(),
        TaskKind::Lp => SyntheticSpec::link_prediction(),
    };
    if let Some(n) = nodes_per_type {
        spec.nodes_per_type = n;
    }
    if let Some(c) = classes {
        spec.classes = c;
        spec.resolution = spec.resolution.iter().map(|&r| r.min(c)).collect();
    }
    if let Some(x) = noise {
        spec.noise = x;
    }
    if let Some(a) = affinity {
        spec.relations.iter_mut().for_each(|r| r.affinity = a);
    }
    if let Some(f) = test_fraction {
        spec.test_fraction = f;
    }
    let types = spec.nodes_per_type.len();
    let last = |v: &Vec<usize>| *v.last().unwrap_or(&1);
    spec.feat_dims.resize(types, last(&spec.feat_dims));
    spec.resolution.resize(types, last(&spec.resolution));
    spec.relations
        .retain(|r| r.src_type < types && r.dst_type < types);
    spec
}

fn write_labels(path: &Path, g: &HetGraph, labels: &LabelSet) -> Result<()> {
    let mut text = String::new();
    for (v, ls) in labels.iter() {
        let ls: Vec<String> = ls.iter().map(usize::to_string).collect();
        text.push_str(&format!(
            "{v}\tn{v}\t{}\t{}\n",
            g.node_type(v),
            ls.join(",")
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            data,
            task,
            hyper,
            out,
        } => {
            let cfg = hyper.config();
            let (g, task) = load_task(&data, &task, cfg.seed)?;
            let outcome = train(&g, &cfg, &task)?;
            let metrics = all_parts(&outcome.trained, &g, &task)?;
            if let Some(dir) = &out {
                fs::create_dir_all(dir)?;
                fs::write(
                    dir.join("model.json"),
                    serde_json::to_string(&outcome.trained)?,
                )?;
            }
            print_json(&json!({
                "best_epoch": outcome.best_epoch,
                "best_val": outcome.best_val,
                "epochs_run": outcome.history.len(),
                "history": outcome.history,
                "metrics": metrics,
                "config": cfg,
            }))
        }
        Command::Eval {
            data,
            task,
            model,
            part,
        } => {
            let trained = read_model(&model)?;
            let (g, task) = load_task(&data, &task, trained.train_config.seed)?;
            let m = evaluate(&trained, &g, &task, part.into())?;
            print_json(&m)
        }
        Command::VerifyTheorem {
            nodes,
            links,
            undirected,
            alpha,
            tol,
            max_steps,
            node_type,
        } => {
            let g = load_graph(&nodes, &links, undirected)?.add_self_loops();
            let types: Vec<usize> = match node_type {
                Some(t) => vec![t],
                None => (0..g.num_node_types()).collect(),
            };
            let op = row_normalized_laplacian(&g, alpha)?;
            let mut reports = Vec::new();
            for t in types {
                let r = verify_convergence(&g, t, alpha, tol, max_steps)?;
                let x = typed_feature_matrix(&g, t)?;
                let stat = stationary_limit(&g, &op, t)?;
                let s = verify_against(&op, &x, &stat, tol, max_steps)?;
                reports.push(json!({
                    "graph": nodes.display().to_string(),
                    "type": t,
                    "alpha": alpha,
                    "steps": r.steps_used,
                    "max_abs_diff": r.max_abs_diff,
                    "converged": r.converged,
                    "degree_weighted_max_abs_diff": s.max_abs_diff,
                    "degree_weighted_converged": s.converged,
                }));
            }
            print_json(&reports)
        }
        Command::GenSynthetic {
            task,
            seed,
            out,
            nodes_per_type,
            classes,
            noise,
            affinity,
            test_fraction,
        } => {
            let spec = synthetic_spec(
                task,
                nodes_per_type,
                classes,
                noise,
                affinity,
                test_fraction,
            );
            let SyntheticData {
                graph,
                train_labels,
                test_labels,
                ..
            } = generate_synthetic(&spec, seed)?;
            fs::create_dir_all(&out)?;
            write_graph(&graph, &out.join("node.dat"), &out.join("link.dat"), true)?;
            write_labels(&out.join("label.dat"), &graph, &train_labels)?;
            write_labels(&out.join("label.dat.test"), &graph, &test_labels)?;
            print_json(&json!({
                "out": out.display().to_string(),
                "nodes": graph.num_nodes(),
                "links": graph.num_edges() / 2,
                "node_types": graph.num_node_types(),
                "edge_types": graph.num_edge_types(),
                "train_labels": train_labels.len(),
                "test_labels": test_labels.len(),
                "spec": spec,
            }))
        }
        Command::ExportEmb {
            data,
            task,
            model,
            out,
            slots,
        } => {
            let trained = read_model(&model)?;
            let (g, task) = load_task(&data, &task, trained.train_config.seed)?;
            let prepared = prepare_graph(&g, &trained.train_config, &task)?;
            let fwd = forward_values(&prepared, &trained.params, &trained.model, Mode::EVAL)?;
            let emb = if slots {
                Embeddings::Slots(fwd.states.last().expect("at least one layer"))
            } else {
                Embeddings::Integrated(&fwd.output)
            };
            export_embeddings(&out, emb, prepared.node_types())?;
            let rows = if slots {
                prepared.num_nodes() * prepared.num_node_types()
            } else {
                prepared.num_nodes()
            };
            print_json(&json!({ "out": out.display().to_string(), "rows": rows }))
        }
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let obj = json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{obj}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 2),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            fail(e.kind(), &e.to_string(), 1)
        }
    }
}
