use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::features::apply_feat_type;
use super::optim::AdamW;
use super::split::{split_nc, LpSplit, NodeSplit};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::HetGraph;
use crate::model::{forward_values, model_forward, Mode, ModelConfig, ModelParams};
use crate::tasks::{
    decode_distmult, decode_dot, lp_loss, macro_f1_multilabel, micro_f1_multilabel, mrr_by_source,
    nc_loss, predict_labels, roc_auc, Decoder, EdgeSamples, LabelSet,
};

/// Node classification on one node type.
#[derive(Clone, Debug)]
pub struct NcTask {
    pub target_type: usize,
    /// Labels of every node in the split, test nodes included.
    pub labels: LabelSet,
    pub split: NodeSplit,
}

impl NcTask {
    /// Splits `train_labels` 80/20 into train and validation and takes
    /// `test_labels` as the test part.
    pub fn new(
        target_type: usize,
        train_labels: &LabelSet,
        test_labels: &LabelSet,
        seed: u64,
    ) -> Result<Self> {
        let mut split = split_nc(train_labels, seed)?;
        split.test = test_labels.nodes().to_vec();
        let classes = train_labels.num_classes().max(test_labels.num_classes());
        let multilabel = train_labels.multilabel() || test_labels.multilabel();
        let entries = train_labels
            .iter()
            .chain(test_labels.iter())
            .map(|(v, ls)| (v, ls.to_vec()))
            .collect();
        Ok(Self {
            target_type,
            labels: LabelSet::new(entries, classes, multilabel)?,
            split,
        })
    }
}

/// Link prediction for one edge type. Train on the graph of the
/// [`LpSplit`] this came from.
#[derive(Clone, Debug)]
pub struct LpTask {
    pub target_edge_type: usize,
    /// Node types joined by the target edge type.
    pub endpoint_types: Vec<usize>,
    pub train: EdgeSamples,
    pub val: EdgeSamples,
    pub test: EdgeSamples,
}

impl LpSplit {
    /// The message-passing graph and the task to train on it.
    pub fn into_task(self) -> (HetGraph, Task) {
        let mut endpoint_types: Vec<usize> = self
            .train
            .positives
            .iter()
            .chain(&self.val.positives)
            .chain(&self.test.positives)
            .flat_map(|&(a, b)| [self.graph.node_type(a), self.graph.node_type(b)])
            .collect();
        endpoint_types.sort_unstable();
        endpoint_types.dedup();
        let task = LpTask {
            target_edge_type: self.target_edge_type,
            endpoint_types,
            train: self.train,
            val: self.val,
            test: self.test,
        };
        (self.graph, Task::Lp(task))
    }
}

#[derive(Clone, Debug)]
pub enum Task {
    Nc(NcTask),
    Lp(LpTask),
}

/// Task family a model was trained for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Nc,
    Lp,
}

impl Task {
    pub fn kind(&self) -> TaskKind {
        match self {
            Task::Nc(_) => TaskKind::Nc,
            Task::Lp(_) => TaskKind::Lp,
        }
    }

    pub fn target_types(&self) -> Vec<usize> {
        match self {
            Task::Nc(t) => vec![t.target_type],
            Task::Lp(t) => t.endpoint_types.clone(),
        }
    }
}

/// Which part of a split to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Val,
    Test,
}

/// Scores of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrr: Option<f64>,
}

impl Metrics {
    /// The score used for model selection: micro-F1 or ROC-AUC.
    pub fn selection(&self) -> f64 {
        self.micro_f1.or(self.roc_auc).unwrap_or(f64::NAN)
    }
}

/// Everything needed to rerun a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub task: TaskKind,
    pub train_config: TrainConfig,
    pub model: ModelConfig,
    pub params: ModelParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training loss before this epoch's update.
    pub train_loss: f64,
    /// Validation score after this epoch's update.
    pub val_metric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainOutcome {
    pub trained: TrainedModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Applies the feature regime and adds self-loops.
pub fn prepare_graph(g: &HetGraph, cfg: &TrainConfig, task: &Task) -> Result<HetGraph> {
    Ok(apply_feat_type(g, cfg.feat_type, &task.target_types())?.add_self_loops())
}

fn output_width(g: &HetGraph, cfg: &TrainConfig, task: &Task) -> Result<usize> {
    match task {
        Task::Nc(t) => {
            if t.target_type >= g.num_node_types() {
                return Err(Error::Config(format!(
                    "target type {} not in graph",
                    t.target_type
                )));
            }
            Ok(t.labels.num_classes())
        }
        Task::Lp(t) => {
            if t.target_edge_type >= g.num_edge_types() {
                return Err(Error::Config(format!(
                    "target edge type {} not in graph",
                    t.target_edge_type
                )));
            }
            Ok(cfg.hidden_dim)
        }
    }
}

/// Randomly initialised model for a prepared graph.
pub fn init_model(prepared: &HetGraph, cfg: &TrainConfig, task: &Task) -> Result<TrainedModel> {
    cfg.validate()?;
    let out = output_width(prepared, cfg, task)?;
    let mut model = cfg.model_config(prepared, out, &task.target_types())?;
    if matches!(task, Task::Lp(_)) {
        model.hidden_embeddings = cfg.hidden_embeddings;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(&model, &mut rng)?;
    if matches!(task, Task::Lp(_)) && cfg.decoder == Decoder::DistMult {
        params = params.with_decoder(model.output_dim(), &mut rng);
    }
    Ok(TrainedModel {
        task: task.kind(),
        train_config: cfg.clone(),
        model,
        params,
    })
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (epoch as u64).wrapping_add(1)
}

/// Full-graph training driven one epoch at a time.
pub struct Trainer<'a> {
    graph: HetGraph,
    task: &'a Task,
    trained: TrainedModel,
    opt: AdamW,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(g: &HetGraph, cfg: &TrainConfig, task: &'a Task) -> Result<Self> {
        cfg.validate()?;
        let graph = prepare_graph(g, cfg, task)?;
        let trained = init_model(&graph, cfg, task)?;
        Ok(Self {
            graph,
            task,
            opt: AdamW::new(cfg.lr, cfg.weight_decay),
            trained,
            epoch: 0,
        })
    }

    pub fn graph(&self) -> &HetGraph {
        &self.graph
    }

    pub fn trained(&self) -> &TrainedModel {
        &self.trained
    }

    /// One gradient step; returns the loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let TrainedModel {
            train_config: cfg,
            model,
            params,
            ..
        } = &mut self.trained;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let mode = Mode::train(epoch_seed(cfg.seed, self.epoch));
        let fwd = model_forward(&mut tape, &self.graph, &bound, model, mode)?;
        let loss = match self.task {
            Task::Nc(t) => nc_loss(&mut tape, fwd.output, &t.labels, &t.split.train)?,
            Task::Lp(t) => lp_loss(&mut tape, fwd.output, &t.train, cfg.decoder, bound.decoder)?,
        };
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch,
                loss: value,
            });
        }
        let grads = tape.backward(loss)?;
        let grad_refs: Vec<Option<&Tensor>> = bound.vars().iter().map(|&v| grads.get(v)).collect();
        self.opt.step(&mut params.tensors_mut(), &grad_refs)?;
        self.epoch += 1;
        Ok(value)
    }

    pub fn evaluate(&self, part: Part) -> Result<Metrics> {
        evaluate_prepared(&self.trained, &self.graph, self.task, part)
    }
}

/// Trains with early stopping on the validation score and returns the best
/// parameters seen.
pub fn train(g: &HetGraph, cfg: &TrainConfig, task: &Task) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(g, cfg, task)?;
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let train_loss = trainer.step()?;
        let val_metric = trainer.evaluate(Part::Val)?.selection();
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_metric,
        });
        log::debug!("epoch {epoch}: loss {train_loss:.6} val {val_metric:.4}");
        let improved = best.as_ref().is_none_or(|&(_, b, _)| val_metric > b);
        if improved {
            best = Some((epoch, val_metric, trainer.trained.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let mut trained = trainer.trained;
    let (best_epoch, best_val) = match best {
        Some((e, v, p)) => {
            trained.params = p;
            (e, v)
        }
        None => (0, f64::NAN),
    };
    Ok(TrainOutcome {
        trained,
        history,
        best_epoch,
        best_val,
    })
}

/// Scores `trained` on one part of `task`; `g` is the unprepared graph.
pub fn evaluate(trained: &TrainedModel, g: &HetGraph, task: &Task, part: Part) -> Result<Metrics> {
    let prepared = prepare_graph(g, &trained.train_config, task)?;
    evaluate_prepared(trained, &prepared, task, part)
}

fn evaluate_prepared(
    trained: &TrainedModel,
    g: &HetGraph,
    task: &Task,
    part: Part,
) -> Result<Metrics> {
    if trained.task != task.kind() {
        return Err(Error::Config(format!(
            "model was trained for {:?}, not {:?}",
            trained.task,
            task.kind()
        )));
    }
    let out = forward_values(g, &trained.params, &trained.model, Mode::EVAL)?.output;
    match task {
        Task::Nc(t) => {
            if out.cols() != t.labels.num_classes() {
                return Err(Error::Config(format!(
                    "model emits {} columns, not scores for {} classes",
                    out.cols(),
                    t.labels.num_classes()
                )));
            }
            let nodes = match part {
                Part::Train => &t.split.train,
                Part::Val => &t.split.val,
                Part::Test => &t.split.test,
            };
            if nodes.is_empty() {
                return Err(Error::Input(format!("{part:?} split is empty")));
            }
            let pred = predict_labels(&out, nodes, t.labels.multilabel());
            let truth = nodes
                .iter()
                .map(|&v| {
                    t.labels
                        .labels_of(v)
                        .map(<[usize]>::to_vec)
                        .ok_or_else(|| Error::Input(format!("node {v} has no label")))
                })
                .collect::<Result<Vec<_>>>()?;
            let c = t.labels.num_classes();
            Ok(Metrics {
                macro_f1: Some(macro_f1_multilabel(&pred, &truth, c)?),
                micro_f1: Some(micro_f1_multilabel(&pred, &truth, c)?),
                ..Metrics::default()
            })
        }
        Task::Lp(t) => {
            let samples = match part {
                Part::Train => &t.train,
                Part::Val => &t.val,
                Part::Test => &t.test,
            };
            if samples.is_empty() {
                return Err(Error::Input(format!("{part:?} split is empty")));
            }
            let (pairs, truth) = samples.labelled();
            let scores = link_scores(&out, &pairs, trained)?;
            Ok(Metrics {
                roc_auc: Some(roc_auc(&scores, &truth)?),
                mrr: Some(mrr_by_source(&pairs, &scores, &truth)?),
                ..Metrics::default()
            })
        }
    }
}

/// Decoded link probabilities for `pairs`.
pub fn link_scores(
    h: &Tensor,
    pairs: &[(usize, usize)],
    trained: &TrainedModel,
) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|&(v, u)| match trained.train_config.decoder {
            Decoder::Dot => decode_dot(h.row(v), h.row(u)),
            Decoder::DistMult => {
                let w = trained
                    .params
                    .decoder
                    .as_ref()
                    .ok_or_else(|| Error::Config("distmult decoder matrix missing".into()))?;
                decode_distmult(h.row(v), h.row(u), w)
            }
        })
        .collect()
}
