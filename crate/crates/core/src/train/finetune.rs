//! Supervised fine-tuning of the encoder with a task head.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::{encoder_from_map, encoder_to_map, lookup, TrainConfig};
use super::metrics::{classification_metrics, segmentation_metrics, MetricsReport, Task};
use super::{derive_rng, stream};
use crate::dataio::{Checkpoint, Dataset};
use crate::diff::{adam_step, cosine_lr, AdamState, ParamStore, ParamVars, Tape, Var};
use crate::error::{Error, Result};
use crate::geom::{augment, normalize_unit_sphere, subsample, PointCloud};
use crate::model::heads::{argmax, argmax_among, cls_logits, init_cls_head, init_seg_head, seg_logits};
use crate::model::{onehot, Branch, Encoder, EncoderConfig};

/// Hidden width of the per-point segmentation head.
pub const SEG_HEAD_HIDDEN: usize = 128;

/// Encoder initialization for fine-tuning.
#[derive(Debug, Clone)]
pub enum Init<'a> {
    Scratch,
    Pretrained(&'a Checkpoint),
}

/// Raw predictions behind a [`MetricsReport`].
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Classes {
        pred: Vec<usize>,
        truth: Vec<usize>,
    },
    Parts {
        pred: Vec<Vec<u32>>,
        truth: Vec<Vec<u32>>,
        categories: Vec<usize>,
    },
}

impl Predictions {
    /// Recomputes the metrics from the stored predictions.
    pub fn metrics(&self, num_classes: usize, part_table: &[Vec<u32>]) -> Result<MetricsReport> {
        match self {
            Predictions::Classes { pred, truth } => classification_metrics(pred, truth, num_classes),
            Predictions::Parts {
                pred,
                truth,
                categories,
            } => segmentation_metrics(pred, truth, categories, part_table),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
    pub predictions: Predictions,
    /// Mean training loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

struct TaskModel {
    task: Task,
    encoder: Encoder,
    /// Classes for classification, global part count for segmentation.
    outputs: usize,
}

impl TaskModel {
    fn new(task: Task, encoder: &EncoderConfig, data: &Dataset) -> Result<Self> {
        let branch = match task {
            Task::Classification => Branch::Classification,
            Task::Segmentation => Branch::Segmentation,
        };
        let cfg = EncoderConfig {
            branch,
            ..encoder.clone()
        };
        let outputs = match task {
            Task::Classification => data.num_categories(),
            Task::Segmentation => {
                if cfg.num_categories != data.num_categories() {
                    return Err(Error::ClassCountMismatch {
                        head: cfg.num_categories,
                        data: data.num_categories(),
                    });
                }
                data.num_parts()
            }
        };
        if outputs == 0 {
            return Err(Error::MissingLabels("dataset has no category table".into()));
        }
        Ok(Self {
            task,
            encoder: Encoder::new(cfg)?,
            outputs,
        })
    }

    fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = derive_rng(seed, stream::FT_INIT, 0, 0);
        let mut params = ParamStore::new();
        self.encoder.init_params(&mut params, &mut rng);
        let cfg = self.encoder.config();
        match self.task {
            Task::Classification => init_cls_head(&mut params, cfg.embedding_dim, self.outputs, &mut rng),
            Task::Segmentation => {
                init_seg_head(&mut params, cfg.point_feature_dim(), SEG_HEAD_HIDDEN, self.outputs, &mut rng)
            }
        }
        params
    }

    /// Per-shape logits: 1×C or N×P.
    fn logits(&self, tape: &mut Tape, pv: &ParamVars, data: &Dataset, i: usize, cloud: &PointCloud) -> Result<Var> {
        match self.task {
            Task::Classification => {
                let f = self.encoder.forward_cls(tape, pv, &cloud.points)?;
                cls_logits(tape, pv, f)
            }
            Task::Segmentation => {
                let cat = data.category_of(i, "segmentation fine-tuning")?;
                let oh = onehot(cat, self.encoder.config().num_categories)?;
                let feats = self.encoder.forward_seg(tape, pv, &cloud.points, &oh)?;
                seg_logits(tape, pv, feats.per_point)
            }
        }
    }

    fn targets(&self, data: &Dataset, i: usize, cloud: &PointCloud) -> Result<Vec<usize>> {
        match self.task {
            Task::Classification => {
                let c = data.category_of(i, "classification fine-tuning")?;
                if c >= self.outputs {
                    return Err(Error::ClassCountMismatch {
                        head: self.outputs,
                        data: c + 1,
                    });
                }
                Ok(vec![c])
            }
            Task::Segmentation => Ok(cloud
                .labels_for("segmentation fine-tuning")?
                .iter()
                .map(|&l| l as usize)
                .collect()),
        }
    }
}

fn prepare<R: Rng + ?Sized>(cloud: &PointCloud, n: usize, rng: &mut R) -> Result<PointCloud> {
    let picked = if cloud.len() == n {
        cloud.clone()
    } else {
        subsample(cloud, n, rng)?
    };
    Ok(normalize_unit_sphere(&picked).cloud)
}

fn run(
    task: Task,
    data: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
    encoder: &EncoderConfig,
    init: &Init<'_>,
    config: &TrainConfig,
    log: &mut dyn Write,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::InvalidArgument("fine-tuning needs non-empty train and test sets".into()));
    }
    let model = TaskModel::new(task, encoder, data)?;
    for &i in train_idx.iter().chain(test_idx) {
        model.targets(data, i, data.cloud(i))?;
    }
    let mut params = model.init_params(config.seed);
    let init_name = match init {
        Init::Scratch => "scratch",
        Init::Pretrained(ck) => {
            let theirs = encoder_from_map(&ck.config)?;
            if theirs.branch != model.encoder.config().branch {
                return Err(Error::ShapeTableMismatch(format!(
                    "checkpoint encoder is the {} branch, task needs {}",
                    theirs.branch.as_str(),
                    model.encoder.config().branch.as_str()
                )));
            }
            params.load_matching(&ck.params, "enc.")?;
            let head = match task {
                Task::Classification => "head.cls.b",
                Task::Segmentation => "head.seg.l2.b",
            };
            if let Some(b) = ck.params.get(head) {
                if b.len() != model.outputs {
                    return Err(Error::ClassCountMismatch {
                        head: b.len(),
                        data: model.outputs,
                    });
                }
                params.load_matching(&ck.params, "head.")?;
            }
            "pretrained"
        }
    };

    let mut adam = AdamState::new(&params, config.beta1, config.beta2, config.adam_eps);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch as f64, config.epochs as f64, config.lr0);
        let mut order = train_idx.to_vec();
        order.shuffle(&mut derive_rng(config.seed, stream::FT_SHUFFLE, epoch as u64, 0));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let pv = params.register(&mut tape, true);
            let mut total: Option<Var> = None;
            for &i in batch {
                let mut rng = derive_rng(config.seed, stream::FT_SAMPLE, epoch as u64, i as u64);
                let cloud = prepare(data.cloud(i), config.points_per_cloud, &mut rng)?;
                let cloud = augment(&cloud, &config.augment, &mut rng)?;
                let targets = model.targets(data, i, &cloud)?;
                let logits = model.logits(&mut tape, &pv, data, i, &cloud)?;
                let ce = tape.cross_entropy(logits, &targets)?;
                total = Some(match total {
                    None => ce,
                    Some(t) => tape.add(t, ce)?,
                });
            }
            let loss = tape.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFinite("fine-tuning loss"));
            }
            tape.backward(loss)?;
            let grads = pv.grads(&tape);
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::NonFinite("fine-tuning gradient"));
            }
            adam_step(&mut params, &grads, &mut adam, lr)?;
            writeln!(log, "{epoch} {step} {lr:.9e} {value:.9e}")?;
            epoch_loss += value * batch.len() as f64;
            step += 1;
        }
        epoch_losses.push(epoch_loss / train_idx.len() as f64);
    }
    log.flush()?;

    let mut ck_config = encoder_to_map(model.encoder.config());
    ck_config.extend(config.to_map());
    ck_config.insert("task".into(), format!("finetune-{}", task.as_str()));
    ck_config.insert("init".into(), init_name.into());
    let checkpoint = Checkpoint {
        config: ck_config,
        params,
        adam: Some(adam),
        epoch: config.epochs as u64,
        step,
    };
    let (report, predictions) = evaluate(&checkpoint, data, test_idx)?;
    Ok(FinetuneOutcome {
        checkpoint,
        report,
        predictions,
        epoch_losses,
    })
}

/// Fine-tunes for shape classification and evaluates on `test_idx`.
pub fn finetune_cls(
    data: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
    encoder: &EncoderConfig,
    init: &Init<'_>,
    config: &TrainConfig,
    log: &mut dyn Write,
) -> Result<FinetuneOutcome> {
    run(Task::Classification, data, train_idx, test_idx, encoder, init, config, log)
}

/// Fine-tunes for part segmentation and evaluates on `test_idx`.
pub fn finetune_seg(
    data: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
    encoder: &EncoderConfig,
    init: &Init<'_>,
    config: &TrainConfig,
    log: &mut dyn Write,
) -> Result<FinetuneOutcome> {
    run(Task::Segmentation, data, train_idx, test_idx, encoder, init, config, log)
}

/// Metrics of a fine-tuned checkpoint on the clouds `indices` of `data`.
pub fn evaluate(checkpoint: &Checkpoint, data: &Dataset, indices: &[usize]) -> Result<(MetricsReport, Predictions)> {
    let task = match checkpoint.config_value("task")? {
        "finetune-cls" => Task::Classification,
        "finetune-seg" => Task::Segmentation,
        other => {
            return Err(Error::ShapeTableMismatch(format!(
                "checkpoint task {other:?} has no task head to evaluate"
            )))
        }
    };
    if indices.is_empty() {
        return Err(Error::InvalidArgument("no clouds to evaluate".into()));
    }
    let encoder = encoder_from_map(&checkpoint.config)?;
    let model = TaskModel::new(task, &encoder, data)?;
    let expected = model.init_params(0);
    if expected.shape_table("") != checkpoint.params.shape_table("") {
        let mut probe = expected;
        probe.load_matching(&checkpoint.params, "")?;
    }
    let points: usize = lookup(&checkpoint.config, "train.points")?;
    let seed: u64 = lookup(&checkpoint.config, "train.seed")?;
    let params = &checkpoint.params;

    let mut class_pred = Vec::new();
    let mut class_truth = Vec::new();
    let mut part_pred = Vec::new();
    let mut part_truth = Vec::new();
    let mut categories = Vec::new();
    for &i in indices {
        let mut rng = derive_rng(seed, stream::EVAL, i as u64, 0);
        let cloud = prepare(data.cloud(i), points, &mut rng)?;
        let targets = model.targets(data, i, &cloud)?;
        let mut tape = Tape::new();
        let pv = params.register(&mut tape, false);
        let logits = model.logits(&mut tape, &pv, data, i, &cloud)?;
        let t = tape.value(logits);
        match task {
            Task::Classification => {
                class_pred.push(argmax(t.row(0)));
                class_truth.push(targets[0]);
            }
            Task::Segmentation => {
                let cat = data.category_of(i, "segmentation evaluation")?;
                let allowed = &data.part_table()[cat];
                part_pred.push((0..t.rows()).map(|r| argmax_among(t.row(r), allowed)).collect());
                part_truth.push(targets.iter().map(|&l| l as u32).collect());
                categories.push(cat);
            }
        }
    }
    let predictions = match task {
        Task::Classification => Predictions::Classes {
            pred: class_pred,
            truth: class_truth,
        },
        Task::Segmentation => Predictions::Parts {
            pred: part_pred,
            truth: part_truth,
            categories,
        },
    };
    let report = predictions.metrics(model.outputs, data.part_table())?;
    Ok((report, predictions))
}
