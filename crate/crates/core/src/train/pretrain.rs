//! Mixing/disentangling pre-training loop.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::config::{ModelConfig, TrainConfig};
use super::{derive_rng, stream};
use crate::dataio::{Checkpoint, Dataset};
use crate::diff::{adam_step, cosine_lr, AdamState, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{augment, mix, normalize_unit_sphere, subsample, MdSample, Point3, PointCloud};
use crate::losses::{total_loss, LossConfig};
use crate::model::{onehot, Branch, MdModel};

/// A mixed example ready for the model, with the category vector the
/// segmentation branch needs.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub sample: MdSample,
    pub onehot: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    /// Batch mean of Chamfer(ŝ_a, s_a) + Chamfer(ŝ_b, s_b).
    pub chamfer: f64,
    /// 0 when λ = 0 or the batch has a single sample.
    pub contrastive: f64,
    pub total: f64,
}

/// One row of the pre-training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLine {
    pub epoch: u64,
    pub step: u64,
    pub lr: f64,
    pub losses: StepLosses,
}

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {:.9e} {:.9e} {:.9e} {:.9e}",
            self.epoch, self.step, self.lr, self.losses.chamfer, self.losses.contrastive, self.losses.total
        )
    }
}

/// Disentangled outputs for inspection.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub points_a: Vec<Point3>,
    pub weights_a: Vec<f64>,
    pub points_b: Vec<Point3>,
    pub weights_b: Vec<f64>,
}

fn to_points(t: &Tensor) -> Vec<Point3> {
    t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Subsamples, normalizes and augments one source cloud.
fn prepare_source<R: Rng + ?Sized>(cloud: &PointCloud, config: &TrainConfig, rng: &mut R) -> Result<PointCloud> {
    let picked = subsample(cloud, config.points_per_cloud, rng)?;
    let normalized = normalize_unit_sphere(&picked).cloud;
    augment(&normalized, &config.augment, rng)
}

pub struct Pretrainer<'a> {
    dataset: &'a Dataset,
    model: MdModel,
    model_config: ModelConfig,
    config: TrainConfig,
    loss: LossConfig,
    params: ParamStore,
    adam: AdamState,
    step: u64,
}

impl<'a> Pretrainer<'a> {
    pub fn new(dataset: &'a Dataset, model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        let model = MdModel::new(model_config.encoder.clone(), model_config.decoder.clone())?;
        let params = model.init_params(&mut derive_rng(config.seed, stream::INIT, 0, 0));
        let adam = AdamState::new(&params, config.beta1, config.beta2, config.adam_eps);
        Self::assemble(dataset, model, model_config, config, params, adam, 0)
    }

    /// Continues a run from a pre-training checkpoint.
    pub fn from_checkpoint(dataset: &'a Dataset, checkpoint: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let model_config = ModelConfig::from_map(&checkpoint.config)?;
        let model = MdModel::new(model_config.encoder.clone(), model_config.decoder.clone())?;
        let mut params = model.init_params(&mut derive_rng(config.seed, stream::INIT, 0, 0));
        params.load_matching(&checkpoint.params, "")?;
        let adam = match &checkpoint.adam {
            Some(a) if a.matches(&params) => a.clone(),
            Some(_) => return Err(Error::ShapeTableMismatch("optimizer state does not match parameters".into())),
            None => AdamState::new(&params, config.beta1, config.beta2, config.adam_eps),
        };
        Self::assemble(dataset, model, model_config, config, params, adam, checkpoint.step)
    }

    fn assemble(
        dataset: &'a Dataset,
        model: MdModel,
        model_config: ModelConfig,
        config: TrainConfig,
        params: ParamStore,
        adam: AdamState,
        step: u64,
    ) -> Result<Self> {
        config.validate()?;
        if dataset.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "pre-training needs at least 2 clouds, dataset has {}",
                dataset.len()
            )));
        }
        if model_config.encoder.branch == Branch::Segmentation {
            let cats = model_config.encoder.num_categories;
            for i in 0..dataset.len() {
                let c = dataset.category_of(i, "segmentation pre-training")?;
                if c >= cats {
                    return Err(Error::ClassCountMismatch {
                        head: cats,
                        data: c + 1,
                    });
                }
            }
        }
        let loss = LossConfig::new(config.lambda)?;
        Ok(Self {
            dataset,
            model,
            model_config,
            config,
            loss,
            params,
            adam,
            step,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn model(&self) -> &MdModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn global_step(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.dataset.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.config.epochs as u64
    }

    pub fn epoch_of(&self, step: u64) -> u64 {
        step / self.steps_per_epoch()
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        cosine_lr(self.epoch_of(step) as f64, self.config.epochs as f64, self.config.lr0)
    }

    /// Draws an ordered pair of distinct clouds and mixes them.
    fn prepare_one(&self, step: u64, slot: u64) -> Result<PreparedSample> {
        let mut rng = derive_rng(self.config.seed, stream::SAMPLE, step, slot);
        let m = self.dataset.len();
        let ia = rng.random_range(0..m);
        let mut ib = rng.random_range(0..m - 1);
        if ib >= ia {
            ib += 1;
        }
        let a = prepare_source(self.dataset.cloud(ia), &self.config, &mut rng)?;
        let b = prepare_source(self.dataset.cloud(ib), &self.config, &mut rng)?;
        let sample = mix(&a, &b, &mut rng)?;
        let onehot = match self.model_config.encoder.branch {
            Branch::Classification => None,
            Branch::Segmentation => {
                let pick = if rng.random::<bool>() { ia } else { ib };
                let cat = self.dataset.category_of(pick, "segmentation pre-training")?;
                Some(onehot(cat, self.model_config.encoder.num_categories)?)
            }
        };
        Ok(PreparedSample { sample, onehot })
    }

    /// The batch for global step `step`. Samples are independent, so they may
    /// be assembled on several threads without changing the result.
    pub fn prepare_batch(&self, step: u64) -> Result<Vec<PreparedSample>> {
        let b = self.config.batch_size as u64;
        let threads = self.config.effective_threads().min(b as usize);
        if threads <= 1 {
            return (0..b).map(|slot| self.prepare_one(step, slot)).collect();
        }
        let chunk = (b as usize).div_ceil(threads);
        let slots: Vec<u64> = (0..b).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = slots
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || part.iter().map(|&s| self.prepare_one(step, s)).collect::<Result<Vec<_>>>())
                })
                .collect();
            let mut out = Vec::with_capacity(b as usize);
            for h in handles {
                out.extend(h.join().expect("batch assembly thread panicked")?);
            }
            Ok(out)
        })
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        samples: &[PreparedSample],
        step: u64,
        train: bool,
    ) -> Result<(Var, StepLosses, crate::diff::ParamVars)> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let pv = params.register(tape, true);
        let mut rng = derive_rng(self.config.seed, stream::DROPOUT, step, 0);
        let mut recon = None;
        let mut embeddings = Vec::with_capacity(samples.len());
        for s in samples {
            let out = self
                .model
                .forward(tape, &pv, &s.sample, s.onehot.as_deref(), &mut rng, train)?;
            recon = Some(match recon {
                None => out.reconstruction,
                Some(r) => tape.add(r, out.reconstruction)?,
            });
            embeddings.push(out.embedding);
        }
        let recon = tape.scale(recon.expect("non-empty batch"), 1.0 / samples.len() as f64)?;
        let contrastive = if self.loss.lambda > 0.0 && samples.len() >= 2 {
            let e = tape.value(embeddings[0]).len();
            let stacked = tape.concat(&embeddings, 0)?;
            let stacked = tape.reshape(stacked, &[samples.len(), e])?;
            Some(tape.contrastive(stacked)?)
        } else {
            None
        };
        let total = total_loss(tape, recon, contrastive, &self.loss)?;
        let losses = StepLosses {
            chamfer: tape.value(recon).data()[0],
            contrastive: contrastive.map_or(0.0, |c| tape.value(c).data()[0]),
            total: tape.value(total).data()[0],
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFinite("pre-training loss"));
        }
        Ok((total, losses, pv))
    }

    /// Loss of a batch under the current parameters without updating them.
    /// Uses the same random streams as the training step would.
    pub fn evaluate(&self, samples: &[PreparedSample], step: u64) -> Result<StepLosses> {
        let mut tape = Tape::new();
        Ok(self.forward(&mut tape, &self.params, samples, step, true)?.1)
    }

    /// Loss that training step `step` sees, recomputed from the current parameters.
    pub fn evaluate_step(&self, step: u64) -> Result<StepLosses> {
        self.evaluate(&self.prepare_batch(step)?, step)
    }

    /// One Adam update on the given batch.
    pub fn step_on(&mut self, samples: &[PreparedSample], lr: f64) -> Result<StepLosses> {
        let mut tape = Tape::new();
        let (total, losses, pv) = self.forward(&mut tape, &self.params, samples, self.step, true)?;
        tape.backward(total)?;
        let grads = pv.grads(&tape);
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFinite("pre-training gradient"));
        }
        adam_step(&mut self.params, &grads, &mut self.adam, lr)?;
        self.step += 1;
        Ok(losses)
    }

    /// One scheduled step: sample the batch, update, report.
    pub fn step(&mut self) -> Result<LogLine> {
        let step = self.step;
        let lr = self.lr_at(step);
        let batch = self.prepare_batch(step)?;
        let losses = self.step_on(&batch, lr)?;
        Ok(LogLine {
            epoch: self.epoch_of(step),
            step,
            lr,
            losses,
        })
    }

    /// Runs the remaining steps, writing one log line per step. With
    /// `save_to` and a non-zero save interval, intermediate checkpoints go
    /// to `<save_to>.epoch<E>`.
    pub fn run(&mut self, log: &mut dyn Write, save_to: Option<&Path>) -> Result<Checkpoint> {
        let spe = self.steps_per_epoch();
        while self.step < self.total_steps() {
            let line = self.step()?;
            writeln!(log, "{line}")?;
            let done_epoch = self.step / spe;
            if self.step % spe == 0 && self.config.save_interval > 0 && done_epoch % self.config.save_interval as u64 == 0 {
                if let Some(base) = save_to {
                    let mut name = base.as_os_str().to_owned();
                    name.push(format!(".epoch{done_epoch}"));
                    self.checkpoint().save(&PathBuf::from(name))?;
                }
            }
        }
        log.flush()?;
        Ok(self.checkpoint())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut config = self.model_config.to_map();
        config.extend(self.config.to_map());
        config.insert("task".into(), "pretrain".into());
        Checkpoint {
            config,
            params: self.params.clone(),
            adam: Some(self.adam.clone()),
            epoch: self.epoch_of(self.step),
            step: self.step,
        }
    }

    /// Disentangles one mixed sample with dropout off.
    pub fn reconstruct(&self, sample: &PreparedSample) -> Result<Reconstruction> {
        reconstruct(&self.model, &self.params, sample)
    }
}

/// Disentangles one mixed sample with dropout off, from bare parameters.
pub fn reconstruct(model: &MdModel, params: &ParamStore, sample: &PreparedSample) -> Result<Reconstruction> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape, false);
    let mut rng = derive_rng(0, stream::DROPOUT, 0, 0);
    let out = model.forward(&mut tape, &pv, &sample.sample, sample.onehot.as_deref(), &mut rng, false)?;
    Ok(Reconstruction {
        points_a: to_points(tape.value(out.recon_a.points)),
        weights_a: tape.value(out.recon_a.weights).data().to_vec(),
        points_b: to_points(tape.value(out.recon_b.points)),
        weights_b: tape.value(out.recon_b.weights).data().to_vec(),
    })
}

/// Full pre-training run from scratch.
pub fn pretrain(dataset: &Dataset, model: ModelConfig, config: TrainConfig, log: &mut dyn Write) -> Result<Checkpoint> {
    Pretrainer::new(dataset, model, config)?.run(log, None)
}
