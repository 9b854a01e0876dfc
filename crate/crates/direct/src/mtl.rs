//! Adaptive multi-task training: merged shuffled per-task batches, EMA-tracked
//! loss sums, dynamically normalized loss weights, and lazy per-task updates.
//!
//! Per epoch: the three sub-task datasets are packed into mini-batches,
//! merged, and shuffled. For each batch of task `t` the loss is computed, the
//! task's EMA is updated with the sum of per-example losses, the weight
//! `w^t = (v^t/n^t) / (v^r/n^r)` is computed, and the gradient of
//! `w^t * mean_loss` is applied to the shared encoder and the current task's
//! head only.

use crate::corpus::{derive_subtask_examples, Corpus, SubtaskExample, Task};
use crate::encoding::InputAssembler;
use crate::error::{runtime, usage};
use crate::model::adam::Adam;
use crate::model::params::ParamStore;
use crate::model::transformer::{sinusoidal_positions, EncoderConfig};
use crate::model::{example_loss_and_grads, init_params, ModelConfig, TrainedModel};
use crate::tokenizer::Vocab;
use anyhow::Result;
use indexmap::IndexMap;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One value per sub-task.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerTask<T> {
    pub s: T,
    pub o: T,
    pub r: T,
}

impl<T> PerTask<T> {
    pub fn get(&self, task: Task) -> &T {
        match task {
            Task::Subject => &self.s,
            Task::Object => &self.o,
            Task::Relation => &self.r,
        }
    }

    pub fn get_mut(&mut self, task: Task) -> &mut T {
        match task {
            Task::Subject => &mut self.s,
            Task::Object => &mut self.o,
            Task::Relation => &mut self.r,
        }
    }
}

/// Ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub shared_heads: bool,
    pub equal_weights: bool,
    pub threshold_decode: bool,
    pub plain_optimizer: bool,
}

/// Training hyper-parameters and model dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub extraction_threshold: f64,
    pub relation_threshold: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub ema_decay: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    /// Stop once validation triple F1 (partial) reaches this value.
    pub early_stop_f1: Option<f64>,
    /// Run validation every this many epochs.
    pub eval_every: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub ablation: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            extraction_threshold: 0.9,
            relation_threshold: 0.5,
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 200,
            ema_decay: 0.99,
            warmup_fraction: 0.1,
            seed: 42,
            grad_clip: None,
            early_stop_f1: None,
            eval_every: 5,
            hidden: 128,
            n_heads: 4,
            n_blocks: 2,
            ffn: 256,
            max_len: 128,
            ablation: AblationFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("extraction_threshold", self.extraction_threshold),
            ("relation_threshold", self.relation_threshold),
            ("ema_decay", self.ema_decay),
        ] {
            if !(0.0 < v && v < 1.0) {
                return Err(usage(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.epochs < 1 {
            return Err(usage("epoch count must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(usage("batch size must be at least 1"));
        }
        Ok(())
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden: self.hidden,
            n_heads: self.n_heads,
            n_blocks: self.n_blocks,
            ffn: self.ffn,
            max_len: self.max_len,
        }
    }
}

/// Per-task EMA loss trackers and per-epoch batch counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub v: PerTask<f64>,
    pub decay: f64,
    pub n: PerTask<usize>,
}

impl EmaState {
    /// The trackers start at 1 for every task at each epoch start.
    pub fn new(decay: f64, n: PerTask<usize>) -> Self {
        EmaState {
            v: PerTask { s: 1.0, o: 1.0, r: 1.0 },
            decay,
            n,
        }
    }

    /// `v^t = (1 - eps) * sum(l^t) + eps * v^t`; other tasks untouched.
    pub fn update(&mut self, task: Task, loss_sum: f64) -> Result<()> {
        if !loss_sum.is_finite() || loss_sum < 0.0 {
            return Err(runtime(format!(
                "invalid loss sum {loss_sum} for task {task}"
            )));
        }
        let v = self.v.get_mut(task);
        *v = (1.0 - self.decay) * loss_sum + self.decay * *v;
        Ok(())
    }

    /// `w^t = (v^t / n^t) / (v^r / n^r)`.
    pub fn weight(&self, task: Task) -> f64 {
        let per = |t: Task| self.v.get(t) / *self.n.get(t) as f64;
        per(task) / per(Task::Relation)
    }
}

/// Mini-batch of one task's examples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub task: Task,
    pub examples: Vec<SubtaskExample>,
}

/// A shuffled epoch schedule.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    pub batches: Vec<Batch>,
    pub n: PerTask<usize>,
}

/// Pack per-task examples into batches (final short batch kept), merge, and
/// shuffle with the seed.
pub fn build_schedule(
    examples: &PerTask<Vec<SubtaskExample>>,
    batch_size: usize,
    seed: u64,
) -> Result<BatchSchedule> {
    let mut batches = Vec::new();
    let mut n = PerTask::default();
    for task in Task::ALL {
        let list = examples.get(task);
        if list.is_empty() {
            return Err(usage(format!("task {task} has no training examples")));
        }
        let mut count = 0;
        for chunk in list.chunks(batch_size) {
            batches.push(Batch {
                task,
                examples: chunk.to_vec(),
            });
            count += 1;
        }
        *n.get_mut(task) = count;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batches.shuffle(&mut rng);
    Ok(BatchSchedule { batches, n })
}

/// Derive the three sub-task training sets for a whole corpus.
pub fn build_subtask_dataset(
    corpus: &Corpus,
    assembler: &InputAssembler,
) -> Result<PerTask<Vec<SubtaskExample>>> {
    let mut out: PerTask<Vec<SubtaskExample>> = PerTask::default();
    for (sentence, gold) in &corpus.sentences {
        for ex in derive_subtask_examples(sentence, gold, assembler, &corpus.schema)? {
            out.get_mut(ex.task).push(ex);
        }
    }
    Ok(out)
}

/// One logged training step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub task: String,
    pub loss_sum: f64,
    pub loss_mean: f64,
    pub weight: f64,
    pub lr: f64,
}

/// Linear warmup to the peak rate, then linear decay to zero.
pub fn triangular_lr(peak: f64, step: usize, total_steps: usize, warmup_fraction: f64) -> f64 {
    let warmup = ((total_steps as f64 * warmup_fraction).round() as usize).max(1);
    if step < warmup {
        peak * (step + 1) as f64 / warmup as f64
    } else if total_steps <= warmup {
        peak
    } else {
        peak * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

/// Owns the parameters, optimizer and EMA state for one training run.
pub struct Trainer {
    pub config: TrainConfig,
    pub model_cfg: ModelConfig,
    pub store: ParamStore,
    pub ema: EmaState,
    positions: Array2<f64>,
    adam: Adam,
    step_index: usize,
    total_steps: usize,
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        model_cfg: ModelConfig,
        n: PerTask<usize>,
        total_steps: usize,
    ) -> Self {
        let store = init_params(&model_cfg, config.seed);
        let positions = sinusoidal_positions(model_cfg.encoder.max_len, model_cfg.encoder.hidden);
        let adam = Adam::new(config.ablation.plain_optimizer);
        let ema = EmaState::new(config.ema_decay, n);
        Trainer {
            config,
            model_cfg,
            store,
            ema,
            positions,
            adam,
            step_index: 0,
            total_steps,
        }
    }

    pub fn reset_ema(&mut self, n: PerTask<usize>) {
        self.ema = EmaState::new(self.config.ema_decay, n);
    }

    /// Loss on the batch's task, EMA update, weight, then one optimizer step
    /// on the shared encoder and the current head.
    pub fn train_step(&mut self, epoch: usize, batch: &Batch) -> Result<StepLog> {
        let results: Vec<Result<(f64, IndexMap<String, Array2<f64>>)>> = batch
            .examples
            .par_iter()
            .map(|ex| example_loss_and_grads(&self.model_cfg, &self.store, &self.positions, ex))
            .collect();

        let mut loss_sum = 0.0;
        let mut total: IndexMap<String, Array2<f64>> = IndexMap::new();
        for r in results {
            let (loss, grads) = r.map_err(|e| {
                runtime(format!(
                    "step {} (task {}): {e}",
                    self.step_index, batch.task
                ))
            })?;
            loss_sum += loss;
            for (name, g) in grads {
                match total.get_mut(&name) {
                    Some(acc) => *acc += &g,
                    None => {
                        total.insert(name, g);
                    }
                }
            }
        }
        let batch_len = batch.examples.len() as f64;
        let loss_mean = loss_sum / batch_len;

        self.ema.update(batch.task, loss_sum)?;
        let weight = if self.config.ablation.equal_weights {
            1.0
        } else {
            self.ema.weight(batch.task)
        };

        let scale = weight / batch_len;
        for g in total.values_mut() {
            *g *= scale;
        }
        if let Some(clip) = self.config.grad_clip {
            let norm: f64 = total
                .values()
                .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                let k = clip / norm;
                for g in total.values_mut() {
                    *g *= k;
                }
            }
        }
        for g in total.values() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(runtime(format!(
                    "non-finite gradient at step {} (task {})",
                    self.step_index, batch.task
                )));
            }
        }

        let lr = triangular_lr(
            self.config.learning_rate,
            self.step_index,
            self.total_steps,
            self.config.warmup_fraction,
        );
        self.adam.step(&mut self.store, &total, batch.task, lr);

        let log = StepLog {
            epoch,
            step: self.step_index,
            task: batch.task.short().to_string(),
            loss_sum,
            loss_mean,
            weight,
            lr,
        };
        self.step_index += 1;
        Ok(log)
    }
}

/// Result of a full training run.
pub struct TrainOutcome {
    /// Best model by validation triple F1 (partial match).
    pub model: TrainedModel,
    pub log: Vec<StepLog>,
    pub best_f1: f64,
    pub epochs_run: usize,
}

/// Train on a corpus. Validation defaults to the training corpus when no
/// separate one is supplied; the best checkpoint by partial-match triple F1
/// is returned.
pub fn train(
    corpus: &Corpus,
    validation: Option<&Corpus>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let vocab = build_vocab(corpus);
    let assembler = InputAssembler::new(vocab.clone(), config.max_len);
    let examples = build_subtask_dataset(corpus, &assembler)?;

    let model_cfg = ModelConfig {
        encoder: config.encoder_config(vocab.len()),
        n_relations: corpus.schema.len(),
        shared_heads: config.ablation.shared_heads,
    };
    let probe = build_schedule(&examples, config.batch_size, config.seed)?;
    let steps_per_epoch = probe.batches.len();
    let total_steps = steps_per_epoch * config.epochs;

    let mut trainer = Trainer::new(config.clone(), model_cfg.clone(), probe.n, total_steps);
    let valid = validation.unwrap_or(corpus);

    let mut log = Vec::new();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_store = trainer.store.clone();
    let mut epochs_run = 0;

    'epochs: for epoch in 0..config.epochs {
        let schedule = build_schedule(
            &examples,
            config.batch_size,
            config.seed.wrapping_add(epoch as u64),
        )?;
        trainer.reset_ema(schedule.n);
        for batch in &schedule.batches {
            log.push(trainer.train_step(epoch, batch)?);
        }
        epochs_run = epoch + 1;

        let last_epoch = epoch + 1 == config.epochs;
        if epoch % config.eval_every == config.eval_every - 1 || last_epoch {
            let model = TrainedModel::with_store(
                model_cfg.clone(),
                trainer.store.clone(),
                vocab.clone(),
                corpus.schema.clone(),
            );
            let f1 = validation_f1(&model, valid, config)?;
            log::info!("epoch {}: validation F1 {:.4}", epoch + 1, f1);
            if f1 > best_f1 {
                best_f1 = f1;
                best_store = trainer.store.clone();
            }
            if let Some(stop) = config.early_stop_f1 {
                if f1 >= stop {
                    break 'epochs;
                }
            }
        }
    }

    if best_f1 == f64::NEG_INFINITY {
        best_f1 = 0.0;
        best_store = trainer.store.clone();
    }
    let model =
        TrainedModel::with_store(model_cfg, best_store, vocab, corpus.schema.clone());
    Ok(TrainOutcome {
        model,
        log,
        best_f1,
        epochs_run,
    })
}

/// Vocabulary over sentence tokens and entity surface tokens.
pub fn build_vocab(corpus: &Corpus) -> Vocab {
    let mut words: Vec<String> = Vec::new();
    for (sent, triples) in &corpus.sentences {
        words.extend(sent.tokens.iter().map(|t| t.surface.clone()));
        for t in triples {
            words.extend(crate::tokenizer::tokenize_surfaces(&t.subject.text));
            words.extend(crate::tokenizer::tokenize_surfaces(&t.object.text));
        }
    }
    Vocab::build(words.iter().map(|s| s.as_str()))
}

fn validation_f1(model: &TrainedModel, valid: &Corpus, config: &TrainConfig) -> Result<f64> {
    let predictions = crate::pipeline::predict_corpus(model, valid, config)?;
    let report = crate::evaluation::score_corpus(
        &predictions,
        valid,
        crate::evaluation::MatchMode::Partial,
    )?;
    Ok(report.f1)
}
