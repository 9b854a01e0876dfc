//! Model assembly: parameter initialization, loss graphs for the three
//! sub-tasks, checkpointing, and the inference-time encoder.

pub mod adam;
pub mod params;
pub mod tape;
pub mod transformer;

use crate::corpus::{RelationSchema, SubtaskExample, Task};
use crate::encoding::{AssembledInput, Encoder, EncoderOutput, InputAssembler};
use crate::error::{data, runtime};
use crate::heads::{RelationHeadParams, SpanHeadParams};
use crate::tokenizer::Vocab;
use anyhow::{Context, Result};
use indexmap::IndexMap;
use ndarray::{Array1, Array2};
use params::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use tape::{NodeId, Tape};
use transformer::{encoder_forward, sinusoidal_positions, EncoderConfig, TapeBinder};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub n_relations: usize,
    /// Ablation: one entity-extraction head serves both span tasks.
    pub shared_heads: bool,
}

/// Prefix of the span head parameters used for a task.
pub fn span_head_prefix(task: Task, shared: bool) -> &'static str {
    if shared {
        "head.e"
    } else {
        match task {
            Task::Subject => "head.s",
            Task::Object => "head.o",
            Task::Relation => panic!("relation task has no span head"),
        }
    }
}

/// Initialize all parameters from a seed.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    transformer::init_encoder_params(&cfg.encoder, &mut store, &mut rng);
    let h = cfg.encoder.hidden;
    let prefixes: &[&str] = if cfg.shared_heads {
        &["head.e"]
    } else {
        &["head.s", "head.o"]
    };
    for p in prefixes {
        for side in ["start", "end"] {
            store.normal(&format!("{p}.{side}.w"), (h, 1), 0.02, &mut rng);
            store.zeros(&format!("{p}.{side}.b"), (1, 1));
        }
    }
    store.normal("head.r.w", (h, cfg.n_relations), 0.02, &mut rng);
    store.zeros("head.r.b", (1, cfg.n_relations));
    store
}

/// Per-example loss graph output.
pub struct LossGraph {
    pub tape: Tape,
    pub loss: NodeId,
    pub bound: Vec<(String, NodeId)>,
}

/// Build the full forward-plus-loss graph for one training example.
pub fn example_loss_graph(
    cfg: &ModelConfig,
    store: &ParamStore,
    positions: &Array2<f64>,
    example: &SubtaskExample,
) -> Result<LossGraph> {
    let mut tape = Tape::new();
    let mut binder = TapeBinder::new(store);
    let hidden = encoder_forward(&mut tape, &mut binder, &cfg.encoder, positions, &example.input.ids);
    let len = example.input.len();

    let loss = match example.task {
        Task::Subject | Task::Object => {
            let prefix = span_head_prefix(example.task, cfg.shared_heads);
            let seg = example.input.segment.clone();
            if seg.is_empty() {
                return Err(runtime("empty sentence segment in training example"));
            }
            let mut mask = Array2::zeros((len, 1));
            for i in seg.clone() {
                mask[[i, 0]] = 1.0;
            }
            let denom = 2.0 * seg.len() as f64;
            let mut side_losses = Vec::new();
            for (side, target) in [("start", &example.start_target), ("end", &example.end_target)]
            {
                let w = binder.get(&mut tape, &format!("{prefix}.{side}.w"));
                let b = binder.get(&mut tape, &format!("{prefix}.{side}.b"));
                let zm = tape.matmul(hidden, w);
                let z = tape.add_bias(zm, b);
                let t = Array2::from_shape_vec((len, 1), target.clone())
                    .map_err(|e| runtime(format!("bad target shape: {e}")))?;
                side_losses.push(tape.bce_with_logits(z, t, mask.clone(), denom));
            }
            tape.add(side_losses[0], side_losses[1])
        }
        Task::Relation => {
            let c = cfg.n_relations;
            let cls = tape.row(hidden, 0);
            let w = binder.get(&mut tape, "head.r.w");
            let b = binder.get(&mut tape, "head.r.b");
            let zm = tape.matmul(cls, w);
            let z = tape.add_bias(zm, b);
            let t = Array2::from_shape_vec((1, c), example.relation_target.clone())
                .map_err(|e| runtime(format!("bad relation target shape: {e}")))?;
            tape.bce_with_logits(z, t, Array2::ones((1, c)), c as f64)
        }
    };

    let bound = binder
        .bound()
        .iter()
        .map(|(n, &i)| (n.clone(), i))
        .collect();
    Ok(LossGraph { tape, loss, bound })
}

/// Loss value and per-parameter gradients for one example.
pub fn example_loss_and_grads(
    cfg: &ModelConfig,
    store: &ParamStore,
    positions: &Array2<f64>,
    example: &SubtaskExample,
) -> Result<(f64, IndexMap<String, Array2<f64>>)> {
    let g = example_loss_graph(cfg, store, positions, example)?;
    let loss_val = g.tape.value(g.loss)[[0, 0]];
    if !loss_val.is_finite() {
        return Err(runtime(format!(
            "non-finite loss on example from sentence {}",
            example.sentence_id
        )));
    }
    let bound = g.bound;
    let grads_vec = g.tape.backward(g.loss);
    let mut grads = IndexMap::new();
    for (name, id) in bound {
        if let Some(grad) = &grads_vec[id] {
            grads.insert(name, grad.clone());
        }
    }
    Ok((loss_val, grads))
}

// ---------------------------------------------------------------------------
// Trained model: inference-time wrapper
// ---------------------------------------------------------------------------

/// A model ready for inference: parameters plus everything needed to turn
/// raw sentences into predictions.
pub struct TrainedModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub schema: RelationSchema,
    pub assembler: InputAssembler,
    positions: Array2<f64>,
}

impl TrainedModel {
    pub fn new(cfg: ModelConfig, vocab: Vocab, schema: RelationSchema, seed: u64) -> Self {
        let store = init_params(&cfg, seed);
        Self::with_store(cfg, store, vocab, schema)
    }

    pub fn with_store(
        cfg: ModelConfig,
        store: ParamStore,
        vocab: Vocab,
        schema: RelationSchema,
    ) -> Self {
        let positions = sinusoidal_positions(cfg.encoder.max_len, cfg.encoder.hidden);
        let assembler = InputAssembler::new(vocab, cfg.encoder.max_len);
        TrainedModel {
            cfg,
            store,
            schema,
            assembler,
            positions,
        }
    }

    pub fn positions(&self) -> &Array2<f64> {
        &self.positions
    }

    /// Span head view for a task.
    pub fn span_head(&self, task: Task) -> SpanHeadParams {
        let p = span_head_prefix(task, self.cfg.shared_heads);
        SpanHeadParams {
            w_start: col_vec(self.store.get(&format!("{p}.start.w"))),
            b_start: self.store.get(&format!("{p}.start.b"))[[0, 0]],
            w_end: col_vec(self.store.get(&format!("{p}.end.w"))),
            b_end: self.store.get(&format!("{p}.end.b"))[[0, 0]],
        }
    }

    pub fn relation_head(&self) -> RelationHeadParams {
        RelationHeadParams {
            w: self.store.get("head.r.w").clone(),
            b: self
                .store
                .get("head.r.b")
                .row(0)
                .to_owned(),
        }
    }
}

fn col_vec(a: &Array2<f64>) -> Array1<f64> {
    a.column(0).to_owned()
}

impl Encoder for TrainedModel {
    fn encode(&self, input: &AssembledInput) -> Result<EncoderOutput> {
        if input.is_empty() {
            return Err(data("cannot encode an empty input"));
        }
        if input.len() > self.cfg.encoder.max_len {
            return Err(data(format!(
                "input length {} exceeds encoder maximum {}",
                input.len(),
                self.cfg.encoder.max_len
            )));
        }
        let mut tape = Tape::new();
        let mut binder = TapeBinder::new(&self.store);
        let out = encoder_forward(
            &mut tape,
            &mut binder,
            &self.cfg.encoder,
            &self.positions,
            &input.ids,
        );
        EncoderOutput::new(tape.value(out).clone())
    }

    fn hidden_size(&self) -> usize {
        self.cfg.encoder.hidden
    }

    fn max_len(&self) -> usize {
        self.cfg.encoder.max_len
    }
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Versioned single-archive checkpoint: model config, vocabulary, relation
/// schema and all parameters.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    pub relations: Vec<String>,
    params: Vec<ParamEntry>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn from_model(model: &TrainedModel) -> Self {
        let params = model
            .store
            .iter()
            .map(|(name, a)| ParamEntry {
                name: name.clone(),
                rows: a.nrows(),
                cols: a.ncols(),
                data: a.iter().cloned().collect(),
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model: model.cfg.clone(),
            vocab: model.assembler.vocab().words().to_vec(),
            relations: model.schema.labels().to_vec(),
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .with_context(|| format!("cannot create checkpoint {}", path.display()))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .with_context(|| format!("cannot open checkpoint {}", path.display()))?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| data(format!("bad checkpoint file: {e}")))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(data(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn into_model(self) -> Result<TrainedModel> {
        let mut store = ParamStore::new();
        for p in self.params {
            let arr = Array2::from_shape_vec((p.rows, p.cols), p.data)
                .map_err(|e| data(format!("bad parameter {}: {e}", p.name)))?;
            store.insert(p.name, arr);
        }
        let vocab = Vocab::from_words(self.vocab);
        let schema = RelationSchema::new(self.relations)?;
        Ok(TrainedModel::with_store(self.model, store, vocab, schema))
    }
}
