//! Acceptance gate: one line per criterion, PASS / FAIL / SKIP.
//!
//! Criteria 1 and 7 need the released NYT and WebNLG datasets, which are not
//! redistributable with this repository. Point `DIRECT_DATA_DIR` at a
//! directory laid out as `{nyt,webnlg}/{train,test}.json` (release format) to
//! enable them; otherwise they report SKIP.

use anyhow::{anyhow, Result};
use direct::corpus::{corpus_stats, load_dataset, Corpus, RelationSchema, Task};
use direct::costmodel::{dataset_cost, Tokenization};
use direct::encoding::Encoder;
use direct::evaluation::{score_corpus, MatchMode};
use direct::fixture;
use direct::heads;
use direct::model::adam::Adam;
use direct::model::params::ParamStore;
use direct::model::{example_loss_and_grads, ModelConfig, TrainedModel};
use direct::mtl::{
    build_schedule, build_subtask_dataset, build_vocab, train, Batch, EmaState, PerTask,
    TrainConfig, TrainOutcome, Trainer,
};
use direct::pipeline::predict_corpus;
use indexmap::IndexMap;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

enum Outcome {
    Pass,
    Skip(String),
}

fn report(criterion: &str, result: Result<Outcome>) {
    match result {
        Ok(Outcome::Pass) => println!("ACCEPTANCE {criterion}: PASS"),
        Ok(Outcome::Skip(reason)) => println!("ACCEPTANCE {criterion}: SKIP ({reason})"),
        Err(e) => {
            println!("ACCEPTANCE {criterion}: FAIL ({e})");
            panic!("criterion {criterion} failed: {e}");
        }
    }
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os("DIRECT_DATA_DIR").map(PathBuf::from)
}

fn fixture_corpus(name: &str) -> Corpus {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name);
    let schema =
        RelationSchema::new(fixture::RELATIONS.iter().map(|s| s.to_string()).collect()).unwrap();
    load_dataset(&path, &schema).unwrap()
}

fn fixture_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        epochs: 200,
        eval_every: 5,
        early_stop_f1: Some(0.995),
        seed: 42,
        ..TrainConfig::default()
    }
}

struct TrainedFixture {
    outcome: TrainOutcome,
    corpus: Corpus,
    config: TrainConfig,
    seconds: f64,
}

static TRAINED: OnceLock<TrainedFixture> = OnceLock::new();

/// Train once on the shipped fixture; shared by criteria 3, 6 and 8.
fn trained() -> &'static TrainedFixture {
    TRAINED.get_or_init(|| {
        let corpus = fixture_corpus("train.json");
        let config = fixture_config();
        let start = Instant::now();
        let outcome = train(&corpus, None, &config).expect("fixture training failed");
        TrainedFixture {
            outcome,
            corpus,
            config,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

// ---------------------------------------------------------------------------
// 1. Dataset statistics on the released splits
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_dataset_statistics() {
    report("1 dataset-statistics", c1());
}

fn c1() -> Result<Outcome> {
    let Some(dir) = data_dir() else {
        return Ok(Outcome::Skip(
            "set DIRECT_DATA_DIR to the released NYT/WebNLG data".into(),
        ));
    };
    // (dataset, split, normal, epo, seo, all)
    let expected = [
        ("nyt", "train", 37013, 9782, 14735, 56195),
        ("nyt", "test", 3266, 978, 1297, 5000),
        ("webnlg", "train", 1596, 227, 3406, 5019),
        ("webnlg", "test", 246, 26, 457, 703),
    ];
    for (dataset, split, normal, epo, seo, all) in expected {
        let path = dir.join(dataset).join(format!("{split}.json"));
        if !path.exists() {
            return Ok(Outcome::Skip(format!("{} not found", path.display())));
        }
        let labels = direct::corpus::scan_relations(&path)?;
        let corpus = load_dataset(&path, &RelationSchema::new(labels)?)?;
        let stats = corpus_stats(&corpus);
        let got = (stats.normal, stats.epo, stats.seo, stats.all);
        if got != (normal, epo, seo, all) {
            return Err(anyhow!(
                "{dataset} {split}: expected {:?}, got {:?}",
                (normal, epo, seo, all),
                got
            ));
        }
        if dataset == "nyt" && split == "test" {
            let per_n = [3244, 1045, 312, 291, 108];
            if stats.n_buckets != per_n {
                return Err(anyhow!(
                    "nyt test per-N: expected {:?}, got {:?}",
                    per_n,
                    stats.n_buckets
                ));
            }
        }
    }
    Ok(Outcome::Pass)
}

// ---------------------------------------------------------------------------
// 2. Span decoder vs brute-force oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_span_decoder_oracle() {
    report("2 span-decoder-oracle", c2());
}

/// Independent restatement of the decoding rule: starts are positions with
/// probability above the threshold in ascending order; each start's end is
/// the argmax of the end probabilities from the start up to (excluding) the
/// next start, the last start scanning to the end of the vector; ties break
/// to the smallest index.
fn oracle_decode(p_start: &[f64], p_end: &[f64], alpha: f64) -> Vec<(usize, usize)> {
    let starts: Vec<usize> = (0..p_start.len()).filter(|&i| p_start[i] > alpha).collect();
    let mut spans = Vec::new();
    for (j, &s) in starts.iter().enumerate() {
        let hi = starts.get(j + 1).copied().unwrap_or(p_end.len());
        let mut best = s;
        for i in s..hi {
            if p_end[i] > p_end[best] {
                best = i;
            }
        }
        spans.push((s, best));
    }
    spans
}

fn c2() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let len = rng.gen_range(1..=64);
        // Coarse grid so threshold ties and argmax ties actually occur.
        let p_start: Vec<f64> = (0..len).map(|_| rng.gen_range(0..=20) as f64 / 20.0).collect();
        let p_end: Vec<f64> = (0..len).map(|_| rng.gen_range(0..=20) as f64 / 20.0).collect();
        for alpha in [0.5, 0.9] {
            let sp = heads::SpanProbabilities {
                p_start: p_start.clone(),
                p_end: p_end.clone(),
                segment: 0..len,
            };
            let got = heads::decode_spans(&sp, alpha)?;
            let want = oracle_decode(&p_start, &p_end, alpha);
            if got != want {
                return Err(anyhow!(
                    "case {case} alpha {alpha}: decoder {:?} != oracle {:?}",
                    got,
                    want
                ));
            }
        }
    }
    Ok(Outcome::Pass)
}

// ---------------------------------------------------------------------------
// 3. EMA and weight arithmetic
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_mtl_arithmetic() {
    report("3 mtl-arithmetic", c3());
}

fn c3() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let n = PerTask {
            s: rng.gen_range(1..50usize),
            o: rng.gen_range(1..50usize),
            r: rng.gen_range(1..50usize),
        };
        let decay = rng.gen_range(0.01..0.999);
        let mut state = EmaState::new(decay, n);
        // Scalar shadow of the recurrence.
        let mut shadow = [1.0f64, 1.0, 1.0];
        for _ in 0..20 {
            let t = [Task::Subject, Task::Object, Task::Relation][rng.gen_range(0..3)];
            let loss_sum = rng.gen_range(0.0..10.0);
            state.update(t, loss_sum)?;
            let i = match t {
                Task::Subject => 0,
                Task::Object => 1,
                Task::Relation => 2,
            };
            shadow[i] = (1.0 - decay) * loss_sum + decay * shadow[i];
        }
        let counts = [n.s as f64, n.o as f64, n.r as f64];
        for (i, t) in [Task::Subject, Task::Object, Task::Relation].into_iter().enumerate() {
            let want = (shadow[i] / counts[i]) / (shadow[2] / counts[2]);
            let got = state.weight(t);
            let rel = (got - want).abs() / want.abs().max(1e-300);
            if rel >= 1e-12 {
                return Err(anyhow!("case {case}: weight rel err {rel}"));
            }
        }
    }
    // Every logged relation-task step of a real run carries weight 1.
    let run = trained();
    for entry in &run.outcome.log {
        if entry.task == "r" && entry.weight != 1.0 {
            return Err(anyhow!(
                "step {}: relation-task weight {} != 1",
                entry.step,
                entry.weight
            ));
        }
    }
    Ok(Outcome::Pass)
}

// ---------------------------------------------------------------------------
// 4. Lazy-update contract
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_lazy_update_contract() {
    report("4 lazy-update-contract", c4());
}

fn bits(a: &Array2<f64>) -> Vec<u64> {
    a.iter().map(|x| x.to_bits()).collect()
}

fn c4() -> Result<Outcome> {
    let corpus = fixture_corpus("valid.json");
    let config = TrainConfig {
        hidden: 32,
        n_heads: 2,
        n_blocks: 1,
        ffn: 64,
        epochs: 1,
        batch_size: 4,
        ..fixture_config()
    };
    let vocab = build_vocab(&corpus);
    let assembler = direct::encoding::InputAssembler::new(vocab, config.max_len);
    let examples = build_subtask_dataset(&corpus, &assembler)?;
    let model_cfg = ModelConfig {
        encoder: config.encoder_config(assembler.vocab().len()),
        n_relations: corpus.schema.len(),
        shared_heads: false,
    };
    let schedule = build_schedule(&examples, config.batch_size, config.seed)?;
    let mut trainer = Trainer::new(config.clone(), model_cfg, schedule.n, 10);

    let step_and_check = |trainer: &mut Trainer, task: Task, frozen: [&str; 2]| -> Result<()> {
        let batch = Batch {
            task,
            examples: examples.get(task)[..2].to_vec(),
        };
        let before: Vec<(String, Vec<u64>)> = trainer
            .store
            .iter()
            .filter(|(n, _)| frozen.iter().any(|p| n.starts_with(p)))
            .map(|(n, a)| (n.clone(), bits(a)))
            .collect();
        if before.is_empty() {
            return Err(anyhow!("no parameters matched the frozen prefixes"));
        }
        trainer.train_step(0, &batch)?;
        for (name, b) in before {
            if bits(trainer.store.get(&name)) != b {
                return Err(anyhow!("{name} changed during a {task}-task step"));
            }
        }
        Ok(())
    };
    step_and_check(&mut trainer, Task::Subject, ["head.o.", "head.r."])?;
    step_and_check(&mut trainer, Task::Object, ["head.s.", "head.r."])?;

    // Optimizer state for untouched heads must also stay untouched: after a
    // subject-task step on a fresh lazy optimizer, the other heads have no
    // slots at all; the plain variant advances every head's step counter.
    let mut store = ParamStore::new();
    for name in ["head.s.start.w", "head.o.start.w", "head.r.w", "enc.emb"] {
        store.insert(name, Array2::ones((2, 2)));
    }
    let mut grads: IndexMap<String, Array2<f64>> = IndexMap::new();
    grads.insert("head.s.start.w".into(), Array2::ones((2, 2)));
    grads.insert("enc.emb".into(), Array2::ones((2, 2)));

    let mut lazy = Adam::new(false);
    lazy.step(&mut store, &grads, Task::Subject, 1e-3);
    if lazy.slot_state("head.o.start.w").is_some() || lazy.slot_state("head.r.w").is_some() {
        return Err(anyhow!("lazy optimizer created state for untouched heads"));
    }

    let mut store2 = store.clone();
    let mut plain = Adam::new(true);
    plain.step(&mut store2, &grads, Task::Subject, 1e-3);
    match plain.slot_state("head.o.start.w") {
        Some((_, _, t)) if t == 1 => {}
        other => {
            return Err(anyhow!(
                "plain optimizer did not advance untouched head state: {:?}",
                other.map(|(_, _, t)| t)
            ))
        }
    }
    Ok(Outcome::Pass)
}

// ---------------------------------------------------------------------------
// 5. Gradient check against central finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_gradient_check() {
    report("5 gradient-check", c5());
}

fn c5() -> Result<Outcome> {
    let corpus = fixture_corpus("valid.json");
    let config = TrainConfig {
        hidden: 16,
        n_heads: 2,
        n_blocks: 1,
        ffn: 32,
        ..fixture_config()
    };
    let vocab = build_vocab(&corpus);
    let assembler = direct::encoding::InputAssembler::new(vocab.clone(), config.max_len);
    let examples = build_subtask_dataset(&corpus, &assembler)?;
    let model_cfg = ModelConfig {
        encoder: config.encoder_config(vocab.len()),
        n_relations: corpus.schema.len(),
        shared_heads: false,
    };
    let mut store = direct::model::init_params(&model_cfg, 5);
    let positions = direct::model::transformer::sinusoidal_positions(
        model_cfg.encoder.max_len,
        model_cfg.encoder.hidden,
    );

    let head_params = [
        "head.s.start.w",
        "head.s.end.w",
        "head.s.start.b",
        "head.o.start.w",
        "head.o.end.b",
        "head.r.w",
        "head.r.b",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let h = 1e-6;
    let mut max_rel: f64 = 0.0;
    for probe in 0..100 {
        let name = head_params[probe % head_params.len()];
        let task = if name.starts_with("head.o") {
            Task::Object
        } else if name.starts_with("head.r") {
            Task::Relation
        } else {
            Task::Subject
        };
        let pool = examples.get(task);
        let example = &pool[rng.gen_range(0..pool.len())];

        let (_, grads) = example_loss_and_grads(&model_cfg, &store, &positions, example)?;
        let g = grads
            .get(name)
            .ok_or_else(|| anyhow!("no gradient recorded for {name}"))?;
        let (rows, cols) = g.dim();
        let (i, j) = (rng.gen_range(0..rows), rng.gen_range(0..cols));
        let analytic = g[[i, j]];

        let orig = store.get(name)[[i, j]];
        store.get_mut(name)[[i, j]] = orig + h;
        let (lp, _) = example_loss_and_grads(&model_cfg, &store, &positions, example)?;
        store.get_mut(name)[[i, j]] = orig - h;
        let (lm, _) = example_loss_and_grads(&model_cfg, &store, &positions, example)?;
        store.get_mut(name)[[i, j]] = orig;

        let numeric = (lp - lm) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
        if rel >= 1e-4 {
            return Err(anyhow!(
                "probe {probe} ({name}[{i},{j}]): analytic {analytic} vs numeric {numeric} (rel {rel})"
            ));
        }
    }
    println!("  gradient check max relative error: {max_rel:.2e}");
    Ok(Outcome::Pass)
}

// ---------------------------------------------------------------------------
// 6. Desk-scale end-to-end training on the fixture
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_fixture_end_to_end() {
    report("6 fixture-end-to-end", c6());
}

fn c6() -> Result<Outcome> {
    let run = trained();
    if run.outcome.epochs_run > 200 {
        return Err(anyhow!("took {} epochs (limit 200)", run.outcome.epochs_run));
    }
    if run.seconds >= 600.0 {
        return Err(anyhow!("training took {:.0}s (limit 600s)", run.seconds));
    }
    let predictions = predict_corpus(&run.outcome.model, &run.corpus, &run.config)?;
    let partial = score_corpus(&predictions, &run.corpus, MatchMode::Partial)?;
    let exact = score_corpus(&predictions, &run.corpus, MatchMode::Exact)?;
    println!(
        "  fixture training: {} epochs, {:.0}s, partial F1 {:.4}, exact F1 {:.4}",
        run.outcome.epochs_run, run.seconds, partial.f1, exact.f1
    );
    if partial.f1 < 0.99 {
        return Err(anyhow!("partial F1 {:.4} < 0.99", partial.f1));
    }
    if exact.f1 < 0.99 {
        return Err(anyhow!("exact F1 {:.4} < 0.99", exact.f1));
    }
    Ok(Outcome::Pass)
}

// ---------------------------------------------------------------------------
// 7. Cost model vs published per-sentence averages
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_cost_model() {
    report("7 cost-model", c7());
}

fn c7() -> Result<Outcome> {
    let Some(dir) = data_dir() else {
        return Ok(Outcome::Skip(
            "set DIRECT_DATA_DIR to the released NYT/WebNLG data".into(),
        ));
    };
    // (dataset, DIRECT, CasRel, MHS, CopyRE)
    let targets = [
        ("nyt", 238.0, 3084.0, 57369.0, 329.0),
        ("webnlg", 542.0, 15836.0, 26518.0, 712.0),
    ];
    for (dataset, direct_t, casrel_t, mhs_t, copyre_t) in targets {
        let path = dir.join(dataset).join("test.json");
        if !path.exists() {
            return Ok(Outcome::Skip(format!("{} not found", path.display())));
        }
        let labels = direct::corpus::scan_relations(&path)?;
        let corpus = load_dataset(&path, &RelationSchema::new(labels)?)?;
        let mut matched = false;
        for tok in [Tokenization::Whitespace, Tokenization::PunctuationSplit] {
            let report = dataset_cost(&corpus, tok)?;
            if report.direct_dearer > 0 {
                return Err(anyhow!(
                    "{dataset}: pair cascade dearer than tagging cascade on {} sentences",
                    report.direct_dearer
                ));
            }
            let get = |name: &str| {
                report
                    .mean_logits
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, v)| *v)
                    .unwrap_or(f64::NAN)
            };
            let within = |got: f64, want: f64| (got - want).abs() <= 0.15 * want;
            if within(get("DIRECT"), direct_t)
                && within(get("CasRel"), casrel_t)
                && within(get("MHS"), mhs_t)
                && within(get("CopyRE"), copyre_t)
            {
                matched = true;
            }
        }
        if !matched {
            return Err(anyhow!(
                "{dataset}: no tokenization reproduced the published averages within 15%"
            ));
        }
    }
    Ok(Outcome::Pass)
}

// ---------------------------------------------------------------------------
// 8. Ablation behaviors
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_ablations() {
    report("8 ablations", c8());
}

fn c8() -> Result<Outcome> {
    // equal_weights: every logged step weight is exactly 1.
    let corpus = fixture_corpus("valid.json");
    let mut config = TrainConfig {
        hidden: 32,
        n_heads: 2,
        n_blocks: 1,
        ffn: 64,
        epochs: 2,
        ..fixture_config()
    };
    config.early_stop_f1 = None;
    config.ablation.equal_weights = true;
    let outcome = train(&corpus, None, &config)?;
    for entry in &outcome.log {
        if entry.weight != 1.0 {
            return Err(anyhow!(
                "equal-weight run logged weight {} at step {}",
                entry.weight,
                entry.step
            ));
        }
    }

    // shared_heads: subject and object heads give identical outputs on the
    // same input.
    let vocab = build_vocab(&corpus);
    let shared_cfg = ModelConfig {
        encoder: config.encoder_config(vocab.len()),
        n_relations: corpus.schema.len(),
        shared_heads: true,
    };
    let model = TrainedModel::new(shared_cfg, vocab, corpus.schema.clone(), 9);
    let sentence = &corpus.sentences[0].0;
    let input = model.assembler.assemble_s(sentence)?;
    let enc = model.encode(&input)?;
    let ps = heads::span_probabilities(
        &enc,
        Task::Subject,
        &model.span_head(Task::Subject),
        input.segment.clone(),
    )?;
    let po = heads::span_probabilities(
        &enc,
        Task::Object,
        &model.span_head(Task::Object),
        input.segment.clone(),
    )?;
    if ps.p_start != po.p_start || ps.p_end != po.p_end {
        return Err(anyhow!("shared heads diverged on identical input"));
    }

    // threshold_decode: the trained fixture model still clears F1 0.95 with
    // the alternative decoder.
    let run = trained();
    let mut thr_config = run.config.clone();
    thr_config.ablation.threshold_decode = true;
    let predictions = predict_corpus(&run.outcome.model, &run.corpus, &thr_config)?;
    let partial = score_corpus(&predictions, &run.corpus, MatchMode::Partial)?;
    println!("  threshold-decode partial F1: {:.4}", partial.f1);
    if partial.f1 < 0.95 {
        return Err(anyhow!("threshold-decode F1 {:.4} < 0.95", partial.f1));
    }
    Ok(Outcome::Pass)
}

// ---------------------------------------------------------------------------
// 9. Full-scale runs are documented, not gated
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_full_scale_documented() {
    report(
        "9 full-scale-runs",
        Ok(Outcome::Skip(
            "full-dataset fine-tuning is a documented extended run; no gate".into(),
        )),
    );
}
