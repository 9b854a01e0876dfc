//! Cascade inference: subjects, then objects per subject, then relations per
//! pair, assembled into an adjacency-list output.

use crate::corpus::{Corpus, Entity, RelationalTriplet, Sentence, Task};
use crate::encoding::Encoder;
use crate::error::data;
use crate::heads;
use crate::model::TrainedModel;
use crate::mtl::TrainConfig;
use anyhow::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

/// Objects and their relation labels for one subject key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub object: String,
    pub relations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyEntry {
    pub subject: String,
    pub objects: Vec<ObjectEntry>,
}

/// Map from subject entity to its (object, relation-set) list.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AdjacencyListOutput {
    pub entries: Vec<AdjacencyEntry>,
}

impl AdjacencyListOutput {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Build from a triple set, grouping by subject then object.
    pub fn from_triples<'a>(
        triples: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    ) -> Self {
        let mut out = AdjacencyListOutput::default();
        for (s, r, o) in triples {
            out.insert(s, r, o);
        }
        out
    }

    fn insert(&mut self, subject: &str, relation: &str, object: &str) {
        let entry = match self.entries.iter_mut().find(|e| e.subject == subject) {
            Some(e) => e,
            None => {
                self.entries.push(AdjacencyEntry {
                    subject: subject.to_string(),
                    objects: Vec::new(),
                });
                self.entries.last_mut().unwrap()
            }
        };
        let obj = match entry.objects.iter_mut().find(|o| o.object == object) {
            Some(o) => o,
            None => {
                entry.objects.push(ObjectEntry {
                    object: object.to_string(),
                    relations: Vec::new(),
                });
                entry.objects.last_mut().unwrap()
            }
        };
        if !obj.relations.iter().any(|r| r == relation) {
            obj.relations.push(relation.to_string());
            obj.relations.sort();
        }
    }

    /// Flatten to a duplicate-free triple set.
    pub fn flatten(&self) -> BTreeSet<(String, String, String)> {
        let mut out = BTreeSet::new();
        for e in &self.entries {
            for o in &e.objects {
                for r in &o.relations {
                    out.insert((e.subject.clone(), r.clone(), o.object.clone()));
                }
            }
        }
        out
    }

    /// Flatten into triplet records (spans unresolved).
    pub fn flatten_triplets(&self) -> Vec<RelationalTriplet> {
        self.flatten()
            .into_iter()
            .map(|(s, r, o)| RelationalTriplet {
                subject: Entity::unaligned(s),
                relation: r,
                object: Entity::unaligned(o),
            })
            .collect()
    }
}

/// The three cascade stages as a seam: stubbing stage 1 makes stages 2-3
/// independently testable.
pub trait CascadeStages {
    fn subjects(&self, sentence: &Sentence) -> Result<Vec<String>>;
    fn objects(&self, subject: &str, sentence: &Sentence) -> Result<Vec<String>>;
    fn relations(&self, subject: &str, object: &str, sentence: &Sentence) -> Result<Vec<String>>;
}

/// Run the cascade for one sentence. Subjects and (subject, object) pairs are
/// deduplicated by surface string; pairs with no relation above threshold are
/// dropped; the output triple set is duplicate-free by construction.
pub fn extract<S: CascadeStages + ?Sized>(
    sentence: &Sentence,
    stages: &S,
) -> Result<AdjacencyListOutput> {
    let mut out = AdjacencyListOutput::default();
    let mut seen_subjects = BTreeSet::new();
    for subject in stages.subjects(sentence)? {
        if !seen_subjects.insert(subject.clone()) {
            continue;
        }
        let mut seen_objects = BTreeSet::new();
        for object in stages.objects(&subject, sentence)? {
            if !seen_objects.insert(object.clone()) {
                continue;
            }
            for relation in stages.relations(&subject, &object, sentence)? {
                out.insert(&subject, &relation, &object);
            }
        }
    }
    Ok(out)
}

/// A trained model plus inference thresholds, implementing the cascade.
pub struct CascadeExtractor<'a> {
    pub model: &'a TrainedModel,
    pub extraction_threshold: f64,
    pub relation_threshold: f64,
    pub threshold_decode: bool,
}

impl<'a> CascadeExtractor<'a> {
    pub fn new(model: &'a TrainedModel, config: &TrainConfig) -> Self {
        CascadeExtractor {
            model,
            extraction_threshold: config.extraction_threshold,
            relation_threshold: config.relation_threshold,
            threshold_decode: config.ablation.threshold_decode,
        }
    }

    fn decode_surfaces(&self, task: Task, input: &crate::encoding::AssembledInput, sentence: &Sentence) -> Result<Vec<String>> {
        let enc = self.model.encode(input)?;
        let sp = heads::span_probabilities(
            &enc,
            task,
            &self.model.span_head(task),
            input.segment.clone(),
        )?;
        let spans = if self.threshold_decode {
            heads::decode_spans_threshold(&sp, self.extraction_threshold)?
        } else {
            heads::decode_spans(&sp, self.extraction_threshold)?
        };
        let mut surfaces = Vec::new();
        for (start, end) in spans {
            let (Some(ts), Some(te)) = (
                input.input_pos_to_sentence(start),
                input.input_pos_to_sentence(end),
            ) else {
                continue;
            };
            let cs = sentence.tokens[ts].char_start;
            let ce = sentence.tokens[te].char_end;
            surfaces.push(sentence.text[cs..ce].to_string());
        }
        Ok(surfaces)
    }
}

impl CascadeStages for CascadeExtractor<'_> {
    fn subjects(&self, sentence: &Sentence) -> Result<Vec<String>> {
        let input = self.model.assembler.assemble_s(sentence)?;
        self.decode_surfaces(Task::Subject, &input, sentence)
    }

    fn objects(&self, subject: &str, sentence: &Sentence) -> Result<Vec<String>> {
        let input = self.model.assembler.assemble_o(subject, sentence)?;
        self.decode_surfaces(Task::Object, &input, sentence)
    }

    fn relations(&self, subject: &str, object: &str, sentence: &Sentence) -> Result<Vec<String>> {
        let input = self.model.assembler.assemble_r(subject, object, sentence)?;
        let enc = self.model.encode(&input)?;
        let rp = heads::relation_probabilities(&enc, &self.model.relation_head())?;
        Ok(rp
            .predicted(self.relation_threshold)
            .into_iter()
            .map(|i| self.model.schema.label(i).to_string())
            .collect())
    }
}

/// Extract every sentence of a corpus. Sentences are processed in parallel
/// against the shared read-only model; output order follows the corpus.
pub fn predict_corpus(
    model: &TrainedModel,
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<Vec<(String, AdjacencyListOutput)>> {
    let extractor = CascadeExtractor::new(model, config);
    corpus
        .sentences
        .par_iter()
        .map(|(sentence, _)| Ok((sentence.id.clone(), extract(sentence, &extractor)?)))
        .collect()
}

/// One predictions line: sentence id, adjacency list, flattened triples.
#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub adjacency_list: AdjacencyListOutput,
    pub triples: Vec<(String, String, String)>,
}

/// Run the cascade over a canonical corpus file and write predictions as
/// JSON lines.
pub fn predict_file(
    corpus_path: &Path,
    checkpoint_path: &Path,
    out_path: &Path,
    config: &TrainConfig,
) -> Result<usize> {
    if !checkpoint_path.exists() {
        return Err(data(format!(
            "checkpoint not found: {}",
            checkpoint_path.display()
        )));
    }
    let model = crate::model::Checkpoint::load(checkpoint_path)?.into_model()?;
    let corpus = Corpus::load(corpus_path)?;
    let predictions = predict_corpus(&model, &corpus, config)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    let n = predictions.len();
    for (id, adj) in predictions {
        let triples = adj.flatten().into_iter().collect();
        let line = PredictionLine {
            id,
            adjacency_list: adj,
            triples,
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(n)
}

/// Load a predictions file back into memory.
pub fn load_predictions(path: &Path) -> Result<Vec<PredictionLine>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionLine = serde_json::from_str(line)
            .map_err(|e| data(format!("bad prediction line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
