//! Corpus loading, validation, overlap classification and sub-task derivation.
//!
//! The ingestion path accepts the public NYT/WebNLG release format (one record
//! per sentence: raw text plus a list of `[subject, relation, object]` string
//! triples) and produces the internal canonical JSON-lines format. Entity
//! strings in the releases carry no offsets; they are aligned to token spans
//! by exact token-subsequence matching, and every match is treated as a
//! positive target span when deriving training examples.

use crate::encoding::InputAssembler;
use crate::error::data;
use crate::tokenizer::{tokenize, Token};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

/// A tokenized sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Sentence {
            id: id.into(),
            text,
            tokens,
        }
    }

    pub fn token_surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }
}

/// One endpoint of a triple: the entity surface string and, when alignment
/// succeeded, one token span (start, end inclusive). Training target
/// derivation re-scans for all occurrences; the stored span is the first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub text: String,
    pub span: Option<(usize, usize)>,
}

impl Entity {
    pub fn unaligned(text: impl Into<String>) -> Self {
        Entity {
            text: text.into(),
            span: None,
        }
    }
}

/// A relational fact (subject, relation, object).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationalTriplet {
    pub subject: Entity,
    pub relation: String,
    pub object: Entity,
}

impl RelationalTriplet {
    pub fn surfaces(&self) -> (&str, &str, &str) {
        (&self.subject.text, &self.relation, &self.object.text)
    }
}

/// The closed set of relation labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSchema {
    labels: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl RelationSchema {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(data("relation schema must contain at least one label"));
        }
        let mut index = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(data(format!("duplicate relation label: {l}")));
            }
        }
        Ok(RelationSchema { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }
}

/// Overlap classification of one sentence's triple set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapFlags {
    pub normal: bool,
    pub epo: bool,
    pub seo: bool,
}

/// Which cascade sub-task a training example belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    Subject,
    Object,
    Relation,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Subject, Task::Object, Task::Relation];

    pub fn short(&self) -> &'static str {
        match self {
            Task::Subject => "s",
            Task::Object => "o",
            Task::Relation => "r",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short())
    }
}

/// One training instance: an assembled input plus bit-vector targets.
/// Span tasks populate `start_target`/`end_target` over input positions;
/// the relation task populates `relation_target` over the schema labels.
#[derive(Debug, Clone)]
pub struct SubtaskExample {
    pub task: Task,
    pub input: crate::encoding::AssembledInput,
    pub start_target: Vec<f64>,
    pub end_target: Vec<f64>,
    pub relation_target: Vec<f64>,
    pub sentence_id: String,
}

/// A loaded corpus: schema, sentences with gold triples, and the count of
/// entity mentions that could not be aligned to token spans.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub schema: RelationSchema,
    pub sentences: Vec<(Sentence, Vec<RelationalTriplet>)>,
    pub unaligned_entities: usize,
}

#[derive(Deserialize)]
struct RawRecord {
    text: String,
    triple_list: Vec<[String; 3]>,
}

/// All token-subsequence occurrences of `needle` in `hay`, as inclusive spans.
pub fn find_occurrences(hay: &[&str], needle: &[&str]) -> Vec<(usize, usize)> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - needle.len())
        .filter(|&i| &hay[i..i + needle.len()] == needle)
        .map(|i| (i, i + needle.len() - 1))
        .collect()
}

fn align_entity(sentence: &Sentence, surface: &str) -> Entity {
    let hay = sentence.token_surfaces();
    let needle_owned = crate::tokenizer::tokenize_surfaces(surface);
    let needle: Vec<&str> = needle_owned.iter().map(|s| s.as_str()).collect();
    let span = find_occurrences(&hay, &needle).into_iter().next();
    Entity {
        text: surface.to_string(),
        span,
    }
}

fn record_to_sentence(
    idx: usize,
    rec: RawRecord,
    schema: &RelationSchema,
    unaligned: &mut usize,
) -> Result<(Sentence, Vec<RelationalTriplet>)> {
    let sentence = Sentence::new(format!("s{idx:06}"), rec.text);
    let mut triples = Vec::with_capacity(rec.triple_list.len());
    for [s, r, o] in rec.triple_list {
        if schema.index_of(&r).is_none() {
            return Err(data(format!(
                "record {idx}: unknown relation label \"{r}\""
            )));
        }
        let subject = align_entity(&sentence, &s);
        let object = align_entity(&sentence, &o);
        if subject.span.is_none() {
            *unaligned += 1;
        }
        if object.span.is_none() {
            *unaligned += 1;
        }
        triples.push(RelationalTriplet {
            subject,
            relation: r,
            object,
        });
    }
    Ok((sentence, triples))
}

fn parse_release_records(content: &str) -> Result<Vec<RawRecord>> {
    let trimmed = content.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(content).map_err(|e| data(format!("malformed JSON array: {e}")));
    }
    let mut records = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(line)
            .map_err(|e| data(format!("malformed record at line {}: {e}", lineno + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

/// Scan a release file for the set of relation labels it uses.
pub fn scan_relations(path: &Path) -> Result<Vec<String>> {
    let content = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let records = parse_release_records(&content)?;
    let labels: BTreeSet<String> = records
        .iter()
        .flat_map(|r| r.triple_list.iter().map(|t| t[1].clone()))
        .collect();
    Ok(labels.into_iter().collect())
}

/// Load a corpus from the public release format.
///
/// Every record yields one sentence. Entities that cannot be aligned to a
/// token span are kept (for evaluation) but counted in `unaligned_entities`.
pub fn load_dataset(path: &Path, schema: &RelationSchema) -> Result<Corpus> {
    let content = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let records = parse_release_records(&content)?;
    let mut unaligned = 0;
    let mut sentences = Vec::with_capacity(records.len());
    for (idx, rec) in records.into_iter().enumerate() {
        sentences.push(record_to_sentence(idx, rec, schema, &mut unaligned)?);
    }
    if unaligned > 0 {
        log::warn!("{unaligned} entity mentions could not be aligned to token spans");
    }
    Ok(Corpus {
        schema: schema.clone(),
        sentences,
        unaligned_entities: unaligned,
    })
}

// ---------------------------------------------------------------------------
// Canonical JSON-lines format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    version: u32,
    relations: Vec<String>,
    unaligned_entities: usize,
}

#[derive(Serialize, Deserialize)]
struct CanonicalLine {
    id: String,
    text: String,
    triples: Vec<CanonicalTriple>,
}

#[derive(Serialize, Deserialize)]
struct CanonicalTriple {
    subject: String,
    subject_span: Option<(usize, usize)>,
    relation: String,
    object: String,
    object_span: Option<(usize, usize)>,
}

impl Corpus {
    /// Write the canonical JSON-lines form: a header line with the schema,
    /// then one line per sentence.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))?,
        );
        let header = CorpusHeader {
            format: "direct-corpus".to_string(),
            version: 1,
            relations: self.schema.labels().to_vec(),
            unaligned_entities: self.unaligned_entities,
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for (sent, triples) in &self.sentences {
            let line = CanonicalLine {
                id: sent.id.clone(),
                text: sent.text.clone(),
                triples: triples
                    .iter()
                    .map(|t| CanonicalTriple {
                        subject: t.subject.text.clone(),
                        subject_span: t.subject.span,
                        relation: t.relation.clone(),
                        object: t.object.text.clone(),
                        object_span: t.object.span,
                    })
                    .collect(),
            };
            writeln!(out, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    }

    /// Load the canonical JSON-lines form written by [`Corpus::save`].
    pub fn load(path: &Path) -> Result<Corpus> {
        let file = std::fs::File::open(path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| data("empty corpus file: missing header line"))??;
        let header: CorpusHeader = serde_json::from_str(&header_line)
            .map_err(|e| data(format!("bad corpus header: {e}")))?;
        if header.format != "direct-corpus" {
            return Err(data(format!("unexpected corpus format: {}", header.format)));
        }
        let schema = RelationSchema::new(header.relations)?;
        let mut sentences = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CanonicalLine = serde_json::from_str(&line)
                .map_err(|e| data(format!("bad corpus line {}: {e}", lineno + 2)))?;
            let sent = Sentence::new(rec.id, rec.text);
            let triples = rec
                .triples
                .into_iter()
                .map(|t| RelationalTriplet {
                    subject: Entity {
                        text: t.subject,
                        span: t.subject_span,
                    },
                    relation: t.relation,
                    object: Entity {
                        text: t.object,
                        span: t.object_span,
                    },
                })
                .collect();
            sentences.push((sent, triples));
        }
        Ok(Corpus {
            schema,
            sentences,
            unaligned_entities: header.unaligned_entities,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Overlap classification and statistics
// ---------------------------------------------------------------------------

/// Classify a sentence's triple set into Normal / EPO / SEO.
///
/// Entity identity is the surface string. EPO: two distinct triplets share
/// the same unordered entity pair. SEO: two distinct triplets share exactly
/// one entity. An empty list yields all-false flags with a logged warning.
pub fn classify_overlap(triples: &[RelationalTriplet]) -> OverlapFlags {
    if triples.is_empty() {
        log::warn!("classify_overlap called with an empty triple list");
        return OverlapFlags {
            normal: false,
            epo: false,
            seo: false,
        };
    }
    let mut epo = false;
    let mut seo = false;
    for i in 0..triples.len() {
        for j in i + 1..triples.len() {
            let a: BTreeSet<&str> = [triples[i].subject.text.as_str(), triples[i].object.text.as_str()]
                .into_iter()
                .collect();
            let b: BTreeSet<&str> = [triples[j].subject.text.as_str(), triples[j].object.text.as_str()]
                .into_iter()
                .collect();
            if a == b {
                epo = true;
            }
            if a.intersection(&b).count() == 1 {
                seo = true;
            }
        }
    }
    OverlapFlags {
        normal: !(epo || seo),
        epo,
        seo,
    }
}

/// Per-class sentence counts and triplet-count buckets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub normal: usize,
    pub epo: usize,
    pub seo: usize,
    pub all: usize,
    /// Sentence counts for N = 1, 2, 3, 4, >=5 gold triplets.
    pub n_buckets: [usize; 5],
    /// Sentences with zero gold triplets (kept separate so the N buckets
    /// partition the rest).
    pub zero_triples: usize,
    pub unaligned_entities: usize,
}

/// Compute overlap-class and triplet-count statistics for a corpus.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats {
        normal: 0,
        epo: 0,
        seo: 0,
        all: corpus.len(),
        n_buckets: [0; 5],
        zero_triples: 0,
        unaligned_entities: corpus.unaligned_entities,
    };
    for (_, triples) in &corpus.sentences {
        match triples.len() {
            0 => stats.zero_triples += 1,
            n => stats.n_buckets[(n - 1).min(4)] += 1,
        }
        if triples.is_empty() {
            continue;
        }
        let flags = classify_overlap(triples);
        if flags.normal {
            stats.normal += 1;
        }
        if flags.epo {
            stats.epo += 1;
        }
        if flags.seo {
            stats.seo += 1;
        }
    }
    stats
}

impl CorpusStats {
    /// Aligned plain-text rendering of the report.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<10} {:>8}\n{:<10} {:>8}\n{:<10} {:>8}\n{:<10} {:>8}\n{:<10} {:>8}\n",
            "Normal", self.normal, "EPO", self.epo, "SEO", self.seo, "ALL", self.all,
            "N=0", self.zero_triples
        ));
        let names = ["N=1", "N=2", "N=3", "N=4", "N>=5"];
        for (name, count) in names.iter().zip(self.n_buckets.iter()) {
            s.push_str(&format!("{:<10} {:>8}\n", name, count));
        }
        s.push_str(&format!("{:<10} {:>8}\n", "unaligned", self.unaligned_entities));
        s
    }
}

// ---------------------------------------------------------------------------
// Sub-task example derivation
// ---------------------------------------------------------------------------

fn mark_spans(
    target_start: &mut [f64],
    target_end: &mut [f64],
    input: &crate::encoding::AssembledInput,
    sentence: &Sentence,
    surface: &str,
) {
    let hay = sentence.token_surfaces();
    let needle_owned = crate::tokenizer::tokenize_surfaces(surface);
    let needle: Vec<&str> = needle_owned.iter().map(|s| s.as_str()).collect();
    for (start, end) in find_occurrences(&hay, &needle) {
        // Positions beyond the (possibly truncated) sentence segment are skipped.
        if let (Some(ps), Some(pe)) = (
            input.sentence_pos_to_input(start),
            input.sentence_pos_to_input(end),
        ) {
            target_start[ps] = 1.0;
            target_end[pe] = 1.0;
        }
    }
}

/// Distinct values in first-appearance order.
fn distinct<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for it in items {
        if seen.insert(it) {
            out.push(it);
        }
    }
    out
}

/// Derive the three sub-task training sets for one sentence.
///
/// One subject-task example per sentence; one object-task example per
/// distinct gold subject surface; one relation-task example per distinct
/// (subject, object) surface pair, with all gold relations between them set.
pub fn derive_subtask_examples(
    sentence: &Sentence,
    gold: &[RelationalTriplet],
    assembler: &InputAssembler,
    schema: &RelationSchema,
) -> Result<Vec<SubtaskExample>> {
    let mut out = Vec::new();

    let input = assembler.assemble_s(sentence)?;
    let mut st = vec![0.0; input.len()];
    let mut en = vec![0.0; input.len()];
    for surface in distinct(gold.iter().map(|t| t.subject.text.as_str())) {
        mark_spans(&mut st, &mut en, &input, sentence, surface);
    }
    out.push(SubtaskExample {
        task: Task::Subject,
        input,
        start_target: st,
        end_target: en,
        relation_target: Vec::new(),
        sentence_id: sentence.id.clone(),
    });

    for subject in distinct(gold.iter().map(|t| t.subject.text.as_str())) {
        let input = assembler.assemble_o(subject, sentence)?;
        let mut st = vec![0.0; input.len()];
        let mut en = vec![0.0; input.len()];
        for t in gold.iter().filter(|t| t.subject.text == subject) {
            mark_spans(&mut st, &mut en, &input, sentence, &t.object.text);
        }
        out.push(SubtaskExample {
            task: Task::Object,
            input,
            start_target: st,
            end_target: en,
            relation_target: Vec::new(),
            sentence_id: sentence.id.clone(),
        });
    }

    let mut pairs: Vec<(&str, &str)> = Vec::new();
    let mut seen = BTreeSet::new();
    for t in gold {
        let pair = (t.subject.text.as_str(), t.object.text.as_str());
        if seen.insert(pair) {
            pairs.push(pair);
        }
    }
    for (subject, object) in pairs {
        let input = assembler.assemble_r(subject, object, sentence)?;
        let mut rel = vec![0.0; schema.len()];
        for t in gold
            .iter()
            .filter(|t| t.subject.text == subject && t.object.text == object)
        {
            if let Some(i) = schema.index_of(&t.relation) {
                rel[i] = 1.0;
            }
        }
        out.push(SubtaskExample {
            task: Task::Relation,
            input,
            start_target: Vec::new(),
            end_target: Vec::new(),
            relation_target: rel,
            sentence_id: sentence.id.clone(),
        });
    }

    Ok(out)
}
