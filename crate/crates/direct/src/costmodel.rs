//! Closed-form counts of output logits computed per sentence by four
//! extraction architectures, plus dataset-level averages.

use crate::corpus::{Corpus, RelationalTriplet, Sentence};
use crate::error::data;
use anyhow::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// The architectures compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    CopyRe,
    Mhs,
    CasRel,
    Direct,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::CopyRe,
        ModelKind::Mhs,
        ModelKind::CasRel,
        ModelKind::Direct,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::CopyRe => "CopyRE",
            ModelKind::Mhs => "MHS",
            ModelKind::CasRel => "CasRel",
            ModelKind::Direct => "DIRECT",
        }
    }
}

/// Per-sentence quantities the cost formulas depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostStats {
    /// Sentence length in tokens.
    pub l: usize,
    /// Number of gold triplets (decoder steps for the copy model).
    pub k: usize,
    /// Size of the relation label set.
    pub r: usize,
    /// Number of distinct gold subjects.
    pub s: usize,
    /// Number of distinct gold (subject, object) pairs.
    pub o: usize,
}

/// How sentence length is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenization {
    /// Whitespace-delimited tokens.
    Whitespace,
    /// Whitespace tokens with punctuation split into separate tokens.
    PunctuationSplit,
}

/// Token count of a text under a tokenization.
pub fn token_count(text: &str, tokenization: Tokenization) -> usize {
    match tokenization {
        Tokenization::Whitespace => text.split_whitespace().count(),
        Tokenization::PunctuationSplit => text
            .split_whitespace()
            .map(|w| {
                let mut n = 0;
                let mut in_word = false;
                for c in w.chars() {
                    if c.is_ascii_punctuation() {
                        n += 1;
                        in_word = false;
                    } else if !in_word {
                        n += 1;
                        in_word = true;
                    }
                }
                n
            })
            .sum(),
    }
}

/// Derive the cost quantities for one gold-annotated sentence.
pub fn sentence_stats(
    sentence: &Sentence,
    triples: &[RelationalTriplet],
    n_relations: usize,
    tokenization: Tokenization,
) -> CostStats {
    let subjects: BTreeSet<&str> = triples.iter().map(|t| t.subject.text.as_str()).collect();
    let pairs: BTreeSet<(&str, &str)> = triples
        .iter()
        .map(|t| (t.subject.text.as_str(), t.object.text.as_str()))
        .collect();
    CostStats {
        l: token_count(&sentence.text, tokenization),
        k: triples.len(),
        r: n_relations,
        s: subjects.len(),
        o: pairs.len(),
    }
}

/// Number of output logits each architecture computes for one sentence.
pub fn logits_cost(kind: ModelKind, st: &CostStats) -> u64 {
    let (l, k, r, s, o) = (
        st.l as u64,
        st.k as u64,
        st.r as u64,
        st.s as u64,
        st.o as u64,
    );
    match kind {
        ModelKind::CopyRe => 4 * k * l + k * r,
        ModelKind::Mhs => l * l * r,
        ModelKind::CasRel => 2 * l + 2 * s * l * r,
        ModelKind::Direct => 2 * l + 2 * s * l + o * r,
    }
}

/// Dataset-level cost report: per-model mean logits per sentence under one
/// tokenization, plus a sentence-wise comparison of the two cascades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub tokenization: Tokenization,
    pub sentences: usize,
    pub n_relations: usize,
    /// Mean logits per sentence, keyed in [`ModelKind::ALL`] order.
    pub mean_logits: Vec<(String, f64)>,
    /// Sentences where the pair-cascade computes strictly fewer logits than
    /// the subject-conditioned tagging cascade, equal, or more.
    pub direct_cheaper: usize,
    pub direct_equal: usize,
    pub direct_dearer: usize,
}

/// Compute the cost report for a corpus under one tokenization.
pub fn dataset_cost(corpus: &Corpus, tokenization: Tokenization) -> Result<CostReport> {
    if corpus.is_empty() {
        return Err(data("cannot compute costs for an empty corpus"));
    }
    let r = corpus.schema.len();
    let mut totals = [0u64; 4];
    let (mut cheaper, mut equal, mut dearer) = (0, 0, 0);
    for (sent, triples) in &corpus.sentences {
        let st = sentence_stats(sent, triples, r, tokenization);
        for (i, kind) in ModelKind::ALL.iter().enumerate() {
            totals[i] += logits_cost(*kind, &st);
        }
        let direct = logits_cost(ModelKind::Direct, &st);
        let casrel = logits_cost(ModelKind::CasRel, &st);
        match direct.cmp(&casrel) {
            std::cmp::Ordering::Less => cheaper += 1,
            std::cmp::Ordering::Equal => equal += 1,
            std::cmp::Ordering::Greater => dearer += 1,
        }
    }
    let n = corpus.len() as f64;
    let mean_logits = ModelKind::ALL
        .iter()
        .zip(totals.iter())
        .map(|(k, &t)| (k.name().to_string(), t as f64 / n))
        .collect();
    Ok(CostReport {
        tokenization,
        sentences: corpus.len(),
        n_relations: r,
        mean_logits,
        direct_cheaper: cheaper,
        direct_equal: equal,
        direct_dearer: dearer,
    })
}

impl CostReport {
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "tokenization: {:?}; sentences: {}; relations: {}\n",
            self.tokenization, self.sentences, self.n_relations
        ));
        s.push_str(&format!("{:<10} {:>14}\n", "model", "mean logits"));
        for (name, mean) in &self.mean_logits {
            s.push_str(&format!("{:<10} {:>14.1}\n", name, mean));
        }
        s.push_str(&format!(
            "DIRECT vs CasRel per sentence: {} cheaper, {} equal, {} dearer\n",
            self.direct_cheaper, self.direct_equal, self.direct_dearer
        ));
        s
    }
}
