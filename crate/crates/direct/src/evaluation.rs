//! Scoring predictions against gold triples under partial and exact match,
//! with element-level, overlap-pattern and triplet-count breakdowns.

use crate::corpus::{classify_overlap, Corpus, RelationalTriplet};
use crate::error::data;
use crate::pipeline::AdjacencyListOutput;
use anyhow::Result;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Matching criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Relation plus the head (first) token of each entity.
    Partial,
    /// Relation plus the complete entity strings (case-sensitive).
    Exact,
}

impl std::str::FromStr for MatchMode {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "partial" => Ok(MatchMode::Partial),
            "exact" => Ok(MatchMode::Exact),
            other => Err(data(format!("unknown match mode: {other}"))),
        }
    }
}

fn head(entity: &str) -> &str {
    entity.split_whitespace().next().unwrap_or("")
}

/// Partial match: equal relation and equal entity head tokens.
pub fn match_partial(pred: &(String, String, String), gold: &RelationalTriplet) -> bool {
    pred.1 == gold.relation
        && head(&pred.0) == head(&gold.subject.text)
        && head(&pred.2) == head(&gold.object.text)
}

/// Exact match: equal relation and equal full entity strings.
pub fn match_exact(pred: &(String, String, String), gold: &RelationalTriplet) -> bool {
    pred.1 == gold.relation && pred.0 == gold.subject.text && pred.2 == gold.object.text
}

/// Counts plus derived precision/recall/F1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn add(&mut self, matched: usize, predicted: usize, gold: usize) {
        self.matched += matched;
        self.predicted += predicted;
        self.gold += gold;
    }

    fn finish(&mut self) {
        self.precision = if self.predicted == 0 {
            0.0
        } else {
            self.matched as f64 / self.predicted as f64
        };
        self.recall = if self.gold == 0 {
            0.0
        } else {
            self.matched as f64 / self.gold as f64
        };
        self.f1 = if self.precision + self.recall == 0.0 {
            0.0
        } else {
            2.0 * self.precision * self.recall / (self.precision + self.recall)
        };
    }
}

/// The full evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: MatchMode,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
    /// Element-level scores: distinct subject heads, object heads and
    /// relation labels per sentence.
    pub element_s: Prf,
    pub element_o: Prf,
    pub element_r: Prf,
    /// Triple-level scores restricted to sentences of each overlap pattern.
    pub pattern_normal: Prf,
    pub pattern_epo: Prf,
    pub pattern_seo: Prf,
    /// Triple-level scores by gold triplet count (N = 1, 2, 3, 4, >=5).
    pub per_n: [Prf; 5],
}

fn count_matches(
    preds: &BTreeSet<(String, String, String)>,
    gold: &[RelationalTriplet],
    mode: MatchMode,
) -> usize {
    let mut used = vec![false; gold.len()];
    let mut matched = 0;
    for p in preds {
        let hit = gold.iter().enumerate().find(|(i, g)| {
            !used[*i]
                && match mode {
                    MatchMode::Partial => match_partial(p, g),
                    MatchMode::Exact => match_exact(p, g),
                }
        });
        if let Some((i, _)) = hit {
            used[i] = true;
            matched += 1;
        }
    }
    matched
}

fn element_counts(
    preds: &BTreeSet<(String, String, String)>,
    gold: &[RelationalTriplet],
) -> [(usize, usize, usize); 3] {
    let ps: BTreeSet<&str> = preds.iter().map(|p| head(&p.0)).collect();
    let gs: BTreeSet<&str> = gold.iter().map(|g| head(&g.subject.text)).collect();
    let po: BTreeSet<&str> = preds.iter().map(|p| head(&p.2)).collect();
    let go: BTreeSet<&str> = gold.iter().map(|g| head(&g.object.text)).collect();
    let pr: BTreeSet<&str> = preds.iter().map(|p| p.1.as_str()).collect();
    let gr: BTreeSet<&str> = gold.iter().map(|g| g.relation.as_str()).collect();
    [
        (ps.intersection(&gs).count(), ps.len(), gs.len()),
        (po.intersection(&go).count(), po.len(), go.len()),
        (pr.intersection(&gr).count(), pr.len(), gr.len()),
    ]
}

/// Score predictions against gold, both keyed by sentence id. Duplicate
/// predictions are collapsed; each gold triple is matched at most once.
pub fn score(
    predictions: &BTreeMap<String, Vec<(String, String, String)>>,
    gold: &BTreeMap<String, Vec<RelationalTriplet>>,
    mode: MatchMode,
) -> Result<EvalReport> {
    let pred_ids: BTreeSet<&String> = predictions.keys().collect();
    let gold_ids: BTreeSet<&String> = gold.keys().collect();
    if pred_ids != gold_ids {
        let missing_in_pred: Vec<&str> = gold_ids
            .difference(&pred_ids)
            .map(|s| s.as_str())
            .collect();
        let missing_in_gold: Vec<&str> = pred_ids
            .difference(&gold_ids)
            .map(|s| s.as_str())
            .collect();
        return Err(data(format!(
            "sentence id mismatch; missing in predictions: [{}]; missing in gold: [{}]",
            missing_in_pred.join(", "),
            missing_in_gold.join(", ")
        )));
    }

    let mut total = Prf::default();
    let mut elem = [Prf::default(), Prf::default(), Prf::default()];
    let mut pattern = [Prf::default(), Prf::default(), Prf::default()];
    let mut per_n = [Prf::default(); 5];

    for (id, gold_triples) in gold {
        let preds: BTreeSet<(String, String, String)> =
            predictions[id].iter().cloned().collect();
        let matched = count_matches(&preds, gold_triples, mode);
        total.add(matched, preds.len(), gold_triples.len());

        for (acc, (m, p, g)) in elem.iter_mut().zip(element_counts(&preds, gold_triples)) {
            acc.add(m, p, g);
        }

        if !gold_triples.is_empty() {
            let flags = classify_overlap(gold_triples);
            if flags.normal {
                pattern[0].add(matched, preds.len(), gold_triples.len());
            }
            if flags.epo {
                pattern[1].add(matched, preds.len(), gold_triples.len());
            }
            if flags.seo {
                pattern[2].add(matched, preds.len(), gold_triples.len());
            }
            let bucket = (gold_triples.len() - 1).min(4);
            per_n[bucket].add(matched, preds.len(), gold_triples.len());
        }
    }

    total.finish();
    for p in elem.iter_mut().chain(pattern.iter_mut()).chain(per_n.iter_mut()) {
        p.finish();
    }

    Ok(EvalReport {
        mode,
        precision: total.precision,
        recall: total.recall,
        f1: total.f1,
        matched: total.matched,
        predicted: total.predicted,
        gold: total.gold,
        element_s: elem[0],
        element_o: elem[1],
        element_r: elem[2],
        pattern_normal: pattern[0],
        pattern_epo: pattern[1],
        pattern_seo: pattern[2],
        per_n,
    })
}

/// Score in-memory cascade outputs against a loaded corpus.
pub fn score_corpus(
    predictions: &[(String, AdjacencyListOutput)],
    corpus: &Corpus,
    mode: MatchMode,
) -> Result<EvalReport> {
    let preds: BTreeMap<String, Vec<(String, String, String)>> = predictions
        .iter()
        .map(|(id, adj)| (id.clone(), adj.flatten().into_iter().collect()))
        .collect();
    let gold: BTreeMap<String, Vec<RelationalTriplet>> = corpus
        .sentences
        .iter()
        .map(|(s, t)| (s.id.clone(), t.clone()))
        .collect();
    score(&preds, &gold, mode)
}

impl EvalReport {
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let row = |name: &str, p: &Prf| {
            format!(
                "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>7} {:>7} {:>7}\n",
                name, p.precision, p.recall, p.f1, p.matched, p.predicted, p.gold
            )
        };
        s.push_str(&format!(
            "{:<12} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}\n",
            "", "Prec.", "Rec.", "F1", "match", "pred", "gold"
        ));
        let overall = Prf {
            matched: self.matched,
            predicted: self.predicted,
            gold: self.gold,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
        };
        s.push_str(&row("overall", &overall));
        s.push_str(&row("element s", &self.element_s));
        s.push_str(&row("element o", &self.element_o));
        s.push_str(&row("element r", &self.element_r));
        s.push_str(&row("Normal", &self.pattern_normal));
        s.push_str(&row("EPO", &self.pattern_epo));
        s.push_str(&row("SEO", &self.pattern_seo));
        for (i, p) in self.per_n.iter().enumerate() {
            let name = if i < 4 {
                format!("N={}", i + 1)
            } else {
                "N>=5".to_string()
            };
            s.push_str(&row(&name, p));
        }
        s
    }
}
