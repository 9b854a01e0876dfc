//! Task input assembly and the shared encoder contract.
//!
//! The three cascade tasks consume different input layouts over one shared
//! encoder:
//!
//! - subject extraction:  `[CLS] x [SEP]`
//! - object extraction:   `[CLS] s [SEP] x [SEP]`
//! - relation prediction: `[CLS] s [SEP] o [SEP] x [SEP]`
//!
//! where `x` is the sentence and `s`/`o` are entity surface strings. The
//! assembled input records which positions belong to the sentence segment so
//! predicted spans can be mapped back to sentence tokens.

use crate::corpus::{Sentence, Task};
use crate::error::{data, runtime};
use crate::tokenizer::{tokenize_surfaces, Vocab, CLS_ID, SEP_ID};
use anyhow::Result;
use ndarray::{Array1, Array2};
use std::ops::Range;

/// A token id sequence with boundary markers and the sentence segment map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledInput {
    pub task: Task,
    pub ids: Vec<u32>,
    /// Positions of the sentence tokens within `ids`.
    pub segment: Range<usize>,
    /// True when any segment lost tokens to the length limit.
    pub truncated: bool,
}

impl AssembledInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Map a sentence token index to its input position, if it survived
    /// truncation. Truncation keeps leftmost tokens, so the map is an offset.
    pub fn sentence_pos_to_input(&self, token_index: usize) -> Option<usize> {
        if token_index < self.segment.len() {
            Some(self.segment.start + token_index)
        } else {
            None
        }
    }

    /// Map an input position back to a sentence token index.
    pub fn input_pos_to_sentence(&self, pos: usize) -> Option<usize> {
        if self.segment.contains(&pos) {
            Some(pos - self.segment.start)
        } else {
            None
        }
    }
}

/// Per-position hidden vectors produced by the shared encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub hidden: Array2<f64>,
}

impl EncoderOutput {
    pub fn new(hidden: Array2<f64>) -> Result<Self> {
        if hidden.iter().any(|v| !v.is_finite()) {
            return Err(runtime("encoder produced non-finite values"));
        }
        Ok(EncoderOutput { hidden })
    }

    pub fn len(&self) -> usize {
        self.hidden.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.nrows() == 0
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden.ncols()
    }

    /// The vector at the first boundary-marker position.
    pub fn cls_vector(&self) -> Array1<f64> {
        self.hidden.row(0).to_owned()
    }
}

/// The shared encoder contract. Both backends (pretrained transformer and the
/// compact trainable encoder) implement this and are swappable via config.
pub trait Encoder {
    fn encode(&self, input: &AssembledInput) -> Result<EncoderOutput>;
    fn hidden_size(&self) -> usize;
    fn max_len(&self) -> usize;
}

/// Builds the three task-specific input layouts.
#[derive(Debug, Clone)]
pub struct InputAssembler {
    vocab: Vocab,
    max_len: usize,
}

impl InputAssembler {
    pub fn new(vocab: Vocab, max_len: usize) -> Self {
        InputAssembler { vocab, max_len }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn entity_ids(&self, role: &str, surface: &str) -> Result<Vec<u32>> {
        let toks = tokenize_surfaces(surface);
        if toks.is_empty() {
            return Err(data(format!("empty {role} string in input assembly")));
        }
        Ok(toks.iter().map(|t| self.vocab.id(t)).collect())
    }

    fn sentence_ids(&self, x: &Sentence) -> Result<Vec<u32>> {
        if x.tokens.is_empty() {
            return Err(data(format!("sentence {} has no tokens", x.id)));
        }
        Ok(x.tokens.iter().map(|t| self.vocab.id(&t.surface)).collect())
    }

    /// Assemble with the given prefix segments. Truncation keeps the leftmost
    /// tokens of each segment; prefix segments are cut first, the sentence
    /// segment last, and no segment drops below one token.
    fn assemble(
        &self,
        task: Task,
        prefixes: Vec<Vec<u32>>,
        mut sentence: Vec<u32>,
    ) -> AssembledInput {
        let markers = 2 + prefixes.len(); // [CLS] plus one [SEP] per segment
        let allowed = self.max_len.saturating_sub(markers).max(1);
        let mut prefixes = prefixes;
        let mut truncated = false;
        // Cut prefix segments first, then the sentence segment.
        let mut over = total_len(&prefixes, &sentence).saturating_sub(allowed);
        for p in prefixes.iter_mut() {
            if over == 0 {
                break;
            }
            let cut = over.min(p.len().saturating_sub(1));
            p.truncate(p.len() - cut);
            over -= cut;
            if cut > 0 {
                truncated = true;
            }
        }
        if over > 0 {
            let keep = sentence.len().saturating_sub(over).max(1);
            if keep < sentence.len() {
                sentence.truncate(keep);
                truncated = true;
            }
        }

        let mut ids = Vec::with_capacity(markers + total_len(&prefixes, &sentence));
        ids.push(CLS_ID);
        for p in &prefixes {
            ids.extend_from_slice(p);
            ids.push(SEP_ID);
        }
        let seg_start = ids.len();
        ids.extend_from_slice(&sentence);
        let seg_end = ids.len();
        ids.push(SEP_ID);

        if truncated {
            log::warn!("input truncated to {} positions for task {task}", ids.len());
        }
        AssembledInput {
            task,
            ids,
            segment: seg_start..seg_end,
            truncated,
        }
    }

    /// `[CLS] x [SEP]`
    pub fn assemble_s(&self, x: &Sentence) -> Result<AssembledInput> {
        let sent = self.sentence_ids(x)?;
        Ok(self.assemble(Task::Subject, vec![], sent))
    }

    /// `[CLS] s [SEP] x [SEP]`
    pub fn assemble_o(&self, subject: &str, x: &Sentence) -> Result<AssembledInput> {
        let s = self.entity_ids("subject", subject)?;
        let sent = self.sentence_ids(x)?;
        Ok(self.assemble(Task::Object, vec![s], sent))
    }

    /// `[CLS] s [SEP] o [SEP] x [SEP]`
    pub fn assemble_r(&self, subject: &str, object: &str, x: &Sentence) -> Result<AssembledInput> {
        let s = self.entity_ids("subject", subject)?;
        let o = self.entity_ids("object", object)?;
        let sent = self.sentence_ids(x)?;
        Ok(self.assemble(Task::Relation, vec![s, o], sent))
    }
}

fn total_len(prefixes: &[Vec<u32>], sentence: &[u32]) -> usize {
    prefixes.iter().map(|p| p.len()).sum::<usize>() + sentence.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assembler() -> InputAssembler {
        let vocab = Vocab::build(["a", "b", "c", "d", "e", "s1", "o1"]);
        InputAssembler::new(vocab, 128)
    }

    #[test]
    fn assemble_s_adds_two_markers() {
        let a = assembler();
        let sent = Sentence::new("t", "a b c d e");
        let input = a.assemble_s(&sent).unwrap();
        assert_eq!(input.len(), 7);
        assert_eq!(input.segment, 1..6);
        assert!(!input.truncated);
    }

    #[test]
    fn assemble_s_rejects_empty_sentence() {
        let a = assembler();
        let sent = Sentence::new("t", "");
        assert!(a.assemble_s(&sent).is_err());
    }

    #[test]
    fn assemble_s_truncates_long_sentence() {
        let a = assembler();
        let text = vec!["a"; 200].join(" ");
        let sent = Sentence::new("t", text);
        let input = a.assemble_s(&sent).unwrap();
        assert_eq!(input.len(), 128);
        assert!(input.truncated);
        assert_eq!(input.segment.len(), 126);
    }

    #[test]
    fn assemble_o_layout() {
        let a = assembler();
        let sent = Sentence::new("t", "a b c");
        let input = a.assemble_o("s1", &sent).unwrap();
        // [CLS] s1 [SEP] a b c [SEP]
        assert_eq!(input.len(), 7);
        assert_eq!(input.segment, 3..6);
        assert_eq!(input.ids[0], CLS_ID);
        assert_eq!(input.ids[2], SEP_ID);
        assert_eq!(input.ids[6], SEP_ID);
    }

    #[test]
    fn assemble_r_layout_and_empty_entity() {
        let a = assembler();
        let sent = Sentence::new("t", "a b c");
        let input = a.assemble_r("s1", "o1", &sent).unwrap();
        // [CLS] s1 [SEP] o1 [SEP] a b c [SEP]
        assert_eq!(input.len(), 9);
        assert_eq!(input.segment, 5..8);
        assert!(a.assemble_r("", "o1", &sent).is_err());
        assert!(a.assemble_r("s1", "  ", &sent).is_err());
    }

    #[test]
    fn segment_map_inverts() {
        let a = assembler();
        let sent = Sentence::new("t", "a b c d");
        let input = a.assemble_o("s1", &sent).unwrap();
        for tok in 0..4 {
            let pos = input.sentence_pos_to_input(tok).unwrap();
            assert_eq!(input.input_pos_to_sentence(pos), Some(tok));
        }
        assert_eq!(input.input_pos_to_sentence(0), None);
        assert_eq!(input.sentence_pos_to_input(99), None);
    }

    #[test]
    fn truncation_cuts_prefix_before_sentence() {
        let vocab = Vocab::build(["a", "s"]);
        let a = InputAssembler::new(vocab, 10);
        let sent = Sentence::new("t", "a a a a a a");
        let subject = vec!["s"; 8].join(" ");
        let input = a.assemble_o(&subject, &sent).unwrap();
        assert!(input.truncated);
        assert_eq!(input.len(), 10);
        // Sentence keeps all 6 tokens; subject reduced to 1.
        assert_eq!(input.segment.len(), 6);
    }
}
