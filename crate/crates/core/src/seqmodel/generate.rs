use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kernels::argmax;
use super::Model;
use crate::corpus::vocab::PROMPT_LEN;
use crate::corpus::{
    tokenize, Dataset, PartEncoding, ProcessChain, Token, Vocabulary, EOS, MAX_CHAIN_LEN,
    MIN_CHAIN_LEN,
};
use crate::{Error, Result};

/// Longest chain plus the EOS step.
pub const MAX_GENERATION_STEPS: usize = MAX_CHAIN_LEN + 1;
const GENERATION_CHUNK: usize = 128;

/// Step-wise logits and greedy choices recorded during one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitTrace {
    pub part_id: usize,
    /// `T` rows of `vocab` logits.
    pub step_logits: Vec<Vec<f64>>,
    pub chosen: Vec<Token>,
    pub eos_id: Token,
    /// Generation stopped at the step cap without emitting EOS.
    pub hit_cap: bool,
}

impl LogitTrace {
    pub fn steps(&self) -> usize {
        self.chosen.len()
    }

    /// The chain encoded by the chosen tokens, or `None` if malformed.
    pub fn decoded_chain(&self) -> Option<ProcessChain> {
        decode_chain(&self.chosen)
    }

    /// Copy with logits rounded to 9 significant digits, as written to trace dumps.
    pub fn rounded(&self) -> LogitTrace {
        let round = |x: f64| -> f64 { format!("{x:.8e}").parse().expect("formatted float parses") };
        LogitTrace {
            step_logits: self
                .step_logits
                .iter()
                .map(|r| r.iter().map(|&x| round(x)).collect())
                .collect(),
            ..self.clone()
        }
    }
}

/// Result of decoding one part. `chain` is `None` when the output is malformed.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub part: PartEncoding,
    pub chain: Option<ProcessChain>,
    pub trace: LogitTrace,
}

impl Generation {
    pub fn is_malformed(&self) -> bool {
        self.chain.is_none()
    }

    pub fn is_correct(&self, truth: &Dataset) -> bool {
        self.chain
            .as_ref()
            .is_some_and(|c| truth.is_feasible(&self.part, c))
    }
}

/// Decodes the chosen tokens; any special or attribute token before EOS, a
/// missing EOS, or an out-of-range length yields `None`.
fn decode_chain(chosen: &[Token]) -> Option<ProcessChain> {
    let eos = chosen.iter().position(|&t| t == EOS)?;
    let ops = chosen[..eos]
        .iter()
        .map(|&t| Vocabulary::token_op(t))
        .collect::<Option<Vec<_>>>()?;
    if !(MIN_CHAIN_LEN..=MAX_CHAIN_LEN).contains(&ops.len()) {
        return None;
    }
    ProcessChain::new(ops).ok()
}

impl Model {
    /// Greedy decoding of one part.
    pub fn generate(&self, part: &PartEncoding) -> Generation {
        self.generate_many(std::slice::from_ref(part))
            .pop()
            .expect("one generation per part")
    }

    /// Greedy decoding of many parts, batched step by step. Every sequence
    /// in a step has the same length, so results equal per-part decoding.
    pub fn generate_many(&self, parts: &[PartEncoding]) -> Vec<Generation> {
        let v = self.cfg.vocab_size;
        let mut out = Vec::with_capacity(parts.len());
        for chunk in parts.chunks(GENERATION_CHUNK) {
            let mut seqs: Vec<Vec<Token>> = chunk.iter().map(|p| tokenize(p, None)).collect();
            let mut traces: Vec<LogitTrace> = chunk
                .iter()
                .map(|p| LogitTrace {
                    part_id: p.index(),
                    step_logits: Vec::new(),
                    chosen: Vec::new(),
                    eos_id: EOS,
                    hit_cap: false,
                })
                .collect();
            let mut active: Vec<usize> = (0..chunk.len()).collect();
            for step in 0..MAX_GENERATION_STEPS {
                if active.is_empty() {
                    break;
                }
                let t = PROMPT_LEN + step;
                let tokens: Vec<Token> = active
                    .iter()
                    .flat_map(|&i| seqs[i].iter().copied())
                    .collect();
                let acts = self.forward_batch(&tokens, active.len(), t);
                let mut still = Vec::with_capacity(active.len());
                for (j, &i) in active.iter().enumerate() {
                    let row = &acts.logits[(j * t + t - 1) * v..(j * t + t) * v];
                    let next = argmax(row) as Token;
                    traces[i].step_logits.push(row.to_vec());
                    traces[i].chosen.push(next);
                    seqs[i].push(next);
                    if next != EOS {
                        still.push(i);
                    }
                }
                active = still;
            }
            for &i in &active {
                traces[i].hit_cap = true;
            }
            for (part, trace) in chunk.iter().zip(traces) {
                let chain = if trace.hit_cap {
                    None
                } else {
                    decode_chain(&trace.chosen)
                };
                out.push(Generation {
                    part: *part,
                    chain,
                    trace,
                });
            }
        }
        out
    }

    /// Fraction of `parts` whose greedy chain is one of its feasible chains.
    pub fn sequence_accuracy(&self, parts: &[PartEncoding], truth: &Dataset) -> Result<f64> {
        if parts.is_empty() {
            return Err(Error::invalid("no parts to evaluate"));
        }
        if truth.len() != crate::corpus::N_PARTS {
            return Err(Error::invalid("ground truth does not cover the part space"));
        }
        Ok(accuracy_of(&self.generate_many(parts), truth))
    }
}

pub fn accuracy_of(gens: &[Generation], truth: &Dataset) -> f64 {
    if gens.is_empty() {
        return 0.0;
    }
    gens.iter().filter(|g| g.is_correct(truth)).count() as f64 / gens.len() as f64
}

/// Writes one rounded trace per line.
pub fn write_traces_jsonl(path: &Path, traces: &[LogitTrace]) -> Result<()> {
    let mut out = String::new();
    for t in traces {
        out.push_str(&serde_json::to_string(&t.rounded()).expect("trace serializes"));
        out.push('\n');
    }
    crate::corpus::dataset_write_atomic(path, out.as_bytes())
}

pub fn read_traces_jsonl(path: &Path) -> Result<Vec<LogitTrace>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Operation, SEP};

    #[test]
    fn decode_rules() {
        let m = Vocabulary::op_token(Operation::Milling);
        let d = Vocabulary::op_token(Operation::Deburring);
        assert!(decode_chain(&[m, d, EOS]).is_some());
        assert!(decode_chain(&[m, EOS]).is_none());
        assert!(decode_chain(&[m, SEP, d, EOS]).is_none());
        assert!(decode_chain(&[m, d]).is_none());
        assert!(decode_chain(&[m, Vocabulary::attribute_token(0, 1), EOS]).is_none());
    }

    #[test]
    fn rounding_keeps_nine_digits() {
        let t = LogitTrace {
            part_id: 0,
            step_logits: vec![vec![1.234_567_891_23, -0.000_123_456_789_876]],
            chosen: vec![0],
            eos_id: EOS,
            hit_cap: false,
        };
        let r = t.rounded();
        assert_eq!(r.step_logits[0][0], 1.234_567_89);
        assert_eq!(r.step_logits[0][1], -0.000_123_456_790);
    }

    #[test]
    fn trace_dump_round_trips_rounded_values() {
        let t = LogitTrace {
            part_id: 7,
            step_logits: vec![vec![0.1 + 0.2, -3.0], vec![1e-12, 2.5]],
            chosen: vec![4, EOS],
            eos_id: EOS,
            hit_cap: false,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.jsonl");
        write_traces_jsonl(&path, std::slice::from_ref(&t)).unwrap();
        assert_eq!(read_traces_jsonl(&path).unwrap(), vec![t.rounded()]);
    }
}
