//! Greedy decoding, exact-match memorization rate and held-out evaluation.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{RenderedFact, TrainingSet};
use crate::error::{Error, Result};
use crate::model::{Example, Float, ModelState};
use crate::tokenizer::{self, BOS, EOS, PAD};

/// Safety margin added to the gold length when decoding.
pub const DECODE_MARGIN: usize = 8;

/// Sequences per forward pass during evaluation.
const EVAL_CHUNK: usize = 256;

fn argmax<T: Float>(row: &[T]) -> u32 {
    // strict comparison keeps the lowest id on ties
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Exact match after stripping trailing whitespace.
pub fn exact_match(prediction: &str, gold: &str) -> bool {
    prediction.trim_end() == gold.trim_end()
}

/// Argmax decoding from `BOS prompt` until EOS or `max_len` new tokens.
pub fn greedy_decode<T: Float>(model: &ModelState<T>, prompt: &str, max_len: usize) -> Result<String> {
    let mut out = greedy_decode_batch(model, &[tokenizer::encode(prompt)], &[max_len])?;
    Ok(out.pop().expect("one result"))
}

/// Greedy decoding of several prompts, packed into one forward pass per step.
pub fn greedy_decode_batch<T: Float>(
    model: &ModelState<T>,
    prompts: &[Vec<u32>],
    max_lens: &[usize],
) -> Result<Vec<String>> {
    assert_eq!(prompts.len(), max_lens.len());
    let mut seqs: Vec<Vec<u32>> = prompts
        .iter()
        .map(|p| std::iter::once(BOS).chain(p.iter().copied()).collect())
        .collect();
    let starts: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
    let mut active: Vec<usize> = (0..seqs.len()).filter(|&i| max_lens[i] > 0).collect();
    let cap = model.config.max_seq_len;
    while !active.is_empty() {
        let batch: Vec<&[u32]> = active.iter().map(|&i| seqs[i].as_slice()).collect();
        let cache = model.forward_hidden(&batch)?;
        let rows: Vec<usize> = active
            .iter()
            .enumerate()
            .map(|(j, &i)| cache.row(j, seqs[i].len() - 1))
            .collect();
        let logits = model.logits_at(&cache, &rows);
        let v = model.config.vocab;
        let mut still = Vec::with_capacity(active.len());
        for (j, &i) in active.iter().enumerate() {
            let tok = argmax(&logits[j * v..(j + 1) * v]);
            seqs[i].push(tok);
            let produced = seqs[i].len() - starts[i];
            if tok != EOS && produced < max_lens[i] && seqs[i].len() < cap {
                still.push(i);
            }
        }
        active = still;
    }
    Ok(seqs
        .iter()
        .zip(&starts)
        .map(|(s, &st)| tokenizer::decode(&s[st..]).text)
        .collect())
}

fn decode_cap(f: &RenderedFact) -> usize {
    f.target.len() + DECODE_MARGIN
}

/// Teacher-forced check of whether greedy decoding would reproduce `gold`.
///
/// Returns `Some(answer)` when the argmax path is decided by the gold
/// sequence alone, `None` when real decoding is needed to settle EM.
fn forced_verdict(pred: &[u32], gold: &[u32], gold_text: &str) -> Option<bool> {
    if gold_text.trim_end() != gold_text || gold_text.contains('\u{fffd}') {
        return None;
    }
    for (j, (&p, &g)) in pred.iter().zip(gold).enumerate() {
        if p != g {
            // a trailing-whitespace tail or a skipped special could still match
            if j + 1 == gold.len() || p == BOS || p == PAD {
                return None;
            }
            return Some(false);
        }
    }
    Some(true)
}

/// Whether greedy decoding reproduces each fact's target, batched.
fn em_flags<T: Float>(model: &ModelState<T>, facts: &[&RenderedFact]) -> Result<Vec<bool>> {
    let mut flags = vec![false; facts.len()];
    let mut undecided = Vec::new();
    let v = model.config.vocab;
    for (chunk_idx, chunk) in facts.chunks(EVAL_CHUNK).enumerate() {
        let examples: Vec<&Example> = chunk.iter().map(|f| f.eval_example()).collect();
        let inputs: Vec<&[u32]> = examples.iter().map(|e| &e.tokens[..e.tokens.len() - 1]).collect();
        let cache = model.forward_hidden(&inputs)?;
        let mut rows = Vec::new();
        let mut spans = Vec::with_capacity(chunk.len());
        for (s, f) in chunk.iter().enumerate() {
            let gold_len = f.target.len() + 1;
            let prompt_end = f.eval_example().tokens.len() - 1 - gold_len;
            spans.push((rows.len(), gold_len));
            rows.extend((0..gold_len).map(|j| cache.row(s, prompt_end + j)));
        }
        let logits = model.logits_at(&cache, &rows);
        for (s, f) in chunk.iter().enumerate() {
            let (r0, n) = spans[s];
            let pred: Vec<u32> = (r0..r0 + n).map(|r| argmax(&logits[r * v..(r + 1) * v])).collect();
            let toks = &f.eval_example().tokens;
            let gold = &toks[toks.len() - n..];
            let i = chunk_idx * EVAL_CHUNK + s;
            match forced_verdict(&pred, gold, &f.target) {
                Some(b) => flags[i] = b,
                None => undecided.push(i),
            }
        }
    }
    for chunk in undecided.chunks(EVAL_CHUNK) {
        let prompts: Vec<Vec<u32>> = chunk.iter().map(|&i| facts[i].prompt_tokens()).collect();
        let caps: Vec<usize> = chunk.iter().map(|&i| decode_cap(facts[i])).collect();
        let preds = greedy_decode_batch(model, &prompts, &caps)?;
        for (&i, p) in chunk.iter().zip(preds) {
            flags[i] = exact_match(&p, &facts[i].target);
        }
    }
    Ok(flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub key: String,
    pub attribute: String,
    pub prediction: String,
    pub gold: String,
    #[serde(rename = "match")]
    pub is_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    pub count: usize,
    pub correct: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub correct: usize,
    /// Memorization rate, or generalization accuracy on held-out facts.
    pub mr: f64,
    pub per_attribute: BTreeMap<String, GroupRate>,
    /// Mean masked cross-entropy, set by [`generalization_eval`].
    pub heldout_loss: Option<f64>,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Facts whose greedy predictions are decoded into the report.
    pub sample_predictions: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { sample_predictions: 20 }
    }
}

impl EvalReport {
    fn from_flags(facts: &[&RenderedFact], flags: &[bool]) -> Self {
        let mut per: BTreeMap<String, GroupRate> = BTreeMap::new();
        for (f, &ok) in facts.iter().zip(flags) {
            let g = per.entry(f.group()).or_insert(GroupRate {
                count: 0,
                correct: 0,
                rate: 0.0,
            });
            g.count += 1;
            g.correct += ok as usize;
        }
        for g in per.values_mut() {
            g.rate = g.correct as f64 / g.count as f64;
        }
        let correct = flags.iter().filter(|&&b| b).count();
        EvalReport {
            count: facts.len(),
            correct,
            mr: correct as f64 / facts.len() as f64,
            per_attribute: per,
            heldout_loss: None,
            predictions: Vec::new(),
        }
    }

    /// Header matching [`EvalReport::csv_row`].
    pub const CSV_HEADER: &'static str = "count,correct,mr,heldout_loss,per_attribute";

    /// One CSV line; the breakdown is `group=rate` pairs joined by `;`.
    pub fn csv_row(&self) -> String {
        let per = self
            .per_attribute
            .iter()
            .map(|(k, g)| format!("{k}={:.6}", g.rate))
            .collect::<Vec<_>>()
            .join(";");
        let loss = self.heldout_loss.map(|l| format!("{l:.6}")).unwrap_or_default();
        format!("{},{},{:.6},{},\"{}\"", self.count, self.correct, self.mr, loss, per)
    }

    pub fn write_predictions_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.predictions {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n").map_err(|e| Error::io("<predictions>", e))?;
        }
        Ok(())
    }
}

fn sample_predictions<T: Float>(
    model: &ModelState<T>,
    facts: &[&RenderedFact],
    flags: &[bool],
    n: usize,
) -> Result<Vec<Prediction>> {
    let take = n.min(facts.len());
    let prompts: Vec<Vec<u32>> = facts[..take].iter().map(|f| f.prompt_tokens()).collect();
    let caps: Vec<usize> = facts[..take].iter().map(|f| decode_cap(f)).collect();
    let mut out = Vec::with_capacity(take);
    for start in (0..take).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(take);
        let preds = greedy_decode_batch(model, &prompts[start..end], &caps[start..end])?;
        for (i, p) in (start..end).zip(preds) {
            let f = facts[i];
            debug_assert_eq!(exact_match(&p, &f.target), flags[i]);
            out.push(Prediction {
                key: f.key.clone(),
                attribute: f.group(),
                is_match: exact_match(&p, &f.target),
                prediction: p,
                gold: f.target.clone(),
            });
        }
    }
    Ok(out)
}

/// Fraction of facts whose value greedy decoding reproduces exactly.
pub fn memorization_rate<T: Float>(model: &ModelState<T>, set: &TrainingSet) -> Result<EvalReport> {
    memorization_rate_with(model, set, EvalOptions::default())
}

pub fn memorization_rate_with<T: Float>(
    model: &ModelState<T>,
    set: &TrainingSet,
    opts: EvalOptions,
) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::Degenerate("cannot evaluate an empty dataset".into()));
    }
    let facts: Vec<&RenderedFact> = set.facts.iter().collect();
    let flags = em_flags(model, &facts)?;
    let mut report = EvalReport::from_flags(&facts, &flags);
    report.predictions = sample_predictions(model, &facts, &flags, opts.sample_predictions)?;
    Ok(report)
}

/// Token-weighted mean masked cross-entropy over the set's facts.
pub fn mean_masked_loss<T: Float>(model: &ModelState<T>, set: &TrainingSet) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in set.facts.chunks(EVAL_CHUNK) {
        let batch: Vec<Example> = chunk.iter().map(|f| f.eval_example().clone()).collect();
        let n: usize = batch.iter().map(|e| e.num_targets()).sum();
        total += model.loss(&batch)? * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::Degenerate("no target tokens".into()));
    }
    Ok(total / count as f64)
}

/// Accuracy and mean masked loss on facts of keys never seen in training.
pub fn generalization_eval<T: Float>(
    model: &ModelState<T>,
    heldout: &TrainingSet,
    train_keys: &HashSet<&str>,
) -> Result<EvalReport> {
    let leaked: Vec<&str> = heldout.keys().into_iter().filter(|k| train_keys.contains(k)).collect();
    if let Some(example) = leaked.first() {
        return Err(Error::Contamination {
            count: leaked.len(),
            example: example.to_string(),
        });
    }
    let mut report = memorization_rate(model, heldout)?;
    report.heldout_loss = Some(mean_masked_loss(model, heldout)?);
    Ok(report)
}
