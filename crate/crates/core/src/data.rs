//! Preference examples, synthetic generators, pairing-ratio masking and the
//! JSONL dataset format.
//!
//! File layout: the first line is a header object
//! `{"vocab_size": 64, "pairing_ratio": 1.0}`; every following line is one
//! example `{"prompt": [..], "response": [..], "label": 1, "pair_id": 3}`
//! where `pair_id` may be `null`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

pub type TokenId = u32;

/// Annotation label: `+1` preferred, `−1` dispreferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Label {
    Preferred,
    Dispreferred,
}

impl Label {
    pub fn sign(self) -> i64 {
        match self {
            Label::Preferred => 1,
            Label::Dispreferred => -1,
        }
    }
}

impl TryFrom<i64> for Label {
    type Error = String;

    fn try_from(v: i64) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Label::Preferred),
            -1 => Ok(Label::Dispreferred),
            other => Err(format!("label must be +1 or -1, got {other}")),
        }
    }
}

impl From<Label> for i64 {
    fn from(l: Label) -> i64 {
        l.sign()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceExample {
    pub prompt: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub label: Label,
    pub pair_id: Option<u64>,
}

impl PreferenceExample {
    fn check(&self, vocab_size: usize) -> std::result::Result<(), String> {
        if self.response.is_empty() {
            return Err("response must contain at least one token".into());
        }
        if let Some(t) = self
            .prompt
            .iter()
            .chain(&self.response)
            .find(|&&t| t as usize >= vocab_size)
        {
            return Err(format!("token id {t} out of range for vocab_size {vocab_size}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    vocab_size: usize,
    pairing_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab_size: usize,
    pub pairing_ratio: f64,
    pub examples: Vec<PreferenceExample>,
}

/// Indices of the two members of a complete pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIndex {
    pub pair_id: u64,
    pub preferred: usize,
    pub dispreferred: usize,
}

impl Dataset {
    /// Checks every example and the pairing invariant.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pairing_ratio) {
            return Err(Error::Validation(format!(
                "pairing_ratio {} outside [0, 1]",
                self.pairing_ratio
            )));
        }
        for (k, ex) in self.examples.iter().enumerate() {
            ex.check(self.vocab_size)
                .map_err(|m| Error::Validation(format!("example {k}: {m}")))?;
        }
        self.pair_index().map(|_| ())
    }

    /// Groups paired examples, ordered by first appearance of each pair id.
    pub fn pair_index(&self) -> Result<Vec<PairIndex>> {
        let mut slots: BTreeMap<u64, (Option<usize>, Option<usize>, usize)> = BTreeMap::new();
        for (k, ex) in self.examples.iter().enumerate() {
            let Some(id) = ex.pair_id else { continue };
            let slot = slots.entry(id).or_insert((None, None, k));
            let side = match ex.label {
                Label::Preferred => &mut slot.0,
                Label::Dispreferred => &mut slot.1,
            };
            if side.is_some() {
                return Err(Error::Validation(format!(
                    "pair_id {id} has two examples labeled {}",
                    ex.label.sign()
                )));
            }
            *side = Some(k);
        }
        let mut pairs = Vec::with_capacity(slots.len());
        for (id, (w, l, first)) in slots {
            match (w, l) {
                (Some(w), Some(l)) => {
                    if self.examples[w].prompt != self.examples[l].prompt {
                        return Err(Error::Validation(format!(
                            "pair_id {id} links examples with different prompts"
                        )));
                    }
                    pairs.push((first, PairIndex { pair_id: id, preferred: w, dispreferred: l }));
                }
                _ => {
                    return Err(Error::Validation(format!(
                        "pair_id {id} is missing its {} member",
                        if w.is_none() { "+1" } else { "-1" }
                    )))
                }
            }
        }
        pairs.sort_by_key(|(first, _)| *first);
        Ok(pairs.into_iter().map(|(_, p)| p).collect())
    }

    /// First example without a pair id, if any.
    pub fn first_singleton(&self) -> Option<usize> {
        self.examples.iter().position(|e| e.pair_id.is_none())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_jsonl_str(&text)
    }

    pub fn from_jsonl_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((hline, header)) = lines.next() else {
            return Err(Error::Parse { line: 1, msg: "missing header".into() });
        };
        let header: Header = serde_json::from_str(header).map_err(|e| Error::Parse {
            line: hline + 1,
            msg: format!("bad header: {e}"),
        })?;
        let mut examples = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let ex: PreferenceExample = serde_json::from_str(line).map_err(|e| {
                let msg = e.to_string();
                // serde reports the TryFrom failure as a data error
                if msg.contains("label must be") {
                    return Error::Validation(format!("line {lineno}: {msg}"));
                }
                Error::Parse { line: lineno, msg }
            })?;
            ex.check(header.vocab_size)
                .map_err(|m| Error::Validation(format!("line {lineno}: {m}")))?;
            examples.push(ex);
        }
        let d = Dataset {
            vocab_size: header.vocab_size,
            pairing_ratio: header.pairing_ratio,
            examples,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn to_jsonl_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_to(&self, mut w: impl Write) -> Result<()> {
        self.validate()?;
        let header = Header {
            vocab_size: self.vocab_size,
            pairing_ratio: self.pairing_ratio,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for ex in &self.examples {
            serde_json::to_writer(&mut w, ex)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Hidden bigram "teacher" that scores and samples synthetic responses.
#[derive(Debug, Clone)]
pub struct Teacher {
    vocab_size: usize,
    sharpness: f64,
    scores: Vec<f64>,
}

impl Teacher {
    pub fn sample_new(rng: &mut SeededRng, vocab_size: usize, sharpness: f64) -> Self {
        let scores = (0..vocab_size * vocab_size).map(|_| rng.normal()).collect();
        Self { vocab_size, sharpness, scores }
    }

    fn logits(&self, prev: TokenId) -> Vec<f64> {
        let row = &self.scores[prev as usize * self.vocab_size..][..self.vocab_size];
        row.iter().map(|s| s * self.sharpness).collect()
    }

    /// Teacher log-likelihood of `response` given the last prompt token.
    pub fn log_likelihood(&self, prompt: &[TokenId], response: &[TokenId]) -> f64 {
        let mut prev = *prompt.last().expect("nonempty prompt");
        let mut total = 0.0;
        for &t in response {
            let z = self.logits(prev);
            let lse = crate::numerics::logsumexp_unchecked(&z);
            total += z[t as usize] - lse;
            prev = t;
        }
        total
    }

    pub fn sample(&self, rng: &mut SeededRng, prompt: &[TokenId], len: usize) -> Vec<TokenId> {
        let mut prev = *prompt.last().expect("nonempty prompt");
        (0..len)
            .map(|_| {
                let t = rng.categorical_from_logits(&self.logits(prev)) as TokenId;
                prev = t;
                t
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairwiseConfig {
    pub n_pairs: usize,
    pub vocab_size: usize,
    pub prompt_len: usize,
    pub resp_len: usize,
    pub teacher_sharpness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NearDuplicateConfig {
    pub n_pairs: usize,
    pub vocab_size: usize,
    pub prompt_len: usize,
    pub resp_len: usize,
    pub edit_tokens: usize,
}

fn check_common(n_pairs: usize, vocab_size: usize, prompt_len: usize, resp_len: usize) -> Result<()> {
    if vocab_size < 4 {
        return Err(Error::Config(format!("vocab_size must be >= 4, got {vocab_size}")));
    }
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs must be >= 1".into()));
    }
    if prompt_len == 0 || resp_len == 0 {
        return Err(Error::Config("prompt_len and resp_len must be >= 1".into()));
    }
    Ok(())
}

fn uniform_tokens(rng: &mut SeededRng, vocab_size: usize, len: usize) -> Vec<TokenId> {
    (0..len).map(|_| rng.below(vocab_size) as TokenId).collect()
}

/// Samples `n_pairs` prompts, two teacher responses each, and labels the
/// more teacher-likely response preferred.
///
/// Returns the dataset together with the teacher that labeled it.
pub fn gen_pairwise_dataset_with_teacher(
    rng: &mut SeededRng,
    cfg: &PairwiseConfig,
) -> Result<(Dataset, Teacher)> {
    check_common(cfg.n_pairs, cfg.vocab_size, cfg.prompt_len, cfg.resp_len)?;
    if !(cfg.teacher_sharpness > 0.0 && cfg.teacher_sharpness.is_finite()) {
        return Err(Error::Config(format!(
            "teacher_sharpness must be > 0, got {}",
            cfg.teacher_sharpness
        )));
    }
    let teacher = Teacher::sample_new(rng, cfg.vocab_size, cfg.teacher_sharpness);
    let mut examples = Vec::with_capacity(2 * cfg.n_pairs);
    for pair in 0..cfg.n_pairs {
        let prompt = uniform_tokens(rng, cfg.vocab_size, cfg.prompt_len);
        let a = teacher.sample(rng, &prompt, cfg.resp_len);
        let b = teacher.sample(rng, &prompt, cfg.resp_len);
        let (w, l) = if teacher.log_likelihood(&prompt, &a) >= teacher.log_likelihood(&prompt, &b) {
            (a, b)
        } else {
            (b, a)
        };
        let id = Some(pair as u64);
        examples.push(PreferenceExample { prompt: prompt.clone(), response: w, label: Label::Preferred, pair_id: id });
        examples.push(PreferenceExample { prompt, response: l, label: Label::Dispreferred, pair_id: id });
    }
    let d = Dataset { vocab_size: cfg.vocab_size, pairing_ratio: 1.0, examples };
    Ok((d, teacher))
}

pub fn gen_pairwise_dataset(rng: &mut SeededRng, cfg: &PairwiseConfig) -> Result<Dataset> {
    gen_pairwise_dataset_with_teacher(rng, cfg).map(|(d, _)| d)
}

/// Pairs whose responses are identical except at exactly `edit_tokens`
/// positions, where the dispreferred response carries a different token.
pub fn gen_near_duplicate_pairs(rng: &mut SeededRng, cfg: &NearDuplicateConfig) -> Result<Dataset> {
    check_common(cfg.n_pairs, cfg.vocab_size, cfg.prompt_len, cfg.resp_len)?;
    if cfg.edit_tokens == 0 || cfg.edit_tokens > cfg.resp_len {
        return Err(Error::Config(format!(
            "edit_tokens must be in [1, resp_len = {}], got {}",
            cfg.resp_len, cfg.edit_tokens
        )));
    }
    let mut examples = Vec::with_capacity(2 * cfg.n_pairs);
    let mut positions: Vec<usize> = (0..cfg.resp_len).collect();
    for pair in 0..cfg.n_pairs {
        let prompt = uniform_tokens(rng, cfg.vocab_size, cfg.prompt_len);
        let preferred = uniform_tokens(rng, cfg.vocab_size, cfg.resp_len);
        let mut dispreferred = preferred.clone();
        rng.shuffle(&mut positions);
        for &pos in &positions[..cfg.edit_tokens] {
            // uniform over the other vocab_size - 1 tokens
            let mut t = rng.below(cfg.vocab_size - 1) as TokenId;
            if t >= preferred[pos] {
                t += 1;
            }
            dispreferred[pos] = t;
        }
        let id = Some(pair as u64);
        examples.push(PreferenceExample { prompt: prompt.clone(), response: preferred, label: Label::Preferred, pair_id: id });
        examples.push(PreferenceExample { prompt, response: dispreferred, label: Label::Dispreferred, pair_id: id });
    }
    Ok(Dataset { vocab_size: cfg.vocab_size, pairing_ratio: 1.0, examples })
}

/// Number of pairs broken by [`apply_pairing_mask`] for `n_pairs` pairs.
pub fn pairs_to_break(n_pairs: usize, pairing_ratio: f64) -> usize {
    // the epsilon absorbs representation error such as (1 - 0.9) * 10 = 0.999..
    (((1.0 - pairing_ratio) * n_pairs as f64) + 1e-9).floor() as usize
}

/// Breaks `⌊(1 − ratio)·n⌋` randomly chosen pairs by dropping one member
/// (fair coin); survivors of a broken pair lose their pair id.
pub fn apply_pairing_mask(rng: &mut SeededRng, d: &Dataset, pairing_ratio: f64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&pairing_ratio) {
        return Err(Error::Config(format!("pairing_ratio must be in [0, 1], got {pairing_ratio}")));
    }
    if let Some(k) = d.first_singleton() {
        return Err(Error::Config(format!(
            "pairing mask needs a fully paired dataset; example {k} has no pair_id"
        )));
    }
    let pairs = d.pair_index()?;
    let k = pairs_to_break(pairs.len(), pairing_ratio);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    rng.shuffle(&mut order);
    let mut drop = vec![false; d.examples.len()];
    let mut orphan = vec![false; d.examples.len()];
    for &p in &order[..k] {
        let pair = pairs[p];
        let (gone, kept) = if rng.coin() {
            (pair.preferred, pair.dispreferred)
        } else {
            (pair.dispreferred, pair.preferred)
        };
        drop[gone] = true;
        orphan[kept] = true;
    }
    let examples = d
        .examples
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop[*i])
        .map(|(i, ex)| {
            let mut ex = ex.clone();
            if orphan[i] {
                ex.pair_id = None;
            }
            ex
        })
        .collect();
    Ok(Dataset { vocab_size: d.vocab_size, pairing_ratio, examples })
}
